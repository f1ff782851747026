use super::TrainError;
use crate::bitcore::MajParams;

/// `sign`, with `sign(0) = +1`.
#[inline]
pub fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Straight-through window: gradients pass where `|v| <= 1`.
#[inline]
pub fn ste_pass(v: f64) -> bool {
    v.abs() <= 1.0
}

pub fn binarize_ste_forward(w: &[f64]) -> Vec<f64> {
    w.iter().map(|&v| sign(v)).collect()
}

/// Hard-tanh straight-through gradient of [`binarize_ste_forward`].
pub fn binarize_ste_backward(grad_out: &[f64], w: &[f64]) -> Vec<f64> {
    grad_out.iter().zip(w).map(|(&g, &v)| if ste_pass(v) { g } else { 0.0 }).collect()
}

fn group_dot(x: &[f64], w: &[f64], p: &MajParams) -> Result<f64, TrainError> {
    if x.len() != p.m() || w.len() != p.m() {
        return Err(TrainError::Shape(format!(
            "majority group of {} inputs and {} weights, expected {}",
            x.len(),
            w.len(),
            p.m()
        )));
    }
    Ok(x.iter().zip(w).map(|(a, b)| a * b).sum())
}

/// Training-domain majority group: `scale * clip(x . w, -1, 1)`.
pub fn majority_forward_train(x: &[f64], w: &[f64], p: &MajParams) -> Result<f64, TrainError> {
    Ok(p.scale() * group_dot(x, w, p)?.clamp(-1.0, 1.0))
}

/// Gradients of [`majority_forward_train`] with respect to the group inputs
/// and weights. The clip passes gradient where `|x . w| <= 1`.
pub fn majority_backward_train(
    grad_out: f64,
    x: &[f64],
    w: &[f64],
    p: &MajParams,
) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    let t = group_dot(x, w, p)?;
    let g = if ste_pass(t) { grad_out * p.scale() } else { 0.0 };
    Ok((w.iter().map(|&wj| g * wj).collect(), x.iter().map(|&xj| g * xj).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_and_window() {
        assert_eq!(binarize_ste_forward(&[0.3, -0.7, 0.0]), vec![1.0, -1.0, 1.0]);
        assert_eq!(binarize_ste_backward(&[1.0, 1.0, 1.0], &[0.5, 1.5, 1.0]), vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn majority_group_values() {
        let p = MajParams::default();
        let ones = [1.0; 3];
        assert_eq!(majority_forward_train(&ones, &ones, &p).unwrap(), 2.25);
        assert_eq!(majority_forward_train(&[1.0, -1.0, -1.0], &ones, &p).unwrap(), -2.25);
        assert_eq!(majority_forward_train(&[1.0, 1.0, -1.0], &ones, &p).unwrap(), 2.25);
        assert!(majority_forward_train(&[1.0; 2], &[1.0; 2], &p).is_err());
    }

    #[test]
    fn majority_group_gradients() {
        let p = MajParams::default();
        let (x, w) = ([1.0, 1.0, -1.0], [1.0, -1.0, -1.0]);
        // t = 1, on the inclusive boundary
        let (gx, gw) = majority_backward_train(2.0, &x, &w, &p).unwrap();
        assert_eq!(gx, vec![4.5, -4.5, -4.5]);
        assert_eq!(gw, vec![4.5, 4.5, -4.5]);
        let (gx, gw) = majority_backward_train(1.0, &[1.0; 3], &[1.0; 3], &p).unwrap();
        assert_eq!((gx, gw), (vec![0.0; 3], vec![0.0; 3]));
    }
}
