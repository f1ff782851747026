//! Randomized and exhaustive checks of the packed kernels against the
//! naive oracles, the folded thresholds against float batch norm and the
//! emitted HDL against the bit-level references.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binlayers::{
    fold_bn_to_threshold, mconv_forward, mconv_forward_packed, BinaryWeights, BnParams, LayerAffine, LayerConfig,
};
use crate::bitcore::oracle::{
    oracle_maj_reduce, oracle_popcount, oracle_xnor, oracle_xnor_popcount_neuron, oracle_xnormaj_neuron,
};
use crate::bitcore::{maj_reduce, popcount, xnor, xnor_popcount_neuron, xnormaj_neuron, BitTensor, MajParams};
use crate::hdlgen::{
    emit_popcount_tree, emit_xnorfa_unit, emit_xnormaj_unit, reference_popcount_tree, reference_xnorfa,
    reference_xnormaj, verify_emitted, HdlTreeSpec, HdlUnitSpec,
};

pub const DEFAULT_SEED: u64 = 0x5e1f;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    pub first_failure: Option<String>,
}

impl SuiteResult {
    fn new(name: &str) -> Self {
        SuiteResult { name: name.to_string(), cases: 0, failures: 0, first_failure: None }
    }

    fn record(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            self.failures += 1;
            if self.first_failure.is_none() {
                self.first_failure = Some(detail());
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.cases > 0 && self.failures == 0
    }
}

impl fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "{status} {:<24} {}/{} cases", self.name, self.cases - self.failures, self.cases)?;
        if let Some(d) = &self.first_failure {
            write!(f, "  first failure: {d}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfCheckReport {
    pub suites: Vec<SuiteResult>,
}

impl SelfCheckReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteResult::passed)
    }
}

impl fmt::Display for SelfCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.suites {
            writeln!(f, "{s}")?;
        }
        let ok = self.suites.iter().filter(|s| s.passed()).count();
        write!(f, "{ok}/{} suites passed", self.suites.len())
    }
}

/// Runs every suite with `cases` random instances per randomized suite.
pub fn run_all(seed: u64, cases: usize) -> SelfCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut suites = kernel_suites(&mut rng, cases);
    suites.push(majority_truth_table());
    suites.push(cross_domain(&mut rng, cases.div_ceil(10)));
    suites.push(threshold_folding(&mut rng, cases.div_ceil(10)));
    suites.push(hdl_units());
    SelfCheckReport { suites }
}

fn random_tensor(rng: &mut ChaCha8Rng, len: usize) -> BitTensor {
    let bits: Vec<bool> = (0..len).map(|_| rng.random()).collect();
    BitTensor::from_bits(&bits, &[len]).expect("nonzero length")
}

const GROUP_SIZES: [usize; 4] = [3, 5, 7, 9];

/// Packed xnor, popcount, majority reduction and both neurons against the
/// bit-loop oracles on random lengths that straddle word boundaries.
pub fn kernel_suites(rng: &mut ChaCha8Rng, cases: usize) -> Vec<SuiteResult> {
    let mut s_xnor = SuiteResult::new("xnor");
    let mut s_pop = SuiteResult::new("popcount");
    let mut s_maj = SuiteResult::new("maj_reduce");
    let mut s_exact = SuiteResult::new("xnor_popcount_neuron");
    let mut s_approx = SuiteResult::new("xnormaj_neuron");
    for _ in 0..cases {
        let len = rng.random_range(1..=300);
        let (a, b) = (random_tensor(rng, len), random_tensor(rng, len));
        let fast = xnor(&a, &b).unwrap();
        s_xnor.record(fast == oracle_xnor(&a, &b).unwrap() && fast.is_canonical(), || format!("len {len}"));
        s_pop.record(popcount(&a) == oracle_popcount(&a), || format!("len {len}"));
        let bias = rng.random_range(-8..=8) as f64 * 0.25;
        let exact = xnor_popcount_neuron(&a, &b, bias).unwrap();
        let want = oracle_xnor_popcount_neuron(&a, &b, bias).unwrap();
        s_exact.record(exact == want, || format!("len {len}: {exact} vs {want}"));

        let m = GROUP_SIZES[rng.random_range(0..GROUP_SIZES.len())];
        let len = m * rng.random_range(1..=100);
        let (x, w) = (random_tensor(rng, len), random_tensor(rng, len));
        let z = xnor(&x, &w).unwrap();
        s_maj.record(maj_reduce(&z, m).unwrap() == oracle_maj_reduce(&z, m).unwrap(), || format!("m {m} len {len}"));
        let p = MajParams::for_group(m).unwrap();
        let approx = xnormaj_neuron(&x, &w, &p, bias).unwrap();
        let want = oracle_xnormaj_neuron(&x, &w, &p, bias).unwrap();
        s_approx.record((approx - want).abs() <= 1e-12, || format!("m {m} len {len}: {approx} vs {want}"));
    }
    vec![s_xnor, s_pop, s_maj, s_exact, s_approx]
}

/// All 64 `(x, w)` pairs of one Maj-3 group: the majority bit equals the
/// sign of the `±1` dot product and the group contributes `2.25 * sign`.
pub fn majority_truth_table() -> SuiteResult {
    let mut s = SuiteResult::new("maj3_truth_table");
    let p = MajParams::default();
    for code in 0u32..64 {
        let xb: Vec<bool> = (0..3).map(|i| code >> i & 1 == 1).collect();
        let wb: Vec<bool> = (0..3).map(|i| code >> (3 + i) & 1 == 1).collect();
        let (x, w) = (BitTensor::from_bits(&xb, &[3]).unwrap(), BitTensor::from_bits(&wb, &[3]).unwrap());
        let dot: i32 = xb.iter().zip(&wb).map(|(a, b)| if a == b { 1 } else { -1 }).sum();
        let maj = maj_reduce(&xnor(&x, &w).unwrap(), 3).unwrap().get(0);
        let contribution = xnormaj_neuron(&x, &w, &p, 0.0).unwrap();
        let sign = if dot > 0 { 1.0 } else { -1.0 };
        let clipped = p.scale() * (dot as f64).clamp(-1.0, 1.0);
        s.record(maj == (dot > 0) && contribution == 2.25 * sign && clipped == contribution, || {
            format!("x {xb:?} w {wb:?}: maj {maj} contribution {contribution} clip path {clipped}")
        });
    }
    s
}

/// Training-domain majority convolution against the packed XNorMaj path on
/// random layer geometries.
pub fn cross_domain(rng: &mut ChaCha8Rng, instances: usize) -> SuiteResult {
    let mut s = SuiteResult::new("mconv_cross_domain");
    for _ in 0..instances {
        let (h, w) = (rng.random_range(3..=8), rng.random_range(3..=8));
        let (cin, cout) = (rng.random_range(1..=8), rng.random_range(1..=6));
        let pad = rng.random();
        let cfg = LayerConfig::conv(cin, cout, 3, pad).with_majority(true);
        let input = {
            let bits: Vec<bool> = (0..h * w * cin).map(|_| rng.random()).collect();
            BitTensor::from_bits(&bits, &[h, w, cin]).unwrap()
        };
        let signs: Vec<f64> = (0..cout * cfg.fan_in()).map(|_| if rng.random() { 1.0 } else { -1.0 }).collect();
        let weights = BinaryWeights::from_signs(cout, cfg.fan_in(), &signs).unwrap();
        let bias: Vec<f64> = (0..cout).map(|_| rng.random_range(-4.0..4.0)).collect();
        let real = mconv_forward(&input, &weights, &bias, &cfg).unwrap();
        let packed = mconv_forward_packed(&input, &weights, &bias, &cfg).unwrap();
        let worst = real.data.iter().zip(&packed.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        s.record(real.shape == packed.shape && worst <= 1e-9, || {
            format!("{h}x{w}x{cin}->{cout} pad {pad}: max difference {worst}")
        });
    }
    s
}

/// Folded thresholds against float batch norm then sign over every
/// reachable count of a 3x3x64 layer, in both the exact and the majority
/// form.
pub fn threshold_folding(rng: &mut ChaCha8Rng, sets: usize) -> SuiteResult {
    let mut s = SuiteResult::new("threshold_folding");
    let channels = 8;
    for set in 0..sets {
        let majority = set % 2 == 1;
        let cfg = LayerConfig::conv(64, channels, 3, true).with_majority(majority);
        let n = cfg.fan_in() as i64;
        let p = MajParams::default();
        let gamma = (0..channels)
            .map(|c| match c {
                0 => 0.0,
                _ => rng.random_range(0.05..3.0) * if rng.random() { 1.0 } else { -1.0 },
            })
            .collect();
        // means on the quarter grid make exact ties between the pre-activation and mu common
        let mu = (0..channels).map(|_| rng.random_range(-4 * n..=4 * n) as f64 * 0.25).collect();
        let inv_std = (0..channels).map(|_| rng.random_range(0.01..2.0)).collect();
        let beta = (0..channels).map(|c| if c == 1 { 0.0 } else { rng.random_range(-2.0..2.0) }).collect();
        let bn = BnParams::new(gamma, mu, inv_std, beta).unwrap();
        let bias: Vec<f64> = (0..channels).map(|_| rng.random_range(-1..=1) as f64).collect();
        let affine: Vec<LayerAffine> = bias.iter().map(|&b| LayerAffine::for_layer(&cfg, b)).collect();
        let folded = fold_bn_to_threshold(&bn, &affine).unwrap();
        let reach = LayerAffine::max_count(&cfg);
        let mut mismatches = Vec::new();
        for c in 0..channels {
            for count in 0..=reach {
                let pre = if majority {
                    let groups = (n as usize / p.m()) as f64;
                    2.0 * (count as f64 * p.scale() + groups * p.v0()) - n as f64 + bias[c]
                } else {
                    (2 * count as i64 - n) as f64 + bias[c]
                };
                if folded.channels[c].fire(count) != bn.decide(c, pre) {
                    mismatches.push((c, count));
                }
            }
        }
        s.record(mismatches.is_empty(), || {
            format!("set {set} (majority {majority}): {} mismatches, first {:?}", mismatches.len(), mismatches[0])
        });
    }
    s
}

/// Emitted Maj-M units, the XnorFa unit and small popcount trees against
/// their references, exhaustively up to the verifier's width limit.
pub fn hdl_units() -> SuiteResult {
    let mut s = SuiteResult::new("hdl_units");
    let mut check = |label: String, result: Result<crate::hdlgen::VerifyReport, crate::hdlgen::HdlError>| {
        let ok = matches!(&result, Ok(r) if r.passed());
        s.record(ok, || match result {
            Ok(r) => format!("{label}: {r}"),
            Err(e) => format!("{label}: {e}"),
        });
    };
    for m in [3, 5, 7, 9] {
        for spec in [HdlUnitSpec::xnormaj(m), HdlUnitSpec::xnormaj(m).registered()] {
            let text = emit_xnormaj_unit(&spec).unwrap();
            check(spec.module_name(), verify_emitted(&text, reference_xnormaj(m)));
        }
    }
    check("xnorfa".into(), verify_emitted(&emit_xnorfa_unit(), reference_xnorfa()));
    for n in 1..=9 {
        for w in 1..=2 {
            let spec = HdlTreeSpec::new(n, w).unwrap();
            let text = emit_popcount_tree(&spec).unwrap();
            check(spec.module_name(), verify_emitted(&text, reference_popcount_tree(spec)));
        }
    }
    s
}
