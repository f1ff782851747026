//! Checkpoint directories.
//!
//! ```text
//! ckpt/
//!   manifest.toml        seed, epoch, configuration and the layer list
//!   network.toml         the network the weights belong to
//!   layer1.w.f64         latent weights, little-endian f64, cout x fan_in
//!   layer1.w.bits        their signs as one [cout, fan_in] bit tensor
//!   layer1.bias.f64
//!   layer1.bn_{gamma,beta,mean,var}.f64   hidden layers only
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BnState, LayerWeights, ShadowWeights, TrainError};
use crate::binlayers::{LayerKind, NetworkConfig};
use crate::bitcore::{BitTensor, MajParams};

const FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    seed: u64,
    epoch: usize,
    config: String,
    #[serde(rename = "layer")]
    layers: Vec<LayerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerEntry {
    index: usize,
    kind: LayerKind,
    cout: usize,
    fan_in: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    maj: Option<MajParams>,
    weights: String,
    bits: String,
    bias: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    bn: Option<BnEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BnEntry {
    eps: f64,
    gamma: String,
    beta: String,
    mean: String,
    var: String,
}

/// Trained weights together with the network and run metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: NetworkConfig,
    pub weights: ShadowWeights,
    pub seed: u64,
    pub epoch: usize,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io { path: path.to_path_buf(), source }
}

fn write_f64(path: &Path, values: &[f64]) -> Result<(), TrainError> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_f64(path: &Path, expected: usize) -> Result<Vec<f64>, TrainError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() != expected * 8 {
        return Err(TrainError::Checkpoint(format!(
            "{} holds {} bytes, expected {} values ({} bytes)",
            path.display(),
            bytes.len(),
            expected,
            expected * 8
        )));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn file_name(name: &str) -> Result<&str, TrainError> {
    if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
        return Err(TrainError::Checkpoint(format!("invalid file name '{name}' in manifest")));
    }
    Ok(name)
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<(), TrainError> {
        self.weights.check(&self.net)?;
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let compute = self.net.compute_layers();
        let mut entries = Vec::with_capacity(compute.len());
        for (k, (lw, &index)) in self.weights.layers.iter().zip(&compute).enumerate() {
            let cfg = &self.net.layers[index];
            let stem = format!("layer{}", k + 1);
            let name = |part: &str| format!("{stem}.{part}");
            write_f64(&dir.join(name("w.f64")), &lw.w)?;
            let bits: Vec<bool> = lw.w.iter().map(|&v| v >= 0.0).collect();
            let bits = BitTensor::from_bits(&bits, &[lw.cout, lw.fan_in])?;
            let bits_path = dir.join(name("w.bits"));
            fs::write(&bits_path, bits.to_bytes()).map_err(io_err(&bits_path))?;
            write_f64(&dir.join(name("bias.f64")), &lw.bias)?;
            let bn = match &lw.bn {
                Some(bn) => {
                    for (part, v) in [("bn_gamma", &bn.gamma), ("bn_beta", &bn.beta), ("bn_mean", &bn.mean), ("bn_var", &bn.var)] {
                        write_f64(&dir.join(name(&format!("{part}.f64"))), v)?;
                    }
                    Some(BnEntry {
                        eps: bn.eps,
                        gamma: name("bn_gamma.f64"),
                        beta: name("bn_beta.f64"),
                        mean: name("bn_mean.f64"),
                        var: name("bn_var.f64"),
                    })
                }
                None => None,
            };
            entries.push(LayerEntry {
                index,
                kind: cfg.kind,
                cout: lw.cout,
                fan_in: lw.fan_in,
                maj: cfg.maj_params(),
                weights: name("w.f64"),
                bits: name("w.bits"),
                bias: name("bias.f64"),
                bn,
            });
        }
        let manifest = Manifest {
            format: FORMAT,
            seed: self.seed,
            epoch: self.epoch,
            config: self.net.config_string().to_string(),
            layers: entries,
        };
        let text = toml::to_string(&manifest).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        let path = dir.join("manifest.toml");
        fs::write(&path, text).map_err(io_err(&path))?;
        let path = dir.join("network.toml");
        fs::write(&path, self.net.to_toml()).map_err(io_err(&path))
    }

    pub fn load(dir: &Path) -> Result<Self, TrainError> {
        let path = dir.join("manifest.toml");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let manifest: Manifest =
            toml::from_str(&text).map_err(|e| TrainError::Checkpoint(format!("{}: {e}", path.display())))?;
        if manifest.format != FORMAT {
            return Err(TrainError::Checkpoint(format!("unsupported format version {}", manifest.format)));
        }
        let net = NetworkConfig::load(&dir.join("network.toml"))?;
        let compute = net.compute_layers();
        if compute.len() != manifest.layers.len() {
            return Err(TrainError::Checkpoint(format!(
                "manifest lists {} layers, network has {}",
                manifest.layers.len(),
                compute.len()
            )));
        }
        let mut layers = Vec::with_capacity(compute.len());
        for (e, &index) in manifest.layers.iter().zip(&compute) {
            let cfg = &net.layers[index];
            if e.index != index || e.kind != cfg.kind || e.cout != cfg.cout || e.fan_in != cfg.fan_in() || e.maj != cfg.maj_params() {
                return Err(TrainError::Checkpoint(format!("manifest entry for layer {index} does not match the network")));
            }
            let n = e.cout * e.fan_in;
            let w = read_f64(&dir.join(file_name(&e.weights)?), n)?;
            let bits_path = dir.join(file_name(&e.bits)?);
            let bits = BitTensor::from_bytes(&fs::read(&bits_path).map_err(io_err(&bits_path))?)?;
            if bits.shape() != [e.cout, e.fan_in] || w.iter().enumerate().any(|(i, &v)| bits.get(i) != (v >= 0.0)) {
                return Err(TrainError::Checkpoint(format!("{} disagrees with the latent weights", bits_path.display())));
            }
            if w.iter().any(|v| !(-1.0..=1.0).contains(v)) {
                return Err(TrainError::Checkpoint(format!("layer {index}: latent weight outside [-1, 1]")));
            }
            let bias = read_f64(&dir.join(file_name(&e.bias)?), e.cout)?;
            let bn = match &e.bn {
                Some(b) => Some(BnState {
                    gamma: read_f64(&dir.join(file_name(&b.gamma)?), e.cout)?,
                    beta: read_f64(&dir.join(file_name(&b.beta)?), e.cout)?,
                    mean: read_f64(&dir.join(file_name(&b.mean)?), e.cout)?,
                    var: read_f64(&dir.join(file_name(&b.var)?), e.cout)?,
                    eps: b.eps,
                }),
                None => None,
            };
            layers.push(LayerWeights { cout: e.cout, fan_in: e.fan_in, w, bias, bn });
        }
        let weights = ShadowWeights { layers };
        weights.check(&net)?;
        Ok(Checkpoint { net, weights, seed: manifest.seed, epoch: manifest.epoch })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binlayers::LayerConfig;

    fn sample() -> Checkpoint {
        let net = NetworkConfig {
            input: [4, 4, 1],
            layers: vec![
                LayerConfig::conv(1, 2, 3, true).with_majority(true),
                LayerConfig::maxpool(2),
                LayerConfig::fc(8, 3),
            ],
        };
        let mut weights = ShadowWeights::init(&net, 4, 1e-4).unwrap();
        weights.layers[0].bn.as_mut().unwrap().mean[1] = 0.25;
        weights.layers[1].bias[2] = -0.5;
        Checkpoint { net, weights, seed: 4, epoch: 7 }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ck = sample();
        ck.save(dir.path()).unwrap();
        assert_eq!(Checkpoint::load(dir.path()).unwrap(), ck);
        let manifest = fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
        assert!(manifest.contains("config = \"M+B\""), "{manifest}");
    }

    #[test]
    fn save_is_deterministic() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        sample().save(a.path()).unwrap();
        sample().save(b.path()).unwrap();
        for entry in fs::read_dir(a.path()).unwrap() {
            let name = entry.unwrap().file_name();
            assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap());
        }
    }

    #[test]
    fn detects_damage() {
        let dir = tempfile::tempdir().unwrap();
        sample().save(dir.path()).unwrap();
        let w = dir.path().join("layer2.w.f64");
        let mut bytes = fs::read(&w).unwrap();
        bytes.truncate(bytes.len() - 8);
        fs::write(&w, &bytes).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(TrainError::Checkpoint(_))));

        sample().save(dir.path()).unwrap();
        let other = NetworkConfig::mlp([4, 4, 1], &[5], 3);
        fs::write(dir.path().join("network.toml"), other.to_toml()).unwrap();
        assert!(Checkpoint::load(dir.path()).is_err());
    }
}
