use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::eval::Module;
use super::HdlError;

/// Input spaces up to this many bits are checked exhaustively.
pub const EXHAUSTIVE_BITS: u32 = 20;
pub const SAMPLED_VECTORS: u64 = 100_000;
const SAMPLE_SEED: u64 = 0x5eed;
const MAX_REPORTED: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mismatch {
    pub inputs: Vec<u64>,
    pub expected: Vec<u64>,
    pub got: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyReport {
    pub module: String,
    pub exhaustive: bool,
    pub checked: u64,
    pub matched: u64,
    /// The first few failing vectors.
    pub mismatches: Vec<Mismatch>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checked == self.matched
    }
}

impl std::fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mode = if self.exhaustive { "exhaustive" } else { "sampled" };
        write!(f, "{}: {}/{} match ({mode})", self.module, self.matched, self.checked)?;
        for m in &self.mismatches {
            write!(f, "\n  inputs {:?}: expected {:?}, got {:?}", m.inputs, m.expected, m.got)?;
        }
        Ok(())
    }
}

fn split(vector: u64, ports: &[u32]) -> Vec<u64> {
    let mut shift = 0;
    ports
        .iter()
        .map(|&w| {
            let v = vector >> shift & ((1u64 << w) - 1);
            shift += w;
            v
        })
        .collect()
}

/// Checks `text` against `reference` over all data inputs.
///
/// Both sides see the data inputs in port order and produce one value per
/// output port. Spaces of at most [`EXHAUSTIVE_BITS`] input bits are
/// enumerated; larger ones are checked on [`SAMPLED_VECTORS`] random vectors.
pub fn verify_emitted<F>(text: &str, reference: F) -> Result<VerifyReport, HdlError>
where
    F: Fn(&[u64]) -> Vec<u64>,
{
    let module = Module::parse(text)?;
    let widths: Vec<u32> = module.inputs().iter().map(|p| p.width).collect();
    let bits = module.input_bits();
    let exhaustive = bits <= EXHAUSTIVE_BITS;
    let mut report = VerifyReport {
        module: module.name.clone(),
        exhaustive,
        checked: 0,
        matched: 0,
        mismatches: Vec::new(),
    };
    let mut check = |inputs: Vec<u64>| {
        let got = module.eval(&inputs);
        let expected = reference(&inputs);
        report.checked += 1;
        if got == expected {
            report.matched += 1;
        } else if report.mismatches.len() < MAX_REPORTED {
            report.mismatches.push(Mismatch { inputs, expected, got });
        }
    };
    if exhaustive {
        for v in 0..1u64 << bits {
            check(split(v, &widths));
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(SAMPLE_SEED);
        for _ in 0..SAMPLED_VECTORS {
            check(widths.iter().map(|&w| rng.random::<u64>() & (u64::MAX >> (64 - w))).collect());
        }
    }
    Ok(report)
}
