use std::fmt;
use std::str::FromStr;

use super::CostError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Device {
    /// 6-input LUT fabric.
    XilinxLut6,
    /// Adaptive logic modules.
    IntelAlm,
}

impl FromStr for Device {
    type Err = CostError;

    fn from_str(s: &str) -> Result<Self, CostError> {
        match s.to_ascii_lowercase().as_str() {
            "xilinx" | "xilinx-lut6" => Ok(Device::XilinxLut6),
            "intel" | "intel-alm" => Ok(Device::IntelAlm),
            _ => Err(CostError::UnknownDevice(s.to_string())),
        }
    }
}

impl fmt::Display for Device {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Device::XilinxLut6 => "xilinx",
            Device::IntelAlm => "intel",
        })
    }
}

/// Frontend compression unit fed by input/weight pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnitKind {
    /// Three XNORs and a full adder: 3 pairs to a 2-bit count.
    XnorFa,
    /// `m` XNORs and an `m`-input majority gate: `m` pairs to 1 bit.
    XnorMaj(usize),
}

impl fmt::Display for UnitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnitKind::XnorFa => f.write_str("XNorFA"),
            UnitKind::XnorMaj(m) => write!(f, "XNorMaj-{m}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitCost {
    /// LUTs (Xilinx) or ALMs (Intel).
    pub luts: u32,
    /// Registered-boundary delay in nanoseconds.
    pub delay_ns: f64,
    pub input_pairs: u32,
    pub output_bits: u32,
}

impl UnitCost {
    pub fn compression_rate(&self) -> f64 {
        self.input_pairs as f64 / self.output_bits as f64
    }

    /// Compression rate per LUT-nanosecond.
    pub fn efficiency(&self) -> f64 {
        self.compression_rate() / (self.luts as f64 * self.delay_ns)
    }
}

const fn unit(luts: u32, delay_ns: f64, input_pairs: u32, output_bits: u32) -> UnitCost {
    UnitCost { luts, delay_ns, input_pairs, output_bits }
}

/// Synthesized frontend-unit costs per device.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitCostTable {
    pub device: Device,
    entries: Vec<(UnitKind, UnitCost)>,
}

impl UnitCostTable {
    pub fn for_device(device: Device) -> Self {
        let entries = match device {
            Device::XilinxLut6 => vec![
                (UnitKind::XnorFa, unit(2, 0.68, 3, 2)),
                (UnitKind::XnorMaj(3), unit(1, 0.64, 3, 1)),
                (UnitKind::XnorMaj(5), unit(3, 1.10, 5, 1)),
                (UnitKind::XnorMaj(7), unit(5, 0.99, 7, 1)),
                (UnitKind::XnorMaj(9), unit(7, 1.07, 9, 1)),
            ],
            Device::IntelAlm => vec![
                (UnitKind::XnorFa, unit(2, 0.86, 3, 2)),
                (UnitKind::XnorMaj(3), unit(1, 0.70, 3, 1)),
                (UnitKind::XnorMaj(5), unit(3, 0.96, 5, 1)),
                (UnitKind::XnorMaj(7), unit(5, 1.24, 7, 1)),
                (UnitKind::XnorMaj(9), unit(9, 1.78, 9, 1)),
            ],
        };
        UnitCostTable { device, entries }
    }

    pub fn get(&self, kind: UnitKind) -> Result<UnitCost, CostError> {
        self.entries
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, c)| *c)
            .ok_or(CostError::UnknownUnit { device: self.device, unit: kind })
    }

    pub fn entries(&self) -> &[(UnitKind, UnitCost)] {
        &self.entries
    }
}

pub fn unit_cost(device: Device, kind: UnitKind) -> Result<UnitCost, CostError> {
    UnitCostTable::for_device(device).get(kind)
}
