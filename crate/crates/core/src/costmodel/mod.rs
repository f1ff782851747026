//! FPGA logic cost estimates for B/M network configurations.
//!
//! Per neuron, the input pairs feed a row of frontend units (XNorFA for
//! XnorPopcount layers, XNorMaj-m for majority layers), whose outputs are
//! summed by a pairwise adder tree and compared against a threshold. A layer
//! instantiates one processing unit per output channel, divided by its
//! folding factor.

mod pareto;
mod report;
mod units;

use thiserror::Error;

use crate::binlayers::{ConfigStringError, LayerError};

pub use crate::binlayers::ConfigString;
pub use pareto::{dominates, pareto, pareto_points, parse_accuracy_csv, write_pareto_csv, ParetoPoint};
pub use report::{adder_tree_cost, layer_cost, network_cost, AdderTree, CostReport, CostRow, LayerCost};
pub use units::{unit_cost, Device, UnitCost, UnitCostTable, UnitKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostError {
    #[error("unknown device '{0}' (expected xilinx or intel)")]
    UnknownDevice(String),
    #[error("no {unit} entry in the {device} unit table")]
    UnknownUnit { device: Device, unit: UnitKind },
    #[error(transparent)]
    Config(#[from] ConfigStringError),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error("accuracy table line {line}: {reason}")]
    Csv { line: usize, reason: String },
}
