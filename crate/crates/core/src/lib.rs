//! Binarized neural-network compute with exact XnorPopcount and approximate
//! XNorMaj-M neurons.
//!
//! * [`bitcore`]: packed tensors and neuron kernels, plus per-bit oracles.
//! * [`binlayers`]: convolution / fully-connected layers in both variants,
//!   batch-norm folding into integer thresholds, and deployment inference.
//! * [`trainer`]: straight-through-estimator training of B/M networks.
//! * [`costmodel`]: FPGA LUT estimates and accuracy/area Pareto fronts.
//! * [`hdlgen`]: Verilog emission for the hardware units and a small
//!   evaluator to check the emitted text.
//! * [`dataset`]: IDX ingestion.

pub mod binlayers;
pub mod bitcore;
pub mod costmodel;
pub mod dataset;
pub mod hdlgen;
pub mod selfcheck;
pub mod trainer;
