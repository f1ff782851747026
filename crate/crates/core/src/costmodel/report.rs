use std::fmt::Write as _;

use super::units::{Device, UnitCostTable, UnitKind};
use super::CostError;
use crate::binlayers::{LayerConfig, LayerKind, NetworkConfig};

/// Size of a pairwise adder tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdderTree {
    pub luts: u64,
    pub output_width: u32,
}

/// Balanced pairwise adder tree over `num_inputs` operands of
/// `input_width` bits.
///
/// Operands are paired level by level; adding a `b`-bit and a narrower
/// operand costs `b` LUTs and yields `b + 1` bits, and an odd operand out is
/// carried to the next level unchanged.
pub fn adder_tree_cost(num_inputs: usize, input_width: u32) -> AdderTree {
    if num_inputs == 0 {
        return AdderTree { luts: 0, output_width: 0 };
    }
    let mut level: Vec<u32> = vec![input_width; num_inputs];
    let mut luts = 0u64;
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        for pair in level.chunks(2) {
            match *pair {
                [a, b] => {
                    let wide = a.max(b);
                    luts += wide as u64;
                    next.push(wide + 1);
                }
                [a] => next.push(a),
                _ => unreachable!(),
            }
        }
        level = next;
    }
    AdderTree { luts, output_width: level[0] }
}

/// Estimated cost of one conv/fc layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCost {
    pub unit: UnitKind,
    /// Input pairs per neuron.
    pub pairs: usize,
    /// Frontend units per neuron.
    pub units: usize,
    pub frontend_luts: u64,
    pub tree_luts: u64,
    pub threshold_luts: u64,
    pub ff: usize,
    /// Instantiated processing units before folding.
    pub neurons: usize,
}

impl LayerCost {
    pub fn per_neuron(&self) -> u64 {
        self.frontend_luts + self.tree_luts + self.threshold_luts
    }

    /// Folded layer total: `neurons * per_neuron / ff`.
    pub fn total(&self) -> f64 {
        (self.neurons as u64 * self.per_neuron()) as f64 / self.ff as f64
    }

    pub fn frontend_total(&self) -> f64 {
        (self.neurons as u64 * self.frontend_luts) as f64 / self.ff as f64
    }

    pub fn tree_total(&self) -> f64 {
        (self.neurons as u64 * self.tree_luts) as f64 / self.ff as f64
    }

    pub fn threshold_total(&self) -> f64 {
        (self.neurons as u64 * self.threshold_luts) as f64 / self.ff as f64
    }
}

/// Cost of one conv/fc layer. `thresholded` is false for the output layer,
/// which has no comparator.
pub fn layer_cost(cfg: &LayerConfig, device: Device, thresholded: bool) -> Result<LayerCost, CostError> {
    if !cfg.is_compute() {
        return Err(CostError::Layer(crate::binlayers::LayerError::Shape(
            "max-pool layers are not costed".into(),
        )));
    }
    let table = UnitCostTable::for_device(device);
    let pairs = cfg.fan_in();
    let (unit, group) = match cfg.maj_params() {
        None => (UnitKind::XnorFa, 3),
        Some(p) => (UnitKind::XnorMaj(p.m()), p.m()),
    };
    let entry = table.get(unit)?;
    let units = pairs.div_ceil(group);
    let tree = adder_tree_cost(units, entry.output_bits);
    let threshold_luts = if thresholded { tree.output_width.div_ceil(2) as u64 } else { 0 };
    Ok(LayerCost {
        unit,
        pairs,
        units,
        frontend_luts: units as u64 * entry.luts as u64,
        tree_luts: tree.luts,
        threshold_luts,
        ff: cfg.ff,
        neurons: cfg.cout,
    })
}

/// One costed layer under the baseline and the evaluated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CostRow {
    pub layer: usize,
    pub name: String,
    pub majority: bool,
    pub baseline: LayerCost,
    pub config: LayerCost,
}

impl CostRow {
    pub fn improvement(&self) -> f64 {
        1.0 - self.config.total() / self.baseline.total()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub device: Device,
    pub config: String,
    pub rows: Vec<CostRow>,
}

impl CostReport {
    pub fn baseline_total(&self) -> f64 {
        self.rows.iter().map(|r| r.baseline.total()).sum()
    }

    pub fn config_total(&self) -> f64 {
        self.rows.iter().map(|r| r.config.total()).sum()
    }

    pub fn improvement(&self) -> f64 {
        1.0 - self.config_total() / self.baseline_total()
    }

    pub fn row(&self, name: &str) -> Option<&CostRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Per-layer rows followed by a `TOTAL` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "layer,kind,majority,ff,frontend_luts,tree_luts,threshold_luts,total_luts,baseline_luts,improvement_percent\n",
        );
        for r in &self.rows {
            let c = &r.config;
            let _ = writeln!(
                out,
                "{},{},{},{},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2}",
                r.name,
                c.unit,
                if r.majority { "M" } else { "B" },
                c.ff,
                c.frontend_total(),
                c.tree_total(),
                c.threshold_total(),
                c.total(),
                r.baseline.total(),
                100.0 * r.improvement()
            );
        }
        let sum = |f: fn(&LayerCost) -> f64| self.rows.iter().map(|r| f(&r.config)).sum::<f64>();
        let _ = writeln!(
            out,
            "TOTAL,,{},,{:.2},{:.2},{:.2},{:.2},{:.2},{:.2}",
            self.config,
            sum(LayerCost::frontend_total),
            sum(LayerCost::tree_total),
            sum(LayerCost::threshold_total),
            self.config_total(),
            self.baseline_total(),
            100.0 * self.improvement()
        );
        out
    }
}

/// Names conv/fc layers `Conv1..` and `FC1..` in order.
pub(crate) fn layer_names(net: &NetworkConfig) -> Vec<(usize, String)> {
    let (mut convs, mut fcs) = (0, 0);
    net.compute_layers()
        .into_iter()
        .map(|i| match net.layers[i].kind {
            LayerKind::Conv => {
                convs += 1;
                (i, format!("Conv{convs}"))
            }
            _ => {
                fcs += 1;
                (i, format!("FC{fcs}"))
            }
        })
        .collect()
}

/// Costs `net` as configured and as an all-XnorPopcount baseline.
///
/// For CNV-shaped networks the first layer is left out of the totals, since
/// it always runs on XnorPopcount.
pub fn network_cost(net: &NetworkConfig, device: Device) -> Result<CostReport, CostError> {
    net.shapes()?;
    let last = *net.compute_layers().last().expect("validated network has compute layers");
    let skip_first = net.is_cnv_shaped();
    let mut rows = Vec::new();
    for (k, (i, name)) in layer_names(net).into_iter().enumerate() {
        if skip_first && k == 0 {
            continue;
        }
        let cfg = &net.layers[i];
        let thresholded = i != last;
        let baseline = layer_cost(&cfg.clone().with_majority(false), device, thresholded)?;
        let config = layer_cost(cfg, device, thresholded)?;
        rows.push(CostRow { layer: i, name, majority: cfg.majority, baseline, config });
    }
    Ok(CostReport { device, config: net.config_string().to_string(), rows })
}
