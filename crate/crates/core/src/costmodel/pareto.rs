use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::report::network_cost;
use super::units::Device;
use super::CostError;
use crate::binlayers::{ConfigString, NetworkConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoPoint {
    pub config: ConfigString,
    pub luts: f64,
    pub error_percent: f64,
    pub on_front: bool,
}

/// `a` dominates `b` when it is no worse in both cost and error and better
/// in at least one.
pub fn dominates(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 <= b.0 && a.1 <= b.1 && (a.0 < b.0 || a.1 < b.1)
}

/// Costs every configuration of `net`'s eligible layers, joins the ones
/// present in `accuracy` and marks the non-dominated points.
///
/// Points are ordered by cost, then error, then configuration string.
pub fn pareto_points(
    net: &NetworkConfig,
    device: Device,
    accuracy: &BTreeMap<ConfigString, f64>,
) -> Result<Vec<ParetoPoint>, CostError> {
    let base = net.config_string();
    let all = ConfigString::enumerate(base.conv_flags().len(), base.fc_flags().len());
    let mut points = Vec::new();
    for cfg in all {
        let Some(&error_percent) = accuracy.get(&cfg) else { continue };
        let luts = network_cost(&net.with_config(&cfg)?, device)?.config_total();
        points.push(ParetoPoint { config: cfg, luts, error_percent, on_front: false });
    }
    if points.len() != accuracy.len() {
        let missing = accuracy.keys().find(|k| !points.iter().any(|p| &p.config == *k));
        return Err(CostError::Csv {
            line: 0,
            reason: format!("configuration {} does not fit this network", missing.map(|c| c.to_string()).unwrap_or_default()),
        });
    }
    points.sort_by(|a, b| {
        a.luts
            .total_cmp(&b.luts)
            .then(a.error_percent.total_cmp(&b.error_percent))
            .then_with(|| a.config.to_string().cmp(&b.config.to_string()))
    });
    // sweep in cost order: a point is on the front iff its error is below
    // every strictly cheaper point's, and no equal-cost point beats it
    let mut best_cheaper = f64::INFINITY;
    let mut i = 0;
    while i < points.len() {
        let mut j = i;
        while j < points.len() && points[j].luts == points[i].luts {
            j += 1;
        }
        let group_best = points[i].error_percent;
        for p in &mut points[i..j] {
            p.on_front = p.error_percent < best_cheaper && p.error_percent == group_best;
        }
        best_cheaper = best_cheaper.min(group_best);
        i = j;
    }
    Ok(points)
}

/// The non-dominated configurations, in the same order as [`pareto_points`].
pub fn pareto(
    net: &NetworkConfig,
    device: Device,
    accuracy: &BTreeMap<ConfigString, f64>,
) -> Result<Vec<ParetoPoint>, CostError> {
    Ok(pareto_points(net, device, accuracy)?.into_iter().filter(|p| p.on_front).collect())
}

/// Reads a `config,error_percent` table.
pub fn parse_accuracy_csv(
    text: &str,
    net: &NetworkConfig,
) -> Result<BTreeMap<ConfigString, f64>, CostError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.trim().replace(' ', "") == "config,error_percent" => {}
        Some((n, _)) => {
            return Err(CostError::Csv { line: n + 1, reason: "expected header 'config,error_percent'".into() })
        }
        None => return Err(CostError::Csv { line: 0, reason: "empty table".into() }),
    }
    let mut table = BTreeMap::new();
    for (n, line) in lines {
        let line_no = n + 1;
        let (cfg, err) = line
            .split_once(',')
            .ok_or_else(|| CostError::Csv { line: line_no, reason: "expected two columns".into() })?;
        let cfg = net.parse_config(cfg.trim())?;
        let err: f64 = err
            .trim()
            .parse()
            .map_err(|_| CostError::Csv { line: line_no, reason: format!("bad error value '{}'", err.trim()) })?;
        if table.insert(cfg.clone(), err).is_some() {
            return Err(CostError::Csv { line: line_no, reason: format!("duplicate configuration {cfg}") });
        }
    }
    Ok(table)
}

pub fn write_pareto_csv(points: &[ParetoPoint]) -> String {
    let mut out = String::from("config,luts,error_percent,on_front\n");
    for p in points {
        let _ = writeln!(out, "{},{:.2},{},{}", p.config, p.luts, p.error_percent, p.on_front);
    }
    out
}
