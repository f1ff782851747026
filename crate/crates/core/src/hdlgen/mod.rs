//! Verilog emission for the frontend units and popcount adder trees.
//!
//! The emitted text sticks to a small subset: port/wire/reg declarations,
//! continuous `assign`s, and `always @(posedge clk)` blocks holding plain
//! register copies. [`eval`] interprets exactly that subset, which is what
//! [`verify_emitted`] uses to check the text against the bitcore kernels.
//!
//! Port conventions:
//!
//! * XNorMaj-m: `x[m-1:0]`, `w[m-1:0]`, output `maj`;
//! * XNorFA: `x[2:0]`, `w[2:0]`, output `sum[1:0]`;
//! * popcount tree: `in[n*w-1:0]` (operand `i` at bits `i*w..`), output
//!   `sum`;
//! * registered variants add a leading `clk` input.

pub mod eval;
mod verify;

use std::fmt::Write as _;

use thiserror::Error;

use crate::bitcore::{self, BitTensor};
use crate::costmodel::adder_tree_cost;

pub use eval::Module;
pub use verify::{verify_emitted, Mismatch, VerifyReport, EXHAUSTIVE_BITS, SAMPLED_VECTORS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HdlError {
    #[error("majority group size must be odd and at least 3, got {0}")]
    InvalidGroupSize(usize),
    #[error("popcount tree needs at least one input")]
    EmptyTree,
    #[error("operand width must be between 1 and 32 bits, got {0}")]
    InvalidWidth(u32),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HdlUnitKind {
    XnorFa,
    XnorMaj,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HdlUnitSpec {
    pub kind: HdlUnitKind,
    /// Group size; ignored for XNorFA, which always takes 3 pairs.
    pub m: usize,
    /// Register inputs and outputs on `clk`.
    pub register_io: bool,
}

impl HdlUnitSpec {
    pub fn xnormaj(m: usize) -> Self {
        HdlUnitSpec { kind: HdlUnitKind::XnorMaj, m, register_io: false }
    }

    pub fn xnorfa() -> Self {
        HdlUnitSpec { kind: HdlUnitKind::XnorFa, m: 3, register_io: false }
    }

    pub fn registered(mut self) -> Self {
        self.register_io = true;
        self
    }

    pub fn module_name(&self) -> String {
        let base = match self.kind {
            HdlUnitKind::XnorFa => "xnorfa".to_string(),
            HdlUnitKind::XnorMaj => format!("xnormaj{}", self.m),
        };
        if self.register_io {
            format!("{base}_reg")
        } else {
            base
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HdlTreeSpec {
    pub n_inputs: usize,
    pub input_width: u32,
}

impl HdlTreeSpec {
    pub fn new(n_inputs: usize, input_width: u32) -> Result<Self, HdlError> {
        if n_inputs < 1 {
            return Err(HdlError::EmptyTree);
        }
        if !(1..=32).contains(&input_width) {
            return Err(HdlError::InvalidWidth(input_width));
        }
        Ok(HdlTreeSpec { n_inputs, input_width })
    }

    /// Bits needed for the largest possible sum.
    pub fn output_width(&self) -> u32 {
        let max = self.n_inputs as u128 * ((1u128 << self.input_width) - 1);
        (u128::BITS - max.leading_zeros()).max(1)
    }

    pub fn module_name(&self) -> String {
        format!("popcount_tree_n{}_w{}", self.n_inputs, self.input_width)
    }
}

fn range(width: usize) -> String {
    if width == 1 {
        String::new()
    } else {
        format!("[{}:0] ", width - 1)
    }
}

/// Sum of products over every `ceil(m/2)`-subset of `z`.
fn majority_expr(m: usize) -> String {
    let k = m.div_ceil(2);
    let mut terms = Vec::new();
    let mut pick: Vec<usize> = (0..k).collect();
    loop {
        let t: Vec<String> = pick.iter().map(|i| format!("z[{i}]")).collect();
        terms.push(format!("({})", t.join(" & ")));
        // next combination in lexicographic order
        let Some(i) = (0..k).rev().find(|&i| pick[i] < m - k + i) else { break };
        pick[i] += 1;
        for j in i + 1..k {
            pick[j] = pick[j - 1] + 1;
        }
    }
    terms.join("\n      | ")
}

struct UnitText {
    inputs: Vec<(String, usize)>,
    output: (String, usize),
    wires: Vec<(String, usize)>,
    body: Vec<String>,
}

fn write_unit(name: &str, unit: UnitText, registered: bool) -> String {
    let mut out = String::new();
    let mut ports: Vec<&str> = unit.inputs.iter().map(|(n, _)| n.as_str()).collect();
    if registered {
        ports.insert(0, "clk");
    }
    ports.push(&unit.output.0);
    let _ = writeln!(out, "module {name} ({});", ports.join(", "));
    if registered {
        let _ = writeln!(out, "  input clk;");
    }
    for (n, w) in &unit.inputs {
        let _ = writeln!(out, "  input {}{n};", range(*w));
    }
    let (oname, ow) = &unit.output;
    let reg = if registered { "reg " } else { "" };
    let _ = writeln!(out, "  output {reg}{}{oname};", range(*ow));
    if registered {
        for (n, w) in &unit.inputs {
            let _ = writeln!(out, "  reg {}{n}_q;", range(*w));
        }
        let _ = writeln!(out, "  wire {}{oname}_d;", range(*ow));
    }
    for (n, w) in &unit.wires {
        let _ = writeln!(out, "  wire {}{n};", range(*w));
    }
    out.push('\n');
    if registered {
        let _ = writeln!(out, "  always @(posedge clk) begin");
        for (n, _) in &unit.inputs {
            let _ = writeln!(out, "    {n}_q <= {n};");
        }
        let _ = writeln!(out, "  end\n");
    }
    for line in &unit.body {
        let mut line = line.clone();
        if registered {
            for (n, _) in &unit.inputs {
                line = replace_ident(&line, n, &format!("{n}_q"));
            }
            line = replace_lhs(&line, oname, &format!("{oname}_d"));
        }
        let _ = writeln!(out, "  {line}");
    }
    if registered {
        let _ = writeln!(out, "\n  always @(posedge clk) begin");
        let _ = writeln!(out, "    {oname} <= {oname}_d;");
        let _ = writeln!(out, "  end");
    }
    out.push_str("endmodule\n");
    out
}

fn replace_ident(line: &str, from: &str, to: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let bytes = line.as_bytes();
    let is_ident = |c: u8| c.is_ascii_alphanumeric() || c == b'_';
    let mut i = 0;
    while i < line.len() {
        if line[i..].starts_with(from)
            && (i == 0 || !is_ident(bytes[i - 1]))
            && bytes.get(i + from.len()).is_none_or(|&c| !is_ident(c))
        {
            out.push_str(to);
            i += from.len();
        } else {
            out.push(bytes[i] as char);
            i += 1;
        }
    }
    out
}

fn replace_lhs(line: &str, from: &str, to: &str) -> String {
    let prefix = format!("assign {from} ");
    match line.strip_prefix(&prefix) {
        Some(rest) => format!("assign {to} {rest}"),
        None => line.to_string(),
    }
}

/// Verilog for an XNorMaj-m or XNorFA unit.
pub fn emit_xnormaj_unit(spec: &HdlUnitSpec) -> Result<String, HdlError> {
    let name = spec.module_name();
    let unit = match spec.kind {
        HdlUnitKind::XnorMaj => {
            let m = spec.m;
            if m < 3 || m % 2 == 0 {
                return Err(HdlError::InvalidGroupSize(m));
            }
            UnitText {
                inputs: vec![("x".into(), m), ("w".into(), m)],
                output: ("maj".into(), 1),
                wires: vec![("z".into(), m)],
                body: vec![
                    "assign z = ~(x ^ w);".into(),
                    format!("assign maj = {};", majority_expr(m)),
                ],
            }
        }
        HdlUnitKind::XnorFa => UnitText {
            inputs: vec![("x".into(), 3), ("w".into(), 3)],
            output: ("sum".into(), 2),
            wires: vec![("z".into(), 3), ("s".into(), 1), ("c".into(), 1)],
            body: vec![
                "assign z = ~(x ^ w);".into(),
                "assign s = z[0] ^ z[1] ^ z[2];".into(),
                format!("assign c = {};", majority_expr(3)),
                "assign sum = {c, s};".into(),
            ],
        },
    };
    Ok(write_unit(&name, unit, spec.register_io))
}

/// Combinational XNorFA unit.
pub fn emit_xnorfa_unit() -> String {
    emit_xnormaj_unit(&HdlUnitSpec::xnorfa()).expect("fixed spec is valid")
}

fn zero_extend(name: &str, from: u32, to: u32) -> String {
    if from == to {
        name.to_string()
    } else {
        format!("{{{}'b0, {name}}}", to - from)
    }
}

/// Pairwise adder tree over `n_inputs` operands.
///
/// Levels follow the cost model: each pair is widened to one bit past its
/// wider operand and an odd operand is carried to the next level as is.
pub fn emit_popcount_tree(spec: &HdlTreeSpec) -> Result<String, HdlError> {
    let spec = HdlTreeSpec::new(spec.n_inputs, spec.input_width)?;
    let (n, w) = (spec.n_inputs, spec.input_width);
    let ow = spec.output_width();
    let mut decls = Vec::new();
    let mut body = Vec::new();
    if n == 1 {
        body.push("assign sum = in;".to_string());
    } else {
        let mut level: Vec<(String, u32)> = Vec::with_capacity(n);
        for i in 0..n {
            let name = format!("l0_{i}");
            decls.push(format!("wire {}{name};", range(w as usize)));
            let lo = i * w as usize;
            let sel = if w == 1 { format!("in[{lo}]") } else { format!("in[{}:{lo}]", lo + w as usize - 1) };
            body.push(format!("assign {name} = {sel};"));
            level.push((name, w));
        }
        let mut depth = 0;
        while level.len() > 1 {
            depth += 1;
            let mut next = Vec::with_capacity(level.len().div_ceil(2));
            for (j, pair) in level.chunks(2).enumerate() {
                match pair {
                    [(a, wa), (b, wb)] => {
                        let width = wa.max(wb) + 1;
                        let name = format!("l{depth}_{j}");
                        decls.push(format!("wire {}{name};", range(width as usize)));
                        body.push(format!(
                            "assign {name} = {} + {};",
                            zero_extend(a, *wa, width),
                            zero_extend(b, *wb, width)
                        ));
                        next.push((name, width));
                    }
                    [single] => next.push(single.clone()),
                    _ => unreachable!(),
                }
            }
            level = next;
        }
        let (root, rw) = &level[0];
        debug_assert_eq!(*rw, adder_tree_cost(n, w).output_width);
        body.push(if *rw == ow {
            format!("assign sum = {root};")
        } else if *rw > ow {
            format!("assign sum = {root}[{}:0];", ow - 1)
        } else {
            format!("assign sum = {};", zero_extend(root, *rw, ow))
        });
    }
    let mut out = String::new();
    let _ = writeln!(out, "module {} (in, sum);", spec.module_name());
    let _ = writeln!(out, "  input {}in;", range(n * w as usize));
    let _ = writeln!(out, "  output {}sum;", range(ow as usize));
    for d in &decls {
        let _ = writeln!(out, "  {d}");
    }
    out.push('\n');
    for b in &body {
        let _ = writeln!(out, "  {b}");
    }
    out.push_str("endmodule\n");
    Ok(out)
}

fn bits_of(v: u64, n: usize) -> BitTensor {
    let bits: Vec<bool> = (0..n).map(|i| v >> i & 1 == 1).collect();
    BitTensor::from_bits(&bits, &[n]).expect("length matches")
}

/// Bitcore reference for an XNorMaj-m unit: inputs `[x, w]`, output `[maj]`.
pub fn reference_xnormaj(m: usize) -> impl Fn(&[u64]) -> Vec<u64> {
    move |inp| {
        let z = bitcore::xnor(&bits_of(inp[0], m), &bits_of(inp[1], m)).expect("same length");
        let maj = bitcore::maj_reduce(&z, m).expect("one group");
        vec![maj.get(0) as u64]
    }
}

/// Bitcore reference for an XNorFA unit: the XNOR count as a 2-bit value.
pub fn reference_xnorfa() -> impl Fn(&[u64]) -> Vec<u64> {
    |inp| vec![bitcore::xnor_count(&bits_of(inp[0], 3), &bits_of(inp[1], 3)).expect("same length")]
}

/// Reference for a popcount tree: the sum of the `n` packed operands.
pub fn reference_popcount_tree(spec: HdlTreeSpec) -> impl Fn(&[u64]) -> Vec<u64> {
    move |inp| {
        let w = spec.input_width;
        if w == 1 {
            return vec![bitcore::popcount(&bits_of(inp[0], spec.n_inputs))];
        }
        let mask = (1u64 << w) - 1;
        vec![(0..spec.n_inputs).map(|i| inp[0] >> (i as u32 * w) & mask).sum()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maj3_text() {
        let text = emit_xnormaj_unit(&HdlUnitSpec::xnormaj(3)).unwrap();
        assert!(text.starts_with("module xnormaj3 (x, w, maj);\n"));
        assert!(text.contains("assign maj = (z[0] & z[1])\n      | (z[0] & z[2])\n      | (z[1] & z[2]);"));
        assert!(text.ends_with("endmodule\n"));
    }

    #[test]
    fn majority_term_count() {
        assert_eq!(majority_expr(5).matches('(').count(), 10);
        assert_eq!(majority_expr(9).matches('(').count(), 126);
    }

    #[test]
    fn invalid_specs() {
        assert_eq!(emit_xnormaj_unit(&HdlUnitSpec::xnormaj(4)), Err(HdlError::InvalidGroupSize(4)));
        assert_eq!(emit_xnormaj_unit(&HdlUnitSpec::xnormaj(1)), Err(HdlError::InvalidGroupSize(1)));
        assert_eq!(HdlTreeSpec::new(0, 1), Err(HdlError::EmptyTree));
        assert_eq!(HdlTreeSpec::new(2, 0), Err(HdlError::InvalidWidth(0)));
    }

    #[test]
    fn tree_widths() {
        assert_eq!(HdlTreeSpec::new(8, 1).unwrap().output_width(), 4);
        assert_eq!(HdlTreeSpec::new(1, 1).unwrap().output_width(), 1);
        assert_eq!(HdlTreeSpec::new(3, 2).unwrap().output_width(), 4);
        assert_eq!(HdlTreeSpec::new(1366, 2).unwrap().output_width(), 13);
    }

    #[test]
    fn single_input_tree_is_wiring() {
        let text = emit_popcount_tree(&HdlTreeSpec::new(1, 3).unwrap()).unwrap();
        assert!(text.contains("assign sum = in;"));
        assert!(!text.contains('+'));
    }

    #[test]
    fn registered_unit_renames() {
        let text = emit_xnormaj_unit(&HdlUnitSpec::xnormaj(3).registered()).unwrap();
        assert!(text.starts_with("module xnormaj3_reg (clk, x, w, maj);"));
        assert!(text.contains("assign z = ~(x_q ^ w_q);"));
        assert!(text.contains("assign maj_d = "));
        assert!(text.contains("    maj <= maj_d;"));
    }

    #[test]
    fn references() {
        let maj = reference_xnormaj(3);
        assert_eq!(maj(&[0b111, 0b111]), vec![1]);
        assert_eq!(maj(&[0b111, 0b000]), vec![0]);
        assert_eq!(reference_xnorfa()(&[0b110, 0b110]), vec![3]);
        let tree = reference_popcount_tree(HdlTreeSpec::new(3, 2).unwrap());
        assert_eq!(tree(&[0b11_10_01]), vec![6]);
    }
}
