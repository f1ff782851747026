//! Interpreter for the assign-only Verilog subset the emitters produce.
//!
//! Supported: one `module` with a port list; `input`, `output [reg]`, `wire`
//! and `reg` declarations with `[msb:0]` ranges; `assign` statements;
//! `always @(posedge clk)` blocks of nonblocking copies. Expressions use
//! identifiers, bit and part selects, sized or decimal literals,
//! concatenation, `~`, `+`, `&`, `^` and `|` with Verilog precedence and
//! context-determined widths. Signals are at most 64 bits wide.
//!
//! Statements run once, in text order, and every signal must be driven
//! before it is read. Register blocks therefore behave as transparent
//! pipeline stages, so a registered unit evaluates to its steady-state
//! combinational function.

use std::collections::HashMap;

use super::HdlError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Port {
    pub name: String,
    pub width: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Add,
    And,
    Xor,
    Or,
}

#[derive(Debug, Clone, PartialEq)]
enum Expr {
    Sig(usize),
    Select { sig: usize, msb: u32, lsb: u32 },
    Lit { value: u64, width: u32 },
    Not(Box<Expr>, u32),
    Bin(Op, Box<Expr>, Box<Expr>, u32),
    Concat(Vec<Expr>, u32),
}

#[derive(Debug, Clone, PartialEq)]
struct Stmt {
    target: usize,
    msb: u32,
    lsb: u32,
    expr: Expr,
}

/// A parsed module ready for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Module {
    pub name: String,
    inputs: Vec<Port>,
    outputs: Vec<Port>,
    widths: Vec<u32>,
    input_ids: Vec<usize>,
    output_ids: Vec<usize>,
    stmts: Vec<Stmt>,
}

fn mask(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

impl Module {
    pub fn parse(text: &str) -> Result<Self, HdlError> {
        Parser::new(text)?.module()
    }

    /// Data inputs in port order; clocks are excluded.
    pub fn inputs(&self) -> &[Port] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[Port] {
        &self.outputs
    }

    pub fn input_bits(&self) -> u32 {
        self.inputs.iter().map(|p| p.width).sum()
    }

    /// Output values for one assignment of the data inputs.
    pub fn eval(&self, inputs: &[u64]) -> Vec<u64> {
        assert_eq!(inputs.len(), self.inputs.len(), "one value per data input");
        let mut values = vec![0u64; self.widths.len()];
        for ((&id, &v), port) in self.input_ids.iter().zip(inputs).zip(&self.inputs) {
            values[id] = v & mask(port.width);
        }
        for s in &self.stmts {
            let width = s.msb - s.lsb + 1;
            let v = eval(&s.expr, &values, &self.widths, width) & mask(width);
            let m = mask(width) << s.lsb;
            values[s.target] = (values[s.target] & !m) | (v << s.lsb);
        }
        self.output_ids.iter().map(|&id| values[id]).collect()
    }
}

fn self_width(e: &Expr, widths: &[u32]) -> u32 {
    match e {
        Expr::Sig(s) => widths[*s],
        Expr::Select { msb, lsb, .. } => msb - lsb + 1,
        Expr::Lit { width, .. } => *width,
        Expr::Not(_, w) | Expr::Bin(.., w) | Expr::Concat(_, w) => *w,
    }
}

fn eval(e: &Expr, values: &[u64], widths: &[u32], ctx: u32) -> u64 {
    let ctx = ctx.max(self_width(e, widths));
    let m = mask(ctx);
    match e {
        Expr::Sig(s) => values[*s],
        Expr::Select { sig, msb, lsb } => values[*sig] >> lsb & mask(msb - lsb + 1),
        Expr::Lit { value, .. } => *value,
        Expr::Not(a, _) => !eval(a, values, widths, ctx) & m,
        Expr::Bin(op, a, b, _) => {
            let (x, y) = (eval(a, values, widths, ctx), eval(b, values, widths, ctx));
            (match op {
                Op::Add => x.wrapping_add(y),
                Op::And => x & y,
                Op::Xor => x ^ y,
                Op::Or => x | y,
            }) & m
        }
        Expr::Concat(parts, _) => {
            let mut acc = 0u64;
            for p in parts {
                let w = self_width(p, widths);
                acc = if w >= 64 { 0 } else { acc << w } | (eval(p, values, widths, w) & mask(w));
            }
            acc
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num { value: u64, width: Option<u32> },
    Punct(&'static str),
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>, HdlError> {
    const PUNCT: [&str; 17] = ["<=", "(", ")", "[", "]", "{", "}", ";", ",", ":", "=", "~", "&", "|", "^", "+", "@"];
    let mut toks = Vec::new();
    let bytes = text.as_bytes();
    let (mut i, mut line) = (0, 1);
    let err = |line, msg: String| HdlError::Parse { line, msg };
    while i < bytes.len() {
        let c = bytes[i];
        if c == b'\n' {
            line += 1;
            i += 1;
        } else if c.is_ascii_whitespace() {
            i += 1;
        } else if text[i..].starts_with("//") {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
        } else if text[i..].starts_with("/*") {
            let end = text[i + 2..].find("*/").ok_or_else(|| err(line, "unterminated comment".into()))?;
            line += text[i..i + 2 + end].matches('\n').count();
            i += end + 4;
        } else if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'$') {
                i += 1;
            }
            toks.push((Tok::Ident(text[start..i].to_string()), line));
        } else if c.is_ascii_digit() {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'_') {
                i += 1;
            }
            let lead: String = text[start..i].chars().filter(|&c| c != '_').collect();
            let lead: u64 = lead.parse().map_err(|_| err(line, format!("bad number '{}'", &text[start..i])))?;
            if i < bytes.len() && bytes[i] == b'\'' {
                let radix = match bytes.get(i + 1).map(|b| b.to_ascii_lowercase()) {
                    Some(b'b') => 2,
                    Some(b'd') => 10,
                    Some(b'h') => 16,
                    _ => return Err(err(line, "expected b, d or h after '".into())),
                };
                i += 2;
                let ds = i;
                while i < bytes.len() && (bytes[i].is_ascii_hexdigit() || bytes[i] == b'_') {
                    i += 1;
                }
                let digits: String = text[ds..i].chars().filter(|&c| c != '_').collect();
                let value = u64::from_str_radix(&digits, radix)
                    .map_err(|_| err(line, format!("bad literal digits '{digits}'")))?;
                if lead == 0 || lead > 64 {
                    return Err(err(line, format!("literal width {lead} out of range")));
                }
                toks.push((Tok::Num { value: value & mask(lead as u32), width: Some(lead as u32) }, line));
            } else {
                toks.push((Tok::Num { value: lead, width: None }, line));
            }
        } else if let Some(p) = PUNCT.iter().find(|p| text[i..].starts_with(**p)) {
            toks.push((Tok::Punct(p), line));
            i += p.len();
        } else {
            return Err(err(line, format!("unexpected character '{}'", text[i..].chars().next().unwrap())));
        }
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    ids: HashMap<String, usize>,
    widths: Vec<u32>,
    driven: Vec<bool>,
    is_input: Vec<bool>,
    clocks: Vec<usize>,
}

impl Parser {
    fn new(text: &str) -> Result<Self, HdlError> {
        Ok(Parser { toks: tokenize(text)?, pos: 0, ids: HashMap::new(), widths: Vec::new(), driven: Vec::new(), is_input: Vec::new(), clocks: Vec::new() })
    }

    fn line(&self) -> usize {
        self.toks.get(self.pos).or(self.toks.last()).map_or(1, |t| t.1)
    }

    fn fail<T>(&self, msg: impl Into<String>) -> Result<T, HdlError> {
        Err(HdlError::Parse { line: self.line(), msg: msg.into() })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn next(&mut self) -> Result<Tok, HdlError> {
        let t = self.peek().cloned();
        match t {
            Some(t) => {
                self.pos += 1;
                Ok(t)
            }
            None => self.fail("unexpected end of text"),
        }
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Some(Tok::Punct(q)) if *q == p)
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(q)) if q == w)
    }

    fn expect(&mut self, p: &str) -> Result<(), HdlError> {
        if self.is_punct(p) {
            self.pos += 1;
            Ok(())
        } else {
            self.fail(format!("expected '{p}'"))
        }
    }

    fn expect_word(&mut self, w: &str) -> Result<(), HdlError> {
        if self.is_word(w) {
            self.pos += 1;
            Ok(())
        } else {
            self.fail(format!("expected '{w}'"))
        }
    }

    fn ident(&mut self) -> Result<String, HdlError> {
        match self.next()? {
            Tok::Ident(s) => Ok(s),
            _ => {
                self.pos -= 1;
                self.fail("expected identifier")
            }
        }
    }

    fn number(&mut self) -> Result<u64, HdlError> {
        match self.next()? {
            Tok::Num { value, .. } => Ok(value),
            _ => {
                self.pos -= 1;
                self.fail("expected number")
            }
        }
    }

    fn lookup(&self, name: &str) -> Result<usize, HdlError> {
        match self.ids.get(name) {
            Some(&id) => Ok(id),
            None => self.fail(format!("undeclared signal '{name}'")),
        }
    }

    fn module(mut self) -> Result<Module, HdlError> {
        self.expect_word("module")?;
        let name = self.ident()?;
        self.expect("(")?;
        let mut ports = vec![self.ident()?];
        while self.is_punct(",") {
            self.pos += 1;
            ports.push(self.ident()?);
        }
        self.expect(")")?;
        self.expect(";")?;
        let (mut inputs, mut outputs) = (Vec::new(), Vec::new());
        let mut stmts = Vec::new();
        loop {
            let word = self.ident()?;
            match word.as_str() {
                "endmodule" => break,
                "input" | "output" | "wire" | "reg" => {
                    if word == "output" && self.is_word("reg") {
                        self.pos += 1;
                    }
                    let width = self.range()?;
                    loop {
                        let n = self.ident()?;
                        if self.ids.contains_key(&n) {
                            return self.fail(format!("'{n}' declared twice"));
                        }
                        let is_port = ports.contains(&n);
                        if (word == "input" || word == "output") != is_port {
                            return self.fail(format!("'{n}' port list and declaration disagree"));
                        }
                        let id = self.widths.len();
                        self.ids.insert(n.clone(), id);
                        self.widths.push(width);
                        self.driven.push(word == "input");
                        self.is_input.push(word == "input");
                        match word.as_str() {
                            "input" => inputs.push((Port { name: n, width }, id)),
                            "output" => outputs.push((Port { name: n, width }, id)),
                            _ => {}
                        }
                        if self.is_punct(",") {
                            self.pos += 1;
                        } else {
                            break;
                        }
                    }
                    self.expect(";")?;
                }
                "assign" => {
                    stmts.push(self.statement("=")?);
                }
                "always" => {
                    self.expect("@")?;
                    self.expect("(")?;
                    self.expect_word("posedge")?;
                    let clk = self.ident()?;
                    let clk = self.lookup(&clk)?;
                    if !inputs.iter().any(|(_, id)| *id == clk) {
                        return self.fail("clock must be an input");
                    }
                    if !self.clocks.contains(&clk) {
                        self.clocks.push(clk);
                    }
                    self.expect(")")?;
                    if self.is_word("begin") {
                        self.pos += 1;
                        while !self.is_word("end") {
                            stmts.push(self.statement("<=")?);
                        }
                        self.pos += 1;
                    } else {
                        stmts.push(self.statement("<=")?);
                    }
                }
                other => return self.fail(format!("unsupported construct '{other}'")),
            }
        }
        if self.pos != self.toks.len() {
            return self.fail("text after endmodule");
        }
        for p in &ports {
            if !self.ids.contains_key(p) {
                return self.fail(format!("port '{p}' never declared"));
            }
        }
        for (p, id) in &outputs {
            if !self.driven[*id] {
                return self.fail(format!("output '{}' is never driven", p.name));
            }
        }
        let clocks = self.clocks.clone();
        let inputs: Vec<_> = inputs.into_iter().filter(|(_, id)| !clocks.contains(id)).collect();
        let order = |list: &[(Port, usize)]| {
            let mut list = list.to_vec();
            list.sort_by_key(|(p, _)| ports.iter().position(|q| *q == p.name));
            list
        };
        let (inputs, outputs) = (order(&inputs), order(&outputs));
        Ok(Module {
            name,
            input_ids: inputs.iter().map(|(_, id)| *id).collect(),
            inputs: inputs.into_iter().map(|(p, _)| p).collect(),
            output_ids: outputs.iter().map(|(_, id)| *id).collect(),
            outputs: outputs.into_iter().map(|(p, _)| p).collect(),
            widths: self.widths,
            stmts,
        })
    }

    fn range(&mut self) -> Result<u32, HdlError> {
        if !self.is_punct("[") {
            return Ok(1);
        }
        self.pos += 1;
        let msb = self.number()?;
        self.expect(":")?;
        let lsb = self.number()?;
        self.expect("]")?;
        if lsb != 0 {
            return self.fail("ranges must end at bit 0");
        }
        if msb >= 64 {
            return self.fail(format!("signals wider than 64 bits are not supported (got {})", msb + 1));
        }
        Ok(msb as u32 + 1)
    }

    fn select(&mut self, sig: usize) -> Result<(u32, u32), HdlError> {
        let width = self.widths[sig];
        if !self.is_punct("[") {
            return Ok((width - 1, 0));
        }
        self.pos += 1;
        let msb = self.number()?;
        let lsb = if self.is_punct(":") {
            self.pos += 1;
            self.number()?
        } else {
            msb
        };
        self.expect("]")?;
        if lsb > msb || msb >= width as u64 {
            return self.fail(format!("select [{msb}:{lsb}] out of range"));
        }
        Ok((msb as u32, lsb as u32))
    }

    fn statement(&mut self, assign_op: &str) -> Result<Stmt, HdlError> {
        let name = self.ident()?;
        let target = self.lookup(&name)?;
        if self.is_input[target] {
            return self.fail(format!("cannot drive input '{name}'"));
        }
        let (msb, lsb) = self.select(target)?;
        self.expect(assign_op)?;
        let expr = self.or()?;
        self.expect(";")?;
        self.driven[target] = true;
        Ok(Stmt { target, msb, lsb, expr })
    }

    fn binary(&mut self, op: Op, p: &str, next: fn(&mut Self) -> Result<Expr, HdlError>) -> Result<Expr, HdlError> {
        let mut lhs = next(self)?;
        while self.is_punct(p) {
            self.pos += 1;
            let rhs = next(self)?;
            let w = self_width(&lhs, &self.widths).max(self_width(&rhs, &self.widths));
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs), w);
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Expr, HdlError> {
        self.binary(Op::Or, "|", Self::xor)
    }

    fn xor(&mut self) -> Result<Expr, HdlError> {
        self.binary(Op::Xor, "^", Self::and)
    }

    fn and(&mut self) -> Result<Expr, HdlError> {
        self.binary(Op::And, "&", Self::add)
    }

    fn add(&mut self) -> Result<Expr, HdlError> {
        self.binary(Op::Add, "+", Self::unary)
    }

    fn unary(&mut self) -> Result<Expr, HdlError> {
        if self.is_punct("~") {
            self.pos += 1;
            let e = self.unary()?;
            let w = self_width(&e, &self.widths);
            return Ok(Expr::Not(Box::new(e), w));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, HdlError> {
        match self.next()? {
            Tok::Punct("(") => {
                let e = self.or()?;
                self.expect(")")?;
                Ok(e)
            }
            Tok::Punct("{") => {
                let mut parts = vec![self.or()?];
                while self.is_punct(",") {
                    self.pos += 1;
                    parts.push(self.or()?);
                }
                self.expect("}")?;
                let total: u32 = parts.iter().map(|p| self_width(p, &self.widths)).sum();
                if total > 64 {
                    return self.fail("concatenation wider than 64 bits");
                }
                Ok(Expr::Concat(parts, total))
            }
            Tok::Num { value, width } => Ok(Expr::Lit { value, width: width.unwrap_or(32) }),
            Tok::Ident(name) => {
                let sig = self.lookup(&name)?;
                if !self.driven[sig] {
                    return self.fail(format!("'{name}' is read before it is driven"));
                }
                let full = self.widths[sig];
                let (msb, lsb) = self.select(sig)?;
                if lsb == 0 && msb + 1 == full {
                    Ok(Expr::Sig(sig))
                } else {
                    Ok(Expr::Select { sig, msb, lsb })
                }
            }
            Tok::Punct(p) => {
                self.pos -= 1;
                self.fail(format!("unexpected '{p}'"))
            }
        }
    }
}
