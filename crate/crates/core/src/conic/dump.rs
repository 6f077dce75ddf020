//! Line-oriented sparse text form of a [`ConeProgram`].
//!
//! ```text
//! conic-program 1
//! variables <n>
//! slice <name> <start> <len>            (one per named slice)
//! objective <constant> <i>:<c_i> ...    (nonzero coefficients only)
//! block <name> <zero|nonneg|soc|psd> <order> <rows>
//! row <constant> <i>:<a_i> ...          (one per row of the block)
//! ```
//!
//! A row with constant `c` and terms `a` means `a·x + c` lies in the cone.
//! `order` is the matrix order for `psd` blocks and `0` otherwise. Floats
//! use Rust's shortest round-trip formatting, so dump/parse is lossless.

use std::fmt::Write;

use super::{AffineExpr, Cone, ConeProgram, ConstraintBlock, Layout, VarSlice};
use crate::error::{Error, Result};

fn write_terms(out: &mut String, terms: &[(usize, f64)]) {
    for (i, a) in terms {
        let _ = write!(out, " {i}:{a}");
    }
}

pub fn dump_program(p: &ConeProgram) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "conic-program 1");
    let _ = writeln!(out, "variables {}", p.layout.len());
    for s in &p.layout.slices {
        let _ = writeln!(out, "slice {} {} {}", s.name, s.start, s.len);
    }
    let obj: Vec<(usize, f64)> =
        p.objective.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(i, c)| (i, *c)).collect();
    let _ = write!(out, "objective {}", p.objective_constant);
    write_terms(&mut out, &obj);
    out.push('\n');
    for b in &p.blocks {
        let order = if let Cone::Psd(d) = b.cone { d } else { 0 };
        let _ = writeln!(out, "block {} {} {} {}", b.name, b.cone.name(), order, b.rows.len());
        for r in &b.rows {
            let _ = write!(out, "row {}", r.constant);
            write_terms(&mut out, &r.terms);
            out.push('\n');
        }
    }
    out
}

fn perr(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("line {}: {msg}", line + 1))
}

fn num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    tok.ok_or_else(|| perr(line, format!("missing {what}")))?
        .parse()
        .map_err(|_| perr(line, format!("bad {what}")))
}

fn parse_terms<'a>(toks: impl Iterator<Item = &'a str>, line: usize) -> Result<Vec<(usize, f64)>> {
    toks.map(|t| {
        let (i, a) = t.split_once(':').ok_or_else(|| perr(line, format!("bad term {t}")))?;
        Ok((num(Some(i), line, "index")?, num(Some(a), line, "coefficient")?))
    })
    .collect()
}

pub fn parse_program(text: &str) -> Result<ConeProgram> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let mut next = |what: &str| lines.next().ok_or_else(|| Error::Parse(format!("unexpected end, expected {what}")));

    let (ln, header) = next("header")?;
    if header.trim() != "conic-program 1" {
        return Err(perr(ln, "not a conic-program v1 file"));
    }
    let (ln, vars) = next("variables")?;
    let mut toks = vars.split_whitespace();
    if toks.next() != Some("variables") {
        return Err(perr(ln, "expected variables"));
    }
    let n: usize = num(toks.next(), ln, "variable count")?;

    let mut layout = Layout::default();
    let mut objective = vec![0.0; n];
    let mut objective_constant = 0.0;
    let mut blocks: Vec<ConstraintBlock> = Vec::new();
    let mut pending = 0usize;

    for (ln, line) in lines {
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("slice") => {
                let name = toks.next().ok_or_else(|| perr(ln, "missing slice name"))?.to_string();
                let start = num(toks.next(), ln, "slice start")?;
                let len = num(toks.next(), ln, "slice length")?;
                if start != layout.len() {
                    return Err(perr(ln, "slices must be contiguous"));
                }
                layout.slices.push(VarSlice { name, start, len });
            }
            Some("objective") => {
                objective_constant = num(toks.next(), ln, "objective constant")?;
                for (i, c) in parse_terms(toks, ln)? {
                    *objective.get_mut(i).ok_or_else(|| perr(ln, "objective index out of range"))? = c;
                }
            }
            Some("block") => {
                if pending != 0 {
                    return Err(perr(ln, "previous block is missing rows"));
                }
                let name = toks.next().ok_or_else(|| perr(ln, "missing block name"))?.to_string();
                let kind = toks.next().ok_or_else(|| perr(ln, "missing cone"))?;
                let order: usize = num(toks.next(), ln, "order")?;
                pending = num(toks.next(), ln, "row count")?;
                let cone = match kind {
                    "zero" => Cone::Zero,
                    "nonneg" => Cone::Nonneg,
                    "soc" => Cone::Soc,
                    "psd" => Cone::Psd(order),
                    other => return Err(perr(ln, format!("unknown cone {other}"))),
                };
                blocks.push(ConstraintBlock { name, cone, rows: Vec::with_capacity(pending) });
            }
            Some("row") => {
                let block = blocks.last_mut().filter(|_| pending > 0).ok_or_else(|| perr(ln, "row outside a block"))?;
                let constant = num(toks.next(), ln, "row constant")?;
                block.rows.push(AffineExpr { terms: parse_terms(toks, ln)?, constant });
                pending -= 1;
            }
            Some(other) => return Err(perr(ln, format!("unknown record {other}"))),
            None => {}
        }
    }
    if pending != 0 {
        return Err(Error::Parse("last block is missing rows".into()));
    }
    if layout.len() != n {
        return Err(Error::Parse(format!("slices cover {} of {n} variables", layout.len())));
    }
    let p = ConeProgram { layout, objective, objective_constant, blocks };
    p.validate().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::psd_rows;

    #[test]
    fn round_trip() {
        let mut layout = Layout::default();
        layout.add("x", 2);
        layout.add("t", 1);
        let mut p = ConeProgram::new(layout);
        p.objective = vec![0.0, 1.5, -2.0 / 3.0];
        p.objective_constant = 0.1;
        let mut r = AffineExpr::var(0);
        r.add_term(2, 1e-17);
        r.constant = -3.0;
        p.push("lin", Cone::Nonneg, vec![r]);
        p.push("eq", Cone::Zero, vec![AffineExpr::term(1, std::f64::consts::PI)]);
        p.push("cone", Cone::Soc, vec![AffineExpr::var(2), AffineExpr::var(0), AffineExpr::var(1)]);
        p.push("psd", Cone::Psd(2), psd_rows(2, |i, j| AffineExpr::term(i + j, 1.0)));
        let text = dump_program(&p);
        assert_eq!(parse_program(&text).unwrap(), p);
    }

    #[test]
    fn rejects_truncated_block() {
        let text = "conic-program 1\nvariables 1\nslice x 0 1\nobjective 0\nblock a nonneg 0 2\nrow 1 0:1\n";
        assert!(parse_program(text).is_err());
    }
}
