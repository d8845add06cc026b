//! Plain-text chain file:
//!
//! ```text
//! dynaperc-chain 1
//! <|E|> <|S|>
//! <R, one row per line>
//! <p_ζ for each ζ, one row per line>
//! <π on one line>
//! ```
//!
//! Blank lines and lines starting with `#` are ignored.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::kernel::Kernel;

use super::FiniteEnvChain;

pub const CHAIN_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "dynaperc-chain";

pub fn write_chain<W: Write>(chain: &FiniteEnvChain, mut out: W) -> Result<()> {
    writeln!(out, "{MAGIC} {CHAIN_FORMAT_VERSION}")?;
    writeln!(out, "{} {}", chain.num_envs(), chain.size())?;
    let row = |out: &mut W, vals: &[f64]| -> Result<()> {
        let text: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", text.join(" "))?;
        Ok(())
    };
    for z in 0..chain.num_envs() {
        row(&mut out, chain.r().row(z))?;
    }
    for k in chain.kernels() {
        for x in 0..k.size() {
            row(&mut out, k.row(x))?;
        }
    }
    row(&mut out, chain.pi())
}

pub fn read_chain<R: BufRead>(input: R) -> Result<FiniteEnvChain> {
    let mut lines = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            lines.push((i + 1, t.to_string()));
        }
    }
    let mut it = lines.into_iter();
    let parse_err = |line: usize, msg: String| Error::Parse { line, msg };
    let (l, header) = it.next().ok_or_else(|| parse_err(1, "empty chain file".into()))?;
    match header.split_whitespace().collect::<Vec<_>>()[..] {
        [MAGIC, v] if v == CHAIN_FORMAT_VERSION.to_string() => {}
        _ => return Err(parse_err(l, format!("expected `{MAGIC} {CHAIN_FORMAT_VERSION}`"))),
    }
    let mut numbers = |want: usize| -> Result<Vec<f64>> {
        let (l, text) = it.next().ok_or_else(|| parse_err(0, "unexpected end of chain file".into()))?;
        let vals: Vec<f64> =
            text.split_whitespace().map(|t| t.parse::<f64>().map_err(|e| parse_err(l, format!("{t}: {e}")))).collect::<Result<_>>()?;
        if vals.len() != want {
            return Err(parse_err(l, format!("expected {want} numbers, found {}", vals.len())));
        }
        Ok(vals)
    };
    let dims = numbers(2)?;
    if dims.iter().any(|d| d.fract() != 0.0 || *d < 1.0) {
        return Err(parse_err(0, "dimensions must be positive integers".into()));
    }
    let (e, m) = (dims[0] as usize, dims[1] as usize);
    let mut rows = |count: usize, width: usize| -> Result<Vec<Vec<f64>>> { (0..count).map(|_| numbers(width)).collect() };
    let r = Kernel::from_rows(&rows(e, e)?)?;
    let kernels = (0..e).map(|_| Kernel::from_rows(&rows(m, m)?)).collect::<Result<Vec<_>>>()?;
    let pi = rows(1, m)?.remove(0);
    FiniteEnvChain::new(r, kernels, pi)
}
