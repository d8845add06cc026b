//! Versioned text dump of an environment trajectory.
//!
//! ```text
//! dynaperc-env 1
//! d <d> n <n> p <p> mu <mu> horizon <T> init <tag> seed <seed>
//! <initial bit> <flip count> <t_1> <t_2> ...      (one line per edge id)
//! ```
//!
//! Floats are written in Rust's shortest round-trip form, so loading a dump
//! reproduces every flip time bit for bit.

use std::io::{BufRead, Write};

use super::{DynParams, EdgeTrajectory, EnvTrajectory, InitialCondition};
use crate::error::{Error, Result};
use crate::torus::TorusGraph;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "dynaperc-env";

pub fn write_env<W: Write>(env: &EnvTrajectory, mut w: W) -> Result<()> {
    let g = env.graph();
    let p = env.params();
    writeln!(w, "{MAGIC} {FORMAT_VERSION}")?;
    writeln!(w, "d {} n {} p {} mu {} horizon {} init {} seed {}", g.dim(), g.side(), p.p(), p.mu(), p.horizon(), env.init().tag(), env.seed())?;
    for e in env.edges() {
        write!(w, "{} {}", e.initial() as u8, e.flips().len())?;
        for t in e.flips() {
            write!(w, " {t}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn field<T: std::str::FromStr>(tokens: &[&str], key: &str, line: usize) -> Result<T> {
    let pos = tokens.iter().position(|t| *t == key).ok_or_else(|| parse_err(line, format!("missing header field `{key}`")))?;
    tokens
        .get(pos + 1)
        .ok_or_else(|| parse_err(line, format!("header field `{key}` has no value")))?
        .parse()
        .map_err(|_| parse_err(line, format!("bad value for `{key}`")))
}

pub fn read_env<R: BufRead>(r: R) -> Result<EnvTrajectory> {
    let mut lines = r.lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, l)) => Ok((i + 1, l?)),
            None => Err(parse_err(0, format!("unexpected end of input, expected {what}"))),
        }
    };
    let (ln, magic) = next("magic line")?;
    let mut it = magic.split_whitespace();
    if it.next() != Some(MAGIC) {
        return Err(parse_err(ln, "not an environment dump"));
    }
    let version: u32 = it.next().and_then(|v| v.parse().ok()).ok_or_else(|| parse_err(ln, "missing version"))?;
    if version != FORMAT_VERSION {
        return Err(parse_err(ln, format!("unsupported version {version}")));
    }
    let (ln, header) = next("header")?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    let d: usize = field(&tokens, "d", ln)?;
    let n: usize = field(&tokens, "n", ln)?;
    let p: f64 = field(&tokens, "p", ln)?;
    let mu: f64 = field(&tokens, "mu", ln)?;
    let horizon: f64 = field(&tokens, "horizon", ln)?;
    let tag: String = field(&tokens, "init", ln)?;
    let seed: u64 = field(&tokens, "seed", ln)?;
    let graph = TorusGraph::new(d, n)?;
    let params = DynParams::new(p, mu, horizon)?;
    let mut edges = Vec::with_capacity(graph.num_edges());
    for _ in 0..graph.num_edges() {
        let (ln, line) = next("edge line")?;
        let mut it = line.split_whitespace();
        let initial = match it.next() {
            Some("0") => false,
            Some("1") => true,
            _ => return Err(parse_err(ln, "initial state must be 0 or 1")),
        };
        let count: usize = it.next().and_then(|c| c.parse().ok()).ok_or_else(|| parse_err(ln, "missing flip count"))?;
        let flips = it.map(|t| t.parse::<f64>().map_err(|_| parse_err(ln, format!("bad flip time `{t}`")))).collect::<Result<Vec<f64>>>()?;
        if flips.len() != count {
            return Err(parse_err(ln, format!("declared {count} flips, found {}", flips.len())));
        }
        edges.push(EdgeTrajectory::new(initial, flips).map_err(|e| parse_err(ln, e.to_string()))?);
    }
    let init = match tag.as_str() {
        "stationary" => InitialCondition::Stationary,
        "all-closed" => InitialCondition::AllClosed,
        "all-open" => InitialCondition::AllOpen,
        "explicit" => InitialCondition::Explicit(edges.iter().map(EdgeTrajectory::initial).collect()),
        other => return Err(parse_err(2, format!("unknown init tag `{other}`"))),
    };
    EnvTrajectory::from_parts(graph, params, edges, init, seed)
}
