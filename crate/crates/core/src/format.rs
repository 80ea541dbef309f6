//! Number formatting shared by every text artifact.
//!
//! Reals are written in scientific notation with 17 significant digits,
//! which round-trips any `f64` exactly through `str::parse`.

use crate::error::{Error, Result};

pub fn real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn parse_real(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::Parse(format!("bad real `{s}`: {e}")))
}

pub fn parse_usize(s: &str) -> Result<usize> {
    s.trim()
        .parse::<usize>()
        .map_err(|e| Error::Parse(format!("bad integer `{s}`: {e}")))
}

pub fn join_reals(values: &[f64]) -> String {
    values.iter().map(|&v| real(v)).collect::<Vec<_>>().join(",")
}

pub fn parse_reals(line: &str) -> Result<Vec<f64>> {
    line.split(',').map(parse_real).collect()
}
