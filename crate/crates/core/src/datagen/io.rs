//! Line-oriented dataset text format.
//!
//! ```text
//! C D n split
//! <label bits><TAB><x_1>,<x_2>,...,<x_D>
//! ```
//!
//! Label bits are written as a string of `0`/`1` characters, attribute 0
//! first. Reals use 17 significant digits and round-trip exactly.

use std::io::{BufRead, Write};

use super::{Dataset, Sample, Split};
use crate::error::{Error, Result};
use crate::format;

pub fn write_dataset<W: Write>(mut w: W, ds: &Dataset) -> Result<()> {
    writeln!(
        w,
        "{} {} {} {}",
        ds.num_attributes(),
        ds.input_dim(),
        ds.len(),
        ds.split().as_str()
    )?;
    for s in ds.samples() {
        let bits: String = s.labels.iter().map(|&l| if l == 1 { '1' } else { '0' }).collect();
        writeln!(w, "{bits}\t{}", format::join_reals(&s.x))?;
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<Dataset> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty dataset file".into()))??;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 {
        return Err(Error::Parse(format!("bad dataset header `{header}`")));
    }
    let c = format::parse_usize(fields[0])?;
    let d = format::parse_usize(fields[1])?;
    let n = format::parse_usize(fields[2])?;
    let split = Split::parse(fields[3])?;

    let mut samples = Vec::with_capacity(n);
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (bits, xs) = line
            .split_once('\t')
            .ok_or_else(|| Error::Parse(format!("line {}: missing tab", lineno + 2)))?;
        let labels = bits
            .chars()
            .map(|ch| match ch {
                '0' => Ok(0u8),
                '1' => Ok(1u8),
                other => Err(Error::Parse(format!(
                    "line {}: bad label bit `{other}`",
                    lineno + 2
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        let x = format::parse_reals(xs)?;
        if labels.len() != c || x.len() != d {
            return Err(Error::Parse(format!(
                "line {}: expected {c} labels and {d} values",
                lineno + 2
            )));
        }
        samples.push(Sample { x, labels });
    }
    if samples.len() != n {
        return Err(Error::Parse(format!(
            "header announces {n} samples, found {}",
            samples.len()
        )));
    }
    Dataset::new(samples, None, split)
}
