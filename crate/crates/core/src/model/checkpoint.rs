//! Text checkpoint: a small manifest followed by one line per tensor.
//!
//! ```text
//! checkpoint 1
//! dims <D> <C> <K> <H> <H_c>
//! seed <u64>
//! step <u64>
//! <name> <shape as AxB><TAB><comma-separated values>
//! ```

use std::io::{BufRead, Write};

use super::{Dims, ModelParams};
use crate::error::{Error, Result};
use crate::format;
use crate::numcore::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub step: u64,
}

pub fn write_checkpoint<W: Write>(mut w: W, params: &ModelParams, meta: CheckpointMeta) -> Result<()> {
    let d = params.dims();
    writeln!(w, "checkpoint 1")?;
    writeln!(
        w,
        "dims {} {} {} {} {}",
        d.input, d.attributes, d.hybrid, d.hidden, d.classifier_hidden
    )?;
    writeln!(w, "seed {}", meta.seed)?;
    writeln!(w, "step {}", meta.step)?;
    for (name, t) in params.tensor_names().iter().zip(params.tensors()) {
        let shape: Vec<String> = t.shape().iter().map(|s| s.to_string()).collect();
        writeln!(w, "{name} {}\t{}", shape.join("x"), format::join_reals(t.data()))?;
    }
    Ok(())
}

fn field<'a>(line: Option<&'a str>, key: &str) -> Result<Vec<&'a str>> {
    let line = line.ok_or_else(|| Error::Parse(format!("checkpoint ends before `{key}`")))?;
    let mut it = line.split_whitespace();
    if it.next() != Some(key) {
        return Err(Error::Parse(format!("expected `{key}` line, got `{line}`")));
    }
    Ok(it.collect())
}

pub fn read_checkpoint<R: BufRead>(r: R) -> Result<(ModelParams, CheckpointMeta)> {
    let lines: Vec<String> = r.lines().collect::<std::io::Result<_>>()?;
    let mut it = lines.iter().map(String::as_str).filter(|l| !l.is_empty());
    if field(it.next(), "checkpoint")? != ["1"] {
        return Err(Error::Parse("unsupported checkpoint version".into()));
    }
    let dims = field(it.next(), "dims")?;
    if dims.len() != 5 {
        return Err(Error::Parse("dims line needs 5 values".into()));
    }
    let dv = dims
        .iter()
        .map(|s| format::parse_usize(s))
        .collect::<Result<Vec<_>>>()?;
    let dims = Dims {
        input: dv[0],
        attributes: dv[1],
        hybrid: dv[2],
        hidden: dv[3],
        classifier_hidden: dv[4],
    };
    let parse_u64 = |v: Vec<&str>, key: &str| -> Result<u64> {
        match v.as_slice() {
            [s] => s
                .parse::<u64>()
                .map_err(|e| Error::Parse(format!("bad {key} `{s}`: {e}"))),
            _ => Err(Error::Parse(format!("`{key}` needs one value"))),
        }
    };
    let seed = parse_u64(field(it.next(), "seed")?, "seed")?;
    let step = parse_u64(field(it.next(), "step")?, "step")?;

    let expected = ModelParams::zeros(dims)?.tensor_names();
    let mut tensors = Vec::with_capacity(expected.len());
    for name in &expected {
        let line = it
            .next()
            .ok_or_else(|| Error::Parse(format!("checkpoint is missing `{name}`")))?;
        let (head, values) = line
            .split_once('\t')
            .ok_or_else(|| Error::Parse(format!("tensor line for `{name}` has no tab")))?;
        let (got, shape) = head
            .split_once(' ')
            .ok_or_else(|| Error::Parse(format!("tensor header `{head}` has no shape")))?;
        if got != name {
            return Err(Error::Parse(format!("expected tensor `{name}`, found `{got}`")));
        }
        let shape = shape
            .split('x')
            .map(format::parse_usize)
            .collect::<Result<Vec<_>>>()?;
        tensors.push(Tensor::new(shape, format::parse_reals(values)?)?);
    }
    if let Some(extra) = it.next() {
        return Err(Error::Parse(format!("trailing checkpoint content `{extra}`")));
    }
    Ok((ModelParams::from_tensors(dims, tensors)?, CheckpointMeta { seed, step }))
}
