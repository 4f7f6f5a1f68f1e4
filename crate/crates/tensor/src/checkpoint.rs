use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Result, TensorError};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

/// Checkpoint layout: a line-oriented text header naming every parameter and
/// its shape, a `data` terminator, then the values of all parameters in
/// declaration order as little-endian f64.
///
/// ```text
/// tensors v1
/// seed 42
/// count 2
/// param enc0/attn/wq 2 16 16
/// param enc0/attn/bq 1 16
/// data
/// <raw f64 bytes>
/// ```
const MAGIC: &str = "tensors v1";

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "seed {}", store.seed())?;
    writeln!(w, "count {}", store.len())?;
    for (name, t) in store.iter() {
        if name.contains(char::is_whitespace) {
            return Err(TensorError::Invalid(format!(
                "parameter name {name:?} contains whitespace"
            )));
        }
        write!(w, "param {name} {}", t.rank())?;
        for d in t.shape() {
            write!(w, " {d}")?;
        }
        writeln!(w)?;
    }
    writeln!(w, "data")?;
    for (_, t) in store.iter() {
        for v in t.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();

    let next_line = |r: &mut BufReader<File>, line: &mut String| -> Result<String> {
        line.clear();
        if r.read_line(line)? == 0 {
            return Err(TensorError::Parse("unexpected end of header".into()));
        }
        Ok(line.trim_end_matches(['\n', '\r']).to_string())
    };

    if next_line(&mut r, &mut line)? != MAGIC {
        return Err(TensorError::Parse("bad magic line".into()));
    }
    let seed_line = next_line(&mut r, &mut line)?;
    let seed: u64 = seed_line
        .strip_prefix("seed ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| TensorError::Parse(format!("bad seed line {seed_line:?}")))?;
    let count_line = next_line(&mut r, &mut line)?;
    let count: usize = count_line
        .strip_prefix("count ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| TensorError::Parse(format!("bad count line {count_line:?}")))?;

    let mut shapes: Vec<(String, Vec<usize>)> = Vec::with_capacity(count);
    for _ in 0..count {
        let l = next_line(&mut r, &mut line)?;
        let mut parts = l.split_whitespace();
        if parts.next() != Some("param") {
            return Err(TensorError::Parse(format!("expected param line, got {l:?}")));
        }
        let name = parts
            .next()
            .ok_or_else(|| TensorError::Parse("param line missing name".into()))?
            .to_string();
        let rank: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| TensorError::Parse("param line missing rank".into()))?;
        let dims: Vec<usize> = parts.map(|s| s.parse()).collect::<std::result::Result<_, _>>()
            .map_err(|e| TensorError::Parse(format!("bad dim in {l:?}: {e}")))?;
        if dims.len() != rank {
            return Err(TensorError::Parse(format!(
                "rank {rank} but {} dims in {l:?}",
                dims.len()
            )));
        }
        shapes.push((name, dims));
    }
    if next_line(&mut r, &mut line)? != "data" {
        return Err(TensorError::Parse("missing data terminator".into()));
    }

    let mut params = IndexMap::with_capacity(count);
    for (name, shape) in shapes {
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)
            .map_err(|e| TensorError::Parse(format!("short data for {name}: {e}")))?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if params.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(TensorError::Parse(format!("duplicate parameter {name}")));
        }
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(TensorError::Parse("trailing bytes after data".into()));
    }
    Ok(ParamStore::from_parts(seed, params))
}
