//! Text checkpoint format.
//!
//! ```text
//! collapse-lab checkpoint v1
//! backbone <fm|crossnet>
//! head <none|p_dnn|s_dnn|linear_p_dnn|linear_s_dnn>
//! embedding_dim <k>
//! hidden <w1,w2,...>          (empty list for head none)
//! cross_depth <L>
//! tensors <count>
//! tensor <name> <rows> <cols>
//! <row 0: cols space-separated values>
//! ...
//! end
//! ```
//!
//! Tensors follow [`ModelParams::tensor_names`] order. Values are written as
//! `f64` in shortest round-trip form, so a save/load cycle is lossless for
//! both `f32` and `f64` parameters.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelParams, ModelSpec};
use crate::scalar::Scalar;

const MAGIC: &str = "collapse-lab checkpoint v1";

pub fn write_checkpoint<T: Scalar, W: Write>(
    mut w: W,
    spec: &ModelSpec,
    params: &ModelParams<T>,
) -> std::io::Result<()> {
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "backbone {}", spec.backbone)?;
    writeln!(w, "head {}", spec.head)?;
    writeln!(w, "embedding_dim {}", spec.embedding_dim)?;
    let hidden: Vec<String> = if spec.head.has_mlp() {
        spec.hidden.iter().map(usize::to_string).collect()
    } else {
        Vec::new()
    };
    writeln!(w, "hidden {}", hidden.join(","))?;
    writeln!(w, "cross_depth {}", spec.cross_depth)?;
    let names = params.tensor_names();
    let tensors = params.tensors();
    writeln!(w, "tensors {}", tensors.len())?;
    for (name, t) in names.iter().zip(&tensors) {
        writeln!(w, "tensor {name} {} {}", t.rows, t.cols)?;
        for row in t.data.chunks(t.cols) {
            let line: Vec<String> = row.iter().map(|x| x.as_f64().to_string()).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
    }
    writeln!(w, "end")?;
    w.flush()
}

pub fn save_checkpoint<T: Scalar>(path: &Path, spec: &ModelSpec, params: &ModelParams<T>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(BufWriter::new(file), spec, params).map_err(|e| Error::io(path, e))
}

/// Parses a checkpoint and verifies it was written for `spec`.
pub fn read_checkpoint<T: Scalar, R: BufRead>(r: R, spec: &ModelSpec) -> Result<ModelParams<T>> {
    let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((n, Ok(l))) => Ok((n, l)),
            Some((n, Err(e))) => Err(Error::Schema(format!("line {n}: {e}"))),
            None => Err(Error::Schema(format!("unexpected end of checkpoint, expected {what}"))),
        }
    };
    let bad = |n: usize, msg: String| Error::Schema(format!("checkpoint line {n}: {msg}"));

    let (n, magic) = next("header")?;
    if magic != MAGIC {
        return Err(bad(n, format!("not a checkpoint header: {magic:?}")));
    }
    let mut header = |key: &str| -> Result<String> {
        let (n, line) = next(key)?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v.to_string()),
            None if line == key => Ok(String::new()),
            _ => Err(bad(n, format!("expected `{key} ...`, found {line:?}"))),
        }
    };
    let backbone = header("backbone")?;
    let head = header("head")?;
    let k = header("embedding_dim")?;
    let hidden = header("hidden")?;
    let depth = header("cross_depth")?;
    let count = header("tensors")?;

    let expected_hidden: Vec<String> = if spec.head.has_mlp() {
        spec.hidden.iter().map(usize::to_string).collect()
    } else {
        Vec::new()
    };
    let mismatch = [
        ("backbone", backbone, spec.backbone.to_string()),
        ("head", head, spec.head.to_string()),
        ("embedding_dim", k, spec.embedding_dim.to_string()),
        ("hidden", hidden, expected_hidden.join(",")),
        ("cross_depth", depth, spec.cross_depth.to_string()),
    ]
    .into_iter()
    .find(|(_, found, want)| found != want);
    if let Some((key, found, want)) = mismatch {
        return Err(Error::Schema(format!("checkpoint {key} is {found:?}, model wants {want:?}")));
    }
    let count: usize = count.parse().map_err(|_| Error::Schema(format!("bad tensor count {count:?}")))?;

    let mut tensors: Vec<(String, usize, usize, Vec<f64>)> = Vec::with_capacity(count);
    for _ in 0..count {
        let (n, line) = next("tensor")?;
        let parts: Vec<&str> = line.split(' ').collect();
        let (name, rows, cols) = match parts.as_slice() {
            ["tensor", name, rows, cols] => (
                name.to_string(),
                rows.parse::<usize>().map_err(|_| bad(n, "bad rows".into()))?,
                cols.parse::<usize>().map_err(|_| bad(n, "bad cols".into()))?,
            ),
            _ => return Err(bad(n, format!("expected tensor header, found {line:?}"))),
        };
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (n, line) = next("tensor row")?;
            let before = data.len();
            for tok in line.split(' ').filter(|t| !t.is_empty()) {
                let x: f64 = tok.parse().map_err(|_| bad(n, format!("bad value {tok:?}")))?;
                if !x.is_finite() {
                    return Err(bad(n, format!("non-finite value {tok:?}")));
                }
                data.push(x);
            }
            if data.len() - before != cols {
                return Err(bad(n, format!("expected {cols} values")));
            }
        }
        tensors.push((name, rows, cols, data));
    }
    let (n, end) = next("end")?;
    if end != "end" {
        return Err(bad(n, format!("expected `end`, found {end:?}")));
    }

    let vocab: Vec<usize> = tensors
        .iter()
        .take_while(|(name, ..)| name.starts_with("embedding."))
        .map(|(_, rows, ..)| *rows)
        .collect();
    let mut params = ModelParams::<T>::zeros(spec, &vocab)?;
    let layout: Vec<(String, (usize, usize))> =
        params.tensor_names().into_iter().zip(params.shapes()).collect();
    let found: Vec<(String, (usize, usize))> =
        tensors.iter().map(|(name, r, c, _)| (name.clone(), (*r, *c))).collect();
    if layout != found {
        return Err(Error::Schema(format!(
            "checkpoint tensors {found:?} do not match model layout {layout:?}"
        )));
    }
    for (slot, (_, _, _, data)) in params.tensors_mut().into_iter().zip(&tensors) {
        for (dst, &x) in slot.iter_mut().zip(data) {
            *dst = T::lit(x);
        }
    }
    Ok(params)
}

pub fn load_checkpoint<T: Scalar>(path: &Path, spec: &ModelSpec) -> Result<ModelParams<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file), spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Backbone, Head};

    fn roundtrip(spec: &ModelSpec) {
        let p = ModelParams::<f64>::init(&ModelSpec { init_std: 0.37, ..spec.clone() }, &[4, 2, 3]).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, spec, &p).unwrap();
        let q: ModelParams<f64> = read_checkpoint(&buf[..], spec).unwrap();
        let a: Vec<Vec<f64>> = p.tensors().iter().map(|t| t.data.to_vec()).collect();
        let b: Vec<Vec<f64>> = q.tensors().iter().map(|t| t.data.to_vec()).collect();
        assert_eq!(a, b);
        let mut again = Vec::new();
        write_checkpoint(&mut again, spec, &q).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn every_variant_roundtrips_bitwise() {
        for (b, h) in ModelSpec::variants() {
            roundtrip(&ModelSpec { embedding_dim: 3, hidden: vec![4, 2], ..ModelSpec::new(b, h) });
        }
    }

    #[test]
    fn spec_mismatch_is_schema_error() {
        let spec = ModelSpec::new(Backbone::Fm, Head::PDnn);
        let p = ModelParams::<f64>::init(&spec, &[3, 3]).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &spec, &p).unwrap();
        for other in [
            ModelSpec::new(Backbone::Fm, Head::SDnn),
            ModelSpec { embedding_dim: 4, ..spec.clone() },
            ModelSpec { hidden: vec![64], ..spec.clone() },
        ] {
            let r: Result<ModelParams<f64>> = read_checkpoint(&buf[..], &other);
            assert!(matches!(r, Err(Error::Schema(_))), "{other:?}");
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let spec = ModelSpec::new(Backbone::Fm, Head::None);
        let p = ModelParams::<f64>::init(&spec, &[3, 3]).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &spec, &p).unwrap();
        let cut = &buf[..buf.len() - 10];
        assert!(read_checkpoint::<f64, _>(cut, &spec).is_err());
    }
}
