//! Binary model container, normalizer sidecar and feature-table CSV.
//!
//! Model layout, all integers `u32` little-endian, floats `f64` LE:
//!
//! ```text
//! magic "SITSRNN1" | version | D | H | K | T_hint
//! K x (name_len | utf-8 name bytes)
//! W_ix W_ih b_i W_fx W_fh b_f W_yx W_yh b_y W_ox W_oh b_o W_s b_s   (row-major)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{FeatureTable, ModelError, ModelParams, SoftmaxParams};
use crate::data::Normalizer;
use crate::lstm::LstmParams;
use crate::numerics::Vector;

pub const MODEL_MAGIC: &[u8; 8] = b"SITSRNN1";
pub const MODEL_VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_model(p: &ModelParams, path: &Path) -> Result<(), ModelError> {
    p.check_shapes()?;
    let dim = |v: usize| {
        u32::try_from(v).map_err(|_| ModelError::Format(format!("dimension {v} exceeds u32")))
    };
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    for v in [
        MODEL_VERSION,
        dim(p.input_dim())?,
        dim(p.hidden_dim())?,
        dim(p.num_classes())?,
        dim(p.timestamps_hint)?,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for name in &p.class_names {
        buf.extend_from_slice(&dim(name.len())?.to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
    }
    for tensor in p.tensors() {
        for v in tensor {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(io_err(path))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], ModelError> {
        let end = self.pos.checked_add(n).ok_or_else(|| {
            ModelError::Format("length overflow".into())
        })?;
        if end > self.bytes.len() {
            return Err(ModelError::Truncated {
                expected: end,
                actual: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Parses a model container; nothing is returned unless the whole file is
/// consistent.
pub fn decode_model(bytes: &[u8]) -> Result<ModelParams, ModelError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8).ok() != Some(&MODEL_MAGIC[..]) {
        return Err(ModelError::Format("bad magic, not a model file".into()));
    }
    let version = cur.u32()?;
    if version != MODEL_VERSION {
        return Err(ModelError::Version(version));
    }
    let d = cur.u32()? as usize;
    let h = cur.u32()? as usize;
    let k = cur.u32()? as usize;
    let t_hint = cur.u32()? as usize;
    if d == 0 || h == 0 || k < 2 {
        return Err(ModelError::Format(format!(
            "invalid dimensions D={d}, H={h}, K={k}"
        )));
    }
    let mut class_names = Vec::with_capacity(k);
    for _ in 0..k {
        let len = cur.u32()? as usize;
        let raw = cur.take(len)?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| ModelError::Format("class name is not utf-8".into()))?;
        class_names.push(name.to_string());
    }
    let mut p = ModelParams {
        lstm: LstmParams::zeros(d, h),
        head: SoftmaxParams::zeros(k, h),
        class_names,
        timestamps_hint: t_hint,
    };
    let floats: usize = p.tensors().iter().map(|t| t.len()).sum();
    let expected = floats
        .checked_mul(8)
        .and_then(|b| b.checked_add(cur.pos))
        .ok_or_else(|| ModelError::Format("payload size overflow".into()))?;
    if bytes.len() < expected {
        return Err(ModelError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(ModelError::Format(format!(
            "payload inconsistent with header: expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    for tensor in p.tensors_mut() {
        for v in tensor.iter_mut() {
            *v = f64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes"));
            if !v.is_finite() {
                return Err(ModelError::Format("non-finite parameter".into()));
            }
        }
    }
    Ok(p)
}

pub fn load_model(path: &Path) -> Result<ModelParams, ModelError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_model(&bytes)
}

/// Text sidecar holding the per-(t, f) normalization statistics.
pub fn save_normalizer(n: &Normalizer, path: &Path) -> Result<(), ModelError> {
    let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
    let text = format!(
        "version=1\nT={}\nD={}\nmean={}\nstd={}\n",
        n.num_timestamps,
        n.num_features,
        join(&n.mean),
        join(&n.std)
    );
    fs::write(path, text).map_err(io_err(path))
}

pub fn load_normalizer(path: &Path) -> Result<Normalizer, ModelError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |m: &str| ModelError::Format(format!("normalizer {}: {m}", path.display()));
    let mut kv = std::collections::HashMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| bad("expected key=value"))?;
        kv.insert(k.trim(), v.trim());
    }
    if kv.get("version") != Some(&"1") {
        return Err(bad("unsupported version"));
    }
    let int = |k: &str| -> Result<usize, ModelError> {
        kv.get(k)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(&format!("missing {k}")))
    };
    let floats = |k: &str| -> Result<Vec<f64>, ModelError> {
        kv.get(k)
            .ok_or_else(|| bad(&format!("missing {k}")))?
            .split(',')
            .map(|s| s.parse::<f64>().map_err(|_| bad(&format!("bad number in {k}"))))
            .collect()
    };
    let (t, d) = (int("T")?, int("D")?);
    let (mean, std) = (floats("mean")?, floats("std")?);
    if mean.len() != t * d || std.len() != t * d {
        return Err(bad("statistics do not match T x D"));
    }
    Ok(Normalizer {
        num_timestamps: t,
        num_features: d,
        mean,
        std,
    })
}

/// CSV with header `id,label,f0..f(H-1)`; labels written as class names.
pub fn write_feature_table(table: &FeatureTable, path: &Path) -> Result<(), ModelError> {
    let mut buf = Vec::new();
    write!(buf, "id,label").expect("in-memory write");
    for j in 0..table.dim() {
        write!(buf, ",f{j}").expect("in-memory write");
    }
    buf.push(b'\n');
    for ((id, &label), row) in table.ids.iter().zip(&table.labels).zip(&table.rows) {
        write!(buf, "{id},{}", table.class_names[label]).expect("in-memory write");
        for v in row.iter() {
            write!(buf, ",{v}").expect("in-memory write");
        }
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(io_err(path))
}

pub fn load_feature_table(path: &Path, class_names: &[String]) -> Result<FeatureTable, ModelError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let bad = |m: String| ModelError::Format(format!("feature table {}: {m}", path.display()));
    let width = reader
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .len()
        .checked_sub(2)
        .filter(|&w| w > 0)
        .ok_or_else(|| bad("header must be id,label,f0..".into()))?;
    let mut table = FeatureTable {
        ids: Vec::new(),
        labels: Vec::new(),
        rows: Vec::new(),
        class_names: class_names.to_vec(),
    };
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != width + 2 {
            return Err(bad(format!("row {} has {} fields", i + 1, rec.len())));
        }
        let label = class_names
            .iter()
            .position(|c| c == &rec[1])
            .ok_or_else(|| bad(format!("row {}: unknown label {:?}", i + 1, &rec[1])))?;
        let values = rec
            .iter()
            .skip(2)
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad(format!("row {}: non-numeric value", i + 1)))?;
        table.ids.push(rec[0].to_string());
        table.labels.push(label);
        table
            .rows
            .push(Vector::new(values).map_err(|e| bad(format!("row {}: {e}", i + 1)))?);
    }
    Ok(table)
}
