//! Binary checkpoint: a small metadata block followed by named tensors.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   b"SOHKLSTM"
//! version      u32       1
//! meta_len     u32       length of the metadata block in bytes
//! meta         UTF-8     `key=value\n` lines: kind, hidden_size, input_size,
//!                        window, degree, inner_basis, outer_basis, channels,
//!                        nominal_capacity
//! n_tensors    u32
//! n_tensors × {
//!   name_len   u16
//!   name       UTF-8
//!   ndim       u8
//!   dims       ndim × u64
//!   data       prod(dims) × f64 (IEEE-754 binary64, row-major)
//! }
//! ```
//!
//! Trainable tensors appear in [`Parameters::tensors`] order. Fitted scalers
//! are stored as `scaler.feature_min`, `scaler.feature_max`,
//! `scaler.target_min` and `scaler.target_max`; they are absent for models
//! saved before fitting.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::data::MinMaxScaler;
use crate::model::{ModelSpec, SohModel};
use crate::recurrent::{KanShape, Parameters};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SOHKLSTM";
pub const VERSION: u32 = 1;

const SCALER_TENSORS: [&str; 4] = [
    "scaler.feature_min",
    "scaler.feature_max",
    "scaler.target_min",
    "scaler.target_max",
];

struct RawTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn put_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn meta_block(m: &SohModel) -> String {
    let s = &m.spec;
    format!(
        "kind={}\nhidden_size={}\ninput_size={}\nwindow={}\ndegree={}\ninner_basis={}\nouter_basis={}\nchannels={}\nnominal_capacity={}\n",
        s.kind,
        s.hidden_size,
        s.input_size,
        s.window,
        s.kan.degree,
        s.kan.inner_basis,
        s.kan.outer_basis,
        s.kan.channels,
        m.nominal_capacity
    )
}

pub fn to_bytes(m: &SohModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let meta = meta_block(m);
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());

    let tensors = m.params.tensors();
    let scalers = match (&m.feature_scaler, &m.target_scaler) {
        (Some(f), Some(t)) => vec![f.min(), f.max(), t.min(), t.max()],
        _ => vec![],
    };
    out.extend_from_slice(&((tensors.len() + scalers.len()) as u32).to_le_bytes());
    for t in &tensors {
        put_tensor(&mut out, t.name, &t.shape, t.data);
    }
    for (name, data) in SCALER_TENSORS.iter().zip(scalers) {
        put_tensor(&mut out, name, &[data.len()], data);
    }
    out
}

pub fn save(m: &SohModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(m))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::MalformedCheckpoint(format!("truncated while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

fn parse_meta(text: &str) -> Result<(ModelSpec, f64)> {
    let map: HashMap<&str, &str> = text
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split_once('=')
                .ok_or_else(|| Error::MalformedCheckpoint(format!("bad metadata line `{l}`")))
        })
        .collect::<Result<_>>()?;
    let get = |k: &str| -> Result<&str> {
        map.get(k)
            .copied()
            .ok_or_else(|| Error::MalformedCheckpoint(format!("metadata key `{k}` missing")))
    };
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::MalformedCheckpoint(format!("metadata key `{k}` is not an integer")))
    };
    let spec = ModelSpec {
        kind: get("kind")?.parse()?,
        hidden_size: num("hidden_size")?,
        input_size: num("input_size")?,
        window: num("window")?,
        kan: KanShape {
            degree: num("degree")?,
            inner_basis: num("inner_basis")?,
            outer_basis: num("outer_basis")?,
            channels: num("channels")?,
        },
    };
    let nominal = get("nominal_capacity")?
        .parse()
        .map_err(|_| Error::MalformedCheckpoint("nominal_capacity is not a number".into()))?;
    Ok((spec, nominal))
}

fn read_tensors(r: &mut Reader<'_>) -> Result<Vec<(String, RawTensor)>> {
    let count = r.u32("tensor count")?;
    let mut out = Vec::with_capacity(count as usize);
    for k in 0..count {
        let name_len = r.u16("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::MalformedCheckpoint(format!("tensor #{k} name is not UTF-8")))?
            .to_string();
        let err = |msg: &str| Error::Checkpoint {
            tensor: name.clone(),
            msg: msg.to_string(),
        };
        let ndim = r.u8("ndim").map_err(|_| err("truncated ndim"))? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64("dim").map_err(|_| err("truncated shape"))? as usize);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| err("shape overflows"))?;
        let bytes = r
            .take(len.checked_mul(8).ok_or_else(|| err("shape overflows"))?, "data")
            .map_err(|_| err("truncated data"))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, RawTensor { shape, data }));
    }
    Ok(out)
}

/// Load a checkpoint whose architecture is taken from its own metadata.
pub fn load(path: impl AsRef<Path>) -> Result<SohModel> {
    let bytes = fs::read(path)?;
    from_bytes(&bytes, None)
}

/// Load a checkpoint that must match `expected`; any difference is reported
/// against the first tensor whose shape disagrees.
pub fn load_expecting(path: impl AsRef<Path>, expected: &ModelSpec) -> Result<SohModel> {
    let bytes = fs::read(path)?;
    from_bytes(&bytes, Some(expected))
}

pub fn from_bytes(bytes: &[u8], expected: Option<&ModelSpec>) -> Result<SohModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::MalformedCheckpoint("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::MalformedCheckpoint(format!("unsupported version {version}")));
    }
    let meta_len = r.u32("metadata length")? as usize;
    let meta = std::str::from_utf8(r.take(meta_len, "metadata")?)
        .map_err(|_| Error::MalformedCheckpoint("metadata is not UTF-8".into()))?;
    let (stored_spec, nominal) = parse_meta(meta)?;
    let mut tensors: HashMap<String, RawTensor> = read_tensors(&mut r)?.into_iter().collect();
    if r.pos != bytes.len() {
        return Err(Error::MalformedCheckpoint("trailing bytes after last tensor".into()));
    }

    let spec = expected.copied().unwrap_or(stored_spec);
    if spec.kind != stored_spec.kind {
        return Err(Error::Checkpoint {
            tensor: "kind".into(),
            msg: format!("checkpoint holds a {} model, {} expected", stored_spec.kind, spec.kind),
        });
    }
    let mut model = SohModel::zeros(spec)?;
    model.nominal_capacity = nominal;
    let shapes: Vec<Vec<usize>> = model.params.tensors().into_iter().map(|t| t.shape).collect();
    for ((name, dst), shape) in model.params.tensors_mut().into_iter().zip(&shapes) {
        let t = tensors.remove(name).ok_or_else(|| Error::Checkpoint {
            tensor: name.to_string(),
            msg: "missing".into(),
        })?;
        if &t.shape != shape {
            return Err(Error::Checkpoint {
                tensor: name.to_string(),
                msg: format!("shape {:?} in checkpoint, {:?} expected by the configured model", t.shape, shape),
            });
        }
        dst.copy_from_slice(&t.data);
    }

    let scalers: Vec<Option<RawTensor>> = SCALER_TENSORS.iter().map(|n| tensors.remove(*n)).collect();
    match scalers.as_slice() {
        [None, None, None, None] => {}
        [Some(fmin), Some(fmax), Some(tmin), Some(tmax)] => {
            let feat = MinMaxScaler::from_bounds(fmin.data.clone(), fmax.data.clone()).map_err(|e| Error::Checkpoint {
                tensor: "scaler.feature_min".into(),
                msg: e.to_string(),
            })?;
            let targ = MinMaxScaler::from_bounds(tmin.data.clone(), tmax.data.clone()).map_err(|e| Error::Checkpoint {
                tensor: "scaler.target_min".into(),
                msg: e.to_string(),
            })?;
            if feat.width() != spec.input_size {
                return Err(Error::Checkpoint {
                    tensor: "scaler.feature_min".into(),
                    msg: format!("{} features, {} expected", feat.width(), spec.input_size),
                });
            }
            model.feature_scaler = Some(feat);
            model.target_scaler = Some(targ);
        }
        _ => {
            let missing = SCALER_TENSORS
                .iter()
                .zip(&scalers)
                .find(|(_, s)| s.is_none())
                .map(|(n, _)| *n)
                .unwrap_or("scaler");
            return Err(Error::Checkpoint {
                tensor: missing.into(),
                msg: "missing".into(),
            });
        }
    }
    if let Some(name) = tensors.keys().min() {
        return Err(Error::Checkpoint {
            tensor: name.clone(),
            msg: "not part of the configured model".into(),
        });
    }
    if expected.is_some() && stored_spec != spec {
        return Err(Error::Checkpoint {
            tensor: "metadata".into(),
            msg: format!("checkpoint architecture {stored_spec:?} differs from configured {spec:?}"),
        });
    }
    Ok(model)
}
