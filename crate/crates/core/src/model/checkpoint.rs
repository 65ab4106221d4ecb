//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "FCELLCKP"
//! version    u32
//! config     u8 variant, u8 softmax_bias, u8 unit, [u8; 3] gate order "ifo",
//!            u8 storage precision (0 = f64, 1 = f32),
//!            u64 vocab_size, word_dim, hidden_dim, context_dim, rank,
//!                encoder_hidden, one_hot_max_classes
//! schema     u32 count, then per variable: str name, u8 kind
//!            kind 0 (categorical): u32 level count, str levels…
//!            kind 1 (numeric):     f64 mean, f64 stddev
//! vocab      u32 count (including reserved ids), then str token, u64 count
//! arrays     u32 count, then per array: str name, u8 dtype (0 = f64, 1 = f32),
//!            u8 rank, u64 extents…, raw element data
//! trailer    4 bytes  "END\0"
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8. Arrays stored as f32 widen
//! exactly to f64 on load.

use std::fs;
use std::path::Path;

use super::config::{BiasMode, ModelConfig, Variant};
use super::params::ModelParams;
use super::{Model, Precision};
use crate::context::{ContextSchema, ContextVariable, VariableKind};
use crate::data::{Unit, Vocabulary, RESERVED};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FCELLCKP";
pub const FORMAT_VERSION: u32 = 1;
const GATE_ORDER: &[u8; 3] = b"ifo";
const TRAILER: &[u8; 4] = b"END\0";

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos as u64,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.fail(format!(
                "truncated: needed {n} bytes, {} left",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        let at = self.pos;
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Format {
            offset: at as u64,
            reason: format!("value {v} does not fit in usize"),
        })
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let at = self.pos;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Format {
            offset: at as u64,
            reason: "invalid UTF-8".into(),
        })
    }
}

fn encode(model: &Model, precision: Precision) -> Vec<u8> {
    let cfg = &model.config;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);

    w.u8(cfg.variant.code());
    w.u8(cfg.softmax_bias.code());
    w.u8(match cfg.unit {
        Unit::Word => 0,
        Unit::Character => 1,
    });
    w.0.extend_from_slice(GATE_ORDER);
    w.u8(match precision {
        Precision::F64 => 0,
        Precision::F32 => 1,
    });
    for v in [
        cfg.vocab_size,
        cfg.word_dim,
        cfg.hidden_dim,
        cfg.context_dim,
        cfg.rank,
        cfg.encoder_hidden,
        cfg.one_hot_max_classes,
    ] {
        w.u64(v as u64);
    }

    w.u32(model.schema.len() as u32);
    for v in model.schema.variables() {
        w.str(&v.name);
        match &v.kind {
            VariableKind::Categorical { levels } => {
                w.u8(0);
                w.u32(levels.len() as u32);
                for l in levels {
                    w.str(l);
                }
            }
            VariableKind::Numeric { mean, stddev } => {
                w.u8(1);
                w.f64(*mean);
                w.f64(*stddev);
            }
        }
    }

    w.u32(model.vocab.len() as u32);
    for (i, t) in model.vocab.tokens().iter().enumerate() {
        w.str(t);
        w.u64(model.vocab.count(i));
    }

    let arrays = model.params.arrays();
    w.u32(arrays.len() as u32);
    for (name, t) in arrays {
        w.str(name);
        w.u8(match precision {
            Precision::F64 => 0,
            Precision::F32 => 1,
        });
        w.u8(t.rank() as u8);
        for &s in t.shape() {
            w.u64(s as u64);
        }
        match precision {
            Precision::F64 => {
                for x in t.data() {
                    w.f64(*x);
                }
            }
            Precision::F32 => {
                for x in t.data() {
                    w.0.extend_from_slice(&(*x as f32).to_le_bytes());
                }
            }
        }
    }
    w.0.extend_from_slice(TRAILER);
    w.0
}

fn decode(buf: &[u8]) -> Result<(Model, Precision)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: "bad magic bytes".into(),
        });
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }

    let variant = Variant::from_code(r.u8()?).ok_or_else(|| r.fail("unknown variant code"))?;
    let softmax_bias =
        BiasMode::from_code(r.u8()?).ok_or_else(|| r.fail("unknown softmax bias code"))?;
    let unit = match r.u8()? {
        0 => Unit::Word,
        1 => Unit::Character,
        _ => return Err(r.fail("unknown unit code")),
    };
    if r.take(3)? != GATE_ORDER {
        return Err(r.fail("unsupported gate order"));
    }
    let precision = match r.u8()? {
        0 => Precision::F64,
        1 => Precision::F32,
        _ => return Err(r.fail("unknown precision code")),
    };
    let config = ModelConfig {
        variant,
        vocab_size: r.usize()?,
        word_dim: r.usize()?,
        hidden_dim: r.usize()?,
        context_dim: r.usize()?,
        rank: r.usize()?,
        softmax_bias,
        unit,
        encoder_hidden: r.usize()?,
        one_hot_max_classes: r.usize()?,
    };

    let n_vars = r.u32()?;
    let mut vars = Vec::new();
    for _ in 0..n_vars {
        let name = r.str()?;
        match r.u8()? {
            0 => {
                let n = r.u32()?;
                let levels = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
                vars.push(ContextVariable::categorical(&name, levels));
            }
            1 => {
                let mean = r.f64()?;
                let stddev = r.f64()?;
                vars.push(ContextVariable::numeric(&name, mean, stddev));
            }
            _ => return Err(r.fail("unknown variable kind")),
        }
    }
    let schema = ContextSchema::new(vars).map_err(|e| r.fail(e.to_string()))?;

    let n_tokens = r.u32()? as usize;
    if n_tokens < RESERVED.len() {
        return Err(r.fail("vocabulary lacks reserved tokens"));
    }
    let mut entries = Vec::with_capacity(n_tokens);
    for i in 0..n_tokens {
        let t = r.str()?;
        let c = r.u64()?;
        if let Some(&want) = RESERVED.get(i) {
            if t != want {
                return Err(r.fail(format!("reserved token {i} is {t:?}")));
            }
        } else {
            entries.push((t, c));
        }
    }
    let vocab = Vocabulary::from_entries(unit, entries).map_err(|e| r.fail(e.to_string()))?;

    let mut params = ModelParams::zeros(&config, &schema);
    let expected = params.arrays().len();
    let n_arrays = r.u32()? as usize;
    if n_arrays != expected {
        return Err(r.fail(format!("{n_arrays} arrays, configuration needs {expected}")));
    }
    for _ in 0..n_arrays {
        let at = r.pos;
        let name = r.str()?;
        let dtype = r.u8()?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let Some(t) = params.array_mut(&name) else {
            return Err(Error::Format {
                offset: at as u64,
                reason: format!("unexpected array {name:?}"),
            });
        };
        if t.shape() != shape.as_slice() {
            return Err(Error::Format {
                offset: at as u64,
                reason: format!("array {name} has shape {shape:?}, expected {:?}", t.shape()),
            });
        }
        let n = t.len();
        match dtype {
            0 => {
                let bytes = r.take(n * 8)?;
                for (x, b) in t.data_mut().iter_mut().zip(bytes.chunks_exact(8)) {
                    *x = f64::from_le_bytes(b.try_into().unwrap());
                }
            }
            1 => {
                let bytes = r.take(n * 4)?;
                for (x, b) in t.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
                    *x = f64::from(f32::from_le_bytes(b.try_into().unwrap()));
                }
            }
            _ => return Err(r.fail(format!("unknown dtype {dtype}"))),
        }
    }
    if r.take(TRAILER.len())? != TRAILER {
        return Err(r.fail("missing trailer"));
    }
    if r.pos != buf.len() {
        return Err(r.fail("trailing bytes after checkpoint"));
    }
    let model = Model::new(config, schema, vocab, params).map_err(|e| Error::Format {
        offset: buf.len() as u64,
        reason: e.to_string(),
    })?;
    Ok((model, precision))
}

/// Serialize `model`. With [`Precision::F32`] every array is rounded to f32.
pub fn save_checkpoint(model: &Model, path: &Path, precision: Precision) -> Result<()> {
    let bytes = encode(model, precision);
    // write-then-rename so a crash never leaves a half-written checkpoint
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Load a checkpoint, widening f32 arrays to f64. Returns the stored precision.
pub fn load_checkpoint(path: &Path) -> Result<(Model, Precision)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
