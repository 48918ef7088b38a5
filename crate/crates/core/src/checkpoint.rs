//! Self-describing model file: config, named parameter blobs and the
//! entropy-coder tables, protected by a trailing CRC-32.
//!
//! Layout (little-endian): `"CQCK"`, version `u16`, config TOML (`u32`
//! length + UTF-8), parameter count `u32`, then per parameter its name
//! (`u16` length + UTF-8), rank `u8`, dims (`u32` each) and `f32` data;
//! a table flag `u8` and, if set, the table count `u8` followed by
//! (alphabet `u32`, entry count `u32`, entries `(u32 symbol, u8 length)`)
//! per table, LSP table first; finally the CRC-32 of everything before it.

use std::path::Path;

use thiserror::Error;

use crate::autodiff::{ParamStore, Tensor};
use crate::codec::{short_hash, Codec, CodecError};
use crate::config::{Config, ConfigError};
use crate::entropy::{CodeTables, EntropyError, HuffmanTable};

const MAGIC: &[u8; 4] = b"CQCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a CQ checkpoint")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u16),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Table(#[from] EntropyError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

fn corrupt(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Corrupt(msg.into())
}

/// A loaded model together with the hash of the file it came from.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub codec: Codec,
    pub hash: u64,
}

pub fn to_bytes(codec: &Codec) -> Result<Vec<u8>, CheckpointError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let toml = codec.config.to_toml()?;
    out.extend_from_slice(&(toml.len() as u32).to_le_bytes());
    out.extend_from_slice(toml.as_bytes());

    let p = &codec.params;
    out.extend_from_slice(&(p.len() as u32).to_le_bytes());
    for id in p.ids() {
        let name = p.name(id).as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        let t = p.get(id);
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }

    match &codec.tables {
        None => out.push(0),
        Some(t) => {
            out.push(1);
            out.push((1 + t.residual.len()) as u8);
            for table in std::iter::once(&t.lsp).chain(&t.residual) {
                out.extend_from_slice(&table.alphabet().to_le_bytes());
                out.extend_from_slice(&(table.entries().len() as u32).to_le_bytes());
                for &(sym, len) in table.entries() {
                    out.extend_from_slice(&sym.to_le_bytes());
                    out.push(len);
                }
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| corrupt("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self, n: usize) -> Result<String, CheckpointError> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("invalid UTF-8"))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::Magic);
    }
    if bytes.len() < 10 {
        return Err(corrupt("truncated"));
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().expect("4 bytes")) {
        return Err(corrupt("checksum mismatch (truncated or damaged file)"));
    }
    let mut c = Cursor { bytes: body, pos: 4 };
    let version = c.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let n = c.u32()? as usize;
    let config = Config::from_toml(&c.string(n)?)?;

    let mut params = ParamStore::new();
    for _ in 0..c.u32()? {
        let n = c.u16()? as usize;
        let name = c.string(n)?;
        let rank = c.u8()? as usize;
        let shape = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| corrupt("shape overflow"))?;
        let raw = c.take(count.checked_mul(4).ok_or_else(|| corrupt("shape overflow"))?)?;
        let data = raw.chunks_exact(4).map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes")))).collect();
        let t = Tensor::new(shape, data).map_err(|e| corrupt(e.to_string()))?;
        if params.find(&name).is_some() {
            return Err(corrupt(format!("duplicate parameter {name}")));
        }
        params.insert(name, t);
    }

    let tables = match c.u8()? {
        0 => None,
        1 => {
            let mut list = Vec::new();
            for _ in 0..c.u8()? {
                let alphabet = c.u32()?;
                let n = c.u32()? as usize;
                if n > c.bytes.len() {
                    return Err(corrupt("table size"));
                }
                let entries = (0..n).map(|_| Ok((c.u32()?, c.u8()?))).collect::<Result<Vec<_>, CheckpointError>>()?;
                list.push(HuffmanTable::from_lengths(alphabet, entries)?);
            }
            if list.is_empty() {
                return Err(corrupt("empty table list"));
            }
            let lsp = list.remove(0);
            Some(CodeTables { lsp, residual: list })
        }
        f => return Err(corrupt(format!("table flag {f}"))),
    };
    if c.pos != body.len() {
        return Err(corrupt("trailing bytes"));
    }
    let codec = Codec::from_parts(config, params, tables)?;
    Ok(Checkpoint { codec, hash: short_hash(bytes) })
}

/// Writes the model; returns the checkpoint hash embedded in bitstreams.
pub fn save(codec: &Codec, path: &Path) -> Result<u64, CheckpointError> {
    let bytes = to_bytes(codec)?;
    std::fs::write(path, &bytes)?;
    Ok(short_hash(&bytes))
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    from_bytes(&std::fs::read(path)?)
}

/// Per-parameter summary used by `inspect`.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookStats {
    pub name: String,
    pub size: usize,
    pub min: f64,
    pub max: f64,
    pub min_spacing: f64,
    pub max_spacing: f64,
}

pub fn codebook_stats(name: &str, values: &[f64]) -> CodebookStats {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let gaps: Vec<f64> = v.windows(2).map(|w| w[1] - w[0]).collect();
    CodebookStats {
        name: name.to_string(),
        size: v.len(),
        min: v.first().copied().unwrap_or(0.0),
        max: v.last().copied().unwrap_or(0.0),
        min_spacing: gaps.iter().copied().fold(f64::INFINITY, f64::min),
        max_spacing: gaps.iter().copied().fold(0.0, f64::max),
    }
}

/// Human-readable model summary.
pub fn describe(ck: &Checkpoint) -> String {
    use std::fmt::Write;
    let codec = &ck.codec;
    let mut s = String::new();
    let _ = writeln!(s, "checkpoint hash: {:016x}", ck.hash);
    let _ = writeln!(s, "format version: {CHECKPOINT_VERSION}");
    let _ = writeln!(s, "autoencoder parameters: {}", codec.autoencoder_param_count());
    for (i, ae) in codec.autoencoders.iter().enumerate() {
        let _ = writeln!(s, "  ae{i}: {}", ae.param_count(&codec.params));
    }
    let _ = writeln!(s, "total parameters: {}", codec.params.scalar_count());
    let _ = writeln!(s, "parameters:");
    for id in codec.params.ids() {
        let _ = writeln!(s, "  {:<24} {:?}", codec.params.name(id), codec.params.get(id).shape());
    }
    let _ = writeln!(s, "codebooks:");
    let books = std::iter::once(codec.lsp_codebook).chain(codec.residual_codebooks.iter().copied());
    for id in books {
        let st = codebook_stats(codec.params.name(id), codec.params.get(id).data());
        let _ = writeln!(
            s,
            "  {:<24} size {} range [{:.5}, {:.5}] spacing [{:.5}, {:.5}]",
            st.name, st.size, st.min, st.max, st.min_spacing, st.max_spacing
        );
    }
    match &codec.tables {
        None => {
            let _ = writeln!(s, "huffman tables: none");
        }
        Some(t) => {
            let _ = writeln!(s, "huffman tables:");
            for (name, table) in std::iter::once(("lsp".to_string(), &t.lsp))
                .chain(t.residual.iter().enumerate().map(|(i, t)| (format!("ae{i}"), t)))
            {
                let longest = table.entries().iter().map(|e| e.1).max().unwrap_or(0);
                let _ = writeln!(s, "  {name:<6} {} codes, longest {longest} bits", table.entries().len());
            }
        }
    }
    let _ = writeln!(s, "config:");
    if let Ok(text) = codec.config.to_toml() {
        for line in text.lines() {
            let _ = writeln!(s, "  {line}");
        }
    }
    s
}
