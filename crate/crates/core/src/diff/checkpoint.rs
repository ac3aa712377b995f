//! Binary checkpoint container and pretrained-embedding text files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "NLPCFGCK"
//! version  u32      FORMAT_VERSION
//! meta     u32 len, UTF-8 `key=value` lines
//! vocab    u32 count, then per token: u32 len, UTF-8 bytes
//! arrays   u32 count, then per array:
//!            u32 name len, name, u8 dtype (1 = f64), u32 ndim,
//!            u64 per dim, f64 payload
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::grammar::Vocab;

pub const MAGIC: &[u8; 8] = b"NLPCFGCK";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub vocab: Vec<String>,
    pub params: ParamStore,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid UTF-8 in checkpoint".into()))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let meta: String = self.meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        put_str(&mut out, &meta);
        out.extend_from_slice(&(self.vocab.len() as u32).to_le_bytes());
        for t in &self.vocab {
            put_str(&mut out, t);
        }
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            put_str(&mut out, name);
            out.push(DTYPE_F64);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let meta_text = r.string()?;
        let mut meta = BTreeMap::new();
        for line in meta_text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad metadata line {line:?}")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let nvocab = r.u32()? as usize;
        let vocab = (0..nvocab).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
        let narrays = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..narrays {
            let name = r.string()?;
            if r.u8()? != DTYPE_F64 {
                return Err(Error::Format(format!("array {name}: unsupported dtype")));
            }
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let bytes = r.take(n * 8)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.insert(name, Tensor::new(shape, data)?);
        }
        if r.pos != buf.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint { meta, vocab, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Writes via a sibling temp file and rename, so a failed write never leaves a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    let res = (|| -> Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    res
}

/// Reads `token v₁ … v_d` lines into a `[|vocab|, d]` matrix. Rows for
/// tokens absent from the file are drawn from N(0, I). Returns the matrix
/// and how many vocabulary rows were found.
pub fn load_embeddings<R: Rng + ?Sized>(text: &str, path: &str, vocab: &Vocab, dim: usize, rng: &mut R) -> Result<(Tensor, usize)> {
    let mut m = Tensor::randn(&[vocab.len(), dim], 1.0, rng);
    let mut seen = vec![false; vocab.len()];
    for (i, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(tok) = fields.next() else { continue };
        let vals: Vec<f64> = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_string(),
                line: i + 1,
                msg: e.to_string(),
            })?;
        if vals.len() != dim {
            return Err(Error::Parse {
                path: path.to_string(),
                line: i + 1,
                msg: format!("expected {dim} values, got {}", vals.len()),
            });
        }
        if vocab.contains(tok) {
            let id = vocab.id(tok);
            m.data_mut()[id * dim..(id + 1) * dim].copy_from_slice(&vals);
            seen[id] = true;
        }
    }
    Ok((m, seen.iter().filter(|&&s| s).count()))
}
