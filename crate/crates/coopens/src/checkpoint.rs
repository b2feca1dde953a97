//! Ensemble checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "FSEN" | u16 version | u32 K | u32 len | descriptor (len bytes UTF-8)
//! then for each member, for each of its tensors:
//!   u8 rank | rank x u32 dims | f64 payload
//! ```
//!
//! The descriptor is the architecture descriptor followed by
//! `|seeds=s1,s2,...`, one seed per member.

use std::fs;
use std::path::Path;

use coopens_core::models::{Architecture, BackboneParams, EnsembleParams, N_TENSORS};
use coopens_core::Tensor;

use crate::error::{Error, Result};
use crate::kv;

pub const MAGIC: &[u8; 4] = b"FSEN";
pub const VERSION: u16 = 1;

pub fn encode(ensemble: &EnsembleParams) -> Vec<u8> {
    let descriptor = format!(
        "{}|seeds={}",
        ensemble.arch().descriptor(),
        kv::join(ensemble.member_seeds())
    );
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ensemble.len() as u32).to_le_bytes());
    out.extend_from_slice(&(descriptor.len() as u32).to_le_bytes());
    out.extend_from_slice(descriptor.as_bytes());
    for m in ensemble.members() {
        for t in m.tensors() {
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                self.bytes.len() as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn bad(&self, at: usize, reason: impl Into<String>) -> Error {
        Error::format(self.path, at as u64, reason)
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<EnsembleParams> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4, "magic")? != MAGIC {
        return Err(r.bad(0, "bad magic, not a checkpoint"));
    }
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().expect("2 bytes"));
    if version != VERSION {
        return Err(r.bad(4, format!("unsupported version {version}")));
    }
    let k = r.u32("member count")? as usize;
    let len = r.u32("descriptor length")? as usize;
    let at = r.pos;
    let descriptor =
        std::str::from_utf8(r.take(len, "descriptor")?).map_err(|_| r.bad(at, "descriptor is not UTF-8"))?;
    let (arch_text, seeds) = descriptor
        .rsplit_once("|seeds=")
        .ok_or_else(|| r.bad(at, "descriptor lacks member seeds"))?;
    let arch = Architecture::parse(arch_text).map_err(|e| r.bad(at, e.to_string()))?;
    let seeds: Vec<u64> = kv::split_list(seeds).ok_or_else(|| r.bad(at, "bad member seeds"))?;
    if seeds.len() != k || k == 0 {
        return Err(r.bad(at, format!("{} seeds for {k} members", seeds.len())));
    }
    let template = BackboneParams::init(arch, 0)?;
    let mut members = Vec::with_capacity(k);
    for j in 0..k {
        let mut tensors = Vec::with_capacity(N_TENSORS);
        for expected in template.tensors() {
            let at = r.pos;
            let rank = r.take(1, "tensor rank")?[0] as usize;
            let shape = (0..rank)
                .map(|_| r.u32("tensor dims").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            if shape != expected.shape() {
                return Err(r.bad(
                    at,
                    format!("member {j}: tensor shape {shape:?}, expected {:?}", expected.shape()),
                ));
            }
            let data = r
                .take(8 * expected.len(), "tensor payload")?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push(Tensor::new(shape, data)?);
        }
        members.push(BackboneParams::from_tensors(arch, tensors)?);
    }
    if r.pos != bytes.len() {
        return Err(r.bad(r.pos, "trailing bytes after the last member"));
    }
    Ok(EnsembleParams::new(members, seeds)?)
}

pub fn save_checkpoint(ensemble: &EnsembleParams, path: &Path) -> Result<()> {
    fs::write(path, encode(ensemble)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<EnsembleParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
