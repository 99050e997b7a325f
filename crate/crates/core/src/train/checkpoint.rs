//! Checkpoint container: magic `NECACKPT`, u32 version, u64 iteration, a
//! length-prefixed canonical-JSON run config, then named tensors
//! `{u64 name length, UTF-8 name, u64 rank, u64 dims.., f32 LE payload}`.
//! All integers little-endian. Round trips are byte-exact.

use std::io::{Read, Write};
use std::path::Path;

use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"NECACKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub iteration: u64,
    /// Canonical single-line JSON of the run configuration.
    pub config_json: String,
    pub blocks: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    pub fn block(&self, name: &str) -> Result<&(String, Vec<usize>, Vec<f32>)> {
        self.blocks
            .iter()
            .find(|(n, _, _)| n == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing block '{}'", name)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.iteration.to_le_bytes());
        let cfg = self.config_json.as_bytes();
        out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
        out.extend_from_slice(cfg);
        for (name, dims, payload) in &self.blocks {
            let nb = name.as_bytes();
            out.extend_from_slice(&(nb.len() as u64).to_le_bytes());
            out.extend_from_slice(nb);
            out.extend_from_slice(&(dims.len() as u64).to_le_bytes());
            for d in dims {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in payload {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint("bad checkpoint magic".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", version)));
        }
        let iteration = r.u64()?;
        let cfg_len = r.u64()? as usize;
        let config_json = String::from_utf8(r.take(cfg_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("config block not UTF-8".into()))?;
        let mut blocks = Vec::new();
        while r.pos < bytes.len() {
            let name_len = r.u64()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("block name not UTF-8".into()))?;
            let rank = r.u64()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u64()? as usize);
            }
            let n: usize = dims.iter().product();
            let raw = r.take(n * 4)?;
            let payload = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            blocks.push((name, dims, payload));
        }
        Ok(Checkpoint {
            version,
            iteration,
            config_json,
            blocks,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
