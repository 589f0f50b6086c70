//! Versioned binary checkpoint format.
//!
//! Layout: magic, format version, config block, then every parameter block as
//! (name, rows, cols, little-endian f64 data), then a CRC32 of everything
//! before it. Loading validates magic, version, checksum, block names, and
//! shapes against the stored configuration.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, ParamSet};

const MAGIC: &[u8; 8] = b"NMTCKPT\0";
const VERSION: u32 = 1;

fn crc32(bytes: &[u8]) -> u32 {
    let mut table = [0u32; 256];
    for (i, entry) in table.iter_mut().enumerate() {
        let mut c = i as u32;
        for _ in 0..8 {
            c = if c & 1 != 0 { 0xedb8_8320 ^ (c >> 1) } else { c >> 1 };
        }
        *entry = c;
    }
    let mut crc = 0xffff_ffffu32;
    for b in bytes {
        crc = table[((crc ^ *b as u32) & 0xff) as usize] ^ (crc >> 8);
    }
    crc ^ 0xffff_ffff
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Checkpoint("non-utf8 block name".into()))
    }
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);

    let c = &params.config;
    w.u64(c.src_vocab as u64);
    w.u64(c.tgt_vocab as u64);
    w.u64(c.embed_dim as u64);
    w.u64(c.hidden_dim as u64);
    w.u64(c.attn_dim as u64);
    w.u32(c.bos);
    w.u32(c.eos);

    let blocks = params.weights.blocks();
    w.u32(blocks.len() as u32);
    for (name, m) in blocks {
        w.str(name);
        w.u64(m.rows as u64);
        w.u64(m.cols as u64);
        for v in &m.data {
            w.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    let checksum = crc32(&w.buf);
    w.u32(checksum);
    fs::write(path, &w.buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < MAGIC.len() + 8 {
        return Err(Error::Checkpoint("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32(body) != stored {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }

    let mut r = Reader { buf: body, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }

    let config = ModelConfig {
        src_vocab: r.u64()? as usize,
        tgt_vocab: r.u64()? as usize,
        embed_dim: r.u64()? as usize,
        hidden_dim: r.u64()? as usize,
        attn_dim: r.u64()? as usize,
        bos: r.u32()?,
        eos: r.u32()?,
    };
    config.validate().map_err(|e| Error::Checkpoint(format!("stored config invalid: {e}")))?;

    let mut weights = ParamSet::zeros(&config);
    let block_count = r.u32()? as usize;
    let expected = weights.blocks().len();
    if block_count != expected {
        return Err(Error::Checkpoint(format!(
            "expected {expected} blocks, file has {block_count}"
        )));
    }
    for (name, m) in weights.blocks_mut() {
        let stored_name = r.str()?;
        if stored_name != name {
            return Err(Error::Checkpoint(format!(
                "block order mismatch: expected {name}, found {stored_name}"
            )));
        }
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        if rows != m.rows || cols != m.cols {
            return Err(Error::Checkpoint(format!(
                "block {name}: stored shape {rows}x{cols} does not match config shape {}x{}",
                m.rows, m.cols
            )));
        }
        for v in &mut m.data {
            *v = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        }
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after last block".into()));
    }

    Ok(ModelParams { config, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};

    #[test]
    fn roundtrips_bit_exactly() {
        let p = init_params(&ModelConfig::new(9, 11, 5, 4), 77).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_checkpoint(&p, f.path()).unwrap();
        let q = load_checkpoint(f.path()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn save_is_byte_deterministic() {
        let p = init_params(&ModelConfig::new(9, 11, 5, 4), 77).unwrap();
        let f1 = tempfile::NamedTempFile::new().unwrap();
        let f2 = tempfile::NamedTempFile::new().unwrap();
        save_checkpoint(&p, f1.path()).unwrap();
        save_checkpoint(&p, f2.path()).unwrap();
        assert_eq!(std::fs::read(f1.path()).unwrap(), std::fs::read(f2.path()).unwrap());
    }

    #[test]
    fn corruption_is_detected() {
        let p = init_params(&ModelConfig::new(9, 11, 5, 4), 77).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_checkpoint(&p, f.path()).unwrap();
        let mut bytes = std::fs::read(f.path()).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(f.path(), &bytes).unwrap();
        assert!(matches!(load_checkpoint(f.path()), Err(Error::Checkpoint(_))));
    }
}
