//! Versioned binary checkpoint for a [`Model`].
//!
//! Layout (little-endian):
//!
//! ```text
//! magic      b"MDRP"
//! version    u32 (= 1)
//! dim        u32
//! depth      u32
//! heads      u32
//! patches    u32
//! patch_dim  u32
//! decoupled  u32 (0 or 1)
//! classes    u32
//! count      u64   total number of f64 values that follow
//! values     f64 x count, tensors in `Parameters::named_tensors` order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{EncoderConfig, Model};
use crate::error::{FormatError, Result};
use crate::io_util::{read_exact_or_truncated, read_u32, read_u64};
use crate::params::Parameters;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MDRP";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let c = model.config();
    w.write_all(&CHECKPOINT_MAGIC)?;
    for v in [
        CHECKPOINT_VERSION,
        c.dim as u32,
        c.depth as u32,
        c.heads as u32,
        c.num_patches as u32,
        c.patch_dim as u32,
        u32::from(c.decoupled),
        model.heads.classes() as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(model.num_parameters() as u64).to_le_bytes())?;
    for (_, t) in model.named_tensors() {
        for x in t {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Model> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact_or_truncated(&mut r, &mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(FormatError::BadMagic { expected: CHECKPOINT_MAGIC, found: magic }.into());
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let mut fields = [0u32; 7];
    for f in &mut fields {
        *f = read_u32(&mut r)?;
    }
    let [dim, depth, heads, num_patches, patch_dim, decoupled, classes] = fields.map(|v| v as usize);
    let config = EncoderConfig { dim, depth, heads, num_patches, patch_dim, decoupled: decoupled != 0 };
    let corrupt = |reason: String| FormatError::Corrupt { record: 0, reason };
    config.validate().map_err(|e| corrupt(e.to_string()))?;
    let mut model = Model::init(config, classes, 0).map_err(|e| corrupt(e.to_string()))?;
    let count = read_u64(&mut r)?;
    if count != model.num_parameters() as u64 {
        return Err(corrupt(format!("{count} values for a model of {} parameters", model.num_parameters())).into());
    }
    let mut buf = [0u8; 8];
    for (_, t) in model.named_tensors_mut() {
        for x in t.iter_mut() {
            read_exact_or_truncated(&mut r, &mut buf)?;
            *x = f64::from_le_bytes(buf);
        }
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(corrupt("trailing bytes".into()).into());
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn round_trip_is_exact() {
        let cfg = EncoderConfig { dim: 8, depth: 1, heads: 2, num_patches: 3, patch_dim: 4, decoupled: true };
        let m = Model::init(cfg, 3, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        write_checkpoint(&m, &path).unwrap();
        assert_eq!(read_checkpoint(&path).unwrap(), m);

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Format(FormatError::Truncated))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Format(FormatError::BadMagic { .. }))));
    }
}
