//! Binary feature store.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic     b"MDFS"
//! version   u32 (= 1)
//! d         u32
//! M         u32   modality count
//! count     u64   records
//! record:
//!   identity  u32
//!   camera    u32
//!   mask      2M bytes, one 0/1 byte per slot
//!   slots     2M x d f32, fixed slot order, zeros where masked out
//! ```
//!
//! Values are widened to f64 on load. A loaded record is flagged normalized
//! when every present slot has unit norm within 1e-6.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, FormatError, Result};
use crate::io_util::{read_exact_or_truncated, read_u32, read_u64};
use crate::repr::{LabeledSample, Modality, ModalitySet, SampleRepresentation, NUM_MODALITIES, NUM_SLOTS};

pub const STORE_MAGIC: [u8; 4] = *b"MDFS";
pub const STORE_VERSION: u32 = 1;

pub fn write_store(samples: &[LabeledSample], path: &Path) -> Result<()> {
    let d = samples.first().map(|s| s.representation.dim()).unwrap_or(0);
    if let Some(s) = samples.iter().find(|s| s.representation.dim() != d) {
        return Err(Error::DimensionMismatch { expected: d, found: s.representation.dim() });
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&STORE_MAGIC)?;
    w.write_all(&STORE_VERSION.to_le_bytes())?;
    w.write_all(&(d as u32).to_le_bytes())?;
    w.write_all(&(NUM_MODALITIES as u32).to_le_bytes())?;
    w.write_all(&(samples.len() as u64).to_le_bytes())?;
    for s in samples {
        w.write_all(&s.identity.to_le_bytes())?;
        w.write_all(&s.camera.to_le_bytes())?;
        w.write_all(&s.representation.mask_bytes())?;
        for x in s.representation.slots().iter() {
            w.write_all(&(*x as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_store(path: &Path) -> Result<Vec<LabeledSample>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact_or_truncated(&mut r, &mut magic)?;
    if magic != STORE_MAGIC {
        return Err(FormatError::BadMagic { expected: STORE_MAGIC, found: magic }.into());
    }
    let version = read_u32(&mut r)?;
    if version != STORE_VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let d = read_u32(&mut r)? as usize;
    let modalities = read_u32(&mut r)? as usize;
    if modalities != NUM_MODALITIES {
        return Err(FormatError::Corrupt { record: 0, reason: format!("{modalities} modalities in header") }.into());
    }
    if d == 0 {
        return Err(FormatError::Corrupt { record: 0, reason: "zero feature dimension".into() }.into());
    }
    let count = read_u64(&mut r)?;
    let mut out = Vec::new();
    let mut mask = [0u8; NUM_SLOTS];
    let mut buf = vec![0u8; NUM_SLOTS * d * 4];
    for record in 0..count {
        let corrupt = |reason: &str| FormatError::Corrupt { record, reason: reason.into() };
        let identity = read_u32(&mut r)?;
        let camera = read_u32(&mut r)?;
        read_exact_or_truncated(&mut r, &mut mask)?;
        read_exact_or_truncated(&mut r, &mut buf)?;
        if mask.iter().any(|&b| b > 1) {
            return Err(corrupt("mask byte other than 0 or 1").into());
        }
        let mut present = ModalitySet::EMPTY;
        for m in Modality::ALL {
            match (mask[m.specific_slot()], mask[m.shared_slot()]) {
                (1, 1) => present.insert(m),
                (0, 0) => {}
                _ => return Err(corrupt("unpaired specific/shared mask").into()),
            }
        }
        if present.is_empty() {
            return Err(corrupt("empty mask").into());
        }
        let values: Vec<f64> =
            buf.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap()))).collect();
        let slots = Array2::from_shape_vec((NUM_SLOTS, d), values).expect("sized buffer");
        for (k, &bit) in mask.iter().enumerate() {
            if bit == 0 && slots.row(k).iter().any(|&x| x != 0.0) {
                return Err(corrupt("masked-out slot is not zero").into());
            }
        }
        let rep = SampleRepresentation::from_slots(slots, present).map_err(|e| corrupt(&e.to_string()))?;
        let representation = match rep.clone().assume_normalized() {
            Ok(n) => n,
            Err(_) => rep,
        };
        out.push(LabeledSample { identity, camera, representation });
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(FormatError::Corrupt { record: count, reason: "trailing bytes".into() }.into());
    }
    Ok(out)
}
