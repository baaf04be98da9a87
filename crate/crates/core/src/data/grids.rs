//! Raw patch-grid files.
//!
//! Layout (little-endian): magic `b"MDGR"`, version u32 (= 1), num_patches
//! u32, patch_dim u32, modality count u32, record count u64; then per record
//! identity u32, camera u32 and one `num_patches x patch_dim` grid of f64 per
//! modality in R, N, T order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::encoder::PatchGrid;
use crate::error::{Error, FormatError, Result};
use crate::io_util::{read_exact_or_truncated, read_u32, read_u64};
use crate::repr::{Modality, NUM_MODALITIES};

pub const GRIDS_MAGIC: [u8; 4] = *b"MDGR";
pub const GRIDS_VERSION: u32 = 1;

/// One labeled sample as raw modality images.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSample {
    pub identity: u32,
    pub camera: u32,
    /// One grid per modality, in modality order.
    pub grids: Vec<PatchGrid>,
}

impl GridSample {
    pub fn grid(&self, m: Modality) -> Result<&PatchGrid> {
        self.grids.iter().find(|g| g.modality == m).ok_or(Error::MissingModality(m))
    }
}

pub fn write_grids(samples: &[GridSample], path: &Path) -> Result<()> {
    let (n, p) = samples.first().map(|s| s.grids[0].patches.dim()).unwrap_or((0, 0));
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&GRIDS_MAGIC)?;
    for v in [GRIDS_VERSION, n as u32, p as u32, NUM_MODALITIES as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(samples.len() as u64).to_le_bytes())?;
    for s in samples {
        w.write_all(&s.identity.to_le_bytes())?;
        w.write_all(&s.camera.to_le_bytes())?;
        for m in Modality::ALL {
            let g = s.grid(m)?;
            if g.patches.dim() != (n, p) {
                return Err(Error::Shape("all grids in a file must share one shape".into()));
            }
            for x in g.patches.iter() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_grids(path: &Path) -> Result<Vec<GridSample>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact_or_truncated(&mut r, &mut magic)?;
    if magic != GRIDS_MAGIC {
        return Err(FormatError::BadMagic { expected: GRIDS_MAGIC, found: magic }.into());
    }
    let version = read_u32(&mut r)?;
    if version != GRIDS_VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let n = read_u32(&mut r)? as usize;
    let p = read_u32(&mut r)? as usize;
    let modalities = read_u32(&mut r)? as usize;
    if modalities != NUM_MODALITIES {
        return Err(FormatError::Corrupt { record: 0, reason: format!("{modalities} modalities") }.into());
    }
    let count = read_u64(&mut r)?;
    let mut out = Vec::new();
    let mut buf = vec![0u8; n * p * 8];
    for _ in 0..count {
        let identity = read_u32(&mut r)?;
        let camera = read_u32(&mut r)?;
        let mut grids = Vec::with_capacity(NUM_MODALITIES);
        for m in Modality::ALL {
            read_exact_or_truncated(&mut r, &mut buf)?;
            let values: Vec<f64> = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let patches = Array2::from_shape_vec((n, p), values).expect("sized buffer");
            grids.push(PatchGrid::new(m, patches)?);
        }
        out.push(GridSample { identity, camera, grids });
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(FormatError::Corrupt { record: count, reason: "trailing bytes".into() }.into());
    }
    Ok(out)
}
