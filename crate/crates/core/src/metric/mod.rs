//! Training losses over decoupled slot features.
//!
//! Every loss returns its value together with the gradient with respect to the
//! slot matrices it was given (`2M x d` per sample). Slot-level losses operate
//! on whatever slots they receive; the training objective feeds them
//! L2-normalized slots and chains through the normalization.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, ArrayViewMut2};

use crate::error::{Error, Result};
use crate::repr::{LabeledSample, ModalitySet};

pub mod ce;
pub mod kdl;
pub mod objective;
pub mod rol;
pub mod triplet;

pub use ce::{label_smoothing_ce, ClassifierHeads};
pub use kdl::{kdl_batch_loss, kdl_loss, KdlDetach, KdlTerms};
pub use objective::{mml_loss, total_loss, LossConfig, LossReport, MmlTerms};
pub use rol::{rol_loss, rol_loss_raw, PairMask, TargetMatrix};
pub use triplet::{triplet_loss, triplet_term};

/// Per-sample gradients with respect to the slot matrices.
pub type SlotGrads = Vec<Array2<f64>>;

/// A labeled batch of fully available samples.
#[derive(Debug, Clone)]
pub struct BatchSpec {
    pub p: usize,
    pub k: usize,
    pub samples: Vec<LabeledSample>,
}

impl BatchSpec {
    /// Accepts any label layout; `p` is the number of distinct identities and
    /// `k` the largest per-identity count.
    pub fn new(samples: Vec<LabeledSample>) -> Result<Self> {
        let first = samples.first().ok_or(Error::DegenerateBatch)?;
        let dim = first.representation.dim();
        for s in &samples {
            if s.representation.modalities() != ModalitySet::ALL {
                return Err(Error::Shape("training batches require every modality".into()));
            }
            if s.representation.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: s.representation.dim() });
            }
        }
        let counts = identity_counts(&samples);
        let p = counts.len();
        let k = counts.values().copied().max().unwrap_or(0);
        Ok(BatchSpec { p, k, samples })
    }

    /// Strict PK layout: `p` identities with exactly `k` instances each.
    pub fn with_pk(p: usize, k: usize, samples: Vec<LabeledSample>) -> Result<Self> {
        let batch = Self::new(samples)?;
        let counts = identity_counts(&batch.samples);
        if counts.len() != p || counts.values().any(|&c| c != k) {
            return Err(Error::Shape(format!("batch is not a {p}x{k} PK layout")));
        }
        Ok(BatchSpec { p, k, ..batch })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn identity(&self, i: usize) -> u32 {
        self.samples[i].identity
    }

    pub fn slots(&self, i: usize) -> ArrayView2<'_, f64> {
        self.samples[i].representation.slots()
    }

    pub(crate) fn zero_grads(&self) -> SlotGrads {
        self.samples.iter().map(|s| Array2::zeros(s.representation.slots().raw_dim())).collect()
    }
}

fn identity_counts(samples: &[LabeledSample]) -> BTreeMap<u32, usize> {
    let mut counts = BTreeMap::new();
    for s in samples {
        *counts.entry(s.identity).or_insert(0) += 1;
    }
    counts
}

pub(crate) fn sq_dist_rows(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Adds `scale * (a - b)` to `ga` and subtracts it from `gb`.
pub(crate) fn accumulate_pair(
    mut ga: ArrayViewMut2<'_, f64>,
    mut gb: ArrayViewMut2<'_, f64>,
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    scale: f64,
) {
    ndarray::Zip::from(&mut ga).and(&mut gb).and(&a).and(&b).for_each(|ga, gb, &x, &y| {
        let v = scale * (x - y);
        *ga += v;
        *gb -= v;
    });
}

/// Backpropagates through `u = x / |x|` row-wise; rows of zero norm get zero.
pub fn normalize_backward(raw: ArrayView2<'_, f64>, grad_unit: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros(raw.raw_dim());
    for ((x, g), mut o) in raw.rows().into_iter().zip(grad_unit.rows()).zip(out.rows_mut()) {
        let norm = x.dot(&x).sqrt();
        if norm == 0.0 {
            continue;
        }
        let gu = g.dot(&x) / norm;
        ndarray::Zip::from(&mut o).and(&x).and(&g).for_each(|o, &xv, &gv| {
            *o = (gv - gu * xv / norm) / norm;
        });
    }
    out
}
