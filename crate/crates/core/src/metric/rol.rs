//! Representation orthogonality loss.
//!
//! Fits the pairwise slot similarity matrix to a block target: specifics are
//! mutually orthonormal, orthogonal to every shared slot, and all shared
//! slots coincide.

use ndarray::{Array2, ArrayView2};

use super::normalize_backward;
use crate::error::{Error, Result};
use crate::repr::{SampleRepresentation, NUM_MODALITIES, NUM_SLOTS};

#[derive(Debug, Clone, PartialEq)]
pub struct TargetMatrix(Array2<f64>);

impl TargetMatrix {
    /// Identity on the specific block, zeros across blocks, ones on the
    /// shared block.
    pub fn block() -> Self {
        let m = NUM_MODALITIES;
        TargetMatrix(Array2::from_shape_fn((NUM_SLOTS, NUM_SLOTS), |(i, j)| match (i < m, j < m) {
            (true, true) => f64::from(i == j),
            (false, false) => 1.0,
            _ => 0.0,
        }))
    }

    pub fn entries(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }
}

impl Default for TargetMatrix {
    fn default() -> Self {
        Self::block()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairMask(Array2<f64>);

impl PairMask {
    pub fn from_mask(mask: &[bool; NUM_SLOTS]) -> Self {
        PairMask(Array2::from_shape_fn((NUM_SLOTS, NUM_SLOTS), |(i, j)| f64::from(mask[i] && mask[j])))
    }

    pub fn for_sample(rep: &SampleRepresentation) -> Self {
        Self::from_mask(&rep.mask())
    }

    pub fn entries(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }
}

/// Loss and gradient with respect to the (already unit) slots.
pub fn rol_loss(rep: &SampleRepresentation, target: &TargetMatrix, pair_mask: &PairMask) -> Result<(f64, Array2<f64>)> {
    if !rep.is_normalized() {
        return Err(Error::NotNormalized);
    }
    Ok(rol_on_unit(rep.slots(), target, pair_mask))
}

pub(crate) fn rol_on_unit(
    slots: ArrayView2<'_, f64>,
    target: &TargetMatrix,
    pair_mask: &PairMask,
) -> (f64, Array2<f64>) {
    let gram = slots.dot(&slots.t());
    let err = (&gram - &target.0) * &pair_mask.0;
    let loss = err.iter().map(|e| e * e).sum();
    // err is symmetric, so d/dV sum (VV^T - A)^2 = 4 err V
    let grad = err.dot(&slots) * 4.0;
    (loss, grad)
}

/// Loss on raw slots, normalizing internally; the gradient is with respect to
/// the raw slots. Masked-out rows must be zero and receive zero gradient.
pub fn rol_loss_raw(
    raw: ArrayView2<'_, f64>,
    target: &TargetMatrix,
    pair_mask: &PairMask,
) -> Result<(f64, Array2<f64>)> {
    let mut unit = raw.to_owned();
    for (i, mut row) in unit.rows_mut().into_iter().enumerate() {
        if pair_mask.0[[i, i]] == 0.0 {
            continue;
        }
        let norm = row.dot(&row).sqrt();
        if norm < crate::repr::MIN_SLOT_NORM {
            return Err(Error::DegenerateFeature);
        }
        row.mapv_inplace(|x| x / norm);
    }
    let (loss, g_unit) = rol_on_unit(unit.view(), target, pair_mask);
    Ok((loss, normalize_backward(raw, g_unit.view())))
}
