//! Knowledge discrepancy loss.
//!
//! For an anchor, distances to in-batch positives and negatives are measured on
//! the concatenated specific slots, the concatenated shared slots, and the
//! full concatenation. The loss drives the hardest-positive ratio
//! `D_p = max d_full / (max d_full + max d_sp + max d_sh)` towards 0 and the
//! hardest-negative ratio `D_n` (with minima) towards 1.
//!
//! The negative branch's specific-only and shared-only distances are always
//! detached. [`KdlDetach::Negative`] (the default) keeps the positive branch
//! live, so gradient also reaches the samples at the largest specific-only and
//! shared-only positive distances; [`KdlDetach::Both`] detaches those too and
//! gradient flows only through the full-feature distances.

use std::ops::Range;

use ndarray::s;
use serde::{Deserialize, Serialize};

use super::{accumulate_pair, sq_dist_rows, BatchSpec, SlotGrads};
use crate::error::{Error, Result};
use crate::repr::NUM_MODALITIES;

/// Guards both ratio denominators.
pub const KDL_EPS: f64 = 1e-12;

/// Which branches have their specific-only and shared-only distances detached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KdlDetach {
    #[default]
    Negative,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KdlTerms {
    pub d_p: f64,
    pub d_n: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy)]
struct Distances {
    sp: f64,
    sh: f64,
    full: f64,
}

fn distances(batch: &BatchSpec, a: usize, t: usize) -> Distances {
    let (xa, xt) = (batch.slots(a), batch.slots(t));
    let m = NUM_MODALITIES;
    let sp2 = sq_dist_rows(xa.slice(s![..m, ..]), xt.slice(s![..m, ..]));
    let sh2 = sq_dist_rows(xa.slice(s![m.., ..]), xt.slice(s![m.., ..]));
    Distances { sp: sp2.sqrt(), sh: sh2.sqrt(), full: (sp2 + sh2).sqrt() }
}

/// Loss for one anchor with gradients for every sample in the batch.
pub fn kdl_loss(batch: &BatchSpec, anchor_index: usize, detach: KdlDetach) -> Result<(KdlTerms, SlotGrads)> {
    let mut grads = batch.zero_grads();
    let terms = kdl_accumulate(batch, anchor_index, detach, 1.0, &mut grads)?;
    Ok((terms, grads))
}

fn farther(best: Option<(f64, usize)>, d: f64, t: usize) -> Option<(f64, usize)> {
    if best.is_none_or(|(b, _)| d > b) {
        Some((d, t))
    } else {
        best
    }
}

pub(crate) fn kdl_accumulate(
    batch: &BatchSpec,
    a: usize,
    detach: KdlDetach,
    scale: f64,
    grads: &mut SlotGrads,
) -> Result<KdlTerms> {
    let id = batch.identity(a);
    // (distance, index) of the hardest positive / negative per feature variant
    let mut pos: Option<(f64, usize)> = None;
    let mut neg: Option<(f64, usize)> = None;
    let (mut pos_sp, mut pos_sh): (Option<(f64, usize)>, Option<(f64, usize)>) = (None, None);
    let (mut neg_sp, mut neg_sh) = (f64::INFINITY, f64::INFINITY);
    for t in 0..batch.len() {
        if t == a {
            continue;
        }
        let d = distances(batch, a, t);
        if batch.identity(t) == id {
            pos = farther(pos, d.full, t);
            pos_sp = farther(pos_sp, d.sp, t);
            pos_sh = farther(pos_sh, d.sh, t);
        } else {
            if neg.is_none_or(|(best, _)| d.full < best) {
                neg = Some((d.full, t));
            }
            neg_sp = neg_sp.min(d.sp);
            neg_sh = neg_sh.min(d.sh);
        }
    }
    let ((full_p, p), (full_n, n), (pos_sp, p_sp), (pos_sh, p_sh)) = match (pos, neg, pos_sp, pos_sh) {
        (Some(p), Some(n), Some(sp), Some(sh)) => (p, n, sp, sh),
        _ => return Err(Error::DegenerateAnchor(a)),
    };

    let den_p = full_p + pos_sp + pos_sh + KDL_EPS;
    let den_n = full_n + neg_sp + neg_sh + KDL_EPS;
    let d_p = full_p / den_p;
    let d_n = full_n / den_n;
    let loss = d_p.abs() + (d_n - 1.0).abs();

    let g_full_p = d_p.signum() * (den_p - full_p) / (den_p * den_p);
    let g_full_n = (d_n - 1.0).signum() * (den_n - full_n) / (den_n * den_n);
    for (t, full, g) in [(p, full_p, g_full_p), (n, full_n, g_full_n)] {
        if full == 0.0 {
            continue;
        }
        let coef = scale * g / full;
        let (ga, gt) = pair_mut(grads, a, t);
        accumulate_pair(ga.view_mut(), gt.view_mut(), batch.slots(a), batch.slots(t), coef);
    }
    if detach == KdlDetach::Negative {
        // d D_p / d max d_sp = d D_p / d max d_sh = -full_p / den_p^2
        let g_branch = -d_p.signum() * full_p / (den_p * den_p);
        let m = NUM_MODALITIES;
        for (t, dist, rows) in [(p_sp, pos_sp, 0..m), (p_sh, pos_sh, m..2 * m)] {
            if dist == 0.0 {
                continue;
            }
            let (ga, gt) = pair_mut(grads, a, t);
            accumulate_rows(ga, gt, batch, (a, t), rows, scale * g_branch / dist);
        }
    }
    Ok(KdlTerms { d_p, d_n, loss })
}

fn accumulate_rows(
    ga: &mut ndarray::Array2<f64>,
    gt: &mut ndarray::Array2<f64>,
    batch: &BatchSpec,
    (a, t): (usize, usize),
    rows: Range<usize>,
    coef: f64,
) {
    accumulate_pair(
        ga.slice_mut(s![rows.clone(), ..]),
        gt.slice_mut(s![rows.clone(), ..]),
        batch.slots(a).slice(s![rows.clone(), ..]),
        batch.slots(t).slice(s![rows, ..]),
        coef,
    );
}

pub(crate) fn pair_mut<T>(v: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    assert_ne!(a, b);
    if a < b {
        let (lo, hi) = v.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = v.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}

/// Mean over the anchors that have both a positive and a negative.
pub fn kdl_batch_loss(batch: &BatchSpec, detach: KdlDetach) -> Result<(f64, SlotGrads)> {
    let valid: Vec<usize> = (0..batch.len()).filter(|&a| has_pos_and_neg(batch, a)).collect();
    if valid.is_empty() {
        return Err(Error::DegenerateBatch);
    }
    let scale = 1.0 / valid.len() as f64;
    let mut grads = batch.zero_grads();
    let mut total = 0.0;
    for &a in &valid {
        total += kdl_accumulate(batch, a, detach, scale, &mut grads)?.loss;
    }
    Ok((total * scale, grads))
}

pub(crate) fn has_pos_and_neg(batch: &BatchSpec, a: usize) -> bool {
    let id = batch.identity(a);
    let mut pos = false;
    let mut neg = false;
    for t in 0..batch.len() {
        if t != a {
            if batch.identity(t) == id {
                pos = true;
            } else {
                neg = true;
            }
        }
    }
    pos && neg
}

#[cfg(test)]
mod tests {
    use ndarray::Array2;

    use super::*;
    use crate::repr::{LabeledSample, ModalitySet, SampleRepresentation};

    fn sample(identity: u32, slots: Array2<f64>) -> LabeledSample {
        LabeledSample {
            identity,
            camera: 0,
            representation: SampleRepresentation::from_slots(slots, ModalitySet::ALL).unwrap(),
        }
    }

    /// Anchor at the origin; one positive at sp-distance 3 and sh-distance 4,
    /// one negative at 6 and 8.
    fn pythagorean_batch() -> BatchSpec {
        let anchor = Array2::zeros((6, 1));
        let mut pos = Array2::zeros((6, 1));
        pos[[0, 0]] = 3.0;
        pos[[3, 0]] = 4.0;
        let mut neg = Array2::zeros((6, 1));
        neg[[1, 0]] = 6.0;
        neg[[5, 0]] = 8.0;
        BatchSpec::new(vec![sample(0, anchor), sample(0, pos), sample(1, neg)]).unwrap()
    }

    #[test]
    fn pythagorean_closed_form() {
        let (t, _) = kdl_loss(&pythagorean_batch(), 0, KdlDetach::Negative).unwrap();
        assert!((t.d_p - 5.0 / 12.0).abs() < 1e-12);
        assert!((t.d_n - 5.0 / 12.0).abs() < 1e-12);
        assert!((t.loss - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_anchor() {
        let b = BatchSpec::new(vec![sample(0, Array2::ones((6, 1))), sample(1, Array2::zeros((6, 1)))]).unwrap();
        assert!(matches!(kdl_loss(&b, 0, KdlDetach::Both), Err(Error::DegenerateAnchor(0))));
        assert!(matches!(kdl_batch_loss(&b, KdlDetach::Both), Err(Error::DegenerateBatch)));
    }

    #[test]
    fn sp_nearest_negative_gets_no_gradient() {
        // negative 2 is nearest in the specific slots only, negative 3 is
        // nearest in the full concatenation
        let anchor = Array2::zeros((6, 1));
        let mut pos = Array2::zeros((6, 1));
        pos[[0, 0]] = 1.0;
        let mut n_sp = Array2::zeros((6, 1));
        n_sp[[0, 0]] = 0.5;
        n_sp[[3, 0]] = 5.0;
        let mut n_full = Array2::zeros((6, 1));
        n_full[[0, 0]] = 2.0;
        n_full[[3, 0]] = 2.0;
        let b = BatchSpec::new(vec![sample(0, anchor), sample(0, pos), sample(1, n_sp), sample(2, n_full)]).unwrap();
        for detach in [KdlDetach::Negative, KdlDetach::Both] {
            let (_, g) = kdl_loss(&b, 0, detach).unwrap();
            assert!(g[2].iter().all(|v| *v == 0.0));
            assert!(g[3].iter().any(|v| *v != 0.0));
        }
    }

    #[test]
    fn live_positive_branch_reaches_the_sp_farthest_positive() {
        // positive 1 is farthest in full distance, positive 2 only in the
        // specific slots
        let anchor = Array2::zeros((6, 1));
        let mut p_full = Array2::zeros((6, 1));
        p_full[[0, 0]] = 1.0;
        p_full[[3, 0]] = 3.0;
        let mut p_sp = Array2::zeros((6, 1));
        p_sp[[0, 0]] = 2.0;
        let mut neg = Array2::zeros((6, 1));
        neg[[2, 0]] = 9.0;
        let b = BatchSpec::new(vec![sample(0, anchor), sample(0, p_full), sample(0, p_sp), sample(1, neg)]).unwrap();
        let (_, both) = kdl_loss(&b, 0, KdlDetach::Both).unwrap();
        assert!(both[2].iter().all(|v| *v == 0.0));
        let (_, live) = kdl_loss(&b, 0, KdlDetach::Negative).unwrap();
        // pushing the sp-farthest positive away lowers D_p
        assert!(live[2][[0, 0]] < 0.0);
        assert!(live[2].slice(s![1.., ..]).iter().all(|v| *v == 0.0));
    }
}
