//! Batch-hard triplet loss on the full concatenated slot feature.

use super::kdl::{has_pos_and_neg, pair_mut};
use super::{accumulate_pair, sq_dist_rows, BatchSpec, SlotGrads};
use crate::error::{Error, Result};

pub const DEFAULT_MARGIN: f64 = 0.3;

/// Hinge on the hardest positive and negative distances.
pub fn triplet_term(max_pos: f64, min_neg: f64, margin: f64) -> f64 {
    (max_pos - min_neg + margin).max(0.0)
}

/// Mean over non-degenerate anchors of `max(0, max_p d(a,p) - min_n d(a,n) + margin)`.
pub fn triplet_loss(batch: &BatchSpec, margin: f64) -> Result<(f64, SlotGrads)> {
    let n = batch.len();
    let dist: Vec<Vec<f64>> =
        (0..n).map(|a| (0..n).map(|t| sq_dist_rows(batch.slots(a), batch.slots(t)).sqrt()).collect()).collect();
    let anchors: Vec<usize> = (0..n).filter(|&a| has_pos_and_neg(batch, a)).collect();
    if anchors.is_empty() {
        return Err(Error::DegenerateBatch);
    }
    let scale = 1.0 / anchors.len() as f64;
    let mut grads = batch.zero_grads();
    let mut total = 0.0;
    for &a in &anchors {
        let id = batch.identity(a);
        let mut hard_p: Option<usize> = None;
        let mut hard_n: Option<usize> = None;
        for t in (0..n).filter(|&t| t != a) {
            if batch.identity(t) == id {
                if hard_p.is_none_or(|p| dist[a][t] > dist[a][p]) {
                    hard_p = Some(t);
                }
            } else if hard_n.is_none_or(|q| dist[a][t] < dist[a][q]) {
                hard_n = Some(t);
            }
        }
        let (p, q) = (hard_p.expect("anchor has a positive"), hard_n.expect("anchor has a negative"));
        let term = triplet_term(dist[a][p], dist[a][q], margin);
        total += term;
        if term <= 0.0 {
            continue;
        }
        // d term / d d(a,p) = 1, d term / d d(a,n) = -1
        for (t, sign) in [(p, 1.0), (q, -1.0)] {
            let d = dist[a][t];
            if d == 0.0 {
                continue;
            }
            let (ga, gt) = pair_mut(&mut grads, a, t);
            accumulate_pair(ga.view_mut(), gt.view_mut(), batch.slots(a), batch.slots(t), scale * sign / d);
        }
    }
    Ok((total * scale, grads))
}

#[cfg(test)]
mod tests {
    use ndarray::Array2;

    use super::*;
    use crate::repr::{LabeledSample, ModalitySet, SampleRepresentation};

    #[test]
    fn hinge_examples() {
        assert_eq!(triplet_term(1.0, 3.0, 0.3), 0.0);
        assert!((triplet_term(2.0, 1.0, 0.3) - 1.3).abs() < 1e-15);
    }

    fn line_sample(identity: u32, x: f64) -> LabeledSample {
        let mut s = Array2::zeros((6, 1));
        s[[0, 0]] = x;
        LabeledSample {
            identity,
            camera: 0,
            representation: SampleRepresentation::from_slots(s, ModalitySet::ALL).unwrap(),
        }
    }

    #[test]
    fn batch_on_a_line() {
        // ids: 0 at 0 and 2, 1 at 1 and 3
        let b = BatchSpec::with_pk(
            2,
            2,
            vec![line_sample(0, 0.0), line_sample(0, 2.0), line_sample(1, 1.0), line_sample(1, 3.0)],
        )
        .unwrap();
        let (loss, _) = triplet_loss(&b, 0.3).unwrap();
        // each anchor: hardest positive at 2, hardest negative at 1
        assert!((loss - 1.3).abs() < 1e-12);
    }

    #[test]
    fn all_degenerate() {
        let b = BatchSpec::new(vec![line_sample(0, 0.0), line_sample(1, 1.0)]).unwrap();
        assert!(matches!(triplet_loss(&b, 0.3), Err(Error::DegenerateBatch)));
    }
}
