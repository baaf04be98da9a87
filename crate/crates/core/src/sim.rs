//! Masked any-to-any similarity between sample representations.
//!
//! The specific term compares same-modality specific slots where both samples
//! have the modality; the shared term averages every valid cross pair of
//! shared slots. The total is their mean.

use ndarray::{s, Array2};
use rayon::prelude::*;

use crate::repr::{SampleRepresentation, NUM_MODALITIES};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityBreakdown {
    pub sim_specific: f64,
    pub sim_shared: f64,
    pub sim_total: f64,
    pub valid_specific_pairs: usize,
    pub valid_shared_pairs: usize,
}

fn modality_mask(rep: &SampleRepresentation) -> [f64; NUM_MODALITIES] {
    let mask = rep.mask();
    std::array::from_fn(|i| if mask[i] { 1.0 } else { 0.0 })
}

fn count(mask: &[f64; NUM_MODALITIES]) -> f64 {
    mask.iter().sum()
}

/// Masked sum of same-modality specific dot products, divided by the product
/// of the two samples' specific-mask counts.
pub fn sim_specific(q: &SampleRepresentation, g: &SampleRepresentation) -> f64 {
    specific_parts(q, g).0
}

fn specific_parts(q: &SampleRepresentation, g: &SampleRepresentation) -> (f64, usize) {
    let (mq, mg) = (modality_mask(q), modality_mask(g));
    let mut acc = 0.0;
    let mut joint = 0;
    for i in 0..NUM_MODALITIES {
        let w = mq[i] * mg[i];
        if w != 0.0 {
            acc += q.slot(i).dot(&g.slot(i)) * w;
            joint += 1;
        }
    }
    (acc / (count(&mq) * count(&mg)), joint)
}

/// Sum of the Hadamard product of the pairwise shared similarity matrix with
/// the outer product of shared masks, over the number of valid pairs.
pub fn sim_shared(q: &SampleRepresentation, g: &SampleRepresentation) -> f64 {
    shared_parts(q, g).0
}

fn shared_parts(q: &SampleRepresentation, g: &SampleRepresentation) -> (f64, usize) {
    let shared_q = q.slots().slice_move(s![NUM_MODALITIES.., ..]);
    let shared_g = g.slots().slice_move(s![NUM_MODALITIES.., ..]);
    let pairwise = shared_q.dot(&shared_g.t());
    let (mq, mg) = (modality_mask(q), modality_mask(g));
    let pair_mask = Array2::from_shape_fn((NUM_MODALITIES, NUM_MODALITIES), |(i, j)| mq[i] * mg[j]);
    let valid = pair_mask.sum();
    ((&pairwise * &pair_mask).sum() / valid, valid as usize)
}

pub fn sim_total(q: &SampleRepresentation, g: &SampleRepresentation) -> SimilarityBreakdown {
    let (sim_specific, valid_specific_pairs) = specific_parts(q, g);
    let (sim_shared, valid_shared_pairs) = shared_parts(q, g);
    SimilarityBreakdown {
        sim_specific,
        sim_shared,
        sim_total: (sim_specific + sim_shared) / 2.0,
        valid_specific_pairs,
        valid_shared_pairs,
    }
}

const GALLERY_CHUNK: usize = 64;

/// Scores `q` against every gallery entry, preserving gallery order.
pub fn score_gallery(q: &SampleRepresentation, gallery: &[SampleRepresentation]) -> Vec<SimilarityBreakdown> {
    gallery.par_iter().with_min_len(GALLERY_CHUNK).map(|g| sim_total(q, g)).collect()
}

/// Scalar-loop evaluation of the same similarity, kept free of matrix
/// operations so it can serve as an independent check.
pub mod oracle {
    use super::SimilarityBreakdown;
    use crate::repr::{SampleRepresentation, NUM_MODALITIES};

    pub fn brute_force_similarity_oracle(q: &SampleRepresentation, g: &SampleRepresentation) -> SimilarityBreakdown {
        let d = q.dim();
        let qm = q.mask();
        let gm = g.mask();
        let qs = q.slots();
        let gs = g.slots();

        let mut n_sp_q = 0usize;
        let mut n_sp_g = 0usize;
        for i in 0..NUM_MODALITIES {
            if qm[i] {
                n_sp_q += 1;
            }
            if gm[i] {
                n_sp_g += 1;
            }
        }
        let mut sp_sum = 0.0;
        let mut sp_pairs = 0usize;
        for i in 0..NUM_MODALITIES {
            if qm[i] && gm[i] {
                let mut dot = 0.0;
                for k in 0..d {
                    dot += qs[[i, k]] * gs[[i, k]];
                }
                sp_sum += dot;
                sp_pairs += 1;
            }
        }
        let sim_specific = sp_sum / (n_sp_q * n_sp_g) as f64;

        let mut sh_sum = 0.0;
        let mut sh_pairs = 0usize;
        for i in 0..NUM_MODALITIES {
            for j in 0..NUM_MODALITIES {
                let (a, b) = (NUM_MODALITIES + i, NUM_MODALITIES + j);
                if qm[a] && gm[b] {
                    let mut dot = 0.0;
                    for k in 0..d {
                        dot += qs[[a, k]] * gs[[b, k]];
                    }
                    sh_sum += dot;
                    sh_pairs += 1;
                }
            }
        }
        let sim_shared = sh_sum / sh_pairs as f64;
        SimilarityBreakdown {
            sim_specific,
            sim_shared,
            sim_total: 0.5 * (sim_specific + sim_shared),
            valid_specific_pairs: sp_pairs,
            valid_shared_pairs: sh_pairs,
        }
    }
}

#[cfg(test)]
mod tests {
    use ndarray::{array, Array1};

    use super::oracle::brute_force_similarity_oracle;
    use super::*;
    use crate::repr::{build_representation, DecoupledFeature, Modality, ModalitySet};

    fn rep(features: &[(Modality, [f64; 2], [f64; 2])]) -> SampleRepresentation {
        let fs: Vec<_> = features
            .iter()
            .map(|(m, sp, sh)| DecoupledFeature::new(*m, Array1::from(sp.to_vec()), Array1::from(sh.to_vec())).unwrap())
            .collect();
        let set = features.iter().map(|f| f.0).collect::<ModalitySet>();
        build_representation(&fs, set).unwrap().normalize_slots().unwrap()
    }

    #[test]
    fn self_similarity_single_modality() {
        let q = rep(&[(Modality::Rgb, [1.0, 0.0], [0.0, 1.0])]);
        assert_eq!(sim_specific(&q, &q), 1.0);
    }

    #[test]
    fn no_joint_modality_gives_zero_specific() {
        let q = rep(&[(Modality::Rgb, [1.0, 0.0], [0.6, 0.8])]);
        let g = rep(&[(Modality::Nir, [1.0, 0.0], [0.0, 1.0])]);
        let b = sim_total(&q, &g);
        assert_eq!(b.sim_specific, 0.0);
        assert_eq!(b.valid_specific_pairs, 0);
        assert_eq!(b.valid_shared_pairs, 1);
        assert!((b.sim_shared - 0.8).abs() < 1e-15);
        assert!((b.sim_total - 0.4).abs() < 1e-15);
    }

    #[test]
    fn asymmetric_specific_denominator() {
        let q = rep(&[(Modality::Rgb, [0.0, 1.0], [1.0, 0.0]), (Modality::Tir, [1.0, 0.0], [1.0, 0.0])]);
        let g = rep(&[(Modality::Tir, [0.6, 0.8], [1.0, 0.0])]);
        assert!((sim_specific(&q, &g) - 0.3).abs() < 1e-15);
        let o = brute_force_similarity_oracle(&q, &g);
        assert!((o.sim_specific - 0.3).abs() < 1e-15);
    }

    #[test]
    fn shared_two_valid_pairs() {
        let q = rep(&[(Modality::Rgb, [1.0, 0.0], [1.0, 0.0]), (Modality::Nir, [1.0, 0.0], [0.0, 1.0])]);
        let g = rep(&[(Modality::Nir, [1.0, 0.0], [0.0, 1.0])]);
        let b = sim_total(&q, &g);
        assert_eq!(b.valid_shared_pairs, 2);
        assert!((b.sim_shared - 0.5).abs() < 1e-15);
        // specific: N.N = 1 over 2*1
        assert!((b.sim_specific - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identical_full_with_common_shared() {
        let q = rep(&[
            (Modality::Rgb, [1.0, 0.0], [0.0, 1.0]),
            (Modality::Nir, [0.0, 1.0], [0.0, 1.0]),
            (Modality::Tir, [1.0, 1.0], [0.0, 1.0]),
        ]);
        let b = sim_total(&q, &q);
        assert_eq!(b.valid_shared_pairs, 9);
        assert!((b.sim_shared - 1.0).abs() < 1e-15);
        // specific: three unit self-dots over 3*3
        assert!((b.sim_specific - 1.0 / 3.0).abs() < 1e-15);
        let scores = score_gallery(&q, &[q.clone()]);
        assert_eq!(scores[0], b);
    }

    #[test]
    fn empty_gallery() {
        let q = rep(&[(Modality::Rgb, [1.0, 0.0], [0.0, 1.0])]);
        assert!(score_gallery(&q, &[]).is_empty());
    }

    #[test]
    fn shared_matrix_path_matches_scalar_loops() {
        let slots = array![[0.3, 0.1], [0.0, 0.0], [0.2, 0.9], [0.5, -0.5], [0.0, 0.0], [0.7, 0.1]];
        let q = SampleRepresentation::from_slots(slots.clone(), "RT".parse().unwrap()).unwrap();
        let g = SampleRepresentation::from_slots(slots, "T".parse().unwrap()).unwrap();
        let a = sim_total(&q, &g);
        let b = brute_force_similarity_oracle(&q, &g);
        assert!((a.sim_total - b.sim_total).abs() < 1e-15);
    }
}
