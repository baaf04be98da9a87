#![allow(dead_code)]

use anyreid::repr::{LabeledSample, ModalitySet, SampleRepresentation, NUM_MODALITIES, NUM_SLOTS};
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn raw_slots<R: Rng>(rng: &mut R, dim: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((NUM_SLOTS, dim), || rng.sample(StandardNormal))
}

pub fn unit_rep<R: Rng>(rng: &mut R, dim: usize, set: ModalitySet) -> SampleRepresentation {
    SampleRepresentation::from_slots(raw_slots(rng, dim), set).unwrap().normalize_slots().unwrap()
}

pub fn labeled<R: Rng>(rng: &mut R, dim: usize, identity: u32, camera: u32) -> LabeledSample {
    LabeledSample { identity, camera, representation: unit_rep(rng, dim, ModalitySet::ALL) }
}

/// Similarity computed straight from the definitions with plain loops over
/// `Vec`s: same-modality specific dot products over |M_q| |M_g|, every valid
/// shared cross pair over the number of valid pairs, and their mean.
pub fn reference_similarity(q: &SampleRepresentation, g: &SampleRepresentation) -> (f64, f64, f64) {
    let rows =
        |r: &SampleRepresentation| -> Vec<Vec<f64>> { r.slots().rows().into_iter().map(|x| x.to_vec()).collect() };
    let (qs, gs) = (rows(q), rows(g));
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let (qm, gm) = (q.mask(), g.mask());
    let nq = (0..NUM_MODALITIES).filter(|&i| qm[i]).count() as f64;
    let ng = (0..NUM_MODALITIES).filter(|&i| gm[i]).count() as f64;
    let mut sp = 0.0;
    for i in 0..NUM_MODALITIES {
        if qm[i] && gm[i] {
            sp += dot(&qs[i], &gs[i]);
        }
    }
    sp /= nq * ng;
    let (mut sh, mut pairs) = (0.0, 0.0);
    for i in 0..NUM_MODALITIES {
        for j in 0..NUM_MODALITIES {
            if qm[NUM_MODALITIES + i] && gm[NUM_MODALITIES + j] {
                sh += dot(&qs[NUM_MODALITIES + i], &gs[NUM_MODALITIES + j]);
                pairs += 1.0;
            }
        }
    }
    sh /= pairs;
    (sp, sh, (sp + sh) / 2.0)
}
