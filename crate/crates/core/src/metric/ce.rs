//! Label-smoothing cross-entropy with one linear classifier per modality.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::params::Parameters;
use crate::repr::{Modality, NUM_MODALITIES};

pub const DEFAULT_CE_EPSILON: f64 = 0.1;

/// Smoothed cross-entropy of one logit vector and its gradient with respect
/// to the logits. The target gets `1 - eps + eps / C`, every other class
/// `eps / C`.
pub fn label_smoothing_ce(logits: ArrayView1<'_, f64>, identity: usize, epsilon: f64) -> Result<(f64, Array1<f64>)> {
    let classes = logits.len();
    if identity >= classes {
        return Err(Error::IdentityOutOfRange { identity, classes });
    }
    let max = logits.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let log_z = max + logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    let other = epsilon / classes as f64;
    let target = 1.0 - epsilon + other;
    let mut loss = 0.0;
    let mut grad = Array1::zeros(classes);
    for (c, &x) in logits.iter().enumerate() {
        let q = if c == identity { target } else { other };
        let log_p = x - log_z;
        loss -= q * log_p;
        grad[c] = log_p.exp() - q;
    }
    Ok((loss, grad))
}

/// Per-modality classifiers over `[specific, shared]` (2d inputs).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHeads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

pub struct HeadOutput {
    pub loss: f64,
    pub d_specific: Array1<f64>,
    pub d_shared: Array1<f64>,
}

impl ClassifierHeads {
    pub fn zeros(dim: usize, classes: usize) -> Self {
        ClassifierHeads {
            weights: vec![Array2::zeros((classes, 2 * dim)); NUM_MODALITIES],
            biases: vec![Array1::zeros(classes); NUM_MODALITIES],
        }
    }

    pub fn init<R: Rng>(dim: usize, classes: usize, std: f64, rng: &mut R) -> Self {
        let mut heads = Self::zeros(dim, classes);
        if std > 0.0 {
            let normal = Normal::new(0.0, std).expect("finite std");
            for w in &mut heads.weights {
                w.iter_mut().for_each(|x| *x = normal.sample(rng));
            }
        }
        heads
    }

    pub fn classes(&self) -> usize {
        self.biases[0].len()
    }

    pub fn dim(&self) -> usize {
        self.weights[0].ncols() / 2
    }

    pub fn logits<'a>(
        &self,
        modality: Modality,
        specific: ArrayView1<'a, f64>,
        shared: ArrayView1<'a, f64>,
    ) -> Array1<f64> {
        let m = modality.index();
        let input = concatenate(Axis(0), &[specific, shared]).expect("equal dims");
        self.weights[m].dot(&input) + &self.biases[m]
    }

    /// Loss for one modality's features; accumulates `scale`-weighted
    /// parameter gradients into `grads` and returns feature gradients
    /// already multiplied by `scale`.
    pub fn forward_backward<'a>(
        &self,
        modality: Modality,
        specific: ArrayView1<'a, f64>,
        shared: ArrayView1<'a, f64>,
        identity: usize,
        epsilon: f64,
        scale: f64,
        grads: &mut ClassifierHeads,
    ) -> Result<HeadOutput> {
        let m = modality.index();
        let dim = specific.len();
        let input = concatenate(Axis(0), &[specific, shared]).expect("equal dims");
        let logits = self.weights[m].dot(&input) + &self.biases[m];
        let (loss, d_logits) = label_smoothing_ce(logits.view(), identity, epsilon)?;
        let d_logits = d_logits * scale;
        let outer = d_logits.view().insert_axis(Axis(1)).dot(&input.view().insert_axis(Axis(0)));
        grads.weights[m] += &outer;
        grads.biases[m] += &d_logits;
        let d_input = self.weights[m].t().dot(&d_logits);
        Ok(HeadOutput {
            loss,
            d_specific: d_input.slice(s![..dim]).to_owned(),
            d_shared: d_input.slice(s![dim..]).to_owned(),
        })
    }
}

impl Parameters for ClassifierHeads {
    fn named_tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for m in Modality::ALL {
            let i = m.index();
            out.push((format!("heads.{m}.weight"), self.weights[i].as_slice().expect("standard layout")));
            out.push((format!("heads.{m}.bias"), self.biases[i].as_slice().expect("standard layout")));
        }
        out
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for ((m, w), b) in Modality::ALL.iter().zip(self.weights.iter_mut()).zip(self.biases.iter_mut()) {
            out.push((format!("heads.{m}.weight"), w.as_slice_mut().expect("standard layout")));
            out.push((format!("heads.{m}.bias"), b.as_slice_mut().expect("standard layout")));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    #[test]
    fn uniform_logits_give_log_c() {
        for eps in [0.0, 0.1, 0.5] {
            let (loss, _) = label_smoothing_ce(array![0.7, 0.7, 0.7, 0.7].view(), 2, eps).unwrap();
            assert!((loss - 4f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn hard_limit_goes_to_zero() {
        let (loss, _) = label_smoothing_ce(array![60.0, 0.0, 0.0].view(), 0, 0.0).unwrap();
        assert!(loss < 1e-20);
    }

    #[test]
    fn out_of_range_identity() {
        assert!(matches!(
            label_smoothing_ce(array![0.0, 0.0].view(), 2, 0.1),
            Err(Error::IdentityOutOfRange { identity: 2, classes: 2 })
        ));
    }

    #[test]
    fn gradient_sums_to_zero() {
        let (_, g) = label_smoothing_ce(array![1.0, -2.0, 0.5].view(), 1, 0.1).unwrap();
        assert!(g.sum().abs() < 1e-15);
    }
}
