//! Weighted combination of the losses and the end-to-end training objective
//! `L = L_ce + L_tri + w1 * L_rol + w2 * L_kdl`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::ce::DEFAULT_CE_EPSILON;
use super::kdl::KdlDetach;
use super::rol::{rol_on_unit, PairMask, TargetMatrix};
use super::triplet::DEFAULT_MARGIN;
use super::{kdl_batch_loss, normalize_backward, triplet_loss, BatchSpec, ClassifierHeads, SlotGrads};
use crate::data::GridSample;
use crate::encoder::{EncodeCache, Model};
use crate::error::{Error, Result};
use crate::params::{Gradients, Parameters};
use crate::repr::{LabeledSample, Modality, ModalitySet, SampleRepresentation, NUM_MODALITIES, NUM_SLOTS};

pub const DEFAULT_W1: f64 = 1.5;
pub const DEFAULT_W2: f64 = 5.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub w1: f64,
    pub w2: f64,
    pub margin: f64,
    pub ce_epsilon: f64,
    pub kdl_detach: KdlDetach,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            w1: DEFAULT_W1,
            w2: DEFAULT_W2,
            margin: DEFAULT_MARGIN,
            ce_epsilon: DEFAULT_CE_EPSILON,
            kdl_detach: KdlDetach::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.w1) && ok(self.w2) && ok(self.margin)) {
            return Err(Error::Config("loss: w1, w2 and margin must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.ce_epsilon) {
            return Err(Error::Config("loss: ce_epsilon must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MmlTerms {
    pub l_rol: f64,
    pub l_kdl: f64,
    pub l_mml: f64,
    /// Gradient of `l_mml` with respect to each sample's slots.
    pub grads: SlotGrads,
}

/// `w1 * mean ROL + w2 * mean KDL` over a batch of normalized samples.
pub fn mml_loss(batch: &BatchSpec, w1: f64, w2: f64, detach: KdlDetach) -> Result<MmlTerms> {
    let target = TargetMatrix::block();
    let n = batch.len() as f64;
    let mut grads = batch.zero_grads();
    let mut l_rol = 0.0;
    for (s, g) in batch.samples.iter().zip(grads.iter_mut()) {
        let rep = &s.representation;
        if !rep.is_normalized() {
            return Err(Error::NotNormalized);
        }
        let (loss, grad) = rol_on_unit(rep.slots(), &target, &PairMask::for_sample(rep));
        l_rol += loss / n;
        g.scaled_add(w1 / n, &grad);
    }
    let (l_kdl, kdl_grads) = kdl_batch_loss(batch, detach)?;
    for (g, k) in grads.iter_mut().zip(&kdl_grads) {
        g.scaled_add(w2, k);
    }
    Ok(MmlTerms { l_rol, l_kdl, l_mml: combine_mml(l_rol, l_kdl, w1, w2), grads })
}

pub fn combine_mml(l_rol: f64, l_kdl: f64, w1: f64, w2: f64) -> f64 {
    w1 * l_rol + w2 * l_kdl
}

#[derive(Debug, Clone)]
pub struct LossReport {
    pub l_ce: f64,
    pub l_tri: f64,
    pub l_rol: f64,
    pub l_kdl: f64,
    pub l_mml: f64,
    pub l_total: f64,
    pub gradients: Gradients,
}

impl LossReport {
    pub fn from_terms(l_ce: f64, l_tri: f64, l_rol: f64, l_kdl: f64, cfg: &LossConfig, gradients: Gradients) -> Self {
        let l_mml = combine_mml(l_rol, l_kdl, cfg.w1, cfg.w2);
        LossReport { l_ce, l_tri, l_rol, l_kdl, l_mml, l_total: l_ce + l_tri + l_mml, gradients }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_ce, self.l_tri, self.l_rol, self.l_kdl, self.l_mml, self.l_total].iter().all(|v| v.is_finite())
            && self.gradients.all_finite()
    }
}

/// Forward and backward through encoder, heads and every loss term for one
/// batch of fully available samples. Identities must be class indices.
pub fn total_loss(model: &Model, batch: &[GridSample], cfg: &LossConfig) -> Result<LossReport> {
    let n = batch.len();
    let dim = model.config().dim;
    let mut raw: Vec<Array2<f64>> = Vec::with_capacity(n);
    let mut caches: Vec<Vec<EncodeCache>> = Vec::with_capacity(n);
    for s in batch {
        let mut slots = Array2::zeros((NUM_SLOTS, dim));
        let mut per_modality = Vec::with_capacity(NUM_MODALITIES);
        for m in Modality::ALL {
            let (f, cache) = model.encoder.encode_with_cache(s.grid(m)?)?;
            slots.row_mut(m.specific_slot()).assign(&f.specific);
            slots.row_mut(m.shared_slot()).assign(&f.shared);
            per_modality.push(cache);
        }
        raw.push(slots);
        caches.push(per_modality);
    }

    let mut raw_grads: Vec<Array2<f64>> = raw.iter().map(|r| Array2::zeros(r.raw_dim())).collect();
    let mut head_grads = ClassifierHeads::zeros(dim, model.heads.classes());
    let ce_scale = 1.0 / (n * NUM_MODALITIES) as f64;
    let mut l_ce = 0.0;
    for ((s, slots), g) in batch.iter().zip(&raw).zip(raw_grads.iter_mut()) {
        for m in Modality::ALL {
            let out = model.heads.forward_backward(
                m,
                slots.row(m.specific_slot()),
                slots.row(m.shared_slot()),
                s.identity as usize,
                cfg.ce_epsilon,
                ce_scale,
                &mut head_grads,
            )?;
            l_ce += out.loss * ce_scale;
            let mut r = g.row_mut(m.specific_slot());
            r += &out.d_specific;
            let mut r = g.row_mut(m.shared_slot());
            r += &out.d_shared;
        }
    }

    let samples = batch
        .iter()
        .zip(&raw)
        .map(|(s, slots)| {
            let representation =
                SampleRepresentation::from_slots(slots.clone(), ModalitySet::ALL)?.normalize_slots()?;
            Ok(LabeledSample { identity: s.identity, camera: s.camera, representation })
        })
        .collect::<Result<Vec<_>>>()?;
    let spec = BatchSpec::new(samples)?;
    let (l_tri, tri_grads) = triplet_loss(&spec, cfg.margin)?;
    let mml = mml_loss(&spec, cfg.w1, cfg.w2, cfg.kdl_detach)?;
    for (i, g) in raw_grads.iter_mut().enumerate() {
        let unit_grad = &tri_grads[i] + &mml.grads[i];
        *g += &normalize_backward(raw[i].view(), unit_grad.view());
    }

    let mut enc_grads = model.encoder.zeros_like();
    for (per_modality, g) in caches.iter().zip(&raw_grads) {
        for (m, cache) in Modality::ALL.iter().zip(per_modality) {
            let d_sp = g.row(m.specific_slot()).to_owned();
            let d_sh = g.row(m.shared_slot()).to_owned();
            model.encoder.backward(cache, &d_sp, &d_sh, &mut enc_grads);
        }
    }
    let mut gradients = enc_grads.to_gradients();
    gradients.extend(head_grads.to_gradients());
    let report = LossReport::from_terms(l_ce, l_tri, mml.l_rol, mml.l_kdl, cfg, gradients);
    Ok(report)
}
