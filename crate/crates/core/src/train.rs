//! PK-sampled training, feature extraction and the ablation variants.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::data::{generate_dataset, GridSample};
use crate::encoder::{Adam, AdamConfig, Model};
use crate::error::{Error, Result};
use crate::evalkit::{run_scenario_matrix, EvalReport};
use crate::metric::total_loss;
use crate::repr::{build_representation, LabeledSample, Modality, ModalitySet};

pub const LOG_HEADER: &str = "epoch,l_ce,l_tri,l_rol,l_kdl,l_mml,l_total";

/// Batches of `p` identities with `k` samples each.
///
/// Every epoch, each identity's samples are shuffled and cut into chunks of
/// `k` (the last chunk is padded by resampling); chunks are then drawn
/// identity-wise at random until fewer than `p` identities have chunks left.
#[derive(Debug, Clone)]
pub struct PkSampler {
    by_identity: BTreeMap<u32, Vec<usize>>,
    p: usize,
    k: usize,
    rng: ChaCha8Rng,
}

impl PkSampler {
    pub fn new(samples: &[GridSample], p: usize, k: usize, seed: u64) -> Result<Self> {
        let mut by_identity: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            by_identity.entry(s.identity).or_default().push(i);
        }
        if by_identity.len() < p {
            return Err(Error::Config(format!("{} identities cannot fill batches of p = {p}", by_identity.len())));
        }
        if p < 2 || k < 1 {
            return Err(Error::Config("p must be at least 2 and k at least 1".into()));
        }
        Ok(PkSampler { by_identity, p, k, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    /// Sample indices for every batch of the next epoch.
    pub fn epoch(&mut self) -> Vec<Vec<usize>> {
        let mut chunks: BTreeMap<u32, Vec<Vec<usize>>> = BTreeMap::new();
        for (&id, idx) in &self.by_identity {
            let mut idx = idx.clone();
            idx.shuffle(&mut self.rng);
            while idx.len() % self.k != 0 {
                let extra = *idx.choose(&mut self.rng).expect("non-empty");
                idx.push(extra);
            }
            chunks.insert(id, idx.chunks(self.k).map(<[usize]>::to_vec).collect());
        }
        let mut batches = Vec::new();
        loop {
            let mut ready: Vec<u32> = chunks.iter().filter(|(_, c)| !c.is_empty()).map(|(&id, _)| id).collect();
            if ready.len() < self.p {
                break;
            }
            ready.shuffle(&mut self.rng);
            let mut batch = Vec::with_capacity(self.p * self.k);
            for id in &ready[..self.p] {
                batch.extend(chunks.get_mut(id).expect("listed").pop().expect("non-empty"));
            }
            batches.push(batch);
        }
        batches
    }
}

/// Mean loss terms over one epoch's batches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_ce: f64,
    pub l_tri: f64,
    pub l_rol: f64,
    pub l_kdl: f64,
    pub l_mml: f64,
    pub l_total: f64,
}

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.epoch, self.l_ce, self.l_tri, self.l_rol, self.l_kdl, self.l_mml, self.l_total
        )
    }
}

pub fn render_log(log: &[EpochLog]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for row in log {
        writeln!(out, "{}", row.csv_row()).unwrap();
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Parameters after the epoch with the lowest mean total loss.
    pub best: Model,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

/// Trains from scratch on `train`, whose identities must be `0..C`.
pub fn train(cfg: &RunConfig, train: &[GridSample], mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let classes = train.iter().map(|s| s.identity as usize + 1).max().unwrap_or(0);
    let mut model = Model::init(cfg.encoder, classes, cfg.seed)?;
    let mut adam = Adam::new(AdamConfig { lr: cfg.optim.lr, ..Default::default() });
    let mut sampler = PkSampler::new(train, cfg.optim.p, cfg.optim.k, cfg.seed ^ 0x5eed)?;
    let mut log = Vec::with_capacity(cfg.optim.epochs);
    let mut best = (f64::INFINITY, 0, model.clone());
    for epoch in 1..=cfg.optim.epochs {
        let batches = sampler.epoch();
        let mut sums = [0.0; 6];
        for idx in &batches {
            let batch: Vec<GridSample> = idx.iter().map(|&i| train[i].clone()).collect();
            let report = total_loss(&model, &batch, &cfg.loss)?;
            if !report.is_finite() {
                return Err(Error::Diverged(format!("non-finite loss in epoch {epoch}")));
            }
            adam.step(&mut model, &report.gradients)?;
            let terms = [report.l_ce, report.l_tri, report.l_rol, report.l_kdl, report.l_mml, report.l_total];
            for (s, t) in sums.iter_mut().zip(terms) {
                *s += t;
            }
        }
        let n = batches.len().max(1) as f64;
        let [l_ce, l_tri, l_rol, l_kdl, l_mml, l_total] = sums.map(|s| s / n);
        let row = EpochLog { epoch, l_ce, l_tri, l_rol, l_kdl, l_mml, l_total };
        on_epoch(&row);
        log.push(row);
        if l_total < best.0 {
            best = (l_total, epoch, model.clone());
        }
    }
    Ok(TrainOutcome { model, best: best.2, best_epoch: best.1, log })
}

/// Encodes every modality of every sample and normalizes the slots.
pub fn extract(model: &Model, samples: &[GridSample]) -> Result<Vec<LabeledSample>> {
    samples
        .par_iter()
        .map(|s| {
            let features =
                Modality::ALL.iter().map(|&m| model.encoder.encode(s.grid(m)?)).collect::<Result<Vec<_>>>()?;
            let representation = build_representation(&features, ModalitySet::ALL)?.normalize_slots()?;
            Ok(LabeledSample { identity: s.identity, camera: s.camera, representation })
        })
        .collect()
}

/// The four rows of the ablation: the coupled baseline, then decoupled
/// training with no metric losses, with ROL, and with ROL and KDL.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Baseline,
    Mdl,
    MdlRol,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::Mdl, Variant::MdlRol, Variant::Full];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Mdl => "MDL",
            Variant::MdlRol => "MDL+ROL",
            Variant::Full => "MDL+ROL+KDL",
        }
    }

    /// `cfg` adjusted for this variant; the full model keeps `cfg`'s weights.
    pub fn apply(self, cfg: &RunConfig) -> RunConfig {
        let mut c = cfg.clone();
        c.encoder.decoupled = self != Variant::Baseline;
        match self {
            Variant::Baseline | Variant::Mdl => {
                c.loss.w1 = 0.0;
                c.loss.w2 = 0.0;
            }
            Variant::MdlRol => c.loss.w2 = 0.0,
            Variant::Full => {}
        }
        c
    }
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub outcome: TrainOutcome,
    pub test_features: Vec<LabeledSample>,
    pub reports: Vec<EvalReport>,
}

/// Generate data, train, extract the test split with the final model and
/// evaluate the configured scenarios.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineResult> {
    let data = generate_dataset(&cfg.data)?;
    let outcome = train(cfg, &data.train, |_| {})?;
    let test_features = extract(&outcome.model, &data.test)?;
    let reports = run_scenario_matrix(&test_features, &cfg.eval.scenario_specs()?, cfg.eval.exclude_same_camera)?;
    Ok(PipelineResult { outcome, test_features, reports })
}
