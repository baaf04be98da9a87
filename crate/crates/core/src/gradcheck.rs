//! Central finite-difference checks of every analytic gradient.
//!
//! Each suite compares an analytic gradient with `(f(x + h) - f(x - h)) / 2h`
//! over all inputs and reports the norm-based relative error
//! `|g_analytic - g_fd| / max(|g_analytic|, |g_fd|)`. The discrepancy loss
//! detaches some of its specific-only and shared-only distances, so its
//! reference function freezes those at their unperturbed values; the suite
//! also checks that samples reached only through detached distances get
//! exactly zero gradient. Both detach modes are checked.

use std::fmt;

use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::GridSample;
use crate::encoder::{EncoderConfig, Model, PatchGrid};
use crate::error::Result;
use crate::metric::{
    kdl_batch_loss, kdl_loss, label_smoothing_ce, rol_loss_raw, total_loss, triplet_loss, BatchSpec, ClassifierHeads,
    KdlDetach, LossConfig, PairMask, TargetMatrix,
};
use crate::params::Parameters;
use crate::repr::{LabeledSample, Modality, ModalitySet, SampleRepresentation, NUM_MODALITIES, NUM_SLOTS};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const END_TO_END_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Rol,
    Kdl,
    Triplet,
    Ce,
    Encoder,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Rol, Suite::Kdl, Suite::Triplet, Suite::Ce, Suite::Encoder];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Rol => "rol",
            Suite::Kdl => "kdl",
            Suite::Triplet => "triplet",
            Suite::Ce => "ce",
            Suite::Encoder => "encoder",
        }
    }

    pub fn tolerance(self) -> f64 {
        match self {
            Suite::Encoder => END_TO_END_TOLERANCE,
            _ => TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub step: f64,
    /// Scales the analytic gradient of one suite by 1.01; used to confirm a
    /// broken gradient is caught.
    pub corrupt: Option<Suite>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions { seed: 0, step: STEP, corrupt: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub max_rel_error: f64,
    pub tolerance: f64,
    /// Number of scalar inputs differentiated.
    pub inputs: usize,
    /// `Some(ok)` when the suite also checks detached branches.
    pub detached_zero: Option<bool>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance && self.detached_zero != Some(false)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<8} {} max_rel_error={:.3e} tol={:.0e} inputs={}",
            self.suite.name(),
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_rel_error,
            self.tolerance,
            self.inputs
        )?;
        if let Some(ok) = self.detached_zero {
            write!(f, " detached_zero={}", if ok { "yes" } else { "NO" })?;
        }
        Ok(())
    }
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, b)| a - b));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_differences(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut work = x.to_vec();
    (0..x.len())
        .map(|i| {
            work[i] = x[i] + h;
            let plus = f(&work);
            work[i] = x[i] - h;
            let minus = f(&work);
            work[i] = x[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

fn gaussian(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.sample(StandardNormal))
}

fn unit_rows(mut a: Array2<f64>) -> Array2<f64> {
    for mut row in a.rows_mut() {
        let n = row.dot(&row).sqrt();
        row.mapv_inplace(|x| x / n);
    }
    a
}

/// A random batch of `ids` identities with `per_id` unit-slot samples each.
fn random_batch(rng: &mut ChaCha8Rng, ids: u32, per_id: u32, dim: usize) -> BatchSpec {
    let samples = (0..ids * per_id)
        .map(|i| LabeledSample {
            identity: i / per_id,
            camera: 0,
            representation: SampleRepresentation::from_slots(
                unit_rows(gaussian(rng, (NUM_SLOTS, dim))),
                ModalitySet::ALL,
            )
            .expect("full set"),
        })
        .collect();
    BatchSpec::new(samples).expect("valid batch")
}

fn flatten_batch(batch: &BatchSpec) -> Vec<f64> {
    batch.samples.iter().flat_map(|s| s.representation.slots().iter().copied().collect::<Vec<_>>()).collect()
}

fn rebuild_batch(template: &BatchSpec, flat: &[f64]) -> BatchSpec {
    let per = NUM_SLOTS * template.samples[0].representation.dim();
    let samples = template
        .samples
        .iter()
        .zip(flat.chunks(per))
        .map(|(s, chunk)| {
            let slots = Array2::from_shape_vec((NUM_SLOTS, chunk.len() / NUM_SLOTS), chunk.to_vec()).expect("sized");
            LabeledSample {
                identity: s.identity,
                camera: s.camera,
                representation: SampleRepresentation::from_slots(slots, ModalitySet::ALL).expect("full set"),
            }
        })
        .collect();
    BatchSpec::new(samples).expect("valid batch")
}

fn flatten_grads(g: &[Array2<f64>]) -> Vec<f64> {
    g.iter().flat_map(|a| a.iter().copied().collect::<Vec<_>>()).collect()
}

fn maybe_corrupt(opts: &GradcheckOptions, suite: Suite, mut g: Vec<f64>) -> Vec<f64> {
    if opts.corrupt == Some(suite) {
        g.iter_mut().for_each(|x| *x *= 1.01);
    }
    g
}

fn report(suite: Suite, analytic: &[f64], numeric: &[f64], detached_zero: Option<bool>) -> SuiteReport {
    SuiteReport {
        suite,
        max_rel_error: relative_error(analytic, numeric),
        tolerance: suite.tolerance(),
        inputs: analytic.len(),
        detached_zero,
    }
}

/// ROL on raw slots of samples with every non-empty modality subset.
pub fn check_rol(opts: &GradcheckOptions) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let target = TargetMatrix::block();
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for set in ModalitySet::non_empty_subsets() {
        let raw = SampleRepresentation::from_slots(gaussian(&mut rng, (NUM_SLOTS, 5)), set)?;
        let mask = PairMask::for_sample(&raw);
        let (_, g) = rol_loss_raw(raw.slots(), &target, &mask)?;
        let x: Vec<f64> = raw.slots().iter().copied().collect();
        let fd = central_differences(&x, opts.step, |v| {
            let a = Array2::from_shape_vec(raw.slots().raw_dim(), v.to_vec()).expect("sized");
            rol_loss_raw(a.view(), &target, &mask).expect("non-degenerate").0
        });
        analytic.extend(g.iter().copied());
        numeric.extend(fd);
    }
    Ok(report(Suite::Rol, &maybe_corrupt(opts, Suite::Rol, analytic), &numeric, None))
}

#[derive(Debug, Clone, Copy)]
struct Frozen {
    pos_sp: f64,
    pos_sh: f64,
    neg_sp: f64,
    neg_sh: f64,
}

fn part_dist(a: &Array2<f64>, b: &Array2<f64>, rows: std::ops::Range<usize>) -> f64 {
    let d = &a.slice(s![rows.clone(), ..]) - &b.slice(s![rows, ..]);
    d.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn full_dist(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let d = a - b;
    d.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Detached maxima / minima of the specific-only and shared-only distances.
fn frozen_stats(slots: &[Array2<f64>], ids: &[u32]) -> Vec<Frozen> {
    let m = NUM_MODALITIES;
    (0..slots.len())
        .map(|a| {
            let mut f = Frozen {
                pos_sp: f64::NEG_INFINITY,
                pos_sh: f64::NEG_INFINITY,
                neg_sp: f64::INFINITY,
                neg_sh: f64::INFINITY,
            };
            for t in (0..slots.len()).filter(|&t| t != a) {
                let (sp, sh) = (part_dist(&slots[a], &slots[t], 0..m), part_dist(&slots[a], &slots[t], m..2 * m));
                if ids[t] == ids[a] {
                    f.pos_sp = f.pos_sp.max(sp);
                    f.pos_sh = f.pos_sh.max(sh);
                } else {
                    f.neg_sp = f.neg_sp.min(sp);
                    f.neg_sh = f.neg_sh.min(sh);
                }
            }
            f
        })
        .collect()
}

/// Scalar-loop discrepancy loss with the detached terms held at `frozen`.
fn kdl_reference(slots: &[Array2<f64>], ids: &[u32], frozen: &[Frozen], detach: KdlDetach) -> f64 {
    let live = frozen_stats(slots, ids);
    let mut total = 0.0;
    let mut anchors = 0usize;
    for a in 0..slots.len() {
        let mut pos = f64::NEG_INFINITY;
        let mut neg = f64::INFINITY;
        for t in (0..slots.len()).filter(|&t| t != a) {
            let d = full_dist(&slots[a], &slots[t]);
            if ids[t] == ids[a] {
                pos = pos.max(d);
            } else {
                neg = neg.min(d);
            }
        }
        if pos.is_infinite() || neg.is_infinite() {
            continue;
        }
        let f = frozen[a];
        let (pos_sp, pos_sh) = match detach {
            KdlDetach::Negative => (live[a].pos_sp, live[a].pos_sh),
            KdlDetach::Both => (f.pos_sp, f.pos_sh),
        };
        let d_p = pos / (pos + pos_sp + pos_sh + 1e-12);
        let d_n = neg / (neg + f.neg_sp + f.neg_sh + 1e-12);
        total += d_p.abs() + (d_n - 1.0).abs();
        anchors += 1;
    }
    total / anchors as f64
}

fn batch_slots(batch: &BatchSpec) -> (Vec<Array2<f64>>, Vec<u32>) {
    (
        batch.samples.iter().map(|s| s.representation.slots().to_owned()).collect(),
        batch.samples.iter().map(|s| s.identity).collect(),
    )
}

/// Index of the extreme of `dist` over the positives (`farthest`) or the
/// negatives of anchor `a`.
fn extreme(
    slots: &[Array2<f64>],
    ids: &[u32],
    a: usize,
    positives: bool,
    dist: impl Fn(&Array2<f64>, &Array2<f64>) -> f64,
) -> Option<usize> {
    (0..slots.len())
        .filter(|&t| t != a && (ids[t] == ids[a]) == positives)
        .map(|t| (dist(&slots[a], &slots[t]), t))
        .reduce(|x, y| if (positives && y.0 > x.0) || (!positives && y.0 < x.0) { y } else { x })
        .map(|(_, t)| t)
}

/// True when, for every anchor, only the samples at live distances receive
/// gradient: the anchor, its hardest full-feature positive and negative and,
/// with a live positive branch, its farthest specific-only and shared-only
/// positives.
fn detached_branches_are_zero(batch: &BatchSpec, detach: KdlDetach) -> Result<bool> {
    let (slots, ids) = batch_slots(batch);
    let m = NUM_MODALITIES;
    for a in 0..slots.len() {
        let (_, grads) = kdl_loss(batch, a, detach)?;
        let mut live =
            vec![Some(a), extreme(&slots, &ids, a, true, full_dist), extreme(&slots, &ids, a, false, full_dist)];
        if detach == KdlDetach::Negative {
            live.push(extreme(&slots, &ids, a, true, |x, y| part_dist(x, y, 0..m)));
            live.push(extreme(&slots, &ids, a, true, |x, y| part_dist(x, y, m..2 * m)));
        }
        for (t, g) in grads.iter().enumerate() {
            if !live.contains(&Some(t)) && g.iter().any(|&v| v != 0.0) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

pub fn check_kdl(opts: &GradcheckOptions) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1));
    // three identities of four: each anchor has several positives, so the
    // specific-only and shared-only farthest positives can differ from the
    // full-feature one
    let batch = random_batch(&mut rng, 3, 4, 4);
    let (slots, ids) = batch_slots(&batch);
    let frozen = frozen_stats(&slots, &ids);
    let x = flatten_batch(&batch);
    let per = NUM_SLOTS * 4;
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    let mut zero = true;
    for detach in [KdlDetach::Negative, KdlDetach::Both] {
        let (_, grads) = kdl_batch_loss(&batch, detach)?;
        analytic.extend(flatten_grads(&grads));
        numeric.extend(central_differences(&x, opts.step, |v| {
            let s: Vec<Array2<f64>> =
                v.chunks(per).map(|c| Array2::from_shape_vec((NUM_SLOTS, 4), c.to_vec()).expect("sized")).collect();
            kdl_reference(&s, &ids, &frozen, detach)
        }));
        zero &= detached_branches_are_zero(&batch, detach)?;
    }
    let analytic = maybe_corrupt(opts, Suite::Kdl, analytic);
    Ok(report(Suite::Kdl, &analytic, &numeric, Some(zero)))
}

pub fn check_triplet(opts: &GradcheckOptions) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(2));
    let batch = random_batch(&mut rng, 3, 3, 4);
    // a margin large enough that every hinge is active
    let margin = 2.0;
    let (_, grads) = triplet_loss(&batch, margin)?;
    let numeric = central_differences(&flatten_batch(&batch), opts.step, |v| {
        triplet_loss(&rebuild_batch(&batch, v), margin).expect("valid").0
    });
    let analytic = maybe_corrupt(opts, Suite::Triplet, flatten_grads(&grads));
    Ok(report(Suite::Triplet, &analytic, &numeric, None))
}

/// Label-smoothing CE on raw logits, then through one classifier head with
/// respect to both its parameters and its input features.
pub fn check_ce(opts: &GradcheckOptions) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(3));
    let eps = crate::metric::ce::DEFAULT_CE_EPSILON;
    let logits: Vec<f64> = (0..7).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let (_, g_logits) = label_smoothing_ce(Array1::from(logits.clone()).view(), 2, eps)?;
    let mut analytic: Vec<f64> = g_logits.to_vec();
    let mut numeric = central_differences(&logits, opts.step, |v| {
        label_smoothing_ce(Array1::from(v.to_vec()).view(), 2, eps).unwrap().0
    });

    let (dim, classes, m, id) = (4, 5, Modality::Nir, 3);
    let heads = ClassifierHeads::init(dim, classes, 0.5, &mut rng);
    let feat: Vec<f64> = (0..2 * dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let loss_at = |h: &ClassifierHeads, f: &[f64]| {
        let mut sink = ClassifierHeads::zeros(dim, classes);
        let x = Array1::from(f.to_vec());
        h.forward_backward(m, x.slice(s![..dim]), x.slice(s![dim..]), id, eps, 1.0, &mut sink).unwrap().loss
    };
    let mut param_grads = ClassifierHeads::zeros(dim, classes);
    let x = Array1::from(feat.clone());
    let out = heads.forward_backward(m, x.slice(s![..dim]), x.slice(s![dim..]), id, eps, 1.0, &mut param_grads)?;
    analytic.extend(out.d_specific.iter().chain(out.d_shared.iter()));
    numeric.extend(central_differences(&feat, opts.step, |v| loss_at(&heads, v)));

    let flat: Vec<f64> = heads.named_tensors().iter().flat_map(|(_, t)| t.to_vec()).collect();
    analytic.extend(param_grads.named_tensors().iter().flat_map(|(_, t)| t.to_vec()));
    let mut probe = heads.clone();
    numeric.extend(central_differences(&flat, opts.step, |v| {
        set_flat(&mut probe, v);
        loss_at(&probe, &feat)
    }));
    Ok(report(Suite::Ce, &maybe_corrupt(opts, Suite::Ce, analytic), &numeric, None))
}

fn set_flat<P: Parameters + ?Sized>(params: &mut P, flat: &[f64]) {
    let mut offset = 0;
    for (_, t) in params.named_tensors_mut() {
        t.copy_from_slice(&flat[offset..offset + t.len()]);
        offset += t.len();
    }
}

fn flat_params<P: Parameters + ?Sized>(params: &P) -> Vec<f64> {
    params.named_tensors().iter().flat_map(|(_, t)| t.to_vec()).collect()
}

/// Normalized slots of every sample of `batch` under `model`.
fn encode_unit(model: &Model, batch: &[GridSample]) -> Vec<Array2<f64>> {
    batch
        .iter()
        .map(|s| {
            let mut slots = Array2::zeros((NUM_SLOTS, model.config().dim));
            for m in Modality::ALL {
                let f = model.encoder.encode(s.grid(m).expect("full sample")).expect("shape");
                slots.row_mut(m.specific_slot()).assign(&f.specific);
                slots.row_mut(m.shared_slot()).assign(&f.shared);
            }
            unit_rows(slots)
        })
        .collect()
}

/// The whole objective through a one-block encoder and the heads, with
/// respect to every parameter.
pub fn check_encoder(opts: &GradcheckOptions) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(4));
    let config = EncoderConfig { dim: 8, depth: 1, heads: 2, num_patches: 3, patch_dim: 5, decoupled: true };
    let (ids, per_id) = (3u32, 2u32);
    let mut model = Model::init(config, ids as usize, opts.seed)?;
    // larger weights than the default init so every path carries signal
    for (_, t) in model.named_tensors_mut() {
        for v in t.iter_mut() {
            *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let batch: Vec<GridSample> = (0..ids * per_id)
        .map(|i| GridSample {
            identity: i / per_id,
            camera: i % per_id,
            grids: Modality::ALL
                .iter()
                .map(|&m| PatchGrid::new(m, gaussian(&mut rng, (3, 5))).expect("finite"))
                .collect(),
        })
        .collect();
    let cfg = LossConfig { margin: 5.0, ..Default::default() };
    let smooth_cfg = LossConfig { w2: 0.0, ..cfg };
    let labels: Vec<u32> = batch.iter().map(|s| s.identity).collect();

    let rep = total_loss(&model, &batch, &cfg)?;
    let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<f64> =
        names.iter().flat_map(|n| rep.gradients.get(n).expect("every parameter").to_vec()).collect();

    let frozen = frozen_stats(&encode_unit(&model, &batch), &labels);
    let x = flat_params(&model);
    let mut probe = model.clone();
    let numeric = central_differences(&x, opts.step, |v| {
        set_flat(&mut probe, v);
        let rest = total_loss(&probe, &batch, &smooth_cfg).expect("finite").l_total;
        rest + cfg.w2 * kdl_reference(&encode_unit(&probe, &batch), &labels, &frozen, cfg.kdl_detach)
    });
    Ok(report(Suite::Encoder, &maybe_corrupt(opts, Suite::Encoder, analytic), &numeric, None))
}

pub fn run_suite(suite: Suite, opts: &GradcheckOptions) -> Result<SuiteReport> {
    match suite {
        Suite::Rol => check_rol(opts),
        Suite::Kdl => check_kdl(opts),
        Suite::Triplet => check_triplet(opts),
        Suite::Ce => check_ce(opts),
        Suite::Encoder => check_encoder(opts),
    }
}

pub fn run_all(opts: &GradcheckOptions) -> Result<Vec<SuiteReport>> {
    Suite::ALL.iter().map(|&s| run_suite(s, opts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
        assert!((relative_error(&[1.0, 0.0], &[0.0, 0.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn central_differences_of_a_cubic() {
        let g = central_differences(&[2.0, -1.0], 1e-5, |v| v[0].powi(3) + 3.0 * v[1]);
        assert!((g[0] - 12.0).abs() < 1e-6);
        assert!((g[1] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn loss_suites_pass_and_corruption_fails() {
        for suite in [Suite::Rol, Suite::Kdl, Suite::Triplet, Suite::Ce] {
            let ok = run_suite(suite, &GradcheckOptions::default()).unwrap();
            assert!(ok.passed(), "{ok}");
            let bad = run_suite(suite, &GradcheckOptions { corrupt: Some(suite), ..Default::default() }).unwrap();
            assert!(!bad.passed(), "{bad}");
        }
    }
}
