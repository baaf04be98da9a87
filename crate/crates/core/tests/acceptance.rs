//! Acceptance run: one PASS/FAIL line per criterion. Criteria 7 and 8 train
//! twelve models on the default dataset. Failures are reported without
//! failing the test run unless `ANYREID_ACCEPTANCE_STRICT=1` is set.

mod common;

use std::time::{Duration, Instant};

use anyreid::config::RunConfig;
use anyreid::data::{generate_dataset, read_store, write_store, GridSample, SyntheticConfig};
use anyreid::encoder::{write_checkpoint, EncoderConfig, Model};
use anyreid::evalkit::{
    average_precision, cmc_at_k, random_ranking_map, rank_scenario, render_csv, QueryRanking, RankingResult,
    SampleLabel, ScenarioSpec,
};
use anyreid::gradcheck::{run_all, GradcheckOptions, STEP};
use anyreid::metric::{kdl_loss, rol_loss, total_loss, BatchSpec, KdlDetach, LossConfig, PairMask, TargetMatrix};
use anyreid::params::Parameters;
use anyreid::repr::{LabeledSample, ModalitySet, SampleRepresentation, NUM_SLOTS};
use anyreid::sim::oracle::brute_force_similarity_oracle;
use anyreid::sim::sim_total;
use anyreid::train::{run_pipeline, Variant};
use anyreid::Error;
use common::{raw_slots, reference_similarity, unit_rep};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn similarity_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let subsets: Vec<ModalitySet> = ModalitySet::non_empty_subsets().collect();
    let pairs: Vec<(ModalitySet, ModalitySet)> =
        subsets.iter().flat_map(|&q| subsets.iter().map(move |&g| (q, g))).collect();
    let mut worst: f64 = 0.0;
    for n in 0..500 {
        let (qs, gs) = pairs[n % pairs.len()];
        let dim = 2 + n % 15;
        let (q, g) = (unit_rep(&mut rng, dim, qs), unit_rep(&mut rng, dim, gs));
        let got = sim_total(&q, &g).sim_total;
        worst = worst.max((got - brute_force_similarity_oracle(&q, &g).sim_total).abs());
        worst = worst.max((got - reference_similarity(&q, &g).2).abs());
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-9 && elapsed < Duration::from_secs(60),
        format!("500 pairs over {} subset pairs, max |delta| {worst:.2e}, {:.2}s", pairs.len(), elapsed.as_secs_f64()),
    )
}

fn similarity_symmetry_and_scale() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let (mut asym, mut scale): (f64, f64) = (0.0, 0.0);
    let norm = |s: Array2<f64>, set| SampleRepresentation::from_slots(s, set).unwrap().normalize_slots().unwrap();
    for n in 0..500 {
        let qs = ModalitySet::from_bits(1 + (n % 7) as u8);
        let gs = ModalitySet::from_bits(1 + (n / 7 % 7) as u8);
        let (rq, rg) = (raw_slots(&mut rng, 6), raw_slots(&mut rng, 6));
        let (q, g) = (norm(rq.clone(), qs), norm(rg.clone(), gs));
        let base = sim_total(&q, &g).sim_total;
        asym = asym.max((base - sim_total(&g, &q).sim_total).abs());
        for c in [0.5, 3.0, 100.0] {
            let scaled = sim_total(&norm(&rq * c, qs), &norm(&rg * c, gs)).sim_total;
            scale = scale.max((base - scaled).abs());
        }
    }
    outcome(asym <= 1e-12 && scale < 1e-9, format!("max asymmetry {asym:.2e}, max scale drift {scale:.2e}"))
}

fn rol_exactness() -> Outcome {
    let full = PairMask::from_mask(&[true; NUM_SLOTS]);
    let rep =
        |s: Array2<f64>| SampleRepresentation::from_slots(s, ModalitySet::ALL).unwrap().normalize_slots().unwrap();
    let mut ideal = Array2::zeros((NUM_SLOTS, 5));
    for i in 0..3 {
        ideal[[i, i]] = 1.0;
        ideal[[3 + i, 4]] = 1.0;
    }
    let (zero, _) = rol_loss(&rep(ideal), &TargetMatrix::block(), &full).unwrap();
    let (equal, _) = rol_loss(&rep(Array2::ones((NUM_SLOTS, 5))), &TargetMatrix::block(), &full).unwrap();
    outcome(zero.abs() <= 1e-12 && (equal - 24.0).abs() <= 1e-9, format!("ideal {zero:.3e}, all-equal {equal:.12}"))
}

fn kdl_closed_form() -> Outcome {
    let sample = |identity, entries: &[(usize, f64)]| {
        let mut s = Array2::zeros((NUM_SLOTS, 1));
        for &(k, v) in entries {
            s[[k, 0]] = v;
        }
        LabeledSample {
            identity,
            camera: 0,
            representation: SampleRepresentation::from_slots(s, ModalitySet::ALL).unwrap(),
        }
    };
    // anchor at the origin; the positive sits at specific distance 3 and
    // shared distance 4, the negative at 6 and 8
    let batch =
        BatchSpec::new(vec![sample(0, &[]), sample(0, &[(0, 3.0), (3, 4.0)]), sample(1, &[(1, 6.0), (5, 8.0)])])
            .unwrap();
    let mut worst: f64 = 0.0;
    for detach in [KdlDetach::Negative, KdlDetach::Both] {
        let (t, _) = kdl_loss(&batch, 0, detach).unwrap();
        worst = worst.max((t.loss - 1.0).abs());
    }
    outcome(worst <= 1e-9, format!("l_kdl = 1 within {worst:.2e}"))
}

/// Directional derivative of the objective (no KDL) through a d = 16,
/// one-block encoder against central differences.
fn encoder_jvp() -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let config = EncoderConfig { dim: 16, depth: 1, heads: 4, num_patches: 4, patch_dim: 6, decoupled: true };
    let data = SyntheticConfig {
        num_identities: 6,
        test_identities: 3,
        samples_per_identity: 2,
        latent_dim: 4,
        num_patches: 4,
        patch_dim: 6,
        ..Default::default()
    };
    let batch: Vec<GridSample> = generate_dataset(&data).unwrap().train;
    let mut model = Model::init(config, 3, 1).unwrap();
    for (_, t) in model.named_tensors_mut() {
        for v in t.iter_mut() {
            *v += 0.2 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let cfg = LossConfig { w2: 0.0, margin: 5.0, ..Default::default() };
    let report = total_loss(&model, &batch, &cfg).unwrap();
    let mut worst: f64 = 0.0;
    let directions = 8;
    for _ in 0..directions {
        let dir: Vec<Vec<f64>> = model
            .named_tensors()
            .iter()
            .map(|(_, t)| t.iter().map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let analytic: f64 = model
            .named_tensors()
            .iter()
            .zip(&dir)
            .map(|((name, _), d)| report.gradients.get(name).unwrap().iter().zip(d).map(|(g, v)| g * v).sum::<f64>())
            .sum();
        let shifted = |sign: f64| {
            let mut m = model.clone();
            for ((_, t), d) in m.named_tensors_mut().into_iter().zip(&dir) {
                for (x, v) in t.iter_mut().zip(d) {
                    *x += sign * STEP * v;
                }
            }
            total_loss(&m, &batch, &cfg).unwrap().l_total
        };
        let numeric = (shifted(1.0) - shifted(-1.0)) / (2.0 * STEP);
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8));
    }
    (worst, directions)
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let reports = match run_all(&GradcheckOptions::default()) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let (jvp, directions) = encoder_jvp();
    let elapsed = start.elapsed();
    let zero = reports.iter().all(|r| r.detached_zero != Some(false));
    let passed = reports.iter().all(|r| r.passed()) && zero && jvp < 1e-3 && elapsed < Duration::from_secs(300);
    let mut detail: Vec<String> =
        reports.iter().map(|r| format!("{} {:.1e}", r.suite.name(), r.max_rel_error)).collect();
    detail.push(format!("d=16 encoder jvp {jvp:.1e} over {directions} directions"));
    detail.push(format!("detached zero {}", if zero { "yes" } else { "no" }));
    detail.push(format!("{:.1}s", elapsed.as_secs_f64()));
    outcome(passed, detail.join(", "))
}

fn metric_correctness() -> Outcome {
    let mut patterns = 0usize;
    let mut bad = Vec::new();
    for len in 1..=10usize {
        for bits in 0u32..1 << len {
            let m: Vec<bool> = (0..len).map(|i| bits >> i & 1 == 1).collect();
            patterns += 1;
            // precision at each positive, summed over positives
            let positives: Vec<usize> = (0..len).filter(|&i| m[i]).collect();
            let oracle = (!positives.is_empty()).then(|| {
                positives.iter().enumerate().map(|(j, &i)| (j + 1) as f64 / (i + 1) as f64).sum::<f64>()
                    / positives.len() as f64
            });
            let ok = match (average_precision(&m), oracle) {
                (Some(a), Some(b)) => (a - b).abs() < 1e-12,
                (a, b) => a == b,
            };
            let r = RankingResult {
                queries: vec![QueryRanking {
                    query: SampleLabel { id: 0, identity: 0, camera: 0 },
                    order: (0..len).collect(),
                    scores: vec![0.0; len],
                    matches: m.clone(),
                }],
            };
            let cmc_ok = positives
                .first()
                .map_or(true, |&first| (1..=10).all(|k| cmc_at_k(&r, k) == if first < k { 1.0 } else { 0.0 }));
            if !(ok && cmc_ok) {
                bad.push(format!("{m:?}"));
            }
        }
    }
    let hand = (average_precision(&[true, false, true]).unwrap() - 5.0 / 6.0).abs() < 1e-15;
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let mut monotone = true;
    for _ in 0..200 {
        let samples: Vec<LabeledSample> = (0..30)
            .map(|i| LabeledSample {
                identity: rng.gen_range(0..6),
                camera: i % 3,
                representation: unit_rep(&mut rng, 4, ModalitySet::ALL),
            })
            .collect();
        let spec = ScenarioSpec::default_list()[rng.gen_range(0..8)];
        let r = rank_scenario(&samples, &spec, rng.gen_bool(0.5)).unwrap();
        let cmc: Vec<f64> = (1..=30).map(|k| cmc_at_k(&r, k)).collect();
        monotone &= cmc.windows(2).all(|w| w[0] <= w[1]);
    }
    outcome(
        bad.is_empty() && hand && monotone,
        format!("{patterns} label patterns, {} mismatches, [pos,neg,pos] = 5/6: {hand}, CMC monotone on 200 reports: {monotone}", bad.len()),
    )
}

struct AblationRun {
    variant: Variant,
    seed: u64,
    mean_map: f64,
    r_to_n: f64,
    r_to_n_random: f64,
}

fn ablation() -> Result<(Vec<AblationRun>, Duration), Error> {
    let start = Instant::now();
    let base = RunConfig::default();
    let r_to_n: ScenarioSpec = "R-to-N".parse()?;
    let mut runs = Vec::new();
    for variant in Variant::ALL {
        for seed in SEEDS {
            let cfg = variant.apply(&base.clone().with_seed(seed));
            let t = Instant::now();
            let out = run_pipeline(&cfg)?;
            let mean_map = out.reports.iter().map(|r| r.map).sum::<f64>() / out.reports.len() as f64;
            let ranking = rank_scenario(&out.test_features, &r_to_n, cfg.eval.exclude_same_camera)?;
            let r_to_n_map = anyreid::evalkit::mean_average_precision(&ranking)?;
            let random = random_ranking_map(&ranking)?;
            eprintln!(
                "  {:<12} seed {seed}: mean mAP {:.4}, R-to-N {:.4} (random {:.4}), {:.0}s",
                variant.name(),
                mean_map,
                r_to_n_map,
                random,
                t.elapsed().as_secs_f64()
            );
            runs.push(AblationRun { variant, seed, mean_map, r_to_n: r_to_n_map, r_to_n_random: random });
        }
    }
    Ok((runs, start.elapsed()))
}

fn seed_mean(runs: &[AblationRun], v: Variant, f: impl Fn(&AblationRun) -> f64) -> f64 {
    let picked: Vec<f64> = runs.iter().filter(|r| r.variant == v).map(f).collect();
    picked.iter().sum::<f64>() / picked.len() as f64
}

fn ablation_order(runs: &[AblationRun], elapsed: Duration) -> Outcome {
    let means: Vec<f64> = Variant::ALL.iter().map(|&v| seed_mean(runs, v, |r| r.mean_map)).collect();
    let ordered = means.windows(2).all(|w| w[1] >= w[0]);
    let gap = 100.0 * (means[3] - means[0]);
    let mut listing = format!("{} {:.2}", Variant::ALL[0].name(), 100.0 * means[0]);
    for (i, v) in Variant::ALL.iter().enumerate().skip(1) {
        let relation = if means[i] >= means[i - 1] { "<=" } else { ">" };
        listing.push_str(&format!(" {relation} {} {:.2}", v.name(), 100.0 * means[i]));
    }
    outcome(
        ordered && gap >= 5.0 && elapsed < Duration::from_secs(1800),
        format!(
            "mean mAP over seeds {:?}: {}; full - baseline {gap:.2} points; {} runs in {:.0}s",
            SEEDS,
            listing,
            runs.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn mismatched_signal(runs: &[AblationRun]) -> Outcome {
    let map = 100.0 * seed_mean(runs, Variant::Full, |r| r.r_to_n);
    let random = 100.0 * seed_mean(runs, Variant::Full, |r| r.r_to_n_random);
    let per_seed: Vec<String> = runs
        .iter()
        .filter(|r| r.variant == Variant::Full)
        .map(|r| format!("{}:{:.2}", r.seed, 100.0 * r.r_to_n))
        .collect();
    outcome(
        map - random >= 10.0,
        format!(
            "full model R-to-N mAP {map:.2} vs random {random:.2} (+{:.2}); per seed {}",
            map - random,
            per_seed.join(" ")
        ),
    )
}

fn tiny_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default().with_seed(seed);
    cfg.data = SyntheticConfig {
        num_identities: 12,
        test_identities: 4,
        samples_per_identity: 4,
        latent_dim: 4,
        num_patches: 4,
        patch_dim: 6,
        ..cfg.data
    };
    cfg.encoder = EncoderConfig { dim: 8, depth: 1, heads: 2, num_patches: 4, patch_dim: 6, decoupled: true };
    cfg.optim.p = 4;
    cfg.optim.k = 2;
    cfg.optim.epochs = 3;
    cfg
}

fn determinism_and_persistence() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let artifacts = |tag: &str, seed: u64| {
        let out = run_pipeline(&tiny_config(seed)).unwrap();
        let ckpt = dir.path().join(format!("{tag}.mdrp"));
        write_checkpoint(&out.outcome.model, &ckpt).unwrap();
        (std::fs::read(ckpt).unwrap(), render_csv(&out.reports, true), out.test_features)
    };
    let (ckpt_a, report_a, features) = artifacts("a", 5);
    let (ckpt_b, report_b, _) = artifacts("b", 5);
    let (ckpt_c, _, _) = artifacts("c", 6);
    let identical = ckpt_a == ckpt_b && report_a == report_b && ckpt_a != ckpt_c;

    let (first, second) = (dir.path().join("s1.mdfs"), dir.path().join("s2.mdfs"));
    write_store(&features, &first).unwrap();
    let back = read_store(&first).unwrap();
    write_store(&back, &second).unwrap();
    let bytes = std::fs::read(&first).unwrap();
    let round_trip = bytes == std::fs::read(&second).unwrap() && back.len() == features.len();

    let damaged = dir.path().join("bad.mdfs");
    let code_of = |b: &[u8]| {
        std::fs::write(&damaged, b).unwrap();
        match read_store(&damaged) {
            Err(Error::Format(f)) => f.code(),
            _ => "none",
        }
    };
    let mut magic = bytes.clone();
    magic[0] = b'X';
    let mut version = bytes.clone();
    version[4] = 2;
    let mut mask = bytes.clone();
    mask[24 + 8] = 5;
    let codes = [
        (code_of(&bytes[..bytes.len() - 3]), "E_TRUNCATED"),
        (code_of(&magic), "E_BAD_MAGIC"),
        (code_of(&version), "E_VERSION"),
        (code_of(&mask), "E_CORRUPT"),
    ];
    let codes_ok = codes.iter().all(|(got, want)| got == want);
    let listing: Vec<&str> = codes.iter().map(|(got, _)| *got).collect();
    outcome(
        identical && round_trip && codes_ok,
        format!(
            "same-seed checkpoints and reports identical: {identical}; store round trip bit-exact: {round_trip}; codes {}",
            listing.join(" ")
        ),
    )
}

fn main() {
    let mut results: Vec<(usize, Outcome)> = vec![
        (1, similarity_oracle()),
        (2, similarity_symmetry_and_scale()),
        (3, rol_exactness()),
        (4, kdl_closed_form()),
        (5, gradient_suite()),
        (6, metric_correctness()),
    ];
    for (n, o) in &results {
        println!("criterion {n}: {} {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    let trained = match ablation() {
        Ok((runs, elapsed)) => vec![(7, ablation_order(&runs, elapsed)), (8, mismatched_signal(&runs))],
        Err(e) => vec![
            (7, outcome(false, format!("training failed: {e}"))),
            (8, outcome(false, format!("training failed: {e}"))),
        ],
    };
    let rest = vec![(9, determinism_and_persistence())];
    for (n, o) in trained.iter().chain(&rest) {
        println!("criterion {n}: {} {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    results.extend(trained);
    results.extend(rest);
    let failed = results.iter().filter(|(_, o)| !o.passed).count();
    println!("acceptance: {} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 && std::env::var("ANYREID_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
