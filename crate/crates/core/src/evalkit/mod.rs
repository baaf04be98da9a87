//! Retrieval evaluation: scenario masking, ranking, mAP / CMC and the
//! scenario-matrix harness.
//!
//! Every sample serves as a query against the whole set; a query never
//! matches its own sample, and same-identity same-camera gallery entries can
//! optionally be excluded as well.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repr::{LabeledSample, SampleRepresentation};
use crate::sim::score_gallery;

mod metrics;
mod scenario;

pub use metrics::{
    average_precision, cmc_at_k, expected_random_ap, first_match_rank, mean_average_precision, random_ranking_map,
};
pub use scenario::{apply_scenario, ScenarioSpec};

pub const CMC_RANKS: [usize; 3] = [1, 5, 10];
pub const CSV_HEADER: &str = "scenario,mAP,R1,R5,R10,num_query,num_gallery";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub scenarios: Vec<String>,
    pub exclude_same_camera: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            scenarios: ScenarioSpec::default_list().iter().map(ScenarioSpec::name).collect(),
            exclude_same_camera: false,
        }
    }
}

impl EvalConfig {
    pub fn scenario_specs(&self) -> Result<Vec<ScenarioSpec>> {
        self.scenarios.iter().map(|s| s.parse()).collect()
    }
}

/// Position of a sample in the evaluated set plus its labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleLabel {
    pub id: usize,
    pub identity: u32,
    pub camera: u32,
}

impl SampleLabel {
    pub fn of(samples: &[LabeledSample]) -> Vec<SampleLabel> {
        samples.iter().enumerate().map(|(id, s)| SampleLabel { id, identity: s.identity, camera: s.camera }).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRanking {
    pub query: SampleLabel,
    /// Gallery indices after filtering, best first.
    pub order: Vec<usize>,
    pub scores: Vec<f64>,
    pub matches: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankingResult {
    pub queries: Vec<QueryRanking>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub scenario: String,
    pub map: f64,
    /// Accuracies at ranks 1, 5 and 10.
    pub cmc: [f64; 3],
    /// Queries with at least one positive.
    pub num_query: usize,
    pub num_gallery: usize,
    /// Queries dropped for having no positive after filtering.
    pub skipped_queries: usize,
}

/// `queries x gallery` matrix of total similarities.
pub fn score_matrix(queries: &[SampleRepresentation], gallery: &[SampleRepresentation]) -> Array2<f64> {
    let mut out = Array2::zeros((queries.len(), gallery.len()));
    for (q, mut row) in queries.iter().zip(out.rows_mut()) {
        for (v, b) in row.iter_mut().zip(score_gallery(q, gallery)) {
            *v = b.sim_total;
        }
    }
    out
}

/// Ranks each query's filtered gallery by descending score, breaking ties by
/// ascending gallery index.
pub fn rank(
    scores: ArrayView2<'_, f64>,
    queries: &[SampleLabel],
    gallery: &[SampleLabel],
    exclude_same_camera: bool,
) -> RankingResult {
    let queries = queries
        .iter()
        .zip(scores.rows())
        .map(|(q, row)| {
            let mut order: Vec<usize> = (0..gallery.len())
                .filter(|&j| {
                    let g = &gallery[j];
                    g.id != q.id && !(exclude_same_camera && g.identity == q.identity && g.camera == q.camera)
                })
                .collect();
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            let scores = order.iter().map(|&j| row[j]).collect();
            let matches = order.iter().map(|&j| gallery[j].identity == q.identity).collect();
            QueryRanking { query: *q, order, scores, matches }
        })
        .collect();
    RankingResult { queries }
}

pub fn report(scenario: &str, rankings: &RankingResult, num_gallery: usize) -> Result<EvalReport> {
    let map = mean_average_precision(rankings)?;
    let valid = rankings.queries.iter().filter(|q| q.matches.contains(&true)).count();
    Ok(EvalReport {
        scenario: scenario.to_string(),
        map,
        cmc: CMC_RANKS.map(|k| cmc_at_k(rankings, k)),
        num_query: valid,
        num_gallery,
        skipped_queries: rankings.queries.len() - valid,
    })
}

/// Masks queries and gallery for one scenario and ranks them.
pub fn rank_scenario(
    samples: &[LabeledSample],
    spec: &ScenarioSpec,
    exclude_same_camera: bool,
) -> Result<RankingResult> {
    let q = apply_scenario(samples, spec.query_modalities)?;
    let g = apply_scenario(samples, spec.gallery_modalities)?;
    let q_reps: Vec<_> = q.into_iter().map(|s| s.representation).collect();
    let g_reps: Vec<_> = g.into_iter().map(|s| s.representation).collect();
    let labels = SampleLabel::of(samples);
    let scores = score_matrix(&q_reps, &g_reps);
    Ok(rank(scores.view(), &labels, &labels, exclude_same_camera))
}

pub fn run_scenario_matrix(
    samples: &[LabeledSample],
    scenarios: &[ScenarioSpec],
    exclude_same_camera: bool,
) -> Result<Vec<EvalReport>> {
    if samples.is_empty() {
        return Err(Error::NoValidQueries);
    }
    scenarios
        .iter()
        .map(|spec| report(&spec.name(), &rank_scenario(samples, spec, exclude_same_camera)?, samples.len()))
        .collect()
}

/// Mean of every column across reports, named `average`.
pub fn average_report(reports: &[EvalReport]) -> Option<EvalReport> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Some(EvalReport {
        scenario: "average".into(),
        map: mean(&|r| r.map),
        cmc: [0, 1, 2].map(|i| mean(&|r| r.cmc[i])),
        num_query: mean(&|r| r.num_query as f64).round() as usize,
        num_gallery: mean(&|r| r.num_gallery as f64).round() as usize,
        skipped_queries: mean(&|r| r.skipped_queries as f64).round() as usize,
    })
}

/// CSV with one row per report, optionally followed by the average row.
pub fn render_csv(reports: &[EvalReport], with_average: bool) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    let avg = if with_average { average_report(reports) } else { None };
    for r in reports.iter().chain(avg.iter()) {
        writeln!(
            out,
            "{},{:.4},{:.4},{:.4},{:.4},{},{}",
            r.scenario, r.map, r.cmc[0], r.cmc[1], r.cmc[2], r.num_query, r.num_gallery
        )
        .unwrap();
    }
    out
}
