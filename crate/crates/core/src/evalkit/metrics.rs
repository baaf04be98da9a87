//! Average precision and CMC over ranked match lists.

use super::RankingResult;
use crate::error::{Error, Result};

/// Mean over positives of `j / r_j` (the j-th positive at 1-based rank r_j);
/// `None` when the list has no positive.
pub fn average_precision(matches: &[bool]) -> Option<f64> {
    let mut found = 0usize;
    let mut sum = 0.0;
    for (rank0, &hit) in matches.iter().enumerate() {
        if hit {
            found += 1;
            sum += found as f64 / (rank0 + 1) as f64;
        }
    }
    (found > 0).then(|| sum / found as f64)
}

/// 1-based rank of the first positive.
pub fn first_match_rank(matches: &[bool]) -> Option<usize> {
    matches.iter().position(|&m| m).map(|i| i + 1)
}

/// Mean AP over queries with at least one positive.
pub fn mean_average_precision(rankings: &RankingResult) -> Result<f64> {
    let aps: Vec<f64> = rankings.queries.iter().filter_map(|q| average_precision(&q.matches)).collect();
    if aps.is_empty() {
        return Err(Error::NoValidQueries);
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Fraction of queries (with at least one positive) whose first positive is
/// within the top `k`.
pub fn cmc_at_k(rankings: &RankingResult, k: usize) -> f64 {
    let ranks: Vec<usize> = rankings.queries.iter().filter_map(|q| first_match_rank(&q.matches)).collect();
    if ranks.is_empty() || k == 0 {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

/// Expected AP of a uniformly random ranking of `gallery` items holding
/// `positives` matches.
pub fn expected_random_ap(positives: usize, gallery: usize) -> f64 {
    assert!(positives >= 1 && positives <= gallery);
    if gallery == 1 {
        return 1.0;
    }
    let (r, n) = (positives as f64, gallery as f64);
    (1..=gallery)
        .map(|i| {
            let i = i as f64;
            (1.0 + (i - 1.0) * (r - 1.0) / (n - 1.0)) / i
        })
        .sum::<f64>()
        / n
}

/// Expected mAP of random rankings over the same queries and galleries.
pub fn random_ranking_map(rankings: &RankingResult) -> Result<f64> {
    let exp: Vec<f64> = rankings
        .queries
        .iter()
        .filter_map(|q| {
            let pos = q.matches.iter().filter(|&&m| m).count();
            (pos > 0).then(|| expected_random_ap(pos, q.matches.len()))
        })
        .collect();
    if exp.is_empty() {
        return Err(Error::NoValidQueries);
    }
    Ok(exp.iter().sum::<f64>() / exp.len() as f64)
}
