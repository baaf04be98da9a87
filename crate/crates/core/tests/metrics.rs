use anyreid::evalkit::{
    average_precision, cmc_at_k, expected_random_ap, first_match_rank, mean_average_precision, rank, QueryRanking,
    RankingResult, SampleLabel,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// AP as the area under the precision curve: sum over relevant ranks of
/// precision@k, divided by the number of relevant items.
fn ap_oracle(matches: &[bool]) -> Option<f64> {
    let relevant = matches.iter().filter(|&&m| m).count();
    if relevant == 0 {
        return None;
    }
    let mut total = 0.0;
    for k in 1..=matches.len() {
        if matches[k - 1] {
            let hits = matches[..k].iter().filter(|&&m| m).count();
            total += hits as f64 / k as f64;
        }
    }
    Some(total / relevant as f64)
}

fn patterns(len: usize) -> impl Iterator<Item = Vec<bool>> {
    (0u32..1 << len).map(move |bits| (0..len).map(|i| bits >> i & 1 == 1).collect())
}

fn ranking(lists: Vec<Vec<bool>>) -> RankingResult {
    let queries = lists
        .into_iter()
        .enumerate()
        .map(|(id, matches)| QueryRanking {
            query: SampleLabel { id, identity: 0, camera: 0 },
            order: (0..matches.len()).collect(),
            scores: vec![0.0; matches.len()],
            matches,
        })
        .collect();
    RankingResult { queries }
}

#[test]
fn hand_examples() {
    assert!((average_precision(&[true, false, true]).unwrap() - 5.0 / 6.0).abs() < 1e-15);
    assert_eq!(average_precision(&[false, true]), Some(0.5));
    assert_eq!(average_precision(&[false, false]), None);
    assert_eq!(first_match_rank(&[false, false, true]), Some(3));
}

#[test]
fn ap_and_first_rank_match_oracles_on_every_pattern_up_to_ten() {
    for len in 1..=10 {
        for m in patterns(len) {
            match (average_precision(&m), ap_oracle(&m)) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12, "{m:?}"),
                (a, b) => assert_eq!(a, b),
            }
            let first = (1..=len).find(|&k| m[k - 1]);
            assert_eq!(first_match_rank(&m), first);
        }
    }
}

#[test]
fn cmc_matches_counting_oracle_and_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..300 {
        let lists: Vec<Vec<bool>> =
            (0..rng.gen_range(1..8)).map(|_| (0..rng.gen_range(1..=10)).map(|_| rng.gen_bool(0.3)).collect()).collect();
        let valid: Vec<&Vec<bool>> = lists.iter().filter(|l| l.contains(&true)).collect();
        let r = ranking(lists.clone());
        let mut prev = 0.0;
        for k in 1..=10 {
            let c = cmc_at_k(&r, k);
            assert!(c >= prev);
            prev = c;
            if !valid.is_empty() {
                let hit = valid.iter().filter(|l| l.iter().take(k).any(|&m| m)).count();
                assert_eq!(c, hit as f64 / valid.len() as f64);
            }
        }
        match mean_average_precision(&r) {
            Ok(map) => {
                let mean = valid.iter().map(|l| ap_oracle(l).unwrap()).sum::<f64>() / valid.len() as f64;
                assert!((map - mean).abs() < 1e-12);
            }
            Err(_) => assert!(valid.is_empty()),
        }
    }
}

#[test]
fn random_ap_expectation_is_the_mean_over_all_placements() {
    for n in 1..=10 {
        for r in 1..=n {
            let placements: Vec<Vec<bool>> = patterns(n).filter(|m| m.iter().filter(|&&x| x).count() == r).collect();
            let mean = placements.iter().map(|m| ap_oracle(m).unwrap()).sum::<f64>() / placements.len() as f64;
            assert!((expected_random_ap(r, n) - mean).abs() < 1e-12, "r={r} n={n}");
        }
    }
}

#[test]
fn ranking_feeds_metrics_consistently() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let labels: Vec<SampleLabel> =
        (0..10).map(|id| SampleLabel { id, identity: rng.gen_range(0..3), camera: rng.gen_range(0..2) }).collect();
    let scores = Array2::from_shape_fn((10, 10), |_| rng.gen::<f64>());
    let r = rank(scores.view(), &labels, &labels, false);
    for q in &r.queries {
        assert_eq!(q.order.len(), 9);
        assert!(q.scores.windows(2).all(|w| w[0] >= w[1]));
        for (&j, &m) in q.order.iter().zip(&q.matches) {
            assert_eq!(m, labels[j].identity == q.query.identity);
        }
    }
}
