mod common;

use common::{brute_area, brute_greedy, random_rows, random_symmetric, rng};
use rand::seq::SliceRandom;
use rand::Rng;
use ssmprune::ranking::{rank, select_count};
use ssmprune::{
    area_rank, build_ssm, greedy_rank, select_prune_set, FilterSet, Matrix, MetricKind, RankMethod, SimilarityMatrix,
};

fn ssm(rows: &[Vec<f32>]) -> SimilarityMatrix {
    SimilarityMatrix::from_values(MetricKind::L2, Matrix::from_rows(rows).unwrap()).unwrap()
}

fn to_rows(s: &SimilarityMatrix) -> Vec<Vec<f32>> {
    (0..s.n()).map(|i| s.row(i).to_vec()).collect()
}

#[test]
fn rankers_match_brute_force_on_random_matrices() {
    let mut r = rng(1);
    for case in 0..400 {
        let n = r.random_range(2..=64);
        // Every other case draws from six values so ties are common.
        let rows = random_symmetric(n, &mut r, case % 2 == 0);
        let s = ssm(&rows);
        let (order, scores, nearest) = brute_greedy(&rows);
        let g = greedy_rank(&s).unwrap();
        assert_eq!(g.order, order, "greedy case {case}");
        assert_eq!(g.scores, scores);
        assert_eq!(g.nearest.as_ref(), Some(&nearest));
        let (order, scores) = brute_area(&rows);
        let a = area_rank(&s).unwrap();
        assert_eq!(a.order, order, "area case {case}");
        for (x, y) in a.scores.iter().zip(&scores) {
            assert!((x - y).abs() <= 1e-9 * y.abs().max(1.0));
        }
    }
}

#[test]
fn rankers_match_brute_force_on_filter_sets() {
    let mut r = rng(2);
    for metric in MetricKind::ALL {
        for _ in 0..50 {
            let n = r.random_range(2..=32);
            let dim = r.random_range(1..=30);
            let fs = FilterSet::from_matrix(Matrix::from_rows(&random_rows(n, dim, &mut r)).unwrap()).unwrap();
            let s = build_ssm(&fs, metric).unwrap();
            let rows = to_rows(&s);
            assert_eq!(greedy_rank(&s).unwrap().order, brute_greedy(&rows).0);
            assert_eq!(area_rank(&s).unwrap().order, brute_area(&rows).0);
        }
    }
}

#[test]
fn two_filters_rank_in_index_order() {
    let mut r = rng(3);
    for _ in 0..50 {
        let v: f32 = r.random_range(0.0..10.0);
        let s = ssm(&[vec![0.0, v], vec![v, 0.0]]);
        assert_eq!(greedy_rank(&s).unwrap().order, vec![0, 1]);
        assert_eq!(area_rank(&s).unwrap().order, vec![0, 1]);
    }
}

/// Lexicographically first subset (by rank position) of the largest size
/// `≤ k` in which no member is the nearest neighbour of a member ranked
/// ahead of it.
fn exhaustive_dedup(order: &[usize], nearest: &[usize], k: usize) -> Vec<usize> {
    let n = order.len();
    let valid = |positions: &[usize]| {
        positions.iter().enumerate().all(|(a, &pa)| {
            positions[a + 1..].iter().all(|&pb| nearest[order[pa]] != order[pb])
        })
    };
    for size in (0..=k).rev() {
        let mut best: Option<Vec<usize>> = None;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != size {
                continue;
            }
            let positions: Vec<usize> = (0..n).filter(|p| mask & (1 << p) != 0).collect();
            if valid(&positions) && best.as_ref().is_none_or(|b| positions < *b) {
                best = Some(positions);
            }
        }
        if let Some(p) = best {
            let mut idx: Vec<usize> = p.into_iter().map(|p| order[p]).collect();
            idx.sort_unstable();
            return idx;
        }
    }
    Vec::new()
}

#[test]
fn dedup_matches_exhaustive_search() {
    let mut r = rng(4);
    for case in 0..600 {
        let n = r.random_range(2..=9);
        let rows = random_symmetric(n, &mut r, case % 3 == 0);
        let g = greedy_rank(&ssm(&rows)).unwrap();
        let k = r.random_range(1..=n);
        let sel = select_count(&g, n, k, 1, true).unwrap();
        let want = exhaustive_dedup(&g.order, g.nearest.as_ref().unwrap(), k.min(n - 1));
        assert_eq!(sel.indices, want, "case {case}: order {:?} nearest {:?} k {k}", g.order, g.nearest);
    }
}

#[test]
fn dedup_is_ignored_for_area() {
    let s = ssm(&[vec![0.0, 1.0, 9.0], vec![1.0, 0.0, 9.0], vec![9.0, 9.0, 0.0]]);
    let a = area_rank(&s).unwrap();
    let with = select_count(&a, 3, 2, 1, true).unwrap();
    let without = select_count(&a, 3, 2, 1, false).unwrap();
    assert_eq!(with.indices, without.indices);
    let mut first_two = a.order[..2].to_vec();
    first_two.sort_unstable();
    assert_eq!(with.indices, first_two);
}

#[test]
fn selection_is_permutation_consistent() {
    let mut r = rng(6);
    let mut checked = 0;
    for _ in 0..400 {
        let n = r.random_range(3..=40);
        let rows = random_symmetric(n, &mut r, false);
        // The trapezoid gives the first and last column half weight, so
        // area scores are only label-free when {0, n-1} maps onto itself.
        let mut perm: Vec<usize> = (0..n).collect();
        perm[1..n - 1].shuffle(&mut r);
        if r.random_bool(0.5) {
            perm.swap(0, n - 1);
        }
        // Filter i of the relabelled set is filter perm[i] of the original.
        let permuted: Vec<Vec<f32>> = (0..n).map(|i| (0..n).map(|j| rows[perm[i]][perm[j]]).collect()).collect();
        let ratio = [0.1, 0.3, 0.5][r.random_range(0..3)];
        for (method, dedup) in [(RankMethod::Greedy, true), (RankMethod::Greedy, false), (RankMethod::Area, false)] {
            let a = rank(&ssm(&rows), method).unwrap();
            let b = rank(&ssm(&permuted), method).unwrap();
            let sa = select_prune_set(&a, n, ratio, 2, dedup).unwrap();
            let sb = select_prune_set(&b, n, ratio, 2, dedup).unwrap();
            let mut mapped: Vec<usize> = sb.indices.iter().map(|&i| perm[i]).collect();
            mapped.sort_unstable();
            let mut sorted = a.scores.clone();
            sorted.sort_by(f64::total_cmp);
            if sorted.windows(2).all(|w| w[0] != w[1]) {
                assert_eq!(mapped, sa.indices, "{method:?} dedup={dedup}");
                checked += 1;
            } else {
                // The closest pair always shares its greedy score, so only
                // the selected score multiset is label-free.
                let scores = |idx: &[usize]| {
                    let mut v: Vec<f64> = idx.iter().map(|&i| a.scores[i]).collect();
                    v.sort_by(f64::total_cmp);
                    v
                };
                assert_eq!(scores(&mapped), scores(&sa.indices), "{method:?} dedup={dedup}");
            }
        }
    }
    assert_eq!(checked, 400, "area scores were expected to be distinct");
}

#[test]
fn area_scores_of_small_matrix() {
    let rows = vec![
        vec![0.0, 1.0, 4.0],
        vec![1.0, 0.0, 2.0],
        vec![4.0, 2.0, 0.0],
    ];
    let a = area_rank(&ssm(&rows)).unwrap();
    assert_eq!(a.scores, vec![3.0, 1.5, 4.0]);
    assert_eq!(a.scores, brute_area(&rows).1);
}

#[test]
fn floor_holds_over_grid() {
    let mut r = rng(7);
    for n in 2..=256usize {
        let rows = random_symmetric(n.min(48), &mut r, true);
        for &ratio in &[0.05, 0.1, 0.3, 0.9] {
            for &min_filters in &[1usize, 2, 4, 8] {
                // Rankings are over n filters; only the order length matters here.
                let ranking = if n <= 48 {
                    area_rank(&ssm(&rows)).unwrap()
                } else {
                    ssmprune::Ranking {
                        method: RankMethod::Area,
                        order: (0..n).collect(),
                        scores: vec![0.0; n],
                        nearest: None,
                    }
                };
                let sel = select_prune_set(&ranking, n, ratio, min_filters, false).unwrap();
                let want = ((ratio * n as f64) + 1e-9).floor() as usize;
                let expected = want.min(n.saturating_sub(min_filters));
                assert_eq!(sel.indices.len(), expected, "n={n} ratio={ratio} min={min_filters}");
                assert!(n - sel.indices.len() >= min_filters.min(n));
                assert!(sel.indices.windows(2).all(|w| w[0] < w[1]));
                assert!(sel.indices.iter().all(|&i| i < n));
                assert_eq!(sel.floor_applied, expected < want);
            }
        }
    }
}

#[test]
fn invalid_ratios_are_rejected() {
    let g = greedy_rank(&ssm(&[vec![0.0, 1.0], vec![1.0, 0.0]])).unwrap();
    for ratio in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
        assert!(select_prune_set(&g, 2, ratio, 1, false).is_err(), "{ratio}");
    }
}

#[test]
fn rankings_are_deterministic() {
    let mut r = rng(8);
    let rows = random_symmetric(40, &mut r, true);
    let s = ssm(&rows);
    for method in [RankMethod::Greedy, RankMethod::Area] {
        let a = rank(&s, method).unwrap();
        for _ in 0..5 {
            assert_eq!(rank(&s.clone(), method).unwrap(), a);
        }
    }
}
