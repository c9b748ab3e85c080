#![allow(clippy::needless_range_loop)]

mod common;

use common::{conv, dense, input, naive_forward, random_chain, random_images, randomize, rng, simulate_schedule, tally_3x3};
use rand::Rng;
use ssmprune::engine::{layer_param_count, Pruner};
use ssmprune::trainer::predict;
use ssmprune::{
    conv_param_count, prune_conv_layer, prune_step, Exec, LayerSpec, MetricKind, ModelGraph, PruneConfig,
    PruneSelection, RankMethod, RatioBase, VggMini,
};

fn sel(layer_id: usize, indices: Vec<usize>) -> PruneSelection {
    PruneSelection {
        layer_id,
        indices,
        ratio_used: 0.1,
        floor_applied: false,
    }
}

fn max_abs_diff(a: &ssmprune::Matrix, b: &ssmprune::Matrix) -> f32 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

/// Zeroes everything the next parameterised layer reads from channel `f`
/// of conv `id`.
fn zero_downstream(g: &mut ModelGraph, id: usize, f: usize) {
    let shapes = g.validate().unwrap();
    let (h, w) = match shapes[id] {
        ssmprune::engine::ActShape::Spatial { h, w, .. } => (h, w),
        _ => unreachable!(),
    };
    let mut hw = h * w;
    for k in id + 1..g.layers().len() {
        if let ssmprune::engine::ActShape::Spatial { h, w, .. } = shapes[k] {
            hw = h * w;
        }
        match &mut g.layers_mut()[k] {
            LayerSpec::Conv(c) => {
                let [o, i, kh, kw] = c.weights.dims();
                for oc in 0..o {
                    let start = (oc * i + f) * kh * kw;
                    c.weights.data_mut()[start..start + kh * kw].fill(0.0);
                }
                return;
            }
            LayerSpec::Dense(d) => {
                for r in 0..d.weights.rows() {
                    for col in f * hw..(f + 1) * hw {
                        d.weights.set(r, col, 0.0);
                    }
                }
                return;
            }
            _ => {}
        }
    }
    panic!("no consumer");
}

#[test]
fn zero_slice_pruning_preserves_outputs() {
    let mut r = rng(21);
    let mut cases = 0;
    while cases < 40 {
        let mut g = random_chain(&mut r);
        randomize(&mut g, &mut r, 0.5);
        let ids = g.conv_layer_ids();
        let id = ids[r.random_range(0..ids.len())];
        let n = g.conv(id).unwrap().out_ch();
        let f = r.random_range(0..n);
        zero_downstream(&mut g, id, f);
        let pruned = prune_conv_layer(&g, id, &sel(id, vec![f])).unwrap();
        pruned.validate().unwrap();
        let x = random_images(20, g.input(), &mut r);
        let a = predict(&g, &x, Exec::Sequential).unwrap();
        let b = predict(&pruned, &x, Exec::Sequential).unwrap();
        assert!(max_abs_diff(&a, &b) < 1e-5, "layer {id} filter {f}: {}", max_abs_diff(&a, &b));
        cases += 1;
    }
}

#[test]
fn zero_slice_through_flatten_into_dense() {
    let mut r = rng(22);
    let layers = vec![
        conv(6, 2, 3, 1, 1),
        LayerSpec::ReLU,
        LayerSpec::MaxPool { window: 2, stride: 2 },
        LayerSpec::Flatten,
        dense(5, 6 * 4 * 4),
        LayerSpec::SoftmaxXent,
    ];
    let mut g = ModelGraph::new(input(2, 8, 8), layers).unwrap();
    randomize(&mut g, &mut r, 0.5);
    for f in 0..6 {
        let mut h = g.clone();
        zero_downstream(&mut h, 0, f);
        let pruned = prune_conv_layer(&h, 0, &sel(0, vec![f])).unwrap();
        let x = random_images(20, g.input(), &mut r);
        let a = predict(&h, &x, Exec::Sequential).unwrap();
        let b = predict(&pruned, &x, Exec::Sequential).unwrap();
        assert!(max_abs_diff(&a, &b) < 1e-5);
        match &pruned.layers()[4] {
            LayerSpec::Dense(d) => assert_eq!(d.weights.cols(), 5 * 16),
            _ => unreachable!(),
        }
    }
}

#[test]
fn forward_matches_naive_reference() {
    let mut r = rng(23);
    for _ in 0..15 {
        let mut g = random_chain(&mut r);
        randomize(&mut g, &mut r, 0.5);
        let x = random_images(3, g.input(), &mut r);
        let got = predict(&g, &x, Exec::Sequential).unwrap();
        let want = naive_forward(&g, &x);
        for (i, row) in want.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert!((got.get(i, j) as f64 - v).abs() <= 1e-4 * v.abs().max(1.0), "{} vs {v}", got.get(i, j));
            }
        }
    }
}

#[test]
fn pruned_output_equals_removing_filter_by_hand() {
    let mut r = rng(24);
    let mut g = random_chain(&mut r);
    randomize(&mut g, &mut r, 0.5);
    let id = g.conv_layer_ids()[0];
    let n = g.conv(id).unwrap().out_ch();
    let drop: Vec<usize> = (0..n).filter(|i| i % 3 == 1).collect();
    let pruned = prune_conv_layer(&g, id, &sel(id, drop.clone())).unwrap();
    let kept: Vec<usize> = (0..n).filter(|i| !drop.contains(i)).collect();
    let (before, after) = (g.conv(id).unwrap(), pruned.conv(id).unwrap());
    let slice = before.weights.slice_len();
    for (new, &old) in kept.iter().enumerate() {
        assert_eq!(after.bias[new], before.bias[old]);
        assert_eq!(
            after.weights.data()[new * slice..(new + 1) * slice],
            before.weights.data()[old * slice..(old + 1) * slice]
        );
    }
}

fn three_conv() -> ModelGraph {
    let layers = vec![
        conv(24, 3, 3, 1, 1),
        LayerSpec::ReLU,
        conv(40, 24, 3, 1, 1),
        LayerSpec::ReLU,
        LayerSpec::MaxPool { window: 2, stride: 2 },
        conv(17, 40, 3, 1, 1),
        LayerSpec::ReLU,
        LayerSpec::Flatten,
        dense(10, 17 * 4 * 4),
        LayerSpec::SoftmaxXent,
    ];
    let mut g = ModelGraph::new(input(3, 8, 8), layers).unwrap();
    g.init_he(&mut rng(25));
    g
}

fn counts(g: &ModelGraph) -> Vec<usize> {
    g.conv_layer_ids().iter().map(|&id| g.conv(id).unwrap().out_ch()).collect()
}

#[test]
fn schedule_matches_simulation() {
    for (base, original) in [(RatioBase::Current, false), (RatioBase::Original, true)] {
        for method in [RankMethod::Area, RankMethod::Greedy] {
            let g0 = three_conv();
            let cfg = PruneConfig {
                ratio: 0.10,
                method,
                ratio_base: base,
                prune_epochs: 5,
                ..PruneConfig::default()
            };
            let pruner = Pruner::new(cfg, &g0).unwrap();
            let expected = simulate_schedule(&[24, 40, 17], 0.10, 4, 5, original);
            let p0 = tally_3x3(3, &[24, 40, 17]);
            assert_eq!(conv_param_count(&g0).total(), p0);
            let mut g = g0;
            for epoch in 1..=7 {
                let (next, report) = pruner.step(&g, epoch).unwrap();
                g = next;
                let want = &expected[(epoch - 1).min(4)];
                assert_eq!(&counts(&g), want, "{base} {method:?} epoch {epoch}");
                assert_eq!(conv_param_count(&g).total(), tally_3x3(3, want));
                if epoch > 5 {
                    assert_eq!(report.pruned_filters(), 0);
                }
            }
            let reduction = 100.0 * (1.0 - tally_3x3(3, &expected[4]) as f64 / p0 as f64);
            let last = ssmprune::engine::reduction_percent(p0, conv_param_count(&g).total());
            assert_eq!(last, reduction);
        }
    }
}

#[test]
fn simulation_spot_values() {
    // 24 → 22 → 20 → 18 → 17 → 16; 17 → 16 → 15 → 14 → 13 → 12.
    let h = simulate_schedule(&[24, 17], 0.10, 4, 5, false);
    assert_eq!(h.iter().map(|c| c[0]).collect::<Vec<_>>(), vec![22, 20, 18, 17, 16]);
    assert_eq!(h.iter().map(|c| c[1]).collect::<Vec<_>>(), vec![16, 15, 14, 13, 12]);
    let h = simulate_schedule(&[40], 0.10, 4, 5, true);
    assert_eq!(h.iter().map(|c| c[0]).collect::<Vec<_>>(), vec![36, 32, 28, 24, 20]);
}

#[test]
fn fuzz_prune_steps_keep_invariants() {
    let mut r = rng(26);
    for case in 0..30 {
        let mut g = random_chain(&mut r);
        let cfg = PruneConfig {
            ratio: r.random_range(0.05..0.6),
            method: if r.random_bool(0.5) { RankMethod::Greedy } else { RankMethod::Area },
            metric: MetricKind::ALL[r.random_range(0..4)],
            min_filters: r.random_range(1..=4),
            pair_dedup: r.random_bool(0.5),
            ratio_base: if r.random_bool(0.5) { RatioBase::Current } else { RatioBase::Original },
            prune_epochs: 10,
        };
        let pruner = Pruner::new(cfg.clone(), &g).unwrap();
        for epoch in 1..=10 {
            let before = conv_param_count(&g);
            let (next, report) = pruner.step(&g, epoch).unwrap();
            next.validate().unwrap();
            let x = random_images(2, next.input(), &mut r);
            let logits = predict(&next, &x, Exec::Sequential).unwrap();
            assert_eq!(logits.cols(), g.num_classes().unwrap());

            let after = conv_param_count(&next);
            assert!(after.total() <= before.total());
            assert_eq!(report.conv_params_before, before.total());
            assert_eq!(report.conv_params_after, after.total());
            assert_eq!(report.conv_weights_before, before.weights);
            assert_eq!(report.conv_weights_after, after.weights);
            assert_eq!(report.reduction_percent, 100.0 * (1.0 - after.total() as f64 / before.total() as f64));
            let per_layer: usize = report.layers.iter().map(|l| l.conv_params_after).sum();
            assert_eq!(per_layer, after.total());
            for l in &report.layers {
                assert_eq!(l.filters_before - l.filters_after, l.pruned_indices.len());
                if l.filters_before <= cfg.min_filters {
                    assert!(l.pruned_indices.is_empty(), "case {case}: layer at floor modified");
                } else {
                    assert!(l.filters_after >= cfg.min_filters);
                }
            }
            g = next;
        }
    }
}

#[test]
fn layer_at_floor_is_untouched() {
    let layers = vec![
        conv(4, 3, 3, 1, 1),
        LayerSpec::ReLU,
        conv(12, 4, 3, 1, 1),
        LayerSpec::ReLU,
        LayerSpec::Flatten,
        dense(3, 12 * 6 * 6),
        LayerSpec::SoftmaxXent,
    ];
    let mut g = ModelGraph::new(input(3, 6, 6), layers).unwrap();
    g.init_he(&mut rng(27));
    let (next, report) = prune_step(&g, &PruneConfig { ratio: 0.5, ..PruneConfig::default() }, 1).unwrap();
    assert_eq!(next.layers()[0], g.layers()[0]);
    assert!(report.layers[0].pruned_indices.is_empty());
    assert_eq!(report.layers[1].pruned_indices.len(), 6);
}

#[test]
fn vgg_mini_matches_manual_tally() {
    let g: ModelGraph = VggMini::default().build(ssmprune::InputShape::CIFAR).unwrap();
    // 3→32: 864+32, 32→32: 9216+32, 32→64: 18432+64, 64→64: 36864+64.
    let tally = (864 + 32) + (9216 + 32) + (18432 + 64) + (36864 + 64);
    assert_eq!(tally, 65568);
    let count = conv_param_count(&g);
    assert_eq!(count.total(), tally);
    assert_eq!(count.weights, 864 + 9216 + 18432 + 36864);
    assert_eq!(count.weights, 65376);
    let per: usize = g.conv_layer_ids().iter().map(|&id| layer_param_count(g.conv(id).unwrap()).total()).sum();
    assert_eq!(per, tally);
}

#[test]
fn two_layer_model_tally() {
    let g = ModelGraph::new(
        input(3, 5, 5),
        vec![conv(2, 3, 3, 1, 1), LayerSpec::ReLU, conv(4, 2, 1, 1, 0), LayerSpec::Flatten, dense(2, 100)],
    )
    .unwrap();
    // 2·3·3·3 + 2 = 56; 4·2·1·1 + 4 = 12.
    assert_eq!(conv_param_count(&g).total(), 56 + 12);
}
