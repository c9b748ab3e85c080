//! Independent reference implementations used as test oracles.
#![allow(dead_code, clippy::needless_range_loop, clippy::field_reassign_with_default)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssmprune::engine::{Conv2d, Dense, InputShape, LayerSpec, ModelGraph};
use ssmprune::io::{write_synthetic_cifar, DatasetSpec, RunConfig, SyntheticSpec};
use ssmprune::{Matrix, Tensor4};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Picks the smallest remaining score each round, lowest index first on
/// ties: a selection sort that shares nothing with the library's sort.
pub fn brute_argsort(scores: &[f64]) -> Vec<usize> {
    let mut used = vec![false; scores.len()];
    let mut order = Vec::with_capacity(scores.len());
    for _ in 0..scores.len() {
        let mut best: Option<usize> = None;
        for i in 0..scores.len() {
            if used[i] {
                continue;
            }
            match best {
                None => best = Some(i),
                Some(b) if scores[i] < scores[b] => best = Some(i),
                _ => {}
            }
        }
        let b = best.unwrap();
        used[b] = true;
        order.push(b);
    }
    order
}

pub fn brute_greedy(s: &[Vec<f32>]) -> (Vec<usize>, Vec<f64>, Vec<usize>) {
    let n = s.len();
    let mut scores = vec![0.0; n];
    let mut nearest = vec![0; n];
    for i in 0..n {
        let mut best = f64::INFINITY;
        let mut arg = usize::MAX;
        for j in 0..n {
            if j != i && (s[i][j] as f64) < best {
                best = s[i][j] as f64;
                arg = j;
            }
        }
        scores[i] = best;
        nearest[i] = arg;
    }
    (brute_argsort(&scores), scores, nearest)
}

pub fn brute_area(s: &[Vec<f32>]) -> (Vec<usize>, Vec<f64>) {
    let scores: Vec<f64> = s
        .iter()
        .map(|row| {
            let mut a = 0.0;
            for j in 1..row.len() {
                a += 0.5 * (row[j - 1] as f64 + row[j] as f64);
            }
            a
        })
        .collect();
    (brute_argsort(&scores), scores)
}

pub fn random_symmetric(n: usize, rng: &mut ChaCha8Rng, quantize: bool) -> Vec<Vec<f32>> {
    let mut s = vec![vec![0.0f32; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f32 = if quantize {
                rng.random_range(0..6) as f32
            } else {
                rng.random_range(0.0..10.0)
            };
            s[i][j] = v;
            s[j][i] = v;
        }
    }
    s
}

pub fn random_rows(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f32>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn conv(out: usize, inp: usize, k: usize, stride: usize, padding: usize) -> LayerSpec {
    LayerSpec::Conv(Conv2d {
        weights: Tensor4::zeros([out, inp, k, k]).unwrap(),
        bias: vec![0.0; out],
        stride,
        padding,
    })
}

pub fn dense(out: usize, inp: usize) -> LayerSpec {
    LayerSpec::Dense(Dense {
        weights: Matrix::zeros(out, inp),
        bias: vec![0.0; out],
    })
}

pub fn input(c: usize, h: usize, w: usize) -> InputShape {
    InputShape {
        channels: c,
        height: h,
        width: w,
    }
}

/// Fills every parameter with uniform noise, biases included.
pub fn randomize<T: ssmprune::linalg::Scalar>(g: &mut ModelGraph<T>, rng: &mut ChaCha8Rng, scale: f64) {
    for (p, _) in g.params_mut() {
        for v in p.iter_mut() {
            *v = T::of(rng.random_range(-scale..scale));
        }
    }
}

/// A random valid conv chain ending in a dense classifier.
pub fn random_chain(rng: &mut ChaCha8Rng) -> ModelGraph {
    loop {
        let c0 = rng.random_range(1..=3);
        let hw = rng.random_range(6..=12);
        let mut layers = Vec::new();
        let (mut c, mut h) = (c0, hw);
        let blocks = rng.random_range(1..=4);
        for _ in 0..blocks {
            let out = rng.random_range(4..=24);
            let k = if rng.random_bool(0.5) { 3 } else { 1 };
            let pad = if k == 3 { rng.random_range(0..=1) } else { 0 };
            let stride = if h > 6 && rng.random_bool(0.3) { 2 } else { 1 };
            if h + 2 * pad < k {
                break;
            }
            layers.push(conv(out, c, k, stride, pad));
            h = (h + 2 * pad - k) / stride + 1;
            c = out;
            layers.push(LayerSpec::ReLU);
            if h >= 4 && rng.random_bool(0.4) {
                layers.push(LayerSpec::MaxPool { window: 2, stride: 2 });
                h = (h - 2) / 2 + 1;
            }
        }
        layers.push(LayerSpec::Flatten);
        let hidden = rng.random_range(4..=16);
        layers.push(dense(hidden, c * h * h));
        layers.push(LayerSpec::ReLU);
        layers.push(dense(rng.random_range(2..=5), hidden));
        layers.push(LayerSpec::SoftmaxXent);
        if let Ok(mut g) = ModelGraph::new(input(c0, hw, hw), layers) {
            if g.conv_layer_ids().is_empty() {
                continue;
            }
            g.init_he(rng);
            return g;
        }
    }
}

pub fn random_images(b: usize, shape: InputShape, rng: &mut ChaCha8Rng) -> Tensor4 {
    let n = b * shape.channels * shape.height * shape.width;
    Tensor4::new(
        [b, shape.channels, shape.height, shape.width],
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Direct nested-loop evaluation of a graph, in f64.
pub fn naive_forward(g: &ModelGraph, images: &Tensor4) -> Vec<Vec<f64>> {
    let [b, c0, h0, w0] = images.dims();
    let mut out = Vec::new();
    for n in 0..b {
        // act[c][y][x] or flat
        let mut spatial: Vec<Vec<Vec<f64>>> = (0..c0)
            .map(|c| {
                (0..h0)
                    .map(|y| (0..w0).map(|x| images.data()[((n * c0 + c) * h0 + y) * w0 + x] as f64).collect())
                    .collect()
            })
            .collect();
        let mut flat: Option<Vec<f64>> = None;
        for layer in g.layers() {
            match layer {
                LayerSpec::Conv(cv) => {
                    let [co, ci, kh, kw] = cv.weights.dims();
                    let (h, w) = (spatial[0].len(), spatial[0][0].len());
                    let ho = (h + 2 * cv.padding - kh) / cv.stride + 1;
                    let wo = (w + 2 * cv.padding - kw) / cv.stride + 1;
                    let wt = |o: usize, i: usize, a: usize, bb: usize| cv.weights.data()[((o * ci + i) * kh + a) * kw + bb] as f64;
                    let mut next = vec![vec![vec![0.0; wo]; ho]; co];
                    for o in 0..co {
                        for y in 0..ho {
                            for x in 0..wo {
                                let mut acc = cv.bias[o] as f64;
                                for i in 0..ci {
                                    for a in 0..kh {
                                        for bb in 0..kw {
                                            let iy = (y * cv.stride + a) as isize - cv.padding as isize;
                                            let ix = (x * cv.stride + bb) as isize - cv.padding as isize;
                                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                                acc += wt(o, i, a, bb) * spatial[i][iy as usize][ix as usize];
                                            }
                                        }
                                    }
                                }
                                next[o][y][x] = acc;
                            }
                        }
                    }
                    spatial = next;
                }
                LayerSpec::ReLU => match &mut flat {
                    Some(f) => f.iter_mut().for_each(|v| *v = v.max(0.0)),
                    None => spatial
                        .iter_mut()
                        .flatten()
                        .flatten()
                        .for_each(|v| *v = v.max(0.0)),
                },
                LayerSpec::MaxPool { window, stride } => {
                    let (h, w) = (spatial[0].len(), spatial[0][0].len());
                    let (ho, wo) = ((h - window) / stride + 1, (w - window) / stride + 1);
                    spatial = spatial
                        .iter()
                        .map(|plane| {
                            (0..ho)
                                .map(|y| {
                                    (0..wo)
                                        .map(|x| {
                                            let mut m = f64::NEG_INFINITY;
                                            for a in 0..*window {
                                                for bb in 0..*window {
                                                    m = m.max(plane[y * stride + a][x * stride + bb]);
                                                }
                                            }
                                            m
                                        })
                                        .collect()
                                })
                                .collect()
                        })
                        .collect();
                }
                LayerSpec::Flatten => {
                    flat = Some(spatial.iter().flatten().flatten().copied().collect());
                }
                LayerSpec::Dense(d) => {
                    let x = flat.take().unwrap();
                    let y = (0..d.weights.rows())
                        .map(|o| d.bias[o] as f64 + (0..x.len()).map(|i| d.weights.get(o, i) as f64 * x[i]).sum::<f64>())
                        .collect();
                    flat = Some(y);
                }
                LayerSpec::SoftmaxXent => {}
            }
        }
        out.push(flat.unwrap_or_else(|| spatial.iter().flatten().flatten().copied().collect()));
    }
    out
}

/// Filter counts after each prune epoch, simulated from the schedule rule.
pub fn simulate_schedule(initial: &[usize], ratio: f64, min_filters: usize, epochs: usize, original_base: bool) -> Vec<Vec<usize>> {
    let mut counts = initial.to_vec();
    let mut history = Vec::new();
    for _ in 0..epochs {
        for (k, n) in counts.iter_mut().enumerate() {
            let base = if original_base { initial[k] } else { *n };
            let want = (ratio * base as f64).floor() as usize;
            let room = n.saturating_sub(min_filters);
            *n -= want.min(room);
        }
        history.push(counts.clone());
    }
    history
}

/// Conv parameters (weights + bias) of a plain 3×3 chain with the given widths.
pub fn tally_3x3(in_channels: usize, widths: &[usize]) -> usize {
    let mut prev = in_channels;
    let mut total = 0;
    for &w in widths {
        total += w * prev * 9 + w;
        prev = w;
    }
    total
}

pub fn synthetic_dir(per_file: usize, test: usize, seed: u64) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic_cifar(
        dir.path(),
        &SyntheticSpec {
            train_files: 1,
            per_file,
            test,
            seed,
            ..SyntheticSpec::default()
        },
    )
    .unwrap();
    dir
}

/// A quick run configuration over a synthetic dataset.
pub fn small_run(data: &std::path::Path, out: &std::path::Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data = DatasetSpec {
        dir: data.to_path_buf(),
        train_files: vec!["data_batch_1.bin".into()],
        test_files: vec!["test_batch.bin".into()],
        ..DatasetSpec::default()
    };
    cfg.model.conv = [12, 12, 20, 20];
    cfg.model.hidden = 32;
    cfg.train.epochs = 4;
    cfg.train.batch_size = 32;
    cfg.train.learning_rate = 0.02;
    cfg.train.lr_step = 0;
    cfg.prune.prune_epochs = 3;
    cfg.out_dir = out.to_path_buf();
    cfg
}
