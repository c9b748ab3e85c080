//! Forward and backward passes over a [`ModelGraph`].
//!
//! Convolutions are lowered with im2col to one GEMM per image. In parallel
//! mode images are processed concurrently; weight gradients are still summed
//! over images in index order, so both modes agree bit for bit.

use crate::engine::{ActShape, Conv2d, LayerSpec, ModelGraph};
use crate::error::{Error, Result};
use crate::linalg::{for_each_chunk, for_each_chunk2, gemm, Exec, Scalar, View};
use crate::tensor::{Matrix, Tensor4};

#[derive(Debug, Clone)]
enum Cached<T> {
    Conv { cols: Vec<T> },
    Relu { out: Vec<T> },
    Pool { argmax: Vec<u32> },
    Dense { input: Vec<T> },
    Pass,
}

/// Activations kept by [`forward`] for the matching [`backward`] call.
#[derive(Debug, Clone)]
pub struct ForwardCache<T = f32> {
    signature: Vec<[usize; 4]>,
    batch: usize,
    entries: Vec<Cached<T>>,
    logits: Matrix<T>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn logits(&self) -> &Matrix<T> {
        &self.logits
    }
}

/// Parameter gradients laid out as a graph with the same structure.
#[derive(Debug, Clone)]
pub struct Gradients<T = f32> {
    pub grads: ModelGraph<T>,
    /// Mean softmax cross-entropy over the batch.
    pub loss: f64,
    pub correct: usize,
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new<T: Scalar>(conv: &Conv2d<T>, input: ActShape, output: ActShape) -> Self {
        let (ActShape::Spatial { c, h, w }, ActShape::Spatial { h: ho, w: wo, .. }) = (input, output) else {
            unreachable!("validated conv shapes are spatial")
        };
        ConvGeom {
            c,
            h,
            w,
            kh: conv.weights.kh(),
            kw: conv.weights.kw(),
            stride: conv.stride,
            pad: conv.padding,
            ho,
            wo,
        }
    }

    fn ckk(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn in_len(&self) -> usize {
        self.c * self.h * self.w
    }

    fn out_px(&self) -> usize {
        self.ho * self.wo
    }

    /// Visits every (cols row, output pixel, input offset) triple that reads
    /// inside the image.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let px = self.out_px();
        for ci in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            f(row * px + oy * self.wo + ox, (ci * self.h + iy as usize) * self.w + ix as usize);
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        cols.iter_mut().for_each(|v| *v = T::zero());
        self.for_each_tap(|dst, src| cols[dst] = x[src]);
    }

    fn col2im<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        dx.iter_mut().for_each(|v| *v = T::zero());
        self.for_each_tap(|src, dst| dx[dst] = dx[dst] + cols[src]);
    }
}

fn conv_image<T: Scalar>(conv: &Conv2d<T>, geo: &ConvGeom, cols: &[T], out: &mut [T]) {
    let px = geo.out_px();
    for (o, row) in out.chunks_mut(px).enumerate() {
        row.iter_mut().for_each(|v| *v = conv.bias[o]);
    }
    gemm(
        Exec::Sequential,
        T::one(),
        View::new(conv.weights.data(), conv.out_ch(), geo.ckk()),
        View::new(cols, geo.ckk(), px),
        T::one(),
        out,
    );
}

fn check_images<T: Scalar>(g: &ModelGraph<T>, images: &Tensor4<T>) -> Result<()> {
    let inp = g.input();
    let [_, c, h, w] = images.dims();
    if (c, h, w) != (inp.channels, inp.height, inp.width) {
        return Err(Error::ShapeMismatch(format!(
            "images are {c}x{h}x{w}, graph expects {}x{}x{}",
            inp.channels, inp.height, inp.width
        )));
    }
    Ok(())
}

fn run_forward<T: Scalar>(
    g: &ModelGraph<T>,
    images: &Tensor4<T>,
    exec: Exec,
    keep: bool,
) -> Result<(Matrix<T>, Vec<Cached<T>>)> {
    check_images(g, images)?;
    let shapes = g.validate()?;
    let batch = images.out_ch();
    let inp = g.input();
    let mut shape = ActShape::Spatial {
        c: inp.channels,
        h: inp.height,
        w: inp.width,
    };
    let mut act = images.data().to_vec();
    let mut entries = Vec::with_capacity(g.layers().len());

    for (i, layer) in g.layers().iter().enumerate() {
        let out_shape = shapes[i];
        let entry = match layer {
            LayerSpec::Conv(conv) => {
                let geo = ConvGeom::new(conv, shape, out_shape);
                let (in_len, out_len) = (geo.in_len(), conv.out_ch() * geo.out_px());
                let col_len = geo.ckk() * geo.out_px();
                let mut out = vec![T::zero(); batch * out_len];
                let x = &act;
                if keep {
                    let mut cols = vec![T::zero(); batch * col_len];
                    for_each_chunk2(exec, &mut cols, col_len, &mut out, out_len, |b, cb, ob| {
                        geo.im2col(&x[b * in_len..(b + 1) * in_len], cb);
                        conv_image(conv, &geo, cb, ob);
                    });
                    act = out;
                    Cached::Conv { cols }
                } else {
                    for_each_chunk(exec, &mut out, out_len, |b, ob| {
                        let mut cb = vec![T::zero(); col_len];
                        geo.im2col(&x[b * in_len..(b + 1) * in_len], &mut cb);
                        conv_image(conv, &geo, &cb, ob);
                    });
                    act = out;
                    Cached::Pass
                }
            }
            LayerSpec::ReLU => {
                act.iter_mut().for_each(|v| {
                    if *v < T::zero() {
                        *v = T::zero()
                    }
                });
                if keep {
                    Cached::Relu { out: act.clone() }
                } else {
                    Cached::Pass
                }
            }
            LayerSpec::MaxPool { window, stride } => {
                let (ActShape::Spatial { c, h, w }, ActShape::Spatial { h: ho, w: wo, .. }) = (shape, out_shape) else {
                    unreachable!()
                };
                let (in_len, out_len) = (c * h * w, c * ho * wo);
                let mut out = vec![T::zero(); batch * out_len];
                let mut argmax = vec![0u32; batch * out_len];
                let x = &act;
                for_each_chunk2(exec, &mut out, out_len, &mut argmax, out_len, |b, ob, ab| {
                    let xb = &x[b * in_len..(b + 1) * in_len];
                    for ch in 0..c {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let mut best = usize::MAX;
                                for dy in 0..*window {
                                    for dx in 0..*window {
                                        let idx = (ch * h + oy * stride + dy) * w + ox * stride + dx;
                                        if best == usize::MAX || xb[idx] > xb[best] {
                                            best = idx;
                                        }
                                    }
                                }
                                let o = (ch * ho + oy) * wo + ox;
                                ob[o] = xb[best];
                                ab[o] = best as u32;
                            }
                        }
                    }
                });
                act = out;
                if keep {
                    Cached::Pool { argmax }
                } else {
                    Cached::Pass
                }
            }
            LayerSpec::Flatten | LayerSpec::SoftmaxXent => Cached::Pass,
            LayerSpec::Dense(d) => {
                let (n_out, n_in) = (d.weights.rows(), d.weights.cols());
                let mut out = vec![T::zero(); batch * n_out];
                for row in out.chunks_mut(n_out) {
                    row.copy_from_slice(&d.bias);
                }
                gemm(
                    exec,
                    T::one(),
                    View::new(&act, batch, n_in),
                    View::new(d.weights.data(), n_out, n_in).t(),
                    T::one(),
                    &mut out,
                );
                let input = std::mem::replace(&mut act, out);
                if keep {
                    Cached::Dense { input }
                } else {
                    Cached::Pass
                }
            }
        };
        entries.push(entry);
        shape = out_shape;
    }

    let logits = Matrix::new(batch, shape.size(), act)?;
    Ok((logits, entries))
}

pub fn forward<T: Scalar>(g: &ModelGraph<T>, images: &Tensor4<T>) -> Result<(Matrix<T>, ForwardCache<T>)> {
    forward_with(g, images, Exec::Sequential)
}

pub fn forward_with<T: Scalar>(
    g: &ModelGraph<T>,
    images: &Tensor4<T>,
    exec: Exec,
) -> Result<(Matrix<T>, ForwardCache<T>)> {
    let (logits, entries) = run_forward(g, images, exec, true)?;
    let cache = ForwardCache {
        signature: g.param_signature(),
        batch: images.out_ch(),
        entries,
        logits: logits.clone(),
    };
    Ok((logits, cache))
}

/// Logits only; keeps no activations.
pub fn predict<T: Scalar>(g: &ModelGraph<T>, images: &Tensor4<T>, exec: Exec) -> Result<Matrix<T>> {
    run_forward(g, images, exec, false).map(|(l, _)| l)
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_xent<T: Scalar>(logits: &Matrix<T>, labels: &[usize]) -> Result<(f64, Matrix<T>, usize)> {
    let (b, k) = (logits.rows(), logits.cols());
    if labels.len() != b {
        return Err(Error::LengthMismatch {
            left: labels.len(),
            right: b,
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::IndexOutOfRange { index: bad, len: k });
    }
    let mut grad = Matrix::zeros(b, k);
    let mut loss = 0.0f64;
    let mut correct = 0;
    for (r, &label) in labels.iter().enumerate() {
        let z: Vec<f64> = logits.row(r).iter().map(|v| v.f64()).collect();
        let (arg, max) = z
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
        if arg == label {
            correct += 1;
        }
        let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        loss += max + total.ln() - z[label];
        for (j, e) in exps.iter().enumerate() {
            let p = e / total - if j == label { 1.0 } else { 0.0 };
            grad.set(r, j, T::of(p / b as f64));
        }
    }
    Ok((loss / b as f64, grad, correct))
}

pub fn backward<T: Scalar>(g: &ModelGraph<T>, cache: &ForwardCache<T>, labels: &[usize]) -> Result<Gradients<T>> {
    backward_with(g, cache, labels, Exec::Sequential)
}

pub fn backward_with<T: Scalar>(
    g: &ModelGraph<T>,
    cache: &ForwardCache<T>,
    labels: &[usize],
    exec: Exec,
) -> Result<Gradients<T>> {
    if cache.signature != g.param_signature() || cache.entries.len() != g.layers().len() {
        return Err(Error::StaleCache);
    }
    let shapes = g.validate()?;
    let batch = cache.batch;
    let (loss, dlogits, correct) = softmax_xent(&cache.logits, labels)?;
    let mut grads = g.zeros_like();
    let first_param = g
        .layers()
        .iter()
        .position(|l| matches!(l, LayerSpec::Conv(_) | LayerSpec::Dense(_)))
        .unwrap_or(0);

    let inp = g.input();
    let input_shape = ActShape::Spatial {
        c: inp.channels,
        h: inp.height,
        w: inp.width,
    };
    let mut d = dlogits.data().to_vec();

    for i in (0..g.layers().len()).rev() {
        let in_shape = if i == 0 { input_shape } else { shapes[i - 1] };
        match (&g.layers()[i], &cache.entries[i]) {
            (LayerSpec::SoftmaxXent | LayerSpec::Flatten, _) => {}
            (LayerSpec::ReLU, Cached::Relu { out }) => {
                d.iter_mut().zip(out).for_each(|(g, &o)| {
                    if o <= T::zero() {
                        *g = T::zero()
                    }
                });
            }
            (LayerSpec::MaxPool { .. }, Cached::Pool { argmax }) => {
                let in_len = in_shape.size();
                let out_len = shapes[i].size();
                let mut dx = vec![T::zero(); batch * in_len];
                let dy = &d;
                for_each_chunk(exec, &mut dx, in_len, |b, db| {
                    for o in 0..out_len {
                        let src = argmax[b * out_len + o] as usize;
                        db[src] = db[src] + dy[b * out_len + o];
                    }
                });
                d = dx;
            }
            (LayerSpec::Dense(dense), Cached::Dense { input }) => {
                let (n_out, n_in) = (dense.weights.rows(), dense.weights.cols());
                let LayerSpec::Dense(gd) = &mut grads.layers_mut()[i] else { unreachable!() };
                gemm(
                    exec,
                    T::one(),
                    View::new(&d, batch, n_out).t(),
                    View::new(input, batch, n_in),
                    T::zero(),
                    gd.weights.data_mut(),
                );
                for (o, gb) in gd.bias.iter_mut().enumerate() {
                    *gb = (0..batch).map(|b| d[b * n_out + o]).fold(T::zero(), |a, v| a + v);
                }
                if i > first_param {
                    let mut dx = vec![T::zero(); batch * n_in];
                    gemm(
                        exec,
                        T::one(),
                        View::new(&d, batch, n_out),
                        View::new(dense.weights.data(), n_out, n_in),
                        T::zero(),
                        &mut dx,
                    );
                    d = dx;
                }
            }
            (LayerSpec::Conv(conv), Cached::Conv { cols }) => {
                let geo = ConvGeom::new(conv, in_shape, shapes[i]);
                let (co, px, ckk) = (conv.out_ch(), geo.out_px(), geo.ckk());
                let (out_len, col_len) = (co * px, ckk * px);
                let LayerSpec::Conv(gc) = &mut grads.layers_mut()[i] else { unreachable!() };
                for b in 0..batch {
                    gemm(
                        exec,
                        T::one(),
                        View::new(&d[b * out_len..(b + 1) * out_len], co, px),
                        View::new(&cols[b * col_len..(b + 1) * col_len], ckk, px).t(),
                        if b == 0 { T::zero() } else { T::one() },
                        gc.weights.data_mut(),
                    );
                }
                for (o, gb) in gc.bias.iter_mut().enumerate() {
                    *gb = (0..batch)
                        .flat_map(|b| d[b * out_len + o * px..b * out_len + (o + 1) * px].iter().copied())
                        .fold(T::zero(), |a, v| a + v);
                }
                if i > first_param {
                    let in_len = geo.in_len();
                    let mut dx = vec![T::zero(); batch * in_len];
                    let dy = &d;
                    for_each_chunk(exec, &mut dx, in_len, |b, db| {
                        let mut dcols = vec![T::zero(); col_len];
                        gemm(
                            Exec::Sequential,
                            T::one(),
                            View::new(conv.weights.data(), co, ckk).t(),
                            View::new(&dy[b * out_len..(b + 1) * out_len], co, px),
                            T::zero(),
                            &mut dcols,
                        );
                        geo.col2im(&dcols, db);
                    });
                    d = dx;
                }
            }
            _ => return Err(Error::StaleCache),
        }
    }

    Ok(Gradients { grads, loss, correct })
}
