use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::tensor::{Matrix, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputShape {
    pub const CIFAR: InputShape = InputShape {
        channels: 3,
        height: 32,
        width: 32,
    };
}

/// Activation shape leaving a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActShape {
    Spatial { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl ActShape {
    pub fn size(self) -> usize {
        match self {
            ActShape::Spatial { c, h, w } => c * h * w,
            ActShape::Flat(n) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T = f32> {
    pub weights: Tensor4<T>,
    pub bias: Vec<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn out_ch(&self) -> usize {
        self.weights.out_ch()
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (kh, kw) = (self.weights.kh(), self.weights.kw());
        let (hp, wp) = (h + 2 * self.padding, w + 2 * self.padding);
        if hp < kh || wp < kw || self.stride == 0 {
            return None;
        }
        Some(((hp - kh) / self.stride + 1, (wp - kw) / self.stride + 1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T = f32> {
    /// `out × in`.
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec<T = f32> {
    Conv(Conv2d<T>),
    ReLU,
    MaxPool { window: usize, stride: usize },
    Flatten,
    Dense(Dense<T>),
    SoftmaxXent,
}

impl<T: Scalar> LayerSpec<T> {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv(_) => "conv",
            LayerSpec::ReLU => "relu",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense(_) => "dense",
            LayerSpec::SoftmaxXent => "softmax_xent",
        }
    }

    pub fn conv(&self) -> Option<&Conv2d<T>> {
        match self {
            LayerSpec::Conv(c) => Some(c),
            _ => None,
        }
    }
}

/// Parameter count split into weights and biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParamCount {
    pub weights: usize,
    pub biases: usize,
}

impl ParamCount {
    pub fn total(self) -> usize {
        self.weights + self.biases
    }
}

impl std::ops::Add for ParamCount {
    type Output = ParamCount;

    fn add(self, rhs: ParamCount) -> ParamCount {
        ParamCount {
            weights: self.weights + rhs.weights,
            biases: self.biases + rhs.biases,
        }
    }
}

/// A linear chain of layers; each layer consumes its predecessor's output.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph<T = f32> {
    input: InputShape,
    layers: Vec<LayerSpec<T>>,
}

impl<T: Scalar> ModelGraph<T> {
    pub fn new(input: InputShape, layers: Vec<LayerSpec<T>>) -> Result<Self> {
        let g = ModelGraph { input, layers };
        g.validate()?;
        Ok(g)
    }

    pub fn input(&self) -> InputShape {
        self.input
    }

    pub fn layers(&self) -> &[LayerSpec<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerSpec<T>] {
        &mut self.layers
    }

    /// Output shape of every layer, checking chain consistency on the way.
    pub fn validate(&self) -> Result<Vec<ActShape>> {
        let bad = |i: usize, msg: String| Error::Structural(format!("layer {i}: {msg}"));
        let InputShape {
            channels,
            height,
            width,
        } = self.input;
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Structural("empty input shape".into()));
        }
        let mut shape = ActShape::Spatial {
            c: channels,
            h: height,
            w: width,
        };
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match (layer, shape) {
                (LayerSpec::Conv(conv), ActShape::Spatial { c, h, w }) => {
                    if conv.weights.in_ch() != c {
                        return Err(bad(i, format!("expects {} input channels, got {c}", conv.weights.in_ch())));
                    }
                    if conv.bias.len() != conv.out_ch() {
                        return Err(bad(i, "bias length differs from output channels".into()));
                    }
                    let (h, w) = conv
                        .output_hw(h, w)
                        .ok_or_else(|| bad(i, format!("kernel/stride do not fit a {h}x{w} input")))?;
                    ActShape::Spatial {
                        c: conv.out_ch(),
                        h,
                        w,
                    }
                }
                (LayerSpec::ReLU, s) => s,
                (LayerSpec::MaxPool { window, stride }, ActShape::Spatial { c, h, w }) => {
                    if *window == 0 || *stride == 0 || *window > h || *window > w {
                        return Err(bad(i, format!("pool {window}/{stride} does not fit {h}x{w}")));
                    }
                    ActShape::Spatial {
                        c,
                        h: (h - window) / stride + 1,
                        w: (w - window) / stride + 1,
                    }
                }
                (LayerSpec::Flatten, s) => ActShape::Flat(s.size()),
                (LayerSpec::Dense(d), ActShape::Flat(n)) => {
                    if d.weights.cols() != n {
                        return Err(bad(i, format!("expects {} inputs, got {n}", d.weights.cols())));
                    }
                    if d.bias.len() != d.weights.rows() {
                        return Err(bad(i, "bias length differs from output features".into()));
                    }
                    ActShape::Flat(d.weights.rows())
                }
                (LayerSpec::SoftmaxXent, ActShape::Flat(n)) => {
                    if i + 1 != self.layers.len() {
                        return Err(bad(i, "softmax cross-entropy must be the last layer".into()));
                    }
                    ActShape::Flat(n)
                }
                (l, s) => {
                    return Err(bad(i, format!("{} cannot consume {s:?}", l.kind_name())));
                }
            };
            shapes.push(shape);
        }
        Ok(shapes)
    }

    pub fn conv_layer_ids(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.conv().map(|_| i))
            .collect()
    }

    pub fn conv(&self, layer_id: usize) -> Result<&Conv2d<T>> {
        self.layers
            .get(layer_id)
            .and_then(LayerSpec::conv)
            .ok_or(Error::NotConv(layer_id))
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.validate().ok()?.last().map(|s| s.size())
    }

    /// Shapes of every parameter tensor in layer order; two graphs with the
    /// same signature accept the same caches and gradients.
    pub fn param_signature(&self) -> Vec<[usize; 4]> {
        let mut sig = Vec::new();
        for l in &self.layers {
            match l {
                LayerSpec::Conv(c) => {
                    sig.push(c.weights.dims());
                    sig.push([c.bias.len(), 1, 1, 1]);
                }
                LayerSpec::Dense(d) => {
                    sig.push([d.weights.rows(), d.weights.cols(), 1, 1]);
                    sig.push([d.bias.len(), 1, 1, 1]);
                }
                _ => {}
            }
        }
        sig
    }

    /// Parameter buffers in layer order, each tagged `true` for biases.
    pub fn params(&self) -> Vec<(&[T], bool)> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                LayerSpec::Conv(c) => {
                    out.push((c.weights.data(), false));
                    out.push((c.bias.as_slice(), true));
                }
                LayerSpec::Dense(d) => {
                    out.push((d.weights.data(), false));
                    out.push((d.bias.as_slice(), true));
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(&mut [T], bool)> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                LayerSpec::Conv(c) => {
                    out.push((c.weights.data_mut(), false));
                    out.push((c.bias.as_mut_slice(), true));
                }
                LayerSpec::Dense(d) => {
                    out.push((d.weights.data_mut(), false));
                    out.push((d.bias.as_mut_slice(), true));
                }
                _ => {}
            }
        }
        out
    }

    pub fn map_params<U: Scalar>(&self, f: impl Fn(T) -> U) -> ModelGraph<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                LayerSpec::Conv(c) => LayerSpec::Conv(Conv2d {
                    weights: c.weights.map(&f),
                    bias: c.bias.iter().map(|&v| f(v)).collect(),
                    stride: c.stride,
                    padding: c.padding,
                }),
                LayerSpec::Dense(d) => LayerSpec::Dense(Dense {
                    weights: d.weights.map(&f),
                    bias: d.bias.iter().map(|&v| f(v)).collect(),
                }),
                LayerSpec::ReLU => LayerSpec::ReLU,
                LayerSpec::MaxPool { window, stride } => LayerSpec::MaxPool {
                    window: *window,
                    stride: *stride,
                },
                LayerSpec::Flatten => LayerSpec::Flatten,
                LayerSpec::SoftmaxXent => LayerSpec::SoftmaxXent,
            })
            .collect();
        ModelGraph {
            input: self.input,
            layers,
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelGraph<U> {
        self.map_params(|v| U::of(v.f64()))
    }

    pub fn zeros_like(&self) -> ModelGraph<T> {
        self.map_params(|_| T::zero())
    }

    /// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases. The
    /// output layer feeds no ReLU and uses `std = sqrt(1 / fan_in)`.
    pub fn init_he<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let last = self.layers.iter().rposition(|l| matches!(l, LayerSpec::Dense(_) | LayerSpec::Conv(_)));
        for (i, l) in self.layers.iter_mut().enumerate() {
            let (w, fan_in, b) = match l {
                LayerSpec::Conv(c) => {
                    let fan = c.weights.slice_len();
                    (c.weights.data_mut(), fan, &mut c.bias)
                }
                LayerSpec::Dense(d) => {
                    let fan = d.weights.cols();
                    (d.weights.data_mut(), fan, &mut d.bias)
                }
                _ => continue,
            };
            let gain = if Some(i) == last { 1.0 } else { 2.0 };
            let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("finite std");
            w.iter_mut().for_each(|v| *v = T::of(normal.sample(rng)));
            b.iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

/// Convolution weights/biases; other layers contribute nothing.
pub fn conv_param_count<T: Scalar>(g: &ModelGraph<T>) -> ParamCount {
    g.layers()
        .iter()
        .filter_map(LayerSpec::conv)
        .map(layer_param_count)
        .fold(ParamCount::default(), |a, b| a + b)
}

pub fn layer_param_count<T: Scalar>(c: &Conv2d<T>) -> ParamCount {
    ParamCount {
        weights: c.weights.data().len(),
        biases: c.bias.len(),
    }
}

/// Widths of the VGG-style reference network.
#[derive(Debug, Clone, PartialEq)]
pub struct VggMini {
    /// Output channels of the four 3×3 convs.
    pub conv: [usize; 4],
    pub hidden: usize,
    pub classes: usize,
}

impl Default for VggMini {
    fn default() -> Self {
        VggMini {
            conv: [32, 32, 64, 64],
            hidden: 256,
            classes: 10,
        }
    }
}

impl VggMini {
    /// Conv-ReLU-Conv-ReLU-Pool twice, then Flatten-Dense-ReLU-Dense.
    pub fn build<T: Scalar>(&self, input: InputShape) -> Result<ModelGraph<T>> {
        let conv = |out: usize, inp: usize| -> Result<LayerSpec<T>> {
            Ok(LayerSpec::Conv(Conv2d {
                weights: Tensor4::zeros([out, inp, 3, 3])?,
                bias: vec![T::zero(); out],
                stride: 1,
                padding: 1,
            }))
        };
        let pool = || LayerSpec::MaxPool { window: 2, stride: 2 };
        let [c1, c2, c3, c4] = self.conv;
        let (h, w) = (input.height / 4, input.width / 4);
        let layers = vec![
            conv(c1, input.channels)?,
            LayerSpec::ReLU,
            conv(c2, c1)?,
            LayerSpec::ReLU,
            pool(),
            conv(c3, c2)?,
            LayerSpec::ReLU,
            conv(c4, c3)?,
            LayerSpec::ReLU,
            pool(),
            LayerSpec::Flatten,
            LayerSpec::Dense(Dense {
                weights: Matrix::zeros(self.hidden, c4 * h * w),
                bias: vec![T::zero(); self.hidden],
            }),
            LayerSpec::ReLU,
            LayerSpec::Dense(Dense {
                weights: Matrix::zeros(self.classes, self.hidden),
                bias: vec![T::zero(); self.classes],
            }),
            LayerSpec::SoftmaxXent,
        ];
        ModelGraph::new(input, layers)
    }
}
