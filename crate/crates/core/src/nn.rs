//! Minimal feed-forward building blocks with hand-written backward passes.
//!
//! Activations are `f64` tensors whose leading axis is the batch. Parameters
//! live outside the layers in a [`ParamSet`] keyed by `"<layer>.weight"` and
//! `"<layer>.bias"`, so a network description can be shared between the
//! GAN discriminator and the hashing encoder while each keeps its own
//! weights.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayD, ArrayView2, Axis, Ix2, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Result};

pub type Tensor = ArrayD<f64>;

/// Named parameter arrays, iterated in name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    /// Total number of scalar values.
    pub fn num_values(&self) -> usize {
        self.entries.values().map(|t| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.raw_dim())))
            .collect();
        Self { entries }
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Adds `other` into `self`; every name in `other` must exist in `self`
    /// with the same shape.
    pub fn accumulate(&mut self, other: &ParamSet) -> Result<()> {
        for (name, g) in &other.entries {
            match self.entries.get_mut(name) {
                Some(t) if t.shape() == g.shape() => *t += g,
                Some(_) => return shape_err(format!("parameter {name} has mismatched shape")),
                None => return shape_err(format!("unknown parameter {name}")),
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.entries.values_mut() {
            t.mapv_inplace(|v| v * factor);
        }
    }

    /// Copy with every name prefixed by `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> ParamSet {
        let entries = self
            .entries
            .iter()
            .map(|(k, v)| (format!("{prefix}{k}"), v.clone()))
            .collect();
        ParamSet { entries }
    }

    /// Entries whose names start with `prefix`, with the prefix removed.
    pub fn strip_prefix(&self, prefix: &str) -> ParamSet {
        let entries = self
            .entries
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
            .collect();
        ParamSet { entries }
    }

    pub fn extend(&mut self, other: ParamSet) {
        self.entries.extend(other.entries);
    }

    /// True when both sets hold the same names with the same shapes.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(other.entries.iter())
                .all(|((ka, va), (kb, vb))| ka == kb && va.shape() == vb.shape())
    }
}

impl FromIterator<(String, Tensor)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        Self {
            entries: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense {
        name: String,
        inputs: usize,
        outputs: usize,
    },
    Conv {
        name: String,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    ConvTranspose {
        name: String,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    LeakyRelu {
        slope: f64,
    },
    Tanh,
    Flatten,
    Unflatten {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl Layer {
    fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        match self {
            Layer::Dense {
                name,
                inputs,
                outputs,
            } => vec![
                (format!("{name}.weight"), vec![*inputs, *outputs]),
                (format!("{name}.bias"), vec![*outputs]),
            ],
            Layer::Conv {
                name,
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                (
                    format!("{name}.weight"),
                    vec![in_channels * kernel * kernel, *out_channels],
                ),
                (format!("{name}.bias"), vec![*out_channels]),
            ],
            Layer::ConvTranspose {
                name,
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                (
                    format!("{name}.weight"),
                    vec![*in_channels, out_channels * kernel * kernel],
                ),
                (format!("{name}.bias"), vec![*out_channels]),
            ],
            _ => Vec::new(),
        }
    }

    /// Number of inputs feeding each output unit.
    fn fan_in(&self) -> Option<usize> {
        match self {
            Layer::Dense { inputs, .. } => Some(*inputs),
            Layer::Conv {
                in_channels, kernel, ..
            } => Some(in_channels * kernel * kernel),
            Layer::ConvTranspose {
                in_channels,
                kernel,
                stride,
                ..
            } => Some((in_channels * kernel * kernel / (stride * stride)).max(1)),
            _ => None,
        }
    }
}

/// Geometry of a convolution from an `h × w` image to an `out_h × out_w` grid.
#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    channels: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn rows(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }

    /// Source offset into an NCHW buffer, or None for padding.
    #[inline]
    fn source(&self, n: usize, c: usize, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
        let ix = (ox * self.stride + kx) as isize - self.padding as isize;
        if iy < 0 || ix < 0 || iy >= self.h as isize || ix >= self.w as isize {
            return None;
        }
        Some(((n * self.channels + c) * self.h + iy as usize) * self.w + ix as usize)
    }
}

fn im2col(x: &[f64], g: &ConvGeom) -> Array2<f64> {
    let cols = g.patch_len();
    let mut out = vec![0.0; g.rows() * cols];
    for n in 0..g.batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let row = ((n * g.out_h + oy) * g.out_w + ox) * cols;
                for c in 0..g.channels {
                    for ky in 0..g.kernel {
                        for kx in 0..g.kernel {
                            if let Some(src) = g.source(n, c, oy, ox, ky, kx) {
                                out[row + (c * g.kernel + ky) * g.kernel + kx] = x[src];
                            }
                        }
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((g.rows(), cols), out).expect("im2col shape")
}

fn col2im(cols: ArrayView2<f64>, g: &ConvGeom) -> Vec<f64> {
    let mut out = vec![0.0; g.batch * g.channels * g.h * g.w];
    let width = g.patch_len();
    let cols = cols.as_standard_layout();
    let data = cols.as_slice().expect("standard layout");
    for n in 0..g.batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let row = ((n * g.out_h + oy) * g.out_w + ox) * width;
                for c in 0..g.channels {
                    for ky in 0..g.kernel {
                        for kx in 0..g.kernel {
                            if let Some(dst) = g.source(n, c, oy, ox, ky, kx) {
                                out[dst] += data[row + (c * g.kernel + ky) * g.kernel + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// `[n, c, h, w]` → `[n*h*w, c]`
fn channels_last(x: &Tensor) -> Array2<f64> {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let permuted = x.view().permuted_axes(IxDyn(&[0, 2, 3, 1]));
    let flat: Vec<f64> = permuted.iter().copied().collect();
    Array2::from_shape_vec((n * h * w, c), flat).expect("channels_last shape")
}

/// `[n*h*w, c]` → `[n, c, h, w]`
fn channels_first(rows: &Array2<f64>, n: usize, h: usize, w: usize) -> Tensor {
    let c = rows.ncols();
    let view = rows
        .view()
        .into_shape_with_order(IxDyn(&[n, h, w, c]))
        .expect("channels_first shape");
    view.permuted_axes(IxDyn(&[0, 3, 1, 2]))
        .as_standard_layout()
        .into_owned()
}

fn matrix<'a>(params: &'a ParamSet, name: &str) -> ArrayView2<'a, f64> {
    params
        .get(name)
        .unwrap_or_else(|| panic!("missing parameter {name}"))
        .view()
        .into_dimensionality::<Ix2>()
        .expect("weight must be 2-d")
}

fn bias<'a>(params: &'a ParamSet, name: &str) -> &'a Tensor {
    params
        .get(name)
        .unwrap_or_else(|| panic!("missing parameter {name}"))
}

#[derive(Debug)]
enum Cache {
    Input(Tensor),
    Patches { cols: Array2<f64>, geom: ConvGeom },
    Rows { rows: Array2<f64>, geom: ConvGeom },
    Output(Tensor),
    Shape(Vec<usize>),
}

/// Intermediate values recorded by [`Network::forward`] for the backward pass.
#[derive(Debug, Default)]
pub struct Trace {
    caches: Vec<Cache>,
}

/// A straight pipeline of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.layers.iter().flat_map(Layer::param_shapes).collect()
    }

    /// Weights drawn from N(0, std²), biases zero.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R, std: f64) -> ParamSet {
        let normal = Normal::new(0.0, std).expect("valid std");
        self.param_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let value = if name.ends_with(".bias") {
                    Tensor::zeros(IxDyn(&shape))
                } else {
                    let n: usize = shape.iter().product();
                    let data = (0..n).map(|_| normal.sample(rng)).collect();
                    Tensor::from_shape_vec(IxDyn(&shape), data).expect("init shape")
                };
                (name, value)
            })
            .collect()
    }

    /// Weights drawn from N(0, gain² / fan_in), biases zero.
    pub fn init_scaled<R: Rng + ?Sized>(&self, rng: &mut R, gain: f64) -> ParamSet {
        let mut out = ParamSet::new();
        for layer in &self.layers {
            let Some(fan_in) = layer.fan_in() else { continue };
            let std = gain / (fan_in as f64).sqrt();
            let shapes = Network::new(vec![layer.clone()]);
            out.extend(shapes.init_params(rng, std));
        }
        out
    }

    pub fn zero_params(&self) -> ParamSet {
        self.param_shapes()
            .into_iter()
            .map(|(name, shape)| (name, Tensor::zeros(IxDyn(&shape))))
            .collect()
    }

    /// True when `params` carries every parameter this network needs.
    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        for (name, shape) in self.param_shapes() {
            match params.get(&name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return shape_err(format!(
                        "parameter {name}: expected {shape:?}, found {:?}",
                        t.shape()
                    ))
                }
                None => return shape_err(format!("missing parameter {name}")),
            }
        }
        Ok(())
    }

    pub fn infer(&self, params: &ParamSet, x: Tensor) -> Result<Tensor> {
        self.forward(params, x).map(|(y, _)| y)
    }

    pub fn forward(&self, params: &ParamSet, mut x: Tensor) -> Result<(Tensor, Trace)> {
        let mut trace = Trace::default();
        for layer in &self.layers {
            let (y, cache) = forward_layer(layer, params, x)?;
            trace.caches.push(cache);
            x = y;
        }
        Ok((x, trace))
    }

    /// Propagates `dy` back through the network, returning the gradient with
    /// respect to the input and the parameter gradients.
    pub fn backward(&self, params: &ParamSet, trace: Trace, dy: Tensor) -> (Tensor, ParamSet) {
        let mut grads = ParamSet::new();
        let mut d = dy;
        for (layer, cache) in self.layers.iter().zip(trace.caches).rev() {
            d = backward_layer(layer, params, cache, d, &mut grads);
        }
        (d, grads)
    }
}

fn forward_layer(layer: &Layer, params: &ParamSet, x: Tensor) -> Result<(Tensor, Cache)> {
    match layer {
        Layer::Dense {
            name,
            inputs,
            outputs,
        } => {
            if x.ndim() != 2 || x.shape()[1] != *inputs {
                return shape_err(format!(
                    "{name}: expected [batch, {inputs}], found {:?}",
                    x.shape()
                ));
            }
            let x2 = x.view().into_dimensionality::<Ix2>().expect("2-d");
            let w = matrix(params, &format!("{name}.weight"));
            let b = bias(params, &format!("{name}.bias"));
            let mut y = x2.dot(&w);
            y += &b.view().into_shape_with_order(*outputs).expect("bias shape");
            Ok((y.into_dyn(), Cache::Input(x)))
        }
        Layer::Conv {
            name,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        } => {
            if x.ndim() != 4 || x.shape()[1] != *in_channels {
                return shape_err(format!(
                    "{name}: expected [batch, {in_channels}, h, w], found {:?}",
                    x.shape()
                ));
            }
            let s = x.shape();
            let (h, w) = (s[2], s[3]);
            if h + 2 * padding < *kernel || w + 2 * padding < *kernel {
                return shape_err(format!("{name}: input {h}x{w} smaller than kernel"));
            }
            let geom = ConvGeom {
                batch: s[0],
                channels: *in_channels,
                h,
                w,
                kernel: *kernel,
                stride: *stride,
                padding: *padding,
                out_h: (h + 2 * padding - kernel) / stride + 1,
                out_w: (w + 2 * padding - kernel) / stride + 1,
            };
            let x = x.as_standard_layout();
            let cols = im2col(x.as_slice().expect("contiguous"), &geom);
            let weight = matrix(params, &format!("{name}.weight"));
            let b = bias(params, &format!("{name}.bias"));
            let mut rows = cols.dot(&weight);
            rows += &b.view().into_shape_with_order(*out_channels).expect("bias shape");
            let y = channels_first(&rows, geom.batch, geom.out_h, geom.out_w);
            Ok((y, Cache::Patches { cols, geom }))
        }
        Layer::ConvTranspose {
            name,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        } => {
            if x.ndim() != 4 || x.shape()[1] != *in_channels {
                return shape_err(format!(
                    "{name}: expected [batch, {in_channels}, h, w], found {:?}",
                    x.shape()
                ));
            }
            let s = x.shape();
            let (n, h, w) = (s[0], s[2], s[3]);
            let out_h = (h - 1) * stride + kernel;
            let out_w = (w - 1) * stride + kernel;
            if out_h < 2 * padding + 1 || out_w < 2 * padding + 1 {
                return shape_err(format!("{name}: padding too large"));
            }
            // Adjoint of a convolution from the output image back to the input grid.
            let geom = ConvGeom {
                batch: n,
                channels: *out_channels,
                h: out_h - 2 * padding,
                w: out_w - 2 * padding,
                kernel: *kernel,
                stride: *stride,
                padding: *padding,
                out_h: h,
                out_w: w,
            };
            let rows = channels_last(&x);
            let weight = matrix(params, &format!("{name}.weight"));
            let cols = rows.dot(&weight);
            let data = col2im(cols.view(), &geom);
            let mut y = Tensor::from_shape_vec(IxDyn(&[n, *out_channels, geom.h, geom.w]), data)
                .expect("conv transpose shape");
            let b = bias(params, &format!("{name}.bias"));
            for (o, mut plane) in y.axis_iter_mut(Axis(1)).enumerate() {
                plane += b[[o]];
            }
            Ok((y, Cache::Rows { rows, geom }))
        }
        Layer::LeakyRelu { slope } => {
            let y = x.mapv(|v| if v > 0.0 { v } else { slope * v });
            Ok((y, Cache::Input(x)))
        }
        Layer::Tanh => {
            let y = x.mapv(f64::tanh);
            Ok((y.clone(), Cache::Output(y)))
        }
        Layer::Flatten => {
            let shape = x.shape().to_vec();
            let n = shape[0];
            let rest: usize = shape[1..].iter().product();
            let y = x
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order(IxDyn(&[n, rest]))
                .expect("flatten");
            Ok((y, Cache::Shape(shape)))
        }
        Layer::Unflatten {
            channels,
            height,
            width,
        } => {
            let shape = x.shape().to_vec();
            if shape.len() != 2 || shape[1] != channels * height * width {
                return shape_err(format!(
                    "unflatten: expected [batch, {}], found {shape:?}",
                    channels * height * width
                ));
            }
            let y = x
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order(IxDyn(&[shape[0], *channels, *height, *width]))
                .expect("unflatten");
            Ok((y, Cache::Shape(shape)))
        }
    }
}

fn backward_layer(
    layer: &Layer,
    params: &ParamSet,
    cache: Cache,
    dy: Tensor,
    grads: &mut ParamSet,
) -> Tensor {
    match (layer, cache) {
        (Layer::Dense { name, .. }, Cache::Input(x)) => {
            let x2 = x.into_dimensionality::<Ix2>().expect("2-d");
            let dy2 = dy.into_dimensionality::<Ix2>().expect("2-d");
            let w = matrix(params, &format!("{name}.weight"));
            grads.insert(format!("{name}.weight"), x2.t().dot(&dy2).into_dyn());
            grads.insert(format!("{name}.bias"), dy2.sum_axis(Axis(0)).into_dyn());
            dy2.dot(&w.t()).into_dyn()
        }
        (Layer::Conv { name, .. }, Cache::Patches { cols, geom }) => {
            let dy_rows = channels_last(&dy);
            let w = matrix(params, &format!("{name}.weight"));
            grads.insert(format!("{name}.weight"), cols.t().dot(&dy_rows).into_dyn());
            grads.insert(format!("{name}.bias"), dy_rows.sum_axis(Axis(0)).into_dyn());
            let dcols = dy_rows.dot(&w.t());
            let dx = col2im(dcols.view(), &geom);
            Tensor::from_shape_vec(IxDyn(&[geom.batch, geom.channels, geom.h, geom.w]), dx)
                .expect("conv input grad shape")
        }
        (Layer::ConvTranspose { name, .. }, Cache::Rows { rows, geom }) => {
            let dy = dy.as_standard_layout();
            let dcols = im2col(dy.as_slice().expect("contiguous"), &geom);
            let w = matrix(params, &format!("{name}.weight"));
            grads.insert(format!("{name}.weight"), rows.t().dot(&dcols).into_dyn());
            grads.insert(
                format!("{name}.bias"),
                dy.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0)),
            );
            let drows = dcols.dot(&w.t());
            channels_first(&drows, geom.batch, geom.out_h, geom.out_w)
        }
        (Layer::LeakyRelu { slope }, Cache::Input(x)) => {
            let mut dx = dy;
            dx.zip_mut_with(&x, |d, &v| {
                if v <= 0.0 {
                    *d *= slope
                }
            });
            dx
        }
        (Layer::Tanh, Cache::Output(y)) => {
            let mut dx = dy;
            dx.zip_mut_with(&y, |d, &t| *d *= 1.0 - t * t);
            dx
        }
        (Layer::Flatten | Layer::Unflatten { .. }, Cache::Shape(shape)) => dy
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(&shape))
            .expect("reshape back"),
        (layer, _) => unreachable!("cache does not match layer {layer:?}"),
    }
}

/// Adaptive-moment optimizer state for one parameter set.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    steps: i32,
    first: ParamSet,
    second: ParamSet,
}

impl Adam {
    pub fn new(params: &ParamSet, learning_rate: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon: 1e-8,
            steps: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        if !params.same_layout(&self.first) {
            return shape_err("optimizer state does not match parameters");
        }
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps);
        let bc2 = 1.0 - self.beta2.powi(self.steps);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for ((name, p), (m, v)) in params
            .iter_mut()
            .zip(self.first.entries.values_mut().zip(self.second.entries.values_mut()))
        {
            let Some(g) = grads.get(name) else { continue };
            if g.shape() != p.shape() {
                return shape_err(format!("gradient for {name} has mismatched shape"));
            }
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *p -= lr * mh / (vh.sqrt() + eps);
                });
        }
        Ok(())
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Numerically stable `ln Σ exp(x_i)`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
