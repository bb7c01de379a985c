//! U-shaped encoder/decoder with skip connections and a sigmoid head.
//!
//! Per encoder level `i` (channels `B * 2^i`): conv3x3+ReLU twice, then 2x2
//! max pooling. The bottleneck doubles the channels once more. Each
//! decoder level upsamples by nearest neighbor, applies conv3x3+ReLU,
//! concatenates the mirrored encoder output and applies conv3x3+ReLU
//! twice. A 1x1 convolution and a sigmoid produce the probability map.
//!
//! All parameters live in one flat vector; [`NetworkParams::layers`]
//! records where each convolution's weights (`[cout][cin][k][k]`) and
//! biases start, in the order encoder, bottleneck, decoder (deepest
//! first), head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::{self, Tensor};
use crate::error::{Error, Result};
use crate::raster::SegMask;
use crate::scalar::Scalar;

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub depth: usize,
    pub base: usize,
    pub in_channels: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            depth: 3,
            base: 8,
            in_channels: 1,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base == 0 || self.in_channels == 0 {
            return Err(Error::invalid("depth, base and input channels must be at least 1"));
        }
        Ok(())
    }

    /// Spatial dims must be multiples of this.
    pub fn stride(&self) -> usize {
        1 << self.depth
    }

    fn channels(&self, level: usize) -> usize {
        self.base << level
    }

    /// (cin, cout, k) for every convolution in parameter order.
    pub fn conv_shapes(&self) -> Vec<(usize, usize, usize)> {
        let d = self.depth;
        let mut v = Vec::with_capacity(5 * d + 3);
        let mut cin = self.in_channels;
        for i in 0..d {
            let c = self.channels(i);
            v.push((cin, c, 3));
            v.push((c, c, 3));
            cin = c;
        }
        let cb = self.channels(d);
        v.push((cin, cb, 3));
        v.push((cb, cb, 3));
        for i in (0..d).rev() {
            let (c, above) = (self.channels(i), self.channels(i + 1));
            v.push((above, c, 3));
            v.push((2 * c, c, 3));
            v.push((c, c, 3));
        }
        v.push((self.base, 1, 1));
        v
    }

    pub fn param_count(&self) -> usize {
        self.conv_shapes()
            .iter()
            .map(|&(ci, co, k)| co * ci * k * k + co)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub offset: usize,
}

impl LayerShape {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    pub fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.weight_len()
    }

    pub fn biases(&self) -> std::ops::Range<usize> {
        let s = self.offset + self.weight_len();
        s..s + self.cout
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub arch: Architecture,
    pub layers: Vec<LayerShape>,
    pub values: Vec<T>,
}

fn layout(arch: &Architecture) -> Vec<LayerShape> {
    let mut off = 0;
    arch.conv_shapes()
        .into_iter()
        .map(|(cin, cout, k)| {
            let l = LayerShape { cin, cout, k, offset: off };
            off += l.weight_len() + cout;
            l
        })
        .collect()
}

impl<T: Scalar> NetworkParams<T> {
    /// Wrap a flat parameter vector, checking its length against `arch`.
    pub fn from_values(arch: Architecture, values: Vec<T>) -> Result<Self> {
        arch.validate()?;
        if values.len() != arch.param_count() {
            return Err(Error::Shape(format!(
                "architecture needs {} parameters, got {}",
                arch.param_count(),
                values.len()
            )));
        }
        Ok(NetworkParams {
            arch,
            layers: layout(&arch),
            values,
        })
    }

    pub fn convert<U: Scalar>(&self) -> NetworkParams<U> {
        NetworkParams {
            arch: self.arch,
            layers: self.layers.clone(),
            values: self.values.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    pub fn head(&self) -> &LayerShape {
        self.layers.last().expect("network has a head")
    }

    /// Set the single head bias (useful to force an all-background output).
    pub fn set_head_bias(&mut self, b: T) {
        let r = self.head().biases();
        self.values[r].fill(b);
    }

    fn w(&self, l: usize) -> &[T] {
        &self.values[self.layers[l].weights()]
    }

    fn b(&self, l: usize) -> &[T] {
        &self.values[self.layers[l].biases()]
    }
}

/// He-normal weights (std `sqrt(2 / fan_in)`) from a seeded stream; all
/// biases start at zero.
pub fn build_net<T: Scalar>(arch: Architecture, seed: u64) -> Result<NetworkParams<T>> {
    arch.validate()?;
    let layers = layout(&arch);
    let mut values = vec![T::zero(); arch.param_count()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in &layers {
        let std = (2.0 / (l.cin * l.k * l.k) as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("positive std");
        for v in &mut values[l.weights()] {
            *v = T::of(dist.sample(&mut rng));
        }
    }
    Ok(NetworkParams { arch, layers, values })
}

struct EncCache<T> {
    input: Tensor<T>,
    a1: Tensor<T>,
    a2: Tensor<T>,
    pool_idx: Vec<u32>,
}

struct DecCache<T> {
    below: Tensor<T>,
    up: Tensor<T>,
    u: Tensor<T>,
    cat: Tensor<T>,
    d1: Tensor<T>,
    d2: Tensor<T>,
}

/// Intermediate activations kept for the backward pass.
pub struct Activations<T> {
    enc: Vec<EncCache<T>>,
    bott_in: Tensor<T>,
    b1: Tensor<T>,
    b2: Tensor<T>,
    dec: Vec<DecCache<T>>,
    pub prob: Tensor<T>,
}

fn conv_relu<T: Scalar>(p: &NetworkParams<T>, l: usize, x: &Tensor<T>) -> Tensor<T> {
    let s = p.layers[l];
    let mut y = tensor::conv_forward(x, p.w(l), p.b(l), s.cout, s.k);
    tensor::relu_inplace(&mut y);
    y
}

fn check_input<T: Scalar>(p: &NetworkParams<T>, x: &Tensor<T>) -> Result<()> {
    let [n, c, h, w] = x.shape();
    let s = p.arch.stride();
    if n == 0 || c != p.arch.in_channels {
        return Err(Error::Shape(format!(
            "network expects {} input channels, got {c}",
            p.arch.in_channels
        )));
    }
    if h == 0 || w == 0 || h % s != 0 || w % s != 0 {
        return Err(Error::Shape(format!(
            "input {h}x{w} is not divisible by {s}"
        )));
    }
    Ok(())
}

/// Full forward pass keeping every activation.
pub fn forward_cached<T: Scalar>(p: &NetworkParams<T>, x: &Tensor<T>) -> Result<Activations<T>> {
    check_input(p, x)?;
    let d = p.arch.depth;
    let mut enc = Vec::with_capacity(d);
    let mut cur = x.clone();
    for i in 0..d {
        let a1 = conv_relu(p, 2 * i, &cur);
        let a2 = conv_relu(p, 2 * i + 1, &a1);
        let (pooled, pool_idx) = tensor::maxpool_forward(&a2);
        enc.push(EncCache { input: cur, a1, a2, pool_idx });
        cur = pooled;
    }
    let b1 = conv_relu(p, 2 * d, &cur);
    let b2 = conv_relu(p, 2 * d + 1, &b1);
    let bott_in = cur;
    let mut below = b2.clone();
    let mut dec = Vec::with_capacity(d);
    for j in 0..d {
        let i = d - 1 - j;
        let l = 2 * d + 2 + 3 * j;
        let up = tensor::upsample_forward(&below);
        let u = conv_relu(p, l, &up);
        let cat = tensor::concat(&u, &enc[i].a2);
        let d1 = conv_relu(p, l + 1, &cat);
        let d2 = conv_relu(p, l + 2, &d1);
        dec.push(DecCache { below, up, u, cat, d1, d2: d2.clone() });
        below = d2;
    }
    let h = p.layers.len() - 1;
    let mut prob = tensor::conv_forward(&below, p.w(h), p.b(h), 1, 1);
    for v in prob.data_mut() {
        *v = tensor::sigmoid(*v);
    }
    if !prob.is_finite() {
        return Err(Error::invalid("network produced non-finite output"));
    }
    Ok(Activations { enc, bott_in, b1, b2, dec, prob })
}

/// Probability map `(N, 1, H, W)` with values in (0, 1).
pub fn forward<T: Scalar>(p: &NetworkParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(forward_cached(p, x)?.prob)
}

fn target_values(target: &[&SegMask], shape: [usize; 4]) -> Result<Vec<f64>> {
    let [n, _, h, w] = shape;
    if target.len() != n || target.iter().any(|m| m.dims() != (w, h)) {
        return Err(Error::Shape("targets do not match prediction shape".into()));
    }
    Ok(target
        .iter()
        .flat_map(|m| m.data().iter().map(|&v| v as f64))
        .collect())
}

/// Mean binary cross-entropy with probabilities clamped to
/// `[1e-7, 1 - 1e-7]`.
pub fn loss<T: Scalar>(pred: &Tensor<T>, target: &[&SegMask]) -> Result<f64> {
    let t = target_values(target, pred.shape())?;
    let s: f64 = pred
        .data()
        .iter()
        .zip(&t)
        .map(|(p, t)| {
            let p = p.f64().clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(s / t.len() as f64)
}

/// Loss and exact gradient with respect to every parameter (same layout as
/// `params.values`).
pub fn backward<T: Scalar>(
    p: &NetworkParams<T>,
    x: &Tensor<T>,
    target: &[&SegMask],
) -> Result<(f64, Vec<T>)> {
    let acts = forward_cached(p, x)?;
    let l = loss(&acts.prob, target)?;
    let g = gradients(p, &acts, target)?;
    Ok((l, g))
}

fn conv_back<T: Scalar>(
    p: &NetworkParams<T>,
    grads: &mut [T],
    l: usize,
    input: &Tensor<T>,
    dy: &Tensor<T>,
    need_dx: bool,
) -> Option<Tensor<T>> {
    let s = p.layers[l];
    let (dw, rest) = grads[s.offset..].split_at_mut(s.weight_len());
    tensor::conv_backward(input, p.w(l), dy, s.k, dw, &mut rest[..s.cout], need_dx)
}

fn gradients<T: Scalar>(p: &NetworkParams<T>, a: &Activations<T>, target: &[&SegMask]) -> Result<Vec<T>> {
    let d = p.arch.depth;
    let t = target_values(target, a.prob.shape())?;
    let n = t.len() as f64;
    let mut grads = vec![T::zero(); p.values.len()];

    // d(mean BCE)/d(logit) = (p - t) / N where the clamp is inactive.
    let mut dlogit = Tensor::zeros(a.prob.shape());
    for ((g, pv), tv) in dlogit.data_mut().iter_mut().zip(a.prob.data()).zip(&t) {
        let pf = pv.f64();
        if pf > PROB_CLAMP && pf < 1.0 - PROB_CLAMP {
            *g = T::of((pf - tv) / n);
        }
    }
    let head = p.layers.len() - 1;
    let top = &a.dec[d - 1].d2;
    let mut g_below = conv_back(p, &mut grads, head, top, &dlogit, true).expect("dx requested");

    let mut skip_grads: Vec<Option<Tensor<T>>> = (0..d).map(|_| None).collect();
    for j in (0..d).rev() {
        let i = d - 1 - j;
        let l = 2 * d + 2 + 3 * j;
        let c = &a.dec[j];
        let mut g = g_below;
        tensor::relu_backward_inplace(&mut g, &c.d2);
        let mut g = conv_back(p, &mut grads, l + 2, &c.d1, &g, true).expect("dx");
        tensor::relu_backward_inplace(&mut g, &c.d1);
        let gcat = conv_back(p, &mut grads, l + 1, &c.cat, &g, true).expect("dx");
        let (mut gu, gskip) = tensor::split(&gcat, c.u.shape()[1]);
        skip_grads[i] = Some(gskip);
        tensor::relu_backward_inplace(&mut gu, &c.u);
        let gup = conv_back(p, &mut grads, l, &c.up, &gu, true).expect("dx");
        g_below = tensor::upsample_backward(&gup);
        debug_assert_eq!(g_below.shape(), c.below.shape());
    }

    let mut g = g_below;
    tensor::relu_backward_inplace(&mut g, &a.b2);
    let mut g = conv_back(p, &mut grads, 2 * d + 1, &a.b1, &g, true).expect("dx");
    tensor::relu_backward_inplace(&mut g, &a.b1);
    let mut g_pooled = conv_back(p, &mut grads, 2 * d, &a.bott_in, &g, true).expect("dx");

    for i in (0..d).rev() {
        let c = &a.enc[i];
        let mut g = tensor::maxpool_backward(&g_pooled, &c.pool_idx, c.a2.shape());
        tensor::add_inplace(&mut g, skip_grads[i].as_ref().expect("skip gradient"));
        tensor::relu_backward_inplace(&mut g, &c.a2);
        let mut g1 = conv_back(p, &mut grads, 2 * i + 1, &c.a1, &g, true).expect("dx");
        tensor::relu_backward_inplace(&mut g1, &c.a1);
        match conv_back(p, &mut grads, 2 * i, &c.input, &g1, i > 0) {
            Some(gx) => g_pooled = gx,
            None => break,
        }
    }
    if grads.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite gradient"));
    }
    Ok(grads)
}
