//! Dense `(N, C, H, W)` tensors and the forward/backward kernels the
//! segmentation network is built from.

use crate::error::{Error, Result};
use crate::raster::Image;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "tensor {shape:?} needs {} values, got {}",
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Stack same-sized images into a batch; image channels become tensor
    /// channels.
    pub fn from_images(images: &[&Image<T>]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::invalid("cannot build a tensor from zero images"))?;
        let (w, h, c) = (first.width(), first.height(), first.channels());
        let mut data = Vec::with_capacity(images.len() * c * h * w);
        for img in images {
            if img.dims() != (w, h) || img.channels() != c {
                return Err(Error::Shape("batch images differ in shape".into()));
            }
            for ch in 0..c {
                data.extend((0..w * h).map(|i| img.data()[i * c + ch]));
            }
        }
        Tensor::from_vec([images.len(), c, h, w], data)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &mut self.data[start..start + hw]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Dot product with eight independent accumulators so the reduction
/// vectorizes without reassociation by the compiler.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = acc.iter().fold(T::zero(), |s, &v| s + v);
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

/// Rows and columns of the output that read a valid input pixel for a tap
/// offset `(dy, dx)` under zero padding.
#[inline]
fn tap_range(h: usize, w: usize, dy: isize, dx: isize) -> (usize, usize, usize, usize) {
    let y0 = (-dy).max(0) as usize;
    let y1 = (h as isize - dy).min(h as isize).max(0) as usize;
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
    (y0, y1, x0, x1)
}

/// `k`x`k` convolution (cross-correlation) with zero "same" padding.
/// Weights are laid out `[cout][cin][k][k]`.
pub fn conv_forward<T: Scalar>(x: &Tensor<T>, w: &[T], b: &[T], cout: usize, k: usize) -> Tensor<T> {
    let [n, cin, h, wd] = x.shape;
    debug_assert_eq!(w.len(), cout * cin * k * k);
    let p = (k / 2) as isize;
    let mut y = Tensor::zeros([n, cout, h, wd]);
    for ni in 0..n {
        for co in 0..cout {
            let out = y.plane_mut(ni, co);
            out.fill(b[co]);
            for ci in 0..cin {
                let inp = x.plane(ni, ci);
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = w[((co * cin + ci) * k + ky) * k + kx];
                        let (dy, dx) = (ky as isize - p, kx as isize - p);
                        let (y0, y1, x0, x1) = tap_range(h, wd, dy, dx);
                        for yy in y0..y1 {
                            let o = &mut out[yy * wd + x0..yy * wd + x1];
                            let s = ((yy as isize + dy) as usize) * wd;
                            let i = &inp[(s as isize + x0 as isize + dx) as usize
                                ..(s as isize + x1 as isize + dx) as usize];
                            for (ov, iv) in o.iter_mut().zip(i) {
                                *ov += wv * *iv;
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Gradients of [`conv_forward`]: weight and bias gradients are added into
/// `dw` and `db`; the input gradient is returned when requested.
pub fn conv_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &[T],
    dy: &Tensor<T>,
    k: usize,
    dw: &mut [T],
    db: &mut [T],
    need_dx: bool,
) -> Option<Tensor<T>> {
    let [n, cin, h, wd] = x.shape;
    let cout = dy.shape[1];
    let p = (k / 2) as isize;
    let mut dx_t = need_dx.then(|| Tensor::zeros(x.shape));
    for ni in 0..n {
        for co in 0..cout {
            let g = dy.plane(ni, co);
            db[co] += g.iter().fold(T::zero(), |s, &v| s + v);
            for ci in 0..cin {
                let inp = x.plane(ni, ci);
                for ky in 0..k {
                    for kx in 0..k {
                        let widx = ((co * cin + ci) * k + ky) * k + kx;
                        let (oy, ox) = (ky as isize - p, kx as isize - p);
                        let (y0, y1, x0, x1) = tap_range(h, wd, oy, ox);
                        let mut acc = T::zero();
                        for yy in y0..y1 {
                            let s = ((yy as isize + oy) as usize * wd) as isize;
                            let gi = &g[yy * wd + x0..yy * wd + x1];
                            let ii = &inp[(s + x0 as isize + ox) as usize..(s + x1 as isize + ox) as usize];
                            acc += dot(gi, ii);
                        }
                        dw[widx] += acc;
                        if let Some(dxt) = dx_t.as_mut() {
                            let wv = w[widx];
                            let d = dxt.plane_mut(ni, ci);
                            for yy in y0..y1 {
                                let s = ((yy as isize + oy) as usize * wd) as isize;
                                let gi = &g[yy * wd + x0..yy * wd + x1];
                                let di = &mut d[(s + x0 as isize + ox) as usize
                                    ..(s + x1 as isize + ox) as usize];
                                for (dv, gv) in di.iter_mut().zip(gi) {
                                    *dv += wv * *gv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    dx_t
}

pub fn relu_inplace<T: Scalar>(t: &mut Tensor<T>) {
    for v in t.data.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zero the gradient wherever the post-activation output was not positive.
pub fn relu_backward_inplace<T: Scalar>(grad: &mut Tensor<T>, activated: &Tensor<T>) {
    for (g, a) in grad.data.iter_mut().zip(&activated.data) {
        if *a <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2x2 max pooling with stride 2; returns the pooled tensor and, per output
/// element, the flat in-plane index of the winning input (first maximum).
pub fn maxpool_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let [n, c, h, w] = x.shape;
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros([n, c, oh, ow]);
    let mut idx = Vec::with_capacity(n * c * oh * ow);
    for ni in 0..n {
        for ci in 0..c {
            let inp = x.plane(ni, ci);
            let out = y.plane_mut(ni, ci);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = (2 * oy) * w + 2 * ox;
                    for cand in [
                        (2 * oy) * w + 2 * ox + 1,
                        (2 * oy + 1) * w + 2 * ox,
                        (2 * oy + 1) * w + 2 * ox + 1,
                    ] {
                        if inp[cand] > inp[best] {
                            best = cand;
                        }
                    }
                    out[oy * ow + ox] = inp[best];
                    idx.push(best as u32);
                }
            }
        }
    }
    (y, idx)
}

pub fn maxpool_backward<T: Scalar>(dy: &Tensor<T>, idx: &[u32], in_shape: [usize; 4]) -> Tensor<T> {
    let mut dx = Tensor::zeros(in_shape);
    let [n, c, _, _] = in_shape;
    let per = dy.shape[2] * dy.shape[3];
    for ni in 0..n {
        for ci in 0..c {
            let g = dy.plane(ni, ci);
            let base = (ni * c + ci) * per;
            let d = dx.plane_mut(ni, ci);
            for (j, gv) in g.iter().enumerate() {
                d[idx[base + j] as usize] += *gv;
            }
        }
    }
    dx
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape;
    let mut y = Tensor::zeros([n, c, 2 * h, 2 * w]);
    for ni in 0..n {
        for ci in 0..c {
            let inp = x.plane(ni, ci);
            let out = y.plane_mut(ni, ci);
            for yy in 0..2 * h {
                for xx in 0..2 * w {
                    out[yy * 2 * w + xx] = inp[(yy / 2) * w + xx / 2];
                }
            }
        }
    }
    y
}

pub fn upsample_backward<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let [n, c, h2, w2] = dy.shape;
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor::zeros([n, c, h, w]);
    for ni in 0..n {
        for ci in 0..c {
            let g = dy.plane(ni, ci);
            let d = dx.plane_mut(ni, ci);
            for yy in 0..h2 {
                for xx in 0..w2 {
                    d[(yy / 2) * w + xx / 2] += g[yy * w2 + xx];
                }
            }
        }
    }
    dx
}

/// Channel concatenation `[a, b]`.
pub fn concat<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let [n, ca, h, w] = a.shape;
    let cb = b.shape[1];
    let mut y = Tensor::zeros([n, ca + cb, h, w]);
    for ni in 0..n {
        for c in 0..ca {
            y.plane_mut(ni, c).copy_from_slice(a.plane(ni, c));
        }
        for c in 0..cb {
            y.plane_mut(ni, ca + c).copy_from_slice(b.plane(ni, c));
        }
    }
    y
}

/// Inverse of [`concat`] for gradients: split off the first `ca` channels.
pub fn split<T: Scalar>(t: &Tensor<T>, ca: usize) -> (Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = t.shape;
    let mut a = Tensor::zeros([n, ca, h, w]);
    let mut b = Tensor::zeros([n, c - ca, h, w]);
    for ni in 0..n {
        for ci in 0..c {
            if ci < ca {
                a.plane_mut(ni, ci).copy_from_slice(t.plane(ni, ci));
            } else {
                b.plane_mut(ni, ci - ca).copy_from_slice(t.plane(ni, ci));
            }
        }
    }
    (a, b)
}

pub fn add_inplace<T: Scalar>(a: &mut Tensor<T>, b: &Tensor<T>) {
    for (x, y) in a.data.iter_mut().zip(&b.data) {
        *x += *y;
    }
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}
