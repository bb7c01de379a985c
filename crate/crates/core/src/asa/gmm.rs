//! One-dimensional Gaussian mixture fitted by expectation-maximization.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Image, SegMask};
use crate::scalar::Scalar;

pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component<T> {
    pub weight: T,
    pub mean: T,
    pub variance: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel<T> {
    pub components: Vec<Component<T>>,
}

/// Result of [`fit_gmm`], including the per-iteration log-likelihood trace.
#[derive(Debug, Clone)]
pub struct GmmFit<T> {
    pub model: GmmModel<T>,
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + d * d / var)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl<T: Scalar> GmmModel<T> {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    /// Per-component log joint density `ln w_k + ln N(x; mu_k, var_k)`.
    fn log_joint(&self, x: f64, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.weight.f64().ln() + log_normal(x, c.mean.f64(), c.variance.f64());
        }
    }

    pub fn log_likelihood(&self, xs: &[T]) -> f64 {
        let mut buf = vec![0.0; self.k()];
        xs.iter()
            .map(|x| {
                self.log_joint(x.f64(), &mut buf);
                log_sum_exp(&buf)
            })
            .sum()
    }

    pub fn posterior(&self, x: T, component: usize) -> T {
        let mut buf = vec![0.0; self.k()];
        self.log_joint(x.f64(), &mut buf);
        let z = log_sum_exp(&buf);
        T::of((buf[component] - z).exp())
    }

    /// Index of the component with the lowest (`dark`) or highest mean.
    pub fn foreground_component(&self, dark: bool) -> usize {
        let mut idx = 0;
        for (i, c) in self.components.iter().enumerate() {
            let better = if dark {
                c.mean < self.components[idx].mean
            } else {
                c.mean > self.components[idx].mean
            };
            if better {
                idx = i;
            }
        }
        idx
    }
}

fn distinct_count<T: Scalar>(xs: &[T], cap: usize) -> usize {
    let mut v: Vec<f64> = xs.iter().map(|x| x.f64()).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len().min(cap)
}

/// k-means++ style seeding: first mean uniform, the rest with probability
/// proportional to squared distance from the nearest chosen mean.
fn seed_means<T: Scalar>(xs: &[T], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut means = vec![xs[rng.random_range(0..xs.len())].f64()];
    let mut d2: Vec<f64> = xs.iter().map(|x| (x.f64() - means[0]).powi(2)).collect();
    while means.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            xs[rng.random_range(0..xs.len())].f64()
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut pick = xs.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            xs[pick].f64()
        };
        means.push(next);
        for (d, x) in d2.iter_mut().zip(xs) {
            *d = d.min((x.f64() - next).powi(2));
        }
    }
    means
}

/// Fit a `k`-component mixture. Stops when the log-likelihood gain drops
/// below `tol` or after `max_iters` EM updates.
pub fn fit_gmm<T: Scalar>(
    xs: &[T],
    k: usize,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> Result<GmmFit<T>> {
    if xs.is_empty() {
        return Err(Error::invalid("cannot fit a mixture to an empty sample"));
    }
    if k == 0 {
        return Err(Error::invalid("mixture needs at least one component"));
    }
    if distinct_count(xs, k) < k {
        return Err(Error::invalid(format!(
            "{k} components requested but the sample has fewer distinct values"
        )));
    }
    let n = xs.len() as f64;
    let mean_all = xs.iter().map(|x| x.f64()).sum::<f64>() / n;
    let var_all = (xs.iter().map(|x| (x.f64() - mean_all).powi(2)).sum::<f64>() / n)
        .max(VARIANCE_FLOOR);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params: Vec<(f64, f64, f64)> = seed_means(xs, k, &mut rng)
        .into_iter()
        .map(|m| (1.0 / k as f64, m, var_all))
        .collect();

    let to_model = |p: &[(f64, f64, f64)]| GmmModel {
        components: p
            .iter()
            .map(|&(w, m, v)| Component {
                weight: T::of(w),
                mean: T::of(m),
                variance: T::of(v),
            })
            .collect(),
    };

    let mut resp = vec![0.0f64; xs.len() * k];
    let mut buf = vec![0.0f64; k];
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        // E-step; the log-likelihood of the current parameters falls out.
        let mut ll = 0.0;
        for (i, x) in xs.iter().enumerate() {
            let x = x.f64();
            for (b, &(w, m, v)) in buf.iter_mut().zip(&params) {
                *b = w.ln() + log_normal(x, m, v);
            }
            let z = log_sum_exp(&buf);
            ll += z;
            for j in 0..k {
                resp[i * k + j] = (buf[j] - z).exp();
            }
        }
        let converged = trace
            .last()
            .map(|&prev: &f64| ll - prev < tol)
            .unwrap_or(false);
        trace.push(ll);
        if converged || iterations >= max_iters || k == 1 && iterations >= 1 {
            break;
        }
        // M-step.
        for (j, p) in params.iter_mut().enumerate() {
            let nk: f64 = (0..xs.len()).map(|i| resp[i * k + j]).sum();
            if nk <= f64::MIN_POSITIVE {
                continue;
            }
            let mean = xs
                .iter()
                .enumerate()
                .map(|(i, x)| resp[i * k + j] * x.f64())
                .sum::<f64>()
                / nk;
            let var = xs
                .iter()
                .enumerate()
                .map(|(i, x)| resp[i * k + j] * (x.f64() - mean).powi(2))
                .sum::<f64>()
                / nk;
            *p = (nk / n, mean, var.max(VARIANCE_FLOOR));
        }
        iterations += 1;
    }
    Ok(GmmFit {
        model: to_model(&params),
        log_likelihood: trace,
        iterations,
    })
}

/// Foreground where the posterior of the foreground component is at least
/// `t`. With `dark_foreground` the lowest-mean component is foreground.
pub fn gmm_threshold<T: Scalar>(
    model: &GmmModel<T>,
    img: &Image<T>,
    t: f64,
    dark_foreground: bool,
) -> Result<SegMask> {
    if model.k() == 0 {
        return Err(Error::invalid("mixture model has no components"));
    }
    if img.channels() != 1 {
        return Err(Error::Shape("thresholding needs a grayscale image".into()));
    }
    let fg = model.foreground_component(dark_foreground);
    Ok(SegMask::from_fn(img.width(), img.height(), |x, y| {
        model.posterior(img.get(x, y), fg).f64() >= t
    }))
}
