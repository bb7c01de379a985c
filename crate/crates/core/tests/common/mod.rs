//! Independent oracles and randomized checks shared by the property tests
//! and the acceptance suite. Every check returns a short summary on
//! success and a description of the first mismatch on failure.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use stereo_core::asa::gmm::fit_gmm;
use stereo_core::asa::savgol::{savgol_coefficients, smooth_cyclic};
use stereo_core::asa::watershed::watershed_in;
use stereo_core::disector::{count_cells, CountVerdict, DisectorFrame};
use stereo_core::raster::{Image, LabelMap, Rect, SegMask};
use stereo_core::review_loop::{ReviewItem, Reviewer, Verdict};
use stereo_core::segnet::{backward, build_net, forward, loss, Architecture, Tensor};
use stereo_core::synth::OracleReviewer;

pub type Check = Result<String, String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- disector

/// Random blobs (filled rectangles, disks and scattered pixel clusters)
/// painted over each other, so labels may be fragmented or touching.
pub fn random_labels(r: &mut impl Rng, w: usize, h: usize) -> LabelMap {
    let mut l = LabelMap::empty(w, h);
    let n = r.random_range(0..12u32);
    for label in 1..=n {
        let cx = r.random_range(0..w) as isize;
        let cy = r.random_range(0..h) as isize;
        let rad = r.random_range(0..6) as isize;
        let shape = r.random_range(0..3);
        for dy in -rad..=rad {
            for dx in -rad..=rad {
                let keep = match shape {
                    0 => true,
                    1 => dx * dx + dy * dy <= rad * rad,
                    _ => r.random_bool(0.4),
                };
                let (x, y) = (cx + dx, cy + dy);
                if keep && x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                    l.set(x as usize, y as usize, label);
                }
            }
        }
    }
    l
}

pub fn random_frame(r: &mut impl Rng, w: usize, h: usize) -> DisectorFrame {
    let t = r.random_range(1..=3);
    let fw = r.random_range(2 * t + 1..=w);
    let fh = r.random_range(2 * t + 1..=h);
    let x0 = r.random_range(0..=w - fw);
    let y0 = r.random_range(0..=h - fh);
    DisectorFrame {
        rect: Rect::new(x0, y0, x0 + fw, y0 + fh),
        thickness: t,
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Line {
    None,
    Inclusion,
    Exclusion,
}

/// Per-pixel line membership from the frame definition: the left `t`
/// columns and bottom `t` rows form the exclusion line, the top `t` rows and
/// right `t` columns the inclusion line, with exclusion owning the corners.
fn line_grid(frame: &DisectorFrame, w: usize, h: usize) -> Vec<Line> {
    let r = frame.rect;
    let t = frame.thickness;
    let mut g = vec![Line::None; w * h];
    for y in r.y0..r.y1 {
        for x in r.x0..r.x1 {
            let top = y < r.y0 + t;
            let right = x >= r.x1 - t;
            let left = x < r.x0 + t;
            let bottom = y >= r.y1 - t;
            g[y * w + x] = if left || bottom {
                Line::Exclusion
            } else if top || right {
                Line::Inclusion
            } else {
                Line::None
            };
        }
    }
    g
}

/// Brute-force classification: scan every pixel of every region against
/// the explicit line grid.
pub fn brute_force_verdicts(labels: &LabelMap, frame: &DisectorFrame) -> Vec<(u32, CountVerdict)> {
    let (w, h) = labels.dims();
    let g = line_grid(frame, w, h);
    let r = frame.rect;
    let near = |x: usize, y: usize, kind: Line| {
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h && g[ny as usize * w + nx as usize] == kind {
                    return true;
                }
            }
        }
        false
    };
    let mut ids: Vec<u32> = labels.data().iter().copied().filter(|&v| v != 0).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter()
        .map(|id| {
            let mut excl = false;
            let mut hit = false;
            for y in 0..h {
                for x in 0..w {
                    if labels.get(x, y) != id {
                        continue;
                    }
                    excl |= near(x, y, Line::Exclusion);
                    let interior = x >= r.x0 && x < r.x1 && y >= r.y0 && y < r.y1 && g[y * w + x] == Line::None;
                    hit |= interior || near(x, y, Line::Inclusion);
                }
            }
            let v = if excl {
                CountVerdict::Excluded
            } else if hit {
                CountVerdict::Counted
            } else {
                CountVerdict::Outside
            };
            (id, v)
        })
        .collect()
}

/// `n` random 40x40 layouts: classification equals brute force, and a
/// translated copy on a larger canvas gives identical verdicts.
pub fn disector_layouts(n: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    let (w, h) = (40, 40);
    let mut counted = 0;
    for case in 0..n {
        let labels = random_labels(&mut r, w, h);
        let frame = random_frame(&mut r, w, h);
        let got = count_cells(&labels, &frame);
        let want = brute_force_verdicts(&labels, &frame);
        if got.verdicts != want {
            return Err(format!("layout {case}: verdicts {:?} != brute force {:?}", got.verdicts, want));
        }
        let c = want.iter().filter(|v| v.1 == CountVerdict::Counted).count();
        if got.counted != c {
            return Err(format!("layout {case}: counted {} != {c}", got.counted));
        }
        counted += c;

        let (dx, dy) = (r.random_range(0..25), r.random_range(0..25));
        let shifted = LabelMap::from_fn(w + 24, h + 24, |x, y| {
            if x >= dx && y >= dy && x - dx < w && y - dy < h {
                labels.get(x - dx, y - dy)
            } else {
                0
            }
        });
        let f2 = frame.translated(dx as isize, dy as isize).expect("non-negative shift");
        if count_cells(&shifted, &f2) != got {
            return Err(format!("layout {case}: translation by ({dx},{dy}) changed the verdicts"));
        }
    }
    Ok(format!("{n} layouts, {counted} counted regions, all equal to brute force and shift-invariant"))
}

// --------------------------------------------------------------- watershed

const ORDER8: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

/// Distinct priorities: repeatedly label the lowest-priority unlabeled
/// pixel adjacent to the labeled set with the label of its earliest
/// labeled neighbor (markers count as labeled in raster order).
pub fn flood_oracle_distinct(prio: &[f64], markers: &LabelMap, domain: &SegMask) -> LabelMap {
    let (w, h) = markers.dims();
    let n = w * h;
    let mut label = markers.data().to_vec();
    let mut time = vec![usize::MAX; n];
    let mut clock = 0;
    for i in 0..n {
        if label[i] != 0 {
            time[i] = clock;
            clock += 1;
        }
    }
    let nbrs = |i: usize| {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        ORDER8.iter().filter_map(move |&(dx, dy)| {
            let (nx, ny) = (x + dx, y + dy);
            (nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h).then(|| ny as usize * w + nx as usize)
        })
    };
    loop {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if label[i] != 0 || domain.data()[i] == 0 {
                continue;
            }
            if nbrs(i).any(|j| label[j] != 0) && best.is_none_or(|b| prio[i] < prio[b]) {
                best = Some(i);
            }
        }
        let Some(i) = best else { break };
        let src = nbrs(i).filter(|&j| label[j] != 0).min_by_key(|&j| time[j]).unwrap();
        label[i] = label[src];
        time[i] = clock;
        clock += 1;
    }
    LabelMap::from_vec(w, h, label).unwrap()
}

/// Tied priorities: a plain list simulation of flooding with a FIFO tie
/// rule. Entries are `(priority, push order, pixel, label)`; the smallest
/// `(priority, push order)` is taken by linear scan.
pub fn flood_oracle_fifo(prio: &[f64], markers: &LabelMap, domain: &SegMask) -> LabelMap {
    let (w, h) = markers.dims();
    let n = w * h;
    let mut label = markers.data().to_vec();
    let mut queued: Vec<bool> = label.iter().map(|&l| l != 0).collect();
    let mut pending: Vec<(f64, usize, usize, u32)> = Vec::new();
    let mut pushes = 0;
    let mut push = |i: usize, l: u32, queued: &mut Vec<bool>, pending: &mut Vec<(f64, usize, usize, u32)>| {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for (dx, dy) in ORDER8 {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            if !queued[j] && domain.data()[j] != 0 {
                queued[j] = true;
                pending.push((prio[j], pushes, j, l));
                pushes += 1;
            }
        }
    };
    for i in 0..n {
        if label[i] != 0 {
            push(i, label[i], &mut queued, &mut pending);
        }
    }
    while !pending.is_empty() {
        let k = (0..pending.len())
            .min_by(|&a, &b| pending[a].0.total_cmp(&pending[b].0).then(pending[a].1.cmp(&pending[b].1)))
            .unwrap();
        let (_, _, i, l) = pending.swap_remove(k);
        label[i] = l;
        push(i, l, &mut queued, &mut pending);
    }
    LabelMap::from_vec(w, h, label).unwrap()
}

fn distinct_labels(l: &LabelMap) -> usize {
    let mut v: Vec<u32> = l.data().iter().copied().filter(|&x| x != 0).collect();
    v.sort_unstable();
    v.dedup();
    v.len()
}

/// One random 32x32 instance: single-pixel markers with distinct labels,
/// optionally a random domain, continuous or quantized priorities.
pub fn watershed_instance(seed: u64, quantized: bool, with_domain: bool) -> Check {
    let (w, h) = (32, 32);
    let mut r = rng(seed);
    let prio: Vec<f64> = (0..w * h)
        .map(|_| if quantized { r.random_range(0..4) as f64 } else { r.random::<f64>() })
        .collect();
    let domain = if with_domain {
        SegMask::from_fn(w, h, |_, _| r.random_bool(0.8))
    } else {
        SegMask::from_fn(w, h, |_, _| true)
    };
    let k = r.random_range(1..=10u32);
    let mut markers = LabelMap::empty(w, h);
    let mut placed = 0;
    while placed < k {
        let (x, y) = (r.random_range(0..w), r.random_range(0..h));
        if markers.get(x, y) == 0 && domain.get(x, y) {
            placed += 1;
            markers.set(x, y, placed);
        }
    }
    let img = Image::from_vec_gray(w, h, prio.clone());
    let got = watershed_in(&img, &markers, with_domain.then_some(&domain)).map_err(|e| e.to_string())?;
    let want = if quantized {
        flood_oracle_fifo(&prio, &markers, &domain)
    } else {
        flood_oracle_distinct(&prio, &markers, &domain)
    };
    if got != want {
        let diff = got.data().iter().zip(want.data()).filter(|(a, b)| a != b).count();
        return Err(format!("seed {seed}: {diff} pixels differ from the flooding oracle"));
    }
    if distinct_labels(&got) != k as usize {
        return Err(format!("seed {seed}: {} regions for {k} markers", distinct_labels(&got)));
    }
    for i in 0..w * h {
        if markers.data()[i] != 0 && got.data()[i] != markers.data()[i] {
            return Err(format!("seed {seed}: marker pixel {i} relabeled"));
        }
    }
    Ok(String::new())
}

/// `n` seeds, each run in all four variants (priorities continuous or
/// tied, with or without a domain).
pub fn watershed_instances(n: u64) -> Check {
    for s in 0..n {
        for (q, d) in [(false, false), (false, true), (true, false), (true, true)] {
            watershed_instance(s, q, d)?;
        }
    }
    Ok(format!("{} instances on 32x32 equal to the flooding oracles; regions = markers", 4 * n))
}

// ---------------------------------------------------------------------- EM

/// Mixture log-likelihood recomputed directly from the densities.
pub fn mixture_log_likelihood(xs: &[f64], comps: &[(f64, f64, f64)]) -> f64 {
    xs.iter()
        .map(|&x| {
            comps
                .iter()
                .map(|&(w, m, v)| w * (-(x - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt())
                .sum::<f64>()
                .ln()
        })
        .sum()
}

/// `n` random datasets in [0, 1] with 1-4 clusters: the recorded trace is
/// nondecreasing within 1e-9 and ends at the likelihood of the returned
/// model, recomputed independently.
pub fn em_monotone(n: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    let mut steps = 0;
    for case in 0..n {
        let clusters = r.random_range(1..=4);
        let size = r.random_range(50..400);
        let centers: Vec<(f64, f64)> = (0..clusters).map(|_| (r.random::<f64>(), r.random_range(0.01..0.15))).collect();
        let xs: Vec<f64> = (0..size)
            .map(|_| {
                let (m, s) = centers[r.random_range(0..clusters)];
                (m + s * Normal::new(0.0, 1.0).unwrap().sample(&mut r)).clamp(0.0, 1.0)
            })
            .collect();
        let k = r.random_range(1..=4);
        let fit = fit_gmm(&xs, k, 200, 1e-10, case as u64).map_err(|e| e.to_string())?;
        for win in fit.log_likelihood.windows(2) {
            if win[1] < win[0] - 1e-9 {
                return Err(format!("dataset {case}: log-likelihood fell from {} to {}", win[0], win[1]));
            }
        }
        let comps: Vec<(f64, f64, f64)> = fit.model.components.iter().map(|c| (c.weight, c.mean, c.variance)).collect();
        let recomputed = mixture_log_likelihood(&xs, &comps);
        let last = *fit.log_likelihood.last().unwrap();
        if (recomputed - last).abs() > 1e-6 * last.abs().max(1.0) {
            return Err(format!("dataset {case}: trace ends at {last}, model gives {recomputed}"));
        }
        steps += fit.iterations;
    }
    Ok(format!("{n} datasets, {steps} EM updates, all nondecreasing"))
}

/// 5000 + 5000 samples at N(0.2, 0.01^2) and N(0.8, 0.01^2): means within
/// 0.01 and weights within 0.05 of the generating values.
pub fn em_recovery(seed: u64) -> Check {
    let mut r = rng(seed);
    let mut xs = Vec::with_capacity(10_000);
    for m in [0.2, 0.8] {
        let d = Normal::new(m, 0.01).unwrap();
        xs.extend((0..5000).map(|_| d.sample(&mut r)));
    }
    let fit = fit_gmm(&xs, 2, 500, 1e-10, seed).map_err(|e| e.to_string())?;
    let mut c: Vec<(f64, f64)> = fit.model.components.iter().map(|c| (c.mean, c.weight)).collect();
    c.sort_by(|a, b| a.0.total_cmp(&b.0));
    for ((m, w), want) in c.iter().zip([0.2, 0.8]) {
        if (m - want).abs() > 0.01 || (w - 0.5).abs() > 0.05 {
            return Err(format!("component near {want}: mean {m}, weight {w}"));
        }
    }
    Ok(format!("means {:.4}/{:.4}, weights {:.3}/{:.3}", c[0].0, c[1].0, c[0].1, c[1].1))
}

// ---------------------------------------------------------- Savitzky-Golay

/// Smoothing kernel from an SVD least-squares solve: entry `j` is the fitted
/// value at offset 0 when the data is the unit impulse at offset `j`.
pub fn savgol_oracle(window: usize, order: usize) -> Vec<f64> {
    let m = (window / 2) as i64;
    let a = DMatrix::from_fn(window, order + 1, |i, j| ((i as i64 - m) as f64).powi(j as i32));
    let svd = a.svd(true, true);
    (0..window)
        .map(|j| {
            let mut e = DVector::zeros(window);
            e[j] = 1.0;
            svd.solve(&e, 1e-14).unwrap()[0]
        })
        .collect()
}

pub fn savgol_kernel_check() -> Check {
    let k: Vec<f64> = savgol_coefficients(5, 2).map_err(|e| e.to_string())?;
    let oracle = savgol_oracle(5, 2);
    let closed = [-3.0, 12.0, 17.0, 12.0, -3.0].map(|v| v / 35.0);
    for i in 0..5 {
        if (k[i] - oracle[i]).abs() > 1e-12 || (k[i] - closed[i]).abs() > 1e-12 {
            return Err(format!("coefficient {i}: {} vs oracle {} / closed form {}", k[i], oracle[i], closed[i]));
        }
    }
    for w in (3..=15).step_by(2) {
        for o in 0..w.min(6) {
            let k: Vec<f64> = savgol_coefficients(w, o).map_err(|e| e.to_string())?;
            let or = savgol_oracle(w, o);
            if k.iter().zip(&or).any(|(a, b)| (a - b).abs() > 1e-10) {
                return Err(format!("window {w} order {o} differs from the least-squares oracle"));
            }
        }
    }
    Ok("w5/o2 = (-3,12,17,12,-3)/35 to 1e-12; other windows to 1e-10".into())
}

/// Random polynomials of degree <= order are reproduced (away from the
/// cyclic wrap) and constant sequences are unchanged everywhere.
pub fn savgol_reproduction(seed: u64) -> Check {
    let mut r = rng(seed);
    let mut cases = 0;
    for w in (5..=15).step_by(2) {
        for o in 0..w.min(6) {
            let k: Vec<f64> = savgol_coefficients(w, o).map_err(|e| e.to_string())?;
            let coef: Vec<f64> = (0..=o).map(|_| r.random_range(-1.0..1.0)).collect();
            let len = 64;
            // Scaled abscissa keeps high powers well conditioned.
            let p = |t: f64| coef.iter().enumerate().map(|(i, c)| c * (t / len as f64).powi(i as i32)).sum::<f64>();
            let seq: Vec<f64> = (0..len).map(|i| p(i as f64)).collect();
            let s = smooth_cyclic(&seq, &k);
            let m = w / 2;
            for i in m..len - m {
                if (s[i] - seq[i]).abs() > 1e-9 {
                    return Err(format!("window {w} order {o}: sample {i} moved by {}", s[i] - seq[i]));
                }
            }
            let c = r.random_range(-5.0..5.0);
            let flat = smooth_cyclic(&vec![c; 16], &k);
            if flat.iter().any(|v| (v - c).abs() > 1e-9) {
                return Err(format!("window {w} order {o}: constant sequence changed"));
            }
            cases += 1;
        }
    }
    Ok(format!("{cases} window/order pairs reproduce polynomials to 1e-9"))
}

// ---------------------------------------------------------- gradient check

/// Every parameter of a D=1 network: analytic gradient against central
/// differences, relative error at most `tol` (denominator floored at 1e-8).
pub fn gradient_check(base: usize, size: usize, seed: u64, tol: f64) -> Check {
    let arch = Architecture { depth: 1, base, in_channels: 1 };
    let mut p = build_net::<f64>(arch, seed).map_err(|e| e.to_string())?;
    let mut r = rng(seed ^ 0x9e37);
    // Small random biases move units off the ReLU kink at zero input.
    for l in p.layers.clone() {
        for b in l.biases() {
            p.values[b] = r.random_range(-0.1..0.1);
        }
    }
    let x = Tensor::from_vec([1, 1, size, size], (0..size * size).map(|_| r.random::<f64>()).collect())
        .map_err(|e| e.to_string())?;
    let mask = SegMask::from_fn(size, size, |_, _| r.random_bool(0.4));
    let (l0, g) = backward(&p, &x, &[&mask]).map_err(|e| e.to_string())?;
    let direct = loss(&forward(&p, &x).map_err(|e| e.to_string())?, &[&mask]).map_err(|e| e.to_string())?;
    if (l0 - direct).abs() > 1e-12 {
        return Err(format!("backward loss {l0} != forward loss {direct}"));
    }
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..p.values.len() {
        let v = p.values[i];
        p.values[i] = v + h;
        let lp = loss(&forward(&p, &x).unwrap(), &[&mask]).unwrap();
        p.values[i] = v - h;
        let lm = loss(&forward(&p, &x).unwrap(), &[&mask]).unwrap();
        p.values[i] = v;
        let num = (lp - lm) / (2.0 * h);
        let rel = (g[i] - num).abs() / g[i].abs().max(num.abs()).max(1e-8);
        worst = worst.max(rel);
        if rel > tol {
            return Err(format!("parameter {i}: analytic {} vs numeric {num} (rel {rel:.2e})", g[i]));
        }
    }
    Ok(format!("{} parameters, worst relative error {worst:.2e}", p.values.len()))
}

// ------------------------------------------------------------- durability

/// Delegates to the oracle for `budget` items, then fails like a crashed
/// reviewer.
pub struct Dying {
    pub inner: OracleReviewer,
    pub budget: usize,
}

impl Reviewer for Dying {
    fn name(&self) -> &str {
        "oracle"
    }
    fn review(&mut self, item: &ReviewItem<'_>) -> stereo_core::Result<Option<Verdict>> {
        if self.budget == 0 {
            return Err(stereo_core::Error::InvalidArgument("reviewer died".into()));
        }
        self.budget -= 1;
        self.inner.review(item)
    }
}

/// Records and every checkpoint of two run directories are byte-identical.
pub fn same_outputs(a: &std::path::Path, b: &std::path::Path, iterations: u32) -> Check {
    let read = |p: std::path::PathBuf| std::fs::read(&p).map_err(|e| format!("{}: {e}", p.display()));
    if read(a.join("records.csv"))? != read(b.join("records.csv"))? {
        return Err(format!("records differ between {} and {}", a.display(), b.display()));
    }
    for k in 1..=iterations {
        let ck = format!("checkpoints/iter_{k}.bin");
        if read(a.join(&ck))? != read(b.join(&ck))? {
            return Err(format!("{ck} differs between {} and {}", a.display(), b.display()));
        }
    }
    Ok(String::new())
}
