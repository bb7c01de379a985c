//! Synthetic stained-tissue scenes, through-focus stacks and datasets,
//! plus a scripted reviewer that applies the manual accept rule.
//!
//! Cells are dark ellipses (slightly darker at the center) on a light
//! background with a gentle horizontal gradient. Every cell lives at one
//! focal depth; slice `z` blurs it with a Gaussian of width
//! `|z - depth| * blur_scale`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asa::{blobs, run_asa, separate_touching, AsaParams};
use crate::augment::FRAME_MARGIN;
use crate::disector::{classify_blob, match_annotation, Annotation, CountVerdict, DisectorFrame};
use crate::edf::{edf_stack, DEFAULT_DEPTH_SMOOTH, DEFAULT_FOCUS_WINDOW};
use crate::error::{Error, Result};
use crate::raster::{save_image, save_labels, save_mask, Image, ImageStack, LabelMap, Rect, SegMask};
use crate::review_loop::{load_edf, DatasetManifest, ManifestItem, ReviewItem, Reviewer, Verdict};

const PLACEMENT_TRIES: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub width: usize,
    pub height: usize,
    pub frame: Rect,
    /// Inclusive range of cells per scene.
    pub cells: (usize, usize),
    /// Inclusive range of ellipse semi-axes in pixels.
    pub radius: (f64, f64),
    /// Chance that a new cell may overlap earlier ones.
    pub overlap_prob: f64,
    pub background: f64,
    /// Left-to-right background change.
    pub gradient: f64,
    /// Intensity at a cell's center.
    pub stain: f64,
    /// Brightening from center to rim.
    pub contrast: f64,
    /// Per-cell stain variation: each cell's center intensity is drawn
    /// from `stain..=stain + stain_jitter`.
    pub stain_jitter: f64,
    pub noise_sigma: f64,
    pub slices: usize,
    pub blur_scale: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            width: 128,
            height: 128,
            frame: Rect::new(32, 32, 96, 96),
            cells: (10, 18),
            radius: (4.0, 7.0),
            overlap_prob: 0.2,
            background: 0.85,
            gradient: 0.05,
            stain: 0.25,
            contrast: 0.15,
            stain_jitter: 0.0,
            noise_sigma: 0.02,
            slices: 5,
            blur_scale: 1.0,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let asa = AsaParams::default();
        let (rmin, rmax) = self.radius;
        if !(rmin > 0.0 && rmin <= rmax) {
            return Err(Error::invalid("radius range must satisfy 0 < min <= max"));
        }
        let (amin, amax) = (
            std::f64::consts::PI * rmin * rmin,
            std::f64::consts::PI * rmax * rmax,
        );
        if amin < asa.min_cell_size as f64 || amax > asa.max_cell_size as f64 {
            return Err(Error::invalid(format!(
                "cell areas {amin:.0}..{amax:.0} px fall outside the size filter {}..{}",
                asa.min_cell_size, asa.max_cell_size
            )));
        }
        if self.cells.0 > self.cells.1 {
            return Err(Error::invalid("cell count range is reversed"));
        }
        let f = self.frame;
        if !(f.x0 >= FRAME_MARGIN
            && f.y0 >= FRAME_MARGIN
            && f.x0 < f.x1
            && f.y0 < f.y1
            && f.x1 + FRAME_MARGIN <= self.width
            && f.y1 + FRAME_MARGIN <= self.height)
        {
            return Err(Error::invalid(format!(
                "image must contain the frame plus a {FRAME_MARGIN} px margin"
            )));
        }
        if self.slices == 0 {
            return Err(Error::invalid("need at least one slice"));
        }
        if !(0.0..=1.0).contains(&self.overlap_prob)
            || self.noise_sigma < 0.0
            || self.blur_scale < 0.0
            || self.stain_jitter < 0.0
        {
            return Err(Error::invalid("overlap probability, jitter, noise and blur must be non-negative"));
        }
        Ok(())
    }

    fn background_at(&self, x: usize) -> f64 {
        self.background + self.gradient * (x as f64 / self.width.max(2) as f64 - 0.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub theta: f64,
    pub depth: usize,
    pub stain: f64,
}

impl Cell {
    /// Squared normalized radius; <= 1 inside the ellipse.
    pub fn r2(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.theta.sin_cos();
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        u * u + v * v
    }

    fn extent(&self) -> f64 {
        self.a.max(self.b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Instance labels; a pixel covered by several cells belongs to the
    /// one whose center is nearest in normalized distance.
    pub labels: LabelMap,
    pub annotation: Annotation,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub truth: GroundTruth,
    pub ideal: Image<f64>,
}

fn seeded(seed: u64, tag: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    let d = h.finalize();
    ChaCha8Rng::from_seed(d.into())
}

fn place_cells(p: &SynthParams, rng: &mut ChaCha8Rng) -> Result<Vec<Cell>> {
    let n = rng.random_range(p.cells.0..=p.cells.1);
    let mut cells: Vec<Cell> = Vec::with_capacity(n);
    for i in 0..n {
        let mut placed = false;
        for _ in 0..PLACEMENT_TRIES {
            let c = Cell {
                cx: rng.random_range(0.0..p.width as f64),
                cy: rng.random_range(0.0..p.height as f64),
                a: rng.random_range(p.radius.0..=p.radius.1),
                b: rng.random_range(p.radius.0..=p.radius.1),
                theta: rng.random_range(0.0..std::f64::consts::PI),
                depth: rng.random_range(0..p.slices),
                stain: p.stain + p.stain_jitter * rng.random::<f64>(),
            };
            let may_overlap = rng.random::<f64>() < p.overlap_prob;
            let ok = cells.iter().all(|o| {
                let d = ((c.cx - o.cx).powi(2) + (c.cy - o.cy).powi(2)).sqrt();
                let reach = c.extent() + o.extent();
                if may_overlap {
                    d >= 0.6 * reach
                } else {
                    d >= reach + 1.5
                }
            });
            if ok {
                cells.push(c);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Infeasible(format!(
                "could not place cell {} of {n} after {PLACEMENT_TRIES} tries",
                i + 1
            )));
        }
    }
    Ok(cells)
}

fn label_cells(p: &SynthParams, cells: &[Cell]) -> LabelMap {
    LabelMap::from_fn(p.width, p.height, |x, y| {
        let mut best = (0u32, f64::INFINITY);
        for (k, c) in cells.iter().enumerate() {
            let r2 = c.r2(x as f64, y as f64);
            if r2 <= 1.0 && r2 < best.1 {
                best = (k as u32 + 1, r2);
            }
        }
        best.0
    })
}

/// Dots at the centroids of the cells counted under the frame rules (the
/// nearest cell pixel when the centroid falls outside the cell).
pub fn annotate(labels: &LabelMap, frame: &DisectorFrame, image_id: &str) -> Annotation {
    let dots = blobs(labels)
        .iter()
        .filter(|b| classify_blob(b, frame) == CountVerdict::Counted)
        .map(|b| {
            let (cx, cy) = b.centroid;
            let (rx, ry) = (cx.round(), cy.round());
            if rx >= 0.0 && ry >= 0.0 && b.contains(rx as usize, ry as usize) {
                [cx, cy]
            } else {
                let &(x, y) = b
                    .pixels
                    .iter()
                    .min_by(|p, q| {
                        let d = |t: &(usize, usize)| (t.0 as f64 - cx).powi(2) + (t.1 as f64 - cy).powi(2);
                        d(p).total_cmp(&d(q))
                    })
                    .expect("blobs are non-empty");
                [x as f64, y as f64]
            }
        })
        .collect();
    Annotation {
        image_id: image_id.to_string(),
        frame: *frame,
        dots,
    }
}

/// Random scene with its ground truth and noise-free, in-focus image.
pub fn gen_scene(p: &SynthParams, image_id: &str) -> Result<Scene> {
    p.validate()?;
    let mut rng = seeded(p.seed, image_id);
    let cells = place_cells(p, &mut rng)?;
    let labels = label_cells(p, &cells);
    let annotation = annotate(&labels, &DisectorFrame::new(p.frame), image_id);
    let ideal = composite(p, &cells, |_| 0.0);
    Ok(Scene {
        truth: GroundTruth {
            labels,
            annotation,
            cells,
        },
        ideal,
    })
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable blur of a `w`x`h` patch with zero outside.
fn blur_patch(v: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (j, c) in k.iter().enumerate() {
                let xx = x as isize + j as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    s += c * v[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (j, c) in k.iter().enumerate() {
                let yy = y as isize + j as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    s += c * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = s;
        }
    }
    out
}

/// Background minus every cell's (optionally blurred) darkening, clamped
/// to [0, 1]. Overlaps darken to the darker of the two cells.
fn composite(p: &SynthParams, cells: &[Cell], sigma_of: impl Fn(&Cell) -> f64) -> Image<f64> {
    let (w, h) = (p.width, p.height);
    let mut dark = vec![0.0f64; w * h];
    for c in cells {
        let sigma = sigma_of(c);
        let pad = if sigma > 1e-9 { (3.0 * sigma).ceil() + 1.0 } else { 0.0 };
        let reach = c.extent() + 1.0 + pad;
        let x0 = (c.cx - reach).floor().max(0.0) as usize;
        let y0 = (c.cy - reach).floor().max(0.0) as usize;
        let x1 = ((c.cx + reach).ceil() as usize + 1).min(w);
        let y1 = ((c.cy + reach).ceil() as usize + 1).min(h);
        if x0 >= x1 || y0 >= y1 {
            continue;
        }
        let (pw, ph) = (x1 - x0, y1 - y0);
        let mut patch = vec![0.0; pw * ph];
        for y in 0..ph {
            for x in 0..pw {
                let r2 = c.r2((x0 + x) as f64, (y0 + y) as f64);
                if r2 <= 1.0 {
                    patch[y * pw + x] = p.background_at(x0 + x) - (c.stain + p.contrast * r2);
                }
            }
        }
        if sigma > 1e-9 {
            patch = blur_patch(&patch, pw, ph, sigma);
        }
        for y in 0..ph {
            for x in 0..pw {
                let d = &mut dark[(y0 + y) * w + x0 + x];
                *d = d.max(patch[y * pw + x]);
            }
        }
    }
    Image::from_fn(w, h, |x, y| (p.background_at(x) - dark[y * w + x]).clamp(0.0, 1.0))
}

/// Through-focus stack of a scene with seeded additive Gaussian noise.
pub fn render_stack(scene: &Scene, p: &SynthParams, image_id: &str) -> Result<ImageStack<f64>> {
    p.validate()?;
    let mut rng = seeded(p.seed, &format!("{image_id}/noise"));
    let noise = Normal::new(0.0, p.noise_sigma.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let slices = (0..p.slices)
        .map(|z| {
            let mut img = composite(p, &scene.truth.cells, |c| z.abs_diff(c.depth) as f64 * p.blur_scale);
            if p.noise_sigma > 0.0 {
                for v in img.data_mut() {
                    *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
                }
            }
            img
        })
        .collect();
    ImageStack::new(slices)
}

/// Accept iff the separated prediction matches the manual dots under the
/// frame rules.
pub fn oracle_verdict(pred: &SegMask, annotation: &Annotation, min_cell_size: usize) -> Verdict {
    if match_annotation(&separate_touching(pred, min_cell_size), annotation).accept {
        Verdict::Accept
    } else {
        Verdict::Reject
    }
}

/// Scripted reviewer applying [`oracle_verdict`].
pub struct OracleReviewer {
    pub min_cell_size: usize,
}

impl Default for OracleReviewer {
    fn default() -> Self {
        OracleReviewer {
            min_cell_size: AsaParams::default().min_cell_size,
        }
    }
}

impl Reviewer for OracleReviewer {
    fn name(&self) -> &str {
        "oracle"
    }

    fn review(&mut self, item: &ReviewItem<'_>) -> Result<Option<Verdict>> {
        Ok(Some(oracle_verdict(item.predicted, item.annotation, self.min_cell_size)))
    }
}

/// Push the classical pipeline's parameters away from their tuned values:
/// the GMM threshold moves linearly toward 0.95, the minimum cell size
/// grows by up to 4x and the maximum shrinks toward it. Severity 0 is the
/// identity.
pub fn degrade_params(asa: &AsaParams, severity: f64) -> Result<AsaParams> {
    if !(0.0..=1.0).contains(&severity) {
        return Err(Error::invalid("severity must lie in [0, 1]"));
    }
    if severity == 0.0 {
        return Ok(asa.clone());
    }
    let min = (asa.min_cell_size as f64 * (1.0 + 3.0 * severity)).round() as usize;
    let max = ((asa.max_cell_size as f64) * (1.0 - 0.9 * severity)).round() as usize;
    Ok(AsaParams {
        gmm_threshold: asa.gmm_threshold + severity * (0.95 - asa.gmm_threshold),
        min_cell_size: min,
        max_cell_size: max.max(min + 1),
        ..asa.clone()
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MouseSpec {
    pub mouse_id: String,
    pub sections: usize,
    pub stacks: usize,
}

/// Mouse ids, sections and stack counts of the reference dataset.
pub fn reference_mice() -> Vec<MouseSpec> {
    [
        ("02", 8, 113),
        ("03", 6, 121),
        ("14", 8, 90),
        ("17", 7, 91),
        ("29", 8, 135),
        ("21", 7, 102),
        ("24", 8, 103),
        ("67", 8, 104),
        ("09", 6, 107),
    ]
    .into_iter()
    .map(|(m, s, k)| MouseSpec {
        mouse_id: m.into(),
        sections: s,
        stacks: k,
    })
    .collect()
}

/// Table-one structure with stack counts divided by `factor` (at least
/// one stack per section).
pub fn scaled_reference_mice(factor: usize) -> Vec<MouseSpec> {
    reference_mice()
        .into_iter()
        .map(|m| MouseSpec {
            stacks: (m.stacks / factor.max(1)).max(m.sections),
            ..m
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub params: SynthParams,
    pub mice: Vec<MouseSpec>,
    /// Also write every focal slice (the EDF is always written).
    pub write_stacks: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            params: SynthParams::default(),
            mice: scaled_reference_mice(8),
            write_stacks: false,
        }
    }
}

pub fn image_id(mouse: &str, section: usize, index: usize) -> String {
    format!("m{mouse}_s{section}_k{index:03}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub manifest: DatasetManifest,
    /// Counted cells per (mouse, section).
    pub section_counts: BTreeMap<(String, u32), u64>,
    /// [`corpus_hash`] of the written files.
    pub corpus_hash: String,
}

/// SHA-256 over every file of a generated corpus (manifest, then each
/// item's EDF, slices, annotation and truth labels, in manifest order),
/// each prefixed by its relative path.
pub fn corpus_hash(out: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<String> {
    let out = out.as_ref();
    let mut h = Sha256::new();
    let mut feed = |rel: &str| -> Result<()> {
        let p = out.join(rel);
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        h.update(rel.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
        Ok(())
    };
    feed("manifest.json")?;
    for it in &manifest.items {
        for rel in it.edf.iter().chain(it.stack.iter().flatten()) {
            feed(rel)?;
        }
        feed(&it.annotation)?;
        feed(&format!("truth/{}.png", it.image_id))?;
    }
    Ok(hex::encode(h.finalize()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Generate every stack of every mouse (stack `k` of a mouse goes to
/// section `k mod sections + 1`), fuse it to an EDF and write images,
/// annotations, ground-truth labels and `manifest.json` under `out`.
/// Manifest paths are relative to `out`.
pub fn gen_dataset(cfg: &SynthConfig, out: impl AsRef<Path>) -> Result<GeneratedDataset> {
    let out = out.as_ref();
    cfg.params.validate()?;
    if cfg.mice.is_empty() || cfg.mice.iter().any(|m| m.sections == 0 || m.stacks == 0) {
        return Err(Error::invalid("every mouse needs at least one section and one stack"));
    }
    for d in ["edf", "annotations", "truth", "stacks"] {
        std::fs::create_dir_all(out.join(d)).map_err(|e| Error::io(out.join(d), e))?;
    }
    let mut items = Vec::new();
    let mut section_counts = BTreeMap::new();
    for m in &cfg.mice {
        for k in 0..m.stacks {
            let section = k % m.sections + 1;
            let id = image_id(&m.mouse_id, section, k);
            let scene = gen_scene(&cfg.params, &id)?;
            let stack = render_stack(&scene, &cfg.params, &id)?;
            let (edf, _) = edf_stack(&stack, DEFAULT_FOCUS_WINDOW, DEFAULT_DEPTH_SMOOTH)?;
            let edf_rel = format!("edf/{id}.png");
            save_image(&edf, out.join(&edf_rel))?;
            let stack_rel = if cfg.write_stacks {
                let mut v = Vec::new();
                for (z, s) in stack.slices().iter().enumerate() {
                    let rel = format!("stacks/{id}_z{z}.png");
                    save_image(s, out.join(&rel))?;
                    v.push(rel);
                }
                Some(v)
            } else {
                None
            };
            let ann_rel = format!("annotations/{id}.json");
            scene.truth.annotation.save(out.join(&ann_rel))?;
            save_labels(&scene.truth.labels, out.join(format!("truth/{id}.png")))?;
            *section_counts
                .entry((m.mouse_id.clone(), section as u32))
                .or_insert(0u64) += scene.truth.annotation.dots.len() as u64;
            items.push(ManifestItem {
                image_id: id,
                mouse_id: m.mouse_id.clone(),
                section: section as u32,
                edf: Some(edf_rel),
                stack: stack_rel,
                annotation: ann_rel,
                asa_mask: None,
            });
        }
    }
    let manifest = DatasetManifest::from_items(items);
    manifest.validate()?;
    write_file(&out.join("manifest.json"), manifest.to_json().as_bytes())?;
    let cfg_text = serde_json::to_string_pretty(cfg)?;
    write_file(&out.join("synth_config.json"), cfg_text.as_bytes())?;
    Ok(GeneratedDataset {
        corpus_hash: corpus_hash(out, &manifest)?,
        manifest,
        section_counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub asa: AsaParams,
    /// Fraction of images segmented with degraded parameters.
    pub degraded_fraction: f64,
    pub severity: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            asa: AsaParams::default(),
            degraded_fraction: 0.8,
            severity: 1.0,
            seed: 0,
        }
    }
}

/// Segment every non-test image with the classical pipeline (degraded
/// parameters on a seeded fraction), write the masks to `mask_dir`, record
/// them in the manifest and return the oracle's verdict per image.
/// `manifest` paths must be resolved.
pub fn bootstrap_review(
    manifest: &mut DatasetManifest,
    test_mouse: &str,
    cfg: &BootstrapConfig,
    mask_dir: impl AsRef<Path>,
) -> Result<BTreeMap<String, Verdict>> {
    let mask_dir = mask_dir.as_ref();
    std::fs::create_dir_all(mask_dir).map_err(|e| Error::io(mask_dir, e))?;
    let degraded = degrade_params(&cfg.asa, cfg.severity)?;
    let mut verdicts = BTreeMap::new();
    for it in manifest.items.iter_mut().filter(|it| it.mouse_id != test_mouse) {
        let pick: f64 = seeded(cfg.seed, &format!("{}/bootstrap", it.image_id)).random();
        let params = if pick < cfg.degraded_fraction { &degraded } else { &cfg.asa };
        let edf = load_edf(it)?;
        let out = run_asa(&edf, params, cfg.seed)?;
        let path = mask_dir.join(format!("{}.png", it.image_id));
        save_mask(&out.mask, &path)?;
        it.asa_mask = Some(path.display().to_string());
        let ann = Annotation::load(&it.annotation)?;
        verdicts.insert(it.image_id.clone(), oracle_verdict(&out.mask, &ann, cfg.asa.min_cell_size));
    }
    Ok(verdicts)
}
