//! `stereo`: batch entry points for EDF fusion, classical segmentation,
//! augmentation, training, counting, the review loop and the review service.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error.

mod repro;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use stereo_core::asa::{postprocess, run_asa, AsaParams};
use stereo_core::augment::{augment_pair, crop_to_frame, FRAME_MARGIN};
use stereo_core::disector::{count_cells, Annotation, DisectorFrame};
use stereo_core::edf::{edf_stack, DEFAULT_DEPTH_SMOOTH, DEFAULT_FOCUS_WINDOW};
use stereo_core::raster::{load_image, load_labels, load_mask, save_image, save_labels, save_mask, ImageStack};
use stereo_core::review_loop::{
    compare_records, evaluate_test, id_seed, load_edf, parse_log, parse_records_csv, records_csv, replay,
    AugmentedPairs, DatasetManifest, Engine, EvalParams, LoopConfig, Phase, TestItem, Verdict,
};
use stereo_core::segnet::{load_checkpoint, save_checkpoint, train_with, TrainConfig};
use stereo_core::synth::{bootstrap_review, gen_dataset, BootstrapConfig, OracleReviewer, SynthConfig};
use stereo_service::{ServiceConfig, DEFAULT_LEASE_SECS};

use repro::Repro;

#[derive(Parser)]
#[command(name = "stereo", version, about = "Cell segmentation, disector counting and iterative review")]
struct Cli {
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic corpora.
    #[command(subcommand)]
    Synth(SynthCmd),
    /// Fuse a focal stack into an extended depth of field image.
    Edf(EdfArgs),
    /// Classical segmentation of an EDF image.
    Asa(AsaArgs),
    /// Expand an image/mask pair into its 72 augmented variants.
    Augment(AugmentArgs),
    /// Train a network on images with masks.
    Train(TrainArgs),
    /// Iterative review loop.
    #[command(subcommand, name = "loop")]
    Loop(LoopCmd),
    /// Count cells of a label map (or mask) under the frame rules.
    Count(CountArgs),
    /// Score a checkpoint on a test mouse.
    Eval(EvalArgs),
    /// Rebuild iteration records from a decision log.
    Replay(ReplayArgs),
    /// Run the HTTP review service.
    Serve(ServeArgs),
}

#[derive(Subcommand)]
enum SynthCmd {
    /// Generate a corpus: EDF images, annotations, truth labels, manifest.
    Gen {
        /// Generator configuration (JSON); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
    },
}

#[derive(Args)]
struct EdfArgs {
    /// Focal slices in order.
    #[arg(long, num_args = 1.., required = true)]
    slices: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Optional depth index map (slice index scaled to [0, 1]).
    #[arg(long)]
    depth_out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_FOCUS_WINDOW)]
    window: usize,
    #[arg(long, default_value_t = DEFAULT_DEPTH_SMOOTH)]
    smooth: usize,
}

#[derive(Args)]
struct AsaArgs {
    #[arg(long)]
    edf: PathBuf,
    /// Binary mask output.
    #[arg(long)]
    out: PathBuf,
    /// Instance label output (16-bit).
    #[arg(long)]
    labels_out: Option<PathBuf>,
    /// Pipeline parameters (JSON); defaults when omitted.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Crop every variant to this annotation's frame plus the margin.
    #[arg(long)]
    annotation: Option<PathBuf>,
    #[arg(long, default_value_t = FRAME_MARGIN)]
    margin: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory of `<image_id>.png` masks; items without one are skipped.
    #[arg(long)]
    masks: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Training configuration (JSON); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Augmented variants per pair and epoch (1-72).
    #[arg(long, default_value_t = 72)]
    views: usize,
    #[arg(long, default_value_t = FRAME_MARGIN)]
    margin: usize,
    #[arg(long)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReviewerKind {
    /// Scripted reviewer applying the manual accept rule.
    Oracle,
    /// Human reviewers through the HTTP service.
    Http,
}

#[derive(Subcommand)]
enum LoopCmd {
    /// Create a run: bootstrap review, partition and initial training set.
    Init {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        test_mouse: String,
        /// Loop configuration (JSON); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Bootstrap verdicts (JSON object image_id -> accept|reject);
        /// computed with the classical pipeline when omitted.
        #[arg(long)]
        bootstrap: Option<PathBuf>,
        /// Bootstrap configuration (JSON) used when verdicts are computed.
        #[arg(long)]
        bootstrap_config: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
    },
    /// Run iterations until the run has the requested number of records.
    Run {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 5)]
        iterations: u32,
        #[arg(long, value_enum, default_value_t = ReviewerKind::Oracle)]
        reviewer: ReviewerKind,
        /// Listen address for the http reviewer.
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
    /// Show the run's phase, partition and records.
    Status {
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Args)]
struct CountArgs {
    /// Instance label map.
    #[arg(long, conflicts_with = "mask", required_unless_present = "mask")]
    labels: Option<PathBuf>,
    /// Binary mask, post-processed (size filter, separation) before counting.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Frame JSON: a frame object or an annotation file.
    #[arg(long)]
    frame: PathBuf,
    #[arg(long, default_value_t = AsaParams::default().min_cell_size)]
    min_cell_size: usize,
    #[arg(long, default_value_t = AsaParams::default().max_cell_size)]
    max_cell_size: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    test_mouse: String,
    /// Per-section report (CSV).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = FRAME_MARGIN)]
    margin: usize,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = AsaParams::default().min_cell_size)]
    min_cell_size: usize,
    #[arg(long, default_value_t = AsaParams::default().max_cell_size)]
    max_cell_size: usize,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    decisions: PathBuf,
    /// Expected records (CSV); the exit code reports the comparison.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Decimals used when comparing error rates.
    #[arg(long, default_value_t = 2)]
    decimals: usize,
    /// Write the replayed records (CSV).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    /// Directory holding the runs.
    #[arg(long)]
    root: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
    #[arg(long, default_value_t = DEFAULT_LEASE_SECS)]
    lease_secs: u64,
}

fn read_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

struct Out {
    json: bool,
}

impl Out {
    fn emit(&self, human: impl AsRef<str>, value: Value) {
        if self.json {
            println!("{value}");
        } else {
            println!("{}", human.as_ref());
        }
    }
}

fn to_value(v: &impl Serialize) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn synth_gen(out: &Out, config: Option<&Path>, dir: &Path, seed: u64) -> Result<()> {
    let mut cfg: SynthConfig = read_json(config)?;
    cfg.params.seed = seed;
    let t = Instant::now();
    let ds = gen_dataset(&cfg, dir)?;
    let params = to_value(&cfg);
    repro::write(dir, &Repro::new("synth gen", Some(seed), &params))?;
    let per_mouse: BTreeMap<&str, usize> = ds.manifest.mice.iter().map(|m| (m.mouse_id.as_str(), m.stacks)).collect();
    out.emit(
        format!(
            "wrote {} images from {} mice to {} in {:.1} s",
            ds.manifest.items.len(),
            ds.manifest.mice.len(),
            dir.display(),
            t.elapsed().as_secs_f64()
        ),
        json!({ "images": ds.manifest.items.len(), "mice": per_mouse, "corpus_hash": ds.corpus_hash }),
    );
    Ok(())
}

fn edf(out: &Out, a: &EdfArgs) -> Result<()> {
    let slices = a
        .slices
        .iter()
        .map(|p| load_image::<f64>(p).map(|i| i.to_grayscale()))
        .collect::<stereo_core::Result<Vec<_>>>()?;
    let n = slices.len();
    let (img, depth) = edf_stack(&ImageStack::new(slices)?, a.window, a.smooth)?;
    save_image(&img, &a.out)?;
    if let Some(d) = &a.depth_out {
        save_image(&depth.to_image::<f64>(n), d)?;
    }
    let params = json!({ "slices": a.slices, "window": a.window, "smooth": a.smooth });
    repro::write(&a.out, &Repro::new("edf", None, &params))?;
    out.emit(
        format!("fused {n} slices into {}", a.out.display()),
        json!({ "slices": n, "out": a.out }),
    );
    Ok(())
}

fn asa(out: &Out, a: &AsaArgs) -> Result<()> {
    let params: AsaParams = read_json(a.params.as_deref())?;
    let img = load_image::<f64>(&a.edf)?.to_grayscale();
    let res = run_asa(&img, &params, a.seed)?;
    save_mask(&res.mask, &a.out)?;
    if let Some(l) = &a.labels_out {
        save_labels(&res.labels, l)?;
    }
    let cells = res.labels.region_count();
    repro::write(&a.out, &Repro::new("asa", Some(a.seed), &to_value(&params)))?;
    out.emit(format!("{cells} cells segmented"), json!({ "cells": cells, "foreground_px": res.mask.count() }));
    Ok(())
}

fn augment(out: &Out, a: &AugmentArgs) -> Result<()> {
    let img = load_image::<f64>(&a.image)?;
    let mask = load_mask(&a.mask)?;
    let frame = a.annotation.as_deref().map(Annotation::load).transpose()?.map(|ann| ann.frame);
    let t = Instant::now();
    let set = augment_pair(&img, &mask, a.seed)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut provenance = Vec::new();
    for (i, (vi, vm, p)) in set.items.iter().enumerate() {
        let (vi, vm) = match &frame {
            Some(f) => (crop_to_frame(vi, f, a.margin)?.0, crop_to_frame(vm, f, a.margin)?.0),
            None => (vi.clone(), vm.clone()),
        };
        save_image(&vi, a.out.join(format!("img_{i:02}.png")))?;
        save_mask(&vm, a.out.join(format!("mask_{i:02}.png")))?;
        provenance.push(json!({ "index": i, "base": p.base, "angle": p.angle }));
    }
    let prov_path = a.out.join("provenance.json");
    std::fs::write(&prov_path, serde_json::to_string_pretty(&provenance)?)
        .with_context(|| format!("writing {}", prov_path.display()))?;
    let params = json!({ "image": a.image, "mask": a.mask, "annotation": a.annotation, "margin": a.margin });
    repro::write(&a.out, &Repro::new("augment", Some(a.seed), &params))?;
    out.emit(
        format!("wrote {} pairs to {} in {:.2} s", set.len(), a.out.display(), t.elapsed().as_secs_f64()),
        json!({ "pairs": set.len(), "seconds": t.elapsed().as_secs_f64() }),
    );
    Ok(())
}

fn train(out: &Out, a: &TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = read_json(a.config.as_deref())?;
    cfg.seed = a.seed;
    if a.views == 0 || a.views > 72 {
        bail!("--views must be in 1..=72");
    }
    let manifest = DatasetManifest::load_resolved(&a.manifest)?;
    let mut source = AugmentedPairs::<f32>::new(a.margin, cfg.arch.stride());
    for it in &manifest.items {
        let mp = a.masks.join(format!("{}.png", it.image_id));
        if !mp.is_file() {
            continue;
        }
        let ann = Annotation::load(&it.annotation)?;
        source.push(load_edf(it)?, load_mask(&mp)?, ann.frame, id_seed(a.seed, &it.image_id))?;
    }
    if source.pair_count() == 0 {
        bail!("no masks for manifest items in {}", a.masks.display());
    }
    cfg.samples_per_epoch = Some(a.views * source.pair_count());
    let t = Instant::now();
    let res = train_with(&source, &cfg, |e, l| {
        if !out.json {
            eprintln!("epoch {e}: loss {l:.5}");
        }
    })?;
    save_checkpoint(&res.params, &a.out)?;
    let loss_path = a.out.with_extension("loss.csv");
    std::fs::write(&loss_path, res.loss_csv()).with_context(|| format!("writing {}", loss_path.display()))?;
    let params = json!({ "train": cfg, "views": a.views, "margin": a.margin, "pairs": source.pair_count() });
    repro::write(&a.out, &Repro::new("train", Some(a.seed), &params))?;
    let last = res.losses.last().copied();
    out.emit(
        format!(
            "trained on {} pairs for {} epochs in {:.1} s, final loss {}",
            source.pair_count(),
            cfg.epochs,
            t.elapsed().as_secs_f64(),
            last.map_or("n/a".into(), |l| format!("{l:.5}"))
        ),
        json!({ "pairs": source.pair_count(), "epochs": cfg.epochs, "final_loss": last }),
    );
    Ok(())
}

fn status_value(eng: &Engine) -> Value {
    let st = eng.state();
    let (train, active, test) = st.partition.sizes();
    json!({
        "run_id": st.run_id,
        "iteration": st.iteration,
        "phase": st.phase,
        "partition": { "train": train, "active": active, "test": test },
        "queue_remaining": eng.queue().len(),
        "records": st.records,
    })
}

fn loop_cmd(out: &Out, cmd: &LoopCmd) -> Result<()> {
    match cmd {
        LoopCmd::Init {
            manifest,
            run,
            test_mouse,
            config,
            bootstrap,
            bootstrap_config,
            seed,
        } => {
            let mut cfg: LoopConfig = read_json(config.as_deref())?;
            cfg.seed = *seed;
            let mut m = DatasetManifest::load_resolved(manifest)?;
            let verdicts: BTreeMap<String, Verdict> = match bootstrap {
                Some(p) => read_json(Some(p))?,
                None => {
                    let mut bc: BootstrapConfig = read_json(bootstrap_config.as_deref())?;
                    bc.seed = *seed;
                    bootstrap_review(&mut m, test_mouse, &bc, run.join("asa_masks"))?
                }
            };
            let run_id = run
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".into());
            let eng = Engine::init(run, &m, &verdicts, test_mouse, cfg, &run_id)?;
            repro::write(run, &Repro::new("loop init", Some(*seed), &to_value(&cfg)))?;
            let (tr, ac, te) = eng.state().partition.sizes();
            out.emit(
                format!("created run {run_id}: train {tr}, active {ac}, test {te}"),
                status_value(&eng),
            );
        }
        LoopCmd::Run {
            run,
            iterations,
            reviewer,
            bind,
        } => {
            if *iterations == 0 {
                bail!("--iterations must be at least 1");
            }
            match reviewer {
                ReviewerKind::Oracle => {
                    let mut eng = Engine::open(run)?;
                    let mut rev = OracleReviewer {
                        min_cell_size: eng.state().config.min_cell_size,
                    };
                    while (eng.records().len() as u32) < *iterations {
                        let t = Instant::now();
                        let r = eng.run_iteration(&mut rev)?;
                        if !out.json {
                            eprintln!(
                                "iteration {}: accepted {}, test error {:.2}%, train size {} ({:.1} s)",
                                r.iteration,
                                r.n_accepted,
                                r.error_pct,
                                r.train_size,
                                t.elapsed().as_secs_f64()
                            );
                        }
                    }
                    let cfg = eng.state().config;
                    repro::write(run, &Repro::new("loop run", Some(cfg.seed), &to_value(&cfg)))?;
                    out.emit(records_csv(eng.records()).trim_end(), status_value(&eng));
                }
                ReviewerKind::Http => {
                    let run = run.canonicalize().with_context(|| format!("opening {}", run.display()))?;
                    {
                        let mut eng = Engine::open(&run)?;
                        if eng.state().phase == Phase::Idle && (eng.records().len() as u32) < *iterations {
                            eng.start_iteration()?;
                        }
                    }
                    let root = run.parent().context("run directory has no parent")?.to_path_buf();
                    let mut sc = ServiceConfig::new(root);
                    sc.auto_advance = Some(*iterations);
                    serve_blocking(sc, bind)?;
                }
            }
        }
        LoopCmd::Status { run } => {
            let eng = Engine::open(run)?;
            let v = status_value(&eng);
            out.emit(
                format!(
                    "phase {}, iteration {}, partition {}\n{}",
                    v["phase"].as_str().unwrap_or("?"),
                    v["iteration"],
                    v["partition"],
                    records_csv(eng.records()).trim_end()
                ),
                v,
            );
        }
    }
    Ok(())
}

fn load_frame(path: &Path) -> Result<DisectorFrame> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let frame = v.get("frame").cloned().unwrap_or(v);
    serde_json::from_value(frame).with_context(|| format!("{} holds no frame", path.display()))
}

fn count(out: &Out, a: &CountArgs) -> Result<()> {
    let frame = load_frame(&a.frame)?;
    let labels = match (&a.labels, &a.mask) {
        (Some(l), _) => load_labels(l)?,
        (None, Some(m)) => postprocess(&load_mask(m)?, a.min_cell_size, a.max_cell_size),
        (None, None) => bail!("one of --labels or --mask is required"),
    };
    frame.validate(labels.width(), labels.height())?;
    let res = count_cells(&labels, &frame);
    out.emit(
        res.counted.to_string(),
        json!({ "counted": res.counted, "blobs": res.verdicts.len() }),
    );
    Ok(())
}

fn eval(out: &Out, a: &EvalArgs) -> Result<()> {
    let params = load_checkpoint::<f32>(&a.checkpoint)?;
    let manifest = DatasetManifest::load_resolved(&a.manifest)?;
    let mut items = Vec::new();
    for it in manifest.items.iter().filter(|it| it.mouse_id == a.test_mouse) {
        items.push(TestItem {
            image_id: it.image_id.clone(),
            section: it.section,
            edf: load_edf(it)?,
            annotation: Annotation::load(&it.annotation)?,
        });
    }
    if items.is_empty() {
        bail!("no items for test mouse {}", a.test_mouse);
    }
    let ep = EvalParams {
        margin: a.margin,
        threshold: a.threshold,
        min_cell_size: a.min_cell_size,
        max_cell_size: a.max_cell_size,
    };
    let (sections, error_pct) = evaluate_test(&params, &items, &ep)?;
    let report = stereo_core::disector::CountReport::new(sections.clone())?;
    if let Some(p) = &a.out {
        std::fs::write(p, report.to_csv()).with_context(|| format!("writing {}", p.display()))?;
        let pv = json!({ "checkpoint": a.checkpoint, "test_mouse": a.test_mouse, "eval": {
            "margin": a.margin, "threshold": a.threshold, "min_cell_size": a.min_cell_size, "max_cell_size": a.max_cell_size } });
        repro::write(p, &Repro::new("eval", None, &pv))?;
    }
    out.emit(
        format!("{}error {:.4}%", report.to_csv(), error_pct),
        json!({ "sections": sections, "error_pct": error_pct }),
    );
    Ok(())
}

/// Returns whether the replay matched the expectation (true without one).
fn replay_cmd(out: &Out, a: &ReplayArgs) -> Result<bool> {
    let text = std::fs::read_to_string(&a.decisions).with_context(|| format!("reading {}", a.decisions.display()))?;
    let res = replay(&parse_log(&text)?)?;
    if let Some(p) = &a.out {
        std::fs::write(p, records_csv(&res.records)).with_context(|| format!("writing {}", p.display()))?;
    }
    let issues = match &a.records {
        Some(p) => {
            let exp = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            compare_records(&res.records, &parse_records_csv(&exp)?, a.decimals)
        }
        None => Vec::new(),
    };
    let (tr, ac, te) = res.initial;
    let mut human = format!("run {}: {} items, initial train {tr}, active {ac}, test {te}\n", res.run_id, res.total);
    for r in &res.records {
        human += &format!(
            "iteration {}: accepted {}, error {:.*}%, train size {}\n",
            r.iteration, r.n_accepted, a.decimals, r.error_pct, r.train_size
        );
    }
    if a.records.is_some() {
        human += if issues.is_empty() { "records match" } else { "records differ:" };
        for i in &issues {
            human += &format!("\n  {i}");
        }
    }
    out.emit(
        human.trim_end(),
        json!({
            "run_id": res.run_id,
            "total": res.total,
            "initial": { "train": tr, "active": ac, "test": te },
            "records": res.records,
            "matches": a.records.as_ref().map(|_| issues.is_empty()),
            "issues": issues,
        }),
    );
    Ok(issues.is_empty())
}

fn serve_blocking(cfg: ServiceConfig, bind: &str) -> Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(stereo_service::serve(cfg, bind))?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<bool> {
    let out = Out { json: cli.json };
    match &cli.command {
        Command::Synth(SynthCmd::Gen { config, out: dir, seed }) => synth_gen(&out, config.as_deref(), dir, *seed)?,
        Command::Edf(a) => edf(&out, a)?,
        Command::Asa(a) => asa(&out, a)?,
        Command::Augment(a) => augment(&out, a)?,
        Command::Train(a) => train(&out, a)?,
        Command::Loop(c) => loop_cmd(&out, c)?,
        Command::Count(a) => count(&out, a)?,
        Command::Eval(a) => eval(&out, a)?,
        Command::Replay(a) => return replay_cmd(&out, a),
        Command::Serve(a) => {
            let mut cfg = ServiceConfig::new(&a.root);
            cfg.lease = std::time::Duration::from_secs(a.lease_secs);
            serve_blocking(cfg, &a.bind)?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    let json = cli.json;
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            if json {
                println!("{}", json!({ "error": format!("{e:#}") }));
            }
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
