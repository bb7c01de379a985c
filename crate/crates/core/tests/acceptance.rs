//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs without the libtest harness so the lines always print.

mod common;

use std::collections::{BTreeSet, HashSet};
use std::path::Path;
use std::time::{Duration, Instant};

use common::Check;
use rand::Rng;

use stereo_core::augment::{augment_pair, rotation_angles, BaseKind};
use stereo_core::disector::{aggregate_error_rate, error_rate};
use stereo_core::raster::{Image, Rect, SegMask};
use stereo_core::reference::{REFERENCE_LOG, REFERENCE_RECORDS};
use stereo_core::review_loop::{
    compare_records, parse_log, parse_records_csv, records_csv, replay, DatasetManifest, Engine, LogReviewer,
    LoopConfig, Phase, Verdict,
};
use stereo_core::segnet::Architecture;
use stereo_core::synth::*;

/// Per-section counts (manual, network, classical) for the held-out mouse.
const PUBLISHED_SECTIONS: [(u64, u64, u64); 8] = [
    (74, 82, 65),
    (142, 137, 121),
    (177, 160, 157),
    (49, 48, 50),
    (58, 59, 54),
    (70, 64, 57),
    (83, 92, 77),
    (74, 81, 66),
];

/// (accepted, error %) per iteration of the reference run.
const REFERENCE_TRACE: [(usize, f64); 5] = [(379, 3.16), (81, 0.82), (51, 1.92), (18, 0.41), (15, 0.55)];

// End-to-end settings, chosen by the sweep recorded in the decision notes.
const E2E_SEED: u64 = 0;
const E2E_DEGRADED: f64 = 0.85;
const E2E_EPOCHS: usize = 4;
const E2E_VIEWS: usize = 6;
const E2E_LR: f64 = 1e-3;

fn ok_if(cond: bool, pass: String, fail: String) -> Check {
    if cond {
        Ok(pass)
    } else {
        Err(fail)
    }
}

fn within(name: &str, got: f64, want: f64, tol: f64) -> Check {
    ok_if(
        (got - want).abs() <= tol,
        format!("{name} {got:.4} (want {want} +/- {tol})"),
        format!("{name} {got:.4} outside {want} +/- {tol}"),
    )
}

fn timed(limit: Duration, f: impl FnOnce() -> Check) -> (Check, Duration) {
    let t = Instant::now();
    let r = f();
    let el = t.elapsed();
    let r = match r {
        Ok(s) if el > limit => Err(format!("{s}; took {el:.2?}, limit {limit:?}")),
        other => other,
    };
    (r, el)
}

fn arithmetic() -> Check {
    let unet: Vec<(u64, u64)> = PUBLISHED_SECTIONS.iter().map(|r| (r.0, r.1)).collect();
    let asa: Vec<(u64, u64)> = PUBLISHED_SECTIONS.iter().map(|r| (r.0, r.2)).collect();
    let sum = |k: fn(&(u64, u64, u64)) -> u64| PUBLISHED_SECTIONS.iter().map(k).sum::<u64>();
    let (m, u, a) = (sum(|r| r.0), sum(|r| r.1), sum(|r| r.2));
    if (m, u, a) != (727, 723, 647) {
        return Err(format!("column totals {m}/{u}/{a}, expected 727/723/647"));
    }
    let eu = aggregate_error_rate(&unet).map_err(|e| e.to_string())?;
    let ea = aggregate_error_rate(&asa).map_err(|e| e.to_string())?;
    let su = within("network error", eu, 0.55, 0.01)?;
    let sa = within("classical error", ea, 11.0, 0.1)?;
    let du = error_rate(727, 723).map_err(|e| e.to_string())?;
    let da = error_rate(727, 647).map_err(|e| e.to_string())?;
    // Second route: the closed form on the totals.
    let (cu, ca) = (4.0 / 727.0 * 100.0, 80.0 / 727.0 * 100.0);
    if du != eu || da != ea || (du - cu).abs() > 1e-12 || (da - ca).abs() > 1e-12 {
        return Err(format!("direct rates {du}/{da} disagree with aggregates {eu}/{ea} or {cu}/{ca}"));
    }
    Ok(format!("{su}; {sa}"))
}

fn reference_replay() -> Check {
    let log = parse_log(REFERENCE_LOG).map_err(|e| e.to_string())?;
    let out = replay(&log).map_err(|e| e.to_string())?;
    let got: Vec<(usize, String)> = out.records.iter().map(|r| (r.n_accepted, format!("{:.2}", r.error_pct))).collect();
    let want: Vec<(usize, String)> = REFERENCE_TRACE.iter().map(|&(n, e)| (n, format!("{e:.2}"))).collect();
    if got != want {
        return Err(format!("replayed {got:?}, expected {want:?}"));
    }
    if out.initial != (147, 728, 91) {
        return Err(format!("initial partition {:?}, expected (147, 728, 91)", out.initial));
    }
    let (tr, ac, te) = out.partition.sizes();
    if out.total != 966 || tr + ac + te != 966 {
        return Err(format!("totals {} and {tr}+{ac}+{te}, expected 966", out.total));
    }
    let file = parse_records_csv(REFERENCE_RECORDS).map_err(|e| e.to_string())?;
    let diffs = compare_records(&out.records, &file, 2);
    if !diffs.is_empty() {
        return Err(format!("records file mismatch: {}", diffs.join("; ")));
    }
    // The bundled file carries the published two-decimal values.
    let stated: Vec<(usize, f64)> = file.iter().map(|r| (r.n_accepted, r.error_pct)).collect();
    if stated != REFERENCE_TRACE {
        return Err(format!("bundled records {stated:?} differ from the published trace"));
    }
    let mut accepted = 147;
    for r in &out.records {
        accepted += r.n_accepted;
        if r.train_size != 72 * accepted {
            return Err(format!("iteration {}: train size {} for {accepted} images", r.iteration, r.train_size));
        }
    }
    Ok(format!("5 iterations exact; partition 147/728/91 -> {tr}/{ac}/{te}; total 966"))
}

fn augmentation() -> Check {
    let mut r = common::rng(31);
    let img = Image::<f32>::from_fn(128, 128, |_, _| r.random::<f32>());
    let mask = SegMask::from_fn(128, 128, |x, y| (x / 9 + y / 7) % 3 == 0);
    let t = Instant::now();
    let set = augment_pair(&img, &mask, 5).map_err(|e| e.to_string())?;
    let el = t.elapsed();
    if set.len() != 72 {
        return Err(format!("{} pairs", set.len()));
    }
    let (i0, m0, p0) = &set.items[0];
    if *i0 != img || *m0 != mask || p0.base != BaseKind::Base || p0.angle != 0 {
        return Err("first pair is not the untouched input".into());
    }
    let angles: BTreeSet<u32> = set.items.iter().map(|p| p.2.angle).collect();
    if angles.len() != 24 || angles != rotation_angles().into_iter().collect() {
        return Err(format!("{} distinct angles", angles.len()));
    }
    let per: HashSet<_> = set.items.iter().map(|p| p.2).collect();
    if per.len() != 72 {
        return Err("provenance repeats".into());
    }
    let first = |b: BaseKind| set.items.iter().find(|p| p.2.base == b && p.2.angle == 0).map(|p| &p.0);
    let (e1, e2) = (first(BaseKind::Elastic1), first(BaseKind::Elastic2));
    match (e1, e2) {
        (Some(a), Some(b)) if a != b && *a != img && *b != img => {}
        _ => return Err("elastic bases missing or not distinct".into()),
    }
    ok_if(
        el < Duration::from_secs(5),
        format!("72 pairs, 24 angles, 2 elastic bases, identity first; 128x128 in {el:.2?}"),
        format!("128x128 pair took {el:.2?}"),
    )
}

fn partition_ok(
    eng: &Engine,
    total: usize,
    test: &BTreeSet<String>,
    before: &stereo_core::review_loop::Partition,
    accepted: usize,
) -> Check {
    let p = &eng.state().partition;
    let (tr, ac, te) = p.sizes();
    if tr + ac + te != total {
        return Err(format!("partition sums to {} of {total}", tr + ac + te));
    }
    if !p.train.is_disjoint(&p.active) || !p.train.is_disjoint(&p.test) || !p.active.is_disjoint(&p.test) {
        return Err("partition sets overlap".into());
    }
    if &p.test != test {
        return Err("test set changed".into());
    }
    if ac + accepted != before.active.len() || tr != before.train.len() + accepted {
        return Err(format!("accepted {accepted} but sizes moved from {:?} to {:?}", before.sizes(), p.sizes()));
    }
    if !before.train.is_subset(&p.train) {
        return Err("a training image left the training set".into());
    }
    Ok(String::new())
}

fn end_to_end() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let cfg = SynthConfig {
        params: SynthParams {
            width: 128,
            height: 128,
            frame: Rect::new(32, 32, 96, 96),
            cells: (30, 45),
            radius: (3.5, 5.5),
            overlap_prob: 0.15,
            noise_sigma: 0.05,
            stain_jitter: 0.25,
            seed: E2E_SEED,
            ..SynthParams::default()
        },
        mice: scaled_reference_mice(8),
        write_stacks: false,
    };
    let ds = gen_dataset(&cfg, root.join("corpus")).map_err(|e| e.to_string())?;
    let mut manifest = ds.manifest.resolved(&root.join("corpus"));
    let total = manifest.items.len();
    let mice = manifest.items.iter().map(|i| &i.mouse_id).collect::<BTreeSet<_>>().len();
    let bc = BootstrapConfig { degraded_fraction: E2E_DEGRADED, seed: E2E_SEED, ..BootstrapConfig::default() };
    let verdicts = bootstrap_review(&mut manifest, "17", &bc, root.join("asa")).map_err(|e| e.to_string())?;
    let mut lc = LoopConfig { seed: E2E_SEED, views_per_pair: E2E_VIEWS, ..LoopConfig::default() };
    lc.train.epochs = E2E_EPOCHS;
    lc.train.adam.lr = E2E_LR;
    lc.train.arch = Architecture { depth: 2, base: 8, in_channels: 1 };
    let mut eng = Engine::init(root.join("run"), &manifest, &verdicts, "17", lc, "acceptance").map_err(|e| e.to_string())?;
    let test = eng.state().partition.test.clone();
    if test.is_empty() || !test.iter().all(|id| eng.item(id).is_ok_and(|it| it.mouse_id == "17")) {
        return Err("test set is not exactly the held-out mouse".into());
    }
    let mut errs = Vec::new();
    let mut rev = OracleReviewer::default();
    for _ in 0..3 {
        let before = eng.state().partition.clone();
        let rec = eng.run_iteration(&mut rev).map_err(|e| e.to_string())?;
        partition_ok(&eng, total, &test, &before, rec.n_accepted).map_err(|e| format!("iteration {}: {e}", rec.iteration))?;
        if rec.train_size != 72 * eng.state().partition.train.len() {
            return Err(format!("iteration {}: train size {}", rec.iteration, rec.train_size));
        }
        errs.push(rec.error_pct);
    }
    let summary = format!(
        "{total} images, {} mice, errors {}",
        mice,
        errs.iter().map(|e| format!("{e:.2}%")).collect::<Vec<_>>().join(" -> ")
    );
    ok_if(errs[2] < errs[0], summary.clone(), format!("final error not below iteration 1: {summary}"))
}

fn durable_config() -> LoopConfig {
    let mut c = LoopConfig { seed: 8, views_per_pair: 2, ..LoopConfig::default() };
    c.train.epochs = 2;
    c.train.arch = Architecture { depth: 1, base: 2, in_channels: 1 };
    c
}

fn small_corpus(root: &Path, name: &str) -> Result<(DatasetManifest, String), String> {
    let cfg = SynthConfig {
        params: SynthParams {
            width: 96,
            height: 96,
            frame: Rect::new(28, 28, 68, 68),
            cells: (6, 10),
            seed: 21,
            ..SynthParams::default()
        },
        mice: vec![
            MouseSpec { mouse_id: "01".into(), sections: 2, stacks: 4 },
            MouseSpec { mouse_id: "02".into(), sections: 2, stacks: 4 },
            MouseSpec { mouse_id: "03".into(), sections: 2, stacks: 2 },
        ],
        write_stacks: true,
    };
    let ds = gen_dataset(&cfg, root.join(name)).map_err(|e| e.to_string())?;
    Ok((ds.manifest.resolved(&root.join(name)), ds.corpus_hash))
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let (mut manifest, h1) = small_corpus(root, "c1")?;
    let (_, h2) = small_corpus(root, "c2")?;
    if h1 != h2 {
        return Err("identical seeds gave different corpora".into());
    }
    let bc = BootstrapConfig { degraded_fraction: 0.5, seed: 4, ..BootstrapConfig::default() };
    let verdicts = bootstrap_review(&mut manifest, "03", &bc, root.join("asa")).map_err(|e| e.to_string())?;
    if !verdicts.values().any(|v| *v == Verdict::Accept) {
        return Err("bootstrap accepted nothing".into());
    }
    let init = |name: &str| {
        Engine::init(root.join(name), &manifest, &verdicts, "03", durable_config(), "r").map_err(|e| e.to_string())
    };
    let n = 3;
    let e = |x: stereo_core::Error| x.to_string();

    let mut a = init("a")?;
    a.run_loop(&mut OracleReviewer::default(), n).map_err(e)?;
    init("b")?.run_loop(&mut OracleReviewer::default(), n).map_err(e)?;
    common::same_outputs(&root.join("a"), &root.join("b"), n)?;

    // Reviewer dies two decisions into iteration 2; reopen from disk.
    {
        let mut c = init("c")?;
        c.run_iteration(&mut OracleReviewer::default()).map_err(e)?;
        if c.run_iteration(&mut common::Dying { inner: OracleReviewer::default(), budget: 2 }).is_ok() {
            return Err("dying reviewer did not interrupt the run".into());
        }
    }
    let mut c = Engine::open(root.join("c")).map_err(e)?;
    if c.state().phase != Phase::AwaitingReview {
        return Err(format!("reopened mid-review run is in {:?}", c.state().phase));
    }
    c.run_loop(&mut OracleReviewer::default(), n).map_err(e)?;
    common::same_outputs(&root.join("a"), &root.join("c"), n)?;

    // Process gone while training iteration 3.
    {
        let mut d = init("d")?;
        d.run_loop(&mut OracleReviewer::default(), 2).map_err(e)?;
        d.start_iteration().map_err(e)?;
    }
    let mut d = Engine::open(root.join("d")).map_err(e)?;
    if d.state().phase != Phase::Training || d.resume_job().is_none() {
        return Err("reopened run did not resume training".into());
    }
    d.run_loop(&mut OracleReviewer::default(), n).map_err(e)?;
    common::same_outputs(&root.join("a"), &root.join("d"), n)?;

    // The decision log alone drives a fresh run and replays to the records.
    let text = std::fs::read_to_string(root.join("a/decisions.jsonl")).map_err(|x| x.to_string())?;
    let log = parse_log(&text).map_err(e)?;
    init("f")?.run_loop(&mut LogReviewer::new(&log), n).map_err(e)?;
    common::same_outputs(&root.join("a"), &root.join("f"), n)?;
    let rep = replay(&log).map_err(e)?;
    let file = std::fs::read_to_string(root.join("a/records.csv")).map_err(|x| x.to_string())?;
    if records_csv(&rep.records) != file {
        return Err("replayed records differ from records.csv".into());
    }
    Ok("corpora, checkpoints and records byte-identical; review and training kills resume exactly".into())
}

fn main() {
    let minute = Duration::from_secs(60);
    let criteria: Vec<(&str, Duration, Box<dyn FnOnce() -> Check>)> = vec![
        ("arithmetic", Duration::from_secs(1), Box::new(arithmetic)),
        ("reference-replay", Duration::MAX, Box::new(reference_replay)),
        ("augmentation", Duration::from_secs(5), Box::new(augmentation)),
        ("property/em", minute, Box::new(|| {
            let a = common::em_monotone(100, 5)?;
            let b = common::em_recovery(3)?;
            Ok(format!("{a}; {b}"))
        })),
        ("property/watershed", minute, Box::new(|| common::watershed_instances(200))),
        ("property/savgol", minute, Box::new(|| {
            let a = common::savgol_kernel_check()?;
            let b = common::savgol_reproduction(8)?;
            Ok(format!("{a}; {b}"))
        })),
        ("property/disector", minute, Box::new(|| common::disector_layouts(500, 11))),
        ("property/gradient", minute, Box::new(|| common::gradient_check(2, 16, 4, 1e-3))),
        ("end-to-end", 20 * minute, Box::new(end_to_end)),
        ("determinism", Duration::MAX, Box::new(determinism)),
    ];
    let mut failed = 0;
    for (name, limit, f) in criteria {
        let (r, el) = timed(limit, || {
            std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()))
        });
        match r {
            Ok(s) => println!("PASS {name} [{el:.2?}] {s}"),
            Err(s) => {
                failed += 1;
                println!("FAIL {name} [{el:.2?}] {s}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
