//! Run directory, persistent run state and the iteration state machine.
//!
//! ```text
//! <run>/manifest.json          resolved dataset manifest
//! <run>/partition.json         current train/active/test split
//! <run>/decisions.jsonl        append-only run log
//! <run>/state.json             run state with its SHA-256
//! <run>/records.csv            iteration,n_accepted,error_pct,train_size
//! <run>/train_masks/<id>.png   accepted masks (bootstrap or predicted)
//! <run>/edf/<id>.png           EDF images computed from stacks
//! <run>/checkpoints/iter_<k>.bin, iter_<k>_loss.csv
//! <run>/predictions/iter_<k>/<id>.png
//! ```
//!
//! An iteration runs `idle -> training -> awaiting-review -> idle`. The
//! training job (train, predict the active set, score the test set) only
//! reads inputs fixed when it starts, so it can run outside the engine's
//! lock; its output is applied with [`Engine::finish_iteration`].

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::evaluate::{evaluate_test, id_seed, predict_in_frame, AugmentedPairs, EvalParams, TestItem};
use super::log::{
    now_seconds, DecisionLog, EvaluationEvent, InitEvent, ItemRef, LogEvent, ReviewDecision,
    LOG_SCHEMA_VERSION,
};
use super::manifest::{DatasetManifest, ManifestItem, Partition, Verdict};
use super::records::{records_csv, IterationRecord};
use crate::asa::AsaParams;
use crate::augment::{variants_per_pair, FRAME_MARGIN};
use crate::disector::{Annotation, SectionCount};
use crate::edf::{edf_stack, DEFAULT_DEPTH_SMOOTH, DEFAULT_FOCUS_WINDOW};
use crate::error::{Error, Result};
use crate::raster::{load_image, load_mask, save_image, save_mask, Image, ImageStack, SegMask};
use crate::segnet::{save_checkpoint, train_with, NetworkParams, TrainConfig};

pub const STATE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub seed: u64,
    /// Network and optimizer settings; `samples_per_epoch` is derived from
    /// `views_per_pair` and ignored here.
    pub train: TrainConfig,
    /// Augmented variants drawn per training pair and epoch (at most 72).
    pub views_per_pair: usize,
    pub margin: usize,
    pub threshold: f64,
    pub min_cell_size: usize,
    pub max_cell_size: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        let asa = AsaParams::default();
        LoopConfig {
            seed: 0,
            train: TrainConfig::default(),
            views_per_pair: variants_per_pair(),
            margin: FRAME_MARGIN,
            threshold: 0.5,
            min_cell_size: asa.min_cell_size,
            max_cell_size: asa.max_cell_size,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.views_per_pair == 0 || self.views_per_pair > variants_per_pair() {
            return Err(Error::invalid(format!(
                "views per pair must be in 1..={}",
                variants_per_pair()
            )));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::invalid("threshold must be in [0, 1)"));
        }
        if self.min_cell_size > self.max_cell_size {
            return Err(Error::invalid("min cell size exceeds max cell size"));
        }
        Ok(())
    }

    fn eval_params(&self) -> EvalParams {
        EvalParams {
            margin: self.margin,
            threshold: self.threshold,
            min_cell_size: self.min_cell_size,
            max_cell_size: self.max_cell_size,
        }
    }

    /// Training configuration for one iteration: a fresh seed per
    /// iteration and an epoch length proportional to the training set.
    pub fn iteration_train_config(&self, iteration: u32, train_pairs: usize) -> TrainConfig {
        TrainConfig {
            seed: self
                .seed
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add(iteration as u64),
            samples_per_epoch: Some(self.views_per_pair * train_pairs.max(1)),
            ..self.train
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Idle,
    Training,
    Predicting,
    Evaluating,
    AwaitingReview,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub schema_version: u32,
    pub run_id: String,
    pub test_mouse: String,
    pub manifest_hash: String,
    pub config: LoopConfig,
    pub partition: Partition,
    /// Last completed iteration while idle; the iteration in progress
    /// otherwise.
    pub iteration: u32,
    pub phase: Phase,
    /// Review queue of the current iteration (ascending ids).
    pub pending: Vec<String>,
    pub records: Vec<IterationRecord>,
    pub evaluations: Vec<EvaluationEvent>,
}

#[derive(Serialize)]
struct EnvelopeOut<'a> {
    sha256: String,
    state: &'a serde_json::value::RawValue,
}

#[derive(Deserialize)]
struct EnvelopeIn<'a> {
    sha256: String,
    #[serde(borrow)]
    state: &'a serde_json::value::RawValue,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        use std::io::Write;
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

impl RunState {
    pub fn to_envelope(&self) -> String {
        let raw = serde_json::value::to_raw_value(self).expect("state serializes");
        let sha256 = hex::encode(Sha256::digest(raw.get().as_bytes()));
        serde_json::to_string(&EnvelopeOut { sha256, state: &raw }).expect("envelope serializes")
    }

    /// Parse a state envelope, rejecting content whose hash does not match.
    pub fn from_envelope(text: &str, origin: &Path) -> Result<RunState> {
        let corrupt = |reason: String| Error::Corrupt {
            path: origin.to_path_buf(),
            reason,
        };
        let env: EnvelopeIn = serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
        if hex::encode(Sha256::digest(env.state.get().as_bytes())) != env.sha256 {
            return Err(corrupt("content hash mismatch".into()));
        }
        let state: RunState = serde_json::from_str(env.state.get()).map_err(|e| corrupt(e.to_string()))?;
        if state.schema_version != STATE_SCHEMA_VERSION {
            return Err(corrupt(format!("unsupported state version {}", state.schema_version)));
        }
        Ok(state)
    }
}

/// What a reviewer sees for one item.
pub struct ReviewItem<'a> {
    pub image_id: &'a str,
    pub iteration: u32,
    pub edf: &'a Image<f32>,
    pub predicted: &'a SegMask,
    pub annotation: &'a Annotation,
}

/// Source of accept/reject verdicts. Returning `Ok(None)` (or an error)
/// pauses the run; decisions made so far stay durable.
pub trait Reviewer {
    fn name(&self) -> &str;
    fn review(&mut self, item: &ReviewItem<'_>) -> Result<Option<Verdict>>;
}

/// Replays verdicts from an existing log.
pub struct LogReviewer {
    verdicts: BTreeMap<(u32, String), Verdict>,
}

impl LogReviewer {
    pub fn new(events: &[LogEvent]) -> Self {
        LogReviewer {
            verdicts: events
                .iter()
                .filter_map(|e| match e {
                    LogEvent::Decision(d) => Some(((d.iteration, d.image_id.clone()), d.verdict)),
                    _ => None,
                })
                .collect(),
        }
    }
}

impl Reviewer for LogReviewer {
    fn name(&self) -> &str {
        "log"
    }

    fn review(&mut self, item: &ReviewItem<'_>) -> Result<Option<Verdict>> {
        Ok(self.verdicts.get(&(item.iteration, item.image_id.to_string())).copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubmitOutcome {
    Recorded,
    Duplicate,
}

pub fn load_edf(item: &ManifestItem) -> Result<Image<f32>> {
    if let Some(p) = &item.edf {
        return Ok(load_image::<f32>(p)?.to_grayscale());
    }
    let paths = item.stack.as_deref().unwrap_or_default();
    let slices = paths
        .iter()
        .map(|p| load_image::<f32>(p).map(|i| i.to_grayscale()))
        .collect::<Result<Vec<_>>>()?;
    let (img, _) = edf_stack(&ImageStack::new(slices)?, DEFAULT_FOCUS_WINDOW, DEFAULT_DEPTH_SMOOTH)?;
    Ok(img)
}

fn ensure_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Inputs of one training/prediction/evaluation job, fixed at its start.
pub struct IterationJob {
    pub iteration: u32,
    dir: PathBuf,
    config: LoopConfig,
    manifest: DatasetManifest,
    train: Vec<String>,
    active: Vec<String>,
    test: Vec<String>,
}

pub struct IterationOutput {
    pub iteration: u32,
    pub evaluation: EvaluationEvent,
    pub losses: Vec<f64>,
}

impl IterationJob {
    fn item(&self, id: &str) -> Result<&ManifestItem> {
        self.manifest
            .item(id)
            .ok_or_else(|| Error::NotFound(format!("image {id}")))
    }

    /// Train from scratch on the current training set, predict every
    /// active image and score the test set. `phase` reports progress.
    pub fn run(&self, mut phase: impl FnMut(Phase)) -> Result<IterationOutput> {
        phase(Phase::Training);
        let cfg = &self.config;
        let mut source = AugmentedPairs::<f32>::new(cfg.margin, cfg.train.arch.stride());
        for id in &self.train {
            let it = self.item(id)?;
            let ann = Annotation::load(&it.annotation)?;
            let mask = load_mask(self.dir.join("train_masks").join(format!("{id}.png")))?;
            source.push(load_edf(it)?, mask, ann.frame, id_seed(cfg.seed, id))?;
        }
        let tcfg = cfg.iteration_train_config(self.iteration, source.pair_count());
        let out = train_with(&source, &tcfg, |_, _| {})?;
        let ck = self.dir.join("checkpoints");
        ensure_dir(&ck)?;
        save_checkpoint(&out.params, ck.join(format!("iter_{}.bin", self.iteration)))?;
        let loss_path = ck.join(format!("iter_{}_loss.csv", self.iteration));
        std::fs::write(&loss_path, out.loss_csv()).map_err(|e| Error::io(&loss_path, e))?;

        phase(Phase::Predicting);
        let pred_dir = self.dir.join("predictions").join(format!("iter_{}", self.iteration));
        ensure_dir(&pred_dir)?;
        for id in &self.active {
            let it = self.item(id)?;
            let ann = Annotation::load(&it.annotation)?;
            let mask = predict_in_frame(&out.params, &load_edf(it)?, &ann.frame, cfg.margin, cfg.threshold)?;
            save_mask(&mask, pred_dir.join(format!("{id}.png")))?;
        }

        phase(Phase::Evaluating);
        let (sections, error_pct) = self.evaluate(&out.params)?;
        Ok(IterationOutput {
            iteration: self.iteration,
            evaluation: EvaluationEvent {
                iteration: self.iteration,
                error_pct,
                sections,
            },
            losses: out.losses,
        })
    }

    fn evaluate(&self, params: &NetworkParams<f32>) -> Result<(Vec<SectionCount>, f64)> {
        let mut items = Vec::with_capacity(self.test.len());
        for id in &self.test {
            let it = self.item(id)?;
            items.push(TestItem {
                image_id: id.clone(),
                section: it.section,
                edf: load_edf(it)?,
                annotation: Annotation::load(&it.annotation)?,
            });
        }
        evaluate_test(params, &items, &self.config.eval_params())
    }
}

pub struct Engine {
    dir: PathBuf,
    manifest: DatasetManifest,
    state: RunState,
    log: DecisionLog,
    /// Verdicts of the current iteration, rebuilt from the log on open.
    current: BTreeMap<String, Verdict>,
}

impl Engine {
    /// Create a run: partition from the bootstrap verdicts, copy accepted
    /// bootstrap masks into the training set and log the verdicts as
    /// iteration 0. `manifest` paths must already be resolved.
    pub fn init(
        dir: impl AsRef<Path>,
        manifest: &DatasetManifest,
        bootstrap: &BTreeMap<String, Verdict>,
        test_mouse: &str,
        config: LoopConfig,
        run_id: &str,
    ) -> Result<Engine> {
        let dir = dir.as_ref().to_path_buf();
        config.validate()?;
        manifest.validate()?;
        manifest.check_files()?;
        let partition = Partition::initial(manifest, bootstrap, test_mouse)?;
        for (i, it) in manifest.items.iter().enumerate() {
            if partition.train.contains(&it.image_id) && it.asa_mask.is_none() {
                return Err(Error::Manifest {
                    field: format!("items[{i}].asa_mask"),
                    reason: "accepted in bootstrap review but has no mask".into(),
                });
            }
        }
        if dir.join("state.json").exists() {
            return Err(Error::Conflict(format!("run already exists at {}", dir.display())));
        }
        for sub in ["train_masks", "checkpoints", "predictions", "edf"] {
            ensure_dir(&dir.join(sub))?;
        }
        let mut manifest = manifest.clone();
        for it in &mut manifest.items {
            if it.edf.is_none() {
                let img = load_edf(it)?;
                let p = dir.join("edf").join(format!("{}.png", it.image_id));
                save_image(&img, &p)?;
                it.edf = Some(p.display().to_string());
            }
        }
        for id in &partition.train {
            let it = manifest.item(id).expect("partitioned ids exist");
            let mask = load_mask(it.asa_mask.as_ref().expect("checked above"))?;
            save_mask(&mask, dir.join("train_masks").join(format!("{id}.png")))?;
        }
        manifest.save(dir.join("manifest.json"))?;
        let init = InitEvent {
            schema_version: LOG_SCHEMA_VERSION,
            run_id: run_id.to_string(),
            test_mouse: test_mouse.to_string(),
            items: manifest
                .items
                .iter()
                .map(|it| ItemRef {
                    image_id: it.image_id.clone(),
                    mouse_id: it.mouse_id.clone(),
                    section: it.section,
                })
                .collect(),
        };
        let log = DecisionLog::create(dir.join("decisions.jsonl"), init)?;
        let ts = now_seconds();
        for (id, v) in bootstrap {
            if partition.test.contains(id) {
                continue;
            }
            log.append(&LogEvent::Decision(ReviewDecision {
                image_id: id.clone(),
                iteration: 0,
                verdict: *v,
                reviewer: "bootstrap".into(),
                timestamp: ts,
            }))?;
        }
        let state = RunState {
            schema_version: STATE_SCHEMA_VERSION,
            run_id: run_id.to_string(),
            test_mouse: test_mouse.to_string(),
            manifest_hash: manifest.content_hash(),
            config,
            partition,
            iteration: 0,
            phase: Phase::Idle,
            pending: Vec::new(),
            records: Vec::new(),
            evaluations: Vec::new(),
        };
        let engine = Engine {
            dir,
            manifest,
            state,
            log,
            current: BTreeMap::new(),
        };
        engine.persist()?;
        Ok(engine)
    }

    /// Reopen a run from disk, verifying state and manifest hashes and
    /// rebuilding the current iteration's verdicts from the log.
    pub fn open(dir: impl AsRef<Path>) -> Result<Engine> {
        let dir = dir.as_ref().to_path_buf();
        let sp = dir.join("state.json");
        let text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
        let state = RunState::from_envelope(&text, &sp)?;
        let manifest = DatasetManifest::load(dir.join("manifest.json"))?;
        if manifest.content_hash() != state.manifest_hash {
            return Err(Error::Corrupt {
                path: dir.join("manifest.json"),
                reason: "manifest changed since the run was created".into(),
            });
        }
        let log = DecisionLog::open(dir.join("decisions.jsonl"))?;
        let mut engine = Engine {
            dir,
            manifest,
            state,
            log,
            current: BTreeMap::new(),
        };
        engine.rebuild_current()?;
        engine.check_invariants()?;
        engine.write_derived()?;
        Ok(engine)
    }

    fn rebuild_current(&mut self) -> Result<()> {
        self.current.clear();
        if self.state.phase != Phase::AwaitingReview {
            return Ok(());
        }
        for ev in self.log.read()? {
            if let LogEvent::Decision(d) = ev {
                if d.iteration == self.state.iteration {
                    self.current.insert(d.image_id, d.verdict);
                }
            }
        }
        Ok(())
    }

    fn check_invariants(&self) -> Result<()> {
        let test: BTreeSet<String> = self
            .manifest
            .items
            .iter()
            .filter(|i| i.mouse_id == self.state.test_mouse)
            .map(|i| i.image_id.clone())
            .collect();
        self.state.partition.check(&self.manifest.ids(), &test)?;
        if let Some(id) = self.state.pending.iter().find(|id| !self.state.partition.active.contains(*id)) {
            return Err(Error::State(format!("queued item {id} is not active")));
        }
        Ok(())
    }

    fn write_derived(&self) -> Result<()> {
        write_atomic(&self.dir.join("records.csv"), records_csv(&self.state.records).as_bytes())?;
        let part = serde_json::to_string_pretty(&self.state.partition)?;
        write_atomic(&self.dir.join("partition.json"), part.as_bytes())
    }

    fn persist(&self) -> Result<()> {
        self.check_invariants()?;
        write_atomic(&self.dir.join("state.json"), self.state.to_envelope().as_bytes())?;
        self.write_derived()
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.state.records
    }

    pub fn item(&self, id: &str) -> Result<&ManifestItem> {
        self.manifest
            .item(id)
            .ok_or_else(|| Error::NotFound(format!("image {id}")))
    }

    pub fn prediction_path(&self, id: &str, iteration: u32) -> PathBuf {
        self.dir
            .join("predictions")
            .join(format!("iter_{iteration}"))
            .join(format!("{id}.png"))
    }

    pub fn checkpoint_path(&self, iteration: u32) -> PathBuf {
        self.dir.join("checkpoints").join(format!("iter_{iteration}.bin"))
    }

    /// Undecided items of the current review, ascending.
    pub fn queue(&self) -> Vec<String> {
        if self.state.phase != Phase::AwaitingReview {
            return Vec::new();
        }
        self.state
            .pending
            .iter()
            .filter(|id| !self.current.contains_key(*id))
            .cloned()
            .collect()
    }

    pub fn verdict(&self, id: &str) -> Option<Verdict> {
        self.current.get(id).copied()
    }

    /// Begin the next iteration. The returned job must be run and its
    /// output passed to [`Engine::finish_iteration`].
    pub fn start_iteration(&mut self) -> Result<IterationJob> {
        if self.state.phase != Phase::Idle {
            return Err(Error::State(format!("cannot start an iteration while {:?}", self.state.phase)));
        }
        if self.state.partition.train.is_empty() {
            return Err(Error::State("training set is empty".into()));
        }
        self.state.iteration += 1;
        self.state.phase = Phase::Training;
        self.persist()?;
        Ok(self.job())
    }

    /// The job of an interrupted iteration, if one was in progress.
    pub fn resume_job(&self) -> Option<IterationJob> {
        (self.state.phase == Phase::Training).then(|| self.job())
    }

    fn job(&self) -> IterationJob {
        let p = &self.state.partition;
        IterationJob {
            iteration: self.state.iteration,
            dir: self.dir.clone(),
            config: self.state.config,
            manifest: self.manifest.clone(),
            train: p.train.iter().cloned().collect(),
            active: p.active.iter().cloned().collect(),
            test: p.test.iter().cloned().collect(),
        }
    }

    pub fn finish_iteration(&mut self, out: IterationOutput) -> Result<()> {
        if self.state.phase != Phase::Training || out.iteration != self.state.iteration {
            return Err(Error::State(format!(
                "no training job for iteration {} in progress",
                out.iteration
            )));
        }
        let logged = self.log.read()?.into_iter().any(|e| {
            matches!(e, LogEvent::Evaluation(ref ev) if ev.iteration == out.iteration)
        });
        if !logged {
            self.log.append(&LogEvent::Evaluation(out.evaluation.clone()))?;
        }
        self.state.evaluations.retain(|e| e.iteration != out.iteration);
        self.state.evaluations.push(out.evaluation);
        self.state.pending = self.state.partition.active.iter().cloned().collect();
        self.state.phase = Phase::AwaitingReview;
        self.current.clear();
        self.persist()
    }

    /// Train, predict and evaluate for the next iteration (or the
    /// interrupted one) and open its review queue.
    pub fn prepare_iteration(&mut self) -> Result<()> {
        let job = match self.resume_job() {
            Some(j) => j,
            None => self.start_iteration()?,
        };
        let out = job.run(|_| {})?;
        self.finish_iteration(out)
    }

    /// Record a verdict durably. Re-submitting the same verdict is a no-op;
    /// a different verdict for a decided item is a conflict.
    pub fn submit(&mut self, image_id: &str, verdict: Verdict, reviewer: &str) -> Result<SubmitOutcome> {
        if self.state.phase != Phase::AwaitingReview {
            return Err(Error::State(format!("not awaiting review (phase {:?})", self.state.phase)));
        }
        if self.state.pending.binary_search_by(|p| p.as_str().cmp(image_id)).is_err() {
            return Err(Error::NotFound(format!(
                "{image_id} is not in the review queue of iteration {}",
                self.state.iteration
            )));
        }
        match self.current.get(image_id) {
            Some(v) if *v == verdict => return Ok(SubmitOutcome::Duplicate),
            Some(v) => {
                return Err(Error::Conflict(format!(
                    "{image_id} already has verdict {v:?} in iteration {}",
                    self.state.iteration
                )))
            }
            None => {}
        }
        self.log.append(&LogEvent::Decision(ReviewDecision {
            image_id: image_id.to_string(),
            iteration: self.state.iteration,
            verdict,
            reviewer: reviewer.to_string(),
            timestamp: now_seconds(),
        }))?;
        self.current.insert(image_id.to_string(), verdict);
        Ok(SubmitOutcome::Recorded)
    }

    /// Close the review: accepted items join the training set with their
    /// predicted masks, everything else stays active. Undecided items are
    /// an error unless `force`, which leaves them active without a verdict.
    pub fn commit_iteration(&mut self, force: bool) -> Result<IterationRecord> {
        if self.state.phase != Phase::AwaitingReview {
            return Err(Error::State(format!("not awaiting review (phase {:?})", self.state.phase)));
        }
        let remaining = self.queue();
        if !remaining.is_empty() && !force {
            return Err(Error::PendingItems(remaining));
        }
        let k = self.state.iteration;
        let accepted: Vec<String> = self
            .state
            .pending
            .iter()
            .filter(|id| self.current.get(*id) == Some(&Verdict::Accept))
            .cloned()
            .collect();
        for id in &accepted {
            let mask = load_mask(self.prediction_path(id, k))?;
            save_mask(&mask, self.dir.join("train_masks").join(format!("{id}.png")))?;
        }
        for id in &accepted {
            self.state.partition.active.remove(id);
            self.state.partition.train.insert(id.clone());
        }
        let error_pct = self
            .state
            .evaluations
            .iter()
            .find(|e| e.iteration == k)
            .map(|e| e.error_pct)
            .ok_or_else(|| Error::State(format!("iteration {k} has no evaluation")))?;
        let record = IterationRecord {
            iteration: k,
            n_accepted: accepted.len(),
            error_pct,
            train_size: variants_per_pair() * self.state.partition.train.len(),
        };
        self.state.records.push(record.clone());
        self.state.pending.clear();
        self.state.phase = Phase::Idle;
        self.current.clear();
        self.persist()?;
        Ok(record)
    }

    /// Ask `reviewer` about every undecided item of the current review.
    pub fn review_all(&mut self, reviewer: &mut dyn Reviewer) -> Result<()> {
        let k = self.state.iteration;
        for id in self.queue() {
            let it = self.item(&id)?.clone();
            let edf = load_edf(&it)?;
            let annotation = Annotation::load(&it.annotation)?;
            let predicted = load_mask(self.prediction_path(&id, k))?;
            let item = ReviewItem {
                image_id: &id,
                iteration: k,
                edf: &edf,
                predicted: &predicted,
                annotation: &annotation,
            };
            match reviewer.review(&item) {
                Ok(Some(v)) => {
                    let name = reviewer.name().to_string();
                    self.submit(&id, v, &name)?;
                }
                Ok(None) => return Err(Error::ReviewPaused(format!("no verdict for {id}"))),
                Err(e) => return Err(Error::ReviewPaused(format!("reviewer failed on {id}: {e}"))),
            }
        }
        Ok(())
    }

    /// One full iteration, continuing from wherever the run stopped.
    pub fn run_iteration(&mut self, reviewer: &mut dyn Reviewer) -> Result<IterationRecord> {
        if self.state.phase != Phase::AwaitingReview {
            self.prepare_iteration()?;
        }
        self.review_all(reviewer)?;
        self.commit_iteration(false)
    }

    /// Run until `n` iterations have been completed in total (so a resumed
    /// run only does what is left).
    pub fn run_loop(&mut self, reviewer: &mut dyn Reviewer, n: u32) -> Result<Vec<IterationRecord>> {
        if n == 0 {
            return Err(Error::invalid("iteration count must be at least 1"));
        }
        while (self.state.records.len() as u32) < n {
            self.run_iteration(reviewer)?;
        }
        Ok(self.state.records.clone())
    }
}
