//! Iterative human-in-the-loop protocol: partition the data, train,
//! predict the active set, collect accept/reject verdicts, grow the
//! training set with accepted predictions and score the held-out test
//! mouse every iteration.

pub mod engine;
pub mod evaluate;
pub mod log;
pub mod manifest;
pub mod records;
pub mod replay;

pub use engine::{
    load_edf, Engine, IterationJob, IterationOutput, LogReviewer, LoopConfig, Phase, ReviewItem,
    Reviewer, RunState, SubmitOutcome,
};
pub use evaluate::{count_prediction, evaluate_test, id_seed, predict_in_frame, AugmentedPairs, EvalParams, TestItem};
pub use log::{parse_log, render_log, LOG_SCHEMA_VERSION, DecisionLog, EvaluationEvent, InitEvent, ItemRef, LogEvent, ReviewDecision};
pub use manifest::{DatasetManifest, ManifestItem, MouseSummary, Partition, Verdict};
pub use records::{compare_records, parse_records_csv, records_csv, IterationRecord};
pub use replay::{replay, ReplayOutcome};
