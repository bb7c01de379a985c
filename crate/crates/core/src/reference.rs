//! Reference corpus bookkeeping: the published per-iteration results and
//! per-section counts, and a generated decision log that reproduces them
//! through [`replay`](crate::review_loop::replay).
//!
//! The bundled files under `data/reference/` are the output of
//! [`reference_log`] and [`reference_records`]; a test keeps them in sync.

use crate::disector::SectionCount;
use crate::review_loop::{
    render_log, records_csv, EvaluationEvent, InitEvent, ItemRef, IterationRecord, LogEvent, ReviewDecision, Verdict,
    LOG_SCHEMA_VERSION,
};
use crate::synth::{image_id, reference_mice};

pub const REFERENCE_LOG: &str = include_str!("../data/reference/decisions.jsonl");
pub const REFERENCE_RECORDS: &str = include_str!("../data/reference/records.csv");

pub const TEST_MOUSE: &str = "17";
pub const INITIAL_TRAIN: usize = 147;
pub const INITIAL_ACTIVE: usize = 728;
pub const TEST_SIZE: usize = 91;

/// (accepted images, test error %) per iteration.
pub const ITERATIONS: [(usize, f64); 5] = [(379, 3.16), (81, 0.82), (51, 1.92), (18, 0.41), (15, 0.55)];

/// Per-section counts of the test mouse: manual, network, classical.
pub const SECTION_COUNTS: [(u64, u64, u64); 8] = [
    (74, 82, 65),
    (142, 137, 121),
    (177, 160, 157),
    (49, 48, 50),
    (58, 59, 54),
    (70, 64, 57),
    (83, 92, 77),
    (74, 81, 66),
];

/// The iteration whose per-section counts are published.
pub const SECTION_ITERATION: u32 = 5;

fn sections(pick: impl Fn(&(u64, u64, u64)) -> u64) -> Vec<SectionCount> {
    SECTION_COUNTS
        .iter()
        .enumerate()
        .map(|(i, c)| SectionCount {
            section: (i + 1).to_string(),
            manual: c.0,
            predicted: pick(c),
        })
        .collect()
}

/// Manual vs network counts per test section.
pub fn network_sections() -> Vec<SectionCount> {
    sections(|c| c.1)
}

/// Manual vs classical-pipeline counts per test section.
pub fn classical_sections() -> Vec<SectionCount> {
    sections(|c| c.2)
}

/// Every item of the reference corpus, in manifest order.
pub fn reference_items() -> Vec<ItemRef> {
    let mut items = Vec::new();
    for m in reference_mice() {
        for k in 0..m.stacks {
            let section = k % m.sections + 1;
            items.push(ItemRef {
                image_id: image_id(&m.mouse_id, section, k),
                mouse_id: m.mouse_id.clone(),
                section: section as u32,
            });
        }
    }
    items
}

/// `k` of `n` positions spread evenly (position `i` is picked when
/// `floor((i + 1) k / n)` steps up).
fn spread(n: usize, k: usize) -> Vec<bool> {
    (0..n).map(|i| (i + 1) * k / n > i * k / n).collect()
}

/// Decision log reproducing the published run: a bootstrap review that
/// accepts 147 of the 875 non-test images, then five batch reviews of the
/// whole active set with the published accept counts and test errors.
pub fn reference_log() -> Vec<LogEvent> {
    let items = reference_items();
    let mut events = vec![LogEvent::Init(InitEvent {
        schema_version: LOG_SCHEMA_VERSION,
        run_id: "reference".into(),
        test_mouse: TEST_MOUSE.into(),
        items: items.clone(),
    })];
    let decision = |id: &str, iteration: u32, verdict: Verdict| {
        LogEvent::Decision(ReviewDecision {
            image_id: id.to_string(),
            iteration,
            verdict,
            reviewer: if iteration == 0 { "bootstrap" } else { "reference" }.into(),
            timestamp: 0,
        })
    };
    let pool: Vec<&str> = items
        .iter()
        .filter(|i| i.mouse_id != TEST_MOUSE)
        .map(|i| i.image_id.as_str())
        .collect();
    let mut active = Vec::new();
    for (id, take) in pool.iter().zip(spread(pool.len(), INITIAL_TRAIN)) {
        events.push(decision(id, 0, if take { Verdict::Accept } else { Verdict::Reject }));
        if !take {
            active.push(*id);
        }
    }
    for (k, &(accepted, error_pct)) in ITERATIONS.iter().enumerate() {
        let iteration = k as u32 + 1;
        events.push(LogEvent::Evaluation(EvaluationEvent {
            iteration,
            error_pct,
            sections: if iteration == SECTION_ITERATION { network_sections() } else { Vec::new() },
        }));
        let mut still = Vec::new();
        for (id, take) in active.iter().zip(spread(active.len(), accepted)) {
            events.push(decision(id, iteration, if take { Verdict::Accept } else { Verdict::Reject }));
            if !take {
                still.push(*id);
            }
        }
        active = still;
    }
    events
}

/// Expected records of the reference run, training sizes included.
pub fn reference_records() -> Vec<IterationRecord> {
    let mut train = INITIAL_TRAIN;
    ITERATIONS
        .iter()
        .enumerate()
        .map(|(k, &(n_accepted, error_pct))| {
            train += n_accepted;
            IterationRecord {
                iteration: k as u32 + 1,
                n_accepted,
                error_pct,
                train_size: crate::augment::variants_per_pair() * train,
            }
        })
        .collect()
}

/// Regenerated text of the bundled files: (decision log, records CSV).
pub fn render_reference() -> (String, String) {
    (render_log(&reference_log()), records_csv(&reference_records()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::review_loop::{parse_log, replay};

    #[test]
    fn bundled_files_match_generator() {
        let (log, records) = render_reference();
        assert!(log == REFERENCE_LOG, "data/reference/decisions.jsonl is stale");
        assert_eq!(records, REFERENCE_RECORDS);
    }

    #[test]
    fn corpus_shape() {
        let items = reference_items();
        assert_eq!(items.len(), 966);
        assert_eq!(items.iter().filter(|i| i.mouse_id == TEST_MOUSE).count(), TEST_SIZE);
        assert_eq!(spread(10, 3).iter().filter(|&&b| b).count(), 3);
        assert_eq!(spread(5, 0), vec![false; 5]);
    }

    #[test]
    fn bundled_log_replays() {
        let out = replay(&parse_log(REFERENCE_LOG).unwrap()).unwrap();
        assert_eq!(out.initial, (INITIAL_TRAIN, INITIAL_ACTIVE, TEST_SIZE));
        let got: Vec<(usize, String)> = out.records.iter().map(|r| (r.n_accepted, format!("{:.2}", r.error_pct))).collect();
        let want: Vec<(usize, String)> = ITERATIONS.iter().map(|&(n, e)| (n, format!("{e:.2}"))).collect();
        assert_eq!(got, want);
    }
}
