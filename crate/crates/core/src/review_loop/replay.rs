//! Bookkeeping replay: rebuild the partition and iteration records from a
//! run log alone, without images or a model.

use std::collections::{BTreeMap, BTreeSet};

use super::log::{EvaluationEvent, LogEvent};
use super::manifest::{Partition, Verdict};
use super::records::IterationRecord;
use crate::augment::variants_per_pair;
use crate::disector::aggregate_error_rate;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub run_id: String,
    /// Item count from the init event.
    pub total: usize,
    /// (train, active, test) after the bootstrap review.
    pub initial: (usize, usize, usize),
    pub partition: Partition,
    pub records: Vec<IterationRecord>,
}

fn bad(msg: String) -> Error {
    Error::Corrupt {
        path: "decision log".into(),
        reason: msg,
    }
}

/// Error rate of an evaluation: recomputed from its per-section counts when
/// present (and checked against the stated value at two decimals),
/// otherwise the stated value.
pub fn evaluation_error(ev: &EvaluationEvent) -> Result<f64> {
    if ev.sections.is_empty() {
        return Ok(ev.error_pct);
    }
    let pairs: Vec<(u64, u64)> = ev.sections.iter().map(|s| (s.manual, s.predicted)).collect();
    let computed = aggregate_error_rate(&pairs)?;
    if format!("{computed:.2}") != format!("{:.2}", ev.error_pct) {
        return Err(bad(format!(
            "iteration {}: stated error {}% disagrees with section counts ({computed:.4}%)",
            ev.iteration, ev.error_pct
        )));
    }
    Ok(computed)
}

pub fn replay(events: &[LogEvent]) -> Result<ReplayOutcome> {
    let init = match events.first() {
        Some(LogEvent::Init(i)) => i,
        _ => return Err(bad("log does not start with an init event".into())),
    };
    let all: BTreeSet<String> = init.items.iter().map(|i| i.image_id.clone()).collect();
    if all.len() != init.items.len() {
        return Err(bad("duplicate image ids in init event".into()));
    }
    let test: BTreeSet<String> = init
        .items
        .iter()
        .filter(|i| i.mouse_id == init.test_mouse)
        .map(|i| i.image_id.clone())
        .collect();
    if test.is_empty() {
        return Err(bad(format!("test mouse {} has no items", init.test_mouse)));
    }

    let mut decisions: BTreeMap<u32, BTreeMap<String, Verdict>> = BTreeMap::new();
    let mut evals: BTreeMap<u32, &EvaluationEvent> = BTreeMap::new();
    for ev in &events[1..] {
        match ev {
            LogEvent::Init(_) => return Err(bad("second init event".into())),
            LogEvent::Decision(d) => {
                if !all.contains(&d.image_id) {
                    return Err(bad(format!("decision for unknown image {}", d.image_id)));
                }
                let it = decisions.entry(d.iteration).or_default();
                if it.insert(d.image_id.clone(), d.verdict).is_some() {
                    return Err(bad(format!(
                        "two verdicts for {} in iteration {}",
                        d.image_id, d.iteration
                    )));
                }
            }
            LogEvent::Evaluation(e) => {
                if e.iteration == 0 || evals.insert(e.iteration, e).is_some() {
                    return Err(bad(format!("bad or repeated evaluation for iteration {}", e.iteration)));
                }
            }
        }
    }

    let boot = decisions.remove(&0).unwrap_or_default();
    let mut p = Partition {
        test: test.clone(),
        ..Partition::default()
    };
    for id in all.difference(&test) {
        match boot.get(id) {
            Some(Verdict::Accept) => p.train.insert(id.clone()),
            Some(Verdict::Reject) => p.active.insert(id.clone()),
            None => return Err(bad(format!("no bootstrap verdict for {id}"))),
        };
    }
    p.check(&all, &test)?;
    let initial = p.sizes();

    let last = decisions.keys().chain(evals.keys()).copied().max().unwrap_or(0);
    let mut records = Vec::new();
    for k in 1..=last {
        let ev = evals
            .get(&k)
            .ok_or_else(|| bad(format!("iteration {k} has no evaluation")))?;
        let error_pct = evaluation_error(ev)?;
        let mut n_accepted = 0;
        for (id, v) in decisions.remove(&k).unwrap_or_default() {
            if !p.active.contains(&id) {
                return Err(bad(format!("iteration {k}: {id} is not in the active set")));
            }
            if v == Verdict::Accept {
                p.active.remove(&id);
                p.train.insert(id);
                n_accepted += 1;
            }
        }
        p.check(&all, &test)?;
        records.push(IterationRecord {
            iteration: k,
            n_accepted,
            error_pct,
            train_size: variants_per_pair() * p.train.len(),
        });
    }
    Ok(ReplayOutcome {
        run_id: init.run_id.clone(),
        total: all.len(),
        initial,
        partition: p,
        records,
    })
}
