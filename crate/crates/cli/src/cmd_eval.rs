//! `evgrad eval`: recompute every metric from stored timelines plus the
//! manifest's ground truth. Pure function of its inputs, so re-running it
//! over the same files reproduces the report byte for byte.

use std::path::PathBuf;

use clap::Args;
use evgrad::detect::{EventKind, EventTimeline};
use evgrad::io::{load_timeline, write_json_pretty};
use evgrad::synth::{Trial, TrialRole};
use serde_json::json;

use crate::cmd_detect::parse_detectors;
use crate::reports::{analysis_report, apply_gates, ScoredTrial};
use crate::support::{
    parse_roles, prepare_out_dir, require, test_trials, trial_stem, write_run_meta, CmdResult,
    Failure,
};
use crate::Common;

#[derive(Args)]
pub struct EvalArgs {
    /// Detection run directory (or its timelines/ subdirectory).
    #[arg(long)]
    timelines: PathBuf,

    /// Detectors to score: gradient, magnitude, dod, or all.
    #[arg(long, value_delimiter = ',', default_values_t = vec!["all".to_string()])]
    detector: Vec<String>,

    /// Grouping gap used when pooling trigger events.
    #[arg(long, default_value_t = 5)]
    group_gap: usize,

    /// Trial roles to include (default: every non-train role).
    #[arg(long, value_delimiter = ',')]
    roles: Vec<String>,
}

/// Per-step hypothesis implied by a timeline's identification events.
fn predictions_from_timeline(
    timeline: &EventTimeline,
    len: usize,
    source: &str,
) -> Result<Vec<usize>, Failure> {
    for e in &timeline.events {
        if e.t < 1 || e.t > len {
            return Err(Failure::Invalid(format!(
                "{source}: event at step {} does not fit the trial's {len} steps",
                e.t
            )));
        }
    }
    let mut idents = timeline
        .events
        .iter()
        .filter(|e| e.kind == EventKind::Identification)
        .peekable();
    match idents.peek() {
        Some(first) if first.t == 1 => {}
        _ => {
            return Err(Failure::Invalid(format!(
                "{source}: timeline has no identification at step 1"
            )))
        }
    }
    let mut pred = Vec::with_capacity(len);
    let mut current = 0usize;
    let mut next = idents.next();
    for t in 1..=len {
        while let Some(e) = next {
            if e.t > t {
                break;
            }
            current = e.skill;
            next = idents.next();
        }
        pred.push(current);
    }
    Ok(pred)
}

pub fn run(common: &Common, args: &EvalArgs) -> CmdResult {
    let manifest_path = require(&common.manifest, "--manifest")?;
    let detectors = parse_detectors(&args.detector)?;
    let roles = parse_roles(&args.roles)?;
    let timelines_dir = if args.timelines.join("timelines").is_dir() {
        args.timelines.join("timelines")
    } else {
        args.timelines.clone()
    };
    let out = prepare_out_dir(common)?;

    let (_, trials) = evgrad::io::load_manifest_trials(&manifest_path)?;
    let selected = test_trials(&trials, &roles);
    if selected.is_empty() {
        return Err(Failure::Invalid("no trials match the requested roles".into()));
    }

    let mut loaded: Vec<(usize, TrialRole, EventTimeline, Vec<usize>)> =
        Vec::with_capacity(selected.len());
    for &(idx, trial, role) in &selected {
        let path = timelines_dir.join(format!("{}.events.ndjson", trial_stem(idx)));
        if !path.exists() {
            return Err(Failure::Invalid(format!(
                "missing timeline {} for manifest trial {idx}",
                path.display()
            )));
        }
        let timeline = load_timeline(&path)?;
        let pred = predictions_from_timeline(
            &timeline,
            trial.skill_labels.len(),
            &path.display().to_string(),
        )?;
        loaded.push((idx, role, timeline, pred));
    }

    let trial_by_idx = |idx: usize| -> &Trial { &trials[idx].0 };
    let scored: Vec<ScoredTrial> = loaded
        .iter()
        .map(|(idx, role, timeline, pred)| ScoredTrial {
            trial: trial_by_idx(*idx),
            role: *role,
            timeline,
            predictions: pred,
        })
        .collect();
    let report = analysis_report("eval-report/1", &scored, &detectors, args.group_gap)?;
    if let Some(ident) = &report.identification {
        println!(
            "identification over {} nominal trials: accuracy {:.4}",
            ident.trials, ident.accuracy
        );
    }
    if let Some(suite) = &report.anomalous {
        for (name, s) in suite {
            println!(
                "{name}: tp {} fp {} fn {} precision {:.4} recall {:.4} F {:.4}",
                s.true_pos, s.false_pos, s.false_neg, s.precision, s.recall, s.f_score
            );
        }
    }
    if let Some(recovery) = &report.recovery {
        for (name, count) in recovery {
            println!("{name}: {count} grouped events after recovery");
        }
    }
    write_json_pretty(&report, &out.join("eval-report.json"))?;
    write_run_meta(
        &out,
        "eval",
        json!({
            "manifest": manifest_path.display().to_string(),
            "timelines": args.timelines.display().to_string(),
            "detectors": report.detectors,
            "group_gap": args.group_gap,
            "roles": args.roles,
        }),
    )?;
    apply_gates(&report, common.assert_gates)
}
