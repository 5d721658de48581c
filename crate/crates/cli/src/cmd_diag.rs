//! `evgrad diag`: decoder diagnostics for one skill model over its own
//! segment of one trial. Emits the incremental-decode triangle, per-state
//! emission curves, the log-likelihood and gradient series, a
//! sequence-break report, and a summary of the decoded-state gradient
//! approximation.

use std::path::PathBuf;

use clap::Args;
use evgrad::detect::gradient_series;
use evgrad::diagnostics::{
    corollary_residuals, detect_sequence_breaks, emission_curves, incremental_viterbi,
    stable_steps,
};
use evgrad::diagnostics::self_transition_violations;
use evgrad::io::{
    write_emission_curves_csv, write_json_pretty, write_series_csv, write_viterbi_triangle_csv,
};
use evgrad::math::pearson;
use serde::Serialize;
use serde_json::json;

use crate::support::{
    load_models_dir, prepare_out_dir, require, write_run_meta, CmdResult, Failure,
};
use crate::Common;

/// Steps this close to a decoded transition are excluded from the stable
/// residual fraction, and rewrites this close to one count as expected.
const TRANSITION_MARGIN: usize = 2;

#[derive(Args)]
pub struct DiagArgs {
    /// Directory holding skill_<id>.model.json files from `train`.
    #[arg(long)]
    models: PathBuf,

    /// Manifest index of the trial to inspect.
    #[arg(long, default_value_t = 0)]
    trial: usize,

    /// Skill whose model and segment to inspect (default: the trial's
    /// first skill).
    #[arg(long)]
    skill: Option<usize>,
}

#[derive(Serialize)]
struct BreakRecord {
    prefix_len: usize,
    first_diff: usize,
    len: usize,
}

#[derive(Serialize)]
struct BreaksReport {
    version: &'static str,
    breaks: Vec<BreakRecord>,
    max_break_len: usize,
    transitions: Vec<usize>,
    transition_margin: usize,
    all_near_transitions: bool,
    /// States that prefer some other state over themselves; path expansion
    /// is only guaranteed stable when this is empty.
    self_transition_violations: Vec<usize>,
}

#[derive(Serialize)]
struct CorollarySummary {
    version: &'static str,
    steps: usize,
    stable_steps: usize,
    transition_margin: usize,
    fraction_within_1e3: f64,
    stable_fraction_within_1e3: f64,
    median_abs_residual: f64,
    stable_median_abs_residual: f64,
    max_abs_residual: f64,
    /// Pearson correlation between the gradient series and the best
    /// per-step emission log-density.
    gradient_emission_correlation: Option<f64>,
}

pub fn run(common: &Common, args: &DiagArgs) -> CmdResult {
    let manifest_path = require(&common.manifest, "--manifest")?;
    let models = load_models_dir(&args.models)?;
    let out = prepare_out_dir(common)?;

    let (manifest, trials) = evgrad::io::load_manifest_trials(&manifest_path)?;
    let (trial, _) = trials.get(args.trial).ok_or_else(|| {
        Failure::Invalid(format!(
            "manifest {} has {} trials, index {} is out of range",
            manifest_path.display(),
            trials.len(),
            args.trial
        ))
    })?;
    let skill = args.skill.unwrap_or(trial.skill_labels[0]);
    let model = models.get(&skill).ok_or_else(|| {
        Failure::Invalid(format!("no model for skill {skill} under {}", args.models.display()))
    })?;
    let (_, window) = trial
        .skill_blocks()
        .into_iter()
        .find(|(id, _)| *id == skill)
        .ok_or_else(|| {
            Failure::Invalid(format!("trial {} has no skill {skill} block", args.trial))
        })?;
    let segment = trial.obs.slice(window.start - 1, window.end)?;

    let trace = incremental_viterbi(model, &segment)?;
    write_viterbi_triangle_csv(&trace, &out.join("triangle.csv"))?;
    let breaks = detect_sequence_breaks(&trace);
    let violations = self_transition_violations(model);
    write_json_pretty(
        &BreaksReport {
            version: "breaks-report/1",
            breaks: breaks
                .breaks
                .iter()
                .map(|b| BreakRecord {
                    prefix_len: b.prefix_len,
                    first_diff: b.first_diff,
                    len: b.len,
                })
                .collect(),
            max_break_len: breaks.max_break_len,
            transitions: breaks.transitions.clone(),
            transition_margin: TRANSITION_MARGIN,
            all_near_transitions: breaks.breaks_near_transitions(TRANSITION_MARGIN),
            self_transition_violations: violations.clone(),
        },
        &out.join("breaks.json"),
    )?;

    let curves = emission_curves(model, &segment);
    write_emission_curves_csv(&curves, &out.join("emission_curves.csv"))?;
    write_series_csv("loglik", &model.loglik_series(&segment)?, 1, &out.join("loglik.csv"))?;
    let gradients = gradient_series(model, &segment)?;
    write_series_csv("gradient", &gradients, 2, &out.join("gradient.csv"))?;

    let best_emission: Vec<f64> = (1..segment.len())
        .map(|t| curves.iter().map(|c| c[t]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let correlation = pearson(&gradients, &best_emission);

    let corollary = corollary_residuals(model, &segment)?;
    let mask = stable_steps(segment.len(), &breaks.transitions, TRANSITION_MARGIN);
    let stable_within = corollary.fraction_within(1e-3, Some(&mask));
    let summary = CorollarySummary {
        version: "corollary-report/1",
        steps: corollary.residuals.len(),
        stable_steps: mask.iter().filter(|&&m| m).count(),
        transition_margin: TRANSITION_MARGIN,
        fraction_within_1e3: corollary.fraction_within(1e-3, None),
        stable_fraction_within_1e3: stable_within,
        median_abs_residual: corollary.median_abs_residual(None),
        stable_median_abs_residual: corollary.median_abs_residual(Some(&mask)),
        max_abs_residual: corollary
            .residuals
            .iter()
            .fold(0.0f64, |acc, r| acc.max(r.abs())),
        gradient_emission_correlation: correlation,
    };
    write_json_pretty(&summary, &out.join("corollary.json"))?;

    println!(
        "skill {skill} over trial {} steps {}..={}: {} sequence breaks (max rewrite {}, {} decoded transitions), gradient-emission correlation {}, {:.2}% of stable gradients within 1e-3 of the decoded approximation",
        args.trial,
        window.start,
        window.end,
        breaks.breaks.len(),
        breaks.max_break_len,
        breaks.transitions.len(),
        correlation.map_or("n/a".into(), |c| format!("{c:.4}")),
        100.0 * stable_within
    );
    write_run_meta(
        &out,
        "diag",
        json!({
            "manifest": manifest_path.display().to_string(),
            "models": args.models.display().to_string(),
            "trial": args.trial,
            "skill": skill,
            "manifest_name": manifest.name,
        }),
    )?;

    if common.assert_gates {
        let mut fails = Vec::new();
        if !violations.is_empty() {
            fails.push(format!(
                "states {violations:?} prefer another state over themselves; stable path expansion is not guaranteed"
            ));
        }
        match correlation {
            Some(c) if c >= 0.9 => {}
            Some(c) => fails.push(format!(
                "gradient-emission correlation {c:.4} below 0.9; the gradient no longer tracks how well the best state explains each step"
            )),
            None => fails.push(
                "gradient-emission correlation undefined (constant series)".into(),
            ),
        }
        if !fails.is_empty() {
            return Err(Failure::Gate(fails));
        }
    }
    Ok(())
}
