//! `evgrad train`: fit one model per skill from the manifest's training
//! trials, choosing each state count by held-out sweep when several
//! candidates are offered.

use clap::Args;
use evgrad::hmm::{select_num_states, train_baum_welch, CovarianceKind, TrainConfig};
use evgrad::io::{load_manifest_trials, save_model, write_json_pretty};
use serde::Serialize;
use serde_json::json;

use crate::support::{
    model_file, prepare_out_dir, require, require_seed, skill_segments, skill_universe,
    train_trials, write_run_meta, CmdResult, Failure,
};
use crate::Common;

#[derive(Args)]
pub struct TrainArgs {
    /// Candidate state counts per skill; one candidate skips the sweep.
    #[arg(long, value_delimiter = ',', default_values_t = vec![2usize, 3, 4])]
    states: Vec<usize>,

    /// Emission covariance structure: diag or full.
    #[arg(long, default_value = "diag")]
    cov: String,

    /// Cap on EM sweeps per fit.
    #[arg(long, default_value_t = 200)]
    max_iters: usize,

    /// Stop once a sweep improves the log-likelihood by less than this.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

#[derive(Serialize)]
struct SweepPoint {
    states: usize,
    held_out_per_step: f64,
}

#[derive(Serialize)]
struct SkillFit {
    skill: usize,
    chosen_states: usize,
    sweep: Vec<SweepPoint>,
    final_loglik: f64,
    iterations: usize,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct TrainReport {
    version: &'static str,
    seed: u64,
    covariance: String,
    candidates: Vec<usize>,
    skills: Vec<SkillFit>,
}

fn parse_cov(s: &str) -> Result<CovarianceKind, Failure> {
    match s {
        "diag" => Ok(CovarianceKind::Diag),
        "full" => Ok(CovarianceKind::Full),
        other => Err(Failure::Usage(format!(
            "unknown covariance kind {other:?}; expected diag or full"
        ))),
    }
}

pub fn run(common: &Common, args: &TrainArgs) -> CmdResult {
    let seed = require_seed(common)?;
    let manifest_path = require(&common.manifest, "--manifest")?;
    if args.states.is_empty() {
        return Err(Failure::Usage("--states needs at least one candidate".into()));
    }
    if args.states.iter().any(|&n| n == 0 || n > 16) {
        return Err(Failure::Usage("--states candidates must be between 1 and 16".into()));
    }
    if !(args.tol.is_finite() && args.tol > 0.0) {
        return Err(Failure::Usage("--tol must be positive".into()));
    }
    if args.max_iters == 0 {
        return Err(Failure::Usage("--max-iters must be positive".into()));
    }
    let cov = parse_cov(&args.cov)?;
    let out = prepare_out_dir(common)?;

    let (_, trials) = load_manifest_trials(&manifest_path)?;
    let train = train_trials(&trials);
    if train.is_empty() {
        return Err(Failure::Invalid(format!(
            "manifest {} has no train-role trials",
            manifest_path.display()
        )));
    }
    let skills = skill_universe(&trials);

    let cfg = TrainConfig {
        max_iters: args.max_iters,
        tol: args.tol,
        cov,
        seed,
        ..TrainConfig::default()
    };
    let mut fits = Vec::with_capacity(skills.len());
    for &skill in &skills {
        let segments = skill_segments(&train, skill);
        if segments.is_empty() {
            return Err(Failure::Invalid(format!(
                "skill {skill} appears in the manifest but in no train-role trial"
            )));
        }
        let selection = select_num_states(&segments, &args.states, &cfg)?;
        let fitted = train_baum_welch(&segments, selection.chosen, &cfg)?;
        save_model(&fitted.model, &out.join(model_file(skill)))?;

        let final_loglik = *fitted.loglik_history.last().expect("at least one sweep");
        let sweep_text = selection
            .scores
            .iter()
            .map(|(n, s)| format!("{n}:{s:.3}"))
            .collect::<Vec<_>>()
            .join(" ");
        if sweep_text.is_empty() {
            println!(
                "skill {skill}: {} states, final loglik {final_loglik:.3}, {} sweeps",
                selection.chosen,
                fitted.loglik_history.len()
            );
        } else {
            println!(
                "skill {skill}: {} states (held-out per-step {sweep_text}), final loglik {final_loglik:.3}, {} sweeps",
                selection.chosen,
                fitted.loglik_history.len()
            );
        }
        for w in &fitted.warnings {
            println!("skill {skill}: note: {w}");
        }
        fits.push(SkillFit {
            skill,
            chosen_states: selection.chosen,
            sweep: selection
                .scores
                .iter()
                .map(|&(states, held_out_per_step)| SweepPoint { states, held_out_per_step })
                .collect(),
            final_loglik,
            iterations: fitted.loglik_history.len(),
            warnings: fitted.warnings,
        });
    }

    write_json_pretty(
        &TrainReport {
            version: "train-report/1",
            seed,
            covariance: args.cov.clone(),
            candidates: args.states.clone(),
            skills: fits,
        },
        &out.join("train-report.json"),
    )?;
    write_run_meta(
        &out,
        "train",
        json!({
            "manifest": manifest_path.display().to_string(),
            "seed": seed,
            "states": args.states,
            "cov": args.cov,
            "max_iters": args.max_iters,
            "tol": args.tol,
        }),
    )?;
    Ok(())
}
