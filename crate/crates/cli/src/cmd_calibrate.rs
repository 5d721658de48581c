//! `evgrad calibrate`: derive each skill's gradient envelope and cumulative
//! log-likelihood envelope from the manifest's training trials.

use std::path::PathBuf;

use clap::Args;
use evgrad::detect::{calibrate_gradient, calibrate_magnitude};
use evgrad::io::{load_manifest_trials, save_gradient_calibration, save_magnitude_threshold, write_json_pretty};
use serde::Serialize;
use serde_json::json;

use crate::support::{
    grad_cal_file, load_models_dir, mag_cal_file, prepare_out_dir, require, skill_segments,
    train_trials, write_run_meta, CmdResult, Failure,
};
use crate::Common;

#[derive(Args)]
pub struct CalibrateArgs {
    /// Directory holding skill_<id>.model.json files from `train`.
    #[arg(long)]
    models: PathBuf,

    /// Sigma multiplier for the magnitude envelope.
    #[arg(long, default_value_t = 2.0)]
    k: f64,
}

#[derive(Serialize)]
struct SkillCalibration {
    skill: usize,
    gradient_threshold: f64,
    envelope_len: usize,
    dod_threshold: f64,
}

#[derive(Serialize)]
struct CalibrationReport {
    version: &'static str,
    k: f64,
    skills: Vec<SkillCalibration>,
}

pub fn run(common: &Common, args: &CalibrateArgs) -> CmdResult {
    if !(args.k.is_finite() && args.k >= 0.0) {
        return Err(Failure::Usage("--k must be finite and non-negative".into()));
    }
    let manifest_path = require(&common.manifest, "--manifest")?;
    let models = load_models_dir(&args.models)?;
    let out = prepare_out_dir(common)?;

    let (_, trials) = load_manifest_trials(&manifest_path)?;
    let train = train_trials(&trials);
    if train.is_empty() {
        return Err(Failure::Invalid(format!(
            "manifest {} has no train-role trials",
            manifest_path.display()
        )));
    }

    let mut report = Vec::with_capacity(models.len());
    for (&skill, model) in &models {
        let segments = skill_segments(&train, skill);
        if segments.is_empty() {
            return Err(Failure::Invalid(format!(
                "skill {skill} has a model but no train-role segment to calibrate on"
            )));
        }
        let id = format!("skill_{skill}");
        let grad = calibrate_gradient(model, &segments, &id)?;
        let mag = calibrate_magnitude(model, &segments, args.k, &id)?;
        save_gradient_calibration(&grad, &out.join(grad_cal_file(skill)))?;
        save_magnitude_threshold(&mag, &out.join(mag_cal_file(skill)))?;
        println!(
            "skill {skill}: gradient threshold {:.3}, envelope over {} steps, spike threshold {:.3}",
            grad.threshold(),
            mag.curve_len(),
            mag.dod_threshold
        );
        report.push(SkillCalibration {
            skill,
            gradient_threshold: grad.threshold(),
            envelope_len: mag.curve_len(),
            dod_threshold: mag.dod_threshold,
        });
    }

    write_json_pretty(
        &CalibrationReport { version: "calibration-report/1", k: args.k, skills: report },
        &out.join("calibration-report.json"),
    )?;
    write_run_meta(
        &out,
        "calibrate",
        json!({
            "manifest": manifest_path.display().to_string(),
            "models": args.models.display().to_string(),
            "k": args.k,
        }),
    )?;
    Ok(())
}
