//! `evgrad detect`: the full online pass. Per trial it writes the event
//! timeline and per-model log-likelihood and gradient series; per run it
//! writes a pooled report covering identification quality, detector
//! precision/recall/F on anomalous trials, false events on nominal ones,
//! and post-recovery counts.

use std::path::PathBuf;

use clap::Args;
use evgrad::detect::{run_detector, DetectionRun, Detector, DetectorConfig};
use evgrad::io::{save_timeline, write_json_pretty, write_series_csv};
use evgrad::synth::TrialRole;
use serde_json::json;

use crate::reports::{analysis_report, apply_gates, ScoredTrial};
use crate::support::{
    load_calibrations, load_models_dir, parse_roles, prepare_out_dir, require, test_trials,
    trial_stem, write_run_meta, CmdResult, Failure,
};
use crate::Common;

#[derive(Args)]
pub struct DetectArgs {
    /// Directory holding skill_<id>.model.json files from `train`.
    #[arg(long)]
    models: PathBuf,

    /// Directory holding calibration files from `calibrate`.
    #[arg(long)]
    calibration: PathBuf,

    /// Detectors to run: gradient, magnitude, dod, or all.
    #[arg(long, value_delimiter = ',', default_values_t = vec!["all".to_string()])]
    detector: Vec<String>,

    /// Triggers this close to the previous one fold into the same event.
    #[arg(long, default_value_t = 5)]
    group_gap: usize,

    /// Steps after a hypothesis switch during which anomaly tests pause.
    #[arg(long, default_value_t = 3)]
    suppression: usize,

    /// Trial roles to include (default: every non-train role).
    #[arg(long, value_delimiter = ',')]
    roles: Vec<String>,
}

pub fn parse_detectors(specs: &[String]) -> Result<Vec<Detector>, Failure> {
    let mut detectors = Vec::new();
    for s in specs {
        match s.as_str() {
            "all" => {
                detectors.extend([Detector::Gradient, Detector::Magnitude, Detector::Dod])
            }
            "gradient" => detectors.push(Detector::Gradient),
            "magnitude" => detectors.push(Detector::Magnitude),
            "dod" => detectors.push(Detector::Dod),
            other => {
                return Err(Failure::Usage(format!(
                    "unknown detector {other:?}; expected gradient, magnitude, dod, or all"
                )))
            }
        }
    }
    detectors.sort_unstable();
    detectors.dedup();
    if detectors.is_empty() {
        return Err(Failure::Usage("--detector needs at least one detector".into()));
    }
    Ok(detectors)
}

pub fn run(common: &Common, args: &DetectArgs) -> CmdResult {
    let manifest_path = require(&common.manifest, "--manifest")?;
    let detectors = parse_detectors(&args.detector)?;
    let roles = parse_roles(&args.roles)?;
    let models = load_models_dir(&args.models)?;
    let skills: Vec<usize> = models.keys().copied().collect();
    let need_gradient = detectors.contains(&Detector::Gradient);
    let need_magnitude =
        detectors.iter().any(|d| matches!(d, Detector::Magnitude | Detector::Dod));
    let (grads, mags) =
        load_calibrations(&args.calibration, &skills, need_gradient, need_magnitude)?;
    let out = prepare_out_dir(common)?;

    let (_, trials) = evgrad::io::load_manifest_trials(&manifest_path)?;
    let selected = test_trials(&trials, &roles);
    if selected.is_empty() {
        return Err(Failure::Invalid("no trials match the requested roles".into()));
    }

    let config = DetectorConfig {
        detectors: detectors.clone(),
        suppression_window: args.suppression,
        group_gap: args.group_gap,
    };
    let timelines_dir = out.join("timelines");
    let series_dir = out.join("series");
    std::fs::create_dir_all(&timelines_dir)?;
    std::fs::create_dir_all(&series_dir)?;

    let mut runs: Vec<(usize, TrialRole, DetectionRun)> = Vec::with_capacity(selected.len());
    for &(idx, trial, role) in &selected {
        let run = run_detector(&models, &grads, &mags, &trial.obs, &config)?;
        let stem = trial_stem(idx);
        save_timeline(&run.timeline, &timelines_dir.join(format!("{stem}.events.ndjson")))?;
        for (skill, trace) in &run.traces {
            write_series_csv(
                "loglik",
                &trace.loglik,
                1,
                &series_dir.join(format!("{stem}.skill_{skill}.loglik.csv")),
            )?;
            write_series_csv(
                "gradient",
                &trace.gradient,
                2,
                &series_dir.join(format!("{stem}.skill_{skill}.gradient.csv")),
            )?;
        }
        let anomalies = run.timeline.anomalies().count();
        println!(
            "{}: {} anomaly events, {} identifications",
            stem,
            anomalies,
            run.timeline.identifications().count()
        );
        runs.push((idx, role, run));
    }

    let scored: Vec<ScoredTrial> = selected
        .iter()
        .zip(&runs)
        .map(|(&(_, trial, role), (_, _, run))| ScoredTrial {
            trial,
            role,
            timeline: &run.timeline,
            predictions: &run.predictions,
        })
        .collect();
    let report = analysis_report("detect-report/1", &scored, &detectors, args.group_gap)?;
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
    write_json_pretty(&report, &out.join("detect-report.json"))?;
    write_run_meta(
        &out,
        "detect",
        json!({
            "manifest": manifest_path.display().to_string(),
            "models": args.models.display().to_string(),
            "calibration": args.calibration.display().to_string(),
            "detectors": report.detectors,
            "group_gap": args.group_gap,
            "suppression": args.suppression,
            "roles": args.roles,
        }),
    )?;
    apply_gates(&report, common.assert_gates)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_expands_to_each_detector_once() {
        let parsed =
            parse_detectors(&["all".to_string(), "gradient".to_string()]).unwrap();
        assert_eq!(parsed.len(), 3);
    }

    #[test]
    fn unknown_detector_is_a_usage_error() {
        assert!(matches!(parse_detectors(&["sonar".to_string()]), Err(Failure::Usage(_))));
    }

    #[test]
    fn empty_detector_list_is_a_usage_error() {
        assert!(matches!(parse_detectors(&[]), Err(Failure::Usage(_))));
    }
}
