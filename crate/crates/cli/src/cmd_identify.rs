//! `evgrad identify`: per-step skill identification only, no anomaly
//! tests. Writes one prediction CSV per trial and a pooled quality report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use evgrad::detect::{run_detector, DetectorConfig};
use evgrad::io::write_json_pretty;
use evgrad::synth::TrialRole;
use serde::Serialize;
use serde_json::json;

use crate::reports::{apply_gates, ident_section, AnalysisReport, IdentSection};
use crate::support::{
    load_models_dir, parse_roles, prepare_out_dir, require, test_trials, trial_stem,
    write_run_meta, CmdResult, Failure,
};
use crate::Common;

#[derive(Args)]
pub struct IdentifyArgs {
    /// Directory holding skill_<id>.model.json files from `train`.
    #[arg(long)]
    models: PathBuf,

    /// Trial roles to include (default: every non-train role).
    #[arg(long, value_delimiter = ',')]
    roles: Vec<String>,
}

#[derive(Serialize)]
struct TrialAccuracy {
    trial: String,
    role: TrialRole,
    accuracy: f64,
}

#[derive(Serialize)]
struct IdentifyReport {
    version: &'static str,
    per_trial: Vec<TrialAccuracy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    identification: Option<IdentSection>,
}

pub fn run(common: &Common, args: &IdentifyArgs) -> CmdResult {
    let manifest_path = require(&common.manifest, "--manifest")?;
    let roles = parse_roles(&args.roles)?;
    let models = load_models_dir(&args.models)?;
    let out = prepare_out_dir(common)?;

    let (manifest, trials) = evgrad::io::load_manifest_trials(&manifest_path)?;
    let selected = test_trials(&trials, &roles);
    if selected.is_empty() {
        return Err(Failure::Invalid("no trials match the requested roles".into()));
    }

    let config = DetectorConfig { detectors: Vec::new(), ..DetectorConfig::default() };
    let empty_grads = BTreeMap::new();
    let empty_mags = BTreeMap::new();
    let pred_dir = out.join("predictions");
    std::fs::create_dir_all(&pred_dir)?;

    let mut per_trial = Vec::with_capacity(selected.len());
    let mut predictions: Vec<(usize, Vec<usize>)> = Vec::with_capacity(selected.len());
    for &(idx, trial, role) in &selected {
        let run = run_detector(&models, &empty_grads, &empty_mags, &trial.obs, &config)?;
        let mut csv = String::from("t,skill\n");
        for (t0, s) in run.predictions.iter().enumerate() {
            writeln!(csv, "{},{s}", t0 + 1).unwrap();
        }
        std::fs::write(pred_dir.join(format!("{}.predictions.csv", trial_stem(idx))), csv)?;

        let correct = run
            .predictions
            .iter()
            .zip(&trial.skill_labels)
            .filter(|(p, t)| p == t)
            .count();
        per_trial.push(TrialAccuracy {
            trial: manifest.trials[idx].path.clone(),
            role,
            accuracy: correct as f64 / trial.skill_labels.len() as f64,
        });
        predictions.push((idx, run.predictions));
    }

    let nominal: Vec<(&evgrad::synth::Trial, &[usize])> = selected
        .iter()
        .zip(&predictions)
        .filter(|(&(_, _, role), _)| role == TrialRole::TestNominal)
        .map(|(&(_, trial, _), (_, pred))| (trial, pred.as_slice()))
        .collect();
    let identification = if nominal.is_empty() { None } else { Some(ident_section(&nominal)?) };

    if let Some(section) = &identification {
        println!(
            "identification over {} nominal trials: accuracy {:.4}, worst diagonal {:.4}",
            section.trials,
            section.accuracy,
            section.diagonal.iter().copied().fold(f64::INFINITY, f64::min)
        );
    }
    for t in &per_trial {
        println!("{}: accuracy {:.4}", t.trial, t.accuracy);
    }

    let report = IdentifyReport { version: "identify-report/1", per_trial, identification };
    write_json_pretty(&report, &out.join("identify-report.json"))?;
    write_run_meta(
        &out,
        "identify",
        json!({
            "manifest": manifest_path.display().to_string(),
            "models": args.models.display().to_string(),
            "roles": args.roles,
        }),
    )?;

    let gates = AnalysisReport {
        version: String::new(),
        group_gap: 0,
        detectors: Vec::new(),
        identification: report.identification,
        anomalous: None,
        nominal_false_events: None,
        recovery: None,
    };
    apply_gates(&gates, common.assert_gates)
}
