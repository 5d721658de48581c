//! `evgrad synth`: materialize a benchmark scenario as trial files plus a
//! manifest.

use clap::Args;
use evgrad::io::{save_manifest, save_trial, DatasetManifest, ManifestEntry};
use evgrad::synth::{scenario_trials, Scenario};
use serde_json::json;

use crate::support::{prepare_out_dir, require_seed, trial_stem, write_run_meta, CmdResult, Failure};
use crate::Common;

#[derive(Args)]
pub struct SynthArgs {
    /// Scenario name: nominal-5x5, anomaly-suite-14, or recovery.
    #[arg(long)]
    scenario: String,
}

pub fn run(common: &Common, args: &SynthArgs) -> CmdResult {
    let scenario: Scenario =
        args.scenario.parse().map_err(|e: evgrad::Error| Failure::Usage(e.to_string()))?;
    let seed = require_seed(common)?;
    let out = prepare_out_dir(common)?;

    let (spec, trials) = scenario_trials(scenario, seed)?;
    let trials_dir = out.join("trials");
    std::fs::create_dir_all(&trials_dir)?;

    let mut entries = Vec::with_capacity(trials.len());
    let mut anomaly_windows = 0usize;
    for (idx, (trial, role)) in trials.iter().enumerate() {
        let rel = format!("trials/{}.csv", trial_stem(idx));
        save_trial(trial, &out.join(&rel))?;
        anomaly_windows += trial.anomalies.len();
        entries.push(ManifestEntry { path: rel, role: *role });
    }
    let manifest = DatasetManifest {
        name: scenario.name().to_string(),
        spec_hash: spec.spec_hash(),
        trials: entries,
    };
    save_manifest(&manifest, &out.join("manifest.json"))?;

    write_run_meta(
        &out,
        "synth",
        json!({ "scenario": scenario.name(), "seed": seed }),
    )?;
    println!(
        "wrote {} trials ({} anomaly windows) for scenario {} under {}",
        trials.len(),
        anomaly_windows,
        scenario.name(),
        out.display()
    );
    Ok(())
}
