//! Failure plumbing, output-directory discipline, and artifact loading
//! shared by the subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use evgrad::detect::{GradientCalibration, MagnitudeThreshold};
use evgrad::hmm::{HmmModel, ObservationSequence};
use evgrad::io;
use evgrad::synth::{Trial, TrialRole};
use serde::Serialize;

use crate::Common;

/// A command's terminal outcome, mapped to an exit code in `main`.
#[derive(Debug)]
pub enum Failure {
    /// Bad invocation: missing or out-of-range flags (exit 2).
    Usage(String),
    /// Inputs that parse but cannot be worked with (exit 3).
    Invalid(String),
    /// `--assert` thresholds that were missed, one reason each (exit 4).
    Gate(Vec<String>),
}

impl From<evgrad::Error> for Failure {
    fn from(e: evgrad::Error) -> Self {
        Failure::Invalid(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Invalid(e.to_string())
    }
}

pub type CmdResult = Result<(), Failure>;

pub fn require<T: Clone>(opt: &Option<T>, flag: &str) -> Result<T, Failure> {
    opt.clone()
        .ok_or_else(|| Failure::Usage(format!("{flag} is required for this command")))
}

pub fn require_seed(common: &Common) -> Result<u64, Failure> {
    common
        .seed
        .ok_or_else(|| Failure::Usage("--seed is required for this command".into()))
}

/// Claims the output directory. An existing path is refused unless
/// `--force` was given; with it, files are written over in place.
pub fn prepare_out_dir(common: &Common) -> Result<PathBuf, Failure> {
    let out = require(&common.out, "--out")?;
    if out.exists() && !common.force {
        return Err(Failure::Invalid(format!(
            "output directory {} already exists; pass --force to write into it",
            out.display()
        )));
    }
    std::fs::create_dir_all(&out)?;
    Ok(out)
}

#[derive(Serialize)]
struct ArtifactHash {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunMeta {
    version: &'static str,
    command: &'static str,
    config: serde_json::Value,
    artifacts: Vec<ArtifactHash>,
}

fn collect_files(dir: &Path, acc: &mut Vec<PathBuf>) -> Result<(), Failure> {
    let mut entries: Vec<_> =
        std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        if path.is_dir() {
            collect_files(&path, acc)?;
        } else {
            acc.push(path);
        }
    }
    Ok(())
}

/// Hashes everything under `out` and writes `run-meta.json` beside it. The
/// meta file records the command, the resolved configuration, and one
/// sha256 per artifact; it contains no clocks, so identical runs produce
/// identical bytes.
pub fn write_run_meta(
    out: &Path,
    command: &'static str,
    config: serde_json::Value,
) -> CmdResult {
    let mut files = Vec::new();
    collect_files(out, &mut files)?;
    let mut artifacts = Vec::with_capacity(files.len());
    for path in files {
        let rel = path
            .strip_prefix(out)
            .expect("artifact under run directory")
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        if rel == "run-meta.json" {
            continue;
        }
        artifacts.push(ArtifactHash { path: rel, sha256: io::sha256_file(&path)? });
    }
    artifacts.sort_by(|a, b| a.path.cmp(&b.path));
    io::write_json_pretty(
        &RunMeta { version: "run-meta/1", command, config, artifacts },
        &out.join("run-meta.json"),
    )?;
    Ok(())
}

pub fn trial_stem(idx: usize) -> String {
    format!("trial_{idx:02}")
}

pub fn model_file(skill: usize) -> String {
    format!("skill_{skill}.model.json")
}

pub fn grad_cal_file(skill: usize) -> String {
    format!("skill_{skill}.grad.json")
}

pub fn mag_cal_file(skill: usize) -> String {
    format!("skill_{skill}.mag.json")
}

/// Every `skill_<id>.model.json` under `dir`, keyed by id.
pub fn load_models_dir(dir: &Path) -> Result<BTreeMap<usize, HmmModel>, Failure> {
    let mut models = BTreeMap::new();
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| {
            Failure::Invalid(format!(
                "cannot read models directory {}: {e}; run `evgrad train` first",
                dir.display()
            ))
        })?
        .collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name
            .strip_prefix("skill_")
            .and_then(|s| s.strip_suffix(".model.json"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            models.insert(id, io::load_model(&entry.path())?);
        }
    }
    if models.is_empty() {
        return Err(Failure::Invalid(format!(
            "no skill_<id>.model.json files under {}; run `evgrad train` first",
            dir.display()
        )));
    }
    Ok(models)
}

/// Calibration files for the given skills. Only the families that enabled
/// detectors actually need are required; a missing file names itself and
/// points at the `calibrate` command.
pub fn load_calibrations(
    dir: &Path,
    skills: &[usize],
    need_gradient: bool,
    need_magnitude: bool,
) -> Result<(BTreeMap<usize, GradientCalibration>, BTreeMap<usize, MagnitudeThreshold>), Failure> {
    let mut grads = BTreeMap::new();
    let mut mags = BTreeMap::new();
    for &skill in skills {
        if need_gradient {
            let path = dir.join(grad_cal_file(skill));
            if !path.exists() {
                return Err(Failure::Invalid(format!(
                    "missing calibration file {}; run `evgrad calibrate` over the training manifest first",
                    path.display()
                )));
            }
            grads.insert(skill, io::load_gradient_calibration(&path)?);
        }
        if need_magnitude {
            let path = dir.join(mag_cal_file(skill));
            if !path.exists() {
                return Err(Failure::Invalid(format!(
                    "missing calibration file {}; run `evgrad calibrate` over the training manifest first",
                    path.display()
                )));
            }
            mags.insert(skill, io::load_magnitude_threshold(&path)?);
        }
    }
    Ok((grads, mags))
}

/// Sorted unique skill ids across a set of trials.
pub fn skill_universe(trials: &[(Trial, TrialRole)]) -> Vec<usize> {
    let mut ids: Vec<usize> =
        trials.iter().flat_map(|(t, _)| t.skill_labels.iter().copied()).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// The contiguous segment of `skill` in each trial that has one.
pub fn skill_segments(trials: &[&Trial], skill: usize) -> Vec<ObservationSequence> {
    trials
        .iter()
        .filter_map(|t| {
            t.skill_blocks()
                .into_iter()
                .find(|(id, _)| *id == skill)
                .map(|(_, w)| t.obs.slice(w.start - 1, w.end).expect("block within trial"))
        })
        .collect()
}

pub fn train_trials(trials: &[(Trial, TrialRole)]) -> Vec<&Trial> {
    trials
        .iter()
        .filter(|(_, r)| *r == TrialRole::Train)
        .map(|(t, _)| t)
        .collect()
}

/// Non-training trials with their manifest indices, optionally restricted
/// to explicit roles.
pub fn test_trials<'a>(
    trials: &'a [(Trial, TrialRole)],
    roles: &Option<Vec<TrialRole>>,
) -> Vec<(usize, &'a Trial, TrialRole)> {
    trials
        .iter()
        .enumerate()
        .filter(|(_, (_, r))| match roles {
            Some(wanted) => wanted.contains(r),
            None => *r != TrialRole::Train,
        })
        .map(|(i, (t, r))| (i, t, *r))
        .collect()
}

pub fn parse_roles(specs: &[String]) -> Result<Option<Vec<TrialRole>>, Failure> {
    if specs.is_empty() {
        return Ok(None);
    }
    let mut roles = Vec::with_capacity(specs.len());
    for s in specs {
        roles.push(
            s.parse::<TrialRole>()
                .map_err(|e| Failure::Usage(e.to_string()))?,
        );
    }
    Ok(Some(roles))
}
