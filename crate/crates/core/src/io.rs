//! Versioned on-disk artifacts: trials, models, calibrations, manifests,
//! event timelines, and plot-ready diagnostic series.
//!
//! Everything is text (CSV for per-timestep data, JSON for structured
//! records) so fixtures stay diffable. Observations are written with 17
//! significant digits, enough to reproduce every f64 bit-exactly on
//! reload. Each JSON artifact carries a `version` tag; loading a tag this
//! build does not know is an error, and every load re-checks the type's
//! invariants before handing the value out.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detect::{Event, EventTimeline, GradientCalibration, MagnitudeThreshold};
use crate::diagnostics::IncrementalViterbiTrace;
use crate::error::{Error, Result};
use crate::gaussian::{Covariance, Gaussian};
use crate::hmm::{HmmModel, ObservationSequence};
use crate::synth::{AnomalyKind, AnomalyWindow, StepWindow, Trial, TrialRole};

pub const TRIAL_VERSION: &str = "trial/1";
pub const MODEL_VERSION: &str = "hmm-model/1";
pub const GRAD_CAL_VERSION: &str = "grad-cal/1";
pub const MAG_CAL_VERSION: &str = "mag-cal/1";
pub const MANIFEST_VERSION: &str = "manifest/1";

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::file(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::file(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), line, message: message.into() }
}

fn validation_err(path: &Path, message: impl Into<String>) -> Error {
    Error::FileValidation { path: path.display().to_string(), message: message.into() }
}

fn check_version(found: &str, expected: &'static str) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(Error::UnsupportedVersion { found: found.to_string(), expected })
    }
}

/// Serializes any report-shaped value as pretty JSON with a trailing
/// newline.
pub fn write_json_pretty<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(Error::from)
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

// ---------------------------------------------------------------------------
// Trials: CSV of timesteps plus a JSON sidecar for everything per-trial.

#[derive(Serialize, Deserialize)]
struct TrialMeta {
    version: String,
    dim: usize,
    dt: f64,
    spec_hash: String,
    anomalies: Vec<AnomalyWindow>,
    recovery_windows: Vec<StepWindow>,
}

/// Sidecar path for a trial CSV: the extension becomes `meta.json`.
pub fn trial_meta_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

/// Kind shown in the CSV annotation column: the latest-onset window
/// covering `t`. The sidecar stays authoritative when kinds overlap.
fn anomaly_cell(anomalies: &[AnomalyWindow], t: usize) -> Option<AnomalyKind> {
    anomalies
        .iter()
        .filter(|a| a.window.contains(t))
        .max_by_key(|a| a.window.start)
        .map(|a| a.kind)
}

/// Writes `path` (CSV, one row per timestep) and its `.meta.json` sidecar.
pub fn save_trial(trial: &Trial, path: &Path) -> Result<()> {
    let dim = trial.obs.dim();
    let mut text = String::from("t");
    for c in 0..dim {
        write!(text, ",y{c}").unwrap();
    }
    text.push_str(",skill,anomaly,recovery\n");
    for (t, row) in trial.obs.rows().enumerate() {
        let step = t + 1;
        write!(text, "{step}").unwrap();
        for &v in row {
            write!(text, ",{v:.16e}").unwrap();
        }
        let anomaly = anomaly_cell(&trial.anomalies, step)
            .map(|k| k.as_str())
            .unwrap_or("");
        let recovery =
            usize::from(trial.recovery_windows.iter().any(|w| w.contains(step)));
        write!(text, ",{},{anomaly},{recovery}\n", trial.skill_labels[t]).unwrap();
    }
    write_text(path, &text)?;
    let meta = TrialMeta {
        version: TRIAL_VERSION.to_string(),
        dim,
        dt: trial.obs.dt(),
        spec_hash: trial.spec_hash.clone(),
        anomalies: trial.anomalies.clone(),
        recovery_windows: trial.recovery_windows.clone(),
    };
    write_json_pretty(&meta, &trial_meta_path(path))
}

/// Reads a trial CSV and its sidecar back into a validated [`Trial`].
///
/// Errors carry the offending 1-based line: wrong column count against the
/// sidecar's dimension, non-numeric or non-finite values, out-of-order
/// timesteps, or annotation cells disagreeing with the sidecar windows.
pub fn load_trial(path: &Path) -> Result<Trial> {
    let meta: TrialMeta = read_json(&trial_meta_path(path))?;
    check_version(&meta.version, TRIAL_VERSION)?;
    if meta.dim == 0 {
        return Err(validation_err(path, "sidecar declares zero observation dimensions"));
    }

    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file, expected a header"))?;
    let mut expected = String::from("t");
    for c in 0..meta.dim {
        write!(expected, ",y{c}").unwrap();
    }
    expected.push_str(",skill,anomaly,recovery");
    if header != expected {
        return Err(parse_err(
            path,
            1,
            format!("header {header:?} does not match {expected:?} for {} dims", meta.dim),
        ));
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != meta.dim + 4 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected {} fields, found {}", meta.dim + 4, fields.len()),
            ));
        }
        let step: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad timestep {:?}", fields[0])))?;
        if step != rows.len() + 1 {
            return Err(parse_err(
                path,
                lineno,
                format!("timestep {step} out of order, expected {}", rows.len() + 1),
            ));
        }
        let mut row = Vec::with_capacity(meta.dim);
        for (c, cell) in fields[1..=meta.dim].iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                parse_err(path, lineno, format!("column y{c}: bad number {cell:?}"))
            })?;
            if !v.is_finite() {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("column y{c}: non-finite value {cell:?}"),
                ));
            }
            row.push(v);
        }
        rows.push(row);
        let skill: usize = fields[meta.dim + 1].parse().map_err(|_| {
            parse_err(path, lineno, format!("bad skill label {:?}", fields[meta.dim + 1]))
        })?;
        labels.push(skill);

        let cell = fields[meta.dim + 2];
        let expected_cell =
            anomaly_cell(&meta.anomalies, step).map(|k| k.as_str()).unwrap_or("");
        if cell != expected_cell {
            return Err(parse_err(
                path,
                lineno,
                format!("anomaly cell {cell:?} disagrees with sidecar ({expected_cell:?})"),
            ));
        }
        let recovery = fields[meta.dim + 3];
        let expected_rec =
            usize::from(meta.recovery_windows.iter().any(|w| w.contains(step)));
        if recovery != expected_rec.to_string() {
            return Err(parse_err(
                path,
                lineno,
                format!("recovery flag {recovery:?} disagrees with sidecar"),
            ));
        }
    }
    if rows.is_empty() {
        return Err(parse_err(path, 1, "no timestep rows after the header"));
    }

    let obs = ObservationSequence::from_rows(rows, meta.dt)?;
    Trial::new(obs, labels, meta.anomalies, meta.recovery_windows, meta.spec_hash)
}

// ---------------------------------------------------------------------------
// Models.

#[derive(Serialize, Deserialize)]
#[serde(tag = "cov_type", content = "cov", rename_all = "snake_case")]
enum CovSchema {
    Diag(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

#[derive(Serialize, Deserialize)]
struct EmissionSchema {
    mean: Vec<f64>,
    #[serde(flatten)]
    cov: CovSchema,
}

#[derive(Serialize, Deserialize)]
struct ModelSchema {
    version: String,
    n_states: usize,
    dim: usize,
    pi: Vec<f64>,
    /// Nested rows, outer index = source state.
    trans: Vec<Vec<f64>>,
    emissions: Vec<EmissionSchema>,
}

pub fn save_model(model: &HmmModel, path: &Path) -> Result<()> {
    let n = model.n_states();
    let schema = ModelSchema {
        version: MODEL_VERSION.to_string(),
        n_states: n,
        dim: model.dim(),
        pi: model.pi().to_vec(),
        trans: (0..n).map(|i| model.trans()[i * n..(i + 1) * n].to_vec()).collect(),
        emissions: model
            .emissions()
            .iter()
            .map(|g| EmissionSchema {
                mean: g.mean().to_vec(),
                cov: match g.cov() {
                    Covariance::Diag(v) => CovSchema::Diag(v.clone()),
                    Covariance::Full(m) => CovSchema::Full(m.clone()),
                },
            })
            .collect(),
    };
    write_json_pretty(&schema, path)
}

pub fn load_model(path: &Path) -> Result<HmmModel> {
    let schema: ModelSchema = read_json(path)?;
    check_version(&schema.version, MODEL_VERSION)?;
    if schema.emissions.len() != schema.n_states {
        return Err(validation_err(
            path,
            format!(
                "declares {} states but {} emissions",
                schema.n_states,
                schema.emissions.len()
            ),
        ));
    }
    if schema.trans.len() != schema.n_states
        || schema.trans.iter().any(|row| row.len() != schema.n_states)
    {
        return Err(validation_err(path, "transition matrix is not n_states x n_states"));
    }
    let emissions: Vec<Gaussian> = schema
        .emissions
        .into_iter()
        .map(|e| {
            if e.mean.len() != schema.dim {
                return Err(validation_err(
                    path,
                    format!("emission mean has {} dims, file declares {}", e.mean.len(), schema.dim),
                ));
            }
            let cov = match e.cov {
                CovSchema::Diag(v) => Covariance::Diag(v),
                CovSchema::Full(m) => Covariance::Full(m),
            };
            Gaussian::new(e.mean, cov)
        })
        .collect::<Result<_>>()?;
    HmmModel::new(schema.pi, schema.trans.concat(), emissions)
}

// ---------------------------------------------------------------------------
// Calibrations.

#[derive(Serialize, Deserialize)]
struct GradCalSchema {
    version: String,
    model_id: String,
    grad_min: f64,
    grad_max: f64,
    grad_range: f64,
}

pub fn save_gradient_calibration(cal: &GradientCalibration, path: &Path) -> Result<()> {
    write_json_pretty(
        &GradCalSchema {
            version: GRAD_CAL_VERSION.to_string(),
            model_id: cal.model_id.clone(),
            grad_min: cal.grad_min,
            grad_max: cal.grad_max,
            grad_range: cal.grad_range,
        },
        path,
    )
}

pub fn load_gradient_calibration(path: &Path) -> Result<GradientCalibration> {
    let s: GradCalSchema = read_json(path)?;
    check_version(&s.version, GRAD_CAL_VERSION)?;
    if ![s.grad_min, s.grad_max, s.grad_range].iter().all(|v| v.is_finite()) {
        return Err(validation_err(path, "calibration contains non-finite values"));
    }
    if s.grad_max < s.grad_min {
        return Err(validation_err(path, "grad_max below grad_min"));
    }
    if (s.grad_range - (s.grad_max - s.grad_min)).abs() > 1e-9 {
        return Err(validation_err(
            path,
            format!(
                "grad_range {} inconsistent with max - min = {}",
                s.grad_range,
                s.grad_max - s.grad_min
            ),
        ));
    }
    Ok(GradientCalibration {
        model_id: s.model_id,
        grad_min: s.grad_min,
        grad_max: s.grad_max,
        grad_range: s.grad_range,
    })
}

#[derive(Serialize, Deserialize)]
struct MagCalSchema {
    version: String,
    model_id: String,
    k: f64,
    mu: Vec<f64>,
    sigma: Vec<f64>,
    dod_threshold: f64,
}

pub fn save_magnitude_threshold(thr: &MagnitudeThreshold, path: &Path) -> Result<()> {
    write_json_pretty(
        &MagCalSchema {
            version: MAG_CAL_VERSION.to_string(),
            model_id: thr.model_id.clone(),
            k: thr.k,
            mu: thr.mu.clone(),
            sigma: thr.sigma.clone(),
            dod_threshold: thr.dod_threshold,
        },
        path,
    )
}

pub fn load_magnitude_threshold(path: &Path) -> Result<MagnitudeThreshold> {
    let s: MagCalSchema = read_json(path)?;
    check_version(&s.version, MAG_CAL_VERSION)?;
    if s.mu.is_empty() {
        return Err(validation_err(path, "empty envelope curve"));
    }
    if s.mu.len() != s.sigma.len() {
        return Err(validation_err(
            path,
            format!("mu has {} points but sigma has {}", s.mu.len(), s.sigma.len()),
        ));
    }
    let finite =
        s.k.is_finite() && s.dod_threshold.is_finite() && s.mu.iter().chain(&s.sigma).all(|v| v.is_finite());
    if !finite {
        return Err(validation_err(path, "calibration contains non-finite values"));
    }
    if s.sigma.iter().any(|&v| v < 0.0) {
        return Err(validation_err(path, "negative envelope deviation"));
    }
    if s.dod_threshold <= 0.0 {
        return Err(validation_err(path, "difference-derivative threshold must be positive"));
    }
    Ok(MagnitudeThreshold {
        model_id: s.model_id,
        k: s.k,
        mu: s.mu,
        sigma: s.sigma,
        dod_threshold: s.dod_threshold,
    })
}

// ---------------------------------------------------------------------------
// Dataset manifests.

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Trial CSV path, relative to the manifest's directory.
    pub path: String,
    pub role: TrialRole,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub spec_hash: String,
    pub trials: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.trials.iter().enumerate() {
            if self.trials[..i].iter().any(|p| p.path == e.path) {
                return Err(Error::InvalidInput(format!(
                    "manifest lists {:?} more than once",
                    e.path
                )));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestSchema {
    version: String,
    name: String,
    spec_hash: String,
    trials: Vec<ManifestEntry>,
}

pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    manifest.validate()?;
    write_json_pretty(
        &ManifestSchema {
            version: MANIFEST_VERSION.to_string(),
            name: manifest.name.clone(),
            spec_hash: manifest.spec_hash.clone(),
            trials: manifest.trials.clone(),
        },
        path,
    )
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let s: ManifestSchema = read_json(path)?;
    check_version(&s.version, MANIFEST_VERSION)?;
    let manifest =
        DatasetManifest { name: s.name, spec_hash: s.spec_hash, trials: s.trials };
    manifest.validate().map_err(|e| validation_err(path, e.to_string()))?;
    Ok(manifest)
}

/// Loads the manifest and every trial it references; entry paths resolve
/// against the manifest's directory. Each trial's spec hash must agree
/// with the manifest's.
pub fn load_manifest_trials(path: &Path) -> Result<(DatasetManifest, Vec<(Trial, TrialRole)>)> {
    let manifest = load_manifest(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut trials = Vec::with_capacity(manifest.trials.len());
    for entry in &manifest.trials {
        let trial_path = dir.join(&entry.path);
        if !trial_path.exists() {
            return Err(validation_err(
                path,
                format!("references missing trial file {}", trial_path.display()),
            ));
        }
        let trial = load_trial(&trial_path)?;
        if trial.spec_hash != manifest.spec_hash {
            return Err(validation_err(
                &trial_path,
                format!(
                    "trial spec hash {} does not match manifest {}",
                    trial.spec_hash, manifest.spec_hash
                ),
            ));
        }
        trials.push((trial, entry.role));
    }
    Ok((manifest, trials))
}

// ---------------------------------------------------------------------------
// Event timelines: newline-delimited JSON, one event per line.

pub fn save_timeline(timeline: &EventTimeline, path: &Path) -> Result<()> {
    let mut text = String::new();
    for event in &timeline.events {
        text.push_str(&serde_json::to_string(event)?);
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn load_timeline(path: &Path) -> Result<EventTimeline> {
    let mut events = Vec::new();
    for (idx, line) in read_text(path)?.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let event: Event = serde_json::from_str(line)
            .map_err(|e| parse_err(path, idx + 1, e.to_string()))?;
        events.push(event);
    }
    Ok(EventTimeline { events })
}

// ---------------------------------------------------------------------------
// Plot-ready diagnostic series (write-only).

/// Incremental decode triangle: row `p` holds the state sequence for the
/// prefix of length `p`, padded with -1 past its end.
pub fn write_viterbi_triangle_csv(trace: &IncrementalViterbiTrace, path: &Path) -> Result<()> {
    let t_len = trace.paths.len();
    let mut text = String::from("prefix");
    for t in 1..=t_len {
        write!(text, ",s{t}").unwrap();
    }
    text.push('\n');
    for (p, states) in trace.paths.iter().enumerate() {
        write!(text, "{}", p + 1).unwrap();
        for t in 0..t_len {
            match states.get(t) {
                Some(&s) => write!(text, ",{s}").unwrap(),
                None => text.push_str(",-1"),
            }
        }
        text.push('\n');
    }
    write_text(path, &text)
}

/// Per-state log emission densities over time, one column per state.
pub fn write_emission_curves_csv(curves: &[Vec<f64>], path: &Path) -> Result<()> {
    let t_len = curves.first().map(|c| c.len()).unwrap_or(0);
    if curves.is_empty() || t_len == 0 {
        return Err(Error::InvalidInput("no emission curves to write".into()));
    }
    if curves.iter().any(|c| c.len() != t_len) {
        return Err(Error::InvalidInput("emission curves have unequal lengths".into()));
    }
    let mut text = String::from("t");
    for i in 0..curves.len() {
        write!(text, ",state_{i}").unwrap();
    }
    text.push('\n');
    for t in 0..t_len {
        write!(text, "{}", t + 1).unwrap();
        for curve in curves {
            write!(text, ",{:.16e}", curve[t]).unwrap();
        }
        text.push('\n');
    }
    write_text(path, &text)
}

/// Two-column CSV (`t,<name>`) for a scalar series such as gradients or
/// cumulative log-likelihoods. `start` is the 1-based step of the first
/// value (gradient series start at t = 2).
pub fn write_series_csv(name: &str, values: &[f64], start: usize, path: &Path) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidInput("no series values to write".into()));
    }
    let mut text = format!("t,{name}\n");
    for (i, v) in values.iter().enumerate() {
        writeln!(text, "{},{v:.16e}", start + i).unwrap();
    }
    write_text(path, &text)
}
