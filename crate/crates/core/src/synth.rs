//! Synthetic pick-and-place trial generator.
//!
//! Real robot recordings are not part of this project, so the pipeline is
//! exercised on generated data: a five-skill pick-and-place task observed
//! through 13 channels (position, orientation quaternion, force, torque).
//! Each skill is a left-right Gaussian HMM whose state means interpolate
//! between waypoint signatures (contact forces appear at the grasp, load
//! torques during the carry, everything decays at the place). On top of the
//! nominal generator sit five anomaly transforms and a collision-recovery
//! scenario.
//!
//! Everything here is deterministic in (spec, seed): trials are bit-identical
//! across runs, which the persistence round-trip and CLI determinism checks
//! rely on.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gaussian::{Covariance, Gaussian};
use crate::hmm::{HmmModel, ObservationSequence};
use crate::math::{linear_resample, sample_std};

/// Observation channel count: position xyz, quaternion wxyz, force xyz,
/// torque xyz.
pub const CHANNELS: usize = 13;

pub const CHANNEL_NAMES: [&str; CHANNELS] = [
    "px", "py", "pz", "qw", "qx", "qy", "qz", "fx", "fy", "fz", "tx", "ty", "tz",
];

pub const POSITION: std::ops::Range<usize> = 0..3;
pub const QUATERNION: std::ops::Range<usize> = 3..7;
pub const FORCE: std::ops::Range<usize> = 7..10;
pub const TORQUE: std::ops::Range<usize> = 10..13;
/// Force plus torque block.
pub const WRENCH: std::ops::Range<usize> = 7..13;

/// Per-channel nominal noise scale used by the default task.
const BASE_SIGMA: [f64; CHANNELS] = [
    0.1, 0.1, 0.1, // position
    0.05, 0.05, 0.05, 0.05, // quaternion
    1.0, 1.0, 1.0, // force
    0.8, 0.8, 0.8, // torque
];

/// Minimum mean symmetric KL between adjacent skills' emission mixtures.
const MIN_SEPARATION: f64 = 8.0;

/// splitmix64 applied to `seed ^ (tag * golden)`. Derives independent
/// sub-seeds so scenarios agree on the task spec while every trial draws
/// from its own stream.
pub fn mix(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Closed taxonomy of injectable anomalies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    ObjectDisplacement,
    MissingObject,
    SlipperyPick,
    GripperCollision,
    ArmCollision,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 5] = [
        AnomalyKind::ObjectDisplacement,
        AnomalyKind::MissingObject,
        AnomalyKind::SlipperyPick,
        AnomalyKind::GripperCollision,
        AnomalyKind::ArmCollision,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyKind::ObjectDisplacement => "object_displacement",
            AnomalyKind::MissingObject => "missing_object",
            AnomalyKind::SlipperyPick => "slippery_pick",
            AnomalyKind::GripperCollision => "gripper_collision",
            AnomalyKind::ArmCollision => "arm_collision",
        }
    }
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnomalyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AnomalyKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown anomaly kind {s:?}")))
    }
}

/// Inclusive 1-based timestep window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepWindow {
    pub start: usize,
    pub end: usize,
}

impl StepWindow {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start == 0 || end < start {
            return Err(Error::InvalidInput(format!(
                "step window must satisfy 1 <= start <= end, got [{start}, {end}]"
            )));
        }
        Ok(StepWindow { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, t: usize) -> bool {
        t >= self.start && t <= self.end
    }

    pub fn overlaps(&self, other: &StepWindow) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyWindow {
    pub kind: AnomalyKind,
    pub window: StepWindow,
}

/// One recorded execution: observations plus ground-truth bookkeeping.
#[derive(Debug, Clone)]
pub struct Trial {
    pub obs: ObservationSequence,
    /// Ground-truth skill id per timestep, 1-based ids.
    pub skill_labels: Vec<usize>,
    pub anomalies: Vec<AnomalyWindow>,
    pub recovery_windows: Vec<StepWindow>,
    pub spec_hash: String,
}

impl Trial {
    pub fn new(
        obs: ObservationSequence,
        skill_labels: Vec<usize>,
        anomalies: Vec<AnomalyWindow>,
        recovery_windows: Vec<StepWindow>,
        spec_hash: String,
    ) -> Result<Self> {
        let t_len = obs.len();
        if skill_labels.len() != t_len {
            return Err(Error::InvalidInput(format!(
                "skill labels cover {} steps but trial has {t_len}",
                skill_labels.len()
            )));
        }
        if skill_labels.iter().any(|&s| s == 0) {
            return Err(Error::InvalidInput("skill ids are 1-based; found 0".into()));
        }
        for w in anomalies.iter().map(|a| a.window).chain(recovery_windows.iter().copied()) {
            if w.end > t_len {
                return Err(Error::InvalidInput(format!(
                    "window [{}, {}] exceeds trial length {t_len}",
                    w.start, w.end
                )));
            }
        }
        for kind in AnomalyKind::ALL {
            let mut same: Vec<StepWindow> = anomalies
                .iter()
                .filter(|a| a.kind == kind)
                .map(|a| a.window)
                .collect();
            same.sort_by_key(|w| w.start);
            for pair in same.windows(2) {
                if pair[0].overlaps(&pair[1]) {
                    return Err(Error::InvalidInput(format!(
                        "overlapping {kind} windows at [{}, {}] and [{}, {}]",
                        pair[0].start, pair[0].end, pair[1].start, pair[1].end
                    )));
                }
            }
        }
        let mut rec = recovery_windows.clone();
        rec.sort_by_key(|w| w.start);
        for pair in rec.windows(2) {
            if pair[0].overlaps(&pair[1]) {
                return Err(Error::InvalidInput("overlapping recovery windows".into()));
            }
        }
        Ok(Trial { obs, skill_labels, anomalies, recovery_windows, spec_hash })
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// Contiguous runs of equal skill labels, in execution order.
    pub fn skill_blocks(&self) -> Vec<(usize, StepWindow)> {
        let mut blocks = Vec::new();
        let mut start = 1usize;
        for t in 2..=self.skill_labels.len() {
            if self.skill_labels[t - 1] != self.skill_labels[t - 2] {
                blocks.push((
                    self.skill_labels[start - 1],
                    StepWindow { start, end: t - 1 },
                ));
                start = t;
            }
        }
        if !self.skill_labels.is_empty() {
            blocks.push((
                self.skill_labels[start - 1],
                StepWindow { start, end: self.skill_labels.len() },
            ));
        }
        blocks
    }
}

/// Why a trial exists within a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrialRole {
    Train,
    TestNominal,
    TestAnomalous,
    Recovery,
}

impl TrialRole {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialRole::Train => "train",
            TrialRole::TestNominal => "test-nominal",
            TrialRole::TestAnomalous => "test-anomalous",
            TrialRole::Recovery => "recovery",
        }
    }
}

impl fmt::Display for TrialRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrialRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(TrialRole::Train),
            "test-nominal" => Ok(TrialRole::TestNominal),
            "test-anomalous" => Ok(TrialRole::TestAnomalous),
            "recovery" => Ok(TrialRole::Recovery),
            other => Err(Error::InvalidInput(format!("unknown trial role {other:?}"))),
        }
    }
}

/// Ground-truth generator for one skill.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillSpec {
    pub id: usize,
    pub name: String,
    pub n_states: usize,
    /// Per-state self-transition probability; the final state absorbs.
    pub self_transition: Vec<f64>,
    /// Per-state emission means, `n_states x dim`.
    pub means: Vec<Vec<f64>>,
    /// Per-state emission standard deviations, `n_states x dim`.
    pub sigmas: Vec<Vec<f64>>,
    /// Inclusive nominal duration range in steps.
    pub duration: (usize, usize),
}

impl SkillSpec {
    pub fn gaussians(&self) -> Result<Vec<Gaussian>> {
        self.means
            .iter()
            .zip(&self.sigmas)
            .map(|(m, s)| {
                Gaussian::new(m.clone(), Covariance::Diag(s.iter().map(|v| v * v).collect()))
            })
            .collect()
    }

    /// Left-right HMM with this skill's emissions; the last state absorbs.
    pub fn generator_model(&self) -> Result<HmmModel> {
        let n = self.n_states;
        let mut pi = vec![0.0; n];
        pi[0] = 1.0;
        let mut trans = vec![0.0; n * n];
        for i in 0..n {
            if i + 1 < n {
                trans[i * n + i] = self.self_transition[i];
                trans[i * n + i + 1] = 1.0 - self.self_transition[i];
            } else {
                trans[i * n + i] = 1.0;
            }
        }
        HmmModel::new(pi, trans, self.gaussians()?)
    }
}

/// Start-pose scatter: each skill block begins slightly off its waypoint and
/// converges. Rare large draws model a sloppy approach; with only a handful
/// of calibration trials the envelope baselines underestimate that tail,
/// which is exactly the failure mode the magnitude detector exhibits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartOffsets {
    pub p_large: f64,
    pub small_max: f64,
    pub large_min: f64,
    pub large_max: f64,
    /// Fraction of the block over which the offset holds steady.
    pub sustain_frac: f64,
    /// Fraction of the block over which it then decays to zero.
    pub decay_frac: f64,
}

impl Default for StartOffsets {
    fn default() -> Self {
        StartOffsets {
            p_large: 0.18,
            small_max: 0.05,
            large_min: 0.14,
            large_max: 0.22,
            sustain_frac: 0.45,
            decay_frac: 0.15,
        }
    }
}

/// Full description of the synthetic task; hashable for artifact pairing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub dim: usize,
    pub dt: f64,
    pub seed: u64,
    pub start_offsets: StartOffsets,
    pub skills: Vec<SkillSpec>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.skills.is_empty() {
            return Err(Error::InvalidInput("task spec needs at least one skill".into()));
        }
        for sk in &self.skills {
            if sk.n_states == 0 {
                return Err(Error::InvalidInput(format!("skill {} has zero states", sk.id)));
            }
            if sk.means.len() != sk.n_states
                || sk.sigmas.len() != sk.n_states
                || sk.self_transition.len() != sk.n_states
            {
                return Err(Error::InvalidInput(format!(
                    "skill {} state tables disagree with n_states {}",
                    sk.id, sk.n_states
                )));
            }
            for row in sk.means.iter().chain(sk.sigmas.iter()) {
                if row.len() != self.dim {
                    return Err(Error::DimensionMismatch {
                        context: "skill spec channel count",
                        expected: self.dim,
                        got: row.len(),
                    });
                }
            }
            if sk.sigmas.iter().flatten().any(|&s| !(s > 0.0)) {
                return Err(Error::InvalidInput(format!(
                    "skill {} has a non-positive sigma",
                    sk.id
                )));
            }
            if sk.self_transition.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::InvalidInput(format!(
                    "skill {} self-transition out of [0, 1]",
                    sk.id
                )));
            }
            if sk.duration.0 == 0 || sk.duration.1 < sk.duration.0 {
                return Err(Error::InvalidInput(format!(
                    "skill {} duration range invalid",
                    sk.id
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form; pairs artifacts with the task
    /// that produced them.
    pub fn spec_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("task spec serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        hex::encode(hasher.finalize())
    }
}

/// Mean over each component of the nearest cross-mixture symmetric KL,
/// averaged in both directions. Separation score for skill pairs.
pub fn mixture_separation(a: &[Gaussian], b: &[Gaussian]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("separation needs non-empty mixtures".into()));
    }
    let one_way = |from: &[Gaussian], to: &[Gaussian]| -> Result<f64> {
        let mut total = 0.0;
        for g in from {
            let mut best = f64::INFINITY;
            for h in to {
                best = best.min(g.sym_kl(h)?);
            }
            total += best;
        }
        Ok(total / from.len() as f64)
    };
    Ok(0.5 * (one_way(a, b)? + one_way(b, a)?))
}

/// Mean nearest-component symmetric KL for each adjacent skill pair.
pub fn adjacent_separations(spec: &TaskSpec) -> Result<Vec<f64>> {
    let mixtures: Vec<Vec<Gaussian>> =
        spec.skills.iter().map(|s| s.gaussians()).collect::<Result<_>>()?;
    mixtures
        .windows(2)
        .map(|pair| mixture_separation(&pair[0], &pair[1]))
        .collect()
}

struct SkillDef {
    name: &'static str,
    n_states: usize,
    start: [f64; CHANNELS],
    end: [f64; CHANNELS],
}

/// Waypoint table. Contact signatures enter at skill starts (a grasp closes,
/// a load appears) and decay through the final place. Adjacent skills stay
/// several sigma apart on at least two channels so identification has
/// something to hold onto.
fn skill_defs() -> [SkillDef; 5] {
    [
        SkillDef {
            name: "hover-pick",
            n_states: 3,
            start: [0.0, 0.0, 0.8, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            end: [0.6, 0.0, 0.55, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        },
        SkillDef {
            name: "grasp",
            n_states: 3,
            start: [0.6, 0.0, 0.25, 1.0, 0.35, 0.0, 0.0, 5.0, 0.0, 4.0, 0.0, 0.0, 0.0],
            end: [0.6, 0.0, 0.20, 1.0, 0.35, 0.0, 0.0, 5.0, 0.0, 6.0, 0.0, 0.0, 0.0],
        },
        SkillDef {
            name: "lift",
            n_states: 4,
            start: [0.6, 0.0, 0.20, 1.0, 0.35, 0.0, 0.0, 5.0, -3.0, 6.0, 3.2, 0.0, 0.0],
            end: [0.6, 0.0, 0.85, 1.0, 0.35, 0.0, 0.0, 5.0, -3.0, 6.0, 3.2, 0.0, 0.0],
        },
        SkillDef {
            name: "hover-place",
            n_states: 4,
            start: [
                0.6, 0.0, 0.85, 1.0, 0.35, 0.25, 0.0, 5.0, -3.0, 6.0, 3.2, 3.2, 0.0,
            ],
            end: [
                -0.3, 0.5, 0.40, 1.0, 0.35, 0.25, 0.0, 5.0, -3.0, 6.0, 3.2, 3.2, 0.0,
            ],
        },
        SkillDef {
            name: "place",
            n_states: 3,
            start: [
                -0.3, 0.5, 0.40, 1.0, 0.35, 0.25, 0.25, 5.0, -3.0, 6.0, 3.2, 3.2, 3.2,
            ],
            end: [-0.3, 0.5, 0.20, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        },
    ]
}

/// Five-skill pick-and-place spec, deterministic per seed. Per-state noise
/// scales are jittered so skills differ in emission sharpness; adjacent
/// mixtures are checked for separation and re-jittered on violation.
pub fn default_task_spec(seed: u64) -> Result<TaskSpec> {
    for attempt in 0..8u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 10 + attempt));
        let mut skills = Vec::with_capacity(5);
        for (idx, def) in skill_defs().iter().enumerate() {
            let n = def.n_states;
            let mut means = Vec::with_capacity(n);
            let mut sigmas = Vec::with_capacity(n);
            let mut self_transition = Vec::with_capacity(n);
            for state in 0..n {
                let frac = if n == 1 { 0.0 } else { state as f64 / (n - 1) as f64 };
                let mean: Vec<f64> = (0..CHANNELS)
                    .map(|c| def.start[c] + (def.end[c] - def.start[c]) * frac)
                    .collect();
                let scale = rng.gen_range(0.85..1.25);
                let sigma: Vec<f64> = (0..CHANNELS)
                    .map(|c| BASE_SIGMA[c] * scale * rng.gen_range(0.92..1.08))
                    .collect();
                means.push(mean);
                sigmas.push(sigma);
                self_transition.push(rng.gen_range(0.95..0.98));
            }
            skills.push(SkillSpec {
                id: idx + 1,
                name: def.name.to_string(),
                n_states: n,
                self_transition,
                means,
                sigmas,
                duration: (80, 150),
            });
        }
        let spec = TaskSpec {
            name: "pick-and-place".to_string(),
            dim: CHANNELS,
            dt: 0.01,
            seed,
            start_offsets: StartOffsets::default(),
            skills,
        };
        if adjacent_separations(&spec)?.iter().all(|&s| s >= MIN_SEPARATION) {
            spec.validate()?;
            return Ok(spec);
        }
    }
    Err(Error::InvalidModel(
        "could not jitter a task spec with separated skills".into(),
    ))
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

/// Dwell-based left-right sampling: the duration is drawn from the skill's
/// range and split across states by jittered weights, each state holding at
/// least two steps.
fn sample_skill_rows(skill: &SkillSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let duration = rng.gen_range(skill.duration.0..=skill.duration.1);
    let n = skill.n_states;
    let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.75..1.3)).collect();
    let total: f64 = weights.iter().sum();
    let mut dwells: Vec<usize> = weights
        .iter()
        .map(|w| ((w / total * duration as f64).round() as usize).max(2))
        .collect();
    // Nudge rounding error back into the largest/smallest dwell.
    loop {
        let sum: usize = dwells.iter().sum();
        if sum == duration {
            break;
        }
        if sum > duration {
            let i = (0..n).max_by_key(|&i| dwells[i]).expect("non-empty");
            if dwells[i] <= 2 {
                break;
            }
            dwells[i] -= 1;
        } else {
            let i = (0..n).min_by_key(|&i| dwells[i]).expect("non-empty");
            dwells[i] += 1;
        }
    }
    let mut rows = Vec::with_capacity(dwells.iter().sum());
    for (state, &dwell) in dwells.iter().enumerate() {
        for _ in 0..dwell {
            let row: Vec<f64> = (0..CHANNELS)
                .map(|c| skill.means[state][c] + skill.sigmas[state][c] * standard_normal(rng))
                .collect();
            rows.push(row);
        }
    }
    rows
}

/// Draws and applies this block's start-pose offset in place.
fn apply_start_offset(rows: &mut [Vec<f64>], offsets: &StartOffsets, rng: &mut ChaCha8Rng) {
    let u: f64 = rng.gen();
    let magnitude = if u < offsets.p_large {
        rng.gen_range(offsets.large_min..offsets.large_max)
    } else {
        rng.gen_range(0.0..offsets.small_max)
    };
    let mut dir = [standard_normal(rng), standard_normal(rng), standard_normal(rng)];
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        dir = [1.0, 0.0, 0.0];
    } else {
        dir.iter_mut().for_each(|v| *v /= norm);
    }
    apply_forced_offset(
        rows,
        [magnitude * dir[0], magnitude * dir[1], magnitude * dir[2]],
        offsets.sustain_frac,
        offsets.decay_frac,
    );
}

fn apply_forced_offset(rows: &mut [Vec<f64>], offset: [f64; 3], sustain: f64, decay: f64) {
    let len = rows.len() as f64;
    let hold = (len * sustain).round() as usize;
    let fade = ((len * decay).round() as usize).max(1);
    for (j, row) in rows.iter_mut().enumerate() {
        let factor = if j < hold {
            1.0
        } else if j < hold + fade {
            1.0 - (j - hold) as f64 / fade as f64
        } else {
            break;
        };
        for (c, off) in offset.iter().enumerate() {
            row[c] += off * factor;
        }
    }
}

/// One nominal execution of every skill in order.
pub fn synthesize_nominal(spec: &TaskSpec, seed: u64) -> Result<Trial> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for skill in &spec.skills {
        let mut block = sample_skill_rows(skill, &mut rng);
        apply_start_offset(&mut block, &spec.start_offsets, &mut rng);
        labels.extend(std::iter::repeat(skill.id).take(block.len()));
        rows.extend(block);
    }
    Trial::new(
        ObservationSequence::from_rows(rows, spec.dt)?,
        labels,
        Vec::new(),
        Vec::new(),
        spec.spec_hash(),
    )
}

/// Knobs for [`inject_anomaly`]. Magnitudes are multiples of the per-channel
/// sample deviation inside the affected skill block, so injections scale
/// with whatever the nominal data actually does there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyParams {
    /// Collision transient height in block standard deviations.
    pub magnitude: f64,
    /// Window length for slips; collisions clamp this into [3, 8].
    pub duration: usize,
    /// Persistent (px, py) shift for object displacement.
    pub pose_offset: (f64, f64),
    /// Steps over which the displacement ramps to full size.
    pub ramp: usize,
    /// Residual rattle during a slip, in block standard deviations.
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for AnomalyParams {
    fn default() -> Self {
        AnomalyParams {
            magnitude: 10.0,
            duration: 14,
            pose_offset: (0.7, -0.55),
            ramp: 18,
            noise_scale: 1.5,
            seed: 0,
        }
    }
}

fn block_channel_std(rows: &[Vec<f64>], block: StepWindow, channel: usize) -> f64 {
    let vals: Vec<f64> =
        rows[block.start - 1..block.end].iter().map(|r| r[channel]).collect();
    sample_std(&vals).max(1e-12)
}

/// Returns a copy of `trial` with one anomaly injected at 1-based step `t`.
///
/// Displacement shifts the object's apparent position for the rest of the
/// skill; a missing object drains the wrench channels toward free space for
/// the rest of the trial; a slip drops the wrench to rattle for a bounded
/// window; collisions add a short 3-8 step transient on the force (gripper)
/// or torque (arm) channels. Steps before `t` are untouched.
pub fn inject_anomaly(
    trial: &Trial,
    kind: AnomalyKind,
    t: usize,
    params: &AnomalyParams,
) -> Result<Trial> {
    let t_len = trial.len();
    if t == 0 || t > t_len {
        return Err(Error::InvalidInput(format!(
            "anomaly onset {t} outside trial of length {t_len}"
        )));
    }
    let block = trial
        .skill_blocks()
        .into_iter()
        .map(|(_, w)| w)
        .find(|w| w.contains(t))
        .expect("onset lies in some block");
    let mut rows: Vec<Vec<f64>> = trial.obs.rows().map(|r| r.to_vec()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let t0 = t - 1;

    let window = match kind {
        AnomalyKind::ObjectDisplacement => {
            let ramp = params.ramp.max(1) as f64;
            for j in t0..block.end {
                let frac = (((j - t0 + 1) as f64) / ramp).min(1.0);
                rows[j][0] += frac * params.pose_offset.0;
                rows[j][1] += frac * params.pose_offset.1;
            }
            StepWindow::new(t, block.end)?
        }
        AnomalyKind::MissingObject => {
            let stds: Vec<f64> = WRENCH.map(|c| block_channel_std(&rows, block, c)).collect();
            for j in t0..t_len {
                let fade = 0.55f64.powi((j - t0 + 1) as i32);
                for (k, c) in WRENCH.enumerate() {
                    let free = (1.0 - fade) * 0.4 * stds[k] * standard_normal(&mut rng);
                    rows[j][c] = rows[j][c] * fade + free;
                }
            }
            StepWindow::new(t, t_len)?
        }
        AnomalyKind::SlipperyPick => {
            let end0 = (t0 + params.duration.max(1) - 1).min(block.end - 1);
            let stds: Vec<f64> =
                WRENCH.map(|c| block_channel_std(&rows, block, c)).collect();
            for row in rows.iter_mut().take(end0 + 1).skip(t0) {
                for (k, c) in WRENCH.enumerate() {
                    row[c] = params.noise_scale * stds[k] * standard_normal(&mut rng);
                }
            }
            StepWindow::new(t, end0 + 1)?
        }
        AnomalyKind::GripperCollision | AnomalyKind::ArmCollision => {
            let len = params.duration.clamp(3, 8);
            let end0 = (t0 + len - 1).min(t_len - 1);
            let chans = if kind == AnomalyKind::GripperCollision { FORCE } else { TORQUE };
            let stds: Vec<f64> =
                chans.clone().map(|c| block_channel_std(&rows, block, c)).collect();
            for row in rows.iter_mut().take(end0 + 1).skip(t0) {
                for (k, c) in chans.clone().enumerate() {
                    row[c] += params.magnitude * stds[k] * rng.gen_range(0.85..1.15);
                }
            }
            StepWindow::new(t, end0 + 1)?
        }
    };

    let mut anomalies = trial.anomalies.clone();
    anomalies.push(AnomalyWindow { kind, window });
    anomalies.sort_by_key(|a| a.window.start);
    Trial::new(
        ObservationSequence::from_rows(rows, trial.obs.dt())?,
        trial.skill_labels.clone(),
        anomalies,
        trial.recovery_windows.clone(),
        trial.spec_hash.clone(),
    )
}

/// Collision-recovery execution: the third skill is interrupted by an arm
/// collision, retraces toward its start (time-reversed resample of the
/// prefix plus noise), settles back onto the object to re-establish its
/// grasp, then re-executes in full before the task continues. The retrace
/// and re-grasp together form the recovery window; the re-execution starts
/// deliberately off-pose, the sloppy re-approach that envelope baselines
/// tend to flag.
pub fn synthesize_recovery_scenario(spec: &TaskSpec, seed: u64) -> Result<Trial> {
    spec.validate()?;
    if spec.skills.len() < 3 {
        return Err(Error::InvalidInput(
            "recovery scenario needs at least three skills".into(),
        ));
    }
    let interrupted = 2usize; // third skill
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();

    for skill in &spec.skills[..interrupted] {
        let mut block = sample_skill_rows(skill, &mut rng);
        apply_start_offset(&mut block, &spec.start_offsets, &mut rng);
        labels.extend(std::iter::repeat(skill.id).take(block.len()));
        rows.extend(block);
    }

    let skill = &spec.skills[interrupted];
    let planned = sample_skill_rows(skill, &mut rng);
    let cut = (planned.len() as f64 * 0.55) as usize;
    let prefix = &planned[..cut];

    let collision_len = 4usize;
    let torque_stds: Vec<f64> = TORQUE
        .map(|c| {
            let vals: Vec<f64> = prefix.iter().map(|r| r[c]).collect();
            sample_std(&vals).max(1e-12)
        })
        .collect();
    let collision_start = rows.len() + cut + 1; // 1-based
    let mut segment: Vec<Vec<f64>> = prefix.to_vec();
    for j in 0..collision_len {
        let mut row = planned[cut + j].clone();
        for (k, c) in TORQUE.enumerate() {
            row[c] += 10.0 * torque_stds[k] * rng.gen_range(0.85..1.15);
        }
        segment.push(row);
    }
    let collision_end = rows.len() + cut + collision_len; // 1-based

    // Time-reversed resample of the prefix: the arm backs off toward the
    // skill's start distribution.
    let retrace_len = ((cut as f64 * 0.6) as usize).max(8);
    let retrace_start = collision_end + 1;
    let mut retrace: Vec<Vec<f64>> = vec![vec![0.0; CHANNELS]; retrace_len];
    for c in 0..CHANNELS {
        let mut series: Vec<f64> = prefix.iter().rev().map(|r| r[c]).collect();
        let noise = sample_std(&series).max(1e-12) * 0.6;
        series = linear_resample(&series, retrace_len);
        for (j, v) in series.into_iter().enumerate() {
            retrace[j][c] = v + noise * standard_normal(&mut rng);
        }
    }
    segment.extend(retrace);

    // Back at the object, the gripper re-seats its hold before retrying; the
    // steps read like the grasp's final state, not like any part of the
    // interrupted skill.
    let hold = &spec.skills[interrupted - 1];
    let hold_mean = hold.means.last().expect("validated non-empty");
    let hold_sigma = hold.sigmas.last().expect("validated non-empty");
    for _ in 0..10 {
        let row: Vec<f64> = (0..CHANNELS)
            .map(|c| hold_mean[c] + hold_sigma[c] * standard_normal(&mut rng))
            .collect();
        segment.push(row);
    }
    let recovery_end = rows.len() + segment.len(); // 1-based

    let mut resumption = sample_skill_rows(skill, &mut rng);
    apply_forced_offset(&mut resumption, [0.25, -0.20, 0.15], 0.12, 0.13);
    segment.extend(resumption);

    labels.extend(std::iter::repeat(skill.id).take(segment.len()));
    rows.extend(segment);

    for skill in &spec.skills[interrupted + 1..] {
        let mut block = sample_skill_rows(skill, &mut rng);
        apply_start_offset(&mut block, &spec.start_offsets, &mut rng);
        labels.extend(std::iter::repeat(skill.id).take(block.len()));
        rows.extend(block);
    }

    Trial::new(
        ObservationSequence::from_rows(rows, spec.dt)?,
        labels,
        vec![AnomalyWindow {
            kind: AnomalyKind::ArmCollision,
            window: StepWindow::new(collision_start, collision_end)?,
        }],
        vec![StepWindow::new(retrace_start, recovery_end)?],
        spec.spec_hash(),
    )
}

/// Canned dataset layouts for the CLI and acceptance checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Five training trials plus five nominal held-out trials.
    Nominal5x5,
    /// Five anomalous trials carrying fourteen ground-truth anomalies.
    AnomalySuite14,
    /// Single collision-recovery trial.
    Recovery,
}

impl Scenario {
    pub const ALL: [Scenario; 3] =
        [Scenario::Nominal5x5, Scenario::AnomalySuite14, Scenario::Recovery];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Nominal5x5 => "nominal-5x5",
            Scenario::AnomalySuite14 => "anomaly-suite-14",
            Scenario::Recovery => "recovery",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nominal-5x5" | "nominal" => Ok(Scenario::Nominal5x5),
            "anomaly-suite-14" | "anomaly-suite" => Ok(Scenario::AnomalySuite14),
            "recovery" => Ok(Scenario::Recovery),
            other => Err(Error::InvalidInput(format!("unknown scenario {other:?}"))),
        }
    }
}

fn block_of(trial: &Trial, skill_id: usize) -> Result<StepWindow> {
    trial
        .skill_blocks()
        .into_iter()
        .find(|(id, _)| *id == skill_id)
        .map(|(_, w)| w)
        .ok_or_else(|| Error::InvalidInput(format!("trial has no skill {skill_id} block")))
}

fn onset_at(block: StepWindow, frac: f64) -> usize {
    block.start + ((block.len() as f64 * frac) as usize).min(block.len() - 1)
}

/// Builds a scenario's trials. The task spec depends only on `seed`, so all
/// scenarios generated from one seed share a spec hash; individual trials
/// draw from sub-seeds.
pub fn scenario_trials(scenario: Scenario, seed: u64) -> Result<(TaskSpec, Vec<(Trial, TrialRole)>)> {
    let spec = default_task_spec(seed)?;
    let mut out: Vec<(Trial, TrialRole)> = Vec::new();
    match scenario {
        Scenario::Nominal5x5 => {
            for i in 0..5u64 {
                out.push((synthesize_nominal(&spec, mix(seed, 100 + i))?, TrialRole::Train));
            }
            for i in 0..5u64 {
                out.push((
                    synthesize_nominal(&spec, mix(seed, 200 + i))?,
                    TrialRole::TestNominal,
                ));
            }
        }
        Scenario::AnomalySuite14 => {
            let base: Vec<Trial> = (0..5u64)
                .map(|i| synthesize_nominal(&spec, mix(seed, 300 + i)))
                .collect::<Result<_>>()?;
            let p = |tag: u64| AnomalyParams { seed: mix(seed, 500 + tag), ..Default::default() };

            let t0 = inject_anomaly(
                &base[0],
                AnomalyKind::ObjectDisplacement,
                onset_at(block_of(&base[0], 1)?, 0.35),
                &p(0),
            )?;
            out.push((t0, TrialRole::TestAnomalous));

            // The absent object surfaces when the lift begins and no load
            // follows the gripper.
            let t1 = inject_anomaly(
                &base[1],
                AnomalyKind::MissingObject,
                block_of(&base[1], 3)?.start,
                &p(1),
            )?;
            out.push((t1, TrialRole::TestAnomalous));

            let mut t2 = inject_anomaly(
                &base[2],
                AnomalyKind::SlipperyPick,
                onset_at(block_of(&base[2], 3)?, 0.45),
                &p(2),
            )?;
            t2 = inject_anomaly(
                &t2,
                AnomalyKind::SlipperyPick,
                onset_at(block_of(&t2, 4)?, 0.40),
                &p(3),
            )?;
            out.push((t2, TrialRole::TestAnomalous));

            let mut t3 = base[3].clone();
            for (k, (skill, len, frac)) in
                [(1, 4, 0.60), (2, 5, 0.55), (3, 3, 0.62), (4, 8, 0.58), (5, 6, 0.64)]
                    .into_iter()
                    .enumerate()
            {
                t3 = inject_anomaly(
                    &t3,
                    AnomalyKind::GripperCollision,
                    onset_at(block_of(&t3, skill)?, frac),
                    &AnomalyParams { duration: len, ..p(10 + k as u64) },
                )?;
            }
            out.push((t3, TrialRole::TestAnomalous));

            let mut t4 = base[4].clone();
            for (k, (skill, len, frac)) in
                [(1, 5, 0.42), (2, 6, 0.38), (3, 4, 0.45), (4, 3, 0.41), (5, 8, 0.39)]
                    .into_iter()
                    .enumerate()
            {
                t4 = inject_anomaly(
                    &t4,
                    AnomalyKind::ArmCollision,
                    onset_at(block_of(&t4, skill)?, frac),
                    &AnomalyParams { duration: len, ..p(20 + k as u64) },
                )?;
            }
            out.push((t4, TrialRole::TestAnomalous));
        }
        Scenario::Recovery => {
            out.push((
                synthesize_recovery_scenario(&spec, mix(seed, 400))?,
                TrialRole::Recovery,
            ));
        }
    }
    Ok((spec, out))
}
