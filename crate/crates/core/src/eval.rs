//! Evaluation protocol: identification confusion, reaction timing, and
//! anomaly true/false-positive accounting.
//!
//! Anomaly matching works on grouped trigger events. An event counts toward
//! an anomaly when it fires at or after the onset and still inside the
//! onset's skill block or the anomaly's recorded window; the first match
//! wins and later markers in that reach are trivial (neither reward nor
//! penalty). Events that precede every reachable anomaly are false
//! positives, and unmatched anomalies are false negatives.

use serde::{Deserialize, Serialize};

use crate::detect::{Detector, EventTimeline};
use crate::error::{Error, Result};
use crate::synth::Trial;

/// Row-normalizable confusion counts over skill labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// Sorted union of labels seen in truth or prediction.
    pub skills: Vec<usize>,
    /// `counts[i][j]`: timesteps with true skill `skills[i]` predicted as
    /// `skills[j]`.
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    /// Row-normalized rates; rows without samples stay zero.
    pub fn rates(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let total: usize = row.iter().sum();
                if total == 0 {
                    vec![0.0; row.len()]
                } else {
                    row.iter().map(|&c| c as f64 / total as f64).collect()
                }
            })
            .collect()
    }

    /// Per-skill correct-classification rate (diagonal of [`rates`]).
    ///
    /// [`rates`]: ConfusionMatrix::rates
    pub fn diagonal(&self) -> Vec<f64> {
        self.rates().iter().enumerate().map(|(i, row)| row[i]).collect()
    }

    /// Fraction of all timesteps classified correctly (label-weighted
    /// trace).
    pub fn overall_accuracy(&self) -> f64 {
        let correct: usize = (0..self.skills.len()).map(|i| self.counts[i][i]).sum();
        let total: usize = self.counts.iter().flatten().sum();
        if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        }
    }
}

/// Per-timestep confusion counts between aligned label streams.
pub fn confusion_matrix(pred: &[usize], truth: &[usize]) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "prediction covers {} steps but truth covers {}",
            pred.len(),
            truth.len()
        )));
    }
    let mut skills: Vec<usize> = truth.iter().chain(pred.iter()).copied().collect();
    skills.sort_unstable();
    skills.dedup();
    let index = |s: usize| skills.binary_search(&s).expect("label in axis");
    let n = skills.len();
    let mut counts = vec![vec![0usize; n]; n];
    for (&p, &t) in pred.iter().zip(truth) {
        counts[index(t)][index(p)] += 1;
    }
    Ok(ConfusionMatrix { skills, counts })
}

/// How the predicted beginning of a skill is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReactionCriterion {
    /// First prediction matching the skill at or after the lookback point.
    FirstOccurrence,
    /// Start of the first run of `k` consecutive matching predictions.
    FirstSuccessive(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillReaction {
    pub skill: usize,
    pub true_start: usize,
    /// Block length in steps.
    pub length: usize,
    /// 1-based step chosen by the criterion; `None` when never predicted.
    pub predicted_start: Option<usize>,
    pub offset: Option<i64>,
    /// `100 * offset / length`; negative when predicted early.
    pub reaction_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactionStats {
    pub criterion: ReactionCriterion,
    pub per_skill: Vec<SkillReaction>,
}

impl ReactionStats {
    /// Mean of |reaction| over skills that were predicted at all.
    pub fn mean_abs_pct(&self) -> Option<f64> {
        let vals: Vec<f64> =
            self.per_skill.iter().filter_map(|r| r.reaction_pct.map(f64::abs)).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    pub fn mean_signed_pct(&self) -> Option<f64> {
        let vals: Vec<f64> =
            self.per_skill.iter().filter_map(|r| r.reaction_pct).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

/// Reaction timing per skill: signed offset between the predicted and true
/// block beginnings, as a percentage of block length.
///
/// The search for a skill's predicted beginning starts `lookback` steps
/// before its true start (clamped to the trial), or at the previous block's
/// start when `lookback` is `None`, and runs to the end of the trial. A
/// skill never predicted in that range is reported with empty fields.
pub fn reaction_percentage(
    pred: &[usize],
    truth: &[usize],
    criterion: ReactionCriterion,
    lookback: Option<usize>,
) -> Result<ReactionStats> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "prediction covers {} steps but truth covers {}",
            pred.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::InvalidInput("reaction needs a non-empty trial".into()));
    }
    if let ReactionCriterion::FirstSuccessive(k) = criterion {
        if k == 0 {
            return Err(Error::InvalidInput("successive-run criterion needs k >= 1".into()));
        }
    }

    // Contiguous true blocks; each skill must appear exactly once.
    let mut blocks: Vec<(usize, usize, usize)> = Vec::new(); // (skill, start, end) 1-based
    let mut start = 1usize;
    for t in 2..=truth.len() {
        if truth[t - 1] != truth[t - 2] {
            blocks.push((truth[start - 1], start, t - 1));
            start = t;
        }
    }
    blocks.push((truth[start - 1], start, truth.len()));
    for i in 0..blocks.len() {
        for j in i + 1..blocks.len() {
            if blocks[i].0 == blocks[j].0 {
                return Err(Error::InvalidInput(format!(
                    "skill {} appears in more than one true block",
                    blocks[i].0
                )));
            }
        }
    }

    let mut per_skill = Vec::with_capacity(blocks.len());
    for (i, &(skill, bs, be)) in blocks.iter().enumerate() {
        let search_from = match lookback {
            Some(lb) => bs.saturating_sub(lb).max(1),
            None => {
                if i == 0 {
                    1
                } else {
                    blocks[i - 1].1
                }
            }
        };
        let predicted_start = match criterion {
            ReactionCriterion::FirstOccurrence => {
                (search_from..=pred.len()).find(|&t| pred[t - 1] == skill)
            }
            ReactionCriterion::FirstSuccessive(k) => (search_from
                ..=pred.len().saturating_sub(k - 1))
                .find(|&t| pred[t - 1..t - 1 + k].iter().all(|&p| p == skill)),
        };
        let length = be - bs + 1;
        let offset = predicted_start.map(|p| p as i64 - bs as i64);
        per_skill.push(SkillReaction {
            skill,
            true_start: bs,
            length,
            predicted_start,
            offset,
            reaction_pct: offset.map(|o| 100.0 * o as f64 / length as f64),
        });
    }
    Ok(ReactionStats { criterion, per_skill })
}

/// Collapses raw trigger times into group representatives: a trigger within
/// `gap` of the previous one extends the current group, otherwise it starts
/// a new group reported at its own time. Idempotent on already-grouped
/// trains.
pub fn group_triggers(times: &[usize], gap: usize) -> Vec<usize> {
    let mut sorted = times.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut groups = Vec::new();
    let mut last: Option<usize> = None;
    for t in sorted {
        if last.is_none_or(|p| t - p > gap) {
            groups.push(t);
        }
        last = Some(t);
    }
    groups
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyCounts {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
}

impl AnomalyCounts {
    pub fn merge(&mut self, other: AnomalyCounts) {
        self.true_pos += other.true_pos;
        self.false_pos += other.false_pos;
        self.false_neg += other.false_neg;
    }
}

/// Scores one detector's grouped triggers against a trial's ground truth.
///
/// An event can match an anomaly when it fires at or after the onset and
/// either stays within the onset's skill block or within the anomaly's
/// recorded window (windows may outlive the block, e.g. a drained wrench
/// persists to the end of the trial). Among reachable unmatched anomalies
/// the latest onset wins. Events reaching only already-matched anomalies
/// are trivial; events reaching none are false positives.
pub fn match_anomalies(
    timeline: &EventTimeline,
    detector: Detector,
    trial: &Trial,
    grouping_gap: usize,
) -> AnomalyCounts {
    let times: Vec<usize> = timeline.anomalies_for(detector).map(|e| e.t).collect();
    let events = group_triggers(&times, grouping_gap);
    let blocks = trial.skill_blocks();
    let block_idx = |t: usize| blocks.iter().position(|(_, w)| w.contains(t));

    let mut anomalies = trial.anomalies.clone();
    anomalies.sort_by_key(|a| a.window.start);
    let mut matched = vec![false; anomalies.len()];
    let mut counts = AnomalyCounts::default();

    for t in events {
        let event_block = block_idx(t);
        let reaches = |w: &crate::synth::StepWindow| {
            w.start <= t && (t <= w.end || block_idx(w.start) == event_block)
        };
        let candidate = (0..anomalies.len())
            .filter(|&i| !matched[i] && reaches(&anomalies[i].window))
            .max_by_key(|&i| anomalies[i].window.start);
        if let Some(i) = candidate {
            matched[i] = true;
            counts.true_pos += 1;
        } else if !anomalies
            .iter()
            .enumerate()
            .any(|(i, a)| matched[i] && reaches(&a.window))
        {
            counts.false_pos += 1;
        }
    }
    counts.false_neg = matched.iter().filter(|&&m| !m).count();
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicroMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

/// Precision/recall/F over (possibly pooled) anomaly counts, as fractions.
///
/// Degenerate cases: with no predictions and no truth both precision and
/// recall are vacuously perfect; with no predictions but missed anomalies
/// precision is 0 (the detector conveyed nothing useful).
pub fn micro_metrics(counts: AnomalyCounts) -> MicroMetrics {
    let tp = counts.true_pos as f64;
    let fp = counts.false_pos as f64;
    let fne = counts.false_neg as f64;
    let precision = if tp + fp == 0.0 {
        if fne == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        tp / (tp + fp)
    };
    let recall = if tp + fne == 0.0 { 1.0 } else { tp / (tp + fne) };
    let f_score = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    MicroMetrics { precision, recall, f_score }
}

/// Grouped triggers for `detector` falling strictly between a recovery
/// window's end and the start of the next skill, summed over recovery
/// windows. Errors when the trial has none.
pub fn post_recovery_fp(
    timeline: &EventTimeline,
    detector: Detector,
    trial: &Trial,
    grouping_gap: usize,
) -> Result<usize> {
    if trial.recovery_windows.is_empty() {
        return Err(Error::InvalidInput(
            "post-recovery accounting needs a trial with a recovery window".into(),
        ));
    }
    let times: Vec<usize> = timeline.anomalies_for(detector).map(|e| e.t).collect();
    let events = group_triggers(&times, grouping_gap);
    let labels = &trial.skill_labels;
    let mut total = 0;
    for w in &trial.recovery_windows {
        let here = labels[w.end - 1];
        let next_start = (w.end + 1..=labels.len())
            .find(|&t| labels[t - 1] != here)
            .unwrap_or(labels.len() + 1);
        total += events.iter().filter(|&&t| t > w.end && t < next_start).count();
    }
    Ok(total)
}
