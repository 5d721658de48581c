//! Report schemas shared by `identify`, `detect`, and `eval`, plus the
//! `--assert` gates that turn their numbers into exit codes.
//!
//! The detect and eval commands emit the same `AnalysisReport` shape, so a
//! re-score of stored timelines can be diffed directly against the report
//! written at detection time.

use std::collections::BTreeMap;

use evgrad::detect::Detector;
use evgrad::eval::{
    confusion_matrix, match_anomalies, micro_metrics, post_recovery_fp, reaction_percentage,
    AnomalyCounts, ReactionCriterion,
};
use evgrad::synth::{Trial, TrialRole};
use serde::{Deserialize, Serialize};

use crate::support::Failure;

/// Smallest accuracy, diagonal rate, gradient F-score, and largest mean
/// reaction magnitude accepted under `--assert`.
pub const GATE_ACCURACY: f64 = 0.95;
pub const GATE_DIAGONAL: f64 = 0.90;
pub const GATE_F_SCORE: f64 = 0.95;
pub const GATE_REACTION_PCT: f64 = 5.0;

#[derive(Debug, Serialize, Deserialize)]
pub struct ReactionSummary {
    /// Skill blocks whose beginning was never predicted in range.
    pub missed: usize,
    /// Mean of |offset| as a percentage of block length, over found blocks.
    pub mean_abs_pct: Option<f64>,
    pub mean_signed_pct: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IdentSection {
    pub trials: usize,
    pub accuracy: f64,
    pub skills: Vec<usize>,
    pub confusion_rates: Vec<Vec<f64>>,
    pub diagonal: Vec<f64>,
    pub reaction_first_occurrence: ReactionSummary,
    pub reaction_first_successive_10: ReactionSummary,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DetectorSection {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub version: String,
    pub group_gap: usize,
    pub detectors: Vec<String>,
    /// Per-step identification quality over nominal test trials.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub identification: Option<IdentSection>,
    /// Event accounting over anomalous trials, one section per detector.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anomalous: Option<BTreeMap<String, DetectorSection>>,
    /// Grouped anomaly events raised on nominal test trials per detector.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nominal_false_events: Option<BTreeMap<String, usize>>,
    /// Grouped events between each recovery window's end and the next
    /// skill, per detector.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recovery: Option<BTreeMap<String, usize>>,
}

pub fn reaction_summary(
    per_trial: &[(&Trial, &[usize])],
    criterion: ReactionCriterion,
) -> Result<ReactionSummary, Failure> {
    let mut abs = Vec::new();
    let mut signed = Vec::new();
    let mut missed = 0usize;
    for (trial, pred) in per_trial {
        let stats = reaction_percentage(pred, &trial.skill_labels, criterion, None)?;
        for r in &stats.per_skill {
            match r.reaction_pct {
                Some(pct) => {
                    abs.push(pct.abs());
                    signed.push(pct);
                }
                None => missed += 1,
            }
        }
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<f64>() / v.len() as f64)
        }
    };
    Ok(ReactionSummary {
        missed,
        mean_abs_pct: mean(&abs),
        mean_signed_pct: mean(&signed),
    })
}

/// Identification section over nominal trials: pooled confusion plus
/// reaction timing under both beginning criteria.
pub fn ident_section(per_trial: &[(&Trial, &[usize])]) -> Result<IdentSection, Failure> {
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for (trial, p) in per_trial {
        pred.extend_from_slice(p);
        truth.extend_from_slice(&trial.skill_labels);
    }
    let confusion = confusion_matrix(&pred, &truth)?;
    Ok(IdentSection {
        trials: per_trial.len(),
        accuracy: confusion.overall_accuracy(),
        skills: confusion.skills.clone(),
        confusion_rates: confusion.rates(),
        diagonal: confusion.diagonal(),
        reaction_first_occurrence: reaction_summary(per_trial, ReactionCriterion::FirstOccurrence)?,
        reaction_first_successive_10: reaction_summary(
            per_trial,
            ReactionCriterion::FirstSuccessive(10),
        )?,
    })
}

pub fn detector_section(counts: AnomalyCounts) -> DetectorSection {
    let m = micro_metrics(counts);
    DetectorSection {
        true_pos: counts.true_pos,
        false_pos: counts.false_pos,
        false_neg: counts.false_neg,
        precision: m.precision,
        recall: m.recall,
        f_score: m.f_score,
    }
}

/// One timeline per trial, with the trial's role, ready for pooling.
pub struct ScoredTrial<'a> {
    pub trial: &'a Trial,
    pub role: TrialRole,
    pub timeline: &'a evgrad::detect::EventTimeline,
    pub predictions: &'a [usize],
}

/// Builds the full report from scored trials: identification over nominal
/// trials, pooled detector metrics over anomalous ones, false-event counts
/// on nominal data, and post-recovery counts where recovery windows exist.
pub fn analysis_report(
    version: &str,
    scored: &[ScoredTrial<'_>],
    detectors: &[Detector],
    group_gap: usize,
) -> Result<AnalysisReport, Failure> {
    let nominal: Vec<(&Trial, &[usize])> = scored
        .iter()
        .filter(|s| s.role == TrialRole::TestNominal)
        .map(|s| (s.trial, s.predictions))
        .collect();
    let identification =
        if nominal.is_empty() { None } else { Some(ident_section(&nominal)?) };

    let anomalous: Vec<&ScoredTrial> =
        scored.iter().filter(|s| s.role == TrialRole::TestAnomalous).collect();
    let suite = if anomalous.is_empty() || detectors.is_empty() {
        None
    } else {
        let mut sections = BTreeMap::new();
        for &det in detectors {
            let mut pooled = AnomalyCounts::default();
            for s in &anomalous {
                pooled.merge(match_anomalies(s.timeline, det, s.trial, group_gap));
            }
            sections.insert(det.to_string(), detector_section(pooled));
        }
        Some(sections)
    };

    let nominal_scored: Vec<&ScoredTrial> =
        scored.iter().filter(|s| s.role == TrialRole::TestNominal).collect();
    let nominal_false_events = if nominal_scored.is_empty() || detectors.is_empty() {
        None
    } else {
        let mut counts = BTreeMap::new();
        for &det in detectors {
            let total: usize = nominal_scored
                .iter()
                .map(|s| match_anomalies(s.timeline, det, s.trial, group_gap).false_pos)
                .sum();
            counts.insert(det.to_string(), total);
        }
        Some(counts)
    };

    let recovering: Vec<&ScoredTrial> = scored
        .iter()
        .filter(|s| !s.trial.recovery_windows.is_empty())
        .collect();
    let recovery = if recovering.is_empty() || detectors.is_empty() {
        None
    } else {
        let mut counts = BTreeMap::new();
        for &det in detectors {
            let mut total = 0usize;
            for s in &recovering {
                total += post_recovery_fp(s.timeline, det, s.trial, group_gap)?;
            }
            counts.insert(det.to_string(), total);
        }
        Some(counts)
    };

    Ok(AnalysisReport {
        version: version.to_string(),
        group_gap,
        detectors: detectors.iter().map(|d| d.to_string()).collect(),
        identification,
        anomalous: suite,
        nominal_false_events,
        recovery,
    })
}

/// Checks the documented thresholds against whichever sections the report
/// carries; absent sections impose nothing. Returns every missed gate.
pub fn gate_failures(report: &AnalysisReport) -> Vec<String> {
    let mut fails = Vec::new();
    if let Some(ident) = &report.identification {
        if ident.accuracy < GATE_ACCURACY {
            fails.push(format!(
                "identification accuracy {:.4} below {GATE_ACCURACY}",
                ident.accuracy
            ));
        }
        for (skill, d) in ident.skills.iter().zip(&ident.diagonal) {
            if *d < GATE_DIAGONAL {
                fails.push(format!(
                    "skill {skill} diagonal rate {d:.4} below {GATE_DIAGONAL}"
                ));
            }
        }
        for (name, summary) in [
            ("first-occurrence", &ident.reaction_first_occurrence),
            ("first-successive-10", &ident.reaction_first_successive_10),
        ] {
            if summary.missed > 0 {
                fails.push(format!(
                    "{} skill beginnings never predicted under {name}",
                    summary.missed
                ));
            }
            match summary.mean_abs_pct {
                Some(pct) if pct <= GATE_REACTION_PCT => {}
                Some(pct) => fails.push(format!(
                    "mean |reaction| {pct:.2}% above {GATE_REACTION_PCT}% under {name}"
                )),
                None => {}
            }
        }
    }
    if let Some(suite) = &report.anomalous {
        if let Some(g) = suite.get("gradient") {
            if g.recall < 1.0 {
                fails.push(format!("gradient recall {:.4} below 1.0", g.recall));
            }
            if g.f_score < GATE_F_SCORE {
                fails.push(format!(
                    "gradient F-score {:.4} below {GATE_F_SCORE}",
                    g.f_score
                ));
            }
        }
        if let (Some(g), Some(d), Some(m)) =
            (suite.get("gradient"), suite.get("dod"), suite.get("magnitude"))
        {
            if !(g.f_score > d.f_score && d.f_score > m.f_score) {
                fails.push(format!(
                    "F-score ordering gradient > dod > magnitude violated: {:.4} / {:.4} / {:.4}",
                    g.f_score, d.f_score, m.f_score
                ));
            }
            if m.precision >= g.precision {
                fails.push(format!(
                    "magnitude precision {:.4} not below gradient precision {:.4}",
                    m.precision, g.precision
                ));
            }
        }
    }
    if let Some(recovery) = &report.recovery {
        if let Some(&g) = recovery.get("gradient") {
            if g != 0 {
                fails.push(format!("{g} gradient events after recovery, expected none"));
            }
        }
        if let Some(&m) = recovery.get("magnitude") {
            if m == 0 {
                fails.push("no magnitude events after recovery, expected at least one".into());
            }
        }
    }
    fails
}

pub fn apply_gates(report: &AnalysisReport, assert_gates: bool) -> Result<(), Failure> {
    if !assert_gates {
        return Ok(());
    }
    let fails = gate_failures(report);
    if fails.is_empty() {
        Ok(())
    } else {
        Err(Failure::Gate(fails))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn section(true_pos: usize, false_pos: usize, false_neg: usize) -> DetectorSection {
        detector_section(AnomalyCounts { true_pos, false_pos, false_neg })
    }

    fn bare_report() -> AnalysisReport {
        AnalysisReport {
            version: "test/1".into(),
            group_gap: 5,
            detectors: Vec::new(),
            identification: None,
            anomalous: None,
            nominal_false_events: None,
            recovery: None,
        }
    }

    #[test]
    fn report_without_sections_passes_all_gates() {
        assert!(gate_failures(&bare_report()).is_empty());
    }

    #[test]
    fn detector_suite_gates_accept_the_expected_ordering() {
        let mut report = bare_report();
        report.anomalous = Some(BTreeMap::from([
            ("gradient".to_string(), section(14, 0, 0)),
            ("dod".to_string(), section(13, 1, 1)),
            ("magnitude".to_string(), section(14, 16, 0)),
        ]));
        assert!(gate_failures(&report).is_empty());
    }

    #[test]
    fn detector_suite_gates_flag_inverted_ordering_and_lost_recall() {
        let mut report = bare_report();
        report.anomalous = Some(BTreeMap::from([
            ("gradient".to_string(), section(10, 6, 4)),
            ("dod".to_string(), section(13, 1, 1)),
            ("magnitude".to_string(), section(14, 0, 0)),
        ]));
        let fails = gate_failures(&report);
        assert!(fails.iter().any(|f| f.contains("ordering")));
        assert!(fails.iter().any(|f| f.contains("recall")));
    }

    #[test]
    fn recovery_gates_want_magnitude_events_but_no_gradient_events() {
        let mut report = bare_report();
        report.recovery = Some(BTreeMap::from([
            ("gradient".to_string(), 0usize),
            ("magnitude".to_string(), 3),
        ]));
        assert!(gate_failures(&report).is_empty());

        report.recovery = Some(BTreeMap::from([
            ("gradient".to_string(), 2usize),
            ("magnitude".to_string(), 0),
        ]));
        assert_eq!(gate_failures(&report).len(), 2);
    }

    #[test]
    fn identification_gates_check_accuracy_diagonals_and_reactions() {
        let mut report = bare_report();
        report.identification = Some(IdentSection {
            trials: 1,
            accuracy: 0.90,
            skills: vec![1, 2],
            confusion_rates: vec![vec![0.89, 0.11], vec![0.0, 1.0]],
            diagonal: vec![0.89, 1.0],
            reaction_first_occurrence: ReactionSummary {
                missed: 1,
                mean_abs_pct: Some(6.0),
                mean_signed_pct: Some(-6.0),
            },
            reaction_first_successive_10: ReactionSummary {
                missed: 0,
                mean_abs_pct: Some(1.0),
                mean_signed_pct: Some(1.0),
            },
        });
        let fails = gate_failures(&report);
        assert_eq!(fails.len(), 4, "accuracy, diagonal, missed block, reaction: {fails:?}");
    }
}
