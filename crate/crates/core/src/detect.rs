//! Online skill identification and anomaly detection from forward
//! log-likelihood gradients.
//!
//! One model per skill runs over the stream. The per-step gradient
//! `∇L_t = L_t - L_{t-1}` is cheap to maintain, nearly memoryless, and
//! drives both decisions: the active skill is the model with the largest
//! gradient, and an anomaly fires when the active model's gradient falls
//! below a calibrated floor. Two baselines run alongside for comparison: a
//! magnitude threshold on the cumulative log-likelihood (`μ - kσ` curves
//! from nominal runs) and the derivative of the gap between the cumulative
//! value and that threshold curve.
//!
//! Anomaly tests at step `t` always run against the hypothesis held before
//! step `t` was processed; the identification update happens afterwards.
//! This keeps a collision that causes an immediate hypothesis flip from
//! hiding behind its own post-switch suppression window.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{HmmModel, LogBelief, ObservationSequence};
use crate::math::{linear_resample, mean, sample_std};

/// Advances a forward belief by one observation, returning the new belief
/// and the log-likelihood gradient contributed by this step.
pub fn forward_gradient(
    model: &HmmModel,
    belief: &LogBelief,
    y: &[f64],
) -> Result<(LogBelief, f64)> {
    let next = model.forward_step(belief, y)?;
    let grad = next.loglik - belief.loglik;
    Ok((next, grad))
}

/// Gradient series `∇L_t` for `t = 2..=T`; length `T - 1`.
pub fn gradient_series(model: &HmmModel, obs: &ObservationSequence) -> Result<Vec<f64>> {
    let mut belief = model.forward_init(obs.row(0))?;
    let mut grads = Vec::with_capacity(obs.len().saturating_sub(1));
    for t in 1..obs.len() {
        let (next, g) = forward_gradient(model, &belief, obs.row(t))?;
        belief = next;
        grads.push(g);
    }
    Ok(grads)
}

/// Nominal gradient envelope for one skill model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCalibration {
    pub model_id: String,
    pub grad_min: f64,
    pub grad_max: f64,
    pub grad_range: f64,
}

impl GradientCalibration {
    /// Anomaly floor: half a nominal range below the nominal minimum.
    pub fn threshold(&self) -> f64 {
        self.grad_min - self.grad_range / 2.0
    }
}

/// Scans nominal sequences for the extreme gradients of `model`.
pub fn calibrate_gradient(
    model: &HmmModel,
    seqs: &[ObservationSequence],
    model_id: &str,
) -> Result<GradientCalibration> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut seen = false;
    for seq in seqs {
        for g in gradient_series(model, seq)? {
            if !g.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "gradient calibration hit a non-finite gradient ({g})"
                )));
            }
            lo = lo.min(g);
            hi = hi.max(g);
            seen = true;
        }
    }
    if !seen {
        return Err(Error::InvalidInput(
            "gradient calibration needs at least one sequence of length >= 2".into(),
        ));
    }
    Ok(GradientCalibration {
        model_id: model_id.to_string(),
        grad_min: lo,
        grad_max: hi,
        grad_range: hi - lo,
    })
}

/// True when a gradient falls below the calibrated anomaly floor.
pub fn gradient_anomaly_test(grad: f64, cal: &GradientCalibration) -> bool {
    grad < cal.threshold()
}

/// Per-step `μ - kσ` envelope over nominal cumulative log-likelihood, plus
/// the spike threshold for the derivative-of-difference baseline that is
/// calibrated from the same runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeThreshold {
    pub model_id: String,
    pub k: f64,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub dod_threshold: f64,
}

impl MagnitudeThreshold {
    pub fn curve_len(&self) -> usize {
        self.mu.len()
    }

    /// Threshold at a 0-based step index; indices past the calibrated curve
    /// clamp to its last point.
    pub fn threshold_at(&self, idx: usize) -> f64 {
        let i = idx.min(self.mu.len() - 1);
        self.mu[i] - self.k * self.sigma[i]
    }
}

/// Builds the magnitude envelope from nominal cumulative log-likelihood
/// curves. Curves are linearly resampled to the median nominal length
/// (lower median) before the per-step mean and sample standard deviation
/// are taken, so runs of different durations line up.
pub fn calibrate_magnitude(
    model: &HmmModel,
    seqs: &[ObservationSequence],
    k: f64,
    model_id: &str,
) -> Result<MagnitudeThreshold> {
    if seqs.len() < 2 {
        return Err(Error::InvalidInput(
            "magnitude calibration needs at least two nominal sequences".into(),
        ));
    }
    if !(k.is_finite() && k >= 0.0) {
        return Err(Error::InvalidInput("k must be finite and non-negative".into()));
    }
    let curves: Vec<Vec<f64>> = seqs
        .iter()
        .map(|s| model.loglik_series(s))
        .collect::<Result<_>>()?;
    let mut lengths: Vec<usize> = curves.iter().map(|c| c.len()).collect();
    lengths.sort_unstable();
    let target = lengths[(lengths.len() - 1) / 2];
    if target < 2 {
        return Err(Error::InvalidInput(
            "magnitude calibration needs sequences of length >= 2".into(),
        ));
    }
    let resampled: Vec<Vec<f64>> = curves.iter().map(|c| linear_resample(c, target)).collect();
    let mut mu = Vec::with_capacity(target);
    let mut sigma = Vec::with_capacity(target);
    let mut column = vec![0.0; resampled.len()];
    for i in 0..target {
        for (j, c) in resampled.iter().enumerate() {
            column[j] = c[i];
        }
        mu.push(mean(&column));
        sigma.push(sample_std(&column));
    }
    let thr = MagnitudeThreshold {
        model_id: model_id.to_string(),
        k,
        mu,
        sigma,
        dod_threshold: 0.0,
    };
    // Spike threshold: the largest per-step rise of |L_t - (μ - kσ)| seen
    // across the nominal curves themselves, with headroom.
    let mut max_rise = f64::NEG_INFINITY;
    for curve in &curves {
        let mut d_prev = (curve[0] - thr.threshold_at(0)).abs();
        for (t0, &l) in curve.iter().enumerate().skip(1) {
            let d = (l - thr.threshold_at(t0)).abs();
            max_rise = max_rise.max(d - d_prev);
            d_prev = d;
        }
    }
    let dod_threshold = (max_rise * 1.5).max(1e-6);
    Ok(MagnitudeThreshold { dod_threshold, ..thr })
}

/// True when the cumulative log-likelihood at step index `idx` falls below
/// the envelope.
pub fn magnitude_anomaly_test(cum_loglik: f64, idx: usize, thr: &MagnitudeThreshold) -> bool {
    cum_loglik < thr.threshold_at(idx)
}

/// Derivative-of-difference test at 1-based step `t` of a cumulative
/// log-likelihood series: true when `|L - threshold|` rose by more than the
/// calibrated spike threshold since the previous step.
pub fn dod_anomaly_test(thr: &MagnitudeThreshold, l_series: &[f64], t: usize) -> Result<bool> {
    if t < 2 || t > l_series.len() {
        return Err(Error::InvalidInput(format!(
            "derivative test needs 2 <= t <= series length, got t={t} over {} steps",
            l_series.len()
        )));
    }
    let d_cur = (l_series[t - 1] - thr.threshold_at(t - 1)).abs();
    let d_prev = (l_series[t - 2] - thr.threshold_at(t - 2)).abs();
    Ok(d_cur - d_prev > thr.dod_threshold)
}

/// Which anomaly test produced an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detector {
    Gradient,
    Magnitude,
    Dod,
}

impl std::fmt::Display for Detector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Detector::Gradient => "gradient",
            Detector::Magnitude => "magnitude",
            Detector::Dod => "dod",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// The skill hypothesis changed (also emitted once at stream start).
    Identification,
    Anomaly,
}

/// One detector decision, timestamped with the 1-based stream step.
///
/// For identifications, `skill` is the new hypothesis and `value` the
/// winning gradient (initial log-likelihood at `t = 1`). For anomalies,
/// `skill` is the hypothesis that was under test and `value` the margin:
/// the raw gradient, the cumulative log-likelihood minus the envelope, or
/// the spike size, per detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: usize,
    pub kind: EventKind,
    pub skill: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    #[serde(default)]
    pub detector: Option<Detector>,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventTimeline {
    pub events: Vec<Event>,
}

impl EventTimeline {
    pub fn anomalies(&self) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(|e| e.kind == EventKind::Anomaly)
    }

    pub fn anomalies_for(&self, det: Detector) -> impl Iterator<Item = &Event> {
        self.anomalies().filter(move |e| e.detector == Some(det))
    }

    pub fn identifications(&self) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(|e| e.kind == EventKind::Identification)
    }
}

#[derive(Debug, Clone)]
pub struct DetectorConfig {
    /// Anomaly tests to run; identification always runs.
    pub detectors: Vec<Detector>,
    /// Steps after a hypothesis switch during which anomaly tests pause.
    pub suppression_window: usize,
    /// Raw triggers closer than this to the previous raw trigger of the
    /// same detector fold into the same event.
    pub group_gap: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            detectors: vec![Detector::Gradient, Detector::Magnitude, Detector::Dod],
            suppression_window: 3,
            group_gap: 5,
        }
    }
}

/// Per-model forward traces kept by a detection run. `loglik[t-1]` is
/// `L_t`; `gradient[t-2]` is `∇L_t` (gradients start at `t = 2`).
#[derive(Debug, Clone)]
pub struct ModelTrace {
    pub loglik: Vec<f64>,
    pub gradient: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DetectionRun {
    pub timeline: EventTimeline,
    /// Skill hypothesis after each step was processed; length `T`.
    pub predictions: Vec<usize>,
    pub traces: BTreeMap<usize, ModelTrace>,
}

/// Largest-gradient skill, lowest id on ties. `None` when empty.
pub fn identify_skill(gradients: &BTreeMap<usize, f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (&id, &g) in gradients {
        match best {
            Some((_, bg)) if g <= bg => {}
            _ => best = Some((id, g)),
        }
    }
    best.map(|(id, _)| id)
}

/// Whole-sequence log-likelihood under every model.
pub fn cumulative_scores(
    models: &BTreeMap<usize, HmmModel>,
    obs: &ObservationSequence,
) -> Result<BTreeMap<usize, f64>> {
    models
        .iter()
        .map(|(&id, m)| Ok((id, m.loglik(obs)?)))
        .collect()
}

/// Offline identification baseline: the skill whose model assigns the whole
/// sequence the highest cumulative log-likelihood, lowest id on ties.
pub fn score_skill_cumulative(
    models: &BTreeMap<usize, HmmModel>,
    obs: &ObservationSequence,
) -> Result<usize> {
    let scores = cumulative_scores(models, obs)?;
    identify_skill(&scores)
        .ok_or_else(|| Error::InvalidInput("scoring needs at least one model".into()))
}

/// Runs identification plus the configured anomaly tests over one stream.
///
/// All models advance a global belief from `t = 1`. The magnitude and
/// derivative-of-difference baselines additionally keep a skill-local
/// belief that restarts whenever the hypothesis switches, so their
/// envelope curves (calibrated on per-skill segments) stay aligned with
/// steps-since-switch.
///
/// A raw trigger is discarded when identification moves to a model whose
/// gradient is nominal on the same step: the outgoing model's poor fit is
/// explained by the skill change, not an anomaly. Triggers survive a
/// simultaneous switch when nothing fits (a collision flips the argmax,
/// but the winner is anomalous too), which keeps onset detection intact.
/// A switch also closes every open trigger group, so evidence gathered
/// under different hypotheses never folds into one event.
pub fn run_detector(
    models: &BTreeMap<usize, HmmModel>,
    grad_cal: &BTreeMap<usize, GradientCalibration>,
    mag_cal: &BTreeMap<usize, MagnitudeThreshold>,
    obs: &ObservationSequence,
    config: &DetectorConfig,
) -> Result<DetectionRun> {
    if models.is_empty() {
        return Err(Error::InvalidInput("detection needs at least one model".into()));
    }
    let mut detectors = config.detectors.clone();
    detectors.sort_unstable();
    detectors.dedup();
    let needs_mag = detectors.iter().any(|d| matches!(d, Detector::Magnitude | Detector::Dod));
    for (&id, m) in models {
        if m.dim() != obs.dim() {
            return Err(Error::DimensionMismatch {
                context: "detector model vs observation",
                expected: obs.dim(),
                got: m.dim(),
            });
        }
        if detectors.contains(&Detector::Gradient) && !grad_cal.contains_key(&id) {
            return Err(Error::InvalidInput(format!(
                "gradient detector enabled but skill {id} has no gradient calibration"
            )));
        }
        if needs_mag && !mag_cal.contains_key(&id) {
            return Err(Error::InvalidInput(format!(
                "magnitude/dod detector enabled but skill {id} has no magnitude calibration"
            )));
        }
    }

    let ids: Vec<usize> = models.keys().copied().collect();
    let y0 = obs.row(0);
    let mut beliefs: BTreeMap<usize, LogBelief> = BTreeMap::new();
    let mut traces: BTreeMap<usize, ModelTrace> = BTreeMap::new();
    for &id in &ids {
        let b = models[&id].forward_init(y0)?;
        traces.insert(
            id,
            ModelTrace {
                loglik: vec![b.loglik],
                gradient: Vec::with_capacity(obs.len().saturating_sub(1)),
            },
        );
        beliefs.insert(id, b);
    }

    // Initial hypothesis: best initial log-likelihood, lowest id on ties.
    let init_scores: BTreeMap<usize, f64> =
        beliefs.iter().map(|(&id, b)| (id, b.loglik)).collect();
    let mut hyp = identify_skill(&init_scores).expect("non-empty model bank");

    let mut events = vec![Event {
        t: 1,
        kind: EventKind::Identification,
        skill: hyp,
        detector: None,
        value: init_scores[&hyp],
    }];
    let mut predictions = Vec::with_capacity(obs.len());
    predictions.push(hyp);

    let mut local = beliefs[&hyp].clone();
    let mut local_idx = 0usize;
    let mut d_prev: Option<f64> = if needs_mag {
        Some((local.loglik - mag_cal[&hyp].threshold_at(0)).abs())
    } else {
        None
    };
    let mut suppress_until = 0usize;
    let mut last_raw: BTreeMap<Detector, usize> = BTreeMap::new();
    let mut step_grads: BTreeMap<usize, f64> = BTreeMap::new();

    for t in 2..=obs.len() {
        let y = obs.row(t - 1);
        for &id in &ids {
            let (next, g) = forward_gradient(&models[&id], &beliefs[&id], y)?;
            let trace = traces.get_mut(&id).expect("trace exists");
            trace.loglik.push(next.loglik);
            trace.gradient.push(g);
            beliefs.insert(id, next);
            step_grads.insert(id, g);
        }

        local = models[&hyp].forward_step(&local, y)?;
        local_idx += 1;
        let d_cur = if needs_mag {
            Some((local.loglik - mag_cal[&hyp].threshold_at(local_idx)).abs())
        } else {
            None
        };

        let mut raw_hits: Vec<(Detector, f64)> = Vec::new();
        if t > suppress_until {
            for &det in &detectors {
                let trigger = match det {
                    Detector::Gradient => {
                        let g = step_grads[&hyp];
                        gradient_anomaly_test(g, &grad_cal[&hyp]).then_some(g)
                    }
                    Detector::Magnitude => {
                        let thr = &mag_cal[&hyp];
                        magnitude_anomaly_test(local.loglik, local_idx, thr)
                            .then(|| local.loglik - thr.threshold_at(local_idx))
                    }
                    Detector::Dod => match (d_prev, d_cur) {
                        (Some(dp), Some(dc)) => {
                            let rise = dc - dp;
                            (rise > mag_cal[&hyp].dod_threshold).then_some(rise)
                        }
                        _ => None,
                    },
                };
                if let Some(value) = trigger {
                    raw_hits.push((det, value));
                }
            }
        }
        d_prev = d_cur;

        let s_hat = identify_skill(&step_grads).expect("non-empty model bank");
        if s_hat != hyp {
            // Triggers raised against the outgoing model are dropped when
            // the incoming model fits nominally: the step is a skill
            // boundary, not an anomaly. Absent a calibration for the new
            // model the switch alone absolves.
            let explained = grad_cal
                .get(&s_hat)
                .is_none_or(|c| !gradient_anomaly_test(step_grads[&s_hat], c));
            if explained {
                raw_hits.clear();
            }
        }
        for (det, value) in raw_hits {
            let grouped = last_raw
                .get(&det)
                .is_none_or(|&prev| t - prev > config.group_gap);
            if grouped {
                events.push(Event {
                    t,
                    kind: EventKind::Anomaly,
                    skill: hyp,
                    detector: Some(det),
                    value,
                });
            }
            last_raw.insert(det, t);
        }

        if s_hat != hyp {
            hyp = s_hat;
            events.push(Event {
                t,
                kind: EventKind::Identification,
                skill: hyp,
                detector: None,
                value: step_grads[&hyp],
            });
            suppress_until = t + config.suppression_window;
            local = models[&hyp].forward_init(y)?;
            local_idx = 0;
            d_prev = needs_mag
                .then(|| (local.loglik - mag_cal[&hyp].threshold_at(0)).abs());
            // Triggers under the old hypothesis must not chain with triggers
            // under the new one; each skill context groups its own events.
            last_raw.clear();
        }
        predictions.push(hyp);
    }

    Ok(DetectionRun {
        timeline: EventTimeline { events },
        predictions,
        traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{Covariance, Gaussian};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn single_state(mean: f64, var: f64) -> HmmModel {
        HmmModel::new(
            vec![1.0],
            vec![1.0],
            vec![Gaussian::new(vec![mean], Covariance::Diag(vec![var])).unwrap()],
        )
        .unwrap()
    }

    fn seq_of(vals: &[f64]) -> ObservationSequence {
        ObservationSequence::from_rows(vals.iter().map(|&v| vec![v]).collect(), 0.01).unwrap()
    }

    fn noisy(rng: &mut ChaCha8Rng, n: usize, mean: f64, sd: f64) -> Vec<f64> {
        (0..n).map(|_| mean + sd * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    /// Two single-state skills around 0 and 8 plus calibrations built from
    /// nominal segments.
    fn two_skill_bank(
        rng: &mut ChaCha8Rng,
    ) -> (
        BTreeMap<usize, HmmModel>,
        BTreeMap<usize, GradientCalibration>,
        BTreeMap<usize, MagnitudeThreshold>,
    ) {
        let mut models = BTreeMap::new();
        models.insert(1, single_state(0.0, 0.25));
        models.insert(2, single_state(8.0, 0.25));
        let mut grad = BTreeMap::new();
        let mut mag = BTreeMap::new();
        for (&id, model) in &models {
            let center = model.emissions()[0].mean()[0];
            let segs: Vec<_> = (0..4).map(|_| seq_of(&noisy(rng, 30, center, 0.5))).collect();
            grad.insert(id, calibrate_gradient(model, &segs, &format!("skill-{id}")).unwrap());
            mag.insert(id, calibrate_magnitude(model, &segs, 3.0, &format!("skill-{id}")).unwrap());
        }
        (models, grad, mag)
    }

    #[test]
    fn gradients_telescope_back_to_total_loglik() {
        let model = single_state(1.0, 0.5);
        let obs = seq_of(&[1.0, 0.5, 2.0, 1.5, 0.8]);
        let series = model.loglik_series(&obs).unwrap();
        let grads = gradient_series(&model, &obs).unwrap();
        assert_eq!(grads.len(), 4);
        let total = series[0] + grads.iter().sum::<f64>();
        assert!((total - series[4]).abs() < 1e-9);
        for (i, g) in grads.iter().enumerate() {
            assert!((g - (series[i + 1] - series[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_threshold_formula() {
        let cal = GradientCalibration {
            model_id: "m".into(),
            grad_min: 2.0,
            grad_max: 10.0,
            grad_range: 8.0,
        };
        assert_eq!(cal.threshold(), -2.0);
        assert!(!gradient_anomaly_test(-1.9, &cal));
        assert!(gradient_anomaly_test(-2.1, &cal));
    }

    #[test]
    fn calibrated_envelope_covers_its_own_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = single_state(0.0, 1.0);
        let segs: Vec<_> = (0..3).map(|_| seq_of(&noisy(&mut rng, 40, 0.0, 1.0))).collect();
        let cal = calibrate_gradient(&model, &segs, "m").unwrap();
        assert!((cal.grad_range - (cal.grad_max - cal.grad_min)).abs() < 1e-12);
        for seg in &segs {
            for g in gradient_series(&model, seg).unwrap() {
                assert!(!gradient_anomaly_test(g, &cal));
            }
        }
    }

    #[test]
    fn magnitude_curve_shape_and_clamping() {
        let model = single_state(0.0, 1.0);
        let a = seq_of(&vec![0.0; 10]);
        let b = seq_of(&vec![0.0; 12]);
        let thr = calibrate_magnitude(&model, &[a.clone(), b], 3.0, "m").unwrap();
        // Lower median of {10, 12} is 10.
        assert_eq!(thr.curve_len(), 10);
        let step = model.emissions()[0].log_pdf(&[0.0]);
        assert!((thr.mu[0] - step).abs() < 1e-9);
        assert!(thr.sigma[0].abs() < 1e-9);
        // Past the curve end the threshold stays at the last point.
        assert_eq!(thr.threshold_at(9), thr.threshold_at(500));
        assert!(thr.dod_threshold >= 1e-6);
        assert!(!magnitude_anomaly_test(model.loglik(&a).unwrap(), 9, &thr));
    }

    #[test]
    fn magnitude_needs_two_sequences() {
        let model = single_state(0.0, 1.0);
        let a = seq_of(&[0.0, 0.1, 0.2]);
        assert!(calibrate_magnitude(&model, &[a], 3.0, "m").is_err());
    }

    #[test]
    fn derivative_test_flags_step_change_in_gap() {
        let thr = MagnitudeThreshold {
            model_id: "m".into(),
            k: 0.0,
            mu: vec![0.0; 6],
            sigma: vec![0.0; 6],
            dod_threshold: 1.0,
        };
        // |L - 0| rises by 0.5/step, then jumps by 3 at t = 4.
        let series = vec![-0.5, -1.0, -1.5, -4.5, -5.0, -5.5];
        assert!(!dod_anomaly_test(&thr, &series, 2).unwrap());
        assert!(dod_anomaly_test(&thr, &series, 4).unwrap());
        assert!(!dod_anomaly_test(&thr, &series, 5).unwrap());
        assert!(dod_anomaly_test(&thr, &series, 1).is_err());
        assert!(dod_anomaly_test(&thr, &series, 7).is_err());
    }

    #[test]
    fn cumulative_scoring_picks_generating_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        let (models, _, _) = two_skill_bank(&mut rng);
        let obs = seq_of(&noisy(&mut rng, 25, 8.0, 0.5));
        assert_eq!(score_skill_cumulative(&models, &obs).unwrap(), 2);
        let scores = cumulative_scores(&models, &obs).unwrap();
        assert!(scores[&2] > scores[&1]);
    }

    #[test]
    fn identify_breaks_ties_toward_lowest_id() {
        let mut g = BTreeMap::new();
        g.insert(3, 1.0);
        g.insert(1, 1.0);
        g.insert(2, 0.5);
        assert_eq!(identify_skill(&g), Some(1));
        assert_eq!(identify_skill(&BTreeMap::new()), None);
    }

    #[test]
    fn detector_tracks_skill_change() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (models, grad, mag) = two_skill_bank(&mut rng);
        let mut vals = noisy(&mut rng, 30, 0.0, 0.5);
        vals.extend(noisy(&mut rng, 30, 8.0, 0.5));
        let obs = seq_of(&vals);
        let run = run_detector(&models, &grad, &mag, &obs, &DetectorConfig::default()).unwrap();
        assert_eq!(run.predictions.len(), 60);
        assert_eq!(run.predictions[0], 1);
        assert_eq!(run.predictions[59], 2);
        // The switch lands within a few steps of the true boundary at 31.
        let switch = run.predictions.iter().position(|&p| p == 2).unwrap() + 1;
        assert!((31..=34).contains(&switch), "switched at {switch}");
        assert_eq!(run.traces[&1].loglik.len(), 60);
        assert_eq!(run.traces[&1].gradient.len(), 59);
    }

    #[test]
    fn gradient_detector_flags_outlier_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let (models, grad, mag) = two_skill_bank(&mut rng);
        let one_model: BTreeMap<usize, HmmModel> =
            models.iter().filter(|(id, _)| **id == 1).map(|(i, m)| (*i, m.clone())).collect();
        let mut vals = noisy(&mut rng, 60, 0.0, 0.5);
        vals[44] = 100.0;
        let obs = seq_of(&vals);
        let cfg = DetectorConfig {
            detectors: vec![Detector::Gradient],
            ..DetectorConfig::default()
        };
        let run = run_detector(&one_model, &grad, &mag, &obs, &cfg).unwrap();
        let anomalies: Vec<_> = run.timeline.anomalies_for(Detector::Gradient).collect();
        // The bad step triggers at 45 and the rebound gradient at 46 is
        // large positive, not low, so one grouped event covers it all.
        assert_eq!(anomalies.len(), 1, "events: {anomalies:?}");
        assert_eq!(anomalies[0].t, 45);
        assert_eq!(anomalies[0].skill, 1);
        assert!(anomalies[0].value < grad[&1].threshold());
    }

    #[test]
    fn anomaly_test_runs_before_hypothesis_switch() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let (models, grad, mag) = two_skill_bank(&mut rng);
        // Garbage right at the boundary: the test at t = 31 must run against
        // the outgoing hypothesis (skill 1) even though identification will
        // move away from it on the same step.
        let mut vals = noisy(&mut rng, 30, 0.0, 0.5);
        vals.push(-60.0);
        vals.extend(noisy(&mut rng, 29, 8.0, 0.5));
        let obs = seq_of(&vals);
        let cfg = DetectorConfig {
            detectors: vec![Detector::Gradient],
            ..DetectorConfig::default()
        };
        let run = run_detector(&models, &grad, &mag, &obs, &cfg).unwrap();
        let at_boundary: Vec<_> =
            run.timeline.anomalies().filter(|e| e.t == 31).collect();
        assert_eq!(at_boundary.len(), 1);
        assert_eq!(at_boundary[0].skill, 1);
    }

    #[test]
    fn sustained_trigger_groups_into_one_event() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let (models, grad, mag) = two_skill_bank(&mut rng);
        let mut vals = noisy(&mut rng, 60, 0.0, 0.5);
        // Four consecutive bad steps, then a second burst 10 steps after the
        // last raw trigger.
        for t in 40..44 {
            vals[t] = 50.0;
        }
        vals[53] = 50.0;
        let obs = seq_of(&vals);
        let cfg = DetectorConfig {
            detectors: vec![Detector::Gradient],
            suppression_window: 0,
            group_gap: 5,
        };
        // Single-model bank keeps identification from flipping away.
        let one_model: BTreeMap<usize, HmmModel> =
            models.iter().filter(|(id, _)| **id == 1).map(|(i, m)| (*i, m.clone())).collect();
        let run = run_detector(&one_model, &grad, &mag, &obs, &cfg).unwrap();
        let ts: Vec<usize> = run.timeline.anomalies().map(|e| e.t).collect();
        // Raw triggers at 41..=44 (grouped to one) plus recovery step 45
        // also triggers (gradient climbing back is fine, staying low is not);
        // the burst at 54 is a separate event.
        assert!(ts.contains(&41));
        assert!(ts.contains(&54));
        assert!(!ts.contains(&42) && !ts.contains(&43) && !ts.contains(&44));
    }

    #[test]
    fn suppression_pauses_tests_after_switch() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let (models, grad, mag) = two_skill_bank(&mut rng);
        // Clean switch, then garbage 2 steps after it: inside the default
        // suppression window, so no anomaly; with window 0 it fires.
        let mut vals = noisy(&mut rng, 30, 0.0, 0.5);
        vals.extend(noisy(&mut rng, 30, 8.0, 0.5));
        vals[33] = 100.0;
        let obs = seq_of(&vals);
        let base = DetectorConfig {
            detectors: vec![Detector::Gradient],
            ..DetectorConfig::default()
        };
        let run = run_detector(&models, &grad, &mag, &obs, &base).unwrap();
        let switch_t = run
            .timeline
            .identifications()
            .find(|e| e.skill == 2)
            .map(|e| e.t)
            .unwrap();
        assert_eq!(switch_t, 31);
        assert!(run.timeline.anomalies().all(|e| e.t != 34));
        // With suppression off (and grouping disabled so the boundary
        // trigger at 31 cannot swallow it) the same step fires.
        let eager = DetectorConfig { suppression_window: 0, group_gap: 0, ..base };
        let run2 = run_detector(&models, &grad, &mag, &obs, &eager).unwrap();
        assert!(run2.timeline.anomalies().any(|e| e.t == 34));
    }

    #[test]
    fn run_detector_validates_calibrations() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let (models, grad, _) = two_skill_bank(&mut rng);
        let obs = seq_of(&noisy(&mut rng, 10, 0.0, 0.5));
        let cfg = DetectorConfig::default();
        let empty_mag = BTreeMap::new();
        assert!(run_detector(&models, &grad, &empty_mag, &obs, &cfg).is_err());
        let grad_only = DetectorConfig {
            detectors: vec![Detector::Gradient],
            ..DetectorConfig::default()
        };
        assert!(run_detector(&models, &grad, &empty_mag, &obs, &grad_only).is_ok());
    }
}
