//! Decoded-path diagnostics: incremental Viterbi stability and the quality
//! of the decoded-state approximation to the log-likelihood gradient.
//!
//! When every state prefers itself over any single competitor, growing the
//! observation prefix usually appends one state to the previous best path
//! instead of rewriting it; rewrites cluster around state transitions. That
//! same stability is what makes `∇L_t ≈ log b_ẑ(y_t) + log A_{ẑ'ẑ}` a good
//! local reading of the gradient, and this module measures both effects.

use crate::error::Result;
use crate::hmm::{backtrack, HmmModel, ObservationSequence};

/// Best state paths for every prefix of a sequence.
#[derive(Debug, Clone)]
pub struct IncrementalViterbiTrace {
    /// `paths[p]` decodes the prefix of length `p + 1`.
    pub paths: Vec<Vec<usize>>,
}

impl IncrementalViterbiTrace {
    pub fn final_path(&self) -> &[usize] {
        self.paths.last().expect("at least one prefix")
    }
}

/// Decodes every prefix of `obs`. One shared lattice serves all prefixes,
/// so cost is one Viterbi pass plus `O(T^2)` backtracking.
pub fn incremental_viterbi(
    model: &HmmModel,
    obs: &ObservationSequence,
) -> Result<IncrementalViterbiTrace> {
    let (delta, psi) = model.viterbi_lattice(obs)?;
    let n = model.n_states();
    let paths = (1..=obs.len())
        .map(|p| backtrack(&psi, &delta[(p - 1) * n..p * n], p, n))
        .collect();
    Ok(IncrementalViterbiTrace { paths })
}

/// A prefix whose decoded path rewrote part of the previous prefix's path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathBreak {
    /// Length of the prefix whose path diverged from its predecessor's.
    pub prefix_len: usize,
    /// First 0-based position where the two paths differ.
    pub first_diff: usize,
    /// How many of the shared positions differ.
    pub len: usize,
}

#[derive(Debug, Clone, Default)]
pub struct BreakReport {
    pub breaks: Vec<PathBreak>,
    /// Largest rewrite seen, in positions.
    pub max_break_len: usize,
    /// 0-based indices `i` of the final path with `path[i] != path[i-1]`.
    pub transitions: Vec<usize>,
}

impl BreakReport {
    /// True when every rewrite stays within `window` positions of a decoded
    /// transition (measured from the break's first divergence).
    pub fn breaks_near_transitions(&self, window: usize) -> bool {
        self.breaks.iter().all(|b| {
            self.transitions
                .iter()
                .any(|&tr| b.first_diff.abs_diff(tr) <= window)
        })
    }
}

/// Compares each prefix path against the next longer one.
pub fn detect_sequence_breaks(trace: &IncrementalViterbiTrace) -> BreakReport {
    let mut report = BreakReport::default();
    for w in trace.paths.windows(2) {
        let (prev, cur) = (&w[0], &w[1]);
        let diffs: Vec<usize> = (0..prev.len()).filter(|&i| prev[i] != cur[i]).collect();
        if let (Some(&first), count) = (diffs.first(), diffs.len()) {
            report.breaks.push(PathBreak {
                prefix_len: cur.len(),
                first_diff: first,
                len: count,
            });
            report.max_break_len = report.max_break_len.max(count);
        }
    }
    let final_path = trace.final_path();
    for i in 1..final_path.len() {
        if final_path[i] != final_path[i - 1] {
            report.transitions.push(i);
        }
    }
    report
}

/// States whose self-transition is not strictly the largest entry of their
/// row; an empty result means stable path expansion is expected.
pub fn self_transition_violations(model: &HmmModel) -> Vec<usize> {
    let n = model.n_states();
    (0..n)
        .filter(|&i| (0..n).any(|j| j != i && model.trans_at(i, j) >= model.trans_at(i, i)))
        .collect()
}

/// Per-state emission log-density curves, `n_states` rows of length `T`.
pub fn emission_curves(model: &HmmModel, obs: &ObservationSequence) -> Vec<Vec<f64>> {
    (0..model.n_states())
        .map(|i| {
            (0..obs.len())
                .map(|t| model.emissions()[i].log_pdf(obs.row(t)))
                .collect()
        })
        .collect()
}

/// Exact gradients next to their decoded-state approximation.
///
/// Index `i` covers step `t = i + 2`: `gradients[i] = L_{t} - L_{t-1}`,
/// `approximations[i] = log b_{ẑ_t}(y_t) + log A_{ẑ_{t-1} ẑ_t}` along the
/// final decoded path.
#[derive(Debug, Clone)]
pub struct CorollaryReport {
    pub gradients: Vec<f64>,
    pub approximations: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl CorollaryReport {
    /// Fraction of steps whose |residual| is at most `tol`, restricted to
    /// `mask` (length `T - 1`) when given.
    pub fn fraction_within(&self, tol: f64, mask: Option<&[bool]>) -> f64 {
        let mut total = 0usize;
        let mut within = 0usize;
        for (i, r) in self.residuals.iter().enumerate() {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            total += 1;
            if r.abs() <= tol {
                within += 1;
            }
        }
        if total == 0 {
            return 1.0;
        }
        within as f64 / total as f64
    }

    /// Median |residual| over `mask` (length `T - 1`) or all steps.
    pub fn median_abs_residual(&self, mask: Option<&[bool]>) -> f64 {
        let mut vals: Vec<f64> = self
            .residuals
            .iter()
            .enumerate()
            .filter(|(i, _)| mask.is_none_or(|m| m[*i]))
            .map(|(_, r)| r.abs())
            .collect();
        if vals.is_empty() {
            return 0.0;
        }
        vals.sort_by(|a, b| a.partial_cmp(b).expect("finite residuals"));
        vals[(vals.len() - 1) / 2]
    }
}

/// Evaluates the decoded-state gradient approximation along `obs`.
pub fn corollary_residuals(model: &HmmModel, obs: &ObservationSequence) -> Result<CorollaryReport> {
    let series = model.loglik_series(obs)?;
    let path = model.viterbi(obs)?.path;
    let mut gradients = Vec::with_capacity(obs.len().saturating_sub(1));
    let mut approximations = Vec::with_capacity(gradients.capacity());
    let mut residuals = Vec::with_capacity(gradients.capacity());
    for t in 1..obs.len() {
        let grad = series[t] - series[t - 1];
        let approx = model.emission_logprob(path[t], obs.row(t))?
            + model.log_trans_at(path[t - 1], path[t]);
        gradients.push(grad);
        approximations.push(approx);
        residuals.push(grad - approx);
    }
    Ok(CorollaryReport {
        gradients,
        approximations,
        residuals,
    })
}

/// Mask over steps `t = 2..=t_len` (length `t_len - 1`) marking steps at
/// least `margin` positions away from every decoded transition.
pub fn stable_steps(t_len: usize, transitions: &[usize], margin: usize) -> Vec<bool> {
    (1..t_len)
        .map(|t0| transitions.iter().all(|&tr| t0.abs_diff(tr) >= margin))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{Covariance, Gaussian};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(mean: f64, var: f64) -> Gaussian {
        Gaussian::new(vec![mean], Covariance::Diag(vec![var])).unwrap()
    }

    fn two_state_chain() -> HmmModel {
        HmmModel::new(
            vec![1.0, 0.0],
            vec![0.95, 0.05, 0.0, 1.0],
            vec![gaussian(0.0, 0.25), gaussian(6.0, 0.25)],
        )
        .unwrap()
    }

    fn step_sequence(rng: &mut ChaCha8Rng, split: usize, total: usize) -> ObservationSequence {
        let rows: Vec<Vec<f64>> = (0..total)
            .map(|t| {
                let base = if t < split { 0.0 } else { 6.0 };
                vec![base + 0.5 * rng.sample::<f64, _>(StandardNormal)]
            })
            .collect();
        ObservationSequence::from_rows(rows, 0.01).unwrap()
    }

    #[test]
    fn incremental_final_prefix_matches_batch_viterbi() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let model = two_state_chain();
        let obs = step_sequence(&mut rng, 20, 40);
        let trace = incremental_viterbi(&model, &obs).unwrap();
        assert_eq!(trace.paths.len(), 40);
        assert_eq!(trace.final_path(), model.viterbi(&obs).unwrap().path.as_slice());
        for (p, path) in trace.paths.iter().enumerate() {
            assert_eq!(path.len(), p + 1);
        }
    }

    #[test]
    fn well_separated_stream_expands_stably() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let model = two_state_chain();
        let obs = step_sequence(&mut rng, 25, 50);
        let trace = incremental_viterbi(&model, &obs).unwrap();
        let report = detect_sequence_breaks(&trace);
        assert_eq!(report.transitions, vec![25]);
        assert!(report.max_break_len <= 1, "breaks: {:?}", report.breaks);
        assert!(report.breaks_near_transitions(1));
    }

    #[test]
    fn self_transition_check_flags_weak_rows() {
        let dominant = two_state_chain();
        assert!(self_transition_violations(&dominant).is_empty());
        let weak = HmmModel::new(
            vec![1.0, 0.0],
            vec![0.4, 0.6, 0.0, 1.0],
            vec![gaussian(0.0, 1.0), gaussian(6.0, 1.0)],
        )
        .unwrap();
        assert_eq!(self_transition_violations(&weak), vec![0]);
    }

    #[test]
    fn single_state_gradient_approximation_is_exact() {
        let model = HmmModel::new(vec![1.0], vec![1.0], vec![gaussian(1.0, 0.5)]).unwrap();
        let rows = vec![vec![1.0], vec![0.5], vec![1.8], vec![1.2]];
        let obs = ObservationSequence::from_rows(rows, 0.01).unwrap();
        let report = corollary_residuals(&model, &obs).unwrap();
        assert_eq!(report.residuals.len(), 3);
        for r in &report.residuals {
            assert!(r.abs() < 1e-12, "residual {r}");
        }
    }

    #[test]
    fn residuals_small_away_from_transitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let model = two_state_chain();
        let obs = step_sequence(&mut rng, 25, 50);
        let report = corollary_residuals(&model, &obs).unwrap();
        let trace = incremental_viterbi(&model, &obs).unwrap();
        let breaks = detect_sequence_breaks(&trace);
        let mask = stable_steps(obs.len(), &breaks.transitions, 2);
        assert_eq!(mask.len(), 49);
        assert!(report.fraction_within(0.05, Some(&mask)) > 0.95);
        assert!(report.median_abs_residual(Some(&mask)) < 0.01);
    }

    #[test]
    fn stable_mask_excludes_transition_neighborhood() {
        let mask = stable_steps(10, &[5], 2);
        // Mask entry i covers t0 = i + 1.
        assert_eq!(mask.len(), 9);
        assert!(mask[2]); // t0 = 3, distance 2
        assert!(!mask[3]); // t0 = 4, distance 1
        assert!(!mask[4]); // t0 = 5, the transition itself
        assert!(!mask[5]); // t0 = 6, distance 1
        assert!(mask[6]); // t0 = 7, distance 2
    }

    #[test]
    fn emission_curves_have_model_shape() {
        let model = two_state_chain();
        let obs = ObservationSequence::from_rows(vec![vec![0.0], vec![6.0]], 0.01).unwrap();
        let curves = emission_curves(&model, &obs);
        assert_eq!(curves.len(), 2);
        assert_eq!(curves[0].len(), 2);
        // Each state prefers its own mean.
        assert!(curves[0][0] > curves[1][0]);
        assert!(curves[1][1] > curves[0][1]);
    }
}
