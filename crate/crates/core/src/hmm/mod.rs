//! Hidden Markov models with Gaussian emissions, evaluated in log space.
//!
//! The transition matrix `A` is row-stochastic with `A[j][i] = P(Z_{t+1}=i |
//! Z_t=j)`, stored row-major. All inference uses log probabilities; exact
//! zeros in `pi` or `A` become `NEG_INFINITY` and stay exact through the
//! recursions.
//!
//! Quick start:
//!
//! ```
//! use evgrad::gaussian::{Covariance, Gaussian};
//! use evgrad::hmm::{HmmModel, ObservationSequence};
//!
//! let emissions = vec![
//!     Gaussian::new(vec![0.0], Covariance::Diag(vec![1.0])).unwrap(),
//!     Gaussian::new(vec![5.0], Covariance::Diag(vec![1.0])).unwrap(),
//! ];
//! let model = HmmModel::new(
//!     vec![1.0, 0.0],
//!     vec![0.9, 0.1, 0.0, 1.0],
//!     emissions,
//! ).unwrap();
//! let obs = ObservationSequence::from_rows(
//!     vec![vec![0.1], vec![-0.2], vec![5.1], vec![4.9]],
//!     0.01,
//! ).unwrap();
//! let vit = model.viterbi(&obs).unwrap();
//! assert_eq!(vit.path, vec![0, 0, 1, 1]);
//! ```

mod train;

pub use train::{
    select_num_states, train_baum_welch, CovarianceKind, StateSelection, TrainConfig, TrainResult,
};

use crate::error::{Error, Result};
use crate::gaussian::Gaussian;
use crate::math::{argmax_lowest, logsumexp};

/// Tolerance for stochastic-vector sums.
const STOCHASTIC_TOL: f64 = 1e-9;

/// A fixed-rate multivariate observation sequence, stored row-major
/// (`t_len` rows of `dim` columns).
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSequence {
    data: Vec<f64>,
    t_len: usize,
    dim: usize,
    dt: f64,
}

impl ObservationSequence {
    pub fn from_flat(data: Vec<f64>, dim: usize, dt: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("observation dimension must be positive".into()));
        }
        if data.is_empty() || data.len() % dim != 0 {
            return Err(Error::InvalidInput(format!(
                "flat observation buffer of length {} does not divide into rows of {dim}",
                data.len()
            )));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidInput(format!("sampling period {dt} must be positive")));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "observation entry {i} is not finite"
            )));
        }
        let t_len = data.len() / dim;
        Ok(ObservationSequence { data, t_len, dim, dt })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, dt: f64) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidInput("observation sequence must be non-empty".into()));
        }
        let dim = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (t, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "observation row",
                    expected: dim,
                    got: rows[t].len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(data, dim, dt)
    }

    /// Number of timesteps `T`.
    pub fn len(&self) -> usize {
        self.t_len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Sampling period in seconds; informational.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Row at 0-based timestep index.
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Sub-sequence over 0-based row range `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Result<ObservationSequence> {
        if start >= end || end > self.t_len {
            return Err(Error::InvalidInput(format!(
                "invalid row range {start}..{end} for sequence of length {}",
                self.t_len
            )));
        }
        Ok(ObservationSequence {
            data: self.data[start * self.dim..end * self.dim].to_vec(),
            t_len: end - start,
            dim: self.dim,
            dt: self.dt,
        })
    }
}

/// Forward-pass state after absorbing `t` observations (`t >= 1`).
///
/// `loglik` always equals `logsumexp(log_alpha)`, so every `log_alpha[i]`
/// is bounded above by `loglik`.
#[derive(Debug, Clone)]
pub struct LogBelief {
    pub log_alpha: Vec<f64>,
    pub loglik: f64,
    pub t: usize,
}

/// Most likely state path and the final max-belief row.
#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiResult {
    /// 0-based state per timestep.
    pub path: Vec<usize>,
    /// Final `log δ_T(j)` per state.
    pub log_delta: Vec<f64>,
}

impl ViterbiResult {
    /// Joint log probability of the returned path with the observations.
    pub fn log_prob(&self) -> f64 {
        self.log_delta
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Gaussian-emission hidden Markov model.
#[derive(Debug, Clone)]
pub struct HmmModel {
    n_states: usize,
    dim: usize,
    pi: Vec<f64>,
    trans: Vec<f64>,
    emissions: Vec<Gaussian>,
    log_pi: Vec<f64>,
    log_trans: Vec<f64>,
}

impl HmmModel {
    /// Validates and builds a model. `trans` is row-major `n × n` with rows
    /// summing to 1 within 1e-9; `pi` likewise sums to 1.
    pub fn new(pi: Vec<f64>, trans: Vec<f64>, emissions: Vec<Gaussian>) -> Result<Self> {
        let n = emissions.len();
        if n == 0 {
            return Err(Error::InvalidModel("model needs at least one state".into()));
        }
        let dim = emissions[0].dim();
        for (i, g) in emissions.iter().enumerate() {
            if g.dim() != dim {
                return Err(Error::InvalidModel(format!(
                    "emission {i} has dimension {} but emission 0 has {dim}",
                    g.dim()
                )));
            }
        }
        if pi.len() != n {
            return Err(Error::DimensionMismatch {
                context: "initial distribution",
                expected: n,
                got: pi.len(),
            });
        }
        validate_stochastic(&pi, "initial distribution")?;
        if trans.len() != n * n {
            return Err(Error::DimensionMismatch {
                context: "transition matrix",
                expected: n * n,
                got: trans.len(),
            });
        }
        for i in 0..n {
            validate_stochastic(&trans[i * n..(i + 1) * n], "transition row")?;
        }
        let log_pi = pi.iter().map(|&p| p.ln()).collect();
        let log_trans = trans.iter().map(|&p| p.ln()).collect();
        Ok(HmmModel {
            n_states: n,
            dim,
            pi,
            trans,
            emissions,
            log_pi,
            log_trans,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    /// Row-major transition matrix.
    pub fn trans(&self) -> &[f64] {
        &self.trans
    }

    pub fn trans_at(&self, from: usize, to: usize) -> f64 {
        self.trans[from * self.n_states + to]
    }

    /// `ln A[from][to]`; `NEG_INFINITY` for exact zeros.
    pub fn log_trans_at(&self, from: usize, to: usize) -> f64 {
        self.log_trans[from * self.n_states + to]
    }

    pub fn emissions(&self) -> &[Gaussian] {
        &self.emissions
    }

    pub(crate) fn log_pi(&self) -> &[f64] {
        &self.log_pi
    }

    /// Log emission density of `y` under state `state`.
    pub fn emission_logprob(&self, state: usize, y: &[f64]) -> Result<f64> {
        if state >= self.n_states {
            return Err(Error::InvalidInput(format!(
                "state {state} out of range for {}-state model",
                self.n_states
            )));
        }
        self.check_obs_dim(y.len())?;
        Ok(self.emissions[state].log_pdf(y))
    }

    fn check_obs_dim(&self, got: usize) -> Result<()> {
        if got != self.dim {
            return Err(Error::DimensionMismatch {
                context: "observation",
                expected: self.dim,
                got,
            });
        }
        Ok(())
    }

    /// Belief after the first observation:
    /// `log α_i(1) = ln π_i + ln b_i(y)`.
    pub fn forward_init(&self, y: &[f64]) -> Result<LogBelief> {
        self.check_obs_dim(y.len())?;
        let log_alpha: Vec<f64> = (0..self.n_states)
            .map(|i| self.log_pi[i] + self.emissions[i].log_pdf(y))
            .collect();
        let loglik = logsumexp(&log_alpha);
        if loglik == f64::NEG_INFINITY {
            return Err(Error::InvalidModel(
                "initial belief carries no probability mass".into(),
            ));
        }
        Ok(LogBelief { log_alpha, loglik, t: 1 })
    }

    /// One forward-recursion step:
    /// `log α_i(t+1) = ln b_i(y) + logsumexp_j(log α_j(t) + ln A_ji)`.
    pub fn forward_step(&self, prev: &LogBelief, y: &[f64]) -> Result<LogBelief> {
        self.check_obs_dim(y.len())?;
        let n = self.n_states;
        if prev.log_alpha.len() != n {
            return Err(Error::DimensionMismatch {
                context: "belief state",
                expected: n,
                got: prev.log_alpha.len(),
            });
        }
        let mut scratch = vec![0.0; n];
        let mut log_alpha = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                scratch[j] = prev.log_alpha[j] + self.log_trans[j * n + i];
            }
            log_alpha[i] = self.emissions[i].log_pdf(y) + logsumexp(&scratch);
        }
        let loglik = logsumexp(&log_alpha);
        if loglik == f64::NEG_INFINITY {
            return Err(Error::InvalidModel(
                "belief lost all probability mass during a forward step".into(),
            ));
        }
        Ok(LogBelief {
            log_alpha,
            loglik,
            t: prev.t + 1,
        })
    }

    /// Cumulative log-likelihood `L_t = ln P(y_{1:t})` for every prefix,
    /// one entry per timestep.
    pub fn loglik_series(&self, obs: &ObservationSequence) -> Result<Vec<f64>> {
        self.check_obs_dim(obs.dim())?;
        let mut out = Vec::with_capacity(obs.len());
        let mut belief = self.forward_init(obs.row(0))?;
        out.push(belief.loglik);
        for t in 1..obs.len() {
            belief = self.forward_step(&belief, obs.row(t))?;
            out.push(belief.loglik);
        }
        Ok(out)
    }

    /// Total log-likelihood of the sequence.
    pub fn loglik(&self, obs: &ObservationSequence) -> Result<f64> {
        Ok(*self.loglik_series(obs)?.last().expect("non-empty series"))
    }

    /// Most likely state path. Ties at any maximization resolve to the
    /// lowest state index.
    pub fn viterbi(&self, obs: &ObservationSequence) -> Result<ViterbiResult> {
        self.check_obs_dim(obs.dim())?;
        let (delta, psi) = self.viterbi_lattice(obs)?;
        let t_len = obs.len();
        let n = self.n_states;
        let last = &delta[(t_len - 1) * n..t_len * n];
        let path = backtrack(&psi, last, t_len, n);
        Ok(ViterbiResult {
            path,
            log_delta: last.to_vec(),
        })
    }

    /// Full max-belief lattice (`delta`, row-major T×N) and predecessor
    /// table (`psi`). Shared by the batch and incremental Viterbi paths.
    pub(crate) fn viterbi_lattice(
        &self,
        obs: &ObservationSequence,
    ) -> Result<(Vec<f64>, Vec<u32>)> {
        let n = self.n_states;
        let t_len = obs.len();
        let mut delta = vec![f64::NEG_INFINITY; t_len * n];
        let mut psi = vec![0u32; t_len * n];
        for i in 0..n {
            delta[i] = self.log_pi[i] + self.emissions[i].log_pdf(obs.row(0));
        }
        for t in 1..t_len {
            let y = obs.row(t);
            for j in 0..n {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0usize;
                for i in 0..n {
                    let v = delta[(t - 1) * n + i] + self.log_trans[i * n + j];
                    if v > best {
                        best = v;
                        best_i = i;
                    }
                }
                delta[t * n + j] = best + self.emissions[j].log_pdf(y);
                psi[t * n + j] = best_i as u32;
            }
        }
        Ok((delta, psi))
    }
}

/// Backtracks a path of length `t_len` ending at the best state of `last`.
pub(crate) fn backtrack(psi: &[u32], last: &[f64], t_len: usize, n: usize) -> Vec<usize> {
    let mut path = vec![0usize; t_len];
    path[t_len - 1] = argmax_lowest(last);
    for t in (1..t_len).rev() {
        path[t - 1] = psi[t * n + path[t]] as usize;
    }
    path
}

fn validate_stochastic(row: &[f64], what: &str) -> Result<()> {
    let mut sum = 0.0;
    for &p in row {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::InvalidModel(format!(
                "{what} contains invalid probability {p}"
            )));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::InvalidModel(format!(
            "{what} sums to {sum}, expected 1 within {STOCHASTIC_TOL:e}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::Covariance;

    fn gauss(mean: f64, var: f64) -> Gaussian {
        Gaussian::new(vec![mean], Covariance::Diag(vec![var])).unwrap()
    }

    fn two_state() -> HmmModel {
        HmmModel::new(
            vec![0.7, 0.3],
            vec![0.9, 0.1, 0.2, 0.8],
            vec![gauss(0.0, 1.0), gauss(4.0, 1.0)],
        )
        .unwrap()
    }

    fn seq(values: &[f64]) -> ObservationSequence {
        ObservationSequence::from_rows(values.iter().map(|&v| vec![v]).collect(), 0.01).unwrap()
    }

    #[test]
    fn rejects_non_stochastic_rows() {
        let err = HmmModel::new(
            vec![0.7, 0.3],
            vec![0.9, 0.2, 0.2, 0.8],
            vec![gauss(0.0, 1.0), gauss(4.0, 1.0)],
        );
        assert!(err.is_err());
    }

    #[test]
    fn rejects_negative_probability() {
        let err = HmmModel::new(
            vec![1.1, -0.1],
            vec![0.9, 0.1, 0.2, 0.8],
            vec![gauss(0.0, 1.0), gauss(4.0, 1.0)],
        );
        assert!(err.is_err());
    }

    #[test]
    fn zero_probabilities_become_neg_infinity() {
        let m = HmmModel::new(
            vec![1.0, 0.0],
            vec![0.9, 0.1, 0.0, 1.0],
            vec![gauss(0.0, 1.0), gauss(4.0, 1.0)],
        )
        .unwrap();
        assert_eq!(m.log_trans_at(1, 0), f64::NEG_INFINITY);
        assert!(m.log_trans_at(0, 0).is_finite());
    }

    #[test]
    fn single_state_loglik_is_emission_sum() {
        // With one state the chain contributes nothing: L_T = Σ_t ln b(y_t).
        let m = HmmModel::new(vec![1.0], vec![1.0], vec![gauss(0.0, 1.0)]).unwrap();
        let obs = seq(&[0.5, -0.3, 1.0]);
        let expect: f64 = obs.rows().map(|r| m.emissions()[0].log_pdf(r)).sum();
        assert!((m.loglik(&obs).unwrap() - expect).abs() <= 1e-12);
    }

    #[test]
    fn forward_init_matches_direct_formula() {
        let m = two_state();
        let b = m.forward_init(&[0.2]).unwrap();
        let a0 = 0.7f64.ln() + m.emissions()[0].log_pdf(&[0.2]);
        let a1 = 0.3f64.ln() + m.emissions()[1].log_pdf(&[0.2]);
        assert!((b.log_alpha[0] - a0).abs() <= 1e-12);
        assert!((b.log_alpha[1] - a1).abs() <= 1e-12);
        assert_eq!(b.t, 1);
    }

    #[test]
    fn belief_loglik_bounds_entries() {
        let m = two_state();
        let obs = seq(&[0.2, 3.9, 4.2, -0.5]);
        let mut b = m.forward_init(obs.row(0)).unwrap();
        for t in 1..obs.len() {
            b = m.forward_step(&b, obs.row(t)).unwrap();
            assert!((b.loglik - logsumexp(&b.log_alpha)).abs() <= 1e-12);
            for &a in &b.log_alpha {
                assert!(a <= b.loglik + 1e-12);
            }
        }
        assert_eq!(b.t, obs.len());
    }

    #[test]
    fn forward_step_survives_extreme_densities() {
        let m = two_state();
        let b = m.forward_init(&[1e3]).unwrap();
        let b2 = m.forward_step(&b, &[-1e3]).unwrap();
        assert!(b2.loglik.is_finite());
        assert!(!b2.log_alpha.iter().any(|a| a.is_nan()));
    }

    #[test]
    fn loglik_series_matches_streaming_beliefs() {
        let m = two_state();
        let obs = seq(&[0.0, 0.1, 3.8, 4.1]);
        let series = m.loglik_series(&obs).unwrap();
        assert_eq!(series.len(), obs.len());
        let mut b = m.forward_init(obs.row(0)).unwrap();
        assert!((series[0] - b.loglik).abs() <= 1e-12);
        for t in 1..obs.len() {
            b = m.forward_step(&b, obs.row(t)).unwrap();
            assert!((series[t] - b.loglik).abs() <= 1e-12);
        }
    }

    #[test]
    fn viterbi_follows_well_separated_emissions() {
        let m = two_state();
        let obs = seq(&[0.1, -0.2, 4.1, 3.9, 0.05]);
        let v = m.viterbi(&obs).unwrap();
        assert_eq!(v.path, vec![0, 0, 1, 1, 0]);
        assert!(v.log_prob().is_finite());
    }

    #[test]
    fn viterbi_ties_resolve_to_lowest_state() {
        // Two identical states: every comparison ties, so the path stays at
        // state 0.
        let m = HmmModel::new(
            vec![0.5, 0.5],
            vec![0.5, 0.5, 0.5, 0.5],
            vec![gauss(0.0, 1.0), gauss(0.0, 1.0)],
        )
        .unwrap();
        let obs = seq(&[0.3, -0.1, 0.2]);
        let v = m.viterbi(&obs).unwrap();
        assert_eq!(v.path, vec![0, 0, 0]);
    }

    #[test]
    fn viterbi_respects_forbidden_transitions() {
        // Left-to-right chain: once in state 1 the path can never return.
        let m = HmmModel::new(
            vec![1.0, 0.0],
            vec![0.8, 0.2, 0.0, 1.0],
            vec![gauss(0.0, 1.0), gauss(4.0, 1.0)],
        )
        .unwrap();
        let obs = seq(&[0.0, 4.0, 0.0, 4.0]);
        let v = m.viterbi(&obs).unwrap();
        for w in v.path.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn observation_sequence_validates_input() {
        assert!(ObservationSequence::from_rows(vec![], 0.01).is_err());
        assert!(ObservationSequence::from_rows(vec![vec![1.0], vec![1.0, 2.0]], 0.01).is_err());
        assert!(ObservationSequence::from_rows(vec![vec![f64::NAN]], 0.01).is_err());
        assert!(ObservationSequence::from_flat(vec![1.0, 2.0, 3.0], 2, 0.01).is_err());
        assert!(ObservationSequence::from_flat(vec![1.0, 2.0], 2, 0.0).is_err());
    }

    #[test]
    fn observation_dimension_mismatch_is_reported() {
        let m = two_state();
        let obs = ObservationSequence::from_rows(vec![vec![0.0, 1.0]], 0.01).unwrap();
        assert!(m.loglik_series(&obs).is_err());
        assert!(m.forward_init(&[0.0, 1.0]).is_err());
        assert!(m.emission_logprob(0, &[0.0, 1.0]).is_err());
        assert!(m.emission_logprob(5, &[0.0]).is_err());
    }
}
