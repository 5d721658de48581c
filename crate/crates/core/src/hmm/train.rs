//! Baum-Welch parameter estimation for Gaussian-emission models.
//!
//! Initialization is deterministic: each sequence is cut into `n_states`
//! equal chunks, state `k`'s Gaussian comes from the pooled rows of chunk
//! `k`, and the transition matrix starts left-to-right with 0.9 on the
//! diagonal. The E-step runs entirely in log space; the M-step floors
//! variances to keep covariances positive definite.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::gaussian::{Covariance, Gaussian};
use crate::hmm::{HmmModel, ObservationSequence};
use crate::math::logsumexp;

/// Emission covariance structure fitted during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceKind {
    Diag,
    Full,
}

/// Training settings. `seed` is threaded through for provenance records;
/// the chunk initializer itself draws no random numbers.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Cap on E-step sweeps.
    pub max_iters: usize,
    /// Stop once the total log-likelihood improves by less than this.
    pub tol: f64,
    /// Lower bound applied to every variance during the M-step.
    pub var_floor: f64,
    pub cov: CovarianceKind,
    /// Additive smoothing on transition counts; 0 keeps exact zeros frozen.
    pub trans_smoothing: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_iters: 200,
            tol: 1e-4,
            var_floor: 1e-6,
            cov: CovarianceKind::Diag,
            trans_smoothing: 0.0,
            seed: 0,
        }
    }
}

/// Fitted model plus the per-sweep total log-likelihood trace.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: HmmModel,
    /// Total log-likelihood before each M-step; the last entry scores the
    /// returned model. Non-decreasing up to floating-point slack.
    pub loglik_history: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Outcome of held-one-out state-count selection.
#[derive(Debug, Clone)]
pub struct StateSelection {
    pub chosen: usize,
    /// `(candidate, mean per-timestep held-out log-likelihood)`; empty when
    /// only one candidate was offered.
    pub scores: Vec<(usize, f64)>,
}

pub fn train_baum_welch(
    seqs: &[ObservationSequence],
    n_states: usize,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    if seqs.is_empty() {
        return Err(Error::InvalidInput("training needs at least one sequence".into()));
    }
    if n_states == 0 {
        return Err(Error::InvalidInput("state count must be positive".into()));
    }
    if !(cfg.var_floor > 0.0 && cfg.var_floor.is_finite()) {
        return Err(Error::InvalidInput("variance floor must be positive".into()));
    }
    if cfg.max_iters == 0 {
        return Err(Error::InvalidInput("iteration cap must be positive".into()));
    }
    if cfg.trans_smoothing < 0.0 {
        return Err(Error::InvalidInput("transition smoothing must be non-negative".into()));
    }
    let dim = seqs[0].dim();
    for s in seqs {
        if s.dim() != dim {
            return Err(Error::DimensionMismatch {
                context: "training sequence",
                expected: dim,
                got: s.dim(),
            });
        }
    }

    let mut warnings = Vec::new();
    if seqs.iter().any(|s| s.len() < n_states) {
        warnings.push(format!(
            "a training sequence is shorter than the {n_states}-state chunk initializer; \
             chunks were pooled across sequences"
        ));
    }

    let mut model = chunk_init(seqs, n_states, cfg)?;
    let mut history: Vec<f64> = Vec::new();
    for iter in 0..cfg.max_iters {
        let stats = e_step(&model, seqs)?;
        if !stats.total_loglik.is_finite() {
            return Err(Error::Training {
                iteration: iter,
                message: format!("total log-likelihood became {}", stats.total_loglik),
            });
        }
        history.push(stats.total_loglik);
        if iter > 0 && stats.total_loglik - history[iter - 1] < cfg.tol {
            break;
        }
        if iter + 1 < cfg.max_iters {
            model = m_step(&model, seqs, &stats, cfg, iter, &mut warnings)?;
        }
    }
    Ok(TrainResult {
        model,
        loglik_history: history,
        warnings,
    })
}

/// Picks a state count by held-one-out likelihood.
///
/// For each candidate, one model is trained per held-out sequence and scored
/// by per-timestep log-likelihood on the held-out data; the candidate with
/// the best mean score wins, smallest candidate on ties (within 1e-9). With
/// a single sequence the score falls back to in-sample likelihood, and a
/// single candidate returns immediately without training.
pub fn select_num_states(
    seqs: &[ObservationSequence],
    candidates: &[usize],
    cfg: &TrainConfig,
) -> Result<StateSelection> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("candidate list must be non-empty".into()));
    }
    if candidates.contains(&0) {
        return Err(Error::InvalidInput("candidate state counts must be positive".into()));
    }
    let cands: BTreeSet<usize> = candidates.iter().copied().collect();
    if cands.len() == 1 {
        return Ok(StateSelection {
            chosen: *cands.iter().next().expect("non-empty"),
            scores: Vec::new(),
        });
    }
    let mut scores = Vec::with_capacity(cands.len());
    for &n in &cands {
        let score = if seqs.len() >= 2 {
            let mut acc = 0.0;
            for held in 0..seqs.len() {
                let rest: Vec<ObservationSequence> = seqs
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != held)
                    .map(|(_, s)| s.clone())
                    .collect();
                let fit = train_baum_welch(&rest, n, cfg)?;
                acc += fit.model.loglik(&seqs[held])? / seqs[held].len() as f64;
            }
            acc / seqs.len() as f64
        } else {
            let fit = train_baum_welch(seqs, n, cfg)?;
            fit.model.loglik(&seqs[0])? / seqs[0].len() as f64
        };
        scores.push((n, score));
    }
    const TIE_EPS: f64 = 1e-9;
    let mut chosen = scores[0];
    for &(n, s) in &scores[1..] {
        if s > chosen.1 + TIE_EPS {
            chosen = (n, s);
        }
    }
    Ok(StateSelection {
        chosen: chosen.0,
        scores,
    })
}

// ---- initialization ----

fn chunk_init(seqs: &[ObservationSequence], n: usize, cfg: &TrainConfig) -> Result<HmmModel> {
    let dim = seqs[0].dim();
    let mut emissions = Vec::with_capacity(n);
    for k in 0..n {
        let mut rows: Vec<&[f64]> = Vec::new();
        for s in seqs {
            let lo = k * s.len() / n;
            let hi = (k + 1) * s.len() / n;
            for t in lo..hi {
                rows.push(s.row(t));
            }
        }
        if rows.is_empty() {
            // Shorter sequences than states: fall back to global statistics.
            for s in seqs {
                for t in 0..s.len() {
                    rows.push(s.row(t));
                }
            }
        }
        emissions.push(moment_gaussian(&rows, dim, cfg)?);
    }
    let mut trans = vec![0.0; n * n];
    for i in 0..n {
        if i + 1 < n {
            trans[i * n + i] = 0.9;
            trans[i * n + i + 1] = 0.1;
        } else {
            trans[i * n + i] = 1.0;
        }
    }
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    HmmModel::new(pi, trans, emissions)
}

fn moment_gaussian(rows: &[&[f64]], dim: usize, cfg: &TrainConfig) -> Result<Gaussian> {
    let count = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        for d in 0..dim {
            mean[d] += r[d];
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    let mut var = vec![0.0; dim];
    for r in rows {
        for d in 0..dim {
            let diff = r[d] - mean[d];
            var[d] += diff * diff;
        }
    }
    for v in &mut var {
        *v = (*v / count).max(cfg.var_floor);
    }
    match cfg.cov {
        CovarianceKind::Diag => Gaussian::new(mean, Covariance::Diag(var)),
        CovarianceKind::Full => {
            let rows_cov: Vec<Vec<f64>> = (0..dim)
                .map(|i| {
                    let mut row = vec![0.0; dim];
                    row[i] = var[i];
                    row
                })
                .collect();
            Gaussian::new(mean, Covariance::Full(rows_cov))
        }
    }
}

// ---- E-step ----

struct EStats {
    total_loglik: f64,
    /// Σ over sequences of γ_1(i).
    pi_acc: Vec<f64>,
    /// Σ over sequences and t of ξ_t(i,j), row-major N×N.
    trans_num: Vec<f64>,
    /// Per sequence, row-major T×N state responsibilities.
    gammas: Vec<Vec<f64>>,
}

fn e_step(model: &HmmModel, seqs: &[ObservationSequence]) -> Result<EStats> {
    let n = model.n_states();
    let mut stats = EStats {
        total_loglik: 0.0,
        pi_acc: vec![0.0; n],
        trans_num: vec![0.0; n * n],
        gammas: Vec::with_capacity(seqs.len()),
    };
    for seq in seqs {
        let t_len = seq.len();
        let mut log_b = vec![0.0; t_len * n];
        for t in 0..t_len {
            let y = seq.row(t);
            for i in 0..n {
                log_b[t * n + i] = model.emissions()[i].log_pdf(y);
            }
        }
        let mut log_alpha = vec![f64::NEG_INFINITY; t_len * n];
        for i in 0..n {
            log_alpha[i] = model.log_pi()[i] + log_b[i];
        }
        let mut scratch = vec![0.0; n];
        for t in 1..t_len {
            for i in 0..n {
                for j in 0..n {
                    scratch[j] = log_alpha[(t - 1) * n + j] + model.log_trans_at(j, i);
                }
                log_alpha[t * n + i] = log_b[t * n + i] + logsumexp(&scratch);
            }
        }
        let ll = logsumexp(&log_alpha[(t_len - 1) * n..]);
        stats.total_loglik += ll;
        if !ll.is_finite() {
            stats.gammas.push(vec![0.0; t_len * n]);
            continue;
        }

        let mut log_beta = vec![0.0; t_len * n];
        for t in (0..t_len.saturating_sub(1)).rev() {
            for i in 0..n {
                for j in 0..n {
                    scratch[j] = model.log_trans_at(i, j)
                        + log_b[(t + 1) * n + j]
                        + log_beta[(t + 1) * n + j];
                }
                log_beta[t * n + i] = logsumexp(&scratch);
            }
        }

        let mut gamma = vec![0.0; t_len * n];
        for t in 0..t_len {
            for i in 0..n {
                gamma[t * n + i] = (log_alpha[t * n + i] + log_beta[t * n + i] - ll).exp();
            }
        }
        for i in 0..n {
            stats.pi_acc[i] += gamma[i];
        }
        for t in 0..t_len.saturating_sub(1) {
            for i in 0..n {
                let base = log_alpha[t * n + i] - ll;
                if base == f64::NEG_INFINITY {
                    continue;
                }
                for j in 0..n {
                    let lt = model.log_trans_at(i, j);
                    if lt == f64::NEG_INFINITY {
                        continue;
                    }
                    stats.trans_num[i * n + j] +=
                        (base + lt + log_b[(t + 1) * n + j] + log_beta[(t + 1) * n + j]).exp();
                }
            }
        }
        stats.gammas.push(gamma);
    }
    Ok(stats)
}

// ---- M-step ----

fn m_step(
    prev: &HmmModel,
    seqs: &[ObservationSequence],
    stats: &EStats,
    cfg: &TrainConfig,
    iter: usize,
    warnings: &mut Vec<String>,
) -> Result<HmmModel> {
    let n = prev.n_states();
    let dim = prev.dim();

    let pi_total: f64 = stats.pi_acc.iter().sum();
    let pi: Vec<f64> = if pi_total > 0.0 {
        stats.pi_acc.iter().map(|&x| x / pi_total).collect()
    } else {
        prev.pi().to_vec()
    };

    let mut trans = vec![0.0; n * n];
    let mut starved_trans = false;
    for i in 0..n {
        let row = &stats.trans_num[i * n..(i + 1) * n];
        let sum: f64 = row.iter().sum::<f64>() + cfg.trans_smoothing * n as f64;
        if sum > 0.0 {
            for j in 0..n {
                trans[i * n + j] = (row[j] + cfg.trans_smoothing) / sum;
            }
        } else {
            // No observed mass leaving state i; keep its previous row.
            starved_trans = true;
            for j in 0..n {
                trans[i * n + j] = prev.trans_at(i, j);
            }
        }
    }
    if starved_trans && !warnings.iter().any(|w| w.contains("transition row")) {
        warnings.push("a state accumulated no transition mass; its transition row was kept".into());
    }

    let mut gamma_sum = vec![0.0; n];
    for (gamma, seq) in stats.gammas.iter().zip(seqs) {
        for t in 0..seq.len() {
            for i in 0..n {
                gamma_sum[i] += gamma[t * n + i];
            }
        }
    }

    let mut emissions = Vec::with_capacity(n);
    for i in 0..n {
        if gamma_sum[i] < 1e-12 {
            if !warnings.iter().any(|w| w.contains("no responsibility")) {
                warnings.push(format!(
                    "state {i} received no responsibility mass; its emission was kept"
                ));
            }
            emissions.push(prev.emissions()[i].clone());
            continue;
        }
        let mut mean = vec![0.0; dim];
        for (gamma, seq) in stats.gammas.iter().zip(seqs) {
            for t in 0..seq.len() {
                let g = gamma[t * n + i];
                if g == 0.0 {
                    continue;
                }
                let y = seq.row(t);
                for d in 0..dim {
                    mean[d] += g * y[d];
                }
            }
        }
        for m in &mut mean {
            *m /= gamma_sum[i];
        }
        let gaussian = match cfg.cov {
            CovarianceKind::Diag => {
                let mut var = vec![0.0; dim];
                for (gamma, seq) in stats.gammas.iter().zip(seqs) {
                    for t in 0..seq.len() {
                        let g = gamma[t * n + i];
                        if g == 0.0 {
                            continue;
                        }
                        let y = seq.row(t);
                        for d in 0..dim {
                            let diff = y[d] - mean[d];
                            var[d] += g * diff * diff;
                        }
                    }
                }
                for v in &mut var {
                    *v = (*v / gamma_sum[i]).max(cfg.var_floor);
                }
                Gaussian::new(mean, Covariance::Diag(var))
            }
            CovarianceKind::Full => {
                let mut scatter = vec![0.0; dim * dim];
                for (gamma, seq) in stats.gammas.iter().zip(seqs) {
                    for t in 0..seq.len() {
                        let g = gamma[t * n + i];
                        if g == 0.0 {
                            continue;
                        }
                        let y = seq.row(t);
                        for a in 0..dim {
                            let da = y[a] - mean[a];
                            for b in a..dim {
                                scatter[a * dim + b] += g * da * (y[b] - mean[b]);
                            }
                        }
                    }
                }
                for a in 0..dim {
                    for b in a..dim {
                        let v = scatter[a * dim + b] / gamma_sum[i];
                        scatter[a * dim + b] = v;
                        scatter[b * dim + a] = v;
                    }
                }
                for d in 0..dim {
                    scatter[d * dim + d] = scatter[d * dim + d].max(cfg.var_floor);
                }
                full_gaussian_with_ridge(mean, scatter, dim, cfg.var_floor)
            }
        };
        emissions.push(gaussian.map_err(|e| Error::Training {
            iteration: iter,
            message: format!("state {i} emission update failed: {e}"),
        })?);
    }

    HmmModel::new(pi, trans, emissions).map_err(|e| Error::Training {
        iteration: iter,
        message: e.to_string(),
    })
}

/// Builds a full-covariance Gaussian, adding an escalating diagonal ridge
/// only when the scatter is not positive definite as-is.
fn full_gaussian_with_ridge(
    mean: Vec<f64>,
    scatter: Vec<f64>,
    dim: usize,
    floor: f64,
) -> Result<Gaussian> {
    let to_rows = |m: &[f64]| -> Vec<Vec<f64>> {
        (0..dim).map(|i| m[i * dim..(i + 1) * dim].to_vec()).collect()
    };
    match Gaussian::new(mean.clone(), Covariance::Full(to_rows(&scatter))) {
        Ok(g) => return Ok(g),
        Err(_) => {}
    }
    let mut ridge = floor;
    for _ in 0..16 {
        let mut bumped = scatter.clone();
        for d in 0..dim {
            bumped[d * dim + d] += ridge;
        }
        if let Ok(g) = Gaussian::new(mean.clone(), Covariance::Full(to_rows(&bumped))) {
            return Ok(g);
        }
        ridge *= 10.0;
    }
    Err(Error::InvalidModel(
        "covariance scatter could not be regularized to positive definite".into(),
    ))
}
