//! Oracles and builders shared by the integration suites.
//!
//! The oracles deliberately avoid the library's own recursions: likelihoods
//! come from brute-force enumeration of every hidden path, densities from
//! nalgebra's generic inverse/determinant. They are only feasible for tiny
//! models, which is the point.

// Each test target compiles this module separately and none uses everything.
#![allow(dead_code)]

use evgrad::gaussian::{Covariance, Gaussian};
use evgrad::hmm::{HmmModel, ObservationSequence};
use evgrad::math::logsumexp;
use rand::Rng;

/// Sum a vector the careful way (Neumaier's compensated loop), so identity
/// checks aren't limited by naive accumulation error.
pub fn neumaier_sum(xs: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &x in xs {
        let t = sum + x;
        comp += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + comp
}

/// Log-probability of one complete hidden path given the observations.
fn path_log_prob(model: &HmmModel, obs: &ObservationSequence, path: &[usize]) -> f64 {
    let mut lp = model.pi()[path[0]].ln() + model.emissions()[path[0]].log_pdf(obs.row(0));
    for t in 1..obs.len() {
        lp += model.trans_at(path[t - 1], path[t]).ln()
            + model.emissions()[path[t]].log_pdf(obs.row(t));
    }
    lp
}

fn all_paths(n_states: usize, t_len: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = n_states.pow(t_len as u32);
    (0..total).map(move |mut code| {
        (0..t_len)
            .map(|_| {
                let s = code % n_states;
                code /= n_states;
                s
            })
            .collect()
    })
}

/// Exact log-likelihood by summing every one of the `N^T` paths.
pub fn exhaustive_loglik(model: &HmmModel, obs: &ObservationSequence) -> f64 {
    let lps: Vec<f64> = all_paths(model.n_states(), obs.len())
        .map(|p| path_log_prob(model, obs, &p))
        .collect();
    logsumexp(&lps)
}

/// Exact most likely path by scoring every candidate.
pub fn exhaustive_viterbi(model: &HmmModel, obs: &ObservationSequence) -> (Vec<usize>, f64) {
    all_paths(model.n_states(), obs.len())
        .map(|p| {
            let lp = path_log_prob(model, obs, &p);
            (p, lp)
        })
        .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite-or-inf log probs"))
        .expect("at least one path")
}

/// Gaussian log-density from the textbook formula via nalgebra.
pub fn naive_log_density(mean: &[f64], cov_rows: &[Vec<f64>], y: &[f64]) -> f64 {
    let d = mean.len();
    let sigma = nalgebra::DMatrix::from_fn(d, d, |i, j| cov_rows[i][j]);
    let det = sigma.determinant();
    let inv = sigma.try_inverse().expect("invertible covariance");
    let diff = nalgebra::DVector::from_fn(d, |i, _| y[i] - mean[i]);
    let quad = (diff.transpose() * inv * &diff)[(0, 0)];
    -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + det.ln() + quad)
}

fn random_stochastic<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut v: Vec<f64> = raw.iter().map(|x| x / total).collect();
    // Make the row sum exactly 1 in floating point.
    let correction: f64 = 1.0 - v.iter().sum::<f64>();
    v[0] += correction;
    v
}

/// A small random model in the regime the exhaustive oracles can afford:
/// up to 3 states, up to 2 observation dimensions.
pub fn random_tame_model<R: Rng>(rng: &mut R) -> HmmModel {
    let n = rng.gen_range(1..=3);
    let d = rng.gen_range(1..=2);
    let pi = random_stochastic(rng, n);
    let mut trans = Vec::with_capacity(n * n);
    for _ in 0..n {
        trans.extend(random_stochastic(rng, n));
    }
    let emissions = (0..n)
        .map(|_| {
            let mean: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let cov = if rng.gen_bool(0.5) {
                Covariance::Diag((0..d).map(|_| rng.gen_range(0.3..2.0)).collect())
            } else {
                // A·Aᵀ + ½I is symmetric positive definite by construction.
                let a: Vec<Vec<f64>> = (0..d)
                    .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect();
                let rows = (0..d)
                    .map(|i| {
                        (0..d)
                            .map(|j| {
                                let dot: f64 =
                                    (0..d).map(|k| a[i][k] * a[j][k]).sum();
                                dot + if i == j { 0.5 } else { 0.0 }
                            })
                            .collect()
                    })
                    .collect();
                Covariance::Full(rows)
            };
            Gaussian::new(mean, cov).expect("valid random emission")
        })
        .collect();
    HmmModel::new(pi, trans, emissions).expect("valid random model")
}

/// Samples a hidden path and its emissions from the model.
pub fn sample_model_path<R: Rng>(
    model: &HmmModel,
    t_len: usize,
    rng: &mut R,
) -> (Vec<usize>, ObservationSequence) {
    let categorical = |weights: &[f64], rng: &mut R| {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        weights.len() - 1
    };
    let n = model.n_states();
    let mut states = Vec::with_capacity(t_len);
    let mut rows = Vec::with_capacity(t_len);
    let mut z = categorical(model.pi(), rng);
    for t in 0..t_len {
        if t > 0 {
            let row = &model.trans()[z * n..(z + 1) * n];
            z = categorical(row, rng);
        }
        states.push(z);
        rows.push(model.emissions()[z].sample(rng));
    }
    let obs = ObservationSequence::from_rows(rows, 0.01).expect("sampled rows are finite");
    (states, obs)
}

/// Left-to-right model whose states are far apart relative to their unit
/// spread: adjacent means sit `separation` standard deviations apart along
/// an alternating axis pattern, diagonal unit covariance, strong
/// self-transitions. Decoding such a model should be essentially exact.
pub fn separated_model(n_states: usize, dim: usize, separation: f64, self_p: f64) -> HmmModel {
    let mut pi = vec![0.0; n_states];
    pi[0] = 1.0;
    let mut trans = vec![0.0; n_states * n_states];
    for i in 0..n_states {
        if i + 1 < n_states {
            trans[i * n_states + i] = self_p;
            trans[i * n_states + i + 1] = 1.0 - self_p;
        } else {
            trans[i * n_states + i] = 1.0;
        }
    }
    let emissions = (0..n_states)
        .map(|i| {
            let mut mean = vec![0.0; dim];
            // Walk a zig-zag so no two states share a mean on every axis.
            mean[i % dim] = separation * ((i / dim) + 1) as f64;
            if dim > 1 {
                mean[(i + 1) % dim] = -0.5 * separation * (i as f64);
            }
            Gaussian::new(mean, Covariance::Diag(vec![1.0; dim])).expect("unit spread")
        })
        .collect();
    HmmModel::new(pi, trans, emissions).expect("left-right model is valid")
}

/// 0-based indices `i` with `path[i] != path[i-1]`.
pub fn true_transitions(path: &[usize]) -> Vec<usize> {
    (1..path.len()).filter(|&i| path[i] != path[i - 1]).collect()
}
