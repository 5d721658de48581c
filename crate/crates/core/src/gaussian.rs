//! Multivariate Gaussian emission densities.
//!
//! Emissions support diagonal and full covariance. A full covariance is
//! factored once at construction (lower Cholesky), so `log_pdf` costs one
//! triangular solve. All densities are evaluated in log space and are finite
//! for finite inputs.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

const LN_2PI: f64 = 1.8378770664093453;

/// Covariance parameterization of one Gaussian component.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    /// Per-dimension variances.
    Diag(Vec<f64>),
    /// Dense symmetric positive definite matrix, row-major nested rows.
    Full(Vec<Vec<f64>>),
}

impl Covariance {
    pub fn dim(&self) -> usize {
        match self {
            Covariance::Diag(v) => v.len(),
            Covariance::Full(m) => m.len(),
        }
    }

    /// Dense row-major copy, whichever the parameterization.
    pub fn to_dense(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d * d];
        match self {
            Covariance::Diag(v) => {
                for (i, &x) in v.iter().enumerate() {
                    out[i * d + i] = x;
                }
            }
            Covariance::Full(m) => {
                for (i, row) in m.iter().enumerate() {
                    out[i * d..(i + 1) * d].copy_from_slice(row);
                }
            }
        }
        out
    }
}

/// One Gaussian emission component with cached normalization terms.
#[derive(Debug, Clone)]
pub struct Gaussian {
    mean: Vec<f64>,
    cov: Covariance,
    /// -(d/2) ln 2π - (1/2) ln det Σ
    log_norm: f64,
    /// Diagonal case: 1/σ².
    inv_var: Vec<f64>,
    /// Full case: row-major lower Cholesky factor of Σ.
    chol: Vec<f64>,
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, cov: Covariance) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::InvalidInput("Gaussian mean must be non-empty".into()));
        }
        if mean.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidModel("Gaussian mean contains a non-finite value".into()));
        }
        if cov.dim() != d {
            return Err(Error::DimensionMismatch {
                context: "Gaussian covariance",
                expected: d,
                got: cov.dim(),
            });
        }
        let mut log_det = 0.0;
        let mut inv_var = Vec::new();
        let mut chol = Vec::new();
        match &cov {
            Covariance::Diag(vars) => {
                for (i, &v) in vars.iter().enumerate() {
                    if !v.is_finite() || v <= 0.0 {
                        return Err(Error::InvalidModel(format!(
                            "diagonal variance {v} at dimension {i} is not positive"
                        )));
                    }
                    log_det += v.ln();
                }
                inv_var = vars.iter().map(|&v| 1.0 / v).collect();
            }
            Covariance::Full(rows) => {
                let dense = validate_symmetric(rows, d)?;
                let l = cholesky_lower(d, &dense).ok_or_else(|| {
                    Error::InvalidModel("full covariance is not positive definite".into())
                })?;
                for i in 0..d {
                    log_det += 2.0 * l[i * d + i].ln();
                }
                chol = l;
            }
        }
        Ok(Gaussian {
            log_norm: -0.5 * (d as f64 * LN_2PI + log_det),
            mean,
            cov,
            inv_var,
            chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &Covariance {
        &self.cov
    }

    /// Log density at `y`. `y.len()` must equal `dim()`.
    pub fn log_pdf(&self, y: &[f64]) -> f64 {
        debug_assert_eq!(y.len(), self.dim());
        let quad = match &self.cov {
            Covariance::Diag(_) => {
                let mut q = 0.0;
                for i in 0..y.len() {
                    let d = y[i] - self.mean[i];
                    q += d * d * self.inv_var[i];
                }
                q
            }
            Covariance::Full(_) => {
                let d = self.dim();
                let diff: Vec<f64> = (0..d).map(|i| y[i] - self.mean[i]).collect();
                let z = forward_substitute(d, &self.chol, &diff);
                z.iter().map(|v| v * v).sum()
            }
        };
        self.log_norm - 0.5 * quad
    }

    /// Draws one sample. The number of RNG draws is exactly `dim()`, so
    /// streams stay reproducible across covariance kinds.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        let xi: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        match &self.cov {
            Covariance::Diag(vars) => (0..d)
                .map(|i| self.mean[i] + vars[i].sqrt() * xi[i])
                .collect(),
            Covariance::Full(_) => {
                let mut out = self.mean.clone();
                for i in 0..d {
                    for j in 0..=i {
                        out[i] += self.chol[i * d + j] * xi[j];
                    }
                }
                out
            }
        }
    }

    /// Symmetric Kullback-Leibler divergence `KL(p||q) + KL(q||p)`.
    pub fn sym_kl(&self, other: &Gaussian) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                context: "sym_kl",
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(kl(self, other)? + kl(other, self)?)
    }
}

/// KL(p||q) for Gaussians:
/// 0.5 (tr(Σq⁻¹Σp) + Δᵀ Σq⁻¹ Δ - d + ln det Σq - ln det Σp), Δ = μq - μp.
fn kl(p: &Gaussian, q: &Gaussian) -> Result<f64> {
    let d = p.dim();
    if let (Covariance::Diag(vp), Covariance::Diag(vq)) = (&p.cov, &q.cov) {
        let mut acc = 0.0;
        for i in 0..d {
            let delta = q.mean[i] - p.mean[i];
            acc += vp[i] / vq[i] + delta * delta / vq[i] - 1.0 + (vq[i] / vp[i]).ln();
        }
        return Ok(0.5 * acc);
    }
    // General case through the dense factor of q.
    let sp = p.cov.to_dense();
    let dense_q = q.cov.to_dense();
    let lq = cholesky_lower(d, &dense_q)
        .ok_or_else(|| Error::InvalidModel("covariance is not positive definite".into()))?;
    let mut log_det_q = 0.0;
    let mut log_det_p = 0.0;
    for i in 0..d {
        log_det_q += 2.0 * lq[i * d + i].ln();
    }
    match &p.cov {
        Covariance::Diag(vp) => {
            for v in vp {
                log_det_p += v.ln();
            }
        }
        Covariance::Full(_) => {
            for i in 0..d {
                log_det_p += 2.0 * p.chol[i * d + i].ln();
            }
        }
    }
    let mut trace = 0.0;
    let mut col = vec![0.0; d];
    for j in 0..d {
        for i in 0..d {
            col[i] = sp[i * d + j];
        }
        let x = cholesky_solve(d, &lq, &col);
        trace += x[j];
    }
    let diff: Vec<f64> = (0..d).map(|i| q.mean[i] - p.mean[i]).collect();
    let x = cholesky_solve(d, &lq, &diff);
    let quad: f64 = diff.iter().zip(&x).map(|(a, b)| a * b).sum();
    Ok(0.5 * (trace + quad - d as f64 + log_det_q - log_det_p))
}

fn validate_symmetric(rows: &[Vec<f64>], d: usize) -> Result<Vec<f64>> {
    let mut dense = vec![0.0; d * d];
    for (i, row) in rows.iter().enumerate() {
        if row.len() != d {
            return Err(Error::DimensionMismatch {
                context: "covariance row",
                expected: d,
                got: row.len(),
            });
        }
        for (j, &x) in row.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::InvalidModel(format!(
                    "covariance entry ({i},{j}) is not finite"
                )));
            }
            dense[i * d + j] = x;
        }
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let a = dense[i * d + j];
            let b = dense[j * d + i];
            if (a - b).abs() > 1e-9 * a.abs().max(b.abs()).max(1.0) {
                return Err(Error::InvalidModel(format!(
                    "covariance is not symmetric at ({i},{j}): {a} vs {b}"
                )));
            }
        }
    }
    Ok(dense)
}

/// Row-major lower Cholesky factor; `None` if the matrix is not positive
/// definite.
pub(crate) fn cholesky_lower(d: usize, a: &[f64]) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// Solves L z = b for lower-triangular L.
fn forward_substitute(d: usize, l: &[f64], b: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; d];
    for i in 0..d {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * d + k] * z[k];
        }
        z[i] = s / l[i * d + i];
    }
    z
}

/// Solves (L Lᵀ) x = b given the lower factor L.
fn cholesky_solve(d: usize, l: &[f64], b: &[f64]) -> Vec<f64> {
    let z = forward_substitute(d, l, b);
    let mut x = vec![0.0; d];
    for i in (0..d).rev() {
        let mut s = z[i];
        for k in (i + 1)..d {
            s -= l[k * d + i] * x[k];
        }
        x[i] = s / l[i * d + i];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_1d() -> Gaussian {
        Gaussian::new(vec![0.0], Covariance::Diag(vec![1.0])).unwrap()
    }

    #[test]
    fn standard_normal_density_at_mean() {
        // -0.5 ln(2π)
        let got = unit_1d().log_pdf(&[0.0]);
        assert!((got - (-0.9189385332046727)).abs() <= 1e-12);
    }

    #[test]
    fn standard_normal_2d_density_at_mean() {
        let g = Gaussian::new(vec![0.0, 0.0], Covariance::Diag(vec![1.0, 1.0])).unwrap();
        assert!((g.log_pdf(&[0.0, 0.0]) - (-LN_2PI)).abs() <= 1e-12);
    }

    #[test]
    fn diag_and_full_agree_when_covariance_is_diagonal() {
        let mean = vec![0.3, -1.2, 2.0];
        let vars = vec![0.5, 2.0, 0.1];
        let gd = Gaussian::new(mean.clone(), Covariance::Diag(vars.clone())).unwrap();
        let rows = vec![
            vec![vars[0], 0.0, 0.0],
            vec![0.0, vars[1], 0.0],
            vec![0.0, 0.0, vars[2]],
        ];
        let gf = Gaussian::new(mean, Covariance::Full(rows)).unwrap();
        for y in [[0.0, 0.0, 0.0], [1.0, -2.0, 0.5], [-3.0, 4.0, 2.0]] {
            assert!((gd.log_pdf(&y) - gf.log_pdf(&y)).abs() <= 1e-10);
        }
    }

    #[test]
    fn rejects_non_positive_variance() {
        assert!(Gaussian::new(vec![0.0], Covariance::Diag(vec![0.0])).is_err());
        assert!(Gaussian::new(vec![0.0], Covariance::Diag(vec![-1.0])).is_err());
    }

    #[test]
    fn rejects_indefinite_full_covariance() {
        let rows = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(Gaussian::new(vec![0.0, 0.0], Covariance::Full(rows)).is_err());
    }

    #[test]
    fn rejects_asymmetric_full_covariance() {
        let rows = vec![vec![1.0, 0.5], vec![0.1, 1.0]];
        assert!(Gaussian::new(vec![0.0, 0.0], Covariance::Full(rows)).is_err());
    }

    #[test]
    fn extreme_inputs_stay_finite() {
        let g = unit_1d();
        let lp = g.log_pdf(&[1e3]);
        assert!(lp.is_finite());
        assert!(lp < -4e5);
    }

    #[test]
    fn sym_kl_is_zero_for_identical_components() {
        let g = Gaussian::new(vec![1.0, 2.0], Covariance::Diag(vec![0.5, 1.5])).unwrap();
        assert!(g.sym_kl(&g).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn sym_kl_grows_with_mean_separation() {
        let a = Gaussian::new(vec![0.0], Covariance::Diag(vec![1.0])).unwrap();
        let b = Gaussian::new(vec![1.0], Covariance::Diag(vec![1.0])).unwrap();
        let c = Gaussian::new(vec![5.0], Covariance::Diag(vec![1.0])).unwrap();
        let near = a.sym_kl(&b).unwrap();
        let far = a.sym_kl(&c).unwrap();
        // Equal unit variances: sym KL = Δ².
        assert!((near - 1.0).abs() <= 1e-12);
        assert!((far - 25.0).abs() <= 1e-12);
    }

    #[test]
    fn full_covariance_density_with_correlation() {
        // Σ = [[2, 0.6], [0.6, 1]]; checked against the explicit inverse.
        let rows = vec![vec![2.0, 0.6], vec![0.6, 1.0]];
        let g = Gaussian::new(vec![0.0, 0.0], Covariance::Full(rows)).unwrap();
        let det: f64 = 2.0 - 0.36;
        let inv = [1.0 / det, -0.6 / det, -0.6 / det, 2.0 / det];
        let y = [0.7, -1.1];
        let quad = y[0] * (inv[0] * y[0] + inv[1] * y[1]) + y[1] * (inv[2] * y[0] + inv[3] * y[1]);
        let expect = -0.5 * (2.0 * LN_2PI + det.ln() + quad);
        assert!((g.log_pdf(&y) - expect).abs() <= 1e-12);
    }
}
