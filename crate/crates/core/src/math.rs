//! Small numeric helpers shared across the crate.
//!
//! Everything here operates on plain `f64` slices. Log-space quantities use
//! `f64::NEG_INFINITY` to represent log(0).

/// Computes `ln(sum_i exp(xs[i]))` with the usual max-shift for stability.
///
/// Returns `NEG_INFINITY` when every element is `NEG_INFINITY`. The result is
/// always `>= max(xs)`, with equality exactly when one element dominates
/// completely; the gap is bounded by `ln(xs.len())`.
///
/// Panics on an empty slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "logsumexp requires at least one element");
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + sum.ln()
}

/// Index of the maximum element; exact ties resolve to the lowest index.
///
/// Panics on an empty slice.
pub fn argmax_lowest(xs: &[f64]) -> usize {
    assert!(!xs.is_empty(), "argmax of empty slice");
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn mean(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "mean of empty slice");
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n-1 denominator). Returns 0.0 for a single
/// element.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|&x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Pearson correlation coefficient. `None` when either series is constant or
/// shorter than two elements.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Resamples `xs` to `m` points by linear interpolation over the index axis.
///
/// The first and last samples are preserved when `m >= 2`; `m == 1` keeps the
/// first sample. Panics when either slice length is zero.
pub fn linear_resample(xs: &[f64], m: usize) -> Vec<f64> {
    assert!(!xs.is_empty(), "resample of empty slice");
    assert!(m >= 1, "resample to zero points");
    if m == 1 || xs.len() == 1 {
        return vec![xs[0]; m];
    }
    let scale = (xs.len() - 1) as f64 / (m - 1) as f64;
    (0..m)
        .map(|j| {
            let x = j as f64 * scale;
            let lo = x.floor() as usize;
            let hi = (lo + 1).min(xs.len() - 1);
            let frac = x - lo as f64;
            xs[lo] + (xs[hi] - xs[lo]) * frac
        })
        .collect()
}
