//! Batch statistics of evidence estimates. Inputs are `log Ẑ` values; a
//! degenerate run enters as `-∞`, i.e. a zero estimate.

/// Max-shifted `log Σ exp(x_i)`. Empty or all `-∞` input gives `-∞`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Estimates rescaled so the largest is one; both metrics below are
/// invariant to this scale.
fn shifted(log_z: &[f64]) -> Vec<f64> {
    let max = log_z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    log_z.iter().map(|z| (z - max).exp()).collect()
}

/// Relative effective sample size `(Σ Ẑ)² / (M Σ Ẑ²)`.
pub fn ress(log_z: &[f64]) -> f64 {
    let w = shifted(log_z);
    let sum: f64 = w.iter().sum();
    let sum_sq: f64 = w.iter().map(|x| x * x).sum();
    sum * sum / (w.len() as f64 * sum_sq)
}

/// Conditional acceptance ratio `(2 Σ_i c_i - 1) / M`, where `c_i` is the sum
/// of the `i` smallest estimates after normalising them to sum to one.
pub fn car(log_z: &[f64]) -> f64 {
    let mut w = shifted(log_z);
    w.sort_by(f64::total_cmp);
    let (mut cumulative, mut sum_c) = (0.0, 0.0);
    for v in &w {
        cumulative += v;
        sum_c += cumulative;
    }
    (2.0 * sum_c / cumulative - 1.0) / w.len() as f64
}

/// Ratio of total propagations to the `M N T` propagations of a BPF batch.
pub fn rho(propagations: &[u64], particles: usize, checkpoints: usize) -> f64 {
    let total: u64 = propagations.iter().sum();
    total as f64 / (propagations.len() * particles * checkpoints) as f64
}

/// Sample variance of the finite `log Ẑ` values; NaN with fewer than two.
pub fn var_log_z(log_z: &[f64]) -> f64 {
    let finite: Vec<f64> = log_z.iter().copied().filter(|z| z.is_finite()).collect();
    if finite.len() < 2 {
        return f64::NAN;
    }
    let n = finite.len() as f64;
    let mean = finite.iter().sum::<f64>() / n;
    finite.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Mean of `Ẑ / Z_ref` and its standard error, given `log Z_ref`.
pub fn mean_ratio(log_z: &[f64], log_ref: f64) -> (f64, f64) {
    let xs: Vec<f64> = log_z.iter().map(|z| (z - log_ref).exp()).collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
