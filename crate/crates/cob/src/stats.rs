//! Small statistics helpers shared by the aggregate reporting and the
//! statistical acceptance suites.

/// Sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Standard error of the sample mean.
pub fn std_error(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Half-width of a z-sigma confidence interval for a Bernoulli rate
/// estimated from `n` trials.
pub fn bernoulli_ci(rate: f64, n: u64, z: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    z * (rate * (1.0 - rate) / n as f64).sqrt()
}

/// Outcome of a one-sided Kolmogorov-Smirnov dominance test.
#[derive(Clone, Copy, Debug)]
pub struct KsResult {
    /// `sup_w (F_model(w) - F_empirical(w))`: positive mass where the sample
    /// is stochastically larger than the model.
    pub d_minus: f64,
    pub threshold: f64,
    pub dominated: bool,
}

/// Tests whether integer samples are stochastically dominated by the model
/// distribution (empirical CDF never significantly below the model CDF).
/// `alpha` is the significance level of the one-sided KS statistic.
pub fn ks_dominated_by(samples: &[u64], model_cdf: impl Fn(u64) -> f64, alpha: f64) -> KsResult {
    assert!(!samples.is_empty());
    let n = samples.len() as f64;
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let max = *sorted.last().unwrap();
    let mut d_minus = 0.0f64;
    let mut idx = 0usize;
    for w in 0..=max {
        while idx < sorted.len() && sorted[idx] <= w {
            idx += 1;
        }
        let emp = idx as f64 / n;
        let model = model_cdf(w);
        d_minus = d_minus.max(model - emp);
    }
    let threshold = ((1.0 / alpha).ln() / (2.0 * n)).sqrt();
    KsResult {
        d_minus,
        threshold,
        dominated: d_minus <= threshold,
    }
}
