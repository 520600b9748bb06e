use statrs::distribution::{ContinuousCDF, Normal};

/// Type-7 (linear interpolation) sample quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Type-7 sample quantiles at several probabilities; `None` for empty input.
pub fn quantiles(values: &[f64], probs: &[f64]) -> Option<Vec<f64>> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(probs.iter().map(|&p| quantile_sorted(&sorted, p)).collect())
}

pub fn mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

pub fn variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Pairwise (cascade) summation; the reduction order depends only on the
/// length, so results are reproducible regardless of threading.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 32 {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn std_normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

#[derive(Debug, Clone, Copy)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample Kolmogorov–Smirnov test of `sample` against the CDF `cdf`.
pub fn ks_test<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> KsResult {
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sqrt_n = n.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    KsResult {
        statistic: d,
        p_value: kolmogorov_survival(lambda),
    }
}

pub fn ks_uniform(sample: &[f64]) -> KsResult {
    ks_test(sample, |x| x.clamp(0.0, 1.0))
}

fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type7_midpoint() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(quantiles(&v, &[0.5]).unwrap()[0], 50.5);
        let r: Vec<f64> = (1..=10).map(f64::from).collect();
        assert!((quantiles(&r, &[0.8]).unwrap()[0] - 8.2).abs() < 1e-12);
    }

    #[test]
    fn constant_series_quantile() {
        let v = vec![3.5; 17];
        for p in [0.01, 0.5, 0.99] {
            assert_eq!(quantiles(&v, &[p]).unwrap()[0], 3.5);
        }
    }

    #[test]
    fn empty_series_has_no_quantiles() {
        assert!(quantiles(&[], &[0.5]).is_none());
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert!((std_normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((std_normal_cdf(1.959963984540054) - 0.975).abs() < 1e-9);
        assert!((std_normal_quantile(0.975) - 1.959963984540054).abs() < 1e-9);
    }

    #[test]
    fn ks_detects_shift() {
        let grid: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!(ks_uniform(&grid).p_value > 0.99);
        let shifted: Vec<f64> = grid.iter().map(|u| u * u).collect();
        assert!(ks_uniform(&shifted).p_value < 1e-6);
    }
}
