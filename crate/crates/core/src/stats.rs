//! Small statistics toolkit shared by the estimators.

use statrs::distribution::{ContinuousCDF, Normal};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// Standard error of the mean.
pub fn std_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    pub fn of(xs: &[f64]) -> Self {
        Estimate { mean: mean(xs), se: std_error(xs), n: xs.len() }
    }

    /// Symmetric interval of `z` standard errors.
    pub fn ci(&self, z: f64) -> (f64, f64) {
        (self.mean - z * self.se, self.mean + z * self.se)
    }
}

/// Ordinary least squares `y ≈ intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Standard error of the slope.
    pub slope_se: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    let slope_se = if n > 2 { (sse / (n - 2) as f64 / sxx).sqrt() } else { f64::NAN };
    Some(LinearFit { slope, intercept, r2, slope_se })
}

pub fn normal_cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

/// Kendall's tau between position and value, with the one-sided p-value for
/// a decreasing trend. Exact by enumeration for up to 9 points, normal
/// approximation beyond.
pub fn kendall_decreasing(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let s = kendall_s(values);
    let pairs = (n * (n - 1) / 2) as f64;
    let tau = s as f64 / pairs;
    if n <= 9 {
        let mut perm: Vec<usize> = (0..n).collect();
        let mut total = 0u64;
        let mut hits = 0u64;
        permute(&mut perm, 0, &mut |p| {
            total += 1;
            let v: Vec<f64> = p.iter().map(|&i| i as f64).collect();
            if kendall_s(&v) <= s {
                hits += 1;
            }
        });
        (tau, hits as f64 / total as f64)
    } else {
        let var = (n * (n - 1) * (2 * n + 5)) as f64 / 18.0;
        let z = (s as f64 + 1.0) / var.sqrt();
        (tau, normal_cdf(z))
    }
}

fn kendall_s(values: &[f64]) -> i64 {
    let mut s = 0i64;
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            if values[j] > values[i] {
                s += 1;
            } else if values[j] < values[i] {
                s -= 1;
            }
        }
    }
    s
}

fn permute(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    y.sort_by(|p, q| p.total_cmp(q));
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    (d, kolmogorov_q(lambda))
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let term = 2.0 * (-1f64).powi(j - 1) * (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Geweke-style z-score comparing the mean of the first `first` fraction of
/// a series with the last `last` fraction, using batch-means variances.
pub fn geweke_z(series: &[f64], first: f64, last: f64) -> f64 {
    let n = series.len();
    let na = ((n as f64) * first) as usize;
    let nb = ((n as f64) * last) as usize;
    if na < 10 || nb < 10 {
        return f64::NAN;
    }
    let a = &series[..na];
    let b = &series[n - nb..];
    let va = batch_variance_of_mean(a);
    let vb = batch_variance_of_mean(b);
    (mean(a) - mean(b)) / (va + vb).sqrt()
}

/// Variance of the sample mean estimated from 10 contiguous batches.
pub fn batch_variance_of_mean(xs: &[f64]) -> f64 {
    let batches = 10;
    let len = xs.len() / batches;
    if len == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..batches).map(|b| mean(&xs[b * len..(b + 1) * len])).collect();
    variance(&means) / batches as f64
}
