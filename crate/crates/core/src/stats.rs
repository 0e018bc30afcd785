//! Summary statistics, least-squares fits with Student-t intervals and the
//! two-sample Kolmogorov–Smirnov test.

use alloc::vec::Vec;

#[allow(unused_imports)]
use crate::math::Float;
use crate::special::{kolmogorov_sf, normal_sf, student_t_quantile};

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
}

/// Standard error of the mean.
pub fn std_error(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    (variance(x) / x.len() as f64).sqrt()
}

/// Linear interpolated quantile of a sorted slice (type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn sort_floats(x: &mut [f64]) {
    x.sort_unstable_by(|a, b| a.total_cmp(b));
}

/// Ordinary least squares `y = intercept + slope * x`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    pub residual_sd: f64,
    pub n: usize,
}

impl LinearFit {
    pub fn dof(&self) -> usize {
        self.n.saturating_sub(2)
    }

    /// Two-sided interval for the slope at confidence `level`.
    pub fn slope_ci(&self, level: f64) -> (f64, f64) {
        let h = self.t_crit(level) * self.slope_se;
        (self.slope - h, self.slope + h)
    }

    pub fn intercept_ci(&self, level: f64) -> (f64, f64) {
        let h = self.t_crit(level) * self.intercept_se;
        (self.intercept - h, self.intercept + h)
    }

    fn t_crit(&self, level: f64) -> f64 {
        if self.dof() == 0 {
            return f64::INFINITY;
        }
        student_t_quantile(0.5 + 0.5 * level, self.dof() as f64)
    }
}

/// Fits a line; needs at least two distinct abscissae.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n != y.len() || n < 2 {
        return None;
    }
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (residual_sd, slope_se, intercept_se) = if n > 2 {
        let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        let s2 = sse / (n - 2) as f64;
        let sx2: f64 = x.iter().map(|a| a * a).sum();
        (s2.sqrt(), (s2 / sxx).sqrt(), (s2 * sx2 / (n as f64 * sxx)).sqrt())
    } else {
        (0.0, f64::INFINITY, f64::INFINITY)
    };
    Some(LinearFit { slope, intercept, slope_se, intercept_se, residual_sd, n })
}

/// One-sided Mann–Whitney test of "`a` is stochastically larger than `b`".
/// Returns `(U_a, p)` using the normal approximation with tie and continuity
/// corrections.
pub fn mann_whitney_greater(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (n1, n2) = (a.len(), b.len());
    let mut all: Vec<(f64, bool)> = a.iter().map(|&v| (v, true)).chain(b.iter().map(|&v| (v, false))).collect();
    all.sort_unstable_by(|p, q| p.0.total_cmp(&q.0));
    let n = all.len();
    let (mut rank_a, mut ties) = (0.0, 0.0);
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let r = 0.5 * (i + j) as f64 + 1.0;
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        rank_a += r * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let (f1, f2, nf) = (n1 as f64, n2 as f64, n as f64);
    let u = rank_a - f1 * (f1 + 1.0) / 2.0;
    let mu = f1 * f2 / 2.0;
    let var = f1 * f2 / 12.0 * ((nf + 1.0) - ties / (nf * (nf - 1.0)));
    if var <= 0.0 {
        return (u, 0.5);
    }
    (u, normal_sf((u - mu - 0.5) / var.sqrt()))
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a: Vec<f64> = a.to_vec();
    let mut b: Vec<f64> = b.to_vec();
    sort_floats(&mut a);
    sort_floats(&mut b);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lam = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_sf(lam))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 0.5 + 2.0 * v).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert_relative_eq!(f.slope, 2.0, max_relative = 1e-14);
        assert_relative_eq!(f.intercept, 0.5, max_relative = 1e-13);
        assert!(f.slope_se < 1e-12);
    }

    // numpy/scipy.stats.linregress reference
    #[test]
    fn regression_standard_errors() {
        let x = [0.0, 1.0, 2.0, 3.0, 4.0];
        let y = [1.1, 2.9, 5.2, 6.8, 9.1];
        let f = linear_fit(&x, &y).unwrap();
        assert_relative_eq!(f.slope, 1.99, max_relative = 1e-12);
        assert_relative_eq!(f.intercept, 1.04, max_relative = 1e-12);
        assert_relative_eq!(f.slope_se, 0.059721576223897795, max_relative = 1e-10);
        assert_relative_eq!(f.intercept_se, 0.14628738838328137, max_relative = 1e-10);
    }

    #[test]
    fn ks_identical_and_shifted() {
        let a: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let (d, p) = ks_two_sample(&a, &a);
        assert_eq!(d, 0.0);
        assert_eq!(p, 1.0);
        let b: Vec<f64> = a.iter().map(|v| v + 500.0).collect();
        let (d, p) = ks_two_sample(&a, &b);
        assert_relative_eq!(d, 0.5, max_relative = 1e-12);
        assert!(p < 1e-10);
    }

    // scipy.stats.mannwhitneyu(alternative="greater", method="asymptotic")
    #[test]
    fn mann_whitney_reference() {
        let a = [3.1, 4.2, 5.0, 5.0, 6.3, 7.7, 2.2, 8.1];
        let b = [1.0, 2.2, 3.0, 2.5, 4.4, 1.9, 5.0];
        let (u, p) = mann_whitney_greater(&a, &b);
        assert_relative_eq!(u, 46.5);
        assert_relative_eq!(p, 0.018198805001832467, max_relative = 1e-10);
    }

    #[test]
    fn quantiles() {
        let s = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(quantile_sorted(&s, 0.0), 0.0);
        assert_eq!(quantile_sorted(&s, 1.0), 3.0);
        assert_relative_eq!(quantile_sorted(&s, 0.5), 1.5);
    }
}
