//! Closed-form laws of the Ornstein–Uhlenbeck model `dX = -X dt + dL`, used as
//! oracles: symmetric stable laws with characteristic function
//! `exp(i loc t - gamma |t|^alpha)`, their CDFs by Gil-Pelaez inversion, and
//! analytic tail integrals.

use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use crate::math::Float;
use crate::error::{domain, Result};
use crate::quad::GaussLegendre;
use crate::rng::RngStream;
use crate::special::{ln_gamma, normal_pdf, normal_sf};
use crate::stable::{sample_stable_increment_into, StabilityIndex, StableIncrementSpec};
use crate::wasserstein::Cdf1d;

/// Symmetric alpha-stable law on the line, `alpha` in (1, 2].
#[derive(Clone, Debug)]
pub struct StableLaw {
    alpha: f64,
    gamma: f64,
    loc: f64,
    // Gil-Pelaez quadrature: nodes t_k and weights w_k * exp(-gamma t_k^alpha) / t_k.
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl StableLaw {
    pub fn new(alpha: f64, gamma: f64, loc: f64) -> Result<Self> {
        StabilityIndex::new(alpha)?;
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(domain("gamma", gamma));
        }
        let (mut nodes, mut weights) = (Vec::new(), Vec::new());
        if alpha < 2.0 {
            let t_max = (42.0 / gamma).powf(1.0 / alpha);
            let gl = GaussLegendre::new(12);
            let mut edges = Vec::new();
            let mut e = 1e-6 * t_max.min(1.0);
            edges.push(0.0);
            let h = 0.05;
            while e < h {
                edges.push(e);
                e *= 2.0;
            }
            let mut a = *edges.last().unwrap();
            while a < t_max {
                a = (a + h).min(t_max);
                edges.push(a);
            }
            for w in edges.windows(2) {
                for (t, wt) in gl.mapped(w[0], w[1]) {
                    nodes.push(t);
                    weights.push(wt * (-gamma * t.powf(alpha)).exp() / t);
                }
            }
        }
        Ok(Self { alpha, gamma, loc, nodes, weights })
    }

    /// Gaussian with the given mean and variance (`gamma = variance / 2`).
    pub fn gaussian(mean: f64, variance: f64) -> Result<Self> {
        Self::new(2.0, 0.5 * variance, mean)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn loc(&self) -> f64 {
        self.loc
    }

    pub fn char_function(&self, t: f64) -> (f64, f64) {
        let m = (-self.gamma * t.abs().powf(self.alpha)).exp();
        let (s, c) = (self.loc * t).sin_cos();
        (m * c, m * s)
    }

    fn gaussian_sd(&self) -> f64 {
        (2.0 * self.gamma).sqrt()
    }

    /// `P(X - loc > y)` for `y >= 0` by its asymptotic series, with the first
    /// omitted term as error; `None` if the series is not yet usable.
    fn tail_series(&self, y: f64, integrated: bool) -> Option<(f64, f64)> {
        let a = self.alpha;
        let mut sum = 0.0;
        let mut last = f64::INFINITY;
        for k in 1..60 {
            let kf = k as f64;
            let ln_mag = ln_gamma(a * kf) - ln_gamma(kf + 1.0) + kf * self.gamma.ln() - a * kf * y.ln();
            let sine = (kf * PI * a / 2.0).sin();
            if sine.abs() < 1e-12 {
                continue;
            }
            let mut term = ln_mag.exp() * sine / PI;
            if integrated {
                term *= y / (a * kf - 1.0);
            }
            if k % 2 == 0 {
                term = -term;
            }
            if term.abs() > last {
                return if k > 3 { Some((sum, last)) } else { None };
            }
            sum += term;
            last = term.abs();
            if last < 1e-17 * sum.abs() {
                return Some((sum, last));
            }
        }
        Some((sum, last))
    }
}

impl Cdf1d for StableLaw {
    fn cdf(&self, x: f64) -> f64 {
        let y = x - self.loc;
        if self.alpha == 2.0 {
            return 1.0 - normal_sf(y / self.gaussian_sd());
        }
        let s: f64 = self.nodes.iter().zip(&self.weights).map(|(t, w)| w * (t * y).sin()).sum();
        (0.5 + s / PI).clamp(0.0, 1.0)
    }

    fn upper_tail_integral(&self, x: f64) -> Option<(f64, f64)> {
        let y = x - self.loc;
        if y <= 0.0 {
            return None;
        }
        if self.alpha == 2.0 {
            let s = self.gaussian_sd();
            return Some((s * normal_pdf(y / s) - y * normal_sf(y / s), 0.0));
        }
        self.tail_series(y, true)
    }

    fn lower_tail_integral(&self, x: f64) -> Option<(f64, f64)> {
        let mirrored = Self { loc: -self.loc, ..self.clone() };
        mirrored.upper_tail_integral(-x)
    }
}

/// Stationary law of `dX = -X dt + dL^(alpha)` in one dimension:
/// characteristic function `exp(-|z|^alpha / (2 alpha))`.
pub fn ou_stationary(alpha: f64) -> Result<StableLaw> {
    StableLaw::new(alpha, 0.5 / alpha, 0.0)
}

/// Stationary law of the Euler chain `X' = (1 - dt) X + L_dt` for the same
/// model: stable with `gamma = dt / (2 (1 - (1 - dt)^alpha))`. Quantifies the
/// discretization bias of simulated stationary ensembles exactly.
pub fn ou_euler_stationary(alpha: f64, dt: f64) -> Result<StableLaw> {
    if !(dt > 0.0 && dt < 1.0) {
        return Err(domain("dt", dt));
    }
    StableLaw::new(alpha, dt / (2.0 * (1.0 - (1.0 - dt).powf(alpha))), 0.0)
}

/// Law of the Euler chain after `n = t/dt` steps from `x0`: location
/// `x0 (1 - dt)^n`, scale `dt (1 - q^n) / (2 (1 - q))` with `q = (1 - dt)^alpha`.
pub fn ou_euler_marginal(alpha: f64, x0: f64, t: f64, dt: f64) -> Result<StableLaw> {
    if !(dt > 0.0 && dt < 1.0) {
        return Err(domain("dt", dt));
    }
    let n = (t / dt).round();
    if !(n >= 1.0) {
        return Err(domain("t", t));
    }
    let q = (1.0 - dt).powf(alpha);
    StableLaw::new(alpha, dt * (1.0 - q.powf(n)) / (2.0 * (1.0 - q)), x0 * (1.0 - dt).powf(n))
}

/// Law at time `t` started from `x0`: location `x0 e^{-t}`, scale
/// `(1 - e^{-alpha t}) / (2 alpha)`.
pub fn ou_marginal(alpha: f64, x0: f64, t: f64) -> Result<StableLaw> {
    StableLaw::new(alpha, (1.0 - (-alpha * t).exp()) / (2.0 * alpha), x0 * (-t).exp())
}

/// `E cos(xi * X_t)` for the one-dimensional OU model started at `x`.
pub fn ou_semigroup_cos(alpha: f64, xi: f64, x: f64, t: f64) -> f64 {
    (xi * x * (-t).exp()).cos() * (-xi.abs().powf(alpha) * (1.0 - (-alpha * t).exp()) / (2.0 * alpha)).exp()
}

/// Exact draw from the d-dimensional stationary OU law, `alpha^{-1/alpha} L_1`.
pub fn sample_ou_stationary(alpha: StabilityIndex, out: &mut [f64], rng: &mut RngStream) -> Result<()> {
    let spec = StableIncrementSpec::new(alpha, out.len(), 1.0)?;
    sample_stable_increment_into(&spec, rng, out)?;
    let c = alpha.value().powf(-1.0 / alpha.value());
    out.iter_mut().for_each(|v| *v *= c);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // 30-digit Gil-Pelaez inversion with mpmath on a fine breakpoint grid.
    #[test]
    fn euler_stationary_scale() {
        // dt -> 0 recovers the continuous law; dt = 1/2, alpha = 2: variance 1/(2 - dt)
        let e = ou_euler_stationary(1.5, 1e-7).unwrap();
        assert_relative_eq!(e.gamma(), ou_stationary(1.5).unwrap().gamma(), max_relative = 1e-6);
        let g = ou_euler_stationary(2.0, 0.5).unwrap();
        assert_relative_eq!(2.0 * g.gamma(), 1.0 / 1.5, max_relative = 1e-14);
        assert!(ou_euler_stationary(1.5, 1.0).is_err());
    }

    #[test]
    fn euler_marginal_limits() {
        // one step is the increment itself; many steps approach the chain's stationary law
        let one = ou_euler_marginal(1.5, 2.0, 0.1, 0.1).unwrap();
        assert_relative_eq!(one.gamma(), 0.05, max_relative = 1e-14);
        assert_relative_eq!(one.loc(), 1.8, max_relative = 1e-14);
        let far = ou_euler_marginal(1.5, 2.0, 60.0, 0.1).unwrap();
        assert_relative_eq!(far.gamma(), ou_euler_stationary(1.5, 0.1).unwrap().gamma(), max_relative = 1e-12);
        assert!(ou_euler_marginal(1.5, 0.0, 0.0, 0.1).is_err());
    }

    #[test]
    fn cdf_reference_values() {
        let law = StableLaw::new(1.5, 1.0, 0.0).unwrap();
        assert!((law.cdf(0.0) - 0.5).abs() < 1e-14);
        assert_relative_eq!(law.cdf(1.0), CDF_15_AT_1, max_relative = 1e-10);
        assert_relative_eq!(law.cdf(-3.0), CDF_15_AT_M3, max_relative = 1e-9);
        let cauchyish = StableLaw::new(1.2, 0.5, 0.0).unwrap();
        assert_relative_eq!(cauchyish.cdf(10.0), CDF_12_AT_10, max_relative = 1e-10);
    }

    const CDF_15_AT_1: f64 = 0.756342024399270464500104119207;
    const CDF_15_AT_M3: f64 = 0.0515978035591850473786135203625;
    const CDF_12_AT_10: f64 = 0.991119230439800408221065949751;

    #[test]
    fn gaussian_endpoint() {
        let g = ou_stationary(2.0).unwrap();
        // N(0, 1/2)
        assert_relative_eq!(g.cdf(0.5), 1.0 - normal_sf(0.5 / 0.5f64.sqrt()), max_relative = 1e-15);
        let (v, _) = g.upper_tail_integral(0.0 + 1e-300).unwrap();
        assert_relative_eq!(v, (0.5 / PI).sqrt() * 0.5f64.sqrt() * 1.0, max_relative = 1e-9);
    }

    #[test]
    fn series_tail_matches_inversion() {
        let law = ou_stationary(1.5).unwrap();
        let x = 40.0;
        let (tail_prob, _) = law.tail_series(x, false).unwrap();
        assert_relative_eq!(tail_prob, 1.0 - law.cdf(x), max_relative = 1e-8);
        // 30-digit reference
        assert_relative_eq!(tail_prob, 0.000263379923840019873805479828961, max_relative = 1e-12);
    }

    #[test]
    fn cf_and_semigroup() {
        let law = ou_marginal(1.5, 2.0, 0.7).unwrap();
        let (re, im) = law.char_function(1.3);
        let want_mod = (-1.3f64.powf(1.5) * (1.0 - (-1.05f64).exp()) / 3.0).exp();
        assert_relative_eq!(re.hypot(im), want_mod, max_relative = 1e-14);
        assert_relative_eq!(ou_semigroup_cos(1.5, 1.3, 2.0, 0.7), re, max_relative = 1e-13);
    }
}
