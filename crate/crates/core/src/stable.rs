//! Rotationally invariant alpha-stable increments by Brownian subordination.
//!
//! With the normalization `E exp(i<z, L_t>) = exp(-t|z|^alpha/2)`, the
//! subordinator has Laplace transform `E exp(-u S_t) = exp(-2^{(alpha-2)/2} u^{alpha/2} t)`
//! and `L_t = W_{S_t}` in law.

use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use crate::math::Float;
use crate::error::{domain, usage, Result};
use crate::rng::RngStream;

/// Stability index in (1, 2]; the value 2 is the Brownian endpoint.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct StabilityIndex(f64);

impl StabilityIndex {
    pub const BROWNIAN: StabilityIndex = StabilityIndex(2.0);

    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 1.0 && alpha <= 2.0 {
            Ok(Self(alpha))
        } else {
            Err(domain("alpha", alpha))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_brownian(self) -> bool {
        self.0 == 2.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StableIncrementSpec {
    pub alpha: StabilityIndex,
    pub dim: usize,
    pub dt: f64,
}

impl StableIncrementSpec {
    pub fn new(alpha: StabilityIndex, dim: usize, dt: f64) -> Result<Self> {
        if dim == 0 {
            return usage("dimension must be at least 1");
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(domain("dt", dt));
        }
        Ok(Self { alpha, dim, dt })
    }
}

/// Deterministic factor mapping a standard one-sided (alpha/2)-stable variable
/// onto `S_dt`: `(2^{(alpha-2)/2} dt)^{2/alpha}`.
pub fn subordinator_scale(alpha: f64, dt: f64) -> f64 {
    ((0.5 * (alpha - 2.0) * core::f64::consts::LN_2 + dt.ln()) * 2.0 / alpha).exp()
}

/// Kanter's representation of a one-sided stable variable with Laplace
/// transform `exp(-u^beta)`, from `u` uniform on (0, pi) and `e ~ Exp(1)`.
pub fn positive_stable(beta: f64, u: f64, e: f64) -> f64 {
    let a = (beta * u).sin() / u.sin().powf(1.0 / beta);
    let b = (((1.0 - beta) * u).sin() / e).powf((1.0 - beta) / beta);
    a * b
}

/// Draws of `S_dt` with the `(alpha, dt)` constants computed once. Every draw
/// consumes exactly two uniforms-worth of the stream (U then E), also at
/// alpha = 2 where the value is `dt` exactly, so streams stay aligned when the
/// same seed is reused across alpha.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubordinatorSampler {
    dt: f64,
    beta: f64,
    scale: f64,
    brownian: bool,
}

impl SubordinatorSampler {
    pub fn new(alpha: StabilityIndex, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(domain("dt", dt));
        }
        let a = alpha.value();
        Ok(Self { dt, beta: 0.5 * a, scale: subordinator_scale(a, dt), brownian: alpha.is_brownian() })
    }

    #[inline]
    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        let u = PI * rng.open01();
        let e = rng.exp1();
        if self.brownian {
            return self.dt;
        }
        self.scale * positive_stable(self.beta, u, e)
    }
}

/// One draw of `S_dt`.
pub fn sample_subordinator_increment(alpha: StabilityIndex, dt: f64, rng: &mut RngStream) -> Result<f64> {
    Ok(SubordinatorSampler::new(alpha, dt)?.sample(rng))
}

/// `sqrt(S_dt) * G` in `dim` dimensions: the subordinator is drawn first, then
/// the `dim` Gaussians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StableIncrementSampler {
    sub: SubordinatorSampler,
    dim: usize,
}

impl StableIncrementSampler {
    pub fn new(spec: &StableIncrementSpec) -> Result<Self> {
        Ok(Self { sub: SubordinatorSampler::new(spec.alpha, spec.dt)?, dim: spec.dim })
    }

    #[inline]
    pub fn sample_into(&self, rng: &mut RngStream, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        let r = self.sub.sample(rng).sqrt();
        for v in out.iter_mut() {
            *v = r * rng.normal();
        }
    }
}

/// Writes `sqrt(S_dt) * G` into `out` (length `spec.dim`).
pub fn sample_stable_increment_into(spec: &StableIncrementSpec, rng: &mut RngStream, out: &mut [f64]) -> Result<()> {
    if out.len() != spec.dim {
        return usage("output length must equal the dimension");
    }
    StableIncrementSampler::new(spec)?.sample_into(rng, out);
    Ok(())
}

pub fn sample_stable_increment(spec: &StableIncrementSpec, rng: &mut RngStream) -> Result<Vec<f64>> {
    let mut out = alloc::vec![0.0; spec.dim];
    sample_stable_increment_into(spec, rng, &mut out)?;
    Ok(out)
}

/// `n` increments as a row-major `n x dim` buffer.
pub fn sample_stable_batch(spec: &StableIncrementSpec, n: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
    let sampler = StableIncrementSampler::new(spec)?;
    let mut out = alloc::vec![0.0; n * spec.dim];
    for row in out.chunks_exact_mut(spec.dim) {
        sampler.sample_into(rng, row);
    }
    Ok(out)
}

/// Sample characteristic function with per-component standard errors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CharFnEstimate {
    pub re: f64,
    pub im: f64,
    pub re_se: f64,
    pub im_se: f64,
}

impl CharFnEstimate {
    pub fn modulus(&self) -> f64 {
        self.re.hypot(self.im)
    }
}

/// `(1/n) sum exp(i<z, x_k>)` over the rows of a row-major sample buffer.
pub fn empirical_char_function(samples: &[f64], dim: usize, z: &[f64]) -> Result<CharFnEstimate> {
    if dim == 0 || z.len() != dim || !samples.len().is_multiple_of(dim) {
        return usage("sample buffer, dimension and z must agree");
    }
    let n = samples.len() / dim;
    if n == 0 {
        return usage("empty sample set");
    }
    let (mut sc, mut ss, mut sc2, mut ss2) = (0.0, 0.0, 0.0, 0.0);
    for x in samples.chunks_exact(dim) {
        let t: f64 = x.iter().zip(z).map(|(a, b)| a * b).sum();
        let (s, c) = t.sin_cos();
        sc += c;
        ss += s;
        sc2 += c * c;
        ss2 += s * s;
    }
    let nf = n as f64;
    let (re, im) = (sc / nf, ss / nf);
    let se = |m: f64, m2: f64| {
        if n < 2 {
            0.0
        } else {
            ((m2 / nf - m * m).max(0.0) / (nf - 1.0)).sqrt()
        }
    };
    Ok(CharFnEstimate { re, im, re_se: se(re, sc2), im_se: se(im, ss2) })
}

/// `exp(-t |z|^alpha / 2)`.
pub fn stable_char_function(alpha: f64, t: f64, z_norm: f64) -> f64 {
    (-0.5 * t * z_norm.powf(alpha)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_two_sample, mean, std_error};
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn idx(a: f64) -> StabilityIndex {
        StabilityIndex::new(a).unwrap()
    }

    #[test]
    fn rejects_bad_alpha_and_dt() {
        assert!(StabilityIndex::new(1.0).is_err());
        assert!(StabilityIndex::new(2.0001).is_err());
        assert!(StabilityIndex::new(f64::NAN).is_err());
        let mut r = RngStream::new(0, 0);
        assert!(sample_subordinator_increment(idx(1.5), 0.0, &mut r).is_err());
        assert!(StableIncrementSpec::new(idx(1.5), 0, 1.0).is_err());
    }

    #[test]
    fn brownian_endpoint_is_deterministic() {
        let mut r = RngStream::new(1, 0);
        for _ in 0..10 {
            assert_eq!(sample_subordinator_increment(StabilityIndex::BROWNIAN, 0.7, &mut r).unwrap(), 0.7);
        }
    }

    #[test]
    fn scale_matches_laplace_exponent() {
        // (2^{(a-2)/2} dt)^{2/a} raised to a/2 must give 2^{(a-2)/2} dt
        for &a in &[1.1, 1.5, 1.99] {
            for &dt in &[1e-3, 0.5, 3.0] {
                let s = subordinator_scale(a, dt);
                let want = 2f64.powf(0.5 * (a - 2.0)) * dt;
                assert!((s.powf(0.5 * a) / want - 1.0).abs() < 1e-13);
            }
        }
        assert!((subordinator_scale(2.0, 0.3) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn laplace_transform_grid() {
        let mut r = RngStream::new(11, 0);
        let n = 200_000;
        for &a in &[1.1, 1.3, 1.5, 1.7, 1.9] {
            let s: Vec<f64> = (0..n).map(|_| sample_subordinator_increment(idx(a), 1.0, &mut r).unwrap()).collect();
            for &u in &[0.5, 1.0, 2.0] {
                let v: Vec<f64> = s.iter().map(|x| (-u * x).exp()).collect();
                let want = (-(2f64.powf(0.5 * (a - 2.0))) * u.powf(0.5 * a)).exp();
                let (m, se) = (mean(&v), std_error(&v));
                assert!((m - want).abs() < 4.0 * se, "a={a} u={u} m={m} want={want} se={se}");
            }
        }
    }

    #[test]
    fn negative_moment_scales_like_dt_pow() {
        // E S_dt^{-1} = scale^{-1} * Gamma(1 + 2/a) for the Kanter variable.
        let a = 1.5;
        let mut r = RngStream::new(5, 0);
        let n = 200_000;
        let mut normalized = Vec::new();
        for &dt in &[1.0, 0.5, 0.25, 0.125] {
            let inv: Vec<f64> = (0..n).map(|_| 1.0 / sample_subordinator_increment(idx(a), dt, &mut r).unwrap()).collect();
            let (m, se) = (mean(&inv), std_error(&inv));
            assert!(m.is_finite());
            let want = crate::special::gamma(1.0 + 2.0 / a) / subordinator_scale(a, dt);
            assert!((m - want).abs() < 4.0 * se, "dt={dt} {m} {want} {se}");
            normalized.push(m * dt.powf(2.0 / a));
        }
        let (lo, hi) = normalized.iter().fold((f64::MAX, 0.0f64), |(l, h), v| (l.min(*v), h.max(*v)));
        assert!(hi / lo < 1.05);
    }

    #[test]
    fn char_function_trivial_cases() {
        let zeros = alloc::vec![0.0; 30];
        let c = empirical_char_function(&zeros, 3, &[0.3, -1.0, 2.0]).unwrap();
        assert_eq!((c.re, c.im, c.re_se, c.im_se), (1.0, 0.0, 0.0, 0.0));
        let c = empirical_char_function(&[0.5, 2.0], 2, &[1.0, 0.25]).unwrap();
        assert!((c.re - 1f64.cos()).abs() < 1e-15 && (c.im - 1f64.sin()).abs() < 1e-15);
        assert!(empirical_char_function(&[], 2, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn stable_cf_and_rotation_invariance() {
        let spec = StableIncrementSpec::new(idx(1.5), 2, 1.0).unwrap();
        let mut r = RngStream::new(3, 0);
        let xs = sample_stable_batch(&spec, 200_000, &mut r).unwrap();
        let want = stable_char_function(1.5, 1.0, 1.0);
        for k in 0..6 {
            let t = k as f64 * PI / 6.0;
            let c = empirical_char_function(&xs, 2, &[t.cos(), t.sin()]).unwrap();
            assert!((c.re - want).abs() < 4.0 * c.re_se, "{k} {} {want}", c.re);
            assert!(c.im.abs() < 4.0 * c.im_se);
        }
    }

    #[test]
    fn brownian_increment_variance() {
        let spec = StableIncrementSpec::new(StabilityIndex::BROWNIAN, 1, 1.0).unwrap();
        let mut r = RngStream::new(4, 0);
        let xs = sample_stable_batch(&spec, 100_000, &mut r).unwrap();
        let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
        assert!((mean(&sq) - 1.0).abs() < 4.0 * std_error(&sq));
    }

    #[test]
    fn near_brownian_weak_convergence() {
        let spec = StableIncrementSpec::new(idx(1.99), 1, 1.0).unwrap();
        let mut r = RngStream::new(8, 0);
        let xs = sample_stable_batch(&spec, 100_000, &mut r).unwrap();
        for &z in &[0.5, 1.0, 2.0] {
            let c = empirical_char_function(&xs, 1, &[z]).unwrap();
            let gauss = (-0.5 * z * z).exp();
            assert!((c.re - gauss).abs() <= 0.02 + 4.0 * c.re_se);
        }
    }

    #[test]
    fn self_similarity_ks() {
        let (a, c, t) = (1.5, 3.0, 0.4);
        let mut r1 = RngStream::new(21, 0);
        let mut r2 = RngStream::new(21, 1);
        let n = 100_000;
        let x: Vec<f64> = (0..n).map(|_| sample_subordinator_increment(idx(a), c * t, &mut r1).unwrap()).collect();
        let y: Vec<f64> = (0..n)
            .map(|_| c.powf(2.0 / a) * sample_subordinator_increment(idx(a), t, &mut r2).unwrap())
            .collect();
        let (_, p) = ks_two_sample(&x, &y);
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn determinism() {
        let spec = StableIncrementSpec::new(idx(1.3), 3, 0.01).unwrap();
        let a = sample_stable_batch(&spec, 100, &mut RngStream::new(9, 2)).unwrap();
        let b = sample_stable_batch(&spec, 100, &mut RngStream::new(9, 2)).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn increments_positive_and_finite(alpha in 1.0001f64..2.0, dt in 1e-6f64..10.0, seed in any::<u64>()) {
            let mut r = RngStream::new(seed, 0);
            for _ in 0..50 {
                let s = sample_subordinator_increment(idx(alpha), dt, &mut r).unwrap();
                prop_assert!(s > 0.0 && s.is_finite());
            }
        }

        #[test]
        fn stream_alignment_across_alpha(seed in any::<u64>(), a in 1.05f64..2.0) {
            // Same stream, different alpha: the Gaussian parts coincide.
            let sa = StableIncrementSpec::new(idx(a), 2, 0.1).unwrap();
            let sb = StableIncrementSpec::new(StabilityIndex::BROWNIAN, 2, 0.1).unwrap();
            let mut ra = RngStream::new(seed, 0);
            let mut rb = RngStream::new(seed, 0);
            let xa = sample_stable_increment(&sa, &mut ra).unwrap();
            let xb = sample_stable_increment(&sb, &mut rb).unwrap();
            let ratio0 = xa[0] / xb[0];
            let ratio1 = xa[1] / xb[1];
            prop_assert!((ratio0 - ratio1).abs() <= 1e-9 * ratio0.abs().max(1.0));
        }
    }
}
