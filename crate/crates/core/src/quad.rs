//! Quadrature rules: Gauss–Legendre, adaptive Gauss–Kronrod (7/15) and
//! antipodally symmetric rules on the unit sphere.

use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use crate::math::Float;
use crate::rng::RngStream;

/// Gauss–Legendre rule on [-1, 1].
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = alloc::vec![0.0; n];
        let mut weights = alloc::vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped onto [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
        self.nodes.iter().zip(&self.weights).map(move |(x, w)| (c + h * x, h * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// One Gauss–Kronrod 7/15 panel: (Kronrod value, |Kronrod - Gauss|).
pub fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

#[derive(Clone, Copy, Debug)]
pub struct Adaptive {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_panels: usize,
}

impl Default for Adaptive {
    fn default() -> Self {
        Self { abs_tol: 1e-12, rel_tol: 1e-10, max_panels: 2000 }
    }
}

/// Globally adaptive G7K15 integration over [a, b] with initial breakpoints.
/// Returns (value, error estimate).
pub fn adaptive<F: FnMut(f64) -> f64>(mut f: F, breaks: &[f64], cfg: Adaptive) -> (f64, f64) {
    let mut panels: Vec<(f64, f64, f64, f64)> = Vec::new();
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            let (v, e) = gk15(&mut f, w[0], w[1]);
            panels.push((w[0], w[1], v, e));
        }
    }
    loop {
        let total: f64 = panels.iter().map(|p| p.2).sum();
        let err: f64 = panels.iter().map(|p| p.3).sum();
        if err <= cfg.abs_tol.max(cfg.rel_tol * total.abs()) || panels.len() >= cfg.max_panels {
            return (total, err);
        }
        let (idx, _) = panels
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, p)| if p.3 > acc.1 { (i, p.3) } else { acc });
        let (a, b, _, _) = panels[idx];
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            return (total, err);
        }
        let (v1, e1) = gk15(&mut f, a, m);
        let (v2, e2) = gk15(&mut f, m, b);
        panels[idx] = (a, m, v1, e1);
        panels.push((m, b, v2, e2));
    }
}

/// Cubature on the unit sphere S^{d-1} with total weight equal to its area.
/// Points come in antipodal pairs `(p, -p)` stored consecutively, so odd
/// integrands cancel exactly.
#[derive(Clone, Debug)]
pub struct SphereRule {
    pub dim: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub monte_carlo: bool,
}

impl SphereRule {
    /// Deterministic rule for d <= 3. `level` controls resolution:
    /// uniform angles (d = 2, `2*level` points), or Gauss–Legendre in
    /// `cos(theta)` times `2*level` azimuths (d = 3).
    pub fn deterministic(dim: usize, level: usize) -> Self {
        let level = level.max(1);
        let mut points = Vec::new();
        let mut weights = Vec::new();
        match dim {
            1 => {
                points.extend_from_slice(&[1.0, -1.0]);
                weights.extend_from_slice(&[1.0, 1.0]);
            }
            2 => {
                let n = 2 * level;
                let w = 2.0 * PI / n as f64;
                for k in 0..level {
                    let t = PI * (k as f64 + 0.5) / level as f64;
                    let (s, c) = t.sin_cos();
                    points.extend_from_slice(&[c, s, -c, -s]);
                    weights.extend_from_slice(&[w, w]);
                }
            }
            3 => {
                let gl = GaussLegendre::new(level);
                let na = 2 * level;
                let wa = 2.0 * PI / na as f64;
                for (ct, wt) in gl.nodes.iter().zip(&gl.weights) {
                    if *ct < 0.0 {
                        continue;
                    }
                    let st = (1.0 - ct * ct).max(0.0).sqrt();
                    let half = if *ct == 0.0 { level } else { na };
                    for k in 0..half {
                        let ph = PI * (k as f64 + 0.5) * 2.0 / na as f64;
                        let (sp, cp) = ph.sin_cos();
                        let p = [st * cp, st * sp, *ct];
                        points.extend_from_slice(&p);
                        points.extend(p.iter().map(|v| -v));
                        weights.extend_from_slice(&[wt * wa, wt * wa]);
                    }
                }
            }
            _ => panic!("deterministic sphere rules exist only for d <= 3"),
        }
        Self { dim, points, weights, monte_carlo: false }
    }

    /// Antithetic Monte Carlo points for any dimension.
    pub fn monte_carlo(dim: usize, pairs: usize, rng: &mut RngStream) -> Self {
        let area = crate::special::sphere_area(dim);
        let w = area / (2 * pairs) as f64;
        let mut points = Vec::with_capacity(2 * pairs * dim);
        let mut v = alloc::vec![0.0; dim];
        for _ in 0..pairs {
            rng.unit_vector(&mut v);
            points.extend_from_slice(&v);
            points.extend(v.iter().map(|a| -a));
        }
        Self { dim, points, weights: alloc::vec![w; 2 * pairs], monte_carlo: true }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.points.chunks_exact(self.dim).zip(self.weights.iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_exact_for_polynomials() {
        for n in [1, 2, 5, 8, 16, 33] {
            let gl = GaussLegendre::new(n);
            let s: f64 = gl.weights.iter().sum();
            assert_relative_eq!(s, 2.0, max_relative = 1e-14);
            let deg = 2 * n - 1;
            let v = gl.integrate(0.0, 1.0, |x| x.powi(deg as i32));
            assert_relative_eq!(v, 1.0 / (deg as f64 + 1.0), max_relative = 1e-13);
        }
    }

    #[test]
    fn gk15_and_adaptive() {
        let (v, _) = gk15(&mut |x: f64| x.exp(), 0.0, 1.0);
        assert_relative_eq!(v, core::f64::consts::E - 1.0, max_relative = 1e-15);
        let (v, e) = adaptive(|x: f64| x.abs().sqrt(), &[-1.0, 1.0], Adaptive::default());
        assert!((v - 4.0 / 3.0).abs() < 1e-9, "{v} {e}");
    }

    #[test]
    fn sphere_rules_integrate_moments() {
        for (d, lvl) in [(1, 1), (2, 8), (3, 8)] {
            let r = SphereRule::deterministic(d, lvl);
            let area = crate::special::sphere_area(d);
            let s: f64 = r.weights.iter().sum();
            assert_relative_eq!(s, area, max_relative = 1e-13);
            // second moments: integral of theta_i theta_j = delta_ij * area / d
            for i in 0..d {
                for j in 0..d {
                    let m: f64 = r.iter().map(|(p, w)| w * p[i] * p[j]).sum();
                    let want = if i == j { area / d as f64 } else { 0.0 };
                    assert!((m - want).abs() < 1e-12, "d={d} ({i},{j}) {m}");
                }
            }
            // antipodal pairs
            for k in (0..r.len()).step_by(2) {
                for i in 0..d {
                    assert_eq!(r.point(k)[i], -r.point(k + 1)[i]);
                }
            }
        }
    }

    #[test]
    fn sphere_rule_d3_fourth_moment() {
        // integral of z^4 over S^2 = 4 pi / 5
        let r = SphereRule::deterministic(3, 6);
        let m: f64 = r.iter().map(|(p, w)| w * p[2].powi(4)).sum();
        assert_relative_eq!(m, 4.0 * PI / 5.0, max_relative = 1e-13);
    }
}
