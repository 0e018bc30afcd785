//! Log–log rate fits with Student-t intervals on the slope and intercept.

use serde::Serialize;
use stabrate_core::special::student_t_quantile;
use stabrate_core::stats::linear_fit;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AbscissaKind {
    TwoMinusAlpha,
    AlphaGap,
    Dimension,
}

impl AbscissaKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AbscissaKind::TwoMinusAlpha => "two_minus_alpha",
            AbscissaKind::AlphaGap => "alpha_gap",
            AbscissaKind::Dimension => "dimension",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RatePoint {
    pub abscissa: f64,
    pub w1: f64,
    pub stderr: f64,
}

/// `log W1 = intercept + slope * log(abscissa)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub label: String,
    pub abscissa_kind: AbscissaKind,
    pub points: Vec<RatePoint>,
    pub slope: f64,
    pub slope_ci: (f64, f64),
    pub intercept: f64,
    pub intercept_ci: (f64, f64),
    pub baseline_subtracted: bool,
}

pub const MIN_FIT_POINTS: usize = 4;

impl RateFit {
    /// Fit over the points with positive abscissa and W1; `None` when fewer
    /// than four survive.
    pub fn fit(
        label: &str,
        kind: AbscissaKind,
        points: &[RatePoint],
        baseline_subtracted: bool,
        level: f64,
    ) -> Option<RateFit> {
        let kept: Vec<RatePoint> =
            points.iter().copied().filter(|p| p.abscissa > 0.0 && p.w1 > 0.0 && p.w1.is_finite()).collect();
        if kept.len() < MIN_FIT_POINTS {
            return None;
        }
        let x: Vec<f64> = kept.iter().map(|p| p.abscissa.ln()).collect();
        let y: Vec<f64> = kept.iter().map(|p| p.w1.ln()).collect();
        let f = linear_fit(&x, &y)?;
        let q = student_t_quantile(0.5 + 0.5 * level, (f.n - 2) as f64);
        Some(RateFit {
            label: label.to_string(),
            abscissa_kind: kind,
            points: kept,
            slope: f.slope,
            slope_ci: (f.slope - q * f.slope_se, f.slope + q * f.slope_se),
            intercept: f.intercept,
            intercept_ci: (f.intercept - q * f.intercept_se, f.intercept + q * f.intercept_se),
            baseline_subtracted,
        })
    }

    pub fn slope_ci_within(&self, lo: f64, hi: f64) -> bool {
        self.slope_ci.0 >= lo && self.slope_ci.1 <= hi
    }
}
