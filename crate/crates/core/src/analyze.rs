//! Asymptotic diagnostics: log-log exponent fits with drift detection, the
//! `d_n` to ladder-probability ratio, and the power-series scaling check.
//!
//! Slowly varying factors are never estimated; every diagnostic reports an
//! exponent or a ratio together with a trend statistic.

use std::io::{self, Write};

use serde::Serialize;
use statrs::function::gamma::gamma;
use thiserror::Error;

use crate::scalar::Compensated;
use crate::stats::{mann_kendall, weighted_line, TrendTest};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyzeError {
    #[error("fewer than two usable points in [{lo}, {hi}]")]
    TooFewPoints { lo: f64, hi: f64 },
    #[error("rho = {0} is outside (0, 1)")]
    RhoOutOfRange(f64),
    #[error("series has {have} terms; s = {s} needs about {required} for a 1e-6 tail")]
    InsufficientTerms { s: f64, have: usize, required: u64 },
    #[error("s = {0} outside [0, 1)")]
    BadArgument(f64),
}

/// `(n, value, stderr)`
pub type Point = (f64, f64, f64);

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalSlope {
    pub n_lo: f64,
    pub n_hi: f64,
    pub slope: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExponentFit {
    pub n_range: (f64, f64),
    pub slope: f64,
    pub slope_stderr: f64,
    pub intercept: f64,
    pub local_slopes: Vec<LocalSlope>,
    /// Local slopes trend monotonically (Mann–Kendall, 5%).
    pub drift_flag: bool,
    pub drift_test: Option<TrendTest>,
    /// At least four dyadic windows were available.
    pub windows_ok: bool,
    /// Points in range dropped because their value was not positive.
    pub excluded: Vec<f64>,
    pub points_used: usize,
}

/// First dyadic window start.
const WINDOW_START: f64 = 16.0;
/// Local slopes closer than this count as tied in the trend test.
const SLOPE_TIE: f64 = 1e-9;

fn line(points: &[Point], use_weights: bool) -> Option<(crate::stats::LineFit, bool)> {
    let x: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let w: Vec<f64> = points
        .iter()
        .map(|p| if use_weights { (p.1 / p.2).powi(2) } else { 1.0 })
        .collect();
    weighted_line(&x, &y, &w).map(|f| (f, use_weights))
}

/// Weighted least squares of `ln value` on `ln n` over `range`, with dyadic
/// local slopes on `[2^k, 2^{k+1}]` from `n = 16` and a drift flag.
///
/// Weights are inverse variances of `ln value` (`(value / stderr)²`); when any
/// stderr is zero the fit is unweighted and the slope error comes from the
/// residual scatter.
pub fn fit_exponent(series: &[Point], range: (f64, f64)) -> Result<ExponentFit, AnalyzeError> {
    let (lo, hi) = range;
    let mut excluded = Vec::new();
    let pts: Vec<Point> = series
        .iter()
        .filter(|p| p.0 >= lo && p.0 <= hi)
        .filter(|p| {
            let ok = p.1 > 0.0 && p.1.is_finite();
            if !ok {
                excluded.push(p.0);
            }
            ok
        })
        .copied()
        .collect();
    let use_weights = pts.iter().all(|p| p.2 > 0.0 && p.2.is_finite());
    let (fit, weighted) =
        line(&pts, use_weights).ok_or(AnalyzeError::TooFewPoints { lo, hi })?;
    let slope_stderr = if weighted {
        fit.slope_se_weights
    } else {
        fit.slope_se_residual
    };
    let mut local_slopes = Vec::new();
    let mut a = WINDOW_START;
    while a < lo {
        a *= 2.0;
    }
    while 2.0 * a <= hi {
        let win: Vec<Point> = pts
            .iter()
            .filter(|p| p.0 >= a && p.0 <= 2.0 * a)
            .copied()
            .collect();
        if let Some((f, w)) = line(&win, use_weights) {
            local_slopes.push(LocalSlope {
                n_lo: a,
                n_hi: 2.0 * a,
                slope: f.slope,
                stderr: if w { f.slope_se_weights } else { f.slope_se_residual },
            });
        }
        a *= 2.0;
    }
    let drift_test = (local_slopes.len() >= 3).then(|| {
        let s: Vec<f64> = local_slopes.iter().map(|l| l.slope).collect();
        mann_kendall(&s, SLOPE_TIE)
    });
    Ok(ExponentFit {
        n_range: range,
        slope: fit.slope,
        slope_stderr,
        intercept: fit.intercept,
        windows_ok: local_slopes.len() >= 4,
        drift_flag: drift_test.as_ref().is_some_and(|t| t.significant(0.05)),
        drift_test,
        local_slopes,
        excluded,
        points_used: pts.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioReport {
    /// `(n, ratio, stderr)`
    pub points: Vec<Point>,
    /// Grid points dropped because the denominator estimate was zero.
    pub dropped: Vec<f64>,
    /// Mann–Kendall over the top half of the grid.
    pub trend: TrendTest,
    pub drift: bool,
    /// Denominator identically one: the walk does not oscillate.
    pub degenerate: bool,
}

/// Pointwise `d_n / P(L̃_n ≥ 0)` with delta-method errors and a trend test over
/// the top half of the grid.
pub fn theta_ratio(d: &[Point], ladder: &[Point]) -> RatioReport {
    let mut points = Vec::new();
    let mut dropped = Vec::new();
    for (a, b) in d.iter().zip(ladder) {
        debug_assert_eq!(a.0, b.0, "series on different grids");
        if b.1 == 0.0 {
            dropped.push(a.0);
            continue;
        }
        let r = a.1 / b.1;
        let rel = ((a.2 / a.1).powi(2) + (b.2 / b.1).powi(2)).sqrt();
        let se = if a.1 == 0.0 { a.2 / b.1 } else { r.abs() * rel };
        points.push((a.0, r, se));
    }
    let top: Vec<f64> = points[points.len() / 2..].iter().map(|p| p.1).collect();
    let trend = mann_kendall(&top, 0.0);
    RatioReport {
        drift: trend.significant(0.05),
        degenerate: !ladder.is_empty() && ladder.iter().all(|p| p.1 == 1.0),
        points,
        dropped,
        trend,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TauberianReport {
    /// `(s, D_N(s) (1 - s)^{1-ρ}, truncation bound on the scaled value)`
    pub points: Vec<(f64, f64, f64)>,
    pub trend: TrendTest,
    pub drift: bool,
    /// `Γ(1 - ρ)`, the limit for `d_n = n^{-ρ}`
    pub gamma_one_minus_rho: f64,
}

const TAUBER_TAIL: f64 = 1e-6;

/// `D_N(s) (1 - s)^{1-ρ}` with `D_N(s) = Σ_{n≤N} d_n s^n` on `s_grid`.
///
/// The neglected tail is bounded by `d_N s^{N+1} / (1 - s)` (using that `d` is
/// nonincreasing); the check is refused when that bound exceeds `1e-6`.
pub fn tauberian_check(d: &[f64], rho: f64, s_grid: &[f64]) -> Result<TauberianReport, AnalyzeError> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(AnalyzeError::RhoOutOfRange(rho));
    }
    let n = d.len().saturating_sub(1);
    let d_last = d.last().copied().unwrap_or(1.0);
    let mut points = Vec::with_capacity(s_grid.len());
    for &s in s_grid {
        if !(0.0..1.0).contains(&s) {
            return Err(AnalyzeError::BadArgument(s));
        }
        let tail = d_last * s.powf(n as f64 + 1.0) / (1.0 - s);
        if tail > TAUBER_TAIL {
            let required = if s == 0.0 {
                0
            } else {
                ((TAUBER_TAIL * (1.0 - s) / d_last.max(1e-300)).ln() / s.ln()).ceil() as u64
            };
            return Err(AnalyzeError::InsufficientTerms {
                s,
                have: d.len(),
                required,
            });
        }
        let mut acc = Compensated::default();
        let mut p = 1.0;
        for &dn in d {
            acc.add(dn * p);
            p *= s;
        }
        let scale = (1.0 - s).powf(1.0 - rho);
        points.push((s, acc.value() * scale, tail * scale));
    }
    let vals: Vec<f64> = points.iter().map(|p| p.1).collect();
    let trend = mann_kendall(&vals, 0.0);
    Ok(TauberianReport {
        drift: trend.significant(0.05),
        points,
        trend,
        gamma_one_minus_rho: gamma(1.0 - rho),
    })
}

/// `Σ_{k=m}^{n} w_k P(L_{n-k} ≥ 0) / P(L_n ≥ 0)` from strict-minimum weights
/// `w_k = E[u(-S_k); τ(k) = k]` and ladder probabilities indexed by `n`.
/// A diagnostic only: no threshold is implied.
pub fn ladder_convolution_sum(weights: &[f64], ladder: &[f64], n: usize, m: usize) -> f64 {
    let mut acc = Compensated::default();
    for k in m..=n.min(weights.len() - 1) {
        acc.add(weights[k] * ladder[n - k]);
    }
    acc.value() / ladder[n]
}

/// `x,y,yerr` rows for external plotting.
pub fn write_plot_data<W: Write>(mut w: W, points: &[Point]) -> io::Result<()> {
    writeln!(w, "x,y,yerr")?;
    for p in points {
        writeln!(w, "{:.16e},{:.16e},{:.16e}", p.0, p.1, p.2)?;
    }
    Ok(())
}
