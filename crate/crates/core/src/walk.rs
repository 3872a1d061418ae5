//! The associated random walk `S_n = X_1 + … + X_n`, its reflection, path
//! functionals, ladder and Spitzer probabilities, and the renewal function `U`.
//!
//! Walk positions are compared with a tolerance of [`POSITION_TOL`]: lattice
//! walks such as `±log 63` accumulate rounding in `S_n`, and without slack a
//! return to exactly zero could be misread as a strict descent.

use std::f64::consts::PI;
use std::io::{self, Write};

use serde::Serialize;

use crate::envmodel::{EnvironmentModel, StableParams};
use crate::exec::{map_chunks, Execution};
use crate::gfalg::log_add_exp;
use crate::rng::{SimRng, Streams, Tag};
use crate::stats::binomial_stderr;

/// Slack for `S ≥ y` style comparisons of walk positions.
pub const POSITION_TOL: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WalkPath {
    pub increments: Vec<f64>,
    pub prefix_sums: Vec<f64>,
    /// `L_n = min(S_0, …, S_n)`
    pub running_min: f64,
    /// `M_n = max(S_1, …, S_n)`; `-inf` for the empty path
    pub running_max_from_1: f64,
    /// `τ(n)`, the first index attaining `L_n`
    pub argmin_first: usize,
    pub reflected: bool,
}

/// Builds the path of `increments` (negated when `reflected`).
pub fn path_statistics(increments: &[f64], reflected: bool) -> WalkPath {
    let incs: Vec<f64> = if reflected {
        increments.iter().map(|x| -x).collect()
    } else {
        increments.to_vec()
    };
    let mut prefix_sums = Vec::with_capacity(incs.len() + 1);
    let mut s = 0.0;
    prefix_sums.push(s);
    let mut running_min = 0.0;
    let mut argmin_first = 0;
    let mut running_max_from_1 = f64::NEG_INFINITY;
    for (k, x) in incs.iter().enumerate() {
        s += x;
        prefix_sums.push(s);
        if s < running_min {
            running_min = s;
            argmin_first = k + 1;
        }
        running_max_from_1 = running_max_from_1.max(s);
    }
    WalkPath {
        increments: incs,
        prefix_sums,
        running_min,
        running_max_from_1,
        argmin_first,
        reflected,
    }
}

impl WalkPath {
    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    /// `ln A_k = S_k`.
    pub fn log_a(&self, k: usize) -> f64 {
        self.prefix_sums[k]
    }

    /// `ln B_{i,n} = ln Σ_{k=i}^{n} e^{S_k}` (`-inf` when `i > n`).
    pub fn log_b_range(&self, i: usize, n: usize) -> f64 {
        self.prefix_sums[i.min(n + 1)..=n]
            .iter()
            .fold(f64::NEG_INFINITY, |acc, s| log_add_exp(acc, *s))
    }

    /// `ln B_n = ln Σ_{k=0}^{n} e^{S_k}`.
    pub fn log_b(&self, n: usize) -> f64 {
        self.log_b_range(0, n)
    }
}

/// `ρ = 1/2 + arctan(β tan(πα/2)) / (πα)`; `1/2` when `α = 1`.
pub fn rho_from_stable(params: &StableParams) -> f64 {
    let (alpha, beta) = (params.alpha(), params.beta());
    if alpha == 1.0 {
        return 0.5;
    }
    0.5 + (beta * (PI * alpha / 2.0).tan()).atan() / (PI * alpha)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbEstimate {
    pub n: u64,
    pub estimate: f64,
    pub stderr: f64,
    pub replicas: u64,
}

pub fn write_prob_csv<W: Write>(mut w: W, rows: &[ProbEstimate]) -> io::Result<()> {
    writeln!(w, "n,estimate,stderr,replicas")?;
    for r in rows {
        writeln!(w, "{},{:.16e},{:.16e},{}", r.n, r.estimate, r.stderr, r.replicas)?;
    }
    Ok(())
}

fn sorted_grid(n_list: &[u64]) -> Vec<u64> {
    let mut v = n_list.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

fn increment(model: &EnvironmentModel, rng: &mut SimRng, reflected: bool) -> f64 {
    let x = model.sample_log_mean(rng);
    if reflected {
        -x
    } else {
        x
    }
}

fn sum_histograms(parts: Vec<Vec<u64>>, len: usize) -> Vec<u64> {
    let mut out = vec![0u64; len];
    for p in parts {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out
}

/// Monte Carlo `P(S_n > 0)` for each `n` in `n_list`, one path per replica.
pub fn spitzer_rho_empirical(
    model: &EnvironmentModel,
    n_list: &[u64],
    replicas: u64,
    seed: u64,
    exec: Execution,
) -> Vec<ProbEstimate> {
    let grid = sorted_grid(n_list);
    let n_max = grid.last().copied().unwrap_or(0);
    let streams = Streams::new(seed, Tag::Spitzer);
    let parts = map_chunks(exec, replicas, |range| {
        let mut pos = vec![0u64; grid.len()];
        for r in range {
            let mut rng = streams.stream(r);
            let mut s = 0.0;
            let mut gi = 0;
            for n in 1..=n_max {
                s += model.sample_log_mean(&mut rng);
                if n == grid[gi] {
                    if s > POSITION_TOL {
                        pos[gi] += 1;
                    }
                    gi += 1;
                }
            }
        }
        pos
    });
    let pos = sum_histograms(parts, grid.len());
    grid.iter()
        .zip(pos)
        .map(|(&n, k)| {
            let p = k as f64 / replicas as f64;
            ProbEstimate {
                n,
                estimate: p,
                stderr: binomial_stderr(p, replicas),
                replicas,
            }
        })
        .collect()
}

/// Histogram of first strict descents below zero: entry `k` (`1 ≤ k ≤ n_max`)
/// counts replicas with first `S_k < 0` at `k`; entry 0 counts survivors.
pub fn descent_histogram(
    model: &EnvironmentModel,
    n_max: u64,
    replicas: u64,
    streams: &Streams,
    reflected: bool,
    exec: Execution,
) -> Vec<u64> {
    let len = n_max as usize + 1;
    let parts = map_chunks(exec, replicas, |range| {
        let mut h = vec![0u64; len];
        for r in range {
            let mut rng = streams.stream(r);
            let mut s = 0.0;
            let mut hit = 0usize;
            for n in 1..=n_max {
                s += increment(model, &mut rng, reflected);
                if s < -POSITION_TOL {
                    hit = n as usize;
                    break;
                }
            }
            h[hit] += 1;
        }
        h
    });
    sum_histograms(parts, len)
}

/// Monte Carlo `P(L_n ≥ 0)` (or `P(L̃_n ≥ 0)` when `reflected`) on nested
/// prefixes of the same paths, so the estimate is nonincreasing in `n`.
pub fn ladder_probability(
    model: &EnvironmentModel,
    n_list: &[u64],
    replicas: u64,
    seed: u64,
    exec: Execution,
    reflected: bool,
) -> Vec<ProbEstimate> {
    let grid = sorted_grid(n_list);
    let n_max = grid.last().copied().unwrap_or(0);
    let hist = descent_histogram(
        model,
        n_max,
        replicas,
        &Streams::new(seed, Tag::Ladder),
        reflected,
        exec,
    );
    survival_from_histogram(&hist, &grid, replicas)
}

/// Survival counts `#{first descent > n}` from a descent histogram.
pub fn survival_from_histogram(hist: &[u64], grid: &[u64], replicas: u64) -> Vec<ProbEstimate> {
    // alive[n] = survivors + Σ_{k > n} hist[k]
    let n_max = hist.len() - 1;
    let mut alive = vec![0u64; n_max + 1];
    let mut acc = hist[0];
    for n in (0..=n_max).rev() {
        alive[n] = acc;
        if n >= 1 {
            acc += hist[n];
        }
    }
    grid.iter()
        .map(|&n| {
            let p = alive[n as usize] as f64 / replicas as f64;
            ProbEstimate {
                n,
                estimate: p,
                stderr: binomial_stderr(p, replicas),
                replicas,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RenewalFunctionEstimate {
    pub x_grid: Vec<f64>,
    pub u_values: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Covariance matrix of the `u_values` estimates (row-major, grid order).
    pub covariance: Vec<f64>,
    pub n_truncation: u64,
    pub replicas: u64,
    /// Fraction of replicas with `M_N < 0` at the truncation point.
    pub tail_fraction: f64,
    pub tail_flag: bool,
}

impl RenewalFunctionEstimate {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x,U,stderr")?;
        for i in 0..self.x_grid.len() {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e}",
                self.x_grid[i], self.u_values[i], self.std_errors[i]
            )?;
        }
        Ok(())
    }

    fn cov(&self, i: usize, j: usize) -> f64 {
        self.covariance[i * self.x_grid.len() + j]
    }

    /// Piecewise-linear interpolation weights `(index, weight)` for `U(y)`;
    /// empty for `y < 0` (where `U = 0`); `None` beyond the grid.
    fn weights(&self, y: f64) -> Option<Vec<(usize, f64)>> {
        if y < -POSITION_TOL {
            return Some(vec![]);
        }
        let g = &self.x_grid;
        let tol = POSITION_TOL * (1.0 + y.abs());
        if let Some(i) = g.iter().position(|&x| (x - y).abs() <= tol) {
            return Some(vec![(i, 1.0)]);
        }
        let hi = g.iter().position(|&x| x > y)?;
        if hi == 0 {
            // below the first nonnegative grid point
            return None;
        }
        let lo = hi - 1;
        let t = (y - g[lo]) / (g[hi] - g[lo]);
        Some(vec![(lo, 1.0 - t), (hi, t)])
    }

    /// Interpolated `U(y)`; `None` outside the grid.
    pub fn interpolate(&self, y: f64) -> Option<f64> {
        self.weights(y)
            .map(|w| w.iter().map(|(i, t)| t * self.u_values[*i]).sum())
    }
}

const U_TAIL_TOL: f64 = 1e-3;

/// Truncated Monte Carlo estimate of
/// `U(x) = I{x ≥ 0} + Σ_{n ≥ 1} P(S_n ≥ -x, M_n < 0)` on `x_grid`.
///
/// Each replica walks until its first nonnegative position (or `n_truncation`)
/// and counts, per grid point, the steps with `S_n ≥ -x`.
pub fn estimate_u(
    model: &EnvironmentModel,
    x_grid: &[f64],
    n_truncation: u64,
    replicas: u64,
    seed: u64,
    exec: Execution,
) -> RenewalFunctionEstimate {
    let g = x_grid.len();
    let streams = Streams::new(seed, Tag::RenewalFunction);
    #[derive(Default)]
    struct Acc {
        sum: Vec<u128>,
        cross: Vec<u128>,
        alive: u64,
    }
    let parts = map_chunks(exec, replicas, |range| {
        let mut acc = Acc {
            sum: vec![0; g],
            cross: vec![0; g * g],
            alive: 0,
        };
        let mut counts = vec![0u64; g];
        for r in range {
            let mut rng = streams.stream(r);
            counts.iter_mut().for_each(|c| *c = 0);
            let mut s = 0.0;
            let mut escaped = false;
            for _ in 0..n_truncation {
                s += model.sample_log_mean(&mut rng);
                if s >= -POSITION_TOL {
                    escaped = true;
                    break;
                }
                for (c, &x) in counts.iter_mut().zip(x_grid) {
                    if x >= 0.0 && s >= -x - POSITION_TOL * (1.0 + x) {
                        *c += 1;
                    }
                }
            }
            if !escaped {
                acc.alive += 1;
            }
            for i in 0..g {
                acc.sum[i] += counts[i] as u128;
                for j in 0..g {
                    acc.cross[i * g + j] += counts[i] as u128 * counts[j] as u128;
                }
            }
        }
        acc
    });
    let mut sum = vec![0u128; g];
    let mut cross = vec![0u128; g * g];
    let mut alive = 0;
    for p in parts {
        for i in 0..g {
            sum[i] += p.sum[i];
        }
        for i in 0..g * g {
            cross[i] += p.cross[i];
        }
        alive += p.alive;
    }
    let nf = replicas as f64;
    let mean: Vec<f64> = sum.iter().map(|&v| v as f64 / nf).collect();
    let mut covariance = vec![0.0; g * g];
    for i in 0..g {
        for j in 0..g {
            let c = (cross[i * g + j] as f64 - nf * mean[i] * mean[j]) / (nf - 1.0).max(1.0);
            covariance[i * g + j] = c / nf;
        }
    }
    let u_values = x_grid
        .iter()
        .zip(&mean)
        .map(|(&x, m)| if x < 0.0 { 0.0 } else { 1.0 + m })
        .collect();
    let std_errors = (0..g).map(|i| covariance[i * g + i].max(0.0).sqrt()).collect();
    let tail_fraction = alive as f64 / nf;
    RenewalFunctionEstimate {
        x_grid: x_grid.to_vec(),
        u_values,
        std_errors,
        covariance,
        n_truncation,
        replicas,
        tail_fraction,
        tail_flag: tail_fraction > U_TAIL_TOL,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HarmonicPoint {
    pub x: f64,
    pub lhs: f64,
    pub u: f64,
    pub discrepancy: f64,
    pub stderr: f64,
    pub coverage_ok: bool,
    pub pass: bool,
}

/// Checks `E[U(x + X); x + X ≥ 0] = U(x)` at each `x`. Finite-support
/// increments are integrated exactly; otherwise `draws` samples of `X` are used.
pub fn check_harmonic_identity(
    model: &EnvironmentModel,
    u: &RenewalFunctionEstimate,
    x_check: &[f64],
    draws: u64,
    seed: u64,
) -> Vec<HarmonicPoint> {
    let g = u.x_grid.len();
    x_check
        .iter()
        .map(|&x| {
            if x < 0.0 {
                return HarmonicPoint {
                    x,
                    lhs: 0.0,
                    u: 0.0,
                    discrepancy: 0.0,
                    stderr: 0.0,
                    coverage_ok: true,
                    pass: true,
                };
            }
            // linear functional v·U of the grid estimates, plus MC noise if sampled
            let mut v = vec![0.0; g];
            let mut coverage_ok = true;
            let mut mc_var = 0.0;
            let add = |y: f64, w: f64, v: &mut Vec<f64>| match u.weights(y) {
                Some(ws) => {
                    for (i, t) in ws {
                        v[i] += w * t;
                    }
                    true
                }
                None => false,
            };
            match model.increment_support() {
                Some(atoms) => {
                    for (w, xi) in atoms {
                        coverage_ok &= add(x + xi, w, &mut v);
                    }
                }
                None => {
                    let mut rng = Streams::new(seed, Tag::Harmonic).stream(x.to_bits());
                    let (mut s1, mut s2) = (0.0, 0.0);
                    let w = 1.0 / draws as f64;
                    for _ in 0..draws {
                        let y = x + model.sample_log_mean(&mut rng);
                        match u.interpolate(y) {
                            Some(val) => {
                                s1 += val;
                                s2 += val * val;
                                add(y, w, &mut v);
                            }
                            None => coverage_ok = false,
                        }
                    }
                    let n = draws as f64;
                    let m = s1 / n;
                    mc_var = ((s2 / n - m * m) / n).max(0.0);
                }
            }
            let lhs: f64 = v.iter().zip(&u.u_values).map(|(a, b)| a * b).sum();
            let ux = u.interpolate(x).unwrap_or(f64::NAN);
            if let Some(ws) = u.weights(x) {
                for (i, t) in ws {
                    v[i] -= t;
                }
            } else {
                coverage_ok = false;
            }
            let mut var = mc_var;
            for i in 0..g {
                for j in 0..g {
                    var += v[i] * v[j] * u.cov(i, j);
                }
            }
            let stderr = var.max(0.0).sqrt();
            let discrepancy = lhs - ux;
            HarmonicPoint {
                x,
                lhs,
                u: ux,
                discrepancy,
                stderr,
                coverage_ok,
                pass: coverage_ok && discrepancy.abs() <= 3.0 * stderr,
            }
        })
        .collect()
}

/// `E[e^{λ S_k}; τ(k) = k]` for `k = 0..=n_max`: the weight of paths whose
/// position at `k` is a strict new minimum.
pub fn strict_minimum_weights(
    model: &EnvironmentModel,
    n_max: u64,
    lambda: f64,
    replicas: u64,
    seed: u64,
    exec: Execution,
) -> Vec<(f64, f64)> {
    let len = n_max as usize + 1;
    let streams = Streams::new(seed, Tag::LadderWeights);
    let parts = map_chunks(exec, replicas, |range| {
        let mut s1 = vec![0.0f64; len];
        let mut s2 = vec![0.0f64; len];
        for r in range {
            let mut rng = streams.stream(r);
            let mut s = 0.0;
            let mut min = 0.0;
            s1[0] += 1.0;
            s2[0] += 1.0;
            for k in 1..len {
                s += model.sample_log_mean(&mut rng);
                if s < min - POSITION_TOL {
                    min = s;
                    let w = (lambda * s).exp();
                    s1[k] += w;
                    s2[k] += w * w;
                }
            }
        }
        (s1, s2)
    });
    let mut s1 = vec![0.0; len];
    let mut s2 = vec![0.0; len];
    for (a, b) in parts {
        for k in 0..len {
            s1[k] += a[k];
            s2[k] += b[k];
        }
    }
    (0..len)
        .map(|k| crate::stats::mean_stderr(s1[k], s2[k], replicas))
        .collect()
}
