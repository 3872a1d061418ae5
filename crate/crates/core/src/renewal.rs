//! Renewal sequences of the stopped process and the renewal recursion for
//! `R_n = P(ζ > n)`.
//!
//! With `z_i = F_{i,0}(0)` and `P_j = Π_{i=1}^{j} G_i(z_i)`:
//!
//! * `d_j = E[P_j]`, `H_j = d_j - d_{j+1}`;
//! * `H*_j = E[P_j (1 - G_0(z_{j+1})) / (1 - G_0(0))]`, `G_0` an independent copy;
//! * `R_1 = H*_0`, `R_{n+1} = Σ_{k=0}^{n-1} H_k R_{n-k} + H*_n`.
//!
//! The exact backend enumerates every environment sequence of a finite-support
//! model; `R_n = 1 - E[N(n; 0)]` is enumerated separately through the
//! conditional pgf so that the recursion can be checked against it. The Monte
//! Carlo backend evaluates the same inner products on sampled environments.

use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::envmodel::{EnvironmentModel, ImmigrationLaw, OffspringLaw};
use crate::exec::{map_chunks, map_items, Execution};
use crate::gfalg::{
    complement_pgf_n_in, compose_forward_in, log_gap_step, EnvRealization,
};
use crate::rng::{Streams, Tag};
use crate::scalar::{Accumulator, Compensated, Scalar};
use crate::stats::{isotonic_nonincreasing, mean_stderr};

/// Default cap on enumerated environment sequences per pass.
pub const DEFAULT_BUDGET: u64 = 1 << 24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenewalError {
    #[error("exact enumeration needs {required} sequences, budget is {budget}")]
    Budget { required: u64, budget: u64 },
    #[error("exact enumeration requires finite-support offspring atoms")]
    NotFinite,
    #[error("initial immigration law puts no mass on positive values")]
    DegenerateInitial,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backend {
    ExactEnumeration {
        /// `E[Π G_i(F_{i,n+1}(0))]` enumerated in the forward composition order.
        d_forward: Vec<f64>,
    },
    MonteCarlo {
        replicas: u64,
        d_stderr: Vec<f64>,
        h_stderr: Vec<f64>,
        h_star_stderr: Vec<f64>,
        r_stderr: Vec<f64>,
        /// Nonincreasing projection of `d` (reported, never substituted).
        d_isotonic: Vec<f64>,
        isotonic_distance: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RenewalSeries {
    pub n_max: usize,
    /// `d_0..=d_{n_max}`
    pub d: Vec<f64>,
    /// `H_0..H_{n_max-1}`, differenced from `d`
    pub h: Vec<f64>,
    /// `H*_0..H*_{n_max-1}`
    pub h_star: Vec<f64>,
    /// `R_1..R_{n_max}` computed directly as `1 - E[N(n; 0)]` (empty when not computed)
    pub r: Vec<f64>,
    pub backend: Backend,
}

impl RenewalSeries {
    fn stderrs(&self) -> Option<(&[f64], &[f64], &[f64], &[f64])> {
        match &self.backend {
            Backend::MonteCarlo {
                d_stderr,
                h_stderr,
                h_star_stderr,
                r_stderr,
                ..
            } => Some((d_stderr, h_stderr, h_star_stderr, r_stderr)),
            Backend::ExactEnumeration { .. } => None,
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let rec = solve_recursion(self);
        let se = self.stderrs();
        write!(w, "n,d,H,H_star,R_recursion,R_enumeration")?;
        if se.is_some() {
            write!(w, ",d_stderr,H_stderr,H_star_stderr,R_stderr")?;
        }
        writeln!(w)?;
        let opt = |v: Option<&f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
        for n in 0..=self.n_max {
            let r_rec = n.checked_sub(1).and_then(|k| rec.get(k));
            let r_enum = n.checked_sub(1).and_then(|k| self.r.get(k));
            write!(
                w,
                "{},{:.16e},{},{},{},{}",
                n,
                self.d[n],
                opt(self.h.get(n)),
                opt(self.h_star.get(n)),
                opt(r_rec),
                opt(r_enum)
            )?;
            if let Some((ds, hs, hss, rs)) = se {
                let r_se = n.checked_sub(1).and_then(|k| rs.get(k));
                write!(
                    w,
                    ",{:.16e},{},{},{}",
                    ds[n],
                    opt(hs.get(n)),
                    opt(hss.get(n)),
                    opt(r_se)
                )?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn atoms(model: &EnvironmentModel) -> Result<(Vec<(f64, OffspringLaw)>, Vec<(f64, &ImmigrationLaw)>), RenewalError> {
    let f = model.offspring_atoms().ok_or(RenewalError::NotFinite)?.to_vec();
    let g = model.immigration.atoms();
    if g.iter().any(|(_, law)| law.g0() >= 1.0) {
        return Err(RenewalError::DegenerateInitial);
    }
    Ok((f, g))
}

/// Enumeration cost of [`exact_series`]: the largest single pass.
pub fn exact_cost(model: &EnvironmentModel, n_max: usize) -> Option<u64> {
    let nf = model.offspring_atoms()?.len() as u64;
    let ng = model.immigration.atoms().len() as u64;
    let pair = nf.checked_mul(ng)?;
    // DFS leaves, forward-order check (one more F), and the N(n;0) pass
    let dfs = pair.checked_pow(n_max as u32)?;
    let fwd = dfs.checked_mul(nf)?;
    let r = nf.checked_pow(n_max as u32)?.checked_mul(ng.checked_pow(n_max as u32)?)?;
    Some(dfs.max(fwd).max(r))
}

/// `Φ(u) = E_{G_0}[(1 - G_0(1 - u)) / (1 - G_0(0))]`.
fn phi<T: Scalar>(g_atoms: &[(f64, &ImmigrationLaw)], u: &T) -> T {
    let mut acc = T::zero();
    for (w, g) in g_atoms {
        let num = g.tail_gap_in(u);
        let den = g.tail_gap_in(&T::one());
        acc = acc.add(&T::from_f64(*w).mul(&num.div(&den)));
    }
    acc
}

struct DfsAcc<T: Scalar> {
    d: Vec<T::Acc>,
    hs: Vec<T::Acc>,
}

impl<T: Scalar> DfsAcc<T> {
    fn new(n_max: usize) -> Self {
        DfsAcc {
            d: (0..=n_max).map(|_| T::Acc::default()).collect(),
            hs: (0..n_max).map(|_| T::Acc::default()).collect(),
        }
    }

    fn merge(&mut self, o: &Self) {
        for (a, b) in self.d.iter_mut().zip(&o.d) {
            a.merge(b);
        }
        for (a, b) in self.hs.iter_mut().zip(&o.hs) {
            a.merge(b);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn dfs<T: Scalar>(
    depth: usize,
    n_max: usize,
    u: &T,
    p: &T,
    w: &T,
    f_atoms: &[(f64, OffspringLaw)],
    g_atoms: &[(f64, &ImmigrationLaw)],
    acc: &mut DfsAcc<T>,
) {
    if depth == n_max {
        return;
    }
    for (wf, f) in f_atoms {
        let u1 = f.tail_gap_in(u);
        let wf = w.mul(&T::from_f64(*wf));
        acc.hs[depth].push(&wf.mul(p).mul(&phi(g_atoms, &u1)));
        for (wg, g) in g_atoms {
            let w1 = wf.mul(&T::from_f64(*wg));
            let p1 = p.mul(&T::one().sub(&g.tail_gap_in(&u1)));
            acc.d[depth + 1].push(&w1.mul(&p1));
            dfs(depth + 1, n_max, &u1, &p1, &w1, f_atoms, g_atoms, acc);
        }
    }
}

/// Exact `d`, `H*` by depth-first enumeration, split over the first atom pair.
fn dfs_series<T: Scalar>(
    n_max: usize,
    f_atoms: &[(f64, OffspringLaw)],
    g_atoms: &[(f64, &ImmigrationLaw)],
    exec: Execution,
) -> (Vec<T>, Vec<T>) {
    let mut total = DfsAcc::<T>::new(n_max);
    total.d[0].push(&T::one());
    if n_max > 0 {
        let firsts: Vec<(usize, usize)> = (0..f_atoms.len())
            .flat_map(|i| (0..g_atoms.len()).map(move |j| (i, j)))
            .collect();
        let parts = map_items(exec, firsts, |(i, j)| {
            let mut acc = DfsAcc::<T>::new(n_max);
            let (wf, f) = &f_atoms[i];
            let (wg, g) = &g_atoms[j];
            let one = T::one();
            let u1 = f.tail_gap_in(&one);
            let wf = T::from_f64(*wf);
            // the H*_0 term depends on F_1 only; count it once per F atom
            if j == 0 {
                acc.hs[0].push(&wf.mul(&phi(g_atoms, &u1)));
            }
            let w1 = wf.mul(&T::from_f64(*wg));
            let p1 = one.sub(&g.tail_gap_in(&u1));
            acc.d[1].push(&w1.mul(&p1));
            dfs(1, n_max, &u1, &p1, &w1, f_atoms, g_atoms, &mut acc);
            acc
        });
        for p in &parts {
            total.merge(p);
        }
    }
    (
        total.d.iter().map(|a| a.total()).collect(),
        total.hs.iter().map(|a| a.total()).collect(),
    )
}

/// Decodes sequence index `idx` into mixed-radix digits.
fn digits(mut idx: u64, radix: u64, len: usize) -> Vec<usize> {
    (0..len)
        .map(|_| {
            let d = (idx % radix) as usize;
            idx /= radix;
            d
        })
        .collect()
}

/// `1 - E[N(n; 0)]` over `G_0`, `F_1..F_n`, `G_1..G_{n-1}` (`G_n` does not enter).
fn enumerate_r<T: Scalar>(
    n: usize,
    f_atoms: &[(f64, OffspringLaw)],
    g_atoms: &[(f64, &ImmigrationLaw)],
    exec: Execution,
) -> T {
    let nf = f_atoms.len() as u64;
    let ng = g_atoms.len() as u64;
    // digits: F_1..F_n then G_0..G_{n-1}
    let total = nf.pow(n as u32) * ng.pow(n as u32);
    let parts = map_chunks(exec, total, |range| {
        let mut acc = T::Acc::default();
        for idx in range {
            let fd = digits(idx % nf.pow(n as u32), nf, n);
            let gd = digits(idx / nf.pow(n as u32), ng, n);
            let mut wt = T::one();
            let offspring = fd.iter().map(|&i| f_atoms[i].1).collect();
            let mut imm: Vec<&ImmigrationLaw> = Vec::with_capacity(n);
            for k in 0..n {
                wt = wt
                    .mul(&T::from_f64(f_atoms[fd[k]].0))
                    .mul(&T::from_f64(g_atoms[gd[k]].0));
                if k >= 1 {
                    imm.push(g_atoms[gd[k]].1);
                }
            }
            imm.push(g_atoms[0].1);
            let env = EnvRealization::new(offspring, imm, g_atoms[gd[0]].1);
            let v = complement_pgf_n_in(&env, n, &T::one()).expect("validated initial law");
            acc.push(&wt.mul(&v));
        }
        acc
    });
    let mut acc = T::Acc::default();
    for p in &parts {
        acc.merge(p);
    }
    acc.total()
}

/// `E[Π_{i=1}^{n} G_i(F_{i,n+1}(0))]` with the compositions taken literally.
fn enumerate_d_forward<T: Scalar>(
    n: usize,
    f_atoms: &[(f64, OffspringLaw)],
    g_atoms: &[(f64, &ImmigrationLaw)],
    exec: Execution,
) -> T {
    let nf = f_atoms.len() as u64;
    let ng = g_atoms.len() as u64;
    let nfp = nf.pow(n as u32 + 1);
    let total = nfp * ng.pow(n as u32);
    let parts = map_chunks(exec, total, |range| {
        let mut acc = T::Acc::default();
        for idx in range {
            let fd = digits(idx % nfp, nf, n + 1);
            let gd = digits(idx / nfp, ng, n);
            let offspring: Vec<OffspringLaw> = fd.iter().map(|&i| f_atoms[i].1).collect();
            let mut imm: Vec<&ImmigrationLaw> = gd.iter().map(|&i| g_atoms[i].1).collect();
            imm.push(g_atoms[0].1);
            let mut wt = T::one();
            for &i in &fd {
                wt = wt.mul(&T::from_f64(f_atoms[i].0));
            }
            for &i in &gd {
                wt = wt.mul(&T::from_f64(g_atoms[i].0));
            }
            let env = EnvRealization::new(offspring, imm, g_atoms[0].1);
            let mut prod = T::one();
            for i in 1..=n {
                let z = compose_forward_in(&env, i, n + 1, &T::zero());
                prod = prod.mul(&env.immigration(i).pgf_in(&z));
            }
            acc.push(&wt.mul(&prod));
        }
        acc
    });
    let mut acc = T::Acc::default();
    for p in &parts {
        acc.merge(p);
    }
    acc.total()
}

/// Exact series by enumeration over the model's atoms, in scalar type `T`.
pub fn exact_series_in<T: Scalar>(
    model: &EnvironmentModel,
    n_max: usize,
    budget: u64,
    exec: Execution,
) -> Result<RenewalSeries, RenewalError> {
    let (f_atoms, g_atoms) = atoms(model)?;
    let required = exact_cost(model, n_max).unwrap_or(u64::MAX);
    if required > budget {
        return Err(RenewalError::Budget { required, budget });
    }
    let (d, hs) = dfs_series::<T>(n_max, &f_atoms, &g_atoms, exec);
    let d: Vec<f64> = d.iter().map(|x| x.to_f64()).collect();
    let h_star: Vec<f64> = hs.iter().map(|x| x.to_f64()).collect();
    let r: Vec<f64> = (1..=n_max)
        .map(|n| enumerate_r::<T>(n, &f_atoms, &g_atoms, exec).to_f64())
        .collect();
    let d_forward: Vec<f64> = (0..=n_max)
        .map(|n| enumerate_d_forward::<T>(n, &f_atoms, &g_atoms, exec).to_f64())
        .collect();
    let h = (0..n_max).map(|n| d[n] - d[n + 1]).collect();
    Ok(RenewalSeries {
        n_max,
        d,
        h,
        h_star,
        r,
        backend: Backend::ExactEnumeration { d_forward },
    })
}

/// Exact series in double precision with compensated summation.
pub fn exact_series(
    model: &EnvironmentModel,
    n_max: usize,
    exec: Execution,
) -> Result<RenewalSeries, RenewalError> {
    exact_series_in::<f64>(model, n_max, DEFAULT_BUDGET, exec)
}

/// Largest `n_max` for which [`mc_series`] also estimates `R_n` directly.
pub const DIRECT_R_LIMIT: usize = 64;

/// Monte Carlo series over sampled environments. When `direct_r` is set (and
/// `n_max ≤ DIRECT_R_LIMIT`) `R_n = 1 - E[N(n; 0)]` is also estimated directly.
pub fn mc_series(
    model: &EnvironmentModel,
    n_max: usize,
    replicas: u64,
    seed: u64,
    exec: Execution,
    direct_r: bool,
) -> RenewalSeries {
    let direct_r = direct_r && n_max <= DIRECT_R_LIMIT;
    let g_atoms = model.immigration.atoms();
    let streams = Streams::new(seed, Tag::Renewal);
    #[derive(Clone)]
    struct Sums {
        d: Vec<(f64, f64)>,
        dh: Vec<(f64, f64)>,
        hs: Vec<(f64, f64)>,
        r: Vec<(f64, f64)>,
    }
    let zero = Sums {
        d: vec![(0.0, 0.0); n_max + 1],
        dh: vec![(0.0, 0.0); n_max],
        hs: vec![(0.0, 0.0); n_max],
        r: vec![(0.0, 0.0); if direct_r { n_max } else { 0 }],
    };
    let add = |slot: &mut (f64, f64), v: f64| {
        slot.0 += v;
        slot.1 += v * v;
    };
    let parts = map_chunks(exec, replicas, |range| {
        let mut s = zero.clone();
        let mut p = vec![0.0; n_max + 1];
        let mut laws: Vec<OffspringLaw> = Vec::with_capacity(n_max);
        let mut imms: Vec<&ImmigrationLaw> = Vec::with_capacity(n_max);
        for r in range {
            let mut rng = streams.stream(r);
            let g0 = model.immigration.sample(&mut rng);
            laws.clear();
            imms.clear();
            p[0] = 1.0;
            let mut l = 0.0; // ln(1 - z_0) = ln 1
            for j in 0..n_max {
                let step = model.sample_environment_step(&mut rng);
                l = log_gap_step(step.offspring.log_mean(), l);
                let u = l.exp();
                add(&mut s.hs[j], p[j] * phi(&g_atoms, &u));
                p[j + 1] = p[j] * (1.0 - step.immigration.tail_gap(u));
                if direct_r {
                    laws.push(step.offspring);
                    imms.push(step.immigration);
                }
            }
            for j in 0..=n_max {
                add(&mut s.d[j], p[j]);
            }
            for j in 0..n_max {
                add(&mut s.dh[j], p[j] - p[j + 1]);
            }
            if direct_r {
                let env = EnvRealization::new(laws.clone(), imms.clone(), g0);
                for n in 1..=n_max {
                    let v = complement_pgf_n_in(&env, n, &1.0).expect("validated initial law");
                    add(&mut s.r[n - 1], v);
                }
            }
        }
        s
    });
    let mut tot = zero;
    let merge = |a: &mut Vec<(f64, f64)>, b: &Vec<(f64, f64)>| {
        for (x, y) in a.iter_mut().zip(b) {
            x.0 += y.0;
            x.1 += y.1;
        }
    };
    for p in &parts {
        merge(&mut tot.d, &p.d);
        merge(&mut tot.dh, &p.dh);
        merge(&mut tot.hs, &p.hs);
        merge(&mut tot.r, &p.r);
    }
    let est = |v: &Vec<(f64, f64)>| -> (Vec<f64>, Vec<f64>) {
        v.iter().map(|&(a, b)| mean_stderr(a, b, replicas)).unzip()
    };
    let (d, d_stderr) = est(&tot.d);
    let (_, h_stderr) = est(&tot.dh);
    let (h_star, h_star_stderr) = est(&tot.hs);
    let (r, r_stderr) = est(&tot.r);
    let h = (0..n_max).map(|n| d[n] - d[n + 1]).collect();
    let weights: Vec<f64> = d_stderr
        .iter()
        .map(|s| if *s > 0.0 { 1.0 / (s * s) } else { 1e300 })
        .collect();
    let d_isotonic = isotonic_nonincreasing(&d, &weights);
    let isotonic_distance = d
        .iter()
        .zip(&d_isotonic)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    RenewalSeries {
        n_max,
        d,
        h,
        h_star,
        r,
        backend: Backend::MonteCarlo {
            replicas,
            d_stderr,
            h_stderr,
            h_star_stderr,
            r_stderr,
            d_isotonic,
            isotonic_distance,
        },
    }
}

/// `R_1 = H*_0`, `R_{n+1} = Σ_{k=0}^{n-1} H_k R_{n-k} + H*_n`; returns `R_1..R_{n_max}`.
pub fn solve_recursion(series: &RenewalSeries) -> Vec<f64> {
    solve_recursion_raw(&series.h, &series.h_star)
}

pub fn solve_recursion_raw(h: &[f64], h_star: &[f64]) -> Vec<f64> {
    let n_max = h_star.len();
    // r[k] = R_{k+1}
    let mut r: Vec<f64> = Vec::with_capacity(n_max);
    for n in 0..n_max {
        let mut acc = Compensated::default();
        for k in 0..n {
            acc.add(h[k] * r[n - 1 - k]);
        }
        acc.add(h_star[n]);
        r.push(acc.value());
    }
    r
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeriesIdentityReport {
    pub order: usize,
    /// Coefficient residuals of `ℛ(s)(1 - sℋ(s)) - sℋ*(s) - sR_1` for orders `1..=K`.
    pub residuals: Vec<f64>,
    /// Propagated standard errors (Monte Carlo inputs only, treated as independent).
    pub stderr: Option<Vec<f64>>,
    pub max_abs_residual: f64,
    /// Every residual within 3 propagated standard errors (always true for exact input).
    pub within_stderr: bool,
}

/// Coefficient-wise check, to order `K`, of `ℛ(s)(1 - sℋ(s)) = sℋ*(s) + sR_1`
/// where `ℛ(s) = Σ_{n≥1} R_n s^n`, `ℋ(s) = Σ_{n≥0} H_n s^n`,
/// `ℋ*(s) = Σ_{n≥1} H*_n s^n`, using the directly computed `R`.
pub fn check_series_identity(series: &RenewalSeries, order: usize) -> SeriesIdentityReport {
    let r = &series.r;
    let k_max = order.min(r.len()).min(series.h_star.len());
    let se = series.stderrs();
    let mut residuals = Vec::with_capacity(k_max);
    let mut errs = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        // coefficient of s^k on each side
        let mut lhs = Compensated::default();
        lhs.add(r[k - 1]);
        let mut var = 0.0;
        if let Some((_, hs, _, rs)) = se {
            var += rs[k - 1].powi(2);
            for j in 0..k.saturating_sub(1) {
                let rj = r[k - 2 - j];
                var += (rj * hs[j]).powi(2) + (series.h[j] * rs[k - 2 - j]).powi(2);
            }
        }
        for j in 0..k.saturating_sub(1) {
            lhs.add(-series.h[j] * r[k - 2 - j]);
        }
        let rhs = if k == 1 { r[0] } else { series.h_star[k - 1] };
        if let Some((_, _, hss, _)) = se {
            if k > 1 {
                var += hss[k - 1].powi(2);
            } else {
                var = 0.0;
            }
        }
        lhs.add(-rhs);
        residuals.push(lhs.value());
        errs.push(var.sqrt());
    }
    let max_abs_residual = residuals.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let within_stderr = match se {
        Some(_) => residuals
            .iter()
            .zip(&errs)
            .all(|(r, e)| r.abs() <= 3.0 * e || *r == 0.0),
        None => true,
    };
    SeriesIdentityReport {
        order: k_max,
        residuals,
        stderr: se.map(|_| errs),
        max_abs_residual,
        within_stderr,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThetaEstimate {
    pub n: u64,
    /// `Θ(n; s) = E[Π_{j≤n} G_j(F_{j,0}(s)); L̃_n ≥ 0]`
    pub theta: f64,
    pub theta_stderr: f64,
    /// `P(L̃_n ≥ 0)` from the same paths
    pub ladder: f64,
    pub ladder_stderr: f64,
}

/// Monte Carlo `Θ(n; s)` on `n_list`; the indicator `L̃_n ≥ 0` is `S_k ≤ 0` for all `k ≤ n`.
pub fn theta_functional(
    model: &EnvironmentModel,
    n_list: &[u64],
    s: f64,
    replicas: u64,
    seed: u64,
    exec: Execution,
) -> Vec<ThetaEstimate> {
    let mut grid = n_list.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let n_max = grid.last().copied().unwrap_or(0);
    let streams = Streams::new(seed, Tag::Theta);
    let l0 = (1.0 - s).ln();
    let parts = map_chunks(exec, replicas, |range| {
        let mut th = vec![(0.0f64, 0.0f64); grid.len()];
        let mut lad = vec![0u64; grid.len()];
        for r in range {
            let mut rng = streams.stream(r);
            let mut walk = 0.0;
            let mut l = l0;
            let mut prod = 1.0;
            let mut gi = 0;
            while gi < grid.len() && grid[gi] == 0 {
                th[gi].0 += 1.0;
                th[gi].1 += 1.0;
                lad[gi] += 1;
                gi += 1;
            }
            for n in 1..=n_max {
                let step = model.sample_environment_step(&mut rng);
                let x = step.offspring.log_mean();
                walk += x;
                if walk > crate::walk::POSITION_TOL {
                    break;
                }
                l = log_gap_step(x, l);
                prod *= 1.0 - step.immigration.tail_gap(l.exp());
                if n == grid[gi] {
                    th[gi].0 += prod;
                    th[gi].1 += prod * prod;
                    lad[gi] += 1;
                    gi += 1;
                }
            }
        }
        (th, lad)
    });
    let mut th = vec![(0.0, 0.0); grid.len()];
    let mut lad = vec![0u64; grid.len()];
    for (t, l) in parts {
        for i in 0..grid.len() {
            th[i].0 += t[i].0;
            th[i].1 += t[i].1;
            lad[i] += l[i];
        }
    }
    grid.iter()
        .enumerate()
        .map(|(i, &n)| {
            let (theta, theta_stderr) = mean_stderr(th[i].0, th[i].1, replicas);
            let ladder = lad[i] as f64 / replicas as f64;
            ThetaEstimate {
                n,
                theta,
                theta_stderr,
                ladder,
                ladder_stderr: crate::stats::binomial_stderr(ladder, replicas),
            }
        })
        .collect()
}
