//! Forward simulation of the processes with immigration (`Y`), without
//! immigration (`Z`) and with immigration stopped at zero (`W`), and Monte Carlo
//! estimation of the life-period tail `P(ζ > n)`.
//!
//! Population sizes are exact integers until the expected offspring total
//! reaches `2^50`; beyond that the size is tracked on a log scale with normal
//! approximations to the gamma and Poisson draws. A replica in the log regime
//! has extinction probability below `exp(-2^40)` per generation, so the
//! approximation cannot move a survival estimate. The fraction of replicas
//! that ever entered the log regime is reported as `saturated_fraction`.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::Serialize;

use crate::envmodel::{EnvironmentModel, ImmigrationLaw, OffspringLaw};
use crate::exec::{map_chunks, Execution};
use crate::gfalg::EnvRealization;
use crate::rng::{SimRng, Streams, Tag};
use crate::stats::binomial_stderr;

/// Below this many parents the offspring total is a direct sum of geometrics.
pub const DIRECT_THRESHOLD: u64 = 16;
/// `ln 2^50`: expected totals above this switch to the log-scale regime.
const LOG_REGIME: f64 = 50.0 * std::f64::consts::LN_2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum PopSize {
    Count(u64),
    /// Natural log of a population size too large to track exactly.
    Log(f64),
}

impl PopSize {
    pub fn is_zero(&self) -> bool {
        matches!(self, PopSize::Count(0))
    }

    pub fn ln(&self) -> f64 {
        match *self {
            PopSize::Count(c) => (c as f64).ln(),
            PopSize::Log(l) => l,
        }
    }

    pub fn as_f64(&self) -> f64 {
        match *self {
            PopSize::Count(c) => c as f64,
            PopSize::Log(l) => l.exp(),
        }
    }

    fn plus(self, eta: u64) -> PopSize {
        match self {
            PopSize::Count(c) => match c.checked_add(eta) {
                Some(v) => PopSize::Count(v),
                None => PopSize::Log((c as f64 + eta as f64).ln()),
            },
            PopSize::Log(l) => PopSize::Log(l + (eta as f64 * (-l).exp()).ln_1p()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NbMethod {
    /// Sum of `w` geometric variables, each by inversion.
    Direct,
    /// `Poisson(Gamma(w, m))`.
    GammaPoisson,
}

/// `ln p = ln(m / (1 + m))`.
fn log_p(law: &OffspringLaw) -> f64 {
    -(-law.log_mean()).exp().ln_1p()
}

/// Sum of `w` i.i.d. geometric(`F`) variables by the chosen method.
pub fn sample_offspring_total<R: Rng + ?Sized>(
    w: u64,
    law: &OffspringLaw,
    method: NbMethod,
    rng: &mut R,
) -> u64 {
    match method {
        NbMethod::Direct => {
            let lp = log_p(law);
            let mut total = 0u64;
            for _ in 0..w {
                let u = 1.0 - rng.random::<f64>();
                let k = (u.ln() / lp).floor();
                total = total.saturating_add(if k < 1.8e19 { k as u64 } else { u64::MAX });
            }
            total
        }
        NbMethod::GammaPoisson => {
            let lambda = Gamma::new(w as f64, law.mean())
                .expect("positive shape and scale")
                .sample(rng);
            poisson(lambda, rng)
        }
    }
}

fn poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if !(lambda > 0.0) {
        return 0;
    }
    Poisson::new(lambda).expect("bounded lambda").sample(rng) as u64
}

/// Offspring total `T = ξ_1 + … + ξ_w` for `w ≥ 1` parents.
pub fn step_offspring_total<R: Rng + ?Sized>(w: u64, law: &OffspringLaw, rng: &mut R) -> u64 {
    assert!(w >= 1, "offspring total of an empty generation");
    let method = if w <= DIRECT_THRESHOLD {
        NbMethod::Direct
    } else {
        NbMethod::GammaPoisson
    };
    sample_offspring_total(w, law, method, rng)
}

/// Offspring total from a population of any size, switching regimes as needed.
pub fn step_population<R: Rng + ?Sized>(w: PopSize, law: &OffspringLaw, rng: &mut R) -> PopSize {
    match w {
        PopSize::Count(0) => PopSize::Count(0),
        PopSize::Count(c) => {
            let log_lambda = (c as f64).ln() + law.log_mean();
            if log_lambda < LOG_REGIME {
                return PopSize::Count(step_offspring_total(c, law, rng));
            }
            let g = Gamma::new(c as f64, 1.0).expect("positive shape").sample(rng);
            poisson_log(log_lambda + (g / c as f64).ln(), rng)
        }
        PopSize::Log(l) => {
            // Gamma(w, 1) / w ≈ 1 + Z / √w for w ≥ 2^50 / m
            let z: f64 = rng.sample(StandardNormal);
            let rel = z * (-0.5 * l).exp();
            poisson_log(l + law.log_mean() + rel.ln_1p(), rng)
        }
    }
}

fn poisson_log<R: Rng + ?Sized>(log_lambda: f64, rng: &mut R) -> PopSize {
    if log_lambda < LOG_REGIME {
        return PopSize::Count(poisson(log_lambda.exp(), rng));
    }
    let z: f64 = rng.sample(StandardNormal);
    PopSize::Log(log_lambda + (z * (-0.5 * log_lambda).exp()).ln_1p())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ProcessKind {
    Y,
    Z,
    W,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectorySample {
    pub process_kind: ProcessKind,
    pub sizes: Vec<PopSize>,
    /// Realized log-means `X_1, X_2, …` when logging was requested.
    pub environment_log: Option<Vec<f64>>,
    /// For `W`: first `n ≥ 1` with `W_n = 0`.
    pub zeta: Option<u64>,
    pub saturated: bool,
}

/// One generation: offspring total from `prev`, then immigration per `kind`.
/// The immigration draw is always made, so all three processes consume the
/// stream identically while their sizes agree.
fn generation<R: Rng + ?Sized>(
    kind: ProcessKind,
    prev: PopSize,
    f: &OffspringLaw,
    g: &ImmigrationLaw,
    rng: &mut R,
) -> PopSize {
    let t = step_population(prev, f, rng);
    let eta = g.sample(rng);
    match kind {
        ProcessKind::Y => t.plus(eta),
        ProcessKind::Z => t,
        ProcessKind::W => {
            if t.is_zero() {
                t
            } else {
                t.plus(eta)
            }
        }
    }
}

fn run<'e, R, E>(
    kind: ProcessKind,
    start: PopSize,
    n_max: u64,
    log_env: bool,
    rng: &mut R,
    mut env: E,
) -> TrajectorySample
where
    R: Rng + ?Sized,
    E: FnMut(&mut R, u64) -> (OffspringLaw, &'e ImmigrationLaw),
{
    let mut sizes = Vec::with_capacity(n_max.min(1 << 16) as usize + 1);
    sizes.push(start);
    let mut log = log_env.then(Vec::new);
    let mut zeta = None;
    let mut saturated = matches!(start, PopSize::Log(_));
    let mut cur = start;
    for n in 1..=n_max {
        let (f, g) = env(rng, n);
        if let Some(l) = log.as_mut() {
            l.push(f.log_mean());
        }
        cur = generation(kind, cur, &f, g, rng);
        saturated |= matches!(cur, PopSize::Log(_));
        sizes.push(cur);
        if cur.is_zero() && kind != ProcessKind::Y {
            if kind == ProcessKind::W {
                zeta = Some(n);
            }
            break;
        }
    }
    TrajectorySample {
        process_kind: kind,
        sizes,
        environment_log: log,
        zeta,
        saturated,
    }
}

/// `W_0` from `G_0` conditioned to be positive.
fn initial_size(model: &EnvironmentModel, rng: &mut SimRng) -> PopSize {
    let g0 = model.immigration.sample(rng);
    PopSize::Count(g0.sample_positive(rng).expect("validated initial law"))
}

fn simulate_kind(
    kind: ProcessKind,
    model: &EnvironmentModel,
    n_max: u64,
    rng: &mut SimRng,
    log_env: bool,
) -> TrajectorySample {
    let start = match kind {
        ProcessKind::Z => PopSize::Count(1),
        _ => initial_size(model, rng),
    };
    run(kind, start, n_max, log_env, rng, |r, _| {
        let step = model.sample_environment_step(r);
        (step.offspring, step.immigration)
    })
}

/// Stopped process `W`: immigrants join only when the offspring total is positive.
pub fn simulate_w(model: &EnvironmentModel, n_max: u64, rng: &mut SimRng) -> TrajectorySample {
    simulate_kind(ProcessKind::W, model, n_max, rng, false)
}

/// `W` started from a fixed size instead of from the initial law (a departure
/// from the model's convention, for exploration only).
pub fn simulate_w_from(
    model: &EnvironmentModel,
    n_max: u64,
    start: u64,
    rng: &mut SimRng,
) -> TrajectorySample {
    run(ProcessKind::W, PopSize::Count(start), n_max, false, rng, |r, _| {
        let step = model.sample_environment_step(r);
        (step.offspring, step.immigration)
    })
}

/// Process with immigration `Y`, started like `W`.
pub fn simulate_y(model: &EnvironmentModel, n_max: u64, rng: &mut SimRng) -> TrajectorySample {
    simulate_kind(ProcessKind::Y, model, n_max, rng, false)
}

/// Process without immigration `Z`, `Z_0 = 1`.
pub fn simulate_z(model: &EnvironmentModel, n_max: u64, rng: &mut SimRng) -> TrajectorySample {
    simulate_kind(ProcessKind::Z, model, n_max, rng, false)
}

/// Any process with the environment recorded.
pub fn simulate_logged(
    kind: ProcessKind,
    model: &EnvironmentModel,
    n_max: u64,
    rng: &mut SimRng,
) -> TrajectorySample {
    simulate_kind(kind, model, n_max, rng, true)
}

/// Runs a process in a fixed environment from the given start.
pub fn simulate_in_environment<R: Rng + ?Sized>(
    kind: ProcessKind,
    env: &EnvRealization,
    start: u64,
    rng: &mut R,
) -> TrajectorySample {
    run(
        kind,
        PopSize::Count(start),
        env.len() as u64,
        false,
        rng,
        |_, n| (*env.offspring(n as usize), env.immigration(n as usize)),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailEstimate {
    pub n_grid: Vec<u64>,
    pub survival: Vec<f64>,
    pub stderr: Vec<f64>,
    pub replicas: u64,
    pub master_seed: u64,
    pub saturated_fraction: f64,
    pub warning: Option<String>,
}

impl TailEstimate {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "n,survival,stderr,replicas,saturated_fraction")?;
        for i in 0..self.n_grid.len() {
            writeln!(
                w,
                "{},{:.16e},{:.16e},{},{:.16e}",
                self.n_grid[i],
                self.survival[i],
                self.stderr[i],
                self.replicas,
                self.saturated_fraction
            )?;
        }
        Ok(())
    }

    pub fn at(&self, n: u64) -> Option<(f64, f64)> {
        self.n_grid
            .iter()
            .position(|&k| k == n)
            .map(|i| (self.survival[i], self.stderr[i]))
    }
}

/// Replica-parallel estimate of `P(ζ > n)` on `n_grid`, censored at its maximum.
pub fn estimate_tail(
    model: &EnvironmentModel,
    n_grid: &[u64],
    replicas: u64,
    seed: u64,
    exec: Execution,
) -> TailEstimate {
    estimate_tail_from(model, n_grid, replicas, seed, exec, None)
}

/// [`estimate_tail`] with an optional fixed initial size `W_0 = k`.
pub fn estimate_tail_from(
    model: &EnvironmentModel,
    n_grid: &[u64],
    replicas: u64,
    seed: u64,
    exec: Execution,
    start: Option<u64>,
) -> TailEstimate {
    let mut grid = n_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let n_max = grid.last().copied().unwrap_or(0);
    let len = n_max as usize + 1;
    let streams = Streams::new(seed, Tag::Tail);
    // histogram of ζ (index 0 = censored) plus the saturation count
    let parts = map_chunks(exec, replicas, |range| {
        let mut h = vec![0u64; len];
        let mut sat = 0u64;
        for r in range {
            let mut rng = streams.stream(r);
            let t = match start {
                Some(k) => simulate_w_from(model, n_max, k, &mut rng),
                None => simulate_w(model, n_max, &mut rng),
            };
            h[t.zeta.unwrap_or(0) as usize] += 1;
            sat += t.saturated as u64;
        }
        (h, sat)
    });
    let mut hist = vec![0u64; len];
    let mut sat = 0u64;
    for (h, s) in parts {
        for (a, b) in hist.iter_mut().zip(h) {
            *a += b;
        }
        sat += s;
    }
    let est = crate::walk::survival_from_histogram(&hist, &grid, replicas);
    let saturated_fraction = sat as f64 / replicas as f64;
    TailEstimate {
        n_grid: grid,
        survival: est.iter().map(|e| e.estimate).collect(),
        stderr: est
            .iter()
            .map(|e| binomial_stderr(e.estimate, replicas))
            .collect(),
        replicas,
        master_seed: seed,
        saturated_fraction,
        warning: (saturated_fraction > 1e-3).then(|| {
            format!(
                "{:.3}% of replicas reached the log-scale population regime",
                100.0 * saturated_fraction
            )
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envmodel::{deterministic_critical, example2};
    use crate::stats::ks_two_sample;

    fn law(m: f64) -> OffspringLaw {
        OffspringLaw::from_mean(m).unwrap()
    }

    #[test]
    fn zero_probability_matches_pgf() {
        let mut rng = Streams::new(1, Tag::Misc).stream(0);
        let f = law(63.0);
        let n = 1_000_000;
        let zeros = (0..n)
            .filter(|_| step_offspring_total(1, &f, &mut rng) == 0)
            .count();
        let p = 1.0 / 64.0;
        let se = binomial_stderr(p, n as u64);
        assert!((zeros as f64 / n as f64 - p).abs() < 4.0 * se);
    }

    #[test]
    fn mean_is_linear_in_parents() {
        let mut rng = Streams::new(2, Tag::Misc).stream(0);
        for (w, m) in [(3u64, 2.0), (40, 0.5), (1000, 63.0)] {
            let f = law(m);
            let n = 100_000u64;
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                let t = step_offspring_total(w, &f, &mut rng) as f64;
                s += t;
                s2 += t * t;
            }
            let (mean, se) = crate::stats::mean_stderr(s, s2, n);
            assert!((mean - w as f64 * m).abs() < 4.0 * se, "{w} {m}: {mean}");
        }
    }

    #[test]
    fn single_critical_geometric_fits() {
        // P(T = k) = 2^{-(k+1)}; chi-square over k = 0..9 plus tail
        let mut rng = Streams::new(3, Tag::Misc).stream(0);
        let f = law(1.0);
        let n = 200_000;
        let mut counts = [0u64; 11];
        for _ in 0..n {
            let k = step_offspring_total(1, &f, &mut rng).min(10) as usize;
            counts[k] += 1;
        }
        let mut chi2 = 0.0;
        for (k, &c) in counts.iter().enumerate() {
            let p = if k < 10 { 0.5f64.powi(k as i32 + 1) } else { 0.5f64.powi(10) };
            let e = p * n as f64;
            chi2 += (c as f64 - e).powi(2) / e;
        }
        // 10 degrees of freedom, 1% critical value 23.21
        assert!(chi2 < 23.21, "chi2 = {chi2}");
    }

    #[test]
    fn methods_agree_in_distribution() {
        for &w in &[1u64, 5, 50] {
            for &m in &[1.0 / 63.0, 1.0, 63.0] {
                let f = law(m);
                let mut r1 = Streams::with_salt(4, Tag::Misc, w).stream(m.to_bits());
                let mut r2 = Streams::with_salt(5, Tag::Misc, w).stream(m.to_bits());
                let n = 20_000;
                let a: Vec<f64> = (0..n)
                    .map(|_| sample_offspring_total(w, &f, NbMethod::Direct, &mut r1) as f64)
                    .collect();
                let b: Vec<f64> = (0..n)
                    .map(|_| sample_offspring_total(w, &f, NbMethod::GammaPoisson, &mut r2) as f64)
                    .collect();
                let (d, p) = ks_two_sample(&a, &b);
                assert!(p > 0.01, "w={w} m={m}: D={d} p={p}");
            }
        }
    }

    #[test]
    fn stopped_dynamics() {
        let g = ImmigrationLaw::polynomial(vec![0.0, 1.0]).unwrap();
        // m tiny: offspring total is zero almost surely
        let tiny = OffspringLaw::from_log_mean(-200.0).unwrap();
        let env = EnvRealization::new(vec![tiny], vec![&g], &g);
        let mut rng = Streams::new(6, Tag::Misc).stream(0);
        let w = simulate_in_environment(ProcessKind::W, &env, 2, &mut rng);
        assert_eq!(w.sizes, vec![PopSize::Count(2), PopSize::Count(0)]);
        assert_eq!(w.zeta, Some(1));
        let mut rng = Streams::new(6, Tag::Misc).stream(0);
        let y = simulate_in_environment(ProcessKind::Y, &env, 2, &mut rng);
        assert_eq!(y.sizes[1], PopSize::Count(1));
        let mut rng = Streams::new(6, Tag::Misc).stream(0);
        let env3 = EnvRealization::new(vec![tiny; 3], vec![&g; 3], &g);
        let z = simulate_in_environment(ProcessKind::Z, &env3, 1, &mut rng);
        assert_eq!(z.sizes, vec![PopSize::Count(1), PopSize::Count(0)]);
        assert_eq!(PopSize::Count(3).plus(1), PopSize::Count(4));
    }

    #[test]
    fn w_and_y_coincide_before_zeta() {
        let m = example2().unwrap();
        for r in 0..500 {
            let s = Streams::new(7, Tag::Misc);
            let w = simulate_w(&m, 200, &mut s.stream(r));
            let y = simulate_y(&m, 200, &mut s.stream(r));
            let stop = w.zeta.unwrap_or(200) as usize;
            for n in 0..stop {
                assert_eq!(w.sizes[n], y.sizes[n]);
            }
            for n in 0..w.sizes.len() {
                assert!(w.sizes[n].ln() <= y.sizes[n].ln() || w.sizes[n].is_zero());
            }
        }
    }

    #[test]
    fn quenched_mean_of_z() {
        let g = ImmigrationLaw::two_thirds_pair();
        let laws = vec![law(2.0), law(0.5), law(3.0), law(1.5)];
        let env = EnvRealization::new(laws, vec![&g; 4], &g);
        let n = 200_000u64;
        let (mut s, mut s2) = (0.0, 0.0);
        for r in 0..n {
            let mut rng = Streams::new(8, Tag::Misc).stream(r);
            let z = simulate_in_environment(ProcessKind::Z, &env, 1, &mut rng);
            let v = if z.sizes.len() == 5 { z.sizes[4].as_f64() } else { 0.0 };
            s += v;
            s2 += v * v;
        }
        let (mean, se) = crate::stats::mean_stderr(s, s2, n);
        assert!((mean - env.walk(4).exp()).abs() < 4.0 * se, "{mean}");
    }

    #[test]
    fn tail_basics_on_deterministic_preset() {
        let m = deterministic_critical().unwrap();
        let t = estimate_tail(&m, &[0, 1, 2], 200_000, 11, Execution::Parallel);
        assert_eq!(t.survival[0], 1.0);
        assert!((t.survival[1] - 0.75).abs() < 4.0 * t.stderr[1]);
        assert!((t.survival[2] - 47.0 / 72.0).abs() < 4.0 * t.stderr[2]);
        assert!(t.survival.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn censoring_is_consistent() {
        let m = example2().unwrap();
        let all = estimate_tail(&m, &(1..=20).collect::<Vec<_>>(), 5000, 12, Execution::Sequential);
        for n in [3u64, 10, 20] {
            let one = estimate_tail(&m, &[n, 20], 5000, 12, Execution::Sequential);
            assert_eq!(one.at(n), all.at(n));
        }
    }

    #[test]
    fn log_regime_keeps_growing() {
        let mut rng = Streams::new(13, Tag::Misc).stream(0);
        let f = law(63.0);
        let mut w = PopSize::Count(1 << 40);
        for _ in 0..20 {
            w = step_population(w, &f, &mut rng);
        }
        match w {
            PopSize::Log(l) => assert!((l - (40.0 * 2f64.ln() + 20.0 * 63f64.ln())).abs() < 1e-3),
            other => panic!("{other:?}"),
        }
        // and comes back down to exact counts
        let down = law(1.0 / 63.0);
        for _ in 0..40 {
            w = step_population(w, &down, &mut rng);
        }
        assert!(matches!(w, PopSize::Count(_)));
    }
}
