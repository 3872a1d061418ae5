//! Fractional-linear generating-function algebra for one environment realization.
//!
//! Every fractional-linear pgf is written as `f(s) = 1 - a u / (1 + b u)` with
//! `u = 1 - s` and stored as `(a, c)` with `c = b - a`, so that
//! `f(1 - u) = (1 + c u) / (1 + (a + c) u)` has no cancellation anywhere on
//! `[0, 1]`. A geometric law with mean `m` is `(m, 0)`; the identity is `(1, -1)`.
//!
//! Double-precision routines iterate in log-gap form (`ln(1 - s)`), which stays
//! finite for arbitrarily large or small log-means. The `*_in` variants are
//! generic over [`Scalar`] and back the exact-rational oracle.

use std::collections::HashMap;

use thiserror::Error;

use crate::envmodel::{ImmigrationLaw, OffspringLaw};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GfError {
    #[error("index out of range: need {lo} <= {hi} <= {len}")]
    Index { lo: usize, hi: usize, len: usize },
    #[error("argument s = {0} outside [0, 1]")]
    Argument(f64),
    #[error("initial immigration law has G_0(0) = 1: no mass on positive states")]
    DegenerateInitial,
    #[error("literal product {literal} and closed form {closed} disagree (relative {relative:e})")]
    Inconsistent {
        literal: f64,
        closed: f64,
        relative: f64,
    },
}

/// `s ↦ 1 - a u / (1 + (a + c) u)`, `u = 1 - s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FracLinear {
    pub a: f64,
    pub c: f64,
}

impl FracLinear {
    pub const IDENTITY: FracLinear = FracLinear { a: 1.0, c: -1.0 };

    pub fn geometric(law: &OffspringLaw) -> Self {
        FracLinear {
            a: law.mean(),
            c: 0.0,
        }
    }

    /// `self ∘ inner`, i.e. `s ↦ self(inner(s))`.
    pub fn compose(&self, inner: &FracLinear) -> FracLinear {
        FracLinear {
            a: self.a * inner.a,
            c: inner.a + inner.c + inner.a * self.c,
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        let u = 1.0 - s;
        (1.0 + self.c * u) / (1.0 + (self.a + self.c) * u)
    }

    /// `1 - f(1 - u)`.
    pub fn eval_gap(&self, u: f64) -> f64 {
        self.a * u / (1.0 + (self.a + self.c) * u)
    }
}

/// `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(e^a + e^b)`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// One geometric step in log-gap form: `ln(1 - F(1 - e^l))`.
#[inline]
pub fn log_gap_step(x: f64, l: f64) -> f64 {
    -softplus(-(x + l))
}

/// A realized environment: `F_1..F_n`, `G_1..G_n` and the initial law `G_0`.
#[derive(Clone, Debug)]
pub struct EnvRealization<'a> {
    offspring: Vec<OffspringLaw>,
    immigration: Vec<&'a ImmigrationLaw>,
    initial: &'a ImmigrationLaw,
    /// `S_0..S_n`
    s: Vec<f64>,
    /// `ln B_{1,k} = ln Σ_{j=1}^{k} e^{S_j}`, `k = 0..n` (`-inf` at `k = 0`)
    log_b1: Vec<f64>,
}

impl<'a> EnvRealization<'a> {
    pub fn new(
        offspring: Vec<OffspringLaw>,
        immigration: Vec<&'a ImmigrationLaw>,
        initial: &'a ImmigrationLaw,
    ) -> Self {
        assert_eq!(offspring.len(), immigration.len(), "one G per generation");
        let mut s = Vec::with_capacity(offspring.len() + 1);
        let mut log_b1 = Vec::with_capacity(offspring.len() + 1);
        s.push(0.0);
        log_b1.push(f64::NEG_INFINITY);
        for f in &offspring {
            let next = s.last().unwrap() + f.log_mean();
            log_b1.push(log_add_exp(*log_b1.last().unwrap(), next));
            s.push(next);
        }
        EnvRealization {
            offspring,
            immigration,
            initial,
            s,
            log_b1,
        }
    }

    /// Same law for every generation and for `G_0`.
    pub fn constant(law: OffspringLaw, g: &'a ImmigrationLaw, n: usize) -> Self {
        Self::new(vec![law; n], vec![g; n], g)
    }

    pub fn len(&self) -> usize {
        self.offspring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offspring.is_empty()
    }

    /// `F_k`, `k = 1..n`.
    pub fn offspring(&self, k: usize) -> &OffspringLaw {
        &self.offspring[k - 1]
    }

    /// `G_k`, `k = 0..n`.
    pub fn immigration(&self, k: usize) -> &ImmigrationLaw {
        if k == 0 {
            self.initial
        } else {
            self.immigration[k - 1]
        }
    }

    /// `S_k`.
    pub fn walk(&self, k: usize) -> f64 {
        self.s[k]
    }

    /// `ln B_{1,k}`.
    pub fn log_b1(&self, k: usize) -> f64 {
        self.log_b1[k]
    }

    /// `ln B_k = ln Σ_{j=0}^{k} e^{S_j}`.
    pub fn log_b(&self, k: usize) -> f64 {
        log_add_exp(0.0, self.log_b1[k])
    }

    fn check(&self, lo: usize, hi: usize, s: f64) -> Result<(), GfError> {
        if lo > hi || hi > self.len() {
            return Err(GfError::Index {
                lo,
                hi,
                len: self.len(),
            });
        }
        if !(0.0..=1.0).contains(&s) {
            return Err(GfError::Argument(s));
        }
        Ok(())
    }
}

/// `F_{i,n}(s) = F_{i+1}(F_{i+2}(…F_n(s)…))`, `F_{n,n}(s) = s`.
pub fn compose_forward(env: &EnvRealization, i: usize, n: usize, s: f64) -> Result<f64, GfError> {
    env.check(i, n, s)?;
    if i == n {
        return Ok(s);
    }
    let mut l = (1.0 - s).ln();
    for k in (i + 1..=n).rev() {
        l = log_gap_step(env.offspring(k).log_mean(), l);
    }
    Ok(-l.exp_m1())
}

/// `F_{n,i}(s) = F_n(F_{n-1}(…F_{i+1}(s)…))`. Uses the closed form through the
/// exponential sums when `i = 0` and iterated evaluation otherwise.
pub fn compose_backward(env: &EnvRealization, n: usize, i: usize, s: f64) -> Result<f64, GfError> {
    env.check(i, n, s)?;
    if i == 0 {
        return Ok(backward_closed(env, n, s));
    }
    Ok(backward_iterated(env, n, i, s))
}

/// `F_{n,0}(s) = (1 + B_{1,n-1} u) / (1 + B_{1,n} u)`.
pub fn backward_closed(env: &EnvRealization, n: usize, s: f64) -> f64 {
    if n == 0 {
        return s;
    }
    let lu = (1.0 - s).ln();
    (softplus(env.log_b1(n - 1) + lu) - softplus(env.log_b1(n) + lu)).exp()
}

pub fn backward_iterated(env: &EnvRealization, n: usize, i: usize, s: f64) -> f64 {
    if i == n {
        return s;
    }
    let mut l = (1.0 - s).ln();
    for k in i + 1..=n {
        l = log_gap_step(env.offspring(k).log_mean(), l);
    }
    -l.exp_m1()
}

/// `C_n(s) = Π_{i=1}^{n} F_{i,0}(s)`, computed as the literal product and as
/// `1 / (1 + B_{1,n} u)`; returns the closed form after checking agreement.
pub fn product_c(env: &EnvRealization, n: usize, s: f64) -> Result<f64, GfError> {
    env.check(0, n, s)?;
    let (literal, closed) = product_c_both(env, n, s);
    let relative = ((literal - closed) / closed).abs();
    if !(relative <= 1e-12) {
        return Err(GfError::Inconsistent {
            literal,
            closed,
            relative,
        });
    }
    Ok(closed)
}

/// (literal, closed) values of `C_n(s)`.
pub fn product_c_both(env: &EnvRealization, n: usize, s: f64) -> (f64, f64) {
    let lu = (1.0 - s).ln();
    let mut l = lu;
    let mut log_prod = 0.0;
    for k in 1..=n {
        l = log_gap_step(env.offspring(k).log_mean(), l);
        // ln F_{k,0}(s) = ln(1 - e^l)
        log_prod += (-l.exp()).ln_1p();
    }
    let closed = (-softplus(env.log_b1(n) + lu)).exp();
    (log_prod.exp(), closed)
}

/// `N(n; s) = E[s^{W_n} | ℰ]` by the two-point recursion
/// `N(n; s) = N(n-1; F_n(0)) (1 - G_n(s)) + N(n-1; F_n(s)) G_n(s)`
/// with `N(0; s) = (G_0(s) - G_0(0)) / (1 - G_0(0))`.
pub fn conditional_pgf_n(env: &EnvRealization, n: usize, s: f64) -> Result<f64, GfError> {
    env.check(0, n, s)?;
    conditional_pgf_n_in(env, n, &s)
}

/// Generic form of [`conditional_pgf_n`].
pub fn conditional_pgf_n_in<T: Scalar>(
    env: &EnvRealization,
    n: usize,
    s: &T,
) -> Result<T, GfError> {
    let u = T::one().sub(s);
    Ok(T::one().sub(&complement_pgf_n_in(env, n, &u)?))
}

/// `1 - N(n; 1 - u)`, evaluated in gap coordinates so that arguments close to
/// 1 keep full relative precision:
/// `M(n; u) = M(n-1; 1 - F_n(0)) ĝ_n(u) + M(n-1; 1 - F_n(1 - u)) (1 - ĝ_n(u))`
/// with `ĝ(u) = 1 - G(1 - u)` and `M(0; u) = ĝ_0(u) / ĝ_0(1)`. Arguments are
/// memoized per level on their exact key, so the cost is `O(n²)` evaluations.
/// `1 - E[N(n; 0)]` is `E[M(n; 1)]`.
pub fn complement_pgf_n_in<T: Scalar>(
    env: &EnvRealization,
    n: usize,
    u: &T,
) -> Result<T, GfError> {
    if n > env.len() {
        return Err(GfError::Index {
            lo: 0,
            hi: n,
            len: env.len(),
        });
    }
    if env.initial.g0() >= 1.0 {
        return Err(GfError::DegenerateInitial);
    }
    let top = env.initial.tail_gap_in(&T::one());
    let mut memo: HashMap<(usize, T::Key), T> = HashMap::new();
    Ok(m_rec(env, n, u, &top, &mut memo))
}

fn m_rec<T: Scalar>(
    env: &EnvRealization,
    n: usize,
    u: &T,
    top: &T,
    memo: &mut HashMap<(usize, T::Key), T>,
) -> T {
    let key = (n, u.key());
    if let Some(v) = memo.get(&key) {
        return v.clone();
    }
    let v = if n == 0 {
        env.initial.tail_gap_in(u).div(top)
    } else {
        let f = env.offspring(n);
        let gap = env.immigration(n).tail_gap_in(u);
        let a = m_rec(env, n - 1, &f.tail_gap_in(&T::one()), top, memo);
        let b = m_rec(env, n - 1, &f.tail_gap_in(u), top, memo);
        a.mul(&gap).add(&b.mul(&T::one().sub(&gap)))
    };
    memo.insert(key, v.clone());
    v
}

/// Generic iterated `F_{i,n}(s)`.
pub fn compose_forward_in<T: Scalar>(env: &EnvRealization, i: usize, n: usize, s: &T) -> T {
    let mut v = s.clone();
    for k in (i + 1..=n).rev() {
        v = env.offspring(k).pgf_in(&v);
    }
    v
}

/// Generic iterated `F_{n,i}(s)`.
pub fn compose_backward_in<T: Scalar>(env: &EnvRealization, n: usize, i: usize, s: &T) -> T {
    let mut v = s.clone();
    for k in i + 1..=n {
        v = env.offspring(k).pgf_in(&v);
    }
    v
}
