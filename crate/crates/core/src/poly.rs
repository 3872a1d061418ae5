//! Exact polynomials over the rationals, just enough to decide whether a
//! polynomial is nonnegative on an interval (Yun square-free decomposition plus
//! Sturm root counting).

use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

/// Coefficients in increasing degree; no trailing zeros.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RatPoly(Vec<BigRational>);

impl RatPoly {
    pub fn new(mut coeffs: Vec<BigRational>) -> Self {
        while coeffs.last().is_some_and(|c| c.is_zero()) {
            coeffs.pop();
        }
        RatPoly(coeffs)
    }

    pub fn constant(c: BigRational) -> Self {
        Self::new(vec![c])
    }

    /// `c * t^k`
    pub fn monomial(c: BigRational, k: usize) -> Self {
        let mut v = vec![BigRational::zero(); k + 1];
        v[k] = c;
        Self::new(v)
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    /// Degree; the zero polynomial reports 0.
    pub fn degree(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    pub fn coeffs(&self) -> &[BigRational] {
        &self.0
    }

    fn lead(&self) -> BigRational {
        self.0.last().cloned().unwrap_or_else(BigRational::zero)
    }

    pub fn eval(&self, x: &BigRational) -> BigRational {
        self.0
            .iter()
            .rev()
            .fold(BigRational::zero(), |acc, c| acc * x + c)
    }

    pub fn derivative(&self) -> Self {
        Self::new(
            self.0
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| c * BigRational::from_integer(k.into()))
                .collect(),
        )
    }

    pub fn sub(&self, o: &Self) -> Self {
        let n = self.0.len().max(o.0.len());
        Self::new(
            (0..n)
                .map(|k| {
                    let a = self.0.get(k).cloned().unwrap_or_else(BigRational::zero);
                    let b = o.0.get(k).cloned().unwrap_or_else(BigRational::zero);
                    a - b
                })
                .collect(),
        )
    }

    fn scale(&self, c: &BigRational) -> Self {
        Self::new(self.0.iter().map(|x| x * c).collect())
    }

    fn monic(&self) -> Self {
        if self.is_zero() {
            return self.clone();
        }
        self.scale(&self.lead().recip())
    }

    /// Euclidean division `self = q * d + r`.
    pub fn div_rem(&self, d: &Self) -> (Self, Self) {
        assert!(!d.is_zero(), "division by zero polynomial");
        let mut r = self.0.clone();
        let dd = d.0.len() - 1;
        let lead = d.lead();
        if r.len() < d.0.len() {
            return (RatPoly(vec![]), self.clone());
        }
        let mut q = vec![BigRational::zero(); r.len() - dd];
        for k in (0..q.len()).rev() {
            let coef = &r[k + dd] / &lead;
            if !coef.is_zero() {
                for (j, dc) in d.0.iter().enumerate() {
                    r[k + j] -= &coef * dc;
                }
            }
            q[k] = coef;
        }
        r.truncate(dd);
        (Self::new(q), Self::new(r))
    }

    pub fn gcd(&self, o: &Self) -> Self {
        let (mut a, mut b) = (self.clone(), o.clone());
        while !b.is_zero() {
            let (_, r) = a.div_rem(&b);
            a = b;
            b = r;
        }
        a.monic()
    }

    /// Yun's square-free decomposition: returns `(factor, multiplicity)` pairs.
    pub fn square_free_factors(&self) -> Vec<(RatPoly, usize)> {
        let mut out = Vec::new();
        if self.degree() == 0 {
            return out;
        }
        let dp = self.derivative();
        let a0 = self.gcd(&dp);
        let mut b = self.div_rem(&a0).0;
        let c = dp.div_rem(&a0).0;
        let mut d = c.sub(&b.derivative());
        let mut i = 1;
        while b.degree() > 0 {
            let a = b.gcd(&d);
            let nb = b.div_rem(&a).0;
            let nc = d.div_rem(&a).0;
            d = nc.sub(&nb.derivative());
            b = nb;
            if a.degree() > 0 {
                out.push((a, i));
            }
            i += 1;
        }
        out
    }

    fn sturm_chain(&self) -> Vec<RatPoly> {
        let mut chain = vec![self.clone(), self.derivative()];
        loop {
            let n = chain.len();
            if chain[n - 1].is_zero() {
                chain.pop();
                break;
            }
            let (_, r) = chain[n - 2].div_rem(&chain[n - 1]);
            if r.is_zero() {
                break;
            }
            chain.push(r.scale(&-BigRational::one()));
        }
        chain
    }

    fn sign_variations(chain: &[RatPoly], x: &BigRational) -> usize {
        let signs: Vec<i8> = chain
            .iter()
            .map(|p| {
                let v = p.eval(x);
                if v.is_positive() {
                    1
                } else if v.is_negative() {
                    -1
                } else {
                    0
                }
            })
            .filter(|&s| s != 0)
            .collect();
        signs.windows(2).filter(|w| w[0] != w[1]).count()
    }

    /// Number of distinct real roots in the open interval `(a, b)`.
    pub fn count_roots_open(&self, a: &BigRational, b: &BigRational) -> usize {
        if self.degree() == 0 || a >= b {
            return 0;
        }
        let sqf = self.div_rem(&self.gcd(&self.derivative())).0;
        let chain = sqf.sturm_chain();
        let n = Self::sign_variations(&chain, a).saturating_sub(Self::sign_variations(&chain, b));
        if sqf.eval(b).is_zero() {
            n.saturating_sub(1)
        } else {
            n
        }
    }

    /// Decides `p(t) >= 0` for all `t` in `[a, b]` exactly.
    ///
    /// `p` changes sign only at roots of odd multiplicity, so the check reduces to
    /// "no odd-multiplicity root inside `(a, b)`" plus the sign at one interior
    /// non-root point.
    pub fn nonnegative_on(&self, a: &BigRational, b: &BigRational) -> bool {
        if self.is_zero() {
            return true;
        }
        if self.degree() == 0 {
            return !self.0[0].is_negative();
        }
        if self.eval(a).is_negative() || self.eval(b).is_negative() {
            return false;
        }
        if a >= b {
            return true;
        }
        let odd = self
            .square_free_factors()
            .into_iter()
            .filter(|(_, m)| m % 2 == 1)
            .fold(RatPoly::constant(BigRational::one()), |acc, (f, _)| acc.mul(&f));
        if odd.count_roots_open(a, b) > 0 {
            return false;
        }
        // sign is constant on (a, b) away from touching zeros; find a non-root sample
        let width = b - a;
        let mut denom = 2i64;
        loop {
            for k in 1..denom {
                if k % 2 == 0 && denom > 2 {
                    continue;
                }
                let x = a + &width * BigRational::new(k.into(), denom.into());
                let v = self.eval(&x);
                if !v.is_zero() {
                    return v.is_positive();
                }
            }
            denom *= 2;
        }
    }

    pub fn mul(&self, o: &Self) -> Self {
        if self.is_zero() || o.is_zero() {
            return RatPoly(vec![]);
        }
        let mut v = vec![BigRational::zero(); self.0.len() + o.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in o.0.iter().enumerate() {
                v[i + j] += a * b;
            }
        }
        Self::new(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    fn poly(c: &[(i64, i64)]) -> RatPoly {
        RatPoly::new(c.iter().map(|&(n, d)| q(n, d)).collect())
    }

    #[test]
    fn counts_roots() {
        // (t - 1/2)(t - 3/4) = t^2 - 5/4 t + 3/8
        let p = poly(&[(3, 8), (-5, 4), (1, 1)]);
        assert_eq!(p.count_roots_open(&q(0, 1), &q(1, 1)), 2);
        assert_eq!(p.count_roots_open(&q(0, 1), &q(3, 4)), 1);
        assert_eq!(p.count_roots_open(&q(0, 1), &q(1, 2)), 0);
    }

    #[test]
    fn square_free_decomposition_finds_multiplicities() {
        // (t - 1)^2 (t + 2)
        let a = poly(&[(-1, 1), (1, 1)]);
        let b = poly(&[(2, 1), (1, 1)]);
        let p = a.mul(&a).mul(&b);
        let f = p.square_free_factors();
        assert_eq!(f.len(), 2);
        assert!(f.contains(&(b.clone(), 1)));
        assert!(f.contains(&(a.clone(), 2)));
    }

    #[test]
    fn nonnegativity_with_touching_root() {
        // (t - 1/2)^2 touches zero without changing sign
        let a = poly(&[(-1, 2), (1, 1)]);
        let p = a.mul(&a);
        assert!(p.nonnegative_on(&q(0, 1), &q(1, 1)));
        // (t - 1/2) changes sign
        assert!(!a.nonnegative_on(&q(0, 1), &q(1, 1)));
        assert!(a.nonnegative_on(&q(1, 2), &q(1, 1)));
    }
}
