//! Sparse multivariate polynomials with real coefficients.
//!
//! Terms are keyed by exponent vectors. A [`MonomialOrder`] assigns the
//! graded-lexicographic rank used to index moment vectors.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Coefficients below this magnitude are dropped after arithmetic.
pub const PRUNE_TOL: f64 = 1e-14;

/// Multi-index `alpha` of a monomial `x^alpha`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Monomial(Vec<u32>);

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Monomial(exponents)
    }

    pub fn one(nvars: usize) -> Self {
        Monomial(vec![0; nvars])
    }

    /// The monomial `x_k`.
    pub fn var(nvars: usize, k: usize) -> Self {
        let mut e = vec![0; nvars];
        e[k] = 1;
        Monomial(e)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn nvars(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .filter(|(e, _)| **e > 0)
            .map(|(e, v)| v.powi(*e as i32))
            .product()
    }
}

/// Sparse polynomial in `nvars` variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Polynomial::zero(nvars);
        p.add_term(Monomial::one(nvars), c);
        p
    }

    /// The polynomial `x_k` (0-based `k`).
    pub fn var(nvars: usize, k: usize) -> Self {
        let mut p = Polynomial::zero(nvars);
        p.add_term(Monomial::var(nvars, k), 1.0);
        p
    }

    /// Builds a polynomial from `(coefficient, exponents)` pairs, combining
    /// repeated monomials.
    pub fn from_terms<I>(nvars: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, Vec<u32>)>,
    {
        let mut p = Polynomial::zero(nvars);
        for (c, e) in terms {
            if e.len() != nvars {
                return Err(Error::DimensionMismatch {
                    expected: nvars,
                    got: e.len(),
                });
            }
            p.add_term(Monomial(e), c);
        }
        Ok(p)
    }

    /// Adds `c * m` in place, pruning the term if it cancels.
    pub fn add_term(&mut self, m: Monomial, c: f64) {
        debug_assert_eq!(m.nvars(), self.nvars);
        match self.terms.entry(m) {
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().abs() < PRUNE_TOL {
                    o.remove();
                }
            }
            Entry::Vacant(v) => {
                if c.abs() >= PRUNE_TOL {
                    v.insert(c);
                }
            }
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Largest exponent of variable `k` across all terms.
    pub fn degree_in(&self, k: usize) -> u32 {
        self.terms.keys().map(|m| m.0[k]).max().unwrap_or(0)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, c)| (m, *c))
    }

    pub fn coefficient(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn constant_term(&self) -> f64 {
        self.coefficient(&Monomial::one(self.nvars))
    }

    pub fn is_constant(&self) -> bool {
        self.terms.keys().all(|m| m.degree() == 0)
    }

    /// True when every variable other than `k` is absent.
    pub fn depends_only_on(&self, k: usize) -> bool {
        self.terms
            .keys()
            .all(|m| m.0.iter().enumerate().all(|(j, e)| j == k || *e == 0))
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.nvars {
            return Err(Error::DimensionMismatch {
                expected: self.nvars,
                got: x.len(),
            });
        }
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(m, c)| c * m.evaluate(x)).sum()
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut out = Polynomial::zero(self.nvars);
        for (m, c) in &self.terms {
            let v = c * s;
            if v.abs() >= PRUNE_TOL {
                out.terms.insert(m.clone(), v);
            }
        }
        out
    }

    pub fn multiply(&self, other: &Polynomial) -> Result<Polynomial> {
        self.check_same(other)?;
        let mut acc: HashMap<Monomial, f64> = HashMap::new();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                *acc.entry(ma.mul(mb)).or_insert(0.0) += ca * cb;
            }
        }
        Ok(Polynomial::from_map(self.nvars, acc))
    }

    fn from_map(nvars: usize, acc: HashMap<Monomial, f64>) -> Polynomial {
        Polynomial {
            nvars,
            terms: acc
                .into_iter()
                .filter(|(_, c)| c.abs() >= PRUNE_TOL)
                .collect(),
        }
    }

    fn combine(&self, other: &Polynomial, sign: f64) -> Result<Polynomial> {
        self.check_same(other)?;
        let mut acc: HashMap<Monomial, f64> =
            self.terms.iter().map(|(m, c)| (m.clone(), *c)).collect();
        for (m, c) in &other.terms {
            *acc.entry(m.clone()).or_insert(0.0) += sign * c;
        }
        Ok(Polynomial::from_map(self.nvars, acc))
    }

    pub fn try_add(&self, other: &Polynomial) -> Result<Polynomial> {
        self.combine(other, 1.0)
    }

    pub fn try_sub(&self, other: &Polynomial) -> Result<Polynomial> {
        self.combine(other, -1.0)
    }

    fn check_same(&self, other: &Polynomial) -> Result<()> {
        if self.nvars != other.nvars {
            return Err(Error::DimensionMismatch {
                expected: self.nvars,
                got: other.nvars,
            });
        }
        Ok(())
    }

    /// Replaces `x_k` (0-based) by the constant `v`, returning a polynomial
    /// in the remaining `nvars - 1` variables (original order preserved).
    pub fn substitute(&self, k: usize, v: f64) -> Result<Polynomial> {
        if k >= self.nvars {
            return Err(Error::VariableOutOfRange {
                index: k,
                nvars: self.nvars,
            });
        }
        let mut acc: HashMap<Monomial, f64> = HashMap::new();
        for (m, c) in &self.terms {
            let e = m.0[k];
            let factor = if e == 0 { 1.0 } else { v.powi(e as i32) };
            let mut rest = m.0.clone();
            rest.remove(k);
            *acc.entry(Monomial(rest)).or_insert(0.0) += c * factor;
        }
        Ok(Polynomial::from_map(self.nvars - 1, acc))
    }

    /// Substitutes the first `values.len()` variables.
    pub fn substitute_prefix(&self, values: &[f64]) -> Result<Polynomial> {
        let mut p = self.clone();
        for &v in values {
            p = p.substitute(0, v)?;
        }
        Ok(p)
    }

    /// Applies the affine change `x_j = shift_j + scale_j * u_j`.
    pub fn affine_change(&self, shift: &[f64], scale: &[f64]) -> Result<Polynomial> {
        if shift.len() != self.nvars || scale.len() != self.nvars {
            return Err(Error::DimensionMismatch {
                expected: self.nvars,
                got: shift.len().min(scale.len()),
            });
        }
        let n = self.nvars;
        let images: Vec<Polynomial> = (0..n)
            .map(|j| {
                let mut p = Polynomial::constant(n, shift[j]);
                p.add_term(Monomial::var(n, j), scale[j]);
                p
            })
            .collect();
        let mut out = Polynomial::zero(n);
        for (m, c) in &self.terms {
            let mut term = Polynomial::constant(n, *c);
            for (j, &e) in m.0.iter().enumerate() {
                for _ in 0..e {
                    term = term.multiply(&images[j])?;
                }
            }
            out = out.try_add(&term)?;
        }
        Ok(out)
    }

    /// Partial derivative with respect to `x_k`.
    pub fn derivative(&self, k: usize) -> Polynomial {
        let mut acc: HashMap<Monomial, f64> = HashMap::new();
        for (m, c) in &self.terms {
            let e = m.0[k];
            if e == 0 {
                continue;
            }
            let mut d = m.0.clone();
            d[k] -= 1;
            *acc.entry(Monomial(d)).or_insert(0.0) += c * e as f64;
        }
        Polynomial::from_map(self.nvars, acc)
    }

    pub fn gradient(&self) -> Vec<Polynomial> {
        (0..self.nvars).map(|k| self.derivative(k)).collect()
    }

    /// Coefficients of `p` viewed as a univariate polynomial in `x_k`, valid
    /// only when `p` depends on nothing else.
    pub fn univariate_coeffs(&self, k: usize) -> Option<Vec<f64>> {
        if !self.depends_only_on(k) {
            return None;
        }
        let mut out = vec![0.0; self.degree_in(k) as usize + 1];
        for (m, c) in &self.terms {
            out[m.0[k] as usize] += c;
        }
        Some(out)
    }

    /// Largest absolute coefficient difference between two polynomials.
    pub fn max_coeff_diff(&self, other: &Polynomial) -> Result<f64> {
        let d = self.try_sub(other)?;
        Ok(d.terms.values().fold(0.0, |m, c| m.max(c.abs())))
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        self.try_add(rhs).expect("polynomial dimension mismatch")
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self.try_sub(rhs).expect("polynomial dimension mismatch")
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        self.multiply(rhs).expect("polynomial dimension mismatch")
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let order = MonomialOrder::new(self.nvars, self.degree() as usize);
        let mut keys: Vec<&Monomial> = self.terms.keys().collect();
        keys.sort_by_key(|m| order.rank(m));
        for (i, m) in keys.into_iter().enumerate() {
            let c = self.terms[m];
            if i > 0 {
                write!(f, " {} ", if c < 0.0 { '-' } else { '+' })?;
            } else if c < 0.0 {
                write!(f, "-")?;
            }
            let a = c.abs();
            let is_one = m.degree() == 0;
            if is_one || (a - 1.0).abs() > 1e-15 {
                write!(f, "{a}")?;
            }
            for (j, &e) in m.0.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                write!(f, "x{}", j + 1)?;
                if e > 1 {
                    write!(f, "^{e}")?;
                }
            }
        }
        Ok(())
    }
}

/// Graded-lexicographic ranking of all monomials of degree `<= max_degree`.
///
/// Degree ascends; within a degree, exponent vectors are in decreasing
/// lexicographic order, so `x1` precedes `x2`.
#[derive(Debug, Clone)]
pub struct MonomialOrder {
    n: usize,
    max_degree: usize,
    basis: Vec<Monomial>,
    index: HashMap<Monomial, usize>,
}

impl MonomialOrder {
    pub fn new(n: usize, max_degree: usize) -> Self {
        let mut basis = Vec::with_capacity(binomial(n + max_degree, max_degree));
        for d in 0..=max_degree {
            let mut cur = vec![0u32; n];
            compositions(n, d as u32, 0, &mut cur, &mut basis);
        }
        let index = basis
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        MonomialOrder {
            n,
            max_degree,
            basis,
            index,
        }
    }

    pub fn nvars(&self) -> usize {
        self.n
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    /// Number of monomials, `C(n + d, d)`.
    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    /// Number of monomials of degree `<= d`; a prefix of this ordering.
    pub fn count_up_to(&self, d: usize) -> usize {
        binomial(self.n + d, d)
    }

    pub fn rank(&self, m: &Monomial) -> Option<usize> {
        self.index.get(m).copied()
    }

    pub fn unrank(&self, r: usize) -> Option<&Monomial> {
        self.basis.get(r)
    }

    pub fn basis(&self) -> &[Monomial] {
        &self.basis
    }
}

fn compositions(n: usize, remaining: u32, pos: usize, cur: &mut Vec<u32>, out: &mut Vec<Monomial>) {
    if pos == n - 1 {
        cur[pos] = remaining;
        out.push(Monomial(cur.clone()));
        cur[pos] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        cur[pos] = e;
        compositions(n, remaining - e, pos + 1, cur, out);
    }
    cur[pos] = 0;
}

/// Graded-lex ranking of monomials in `n` variables up to degree `d`.
pub fn rank_monomials(n: usize, d: usize) -> MonomialOrder {
    MonomialOrder::new(n, d)
}

pub fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k.min(n));
    let mut r: usize = 1;
    for i in 0..k {
        r = r * (n - i) / (i + 1);
    }
    r
}
