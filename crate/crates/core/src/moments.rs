//! Moments of the uniform distribution and moment/localizing matrices.
//!
//! Matrices are kept symbolic: every entry is a linear form over moment
//! ranks, so the same map feeds the SDP assembly and certificate checks.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::poly::{Monomial, MonomialOrder, Polynomial};

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        x >= self.lo - tol && x <= self.hi + tol
    }

    pub fn is_proper(&self) -> bool {
        self.hi > self.lo
    }

    pub fn bisect(&self) -> (Interval, Interval) {
        let m = self.mid();
        (Interval::new(self.lo, m), Interval::new(m, self.hi))
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Interval::new(lo, hi))
    }

    pub fn widen(&self, eps: f64) -> Interval {
        Interval::new(self.lo - eps, self.hi + eps)
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.max(self.lo).min(self.hi)
    }
}

/// Moments `beta_0..=beta_max_deg` of the uniform probability on `iv`:
/// `beta_l = (hi^(l+1) - lo^(l+1)) / ((l+1)(hi - lo))`.
pub fn uniform_moments(iv: Interval, max_deg: usize) -> Result<Vec<f64>> {
    if !(iv.hi > iv.lo) || !iv.lo.is_finite() || !iv.hi.is_finite() {
        return Err(Error::DegenerateInterval {
            lo: iv.lo,
            hi: iv.hi,
        });
    }
    let w = iv.hi - iv.lo;
    // Horner form of (hi^(l+1) - lo^(l+1)) / (hi - lo) = sum_j hi^j lo^(l-j)
    // avoids cancellation for narrow intervals.
    let mut out = Vec::with_capacity(max_deg + 1);
    let mut hi_pow = vec![1.0f64; max_deg + 1];
    let mut lo_pow = vec![1.0f64; max_deg + 1];
    for l in 1..=max_deg {
        hi_pow[l] = hi_pow[l - 1] * iv.hi;
        lo_pow[l] = lo_pow[l - 1] * iv.lo;
    }
    for l in 0..=max_deg {
        let direct = (hi_pow[l] * iv.hi - lo_pow[l] * iv.lo) / ((l as f64 + 1.0) * w);
        let summed: f64 = (0..=l).map(|j| hi_pow[j] * lo_pow[l - j]).sum::<f64>() / (l as f64 + 1.0);
        // The direct quotient is exact enough when the interval is wide
        // relative to its magnitude; otherwise use the expanded sum.
        let scale = iv.hi.abs().max(iv.lo.abs());
        out.push(if w >= 0.5 * scale { direct } else { summed });
    }
    Ok(out)
}

/// Truncated (pseudo-)moment sequence indexed by graded-lex rank.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentVector {
    pub n: usize,
    pub values: Vec<f64>,
}

impl MomentVector {
    pub fn new(n: usize, values: Vec<f64>) -> Self {
        MomentVector { n, values }
    }

    /// Moments `z_alpha = x0^alpha` of the point mass at `x0`, up to `max_deg`.
    pub fn dirac(x0: &[f64], max_deg: usize) -> Self {
        let order = MonomialOrder::new(x0.len(), max_deg);
        let values = order.basis().iter().map(|m| m.evaluate(x0)).collect();
        MomentVector {
            n: x0.len(),
            values,
        }
    }

    /// Moments of the finite mixture `sum_i w_i delta_{x_i}`.
    pub fn mixture(points: &[Vec<f64>], weights: &[f64], max_deg: usize) -> Self {
        let n = points[0].len();
        let order = MonomialOrder::new(n, max_deg);
        let values = order
            .basis()
            .iter()
            .map(|m| {
                points
                    .iter()
                    .zip(weights)
                    .map(|(p, w)| w * m.evaluate(p))
                    .sum()
            })
            .collect();
        MomentVector { n, values }
    }

    /// Riesz functional `L_z(p) = sum_alpha p_alpha z_alpha`.
    pub fn riesz(&self, p: &Polynomial, order: &MonomialOrder) -> Result<f64> {
        let mut acc = 0.0;
        for (m, c) in p.terms() {
            let r = order.rank(m).ok_or(Error::RankOverflow {
                rank: usize::MAX,
                len: self.values.len(),
            })?;
            let v = self.values.get(r).ok_or(Error::RankOverflow {
                rank: r,
                len: self.values.len(),
            })?;
            acc += c * v;
        }
        Ok(acc)
    }
}

/// Sparse linear form `sum_r c_r z_r` over moment ranks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearForm(pub Vec<(usize, f64)>);

impl LinearForm {
    pub fn single(rank: usize, c: f64) -> Self {
        LinearForm(vec![(rank, c)])
    }

    /// Merges repeated ranks and sorts by rank.
    pub fn normalized(mut terms: Vec<(usize, f64)>) -> Self {
        terms.sort_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for (r, c) in terms {
            match out.last_mut() {
                Some(last) if last.0 == r => last.1 += c,
                _ => out.push((r, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        LinearForm(out)
    }

    pub fn eval(&self, z: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for &(r, c) in &self.0 {
            let v = z.get(r).ok_or(Error::RankOverflow { rank: r, len: z.len() })?;
            acc += c * v;
        }
        Ok(acc)
    }

    pub fn max_rank(&self) -> Option<usize> {
        self.0.iter().map(|t| t.0).max()
    }

    pub fn terms(&self) -> &[(usize, f64)] {
        &self.0
    }

    /// Linear form `L_z(p)` for a polynomial expressed in `order`.
    pub fn from_polynomial(p: &Polynomial, order: &MonomialOrder) -> Result<Self> {
        let mut terms = Vec::with_capacity(p.num_terms());
        for (m, c) in p.terms() {
            let r = order.rank(m).ok_or(Error::OrderTooSmall {
                order: order.max_degree(),
                required: m.degree() as usize,
            })?;
            terms.push((r, c));
        }
        Ok(LinearForm::normalized(terms))
    }
}

/// Symmetric matrix whose entries are linear forms in the moment vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMatrixMap {
    size: usize,
    entries: Vec<LinearForm>,
}

impl AffineMatrixMap {
    /// Builds a map from the upper triangle; `f(a, b)` is called for `a <= b`.
    pub fn from_upper<F>(size: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, usize) -> Result<LinearForm>,
    {
        let mut entries = vec![LinearForm::default(); size * size];
        for a in 0..size {
            for b in a..size {
                let form = f(a, b)?;
                entries[b * size + a] = form.clone();
                entries[a * size + b] = form;
            }
        }
        Ok(AffineMatrixMap { size, entries })
    }

    /// A 1x1 block holding a single linear form.
    pub fn scalar(form: LinearForm) -> Self {
        AffineMatrixMap {
            size: 1,
            entries: vec![form],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn entry(&self, a: usize, b: usize) -> &LinearForm {
        &self.entries[a * self.size + b]
    }

    pub fn max_rank(&self) -> Option<usize> {
        self.entries.iter().filter_map(LinearForm::max_rank).max()
    }

    /// Numeric matrix at the moment vector `z`.
    pub fn apply(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(self.size, self.size);
        for a in 0..self.size {
            for b in a..self.size {
                let v = self.entry(a, b).eval(z)?;
                m[(a, b)] = v;
                m[(b, a)] = v;
            }
        }
        Ok(m)
    }

    /// Adjoint map: `out[r] += <F_r, s>` where `F_r` is the coefficient
    /// matrix of `z_r`.
    pub fn adjoint_into(&self, s: &DMatrix<f64>, out: &mut [f64]) {
        for a in 0..self.size {
            for b in 0..self.size {
                let sab = s[(a, b)];
                if sab == 0.0 {
                    continue;
                }
                for &(r, c) in &self.entry(a, b).0 {
                    out[r] += c * sab;
                }
            }
        }
    }

    /// Coefficient matrices grouped by variable: `(rank, [(a, b, c)])` with
    /// both triangles listed.
    pub fn triplets_by_rank(&self) -> Vec<(usize, Vec<(usize, usize, f64)>)> {
        let mut by: std::collections::BTreeMap<usize, Vec<(usize, usize, f64)>> =
            std::collections::BTreeMap::new();
        for a in 0..self.size {
            for b in 0..self.size {
                for &(r, c) in &self.entry(a, b).0 {
                    by.entry(r).or_default().push((a, b, c));
                }
            }
        }
        by.into_iter().collect()
    }
}

/// Moment matrix `M_i(z)` in `n` variables: entry `(alpha, beta)` reads
/// `z_{alpha+beta}`.
pub fn moment_matrix_map(n: usize, i: usize) -> AffineMatrixMap {
    let rows = MonomialOrder::new(n, i);
    let full = MonomialOrder::new(n, 2 * i);
    let basis = rows.basis();
    AffineMatrixMap::from_upper(basis.len(), |a, b| {
        let m = basis[a].mul(&basis[b]);
        Ok(LinearForm::single(full.rank(&m).expect("rank within 2i"), 1.0))
    })
    .expect("moment matrix construction is infallible")
}

/// Localizing matrix `M_i(q z)`: entry `(alpha, beta)` is
/// `sum_u q_u z_{alpha+beta+u}`.
pub fn localizing_matrix_map(q: &Polynomial, i: usize) -> AffineMatrixMap {
    let n = q.nvars();
    let rows = MonomialOrder::new(n, i);
    let full = MonomialOrder::new(n, 2 * i + q.degree() as usize);
    let basis = rows.basis();
    let qt: Vec<(Monomial, f64)> = q.terms().map(|(m, c)| (m.clone(), c)).collect();
    AffineMatrixMap::from_upper(basis.len(), |a, b| {
        let ab = basis[a].mul(&basis[b]);
        let terms = qt
            .iter()
            .map(|(u, c)| (full.rank(&ab.mul(u)).expect("rank within bound"), *c))
            .collect();
        Ok(LinearForm::normalized(terms))
    })
    .expect("localizing matrix construction is infallible")
}

/// Evaluates a map at a moment vector.
pub fn apply(map: &AffineMatrixMap, z: &MomentVector) -> Result<DMatrix<f64>> {
    map.apply(&z.values)
}
