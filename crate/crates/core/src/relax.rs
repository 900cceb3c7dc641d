//! Moment relaxations of polynomial programs, with or without a marginal
//! constraint on one coordinate.
//!
//! With coordinate `x_k` treated as a parameter, the relaxation of order `i`
//! fixes the first `2i` pseudo-moments of `x_k` to those of a prescribed
//! distribution. The multipliers of these equalities form a univariate
//! polynomial `p_i` with `p_i(y) <= J^k(y)`, where `J^k(y)` is the optimal
//! value with `x_k = y`.

use nalgebra::DMatrix;

use crate::conic::{self, ConicProgram, ConicSolution, SolverOptions, Status};
use crate::error::{Error, Result};
use crate::moments::{localizing_matrix_map, moment_matrix_map, uniform_moments, Interval, LinearForm};
use crate::poly::{Monomial, MonomialOrder, Polynomial};

/// Constant constraints at or above this value are dropped after
/// substitution; below it they make the fixing infeasible.
pub const CONSTANT_FEAS_TOL: f64 = -1e-9;

/// `min f(x)` subject to `g_j(x) >= 0`, with optional per-variable bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct SemialgebraicProblem {
    pub n: usize,
    pub f: Polynomial,
    pub constraints: Vec<Polynomial>,
    /// Bounds for every variable, when known. These are metadata: they are
    /// only enforced through `constraints` and the relaxation guard.
    pub bounds: Option<Vec<Interval>>,
}

impl SemialgebraicProblem {
    pub fn new(f: Polynomial, constraints: Vec<Polynomial>) -> Result<Self> {
        let n = f.nvars();
        for g in &constraints {
            if g.nvars() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: g.nvars(),
                });
            }
        }
        Ok(SemialgebraicProblem {
            n,
            f,
            constraints,
            bounds: None,
        })
    }

    pub fn with_bounds(mut self, bounds: Vec<Interval>) -> Result<Self> {
        if bounds.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: bounds.len(),
            });
        }
        for b in &bounds {
            if !(b.hi > b.lo) {
                return Err(Error::DegenerateInterval { lo: b.lo, hi: b.hi });
            }
        }
        self.bounds = Some(bounds);
        Ok(self)
    }

    /// Same problem with `lo_j <= x_j <= hi_j` added as affine constraints.
    pub fn with_box_constraints(mut self, bounds: Vec<Interval>) -> Result<Self> {
        let n = self.n;
        for (j, b) in bounds.iter().enumerate() {
            let mut lo = Polynomial::var(n, j);
            lo.add_term(Monomial::one(n), -b.lo);
            let mut hi = Polynomial::var(n, j).scale(-1.0);
            hi.add_term(Monomial::one(n), b.hi);
            self.constraints.push(lo);
            self.constraints.push(hi);
        }
        self.with_bounds(bounds)
    }

    pub fn objective(&self, x: &[f64]) -> Result<f64> {
        self.f.evaluate(x)
    }

    /// `max_j max(0, -g_j(x))`
    pub fn feasibility_residual(&self, x: &[f64]) -> Result<f64> {
        let mut r: f64 = 0.0;
        for g in &self.constraints {
            r = r.max(-g.evaluate(x)?);
        }
        Ok(r + 0.0)
    }

    pub fn max_degree(&self) -> u32 {
        self.constraints
            .iter()
            .map(Polynomial::degree)
            .fold(self.f.degree(), u32::max)
    }

    /// Smallest relaxation order covering every degree.
    pub fn min_order(&self) -> usize {
        (self.max_degree() as usize).div_ceil(2).max(1)
    }

    pub fn is_affinely_constrained(&self) -> bool {
        self.constraints.iter().all(|g| g.degree() <= 1)
    }

    /// `R^2 - |x|^2` with `R^2 = sum_j max(lo_j^2, hi_j^2)`, when bounds are known.
    pub fn ball_constraint(&self) -> Option<Polynomial> {
        let b = self.bounds.as_ref()?;
        let n = self.n;
        let r2: f64 = b.iter().map(|iv| iv.lo.powi(2).max(iv.hi.powi(2))).sum();
        let mut p = Polynomial::constant(n, r2);
        for j in 0..n {
            let mut e = vec![0; n];
            e[j] = 2;
            p.add_term(Monomial::new(e), -1.0);
        }
        Some(p)
    }

    /// Redundant constraints added to every relaxation when bounds are known:
    /// `(x_j - lo_j)(hi_j - x_j) >= 0` for each `j`, then the ball.
    pub fn guard_constraints(&self) -> Vec<Polynomial> {
        let Some(b) = self.bounds.as_ref() else {
            return Vec::new();
        };
        let n = self.n;
        let mut out = Vec::with_capacity(n + 1);
        for (j, iv) in b.iter().enumerate() {
            // -(x_j^2) + (lo + hi) x_j - lo hi
            let mut p = Polynomial::constant(n, -iv.lo * iv.hi);
            p.add_term(Monomial::var(n, j), iv.lo + iv.hi);
            let mut e = vec![0; n];
            e[j] = 2;
            p.add_term(Monomial::new(e), -1.0);
            out.push(p);
        }
        out.extend(self.ball_constraint());
        out
    }

    /// Substitutes `x_1..x_m = prefix`. Constant constraints are dropped if
    /// nonnegative (up to `CONSTANT_FEAS_TOL`) and rejected otherwise.
    pub fn fix_prefix(&self, prefix: &[f64]) -> Result<SemialgebraicProblem> {
        if prefix.len() >= self.n {
            return Err(Error::Invalid(format!(
                "prefix of length {} leaves no free variable (n = {})",
                prefix.len(),
                self.n
            )));
        }
        let f = self.f.substitute_prefix(prefix)?;
        let mut constraints = Vec::with_capacity(self.constraints.len());
        for (j, g) in self.constraints.iter().enumerate() {
            let h = g.substitute_prefix(prefix)?;
            if h.is_constant() {
                let v = h.constant_term();
                if v < CONSTANT_FEAS_TOL {
                    return Err(Error::InfeasiblePrefix { index: j, value: v });
                }
                continue;
            }
            constraints.push(h);
        }
        let bounds = self
            .bounds
            .as_ref()
            .map(|b| b[prefix.len()..].to_vec());
        Ok(SemialgebraicProblem {
            n: self.n - prefix.len(),
            f,
            constraints,
            bounds,
        })
    }
}

/// Distribution imposed on the parameter coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Marginal {
    /// Uniform on the interval: moments `0..=2i` are fixed.
    Uniform(Interval),
    /// Uniform on `{-1, 1}`: only the mean (zero) is fixed, the second
    /// moment being implied by `x_k^2 = 1`.
    SignPair,
}

impl Marginal {
    pub fn interval(&self) -> Interval {
        match self {
            Marginal::Uniform(iv) => *iv,
            Marginal::SignPair => Interval::new(-1.0, 1.0),
        }
    }
}

/// Role of one PSD block: the Gram matrix multiplies `multiplier` and is
/// indexed by monomials of degree `<= half_degree`.
#[derive(Debug, Clone)]
pub struct BlockRole {
    pub multiplier: Polynomial,
    pub half_degree: usize,
}

/// Equalities `L_z(g x^gamma) = 0` for `|gamma| <= degree`, stored from row
/// `first_row` in basis order.
#[derive(Debug, Clone)]
pub struct EqualityRole {
    pub constraint: Polynomial,
    pub degree: usize,
    pub first_row: usize,
    pub count: usize,
}

/// A relaxation together with the layout needed to read its dual as a
/// polynomial certificate.
#[derive(Debug, Clone)]
pub struct Relaxation {
    pub program: ConicProgram,
    pub n: usize,
    pub order: usize,
    pub objective: Polynomial,
    /// Parameter coordinate and its marginal, if any.
    pub parameter: Option<(usize, Marginal)>,
    /// `(row, l, beta_l)` for each marginal equality; `l = 0` is the
    /// normalization.
    pub marginal_rows: Vec<(usize, u32, f64)>,
    pub blocks: Vec<BlockRole>,
    pub equalities: Vec<EqualityRole>,
}

fn half_degree(g: &Polynomial) -> usize {
    (g.degree() as usize).div_ceil(2)
}

/// Splits constraints into inequalities and equalities, pairing `g` with `-g`.
fn pair_equalities(constraints: &[Polynomial]) -> (Vec<Polynomial>, Vec<Polynomial>) {
    let mut used = vec![false; constraints.len()];
    let mut ineq = Vec::new();
    let mut eq = Vec::new();
    for j in 0..constraints.len() {
        if used[j] {
            continue;
        }
        let gj = &constraints[j];
        let scale = gj.max_abs_coeff().max(1.0);
        let partner = (j + 1..constraints.len()).find(|&l| {
            !used[l] && (gj + &constraints[l]).max_abs_coeff() <= 1e-12 * scale
        });
        used[j] = true;
        match partner {
            Some(l) => {
                used[l] = true;
                eq.push(gj.clone());
            }
            None => ineq.push(gj.clone()),
        }
    }
    (ineq, eq)
}

fn monomial_power(n: usize, k: usize, l: u32) -> Monomial {
    let mut e = vec![0; n];
    e[k] = l;
    Monomial::new(e)
}

fn assemble(
    prob: &SemialgebraicProblem,
    objective: &Polynomial,
    parameter: Option<(usize, Marginal)>,
    order: usize,
) -> Result<Relaxation> {
    let n = prob.n;
    if objective.nvars() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: objective.nvars(),
        });
    }
    let required = prob.min_order().max((objective.degree() as usize).div_ceil(2));
    if order < required {
        return Err(Error::OrderTooSmall { order, required });
    }
    if let Some((k, m)) = parameter {
        if k >= n {
            return Err(Error::VariableOutOfRange { index: k, nvars: n });
        }
        if let Marginal::Uniform(iv) = m {
            if !(iv.hi > iv.lo) {
                return Err(Error::DegenerateInterval { lo: iv.lo, hi: iv.hi });
            }
        }
    }

    let full = MonomialOrder::new(n, 2 * order);
    let mut program = ConicProgram::new(full.len(), LinearForm::from_polynomial(objective, &full)?);

    let mut marginal_rows = Vec::new();
    match parameter {
        Some((k, Marginal::Uniform(iv))) => {
            let betas = uniform_moments(iv, 2 * order)?;
            for (l, &b) in betas.iter().enumerate() {
                let r = full.rank(&monomial_power(n, k, l as u32)).expect("within order");
                let row = program.add_equality(LinearForm::single(r, 1.0), b);
                marginal_rows.push((row, l as u32, b));
            }
        }
        Some((k, Marginal::SignPair)) => {
            let row = program.add_equality(LinearForm::single(0, 1.0), 1.0);
            marginal_rows.push((row, 0, 1.0));
            let r = full.rank(&Monomial::var(n, k)).expect("within order");
            let row = program.add_equality(LinearForm::single(r, 1.0), 0.0);
            marginal_rows.push((row, 1, 0.0));
        }
        None => {
            let row = program.add_equality(LinearForm::single(0, 1.0), 1.0);
            marginal_rows.push((row, 0, 1.0));
        }
    }

    let mut constraints = prob.constraints.clone();
    for g in prob.guard_constraints() {
        let dup = constraints
            .iter()
            .any(|h| h.max_coeff_diff(&g).map(|d| d <= 1e-14).unwrap_or(false));
        if !dup {
            constraints.push(g);
        }
    }
    let (ineq, eqs) = pair_equalities(&constraints);

    let mut equalities = Vec::new();
    for g in eqs {
        let d = 2 * (order - half_degree(&g));
        let basis = MonomialOrder::new(n, d);
        let first_row = program.equalities.len();
        for m in basis.basis() {
            let mut term = Polynomial::zero(n);
            term.add_term(m.clone(), 1.0);
            let gm = g.multiply(&term)?;
            program.add_equality(LinearForm::from_polynomial(&gm, &full)?, 0.0);
        }
        equalities.push(EqualityRole {
            constraint: g,
            degree: d,
            first_row,
            count: basis.len(),
        });
    }

    let mut blocks = vec![BlockRole {
        multiplier: Polynomial::constant(n, 1.0),
        half_degree: order,
    }];
    program.add_block(moment_matrix_map(n, order));
    for g in ineq {
        let d = order - half_degree(&g);
        program.add_block(localizing_matrix_map(&g, d));
        blocks.push(BlockRole {
            multiplier: g,
            half_degree: d,
        });
    }

    Ok(Relaxation {
        program,
        n,
        order,
        objective: objective.clone(),
        parameter,
        marginal_rows,
        blocks,
        equalities,
    })
}

/// Relaxation of order `order` with `x_k` (0-based) uniform on `iv`.
pub fn build_parametric(
    prob: &SemialgebraicProblem,
    k: usize,
    iv: Interval,
    order: usize,
) -> Result<Relaxation> {
    assemble(prob, &prob.f, Some((k, Marginal::Uniform(iv))), order)
}

pub fn build_parametric_with(
    prob: &SemialgebraicProblem,
    k: usize,
    marginal: Marginal,
    order: usize,
) -> Result<Relaxation> {
    assemble(prob, &prob.f, Some((k, marginal)), order)
}

/// Standard relaxation: only `z_0 = 1` among the moment equalities.
pub fn build_standard(prob: &SemialgebraicProblem, order: usize) -> Result<Relaxation> {
    assemble(prob, &prob.f, None, order)
}

/// Standard relaxation with a different objective over the same set.
pub fn build_standard_objective(
    prob: &SemialgebraicProblem,
    objective: &Polynomial,
    order: usize,
) -> Result<Relaxation> {
    assemble(prob, objective, None, order)
}

/// Fixes `x_1..x_m = prefix` and builds the parametric relaxation of the
/// reduced problem with its first remaining variable as parameter.
pub fn build_parametric_fixed_prefix(
    prob: &SemialgebraicProblem,
    prefix: &[f64],
    iv: Interval,
    order: usize,
) -> Result<Relaxation> {
    let reduced = prob.fix_prefix(prefix)?;
    build_parametric(&reduced, 0, iv, order)
}

/// Univariate under-estimator `p(y) = sum_l coeffs[l] y^l` of a value function.
#[derive(Debug, Clone, PartialEq)]
pub struct ValuePolynomial {
    pub coord: usize,
    pub coeffs: Vec<f64>,
    pub interval: Interval,
    pub order: usize,
    /// `sum_l coeffs[l] beta_l`, the dual objective.
    pub dual_obj: f64,
}

impl ValuePolynomial {
    pub fn eval(&self, y: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * y + c)
    }

    pub fn degree(&self) -> usize {
        self.coeffs
            .iter()
            .rposition(|c| *c != 0.0)
            .unwrap_or(0)
    }
}

/// Reads the value polynomial off the marginal multipliers.
pub fn extract_value_poly(relax: &Relaxation, sol: &ConicSolution) -> Result<ValuePolynomial> {
    if !accepted(sol) {
        return Err(Error::Solver(format!(
            "cannot extract value polynomial from {} solution",
            sol.status
        )));
    }
    let Some((k, m)) = relax.parameter else {
        return Err(Error::Invalid("relaxation has no parameter coordinate".into()));
    };
    let deg = relax.marginal_rows.iter().map(|r| r.1).max().unwrap_or(0) as usize;
    let mut coeffs = vec![0.0; deg + 1];
    let mut dual_obj = 0.0;
    for &(row, l, beta) in &relax.marginal_rows {
        coeffs[l as usize] = sol.dual_eq[row];
        dual_obj += sol.dual_eq[row] * beta;
    }
    Ok(ValuePolynomial {
        coord: k,
        coeffs,
        interval: m.interval(),
        order: relax.order,
        dual_obj,
    })
}

/// Outcome of solving one relaxation.
#[derive(Debug, Clone)]
pub struct RelaxationResult {
    pub status: Status,
    pub primal_value: f64,
    pub dual_value: f64,
    pub value_poly: Option<ValuePolynomial>,
    pub certificate_residual: f64,
    /// Smallest eigenvalue over the dual Gram blocks.
    pub min_gram_eigenvalue: f64,
    pub solution: ConicSolution,
}

impl RelaxationResult {
    pub fn is_feasible(&self) -> bool {
        !matches!(self.status, Status::Infeasible)
    }
}

/// Tolerance under which a stalled solve is still accepted as optimal.
pub const NEAR_OPTIMAL_TOL: f64 = 1e-6;

fn accepted(sol: &ConicSolution) -> bool {
    sol.is_near_optimal(NEAR_OPTIMAL_TOL)
}

pub fn solve_relaxation(relax: &Relaxation, opts: &SolverOptions) -> Result<RelaxationResult> {
    let sol = conic::solve(&relax.program, opts)?;
    let ok = accepted(&sol);
    let value_poly = if ok && relax.parameter.is_some() {
        Some(extract_value_poly(relax, &sol)?)
    } else {
        None
    };
    let (certificate_residual, min_gram_eigenvalue) = if ok {
        let rep = certificate_residual(relax, &sol)?;
        (rep.0, rep.1)
    } else {
        (f64::NAN, f64::NAN)
    };
    let status = if ok { Status::Optimal } else { sol.status };
    Ok(RelaxationResult {
        status,
        primal_value: sol.primal_obj,
        dual_value: sol.dual_obj,
        value_poly,
        certificate_residual,
        min_gram_eigenvalue,
        solution: sol,
    })
}

/// Builds `sum_{a,b} S_ab m_a m_b` over monomials of degree `<= d`.
pub fn gram_polynomial(n: usize, d: usize, s: &DMatrix<f64>) -> Polynomial {
    let basis = MonomialOrder::new(n, d);
    let mut p = Polynomial::zero(n);
    for (a, ma) in basis.basis().iter().enumerate() {
        for (b, mb) in basis.basis().iter().enumerate() {
            let c = s[(a, b)];
            if c != 0.0 {
                p.add_term(ma.mul(mb), c);
            }
        }
    }
    p
}

/// Checks `f - p - sum_b sigma_b g_b - sum_e h_e g_e = 0` by polynomial
/// arithmetic, where `p` collects the marginal multipliers, `sigma_b` are
/// the Gram polynomials of the dual blocks and `h_e` the multipliers of the
/// equality constraints. Returns the largest coefficient residual and the
/// smallest Gram eigenvalue.
pub fn certificate_residual(relax: &Relaxation, sol: &ConicSolution) -> Result<(f64, f64)> {
    let n = relax.n;
    let mut rest = relax.objective.clone();
    let k = relax.parameter.map(|(k, _)| k).unwrap_or(0);
    for &(row, l, _) in &relax.marginal_rows {
        let mut t = Polynomial::zero(n);
        t.add_term(monomial_power(n, k, l), sol.dual_eq[row]);
        rest = rest.try_sub(&t)?;
    }
    let mut min_eig = f64::INFINITY;
    for (role, s) in relax.blocks.iter().zip(&sol.dual_psd) {
        min_eig = min_eig.min(conic::min_eigenvalue(s));
        let sigma = gram_polynomial(n, role.half_degree, s);
        rest = rest.try_sub(&sigma.multiply(&role.multiplier)?)?;
    }
    for role in &relax.equalities {
        let basis = MonomialOrder::new(n, role.degree);
        let mut h = Polynomial::zero(n);
        for (j, m) in basis.basis().iter().enumerate() {
            h.add_term(m.clone(), sol.dual_eq[role.first_row + j]);
        }
        rest = rest.try_sub(&h.multiply(&role.constraint)?)?;
    }
    Ok((rest.max_abs_coeff(), min_eig))
}
