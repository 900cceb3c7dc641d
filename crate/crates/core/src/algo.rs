//! Coordinate-fixing heuristics built on parametric relaxations.
//!
//! * [`algo1`] treats each coordinate in turn as the parameter of a
//!   relaxation of the original problem and takes the minimizer of the
//!   resulting value polynomial. The output need not be feasible.
//! * [`algo2`] fixes coordinates one after another, substituting the fixed
//!   values and recomputing the parameter interval each time. On convex
//!   sets the output is feasible.
//! * [`maxcut_maxgap`] minimizes `x'Qx` over `{-1, 1}^n`, fixing first the
//!   coordinate whose affine value polynomial has the steepest slope.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::bounds;
use crate::conic::{SolverOptions, Status};
use crate::error::{Error, Result};
use crate::localopt::{self, Refined, RefineOptions};
use crate::moments::Interval;
use crate::poly::{Monomial, Polynomial};
use crate::relax::{
    build_parametric, build_parametric_with, build_standard, solve_relaxation, Marginal,
    RelaxationResult, SemialgebraicProblem,
};
use crate::univar::minimize_on_interval;

/// Parameter intervals narrower than this are not relaxed: the coordinate
/// is set to the midpoint.
pub const DEGENERATE_WIDTH: f64 = 1e-7;

#[derive(Debug, Clone, Copy)]
pub struct AlgoConfig {
    pub order: usize,
    /// Slopes or values within this distance are ties.
    pub tie_tol: f64,
    pub dichotomy_depth: usize,
    /// Smallest subinterval tried, as a fraction of the original width.
    pub dichotomy_min_width: f64,
    pub refine: bool,
    pub solver: SolverOptions,
    pub refine_opts: RefineOptions,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        AlgoConfig {
            order: 1,
            tie_tol: 1e-6,
            dichotomy_depth: 6,
            dichotomy_min_width: 1e-4,
            refine: false,
            solver: SolverOptions::default(),
            refine_opts: RefineOptions::default(),
        }
    }
}

impl AlgoConfig {
    pub fn with_order(order: usize) -> Self {
        AlgoConfig {
            order,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::OrderTooSmall { order: 0, required: 1 });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    JointMarginal1,
    JointMarginal2,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::JointMarginal1 => "jm1",
            Algorithm::JointMarginal2 => "jm2",
        }
    }
}

/// One coordinate fixing.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// 0-based coordinate.
    pub coord: usize,
    /// Interval the value polynomial was minimized on.
    pub interval: Interval,
    /// `None` when the interval was degenerate and no relaxation was solved.
    pub status: Option<Status>,
    pub coeffs: Vec<f64>,
    /// Lower bound on the integral of the value function over `interval`.
    pub dual_obj: f64,
    pub value: f64,
    /// Subintervals tried by dichotomy, in order; empty if not needed.
    pub dichotomy_path: Vec<Interval>,
}

#[derive(Debug, Clone)]
pub struct AlgoTrace {
    pub algorithm: Algorithm,
    pub order: usize,
    pub steps: Vec<StepRecord>,
    pub x: Vec<f64>,
    pub objective: f64,
    pub residual: f64,
    pub refined: Option<Refined>,
    pub refine_error: Option<String>,
}

fn fmt_interval(iv: &Interval) -> String {
    format!("[{:?},{:?}]", iv.lo, iv.hi)
}

impl AlgoTrace {
    /// Line-oriented report: a header, one `step` line per coordinate and a
    /// `result` line (plus `refined` when refinement ran).
    pub fn to_report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "algorithm {} order {}", self.algorithm.name(), self.order);
        for s in &self.steps {
            let status = s.status.map_or("degenerate".to_string(), |st| st.to_string());
            let coeffs: Vec<String> = s.coeffs.iter().map(|c| format!("{c:?}")).collect();
            let path: Vec<String> = s.dichotomy_path.iter().map(fmt_interval).collect();
            let _ = writeln!(
                out,
                "step k={} interval={} status={} coeffs={} x={:?} dichotomy={}",
                s.coord + 1,
                fmt_interval(&s.interval),
                status,
                coeffs.join(";"),
                s.value,
                if path.is_empty() { "-".into() } else { path.join(";") }
            );
        }
        let xs: Vec<String> = self.x.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(
            out,
            "result x={} f={:?} residual={:?}",
            xs.join(";"),
            self.objective,
            self.residual
        );
        if let Some(r) = &self.refined {
            let xs: Vec<String> = r.x.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(
                out,
                "refined x={} f={:?} residual={:?} converged={}",
                xs.join(";"),
                r.value,
                r.residual,
                r.converged
            );
        }
        if let Some(e) = &self.refine_error {
            let _ = writeln!(out, "refined error={e}");
        }
        out
    }
}

/// Outcome of a successful dichotomy search.
#[derive(Debug, Clone)]
pub struct DichotomyOutcome {
    pub interval: Interval,
    pub result: RelaxationResult,
    pub path: Vec<Interval>,
}

fn solve_parametric(
    prob: &SemialgebraicProblem,
    k: usize,
    iv: Interval,
    cfg: &AlgoConfig,
) -> Result<RelaxationResult> {
    let relax = build_parametric(prob, k, iv, cfg.order)?;
    solve_relaxation(&relax, &cfg.solver)
}

/// Depth-first bisection of `iv`, left half first, until a subinterval
/// with an optimal relaxation is found. `iv` itself is tried first.
pub fn dichotomy(
    prob: &SemialgebraicProblem,
    k: usize,
    iv: Interval,
    cfg: &AlgoConfig,
) -> Result<DichotomyOutcome> {
    let min_width = cfg.dichotomy_min_width * iv.width();
    let mut path = Vec::new();
    let mut stack = vec![(iv, 0usize)];
    while let Some((cur, depth)) = stack.pop() {
        path.push(cur);
        let res = solve_parametric(prob, k, cur, cfg)?;
        if res.status == Status::Optimal {
            return Ok(DichotomyOutcome {
                interval: cur,
                result: res,
                path,
            });
        }
        if depth < cfg.dichotomy_depth && cur.width() / 2.0 >= min_width {
            let (left, right) = cur.bisect();
            stack.push((right, depth + 1));
            stack.push((left, depth + 1));
        }
    }
    Err(Error::DichotomyExhausted { coord: k })
}

/// Relaxes coordinate `k` on `iv`, falling back to dichotomy, and minimizes
/// the value polynomial.
fn fix_coordinate(
    prob: &SemialgebraicProblem,
    k: usize,
    iv: Interval,
    cfg: &AlgoConfig,
) -> Result<StepRecord> {
    let first = solve_parametric(prob, k, iv, cfg)?;
    let (interval, res, path) = if first.status == Status::Optimal {
        (iv, first, Vec::new())
    } else {
        let d = dichotomy(prob, k, iv, cfg)?;
        (d.interval, d.result, d.path)
    };
    let vp = res
        .value_poly
        .as_ref()
        .ok_or_else(|| Error::Solver("optimal relaxation without value polynomial".into()))?;
    let m = minimize_on_interval(&vp.coeffs, interval)?;
    Ok(StepRecord {
        coord: k,
        interval,
        status: Some(res.status),
        coeffs: vp.coeffs.clone(),
        dual_obj: vp.dual_obj,
        value: m.argmin,
        dichotomy_path: path,
    })
}

fn finish(
    prob: &SemialgebraicProblem,
    algorithm: Algorithm,
    steps: Vec<StepRecord>,
    cfg: &AlgoConfig,
) -> Result<AlgoTrace> {
    let x: Vec<f64> = steps.iter().map(|s| s.value).collect();
    let objective = prob.objective(&x)?;
    let residual = prob.feasibility_residual(&x)?;
    let (refined, refine_error) = if cfg.refine {
        match localopt::refine(prob, &x, &cfg.refine_opts) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, None)
    };
    Ok(AlgoTrace {
        algorithm,
        order: cfg.order,
        steps,
        x,
        objective,
        residual,
        refined,
        refine_error,
    })
}

/// Each coordinate is the parameter of a relaxation of the original problem
/// on its interval; the coordinate solves are independent.
pub fn algo1(prob: &SemialgebraicProblem, intervals: &[Interval], cfg: &AlgoConfig) -> Result<AlgoTrace> {
    cfg.validate()?;
    if intervals.len() != prob.n {
        return Err(Error::DimensionMismatch {
            expected: prob.n,
            got: intervals.len(),
        });
    }
    let steps = (0..prob.n)
        .into_par_iter()
        .map(|k| fix_coordinate(prob, k, intervals[k], cfg))
        .collect::<Result<Vec<_>>>()?;
    finish(prob, Algorithm::JointMarginal1, steps, cfg)
}

/// Intervals for [`algo1`]: projections of the feasible set.
pub fn global_intervals(prob: &SemialgebraicProblem, order: usize) -> Result<Vec<Interval>> {
    (0..prob.n)
        .into_par_iter()
        .map(|k| bounds::projection(prob, k, order))
        .collect()
}

/// Sequential fixing: `x_k` is chosen on the projection of the slice
/// `{x in K : x_1..x_{k-1} fixed}`.
pub fn algo2(prob: &SemialgebraicProblem, cfg: &AlgoConfig) -> Result<AlgoTrace> {
    cfg.validate()?;
    let mut prefix: Vec<f64> = Vec::with_capacity(prob.n);
    let mut steps = Vec::with_capacity(prob.n);
    for k in 0..prob.n {
        let step_err = |e: Error| -> Error {
            Error::Infeasible(format!(
                "step {} (x{}): {e}; the fixed prefix may have left an empty slice, try jm1",
                k + 1,
                k + 1
            ))
        };
        let reduced = prob.fix_prefix(&prefix).map_err(step_err)?;
        let iv = bounds::projection(&reduced, 0, cfg.order).map_err(step_err)?;
        if iv.width() <= DEGENERATE_WIDTH {
            let v = iv.mid();
            steps.push(StepRecord {
                coord: k,
                interval: iv,
                status: None,
                coeffs: vec![reduced.f.substitute(0, v).map(|p| p.constant_term()).unwrap_or(f64::NAN)],
                dual_obj: f64::NAN,
                value: v,
                dichotomy_path: Vec::new(),
            });
            prefix.push(v);
            continue;
        }
        let mut rec = fix_coordinate(&reduced, 0, iv, cfg).map_err(step_err)?;
        rec.coord = k;
        prefix.push(rec.value);
        steps.push(rec);
    }
    finish(prob, Algorithm::JointMarginal2, steps, cfg)
}

/// A point of `{-1, 1}^n` with its cost `x'Qx`.
#[derive(Debug, Clone, PartialEq)]
pub struct CutVector {
    pub signs: Vec<i8>,
    pub cost: f64,
}

pub fn quadratic_form(q: &DMatrix<f64>, s: &[i8]) -> f64 {
    let n = s.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += q[(i, j)] * f64::from(s[i]) * f64::from(s[j]);
        }
    }
    acc
}

fn check_symmetric(q: &DMatrix<f64>) -> Result<()> {
    if q.nrows() != q.ncols() {
        return Err(Error::DimensionMismatch {
            expected: q.nrows(),
            got: q.ncols(),
        });
    }
    let n = q.nrows();
    for i in 0..n {
        for j in 0..i {
            if (q[(i, j)] - q[(j, i)]).abs() > 1e-12 * (1.0 + q[(i, j)].abs()) {
                return Err(Error::Invalid(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// `min x'Qx` over the free coordinates, the others being fixed to the
/// given signs, with `x_k^2 = 1` written as the pair `x_k^2 - 1 >= 0`,
/// `1 - x_k^2 >= 0`. Returns the problem and the free coordinates.
pub fn maxcut_problem(q: &DMatrix<f64>, fixed: &[Option<i8>]) -> Result<(SemialgebraicProblem, Vec<usize>)> {
    check_symmetric(q)?;
    let n = q.nrows();
    if fixed.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: fixed.len(),
        });
    }
    let free: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
    let m = free.len();
    let pos: Vec<Option<usize>> = (0..n).map(|i| free.iter().position(|&f| f == i)).collect();
    let mut f = Polynomial::zero(m);
    for i in 0..n {
        for j in 0..n {
            let c = q[(i, j)];
            if c == 0.0 {
                continue;
            }
            let mut e = vec![0u32; m];
            let mut coef = c;
            for idx in [i, j] {
                match (fixed[idx], pos[idx]) {
                    (Some(s), _) => coef *= f64::from(s),
                    (None, Some(p)) => e[p] += 1,
                    (None, None) => unreachable!("free index has a position"),
                }
            }
            f.add_term(Monomial::new(e), coef);
        }
    }
    let mut cons = Vec::with_capacity(2 * m);
    for p in 0..m {
        let mut e = vec![0u32; m];
        e[p] = 2;
        let mut g = Polynomial::constant(m, -1.0);
        g.add_term(Monomial::new(e), 1.0);
        cons.push(-&g);
        cons.push(g);
    }
    Ok((SemialgebraicProblem::new(f, cons)?, free))
}

/// Order-1 standard relaxation value of `min x'Qx` on `{-1,1}^n`.
pub fn shor_bound(q: &DMatrix<f64>, solver: &SolverOptions) -> Result<f64> {
    let n = q.nrows();
    let (prob, _) = maxcut_problem(q, &vec![None; n])?;
    let relax = build_standard(&prob, 1)?;
    let res = solve_relaxation(&relax, solver)?;
    if res.status != Status::Optimal {
        return Err(Error::Solver(format!("Shor relaxation ended with status {}", res.status)));
    }
    Ok(res.primal_value)
}

/// Slopes computed for one free coordinate in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeRecord {
    pub coord: usize,
    pub lambda0: f64,
    pub lambda1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxcutRound {
    pub slopes: Vec<SlopeRecord>,
    pub chosen: usize,
    pub sign: i8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxcutTrace {
    pub cut: CutVector,
    pub rounds: Vec<MaxcutRound>,
}

impl MaxcutTrace {
    pub fn to_report(&self) -> String {
        let mut out = String::new();
        for (r, round) in self.rounds.iter().enumerate() {
            let slopes: Vec<String> = round
                .slopes
                .iter()
                .map(|s| format!("{}:{:?}", s.coord + 1, s.lambda1))
                .collect();
            let _ = writeln!(
                out,
                "round {} chosen={} sign={} slopes={}",
                r + 1,
                round.chosen + 1,
                round.sign,
                slopes.join(";")
            );
        }
        let signs: Vec<String> = self.cut.signs.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(out, "result signs={} cost={:?}", signs.join(";"), self.cut.cost);
        out
    }
}

fn coordinate_slope(prob: &SemialgebraicProblem, local: usize, cfg: &AlgoConfig) -> Result<(f64, f64)> {
    let relax = build_parametric_with(prob, local, Marginal::SignPair, cfg.order)?;
    let attempt = |opts: &SolverOptions| -> Result<Option<(f64, f64)>> {
        let res = solve_relaxation(&relax, opts)?;
        Ok(res.value_poly.map(|vp| (vp.coeffs[0], vp.coeffs[1])))
    };
    if let Some(v) = attempt(&cfg.solver)? {
        return Ok(v);
    }
    let relaxed = SolverOptions {
        tol: cfg.solver.tol.max(1e-6),
        max_iter: cfg.solver.max_iter * 2,
        ..cfg.solver
    };
    attempt(&relaxed)?.ok_or_else(|| Error::Solver("max-gap relaxation failed after retry".into()))
}

/// Max-gap rounding for `min x'Qx` over `{-1, 1}^n`.
pub fn maxcut_maxgap(q: &DMatrix<f64>, cfg: &AlgoConfig) -> Result<MaxcutTrace> {
    cfg.validate()?;
    check_symmetric(q)?;
    let n = q.nrows();
    let mut fixed: Vec<Option<i8>> = vec![None; n];
    let mut rounds = Vec::with_capacity(n);
    for _ in 0..n {
        let (prob, free) = maxcut_problem(q, &fixed)?;
        let slopes = (0..free.len())
            .into_par_iter()
            .map(|local| {
                coordinate_slope(&prob, local, cfg).map(|(l0, l1)| SlopeRecord {
                    coord: free[local],
                    lambda0: l0,
                    lambda1: l1,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let best = slopes.iter().map(|s| s.lambda1.abs()).fold(0.0, f64::max);
        let pick = slopes
            .iter()
            .find(|s| s.lambda1.abs() >= best - cfg.tie_tol)
            .expect("at least one free coordinate");
        let sign = if pick.lambda1 > cfg.tie_tol { -1 } else { 1 };
        fixed[pick.coord] = Some(sign);
        rounds.push(MaxcutRound {
            chosen: pick.coord,
            sign,
            slopes,
        });
    }
    let signs: Vec<i8> = fixed.into_iter().map(|s| s.expect("all fixed")).collect();
    let cost = quadratic_form(q, &signs);
    Ok(MaxcutTrace {
        cut: CutVector { signs, cost },
        rounds,
    })
}
