//! Test problems, oracles, instance generators and report tables.
//!
//! # Problem files
//!
//! Line-oriented text; `#` starts a comment.
//!
//! ```text
//! nvars 2
//! name disk
//! objective
//! 1 0 1            # coefficient, then one exponent per variable: x2
//! constraint       # 1 - x1^2 - x2^2 >= 0
//! 1 0 0
//! -1 2 0
//! -1 0 2
//! bounds 1 -1 1    # -1 <= x1 <= 1 (1-based variable index)
//! optimum -1
//! minimizer 0 -1
//! ```
//!
//! Bound lines are recorded as metadata and also added as affine
//! constraints, after the explicit ones.
//!
//! # Random instances
//!
//! Both generators draw from SplitMix64 seeded with the given seed. A
//! uniform draw in `[0, 1)` is `(next_u64() >> 11) * 2^-53`. For MAXCUT,
//! edges `{i, j}`, `i < j`, are visited in row-major order and each is
//! present when its draw is below the density.

use std::io::Write;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use nalgebra::{DMatrix, DVector};
use rand_xoshiro::rand_core::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use rayon::prelude::*;

use crate::algo::{maxcut_maxgap, quadratic_form, shor_bound, AlgoConfig, AlgoTrace};
use crate::bounds;
use crate::conic::{SolverOptions, Status};
use crate::error::{Error, Result};
use crate::localopt::{self, RefineOptions};
use crate::moments::Interval;
use crate::poly::{Monomial, Polynomial};
use crate::relax::{build_parametric, solve_relaxation, SemialgebraicProblem, CONSTANT_FEAS_TOL};

/// Parsed problem file.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemFile {
    pub name: String,
    pub problem: SemialgebraicProblem,
    pub optimum: Option<f64>,
    pub minimizer: Option<Vec<f64>>,
}

enum Section {
    None,
    Objective,
    Constraint,
}

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| perr(line, format!("invalid number '{tok}'")))
}

pub fn parse_problem(text: &str) -> Result<ProblemFile> {
    let mut nvars: Option<usize> = None;
    let mut name = String::from("unnamed");
    let mut objective: Option<Vec<(f64, Vec<u32>)>> = None;
    let mut constraints: Vec<Vec<(f64, Vec<u32>)>> = Vec::new();
    let mut bounds: Vec<Option<Interval>> = Vec::new();
    let mut optimum = None;
    let mut minimizer = None;
    let mut section = Section::None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        let need_n = || nvars.ok_or_else(|| perr(line, "'nvars' must come first"));
        match toks[0] {
            "nvars" => {
                if nvars.is_some() {
                    return Err(perr(line, "'nvars' given twice"));
                }
                let n = toks
                    .get(1)
                    .and_then(|t| t.parse::<usize>().ok())
                    .filter(|&n| n > 0 && toks.len() == 2)
                    .ok_or_else(|| perr(line, "expected 'nvars N' with N >= 1"))?;
                nvars = Some(n);
                bounds = vec![None; n];
            }
            "name" => {
                name = content["name".len()..].trim().to_string();
            }
            "objective" => {
                need_n()?;
                if objective.is_some() {
                    return Err(perr(line, "objective given twice"));
                }
                objective = Some(Vec::new());
                section = Section::Objective;
            }
            "constraint" => {
                need_n()?;
                constraints.push(Vec::new());
                section = Section::Constraint;
            }
            "bounds" => {
                let n = need_n()?;
                if toks.len() != 4 {
                    return Err(perr(line, "expected 'bounds j lo hi'"));
                }
                let j = toks[1]
                    .parse::<usize>()
                    .ok()
                    .filter(|&j| j >= 1 && j <= n)
                    .ok_or_else(|| perr(line, format!("variable index must be in 1..={n}")))?;
                let lo = parse_f64(toks[2], line)?;
                let hi = parse_f64(toks[3], line)?;
                if !(hi > lo) {
                    return Err(perr(line, "bounds need lo < hi"));
                }
                bounds[j - 1] = Some(Interval::new(lo, hi));
                section = Section::None;
            }
            "optimum" => {
                if toks.len() != 2 {
                    return Err(perr(line, "expected 'optimum VALUE'"));
                }
                optimum = Some(parse_f64(toks[1], line)?);
                section = Section::None;
            }
            "minimizer" => {
                let n = need_n()?;
                if toks.len() != n + 1 {
                    return Err(perr(line, format!("minimizer needs {n} values")));
                }
                minimizer = Some(
                    toks[1..]
                        .iter()
                        .map(|t| parse_f64(t, line))
                        .collect::<Result<Vec<_>>>()?,
                );
                section = Section::None;
            }
            first => {
                let n = need_n()?;
                if first.parse::<f64>().is_err() {
                    return Err(perr(line, format!("unknown keyword '{first}'")));
                }
                if toks.len() != n + 1 {
                    return Err(perr(
                        line,
                        format!("term needs a coefficient and {n} exponents, got {} tokens", toks.len()),
                    ));
                }
                let c = parse_f64(toks[0], line)?;
                let e = toks[1..]
                    .iter()
                    .map(|t| t.parse::<u32>().map_err(|_| perr(line, format!("invalid exponent '{t}'"))))
                    .collect::<Result<Vec<_>>>()?;
                match section {
                    Section::Objective => objective.as_mut().expect("section open").push((c, e)),
                    Section::Constraint => constraints.last_mut().expect("section open").push((c, e)),
                    Section::None => return Err(perr(line, "term outside 'objective' or 'constraint'")),
                }
            }
        }
    }

    let n = nvars.ok_or_else(|| perr(0, "missing 'nvars'"))?;
    let objective = objective.ok_or_else(|| perr(0, "missing 'objective'"))?;
    let f = Polynomial::from_terms(n, objective)?;
    let mut cons = Vec::with_capacity(constraints.len());
    for terms in constraints {
        let g = Polynomial::from_terms(n, terms)?;
        if !g.is_zero() {
            cons.push(g);
        }
    }
    let mut problem = SemialgebraicProblem::new(f, cons)?;
    if bounds.iter().all(Option::is_some) {
        problem = problem.with_box_constraints(bounds.into_iter().flatten().collect())?;
    } else {
        for (j, b) in bounds.iter().enumerate() {
            if let Some(b) = b {
                let mut lo = Polynomial::var(n, j);
                lo.add_term(Monomial::one(n), -b.lo);
                let mut hi = Polynomial::var(n, j).scale(-1.0);
                hi.add_term(Monomial::one(n), b.hi);
                problem.constraints.push(lo);
                problem.constraints.push(hi);
            }
        }
    }
    Ok(ProblemFile {
        name,
        problem,
        optimum,
        minimizer,
    })
}

/// `x_j = center_j + radius_j * u_j`
#[derive(Debug, Clone, PartialEq)]
pub struct BoxMap {
    pub center: Vec<f64>,
    pub radius: Vec<f64>,
}

impl BoxMap {
    pub fn to_original(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.center.iter().zip(&self.radius))
            .map(|(u, (c, r))| c + r * u)
            .collect()
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.center.iter().zip(&self.radius))
            .map(|(x, (c, r))| (x - c) / r)
            .collect()
    }
}

/// Maps every variable's bounds onto `[-1, 1]`.
pub fn rescale_to_unit_box(prob: &SemialgebraicProblem) -> Result<(SemialgebraicProblem, BoxMap)> {
    let b = prob
        .bounds
        .as_ref()
        .ok_or_else(|| Error::Invalid("rescaling needs bounds for every variable".into()))?;
    let center: Vec<f64> = b.iter().map(Interval::mid).collect();
    let radius: Vec<f64> = b.iter().map(|iv| 0.5 * iv.width()).collect();
    let f = prob.f.affine_change(&center, &radius)?;
    let constraints = prob
        .constraints
        .iter()
        .map(|g| g.affine_change(&center, &radius))
        .collect::<Result<Vec<_>>>()?;
    let out = SemialgebraicProblem::new(f, constraints)?.with_bounds(vec![Interval::new(-1.0, 1.0); prob.n])?;
    Ok((out, BoxMap { center, radius }))
}

fn uniform01(rng: &mut SplitMix64) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn uniform(rng: &mut SplitMix64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform01(rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxcutInstance {
    pub n: usize,
    pub q: DMatrix<f64>,
    pub seed: u64,
}

impl MaxcutInstance {
    pub fn edge_count(&self) -> usize {
        let mut c = 0;
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.q[(i, j)] != 0.0 {
                    c += 1;
                }
            }
        }
        c
    }
}

/// Erdos-Renyi graph with unit weights.
pub fn gen_maxcut(n: usize, density: f64, seed: u64) -> Result<MaxcutInstance> {
    if n < 2 {
        return Err(Error::Invalid("MAXCUT instances need at least 2 nodes".into()));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::Invalid(format!("density {density} not in (0, 1]")));
    }
    let mut rng = SplitMix64::seed_from_u64(seed);
    let mut q = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            if uniform01(&mut rng) < density {
                q[(i, j)] = 1.0;
                q[(j, i)] = 1.0;
            }
        }
    }
    Ok(MaxcutInstance { n, q, seed })
}

pub const BRUTE_FORCE_MAX_N: usize = 22;

/// Exhaustive `min x'Qx` over `{-1, 1}^n` with `x_n = 1`, in Gray-code order.
/// Among ties the first vector visited is returned.
pub fn brute_force_maxcut(q: &DMatrix<f64>) -> Result<(f64, Vec<i8>)> {
    let n = q.nrows();
    if n == 0 || n > BRUTE_FORCE_MAX_N || q.ncols() != n {
        return Err(Error::Invalid(format!(
            "brute force needs a square matrix with 1..={BRUTE_FORCE_MAX_N} rows"
        )));
    }
    let mut s = vec![1i8; n];
    // h_i = sum_j Q_ij s_j
    let mut h: Vec<f64> = (0..n).map(|i| q.row(i).sum()).collect();
    let mut cost = quadratic_form(q, &s);
    let mut best = (cost, s.clone());
    for step in 1u64..(1u64 << (n - 1)) {
        let i = step.trailing_zeros() as usize;
        let si = f64::from(s[i]);
        cost += -4.0 * si * (h[i] - q[(i, i)] * si);
        for (j, hj) in h.iter_mut().enumerate() {
            *hj -= 2.0 * q[(j, i)] * si;
        }
        s[i] = -s[i];
        if cost < best.0 {
            best = (cost, s.clone());
        }
    }
    // Recompute exactly to shed accumulated rounding.
    let exact = quadratic_form(q, &best.1);
    Ok((exact, best.1))
}

/// Concave quadratic over a polytope inside `[-1, 1]^n`, with its optimum
/// found by vertex enumeration.
#[derive(Debug, Clone)]
pub struct ConcaveQp {
    pub problem: SemialgebraicProblem,
    pub optimum: f64,
    pub minimizer: Vec<f64>,
    pub seed: u64,
}

/// `min -x'Px + c'x` over the box `[-1,1]^n` cut by `cuts` random
/// halfspaces `a'x <= b` containing the origin.
pub fn gen_concave_qp(n: usize, cuts: usize, seed: u64) -> Result<ConcaveQp> {
    if n == 0 || n > 8 {
        return Err(Error::Invalid("concave QP generator supports 1..=8 variables".into()));
    }
    let mut rng = SplitMix64::seed_from_u64(seed);
    let b = DMatrix::from_fn(n, n, |_, _| uniform(&mut rng, -1.0, 1.0));
    let p = b.transpose() * &b / n as f64 + DMatrix::identity(n, n) * 0.2;
    let c: Vec<f64> = (0..n).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();

    let mut f = Polynomial::zero(n);
    for i in 0..n {
        for j in 0..n {
            let mut e = vec![0u32; n];
            e[i] += 1;
            e[j] += 1;
            f.add_term(Monomial::new(e), -p[(i, j)]);
        }
        f.add_term(Monomial::var(n, i), c[i]);
    }

    // Rows (a, b) of a x <= b.
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut cons = Vec::new();
    for _ in 0..cuts {
        let a: Vec<f64> = (0..n).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
        let l1: f64 = a.iter().map(|v| v.abs()).sum();
        let rhs = uniform(&mut rng, 0.3, 0.8) * l1;
        let mut g = Polynomial::constant(n, rhs);
        for (j, &aj) in a.iter().enumerate() {
            g.add_term(Monomial::var(n, j), -aj);
        }
        cons.push(g);
        rows.push((a, rhs));
    }
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        rows.push((e.clone(), 1.0));
        e[j] = -1.0;
        rows.push((e, 1.0));
    }
    let problem = SemialgebraicProblem::new(f, cons)?.with_box_constraints(vec![Interval::new(-1.0, 1.0); n])?;
    let (optimum, minimizer) = vertex_minimum(&problem, &rows)?;
    Ok(ConcaveQp {
        problem,
        optimum,
        minimizer,
        seed,
    })
}

/// Minimum of the objective over the vertices of `{x : a_r x <= b_r}`.
pub fn vertex_minimum(prob: &SemialgebraicProblem, rows: &[(Vec<f64>, f64)]) -> Result<(f64, Vec<f64>)> {
    let n = prob.n;
    let m = rows.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut idx: Vec<usize> = (0..n).collect();
    if m < n {
        return Err(Error::Invalid("fewer constraints than variables".into()));
    }
    loop {
        let a = DMatrix::from_fn(n, n, |r, c| rows[idx[r]].0[c]);
        let rhs = DVector::from_iterator(n, idx.iter().map(|&r| rows[r].1));
        if let Some(x) = a.lu().solve(&rhs) {
            let feasible = rows.iter().all(|(ar, br)| {
                let lhs: f64 = ar.iter().zip(x.iter()).map(|(u, v)| u * v).sum();
                lhs <= br + 1e-9
            });
            if feasible && x.iter().all(|v| v.is_finite()) {
                let xv: Vec<f64> = x.iter().copied().collect();
                let val = prob.objective(&xv)?;
                if best.as_ref().is_none_or(|(b, _)| val < *b) {
                    best = Some((val, xv));
                }
            }
        }
        // Next n-subset in lexicographic order.
        let mut i = n;
        loop {
            if i == 0 {
                return best.ok_or_else(|| Error::Infeasible("polytope has no vertex".into()));
            }
            i -= 1;
            if idx[i] < m - n + i {
                idx[i] += 1;
                for j in i + 1..n {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Named problem with whatever is known about it in closed form.
#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub problem: SemialgebraicProblem,
    pub optimum: f64,
    pub minimizer: Vec<f64>,
    /// `J^k(y)` for 0-based `k`, `+inf` where the slice is empty.
    pub value_function: fn(usize, f64) -> f64,
    /// Interval of each coordinate over the feasible set.
    pub intervals: Vec<Interval>,
}

fn poly(n: usize, t: &[(f64, &[u32])]) -> Polynomial {
    Polynomial::from_terms(n, t.iter().map(|(c, e)| (*c, e.to_vec()))).expect("catalog term lengths match")
}

fn unit_disk() -> CatalogEntry {
    CatalogEntry {
        name: "unit_disk",
        problem: SemialgebraicProblem::new(
            poly(2, &[(1.0, &[0, 1])]),
            vec![poly(2, &[(1.0, &[0, 0]), (-1.0, &[2, 0]), (-1.0, &[0, 2])])],
        )
        .expect("valid"),
        optimum: -1.0,
        minimizer: vec![0.0, -1.0],
        value_function: |k, y| {
            if k == 0 {
                -(1.0 - y * y).max(0.0).sqrt()
            } else {
                y
            }
        },
        intervals: vec![Interval::new(-1.0, 1.0); 2],
    }
}

fn boxed(name: &'static str, f: Polynomial, optimum: f64, minimizer: Vec<f64>, vf: fn(usize, f64) -> f64) -> CatalogEntry {
    let n = f.nvars();
    CatalogEntry {
        name,
        problem: SemialgebraicProblem::new(f, vec![])
            .expect("valid")
            .with_box_constraints(vec![Interval::new(0.0, 1.0); n])
            .expect("valid"),
        optimum,
        minimizer,
        value_function: vf,
        intervals: vec![Interval::new(0.0, 1.0); n],
    }
}

/// Small problems with analytic optima and value functions.
pub fn catalog() -> Vec<CatalogEntry> {
    vec![
        unit_disk(),
        boxed(
            "box_sum_squares",
            poly(2, &[(1.0, &[2, 0]), (1.0, &[0, 2])]),
            0.0,
            vec![0.0, 0.0],
            |_, y| y * y,
        ),
        boxed(
            "box_concave",
            poly(2, &[(-1.0, &[2, 0]), (-1.0, &[0, 2])]),
            -2.0,
            vec![1.0, 1.0],
            |_, y| -y * y - 1.0,
        ),
        boxed(
            "parameter_only",
            poly(2, &[(1.0, &[1, 0])]),
            0.0,
            vec![0.0, 0.0],
            |k, y| if k == 0 { y } else { 0.0 },
        ),
        boxed(
            "shifted_square",
            poly(1, &[(1.0, &[2]), (-0.6, &[1]), (0.09, &[0])]),
            0.0,
            vec![0.3],
            |_, y| (y - 0.3) * (y - 0.3),
        ),
        CatalogEntry {
            name: "ball_sum",
            problem: SemialgebraicProblem::new(
                poly(3, &[(1.0, &[1, 0, 0]), (1.0, &[0, 1, 0]), (1.0, &[0, 0, 1])]),
                vec![poly(
                    3,
                    &[(1.0, &[0, 0, 0]), (-1.0, &[2, 0, 0]), (-1.0, &[0, 2, 0]), (-1.0, &[0, 0, 2])],
                )],
            )
            .expect("valid"),
            optimum: -3f64.sqrt(),
            minimizer: vec![-1.0 / 3f64.sqrt(); 3],
            value_function: |_, y| y - (2.0 * (1.0 - y * y).max(0.0)).sqrt(),
            intervals: vec![Interval::new(-1.0, 1.0); 3],
        },
        CatalogEntry {
            name: "split_strip",
            problem: SemialgebraicProblem::new(
                poly(2, &[(1.0, &[1, 0])]),
                vec![poly(2, &[(1.0, &[2, 0]), (-0.25, &[0, 0])])],
            )
            .expect("valid")
            .with_box_constraints(vec![Interval::new(-1.0, 1.0); 2])
            .expect("valid"),
            optimum: -1.0,
            minimizer: vec![-1.0, -1.0],
            value_function: |k, y| {
                if k == 0 {
                    if y * y >= 0.25 {
                        y
                    } else {
                        f64::INFINITY
                    }
                } else {
                    -1.0
                }
            },
            intervals: vec![Interval::new(-1.0, 1.0); 2],
        },
    ]
}

pub fn catalog_entry(name: &str) -> Option<CatalogEntry> {
    catalog().into_iter().find(|e| e.name == name)
}

/// Outer box for the search of [`brute_force_value_at`]: the bounds when
/// known, otherwise projection intervals.
pub fn search_box(prob: &SemialgebraicProblem) -> Result<Vec<Interval>> {
    if let Some(b) = &prob.bounds {
        return Ok(b.clone());
    }
    (0..prob.n)
        .map(|k| bounds::projection(prob, k, prob.min_order()))
        .collect()
}

fn slice(prob: &SemialgebraicProblem, k: usize, y: f64, boxes: &[Interval]) -> Result<Option<SemialgebraicProblem>> {
    let f = prob.f.substitute(k, y)?;
    let mut cons = Vec::with_capacity(prob.constraints.len());
    for g in &prob.constraints {
        let h = g.substitute(k, y)?;
        if h.is_constant() {
            if h.constant_term() < CONSTANT_FEAS_TOL {
                return Ok(None);
            }
            continue;
        }
        cons.push(h);
    }
    let mut rest = boxes.to_vec();
    rest.remove(k);
    let sub = SemialgebraicProblem::new(f, cons)?;
    Ok(Some(if rest.is_empty() { sub } else { sub.with_bounds(rest)? }))
}

fn lattice(boxes: &[Interval], per_axis: usize) -> Vec<Vec<f64>> {
    let mut pts = vec![Vec::new()];
    for iv in boxes {
        let mut next = Vec::with_capacity(pts.len() * per_axis);
        for p in &pts {
            for t in 0..per_axis {
                let mut q = p.clone();
                q.push(iv.lo + iv.width() * t as f64 / (per_axis - 1) as f64);
                next.push(q);
            }
        }
        pts = next;
    }
    pts
}

/// Feasibility threshold of oracle points, tighter than the local optimizer's
/// so that the oracle does not undercut the true value function.
pub const ORACLE_FEAS_TOL: f64 = 1e-9;

fn value_on_slice(sub: &SemialgebraicProblem) -> Result<f64> {
    if sub.n == 0 {
        return Ok(f64::INFINITY);
    }
    let boxes = sub.bounds.clone().expect("slices carry bounds");
    let per_axis = ((3000f64).powf(1.0 / sub.n as f64).floor() as usize).clamp(3, 201);
    let mut feasible: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut infeasible: Vec<(f64, Vec<f64>)> = Vec::new();
    for p in lattice(&boxes, per_axis) {
        let r = sub.feasibility_residual(&p)?;
        if r <= ORACLE_FEAS_TOL {
            feasible.push((sub.objective(&p)?, p));
        } else {
            infeasible.push((r, p));
        }
    }
    feasible.sort_by(|a, b| a.0.total_cmp(&b.0));
    infeasible.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = feasible.first().map_or(f64::INFINITY, |b| b.0);
    let starts = feasible.iter().take(4).chain(infeasible.iter().take(2));
    let opts = RefineOptions::default();
    for (_, x0) in starts {
        if let Ok(r) = localopt::refine(sub, x0, &opts) {
            if r.residual <= ORACLE_FEAS_TOL {
                best = best.min(r.value);
            }
        }
    }
    Ok(best)
}

/// `J^k(y_j)` for each `y_j`, by lattice scan plus multistart local
/// refinement on each slice; `+inf` where no feasible point is found.
pub fn brute_force_value_at(prob: &SemialgebraicProblem, k: usize, ys: &[f64]) -> Result<Vec<f64>> {
    if k >= prob.n {
        return Err(Error::VariableOutOfRange { index: k, nvars: prob.n });
    }
    let boxes = search_box(prob)?;
    ys.par_iter()
        .map(|&y| {
            let Some(sub) = slice(prob, k, y, &boxes)? else {
                return Ok(f64::INFINITY);
            };
            if sub.n == 0 {
                return if sub.constraints.is_empty() {
                    Ok(sub.f.constant_term())
                } else {
                    Ok(f64::INFINITY)
                };
            }
            value_on_slice(&sub)
        })
        .collect()
}

/// [`brute_force_value_at`] on `grid_points` equally spaced points of `iv`.
pub fn brute_force_value_function(
    prob: &SemialgebraicProblem,
    k: usize,
    iv: Interval,
    grid_points: usize,
) -> Result<Vec<(f64, f64)>> {
    let ys = uniform_grid(iv, grid_points.max(2));
    let js = brute_force_value_at(prob, k, &ys)?;
    Ok(ys.into_iter().zip(js).collect())
}

pub fn uniform_grid(iv: Interval, points: usize) -> Vec<f64> {
    (0..points)
        .map(|j| iv.lo + iv.width() * j as f64 / (points - 1) as f64)
        .collect()
}

/// Gauss-Legendre nodes on `iv` with weights summing to one.
pub fn probability_nodes(iv: Interval, points: usize) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(NonZeroUsize::new(points.max(1)).expect("nonzero"));
    rule.iter()
        .map(|(x, w)| (iv.mid() + 0.5 * iv.width() * x, 0.5 * w))
        .collect()
}

/// One row per relaxation order.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunctionRow {
    pub order: usize,
    pub status: Status,
    pub rho: f64,
    pub rho_star: f64,
    pub coeffs: Vec<f64>,
    /// Quadrature of `|J - p_i|` under the uniform distribution.
    pub l1_error: f64,
    /// Same for the running maximum of `p_1..p_i`.
    pub l1_error_running_max: f64,
    /// `max (p_i - J)` over the nodes; positive values violate the bound.
    pub max_violation: f64,
    /// Largest coefficient of the dual identity residual.
    pub certificate_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunctionReport {
    pub coord: usize,
    pub interval: Interval,
    /// Quadrature of `J` itself.
    pub oracle_mean: f64,
    pub nodes: Vec<(f64, f64)>,
    pub oracle: Vec<f64>,
    pub rows: Vec<ValueFunctionRow>,
}

pub fn report_value_function(
    prob: &SemialgebraicProblem,
    k: usize,
    iv: Interval,
    orders: &[usize],
    points: usize,
    solver: &SolverOptions,
) -> Result<ValueFunctionReport> {
    let nodes = probability_nodes(iv, points);
    let ys: Vec<f64> = nodes.iter().map(|n| n.0).collect();
    let oracle = brute_force_value_at(prob, k, &ys)?;
    let oracle_mean = nodes.iter().zip(&oracle).map(|((_, w), j)| w * j).sum();
    let mut running = vec![f64::NEG_INFINITY; nodes.len()];
    let mut rows = Vec::with_capacity(orders.len());
    for &i in orders {
        let relax = build_parametric(prob, k, iv, i)?;
        let res = solve_relaxation(&relax, solver)?;
        let Some(vp) = res.value_poly else {
            rows.push(ValueFunctionRow {
                order: i,
                status: res.status,
                rho: res.primal_value,
                rho_star: res.dual_value,
                coeffs: Vec::new(),
                l1_error: f64::NAN,
                l1_error_running_max: f64::NAN,
                max_violation: f64::NAN,
                certificate_residual: res.certificate_residual,
            });
            continue;
        };
        let mut l1 = 0.0;
        let mut l1_run = 0.0;
        let mut viol = f64::NEG_INFINITY;
        for (j, (&(y, w), &jv)) in nodes.iter().zip(&oracle).enumerate() {
            let pv = vp.eval(y);
            running[j] = running[j].max(pv);
            l1 += w * (jv - pv).abs();
            l1_run += w * (jv - running[j]).abs();
            viol = viol.max(pv - jv);
        }
        rows.push(ValueFunctionRow {
            order: i,
            status: res.status,
            rho: res.primal_value,
            rho_star: vp.dual_obj,
            coeffs: vp.coeffs,
            l1_error: l1,
            l1_error_running_max: l1_run,
            max_violation: viol,
            certificate_residual: res.certificate_residual,
        });
    }
    Ok(ValueFunctionReport {
        coord: k,
        interval: iv,
        oracle_mean,
        nodes,
        oracle,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxcutRow {
    pub index: usize,
    pub seed: u64,
    pub n: usize,
    pub edges: usize,
    pub shor_bound: f64,
    pub maxgap_cost: f64,
    pub optimum: Option<f64>,
}

fn rel(a: f64, b: f64) -> f64 {
    if b.abs() < 1e-12 {
        if (a - b).abs() < 1e-9 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (a - b) / b.abs()
    }
}

impl MaxcutRow {
    /// `(rho - f1) / |f1|`
    pub fn rel_gap_shor(&self) -> f64 {
        rel(self.maxgap_cost, self.shor_bound)
    }

    /// `(rho - opt) / |opt|`
    pub fn rel_gap_opt(&self) -> Option<f64> {
        self.optimum.map(|o| rel(self.maxgap_cost, o))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxcutBatch {
    pub rows: Vec<MaxcutRow>,
}

impl MaxcutBatch {
    pub fn mean_rel_gap_shor(&self) -> f64 {
        self.rows.iter().map(MaxcutRow::rel_gap_shor).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_rel_gap_opt(&self) -> Option<f64> {
        let v: Option<Vec<f64>> = self.rows.iter().map(MaxcutRow::rel_gap_opt).collect();
        v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Runs the max-gap heuristic on one instance, with its Shor bound and, for
/// small `n`, the exact optimum.
pub fn run_maxcut_instance(inst: &MaxcutInstance, index: usize, cfg: &AlgoConfig) -> Result<MaxcutRow> {
    let shor = shor_bound(&inst.q, &cfg.solver)?;
    let trace = maxcut_maxgap(&inst.q, cfg)?;
    let optimum = if inst.n <= BRUTE_FORCE_MAX_N {
        Some(brute_force_maxcut(&inst.q)?.0)
    } else {
        None
    };
    Ok(MaxcutRow {
        index,
        seed: inst.seed,
        n: inst.n,
        edges: inst.edge_count(),
        shor_bound: shor,
        maxgap_cost: trace.cut.cost,
        optimum,
    })
}

/// Instances use seeds `base_seed, base_seed + 1, ...`.
pub fn report_maxcut_batch(
    n: usize,
    count: usize,
    density: f64,
    base_seed: u64,
    cfg: &AlgoConfig,
) -> Result<MaxcutBatch> {
    let rows = (0..count)
        .into_par_iter()
        .map(|i| {
            let inst = gen_maxcut(n, density, base_seed.wrapping_add(i as u64))?;
            run_maxcut_instance(&inst, i, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MaxcutBatch { rows })
}

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::Invalid(format!("CSV output failed: {e}"))
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

/// Columns: `order,status,rho,rho_star,l1_error,l1_error_running_max,max_violation,certificate_residual,coeffs`
/// (coefficients `;`-separated, constant first).
pub fn write_value_function_csv<W: Write>(rep: &ValueFunctionReport, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "order",
        "status",
        "rho",
        "rho_star",
        "l1_error",
        "l1_error_running_max",
        "max_violation",
        "certificate_residual",
        "coeffs",
    ])
    .map_err(csv_err)?;
    for r in &rep.rows {
        let coeffs: Vec<String> = r.coeffs.iter().map(|c| num(*c)).collect();
        wr.write_record([
            r.order.to_string(),
            r.status.to_string(),
            num(r.rho),
            num(r.rho_star),
            num(r.l1_error),
            num(r.l1_error_running_max),
            num(r.max_violation),
            num(r.certificate_residual),
            coeffs.join(";"),
        ])
        .map_err(csv_err)?;
    }
    wr.flush().map_err(csv_err)
}

/// Columns: `index,seed,n,edges,shor_bound,maxgap_cost,optimum,rel_gap_shor,rel_gap_opt`
/// (empty optimum fields when brute force was skipped).
pub fn write_maxcut_csv<W: Write>(batch: &MaxcutBatch, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "index",
        "seed",
        "n",
        "edges",
        "shor_bound",
        "maxgap_cost",
        "optimum",
        "rel_gap_shor",
        "rel_gap_opt",
    ])
    .map_err(csv_err)?;
    for r in &batch.rows {
        wr.write_record([
            r.index.to_string(),
            r.seed.to_string(),
            r.n.to_string(),
            r.edges.to_string(),
            num(r.shor_bound),
            num(r.maxgap_cost),
            r.optimum.map(num).unwrap_or_default(),
            num(r.rel_gap_shor()),
            r.rel_gap_opt().map(num).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    wr.flush().map_err(csv_err)
}

/// Columns: `step,coord,lo,hi,status,x,coeffs,dichotomy_attempts`; `coord`
/// is 1-based and `status` is `degenerate` for skipped relaxations.
pub fn write_trace_csv<W: Write>(trace: &AlgoTrace, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["step", "coord", "lo", "hi", "status", "x", "coeffs", "dichotomy_attempts"])
        .map_err(csv_err)?;
    for (i, s) in trace.steps.iter().enumerate() {
        let coeffs: Vec<String> = s.coeffs.iter().map(|c| num(*c)).collect();
        wr.write_record([
            (i + 1).to_string(),
            (s.coord + 1).to_string(),
            num(s.interval.lo),
            num(s.interval.hi),
            s.status.map_or("degenerate".to_string(), |st| st.to_string()),
            num(s.value),
            coeffs.join(";"),
            s.dichotomy_path.len().to_string(),
        ])
        .map_err(csv_err)?;
    }
    wr.flush().map_err(csv_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_minimal() {
        let f = parse_problem("nvars 1\nobjective\n1 2\nbounds 1 -1 1\n").unwrap();
        assert_eq!(f.problem.n, 1);
        assert_eq!(f.problem.f, poly(1, &[(1.0, &[2])]));
        assert_eq!(f.problem.constraints.len(), 2);
        assert_eq!(f.problem.bounds, Some(vec![Interval::new(-1.0, 1.0)]));
    }

    #[test]
    fn parse_empty_constraint_section() {
        let f = parse_problem("nvars 2\nname t\nobjective\n1 1 0\nconstraint\nbounds 1 0 1\nbounds 2 0 1\n").unwrap();
        assert_eq!(f.name, "t");
        assert_eq!(f.problem.constraints.len(), 4);
    }

    #[test]
    fn parse_bad_exponent_count() {
        let e = parse_problem("nvars 2\nobjective\n1 2\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e:?}");
        let e = parse_problem("nvars 1\nobjective\n1 -2\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }));
        let e = parse_problem("objective\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn rescale_pooling_box() {
        let prob = SemialgebraicProblem::new(Polynomial::var(9, 0), vec![])
            .unwrap()
            .with_box_constraints(vec![Interval::new(0.0, 500.0); 9])
            .unwrap();
        let (scaled, map) = rescale_to_unit_box(&prob).unwrap();
        assert!(map.center.iter().all(|&c| c == 250.0));
        assert!(map.radius.iter().all(|&r| r == 250.0));
        let x: Vec<f64> = (0..9).map(|j| 13.0 * j as f64).collect();
        let u = map.to_unit(&x);
        let back = map.to_original(&u);
        assert!(x.iter().zip(&back).all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(1.0)));
        assert!((prob.objective(&x).unwrap() - scaled.objective(&u).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn rescale_identity_on_unit_box() {
        let prob = unit_disk().problem.with_bounds(vec![Interval::new(-1.0, 1.0); 2]).unwrap();
        let (scaled, map) = rescale_to_unit_box(&prob).unwrap();
        assert_eq!(map.center, vec![0.0, 0.0]);
        assert_eq!(map.radius, vec![1.0, 1.0]);
        assert_eq!(scaled.f, prob.f);
        assert!(rescale_to_unit_box(&unit_disk().problem).is_err());
    }

    #[test]
    fn maxcut_generator() {
        let a = gen_maxcut(2, 1.0, 99).unwrap();
        assert_eq!(a.q, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        let b = gen_maxcut(12, 0.5, 7).unwrap();
        assert_eq!(b, gen_maxcut(12, 0.5, 7).unwrap());
        assert!(b.edge_count() <= 66);
    }

    #[test]
    fn brute_force_examples() {
        let q = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(brute_force_maxcut(&q).unwrap().0, -2.0);
        assert_eq!(brute_force_maxcut(&DMatrix::zeros(3, 3)).unwrap().0, 0.0);
        let path = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let (v, s) = brute_force_maxcut(&path).unwrap();
        assert_eq!(v, -4.0);
        assert_eq!(s, vec![1, -1, 1]);
    }

    #[test]
    fn oracle_on_disk() {
        let e = unit_disk();
        let vals = brute_force_value_function(&e.problem, 0, Interval::new(-1.0, 1.0), 101).unwrap();
        for (y, j) in vals {
            assert!((j - (e.value_function)(0, y)).abs() < 1e-4, "y={y} J={j}");
        }
    }

    #[test]
    fn oracle_on_split_strip() {
        let e = catalog_entry("split_strip").unwrap();
        let vals = brute_force_value_function(&e.problem, 0, Interval::new(-1.0, 1.0), 21).unwrap();
        for (y, j) in vals {
            if y.abs() < 0.5 - 1e-9 {
                assert!(j.is_infinite());
            } else {
                assert!((j - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn oracle_parameter_only() {
        let e = catalog_entry("parameter_only").unwrap();
        let vals = brute_force_value_function(&e.problem, 0, Interval::new(0.0, 1.0), 11).unwrap();
        for (y, j) in vals {
            assert_eq!(j, y);
        }
    }

    #[test]
    fn concave_qp_generator() {
        let a = gen_concave_qp(3, 2, 5).unwrap();
        assert!(a.problem.feasibility_residual(&a.minimizer).unwrap() <= 1e-9);
        assert!((a.problem.objective(&a.minimizer).unwrap() - a.optimum).abs() < 1e-12);
        let b = gen_concave_qp(3, 2, 5).unwrap();
        assert_eq!(a.optimum, b.optimum);
    }
}
