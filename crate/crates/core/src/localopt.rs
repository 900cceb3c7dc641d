//! Local refinement of a candidate point into a feasible local minimizer.
//!
//! Bounds are handled by projection; the remaining constraints by an
//! augmented Lagrangian whose subproblems are solved with a nonmonotone
//! spectral projected-gradient method. A pure feasibility phase runs first
//! when the start point is infeasible.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::poly::Polynomial;
use crate::relax::SemialgebraicProblem;

/// Points with `max_j -g_j(x) <= FEAS_TOL` count as feasible.
pub const FEAS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct RefineOptions {
    pub max_inner: usize,
    pub max_outer: usize,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    /// Stationarity tolerance on the projected gradient.
    pub tol: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions {
            max_inner: 500,
            max_outer: 8,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    pub x: Vec<f64>,
    pub value: f64,
    pub residual: f64,
    pub converged: bool,
    /// Objective at the first feasible iterate met.
    pub first_feasible_value: f64,
}

struct Model<'a> {
    prob: &'a SemialgebraicProblem,
    grad_f: Vec<Polynomial>,
    grad_g: Vec<Vec<Polynomial>>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl<'a> Model<'a> {
    fn new(prob: &'a SemialgebraicProblem) -> Self {
        let n = prob.n;
        let (lo, hi) = match &prob.bounds {
            Some(b) => (b.iter().map(|iv| iv.lo).collect(), b.iter().map(|iv| iv.hi).collect()),
            None => (vec![f64::NEG_INFINITY; n], vec![f64::INFINITY; n]),
        };
        Model {
            prob,
            grad_f: prob.f.gradient(),
            grad_g: prob.constraints.iter().map(Polynomial::gradient).collect(),
            lo,
            hi,
        }
    }

    fn project(&self, x: &mut [f64]) {
        for (j, v) in x.iter_mut().enumerate() {
            *v = v.max(self.lo[j]).min(self.hi[j]);
        }
    }

    fn g_values(&self, x: &[f64]) -> Vec<f64> {
        self.prob.constraints.iter().map(|g| g.eval_unchecked(x)).collect()
    }

    fn residual_of(gv: &[f64]) -> f64 {
        gv.iter().fold(0.0f64, |m, v| m.max(-v)) + 0.0
    }

    fn f(&self, x: &[f64]) -> f64 {
        self.prob.f.eval_unchecked(x)
    }

    fn grad(ps: &[Polynomial], x: &[f64]) -> Vec<f64> {
        ps.iter().map(|p| p.eval_unchecked(x)).collect()
    }
}

/// Merit function of one subproblem: `weight * f + (rho/2) sum max(0, mu/rho - g)^2`.
struct Merit<'m, 'a> {
    model: &'m Model<'a>,
    weight: f64,
    mu: Vec<f64>,
    rho: f64,
}

impl Merit<'_, '_> {
    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let m = self.model;
        let gv = m.g_values(x);
        let mut val = 0.0;
        let mut grad = vec![0.0; x.len()];
        if self.weight != 0.0 {
            val = self.weight * m.f(x);
            for (gj, d) in grad.iter_mut().zip(Model::grad(&m.grad_f, x)) {
                *gj = self.weight * d;
            }
        }
        for (j, &g) in gv.iter().enumerate() {
            let t = self.mu[j] - self.rho * g;
            if t > 0.0 {
                val += t * t / (2.0 * self.rho);
                for (gk, d) in grad.iter_mut().zip(Model::grad(&m.grad_g[j], x)) {
                    *gk -= t * d;
                }
            }
        }
        (val, grad, gv)
    }
}

struct Tracker {
    best: Option<(f64, Vec<f64>)>,
    first_feasible: Option<f64>,
}

impl Tracker {
    fn offer(&mut self, model: &Model<'_>, x: &[f64], gv: &[f64]) {
        if Model::residual_of(gv) > FEAS_TOL {
            return;
        }
        let f = model.f(x);
        if self.first_feasible.is_none() {
            self.first_feasible = Some(f);
        }
        if self.best.as_ref().is_none_or(|(b, _)| f < *b) {
            self.best = Some((f, x.to_vec()));
        }
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Nonmonotone spectral projected gradient; returns the final projected
/// gradient norm.
fn spg(merit: &Merit<'_, '_>, x: &mut Vec<f64>, max_iter: usize, tol: f64, tracker: &mut Tracker) -> f64 {
    const MEMORY: usize = 10;
    let model = merit.model;
    model.project(x);
    let (mut val, mut grad, gv) = merit.value_grad(x);
    tracker.offer(model, x, &gv);
    let mut hist = vec![val];
    let pg_norm = |x: &[f64], g: &[f64]| -> f64 {
        let mut p: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
        model.project(&mut p);
        p.iter().zip(x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    };
    let mut pg = pg_norm(x, &grad);
    let mut alpha = if pg > 0.0 { (1.0 / pg).clamp(1e-10, 1e10) } else { 1.0 };
    for _ in 0..max_iter {
        if pg <= tol {
            break;
        }
        let mut trial: Vec<f64> = x.iter().zip(&grad).map(|(a, g)| a - alpha * g).collect();
        model.project(&mut trial);
        let d: Vec<f64> = trial.iter().zip(x.iter()).map(|(t, a)| t - a).collect();
        let gd: f64 = grad.iter().zip(&d).map(|(g, d)| g * d).sum();
        let fmax = hist.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut lambda = 1.0;
        let mut accepted = None;
        while lambda > 1e-16 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, d)| a + lambda * d).collect();
            let (vn, gn, gvn) = merit.value_grad(&xn);
            if vn <= fmax + 1e-4 * lambda * gd {
                accepted = Some((xn, vn, gn, gvn));
                break;
            }
            // Safeguarded quadratic interpolation.
            let q = -gd * lambda * lambda / (2.0 * (vn - val - lambda * gd));
            lambda = if q.is_finite() && q >= 0.1 * lambda && q <= 0.9 * lambda {
                q
            } else {
                lambda / 2.0
            };
        }
        let Some((xn, vn, gn, gvn)) = accepted else {
            break;
        };
        let s: Vec<f64> = xn.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        alpha = if sy > 0.0 { (ss / sy).clamp(1e-10, 1e10) } else { 1e10 };
        *x = xn;
        val = vn;
        grad = gn;
        tracker.offer(model, x, &gvn);
        hist.push(val);
        if hist.len() > MEMORY {
            hist.remove(0);
        }
        pg = pg_norm(x, &grad);
        if inf_norm(&s) <= 1e-15 * (1.0 + inf_norm(x)) {
            break;
        }
    }
    pg
}

/// Minimal-norm Gauss-Newton corrections onto the violated constraints,
/// for points that are already nearly feasible.
fn restore(model: &Model<'_>, x: &mut [f64]) {
    const MARGIN: f64 = 1e-10;
    for _ in 0..20 {
        let gv = model.g_values(x);
        let active: Vec<usize> = (0..gv.len()).filter(|&j| gv[j] < MARGIN).collect();
        if active.is_empty() || Model::residual_of(&gv) == 0.0 {
            return;
        }
        let n = x.len();
        let jac = DMatrix::from_fn(active.len(), n, |r, c| model.grad_g[active[r]][c].eval_unchecked(x));
        let rhs = DVector::from_iterator(active.len(), active.iter().map(|&j| MARGIN - gv[j]));
        let mut jjt = &jac * jac.transpose();
        let reg = 1e-14 * jjt.diagonal().amax().max(1e-300);
        for i in 0..active.len() {
            jjt[(i, i)] += reg;
        }
        let Some(w) = jjt.lu().solve(&rhs) else {
            return;
        };
        let dx = jac.transpose() * w;
        for (v, d) in x.iter_mut().zip(dx.iter()) {
            *v += d;
        }
        model.project(x);
    }
}

/// Refines `x0` towards a feasible local minimizer of `prob`.
///
/// Returns the best feasible iterate found; `converged` reports whether it
/// is also an approximate KKT point. Fails only if no iterate was feasible.
pub fn refine(prob: &SemialgebraicProblem, x0: &[f64], opts: &RefineOptions) -> Result<Refined> {
    if x0.len() != prob.n {
        return Err(Error::DimensionMismatch {
            expected: prob.n,
            got: x0.len(),
        });
    }
    let model = Model::new(prob);
    let m = prob.constraints.len();
    let mut tracker = Tracker {
        best: None,
        first_feasible: None,
    };
    let mut x = x0.to_vec();
    model.project(&mut x);

    let gv0 = model.g_values(&x);
    if Model::residual_of(&gv0) > FEAS_TOL {
        let phase1 = Merit {
            model: &model,
            weight: 0.0,
            mu: vec![0.0; m],
            rho: 1.0,
        };
        spg(&phase1, &mut x, opts.max_inner, 1e-12, &mut tracker);
    }

    let fscale = Model::grad(&model.grad_f, &x).iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let mut merit = Merit {
        model: &model,
        weight: 1.0,
        mu: vec![0.0; m],
        rho: opts.initial_penalty,
    };
    let mut last_viol = f64::INFINITY;
    let mut kkt_ok = false;
    for _ in 0..opts.max_outer {
        let pg = spg(&merit, &mut x, opts.max_inner, 0.1 * opts.tol * fscale, &mut tracker);
        let gv = model.g_values(&x);
        // Violation of g >= 0 and of complementarity, in multiplier form.
        let viol = gv
            .iter()
            .zip(&merit.mu)
            .fold(0.0f64, |acc, (&g, &mu)| acc.max(g.min(mu / merit.rho).abs()));
        for (mu, &g) in merit.mu.iter_mut().zip(&gv) {
            *mu = (*mu - merit.rho * g).max(0.0);
        }
        kkt_ok = pg <= opts.tol * fscale && viol <= FEAS_TOL;
        if kkt_ok {
            break;
        }
        if viol > 0.25 * last_viol {
            merit.rho *= opts.penalty_growth;
        }
        last_viol = viol;
    }

    if Model::residual_of(&model.g_values(&x)) > 0.0 {
        restore(&model, &mut x);
    }
    let final_gv = model.g_values(&x);
    tracker.offer(&model, &x, &final_gv);
    let final_res = Model::residual_of(&final_gv);
    let Some((_, best_x)) = tracker.best.clone() else {
        return Err(Error::Infeasible(format!(
            "no feasible point found (residual {final_res:.3e})"
        )));
    };
    let first = tracker.first_feasible.expect("set with best");

    // Iterates accepted within FEAS_TOL can undercut the true minimum by
    // their violation; compare restored points instead.
    let mut restored = best_x.clone();
    restore(&model, &mut restored);
    let mut candidates = Vec::with_capacity(3);
    if final_res <= FEAS_TOL {
        candidates.push((x, kkt_ok));
    }
    if Model::residual_of(&model.g_values(&restored)) <= FEAS_TOL {
        candidates.push((restored, false));
    }
    if candidates.is_empty() {
        candidates.push((best_x, false));
    }
    let (x, converged) = candidates
        .into_iter()
        .min_by(|a, b| model.f(&a.0).total_cmp(&model.f(&b.0)))
        .expect("nonempty");
    let residual = prob.feasibility_residual(&x)?;
    Ok(Refined {
        value: model.f(&x),
        x,
        residual,
        converged,
        first_feasible_value: first,
    })
}
