//! Projection of the feasible set onto one coordinate axis.

use crate::conic::{self, ConicProgram, SolverOptions, Status};
use crate::error::{Error, Result};
use crate::moments::{AffineMatrixMap, Interval, LinearForm};
use crate::poly::{MonomialOrder, Polynomial};
use crate::relax::{build_standard_objective, solve_relaxation, SemialgebraicProblem};

/// Outward rounding applied to every computed endpoint.
pub const OUTWARD: f64 = 1e-9;

fn clamp_to_box(prob: &SemialgebraicProblem, k: usize, iv: Interval) -> Result<Interval> {
    let Some(b) = &prob.bounds else {
        return Ok(iv);
    };
    iv.intersect(&b[k])
        .ok_or_else(|| Error::Infeasible(format!("projection on x{} misses its bounds", k + 1)))
}

fn check_coord(prob: &SemialgebraicProblem, k: usize) -> Result<()> {
    if k >= prob.n {
        return Err(Error::VariableOutOfRange { index: k, nvars: prob.n });
    }
    Ok(())
}

fn lp_min(prob: &SemialgebraicProblem, objective: &Polynomial) -> Result<f64> {
    let order = MonomialOrder::new(prob.n, 1);
    let mut lp = ConicProgram::new(order.len(), LinearForm::from_polynomial(objective, &order)?);
    lp.add_equality(LinearForm::single(0, 1.0), 1.0);
    for g in &prob.constraints {
        lp.add_block(AffineMatrixMap::scalar(LinearForm::from_polynomial(g, &order)?));
    }
    let sol = conic::solve(&lp, &SolverOptions::default())?;
    match sol.status {
        _ if sol.is_near_optimal(1e-7) => Ok(sol.primal_obj.min(sol.dual_obj)),
        Status::Infeasible => Err(Error::Infeasible("polytope is empty".into())),
        Status::Unbounded => Ok(f64::NEG_INFINITY),
        s => Err(Error::Solver(format!("projection LP ended with status {s}"))),
    }
}

/// Exact `[min x_k, max x_k]` over a polytope, by two LPs.
pub fn projection_polytope(prob: &SemialgebraicProblem, k: usize) -> Result<Interval> {
    check_coord(prob, k)?;
    if !prob.is_affinely_constrained() {
        return Err(Error::Invalid("projection_polytope needs affine constraints".into()));
    }
    let xk = Polynomial::var(prob.n, k);
    let (lo, neg_hi) = rayon::join(|| lp_min(prob, &xk), || lp_min(prob, &(-&xk)));
    let (lo, hi) = (lo?, -neg_hi?);
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Unbounded(format!("x{} is unbounded on the polytope", k + 1)));
    }
    clamp_to_box(prob, k, Interval::new(lo, hi).widen(OUTWARD))
}

fn sdp_min(prob: &SemialgebraicProblem, objective: &Polynomial, order: usize) -> Result<f64> {
    let relax = build_standard_objective(prob, objective, order)?;
    let res = solve_relaxation(&relax, &SolverOptions::default())?;
    match res.status {
        Status::Optimal => {
            let sol = &res.solution;
            let v = res.primal_value.min(res.dual_value);
            let slack = sol.gap.abs() + sol.primal_residual.max(sol.dual_residual) * v.abs().max(1.0);
            Ok(v - slack)
        }
        Status::Infeasible => Err(Error::Infeasible("relaxation of the feasible set is empty".into())),
        Status::Unbounded => Ok(f64::NEG_INFINITY),
        s => Err(Error::Solver(format!("projection relaxation ended with status {s}"))),
    }
}

/// Outer interval containing the projection, from the order-`order`
/// relaxation with objectives `x_k` and `-x_k`, intersected with the bounds.
pub fn projection_sdp(prob: &SemialgebraicProblem, k: usize, order: usize) -> Result<Interval> {
    check_coord(prob, k)?;
    let xk = Polynomial::var(prob.n, k);
    let (lo, neg_hi) = rayon::join(|| sdp_min(prob, &xk, order), || sdp_min(prob, &(-&xk), order));
    let iv = Interval::new(lo?, -neg_hi?).widen(OUTWARD);
    clamp_to_box(prob, k, iv)
}

/// LP projection for polytopes, SDP projection otherwise.
pub fn projection(prob: &SemialgebraicProblem, k: usize, order: usize) -> Result<Interval> {
    if prob.is_affinely_constrained() && !prob.constraints.is_empty() {
        projection_polytope(prob, k)
    } else {
        projection_sdp(prob, k, order.max(prob.min_order()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(n: usize, t: &[(f64, &[u32])]) -> Polynomial {
        Polynomial::from_terms(n, t.iter().map(|(c, e)| (*c, e.to_vec()))).unwrap()
    }

    fn close(iv: Interval, lo: f64, hi: f64) -> bool {
        (iv.lo - lo).abs() < 1e-6 && (iv.hi - hi).abs() < 1e-6
    }

    fn simplex() -> SemialgebraicProblem {
        SemialgebraicProblem::new(
            p(2, &[(1.0, &[1, 0])]),
            vec![
                p(2, &[(1.0, &[1, 0])]),
                p(2, &[(1.0, &[0, 1])]),
                p(2, &[(1.0, &[0, 0]), (-1.0, &[1, 0]), (-1.0, &[0, 1])]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn unit_box() {
        let prob = SemialgebraicProblem::new(p(2, &[(1.0, &[1, 0])]), vec![])
            .unwrap()
            .with_box_constraints(vec![Interval::new(0.0, 1.0); 2])
            .unwrap();
        assert!(close(projection_polytope(&prob, 0).unwrap(), 0.0, 1.0));
    }

    #[test]
    fn simplex_projection() {
        let iv = projection_polytope(&simplex(), 1).unwrap();
        assert!(close(iv, 0.0, 1.0));
        assert!(iv.lo <= 0.0 && iv.hi >= 1.0);
    }

    #[test]
    fn empty_polytope() {
        let prob = SemialgebraicProblem::new(
            p(1, &[(1.0, &[1])]),
            vec![p(1, &[(1.0, &[1])]), p(1, &[(-1.0, &[1]), (-1.0, &[0])])],
        )
        .unwrap();
        assert!(matches!(projection_polytope(&prob, 0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn disk_sdp() {
        let prob = SemialgebraicProblem::new(
            p(2, &[(1.0, &[0, 1])]),
            vec![p(2, &[(1.0, &[0, 0]), (-1.0, &[2, 0]), (-1.0, &[0, 2])])],
        )
        .unwrap();
        assert!(close(projection_sdp(&prob, 0, 1).unwrap(), -1.0, 1.0));
    }

    #[test]
    fn sdp_matches_lp_on_polytope() {
        let prob = simplex();
        let a = projection_polytope(&prob, 0).unwrap();
        let b = projection_sdp(&prob, 0, 1).unwrap();
        assert!((a.lo - b.lo).abs() < 1e-6 && (a.hi - b.hi).abs() < 1e-6);
        assert!(b.lo <= a.lo + 1e-7 && b.hi >= a.hi - 1e-7);
    }

    #[test]
    fn clamped_to_metadata() {
        let prob = SemialgebraicProblem::new(
            p(2, &[(1.0, &[0, 1])]),
            vec![p(2, &[(1.0, &[0, 0]), (-1.0, &[2, 0]), (-1.0, &[0, 2])])],
        )
        .unwrap()
        .with_bounds(vec![Interval::new(0.0, 0.5), Interval::new(-1.0, 1.0)])
        .unwrap();
        let iv = projection_sdp(&prob, 0, 1).unwrap();
        assert!(iv.lo >= 0.0 && iv.hi <= 0.5);
    }
}
