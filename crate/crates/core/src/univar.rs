//! Global minimization of a univariate polynomial on a closed interval.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::moments::Interval;
use crate::relax::ValuePolynomial;

/// Values within this distance of the minimum count as ties.
pub const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct UnivariateMinimum {
    pub argmin: f64,
    pub value: f64,
    /// Every candidate attaining the minimum up to `TIE_TOL`, ascending.
    pub all_minimizers: Vec<f64>,
}

/// `sum_j coeffs[j] x^j`
pub fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

pub fn derivative(coeffs: &[f64]) -> Vec<f64> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(j, c)| j as f64 * c)
        .collect()
}

fn trim(coeffs: &[f64]) -> &[f64] {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let mut end = coeffs.len();
    while end > 0 && coeffs[end - 1].abs() <= 1e-12 * scale {
        end -= 1;
    }
    &coeffs[..end]
}

/// Real roots from the companion matrix, polished by Newton steps.
pub fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let c = trim(coeffs);
    if c.len() < 2 {
        return Vec::new();
    }
    let deg = c.len() - 1;
    let lead = c[deg];
    let mut comp = DMatrix::zeros(deg, deg);
    for i in 1..deg {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        comp[(i, deg - 1)] = -c[i] / lead;
    }
    let dc = derivative(c);
    let mut roots: Vec<f64> = comp
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-7 * (1.0 + z.re.abs()))
        .map(|z| {
            let mut x = z.re;
            for _ in 0..8 {
                let d = horner(&dc, x);
                if d == 0.0 {
                    break;
                }
                let step = horner(c, x) / d;
                if !step.is_finite() {
                    break;
                }
                x -= step;
                if step.abs() <= 1e-15 * (1.0 + x.abs()) {
                    break;
                }
            }
            x
        })
        .collect();
    roots.sort_by(f64::total_cmp);
    roots
}

/// Minimizes `sum_j coeffs[j] x^j` over `iv` by comparing the endpoints
/// with the stationary points inside the interval.
pub fn minimize_on_interval(coeffs: &[f64], iv: Interval) -> Result<UnivariateMinimum> {
    if !(iv.hi > iv.lo) {
        return Err(Error::DegenerateInterval { lo: iv.lo, hi: iv.hi });
    }
    if coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::Invalid("non-finite polynomial coefficient".into()));
    }
    let mut cands = vec![iv.lo, iv.hi];
    cands.extend(
        real_roots(&derivative(coeffs))
            .into_iter()
            .filter(|&r| r > iv.lo && r < iv.hi),
    );
    let vals: Vec<f64> = cands.iter().map(|&x| horner(coeffs, x)).collect();
    let best = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = TIE_TOL * best.abs().max(1.0);
    let mut ties: Vec<f64> = cands
        .iter()
        .zip(&vals)
        .filter(|(_, v)| **v <= best + tol)
        .map(|(x, _)| *x)
        .collect();
    ties.sort_by(f64::total_cmp);
    ties.dedup_by(|a, b| (*a - *b).abs() <= TIE_TOL);
    let argmin = ties[0];
    Ok(UnivariateMinimum {
        argmin,
        value: horner(coeffs, argmin),
        all_minimizers: ties,
    })
}

pub fn minimize_value_poly(p: &ValuePolynomial) -> Result<UnivariateMinimum> {
    minimize_on_interval(&p.coeffs, p.interval)
}
