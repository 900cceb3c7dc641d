//! Dense primal-dual interior-point solver for small conic programs.
//!
//! Programs have the form
//!
//! ```text
//!   minimize    c'z
//!   subject to  a_r'z = b_r            (r = 1..p)
//!               F_j(z) >= 0 (PSD)      (j = 1..m)
//! ```
//!
//! where each `F_j` is a linear symmetric-matrix map and `z` is free. The
//! dual is
//!
//! ```text
//!   maximize    b'lambda
//!   subject to  c - A'lambda = sum_j F_j^*(S_j),   S_j >= 0 (PSD)
//! ```
//!
//! which, for moment programs, is exactly the coefficient identity of an SOS
//! certificate. The solver runs a Mehrotra predictor-corrector method on the
//! homogeneous self-dual embedding with Nesterov-Todd scaling, so infeasible
//! and unbounded programs terminate with a certificate instead of diverging.
//! LPs are the special case where every block is 1x1.

use std::fmt;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::moments::{AffineMatrixMap, LinearForm};

/// Linear objective, affine equalities and PSD blocks over `z in R^nvar`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicProgram {
    pub nvar: usize,
    pub objective: LinearForm,
    pub equalities: Vec<(LinearForm, f64)>,
    pub psd_blocks: Vec<AffineMatrixMap>,
}

impl ConicProgram {
    pub fn new(nvar: usize, objective: LinearForm) -> Self {
        ConicProgram {
            nvar,
            objective,
            equalities: Vec::new(),
            psd_blocks: Vec::new(),
        }
    }

    pub fn add_equality(&mut self, form: LinearForm, rhs: f64) -> usize {
        self.equalities.push((form, rhs));
        self.equalities.len() - 1
    }

    pub fn add_block(&mut self, block: AffineMatrixMap) -> usize {
        self.psd_blocks.push(block);
        self.psd_blocks.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        let check = |f: &LinearForm, what: &str| -> Result<()> {
            match f.max_rank() {
                Some(r) if r >= self.nvar => Err(Error::Invalid(format!(
                    "{what} references variable {r} but program has {}",
                    self.nvar
                ))),
                _ => Ok(()),
            }
        };
        check(&self.objective, "objective")?;
        for (f, b) in &self.equalities {
            check(f, "equality")?;
            if !b.is_finite() {
                return Err(Error::Invalid("non-finite equality right-hand side".into()));
            }
        }
        for blk in &self.psd_blocks {
            if let Some(r) = blk.max_rank() {
                if r >= self.nvar {
                    return Err(Error::Invalid(format!(
                        "PSD block references variable {r} but program has {}",
                        self.nvar
                    )));
                }
            }
        }
        Ok(())
    }

    /// Plain-text dump: a size line, then `c`, `a`/`b` and `f` triplet lines.
    ///
    /// ```text
    /// nvar <n> neq <p> nblocks <m>
    /// c <var> <coef>
    /// a <row> <var> <coef>
    /// b <row> <rhs>
    /// block <j> <size>
    /// f <j> <row> <col> <var> <coef>     (upper triangle only)
    /// ```
    pub fn to_debug_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "nvar {} neq {} nblocks {}",
            self.nvar,
            self.equalities.len(),
            self.psd_blocks.len()
        );
        for &(r, c) in self.objective.terms() {
            let _ = writeln!(out, "c {r} {c:e}");
        }
        for (i, (f, b)) in self.equalities.iter().enumerate() {
            for &(r, c) in f.terms() {
                let _ = writeln!(out, "a {i} {r} {c:e}");
            }
            let _ = writeln!(out, "b {i} {b:e}");
        }
        for (j, blk) in self.psd_blocks.iter().enumerate() {
            let _ = writeln!(out, "block {j} {}", blk.size());
            for a in 0..blk.size() {
                for b in a..blk.size() {
                    for &(r, c) in blk.entry(a, b).terms() {
                        let _ = writeln!(out, "f {j} {a} {b} {r} {c:e}");
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
    NumericalFailure,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Status::Optimal => "optimal",
            Status::Infeasible => "infeasible",
            Status::Unbounded => "unbounded",
            Status::MaxIter => "max_iter",
            Status::NumericalFailure => "numerical_failure",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Relative feasibility and gap tolerance.
    pub tol: f64,
    pub max_iter: usize,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            max_iter: 200,
            verbose: false,
        }
    }
}

/// Solver output. For `Infeasible` the dual fields hold a normalized
/// Farkas ray (`b'lambda = 1`); for `Unbounded` `primal_z` holds an
/// improving direction (`c'z = -1`).
#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: Status,
    pub primal_z: Vec<f64>,
    pub dual_eq: Vec<f64>,
    pub dual_psd: Vec<DMatrix<f64>>,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Residual of the infeasibility/unboundedness certificate, if any.
    pub ray_residual: Option<f64>,
    pub iterations: usize,
}

impl ConicSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }

    /// Optimal, or stopped early at an iterate whose residuals and gap are
    /// all below `tol`.
    pub fn is_near_optimal(&self, tol: f64) -> bool {
        match self.status {
            Status::Optimal => true,
            Status::MaxIter | Status::NumericalFailure => {
                self.primal_residual <= tol
                    && self.dual_residual <= tol
                    && self.gap <= tol * self.primal_obj.abs().max(1.0)
            }
            _ => false,
        }
    }
}

/// Residuals of the dual identity `c - A'lambda - sum_j F_j^*(S_j) = 0`.
#[derive(Debug, Clone)]
pub struct CertificateReport {
    pub max_residual: f64,
    pub residual: Vec<f64>,
    pub min_eigenvalues: Vec<f64>,
}

impl CertificateReport {
    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Coefficient-wise residual of the dual certificate carried by `sol`.
pub fn check_certificate(prog: &ConicProgram, sol: &ConicSolution) -> CertificateReport {
    let mut res = vec![0.0; prog.nvar];
    for &(r, c) in prog.objective.terms() {
        res[r] += c;
    }
    for ((form, _), lam) in prog.equalities.iter().zip(&sol.dual_eq) {
        for &(r, c) in form.terms() {
            res[r] -= lam * c;
        }
    }
    let mut adj = vec![0.0; prog.nvar];
    for (blk, s) in prog.psd_blocks.iter().zip(&sol.dual_psd) {
        blk.adjoint_into(s, &mut adj);
    }
    for (r, a) in res.iter_mut().zip(&adj) {
        *r -= a;
    }
    let min_eigenvalues = sol.dual_psd.iter().map(min_eigenvalue).collect();
    CertificateReport {
        max_residual: res.iter().fold(0.0, |m, v| m.max(v.abs())),
        residual: res,
        min_eigenvalues,
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// One PSD block in solver form: coefficient matrices grouped by variable.
struct Block {
    size: usize,
    vars: Vec<(usize, Vec<(usize, usize, f64)>)>,
}

impl Block {
    fn new(map: &AffineMatrixMap) -> Self {
        Block {
            size: map.size(),
            vars: map.triplets_by_rank(),
        }
    }

    /// `F(x)`
    fn apply(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.size, self.size);
        for (r, trip) in &self.vars {
            let xr = x[*r];
            if xr == 0.0 {
                continue;
            }
            for &(a, b, c) in trip {
                m[(a, b)] += c * xr;
            }
        }
        m
    }

    /// `out += F^*(s)`
    fn adjoint_add(&self, s: &DMatrix<f64>, out: &mut DVector<f64>, sign: f64) {
        for (r, trip) in &self.vars {
            let mut acc = 0.0;
            for &(a, b, c) in trip {
                acc += c * s[(a, b)];
            }
            out[*r] += sign * acc;
        }
    }

    /// `H += F^* (Wi . Wi) F` with `Wi` symmetric.
    fn add_schur(&self, wi: &DMatrix<f64>, h: &mut DMatrix<f64>) {
        let s = self.size;
        let mut p = DMatrix::zeros(s, s);
        for (q, tq) in &self.vars {
            p.fill(0.0);
            for &(d, e, c) in tq {
                // p += c * wi[:, d] * wi[e, :]
                for a in 0..s {
                    let wad = wi[(a, d)] * c;
                    if wad == 0.0 {
                        continue;
                    }
                    for b in 0..s {
                        p[(a, b)] += wad * wi[(e, b)];
                    }
                }
            }
            for (r, tr) in &self.vars {
                let mut acc = 0.0;
                for &(a, b, c) in tr {
                    acc += c * p[(a, b)];
                }
                h[(*r, *q)] += acc;
            }
        }
    }
}

/// Nesterov-Todd scaling for one block: `R' Z R = R^{-1} S R^{-T} = diag(lambda)`.
#[derive(Clone)]
struct Scaling {
    r: DMatrix<f64>,
    rinv_t: DMatrix<f64>,
    lambda: DVector<f64>,
}

impl Scaling {
    fn from_pair(s: &DMatrix<f64>, z: &DMatrix<f64>) -> Option<Scaling> {
        let l1 = s.clone().cholesky()?.l();
        let l2 = z.clone().cholesky()?.l();
        Self::from_factors(&l1, &l2, None)
    }

    /// With `base = Some(old)`, `l1`/`l2` factor the new scaled iterates and
    /// the result composes with the old scaling.
    fn from_factors(l1: &DMatrix<f64>, l2: &DMatrix<f64>, base: Option<&Scaling>) -> Option<Scaling> {
        let m = l2.transpose() * l1;
        let svd = m.svd(true, true);
        let u = svd.u?;
        let vt = svd.v_t?;
        let sv = svd.singular_values;
        if sv.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return None;
        }
        let isq = sv.map(|v| 1.0 / v.sqrt());
        let mut r = l1 * vt.transpose();
        let mut rinv_t = l2 * u;
        for j in 0..r.ncols() {
            r.column_mut(j).scale_mut(isq[j]);
            rinv_t.column_mut(j).scale_mut(isq[j]);
        }
        if let Some(b) = base {
            r = &b.r * r;
            // Recomputed rather than composed so that R and R^{-T} stay
            // exact inverses across iterations.
            rinv_t = r.clone().try_inverse()?.transpose();
        }
        Some(Scaling {
            r,
            rinv_t,
            lambda: sv,
        })
    }

    /// `(W'W)^{-1} = R^{-T} R^{-1}`
    fn w_sq(&self) -> DMatrix<f64> {
        &self.r * self.r.transpose()
    }

    fn w_inv_sq(&self) -> DMatrix<f64> {
        &self.rinv_t * self.rinv_t.transpose()
    }

    /// Maps a z-space direction to scaled space: `R' dz R`.
    fn scale_z(&self, dz: &DMatrix<f64>) -> DMatrix<f64> {
        self.r.transpose() * dz * &self.r
    }

    /// Maps a scaled quantity back to s-space: `R v R'`.
    fn unscale_s(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        &self.r * v * self.r.transpose()
    }

    /// Solves `lambda o X = B` for the Jordan product `(LX + XL)/2`.
    fn lambda_solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let n = b.nrows();
        DMatrix::from_fn(n, n, |i, j| 2.0 * b[(i, j)] / (self.lambda[i] + self.lambda[j]))
    }

    /// Largest `alpha` with `diag(lambda) + alpha d` PSD.
    fn max_step(&self, d: &DMatrix<f64>) -> f64 {
        let n = d.nrows();
        let m = DMatrix::from_fn(n, n, |i, j| {
            d[(i, j)] / (self.lambda[i] * self.lambda[j]).sqrt()
        });
        let e = min_eigenvalue(&m);
        if e >= 0.0 {
            f64::INFINITY
        } else {
            -1.0 / e
        }
    }
}

fn jordan(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    (a * b + b * a) * 0.5
}

fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(b).sum()
}

/// Independent subset of the equality rows, found by Gram-Schmidt on the
/// augmented rows.
struct Presolved {
    kept: Vec<usize>,
    inconsistent: bool,
}

fn presolve_equalities(a: &DMatrix<f64>, b: &DVector<f64>) -> Presolved {
    let (p, n) = a.shape();
    let mut basis: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut kept = Vec::new();
    for r in 0..p {
        let orig: DVector<f64> = a.row(r).transpose();
        let onorm = orig.norm();
        let mut v = orig.clone();
        let mut beta = b[r];
        for _ in 0..2 {
            for (q, qb) in &basis {
                let coef = q.dot(&v);
                v.axpy(-coef, q, 1.0);
                beta -= coef * qb;
            }
        }
        let vn = v.norm();
        if vn <= 1e-10 * onorm.max(1.0) || n == 0 {
            if beta.abs() > 1e-8 * b[r].abs().max(1.0) {
                return Presolved {
                    kept,
                    inconsistent: true,
                };
            }
            continue;
        }
        basis.push((v / vn, beta / vn));
        kept.push(r);
    }
    Presolved {
        kept,
        inconsistent: false,
    }
}

/// Solver state for one run.
struct Ipm<'a> {
    n: usize,
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    blocks: &'a [Block],
}

impl Ipm<'_> {
    fn f_apply(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        self.blocks.iter().map(|b| b.apply(x)).collect()
    }

    fn f_adjoint(&self, mats: &[DMatrix<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for (b, m) in self.blocks.iter().zip(mats) {
            b.adjoint_add(m, &mut out, 1.0);
        }
        out
    }

    fn build_h(&self, wis: &[DMatrix<f64>]) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.n, self.n);
        for (b, wi) in self.blocks.iter().zip(wis) {
            b.add_schur(wi, &mut h);
        }
        h
    }

    /// Factorizes `[H A'; A 0]` (with a tiny regularization) and returns a
    /// closure-like solver object.
    fn factor(&self, h: DMatrix<f64>) -> Option<KktFactor> {
        let n = self.n;
        let p = self.a.nrows();
        let mut kkt = DMatrix::zeros(n + p, n + p);
        kkt.view_mut((0, 0), (n, n)).copy_from(&h);
        kkt.view_mut((0, n), (n, p)).copy_from(&self.a.transpose());
        kkt.view_mut((n, 0), (p, n)).copy_from(&self.a);
        let lu = kkt.clone().lu();
        if lu.is_invertible() {
            return Some(KktFactor { kkt, lu });
        }
        let scale = (0..n).map(|i| h[(i, i)].abs()).fold(1.0, f64::max);
        let delta = 1e-12 * scale;
        let mut reg = kkt.clone();
        for i in 0..n {
            reg[(i, i)] += delta;
        }
        for i in n..n + p {
            reg[(i, i)] -= delta;
        }
        let lu = reg.lu();
        if !lu.is_invertible() {
            return None;
        }
        Some(KktFactor { kkt, lu })
    }

    /// Solves `[0 A' G'; A 0 0; G 0 -W'W] [ux; uy; uz] = [bx; by; bz]` with
    /// `G = -F`.
    /// Solves the full system, refining against the unreduced equations.
    fn kkt_solve(
        &self,
        fac: &KktFactor,
        wis: &[DMatrix<f64>],
        wns: &[DMatrix<f64>],
        bx: &DVector<f64>,
        by: &DVector<f64>,
        bz: &[DMatrix<f64>],
    ) -> Option<(DVector<f64>, DVector<f64>, Vec<DMatrix<f64>>)> {
        let (mut ux, mut uy, mut uz) = self.kkt_solve_once(fac, wis, bx, by, bz)?;
        for _ in 0..2 {
            let ex = bx - (self.a.transpose() * &uy - self.f_adjoint(&uz));
            let ey = by - &self.a * &ux;
            let fux = self.f_apply(&ux);
            let ez: Vec<DMatrix<f64>> = bz
                .iter()
                .zip(fux.iter().zip(wns.iter().zip(&uz)))
                .map(|(b, (f, (wn, z)))| b + f + wn * z * wn)
                .collect();
            let (cx, cy, cz) = self.kkt_solve_once(fac, wis, &ex, &ey, &ez)?;
            ux += cx;
            uy += cy;
            for (z, c) in uz.iter_mut().zip(cz) {
                *z += c;
            }
        }
        Some((ux, uy, uz))
    }

    fn kkt_solve_once(
        &self,
        fac: &KktFactor,
        wis: &[DMatrix<f64>],
        bx: &DVector<f64>,
        by: &DVector<f64>,
        bz: &[DMatrix<f64>],
    ) -> Option<(DVector<f64>, DVector<f64>, Vec<DMatrix<f64>>)> {
        let n = self.n;
        let p = self.a.nrows();
        // rhs_x = bx + G'(Wi bz Wi) = bx - F^*(Wi bz Wi)
        let wbz: Vec<DMatrix<f64>> = wis.iter().zip(bz).map(|(wi, m)| wi * m * wi).collect();
        let rhs_x = bx - self.f_adjoint(&wbz);
        let mut rhs = DVector::zeros(n + p);
        rhs.rows_mut(0, n).copy_from(&rhs_x);
        rhs.rows_mut(n, p).copy_from(by);
        let mut sol = fac.lu.solve(&rhs)?;
        for _ in 0..3 {
            let r = &rhs - &fac.kkt * &sol;
            if r.amax() <= 1e-15 * rhs.amax().max(1.0) {
                break;
            }
            let corr = fac.lu.solve(&r)?;
            sol += corr;
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let ux = sol.rows(0, n).into_owned();
        let uy = sol.rows(n, p).into_owned();
        // uz = Wi (G ux - bz) Wi = Wi (-F(ux) - bz) Wi
        let fux = self.f_apply(&ux);
        let uz = wis
            .iter()
            .zip(fux.iter().zip(bz))
            .map(|(wi, (fu, bzm))| wi * (-(fu + bzm)) * wi)
            .collect();
        Some((ux, uy, uz))
    }
}

struct KktFactor {
    kkt: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

fn shift_to_interior(m: &mut DMatrix<f64>) {
    let e = min_eigenvalue(m);
    let nrm = m.norm();
    if e <= 1e-8 * nrm.max(1.0) {
        let a = 1.0 + (-e).max(0.0);
        for i in 0..m.nrows() {
            m[(i, i)] += a;
        }
    }
}

/// Solves a conic program.
pub fn solve(prog: &ConicProgram, opts: &SolverOptions) -> Result<ConicSolution> {
    prog.validate()?;
    let n = prog.nvar;
    let p_all = prog.equalities.len();

    let mut a_full = DMatrix::zeros(p_all, n);
    let mut b_full = DVector::zeros(p_all);
    for (i, (f, rhs)) in prog.equalities.iter().enumerate() {
        for &(r, c) in f.terms() {
            a_full[(i, r)] += c;
        }
        b_full[i] = *rhs;
    }
    let mut c = DVector::zeros(n);
    for &(r, v) in prog.objective.terms() {
        c[r] += v;
    }

    let pre = presolve_equalities(&a_full, &b_full);
    let block_sizes: Vec<usize> = prog.psd_blocks.iter().map(|b| b.size()).collect();
    if pre.inconsistent {
        return Ok(ConicSolution {
            status: Status::Infeasible,
            primal_z: vec![0.0; n],
            dual_eq: vec![0.0; p_all],
            dual_psd: block_sizes.iter().map(|&s| DMatrix::zeros(s, s)).collect(),
            primal_obj: f64::INFINITY,
            dual_obj: f64::INFINITY,
            gap: f64::INFINITY,
            primal_residual: f64::INFINITY,
            dual_residual: 0.0,
            ray_residual: Some(0.0),
            iterations: 0,
        });
    }
    let p = pre.kept.len();
    let mut a = DMatrix::zeros(p, n);
    let mut b = DVector::zeros(p);
    for (i, &r) in pre.kept.iter().enumerate() {
        a.set_row(i, &a_full.row(r));
        b[i] = b_full[r];
    }

    let blocks: Vec<Block> = prog.psd_blocks.iter().map(Block::new).collect();
    let ipm = Ipm {
        n,
        a,
        b,
        c,
        blocks: &blocks,
    };

    let expand_dual = |y: &DVector<f64>| -> Vec<f64> {
        let mut out = vec![0.0; p_all];
        for (i, &r) in pre.kept.iter().enumerate() {
            out[r] = y[i];
        }
        out
    };

    if blocks.is_empty() {
        return Ok(solve_equality_only(&ipm, n, p_all, &expand_dual));
    }

    run_hsd(&ipm, opts, &expand_dual, &block_sizes)
}

fn solve_equality_only(
    ipm: &Ipm<'_>,
    n: usize,
    p_all: usize,
    expand: &dyn Fn(&DVector<f64>) -> Vec<f64>,
) -> ConicSolution {
    let a = &ipm.a;
    let gram = a * a.transpose();
    let (z, lam) = match gram.clone().cholesky() {
        Some(ch) => {
            let z = a.transpose() * ch.solve(&ipm.b);
            let lam = ch.solve(&(a * &ipm.c));
            (z, lam)
        }
        None => (DVector::zeros(n), DVector::zeros(a.nrows())),
    };
    let dres = (&ipm.c - a.transpose() * &lam).norm();
    let bounded = dres <= 1e-9 * ipm.c.norm().max(1.0);
    let pobj = ipm.c.dot(&z);
    if bounded {
        ConicSolution {
            status: Status::Optimal,
            primal_z: z.iter().copied().collect(),
            dual_eq: expand(&lam),
            dual_psd: Vec::new(),
            primal_obj: pobj,
            dual_obj: ipm.b.dot(&lam),
            gap: 0.0,
            primal_residual: 0.0,
            dual_residual: dres,
            ray_residual: None,
            iterations: 0,
        }
    } else {
        let dir = -(&ipm.c - a.transpose() * &lam);
        let cd = ipm.c.dot(&dir);
        ConicSolution {
            status: Status::Unbounded,
            primal_z: (dir / -cd).iter().copied().collect(),
            dual_eq: vec![0.0; p_all],
            dual_psd: Vec::new(),
            primal_obj: f64::NEG_INFINITY,
            dual_obj: f64::NEG_INFINITY,
            gap: f64::INFINITY,
            primal_residual: 0.0,
            dual_residual: f64::INFINITY,
            ray_residual: Some(0.0),
            iterations: 0,
        }
    }
}

fn run_hsd(
    ipm: &Ipm<'_>,
    opts: &SolverOptions,
    expand: &dyn Fn(&DVector<f64>) -> Vec<f64>,
    block_sizes: &[usize],
) -> Result<ConicSolution> {
    let n = ipm.n;
    let p = ipm.a.nrows();
    let nb = ipm.blocks.len();
    let degree: usize = block_sizes.iter().sum::<usize>() + 1;
    let resx0 = ipm.c.norm().max(1.0);
    let resy0 = ipm.b.norm().max(1.0);

    let failure = |status: Status, iters: usize| ConicSolution {
        status,
        primal_z: vec![0.0; n],
        dual_eq: expand(&DVector::zeros(p)),
        dual_psd: block_sizes.iter().map(|&s| DMatrix::zeros(s, s)).collect(),
        primal_obj: f64::NAN,
        dual_obj: f64::NAN,
        gap: f64::INFINITY,
        primal_residual: f64::INFINITY,
        dual_residual: f64::INFINITY,
        ray_residual: None,
        iterations: iters,
    };

    // Initial point from two least-squares solves with identity scaling.
    let ident: Vec<DMatrix<f64>> = block_sizes.iter().map(|&s| DMatrix::identity(s, s)).collect();
    let Some(fac0) = ipm.factor(ipm.build_h(&ident)) else {
        return Ok(failure(Status::NumericalFailure, 0));
    };
    let zero_z: Vec<DMatrix<f64>> = block_sizes.iter().map(|&s| DMatrix::zeros(s, s)).collect();
    let Some((mut x, _, s0)) = ipm.kkt_solve(&fac0, &ident, &ident, &DVector::zeros(n), &ipm.b, &zero_z)
    else {
        return Ok(failure(Status::NumericalFailure, 0));
    };
    let Some((_, mut y, mut zs)) = ipm.kkt_solve(&fac0, &ident, &ident, &(-&ipm.c), &DVector::zeros(p), &zero_z)
    else {
        return Ok(failure(Status::NumericalFailure, 0));
    };
    // s = h - Gx = F(x); the third KKT block returned -s.
    let mut ss: Vec<DMatrix<f64>> = s0.into_iter().map(|m| -m).collect();
    for m in ss.iter_mut().chain(zs.iter_mut()) {
        *m = (&*m + m.transpose()) * 0.5;
        shift_to_interior(m);
    }
    let mut tau = 1.0f64;
    let mut kappa = 1.0f64;
    let mut scal: Vec<Scaling> = Vec::with_capacity(nb);
    for (s, z) in ss.iter().zip(&zs) {
        match Scaling::from_pair(s, z) {
            Some(w) => scal.push(w),
            None => return Ok(failure(Status::NumericalFailure, 0)),
        }
    }

    // Best non-terminal iterate by `max(pres, dres, relative gap)`.
    let mut last: Option<ConicSolution> = None;
    let mut best_merit = f64::INFINITY;
    for iter in 0..=opts.max_iter {
        // Residuals of the embedding.
        let fx = ipm.f_apply(&x);
        let fz = ipm.f_adjoint(&zs);
        let hrx = ipm.a.transpose() * &y - &fz;
        let rx = &hrx + &ipm.c * tau;
        let hry = &ipm.a * &x;
        let ry = &hry - &ipm.b * tau;
        let hrz: Vec<DMatrix<f64>> = ss.iter().zip(&fx).map(|(s, f)| s - f).collect();
        let rz = hrz.clone();
        let cx = ipm.c.dot(&x);
        let by = ipm.b.dot(&y);
        let rt = kappa + cx + by;
        let gap_raw: f64 = ss.iter().zip(&zs).map(|(s, z)| frob_dot(s, z)).sum();
        let mu = (gap_raw + tau * kappa) / degree as f64;

        let hrz_norm = hrz.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt();
        let pres = (ry.norm() / resy0).max(hrz_norm) / tau;
        let dres = rx.norm() / resx0 / tau;
        let pcost = cx / tau;
        let dcost = -by / tau;
        let gap = gap_raw / (tau * tau);
        let pinf = if by < 0.0 {
            Some(hrx.norm() / resx0 / (-by))
        } else {
            None
        };
        let dinf = if cx < 0.0 {
            Some((hry.norm() / resy0).max(hrz_norm) / (-cx))
        } else {
            None
        };
        if opts.verbose {
            eprintln!(
                "{iter:3} pcost {pcost:+.8e} dcost {dcost:+.8e} gap {gap:.2e} pres {pres:.2e} dres {dres:.2e} tau {tau:.2e} kappa {kappa:.2e}"
            );
        }

        let snapshot = |status: Status, ray: Option<f64>| -> ConicSolution {
            match status {
                Status::Infeasible => {
                    let sc = -by;
                    ConicSolution {
                        status,
                        primal_z: vec![0.0; n],
                        dual_eq: expand(&(&y * (-1.0 / sc))),
                        dual_psd: zs.iter().map(|z| z / sc).collect(),
                        primal_obj: f64::INFINITY,
                        dual_obj: f64::INFINITY,
                        gap: f64::INFINITY,
                        primal_residual: pres,
                        dual_residual: dres,
                        ray_residual: ray,
                        iterations: iter,
                    }
                }
                Status::Unbounded => {
                    let sc = -cx;
                    ConicSolution {
                        status,
                        primal_z: (&x / sc).iter().copied().collect(),
                        dual_eq: expand(&DVector::zeros(p)),
                        dual_psd: block_sizes.iter().map(|&s| DMatrix::zeros(s, s)).collect(),
                        primal_obj: f64::NEG_INFINITY,
                        dual_obj: f64::NEG_INFINITY,
                        gap: f64::INFINITY,
                        primal_residual: pres,
                        dual_residual: dres,
                        ray_residual: ray,
                        iterations: iter,
                    }
                }
                _ => ConicSolution {
                    status,
                    primal_z: (&x / tau).iter().copied().collect(),
                    dual_eq: expand(&(&y * (-1.0 / tau))),
                    dual_psd: zs.iter().map(|z| z / tau).collect(),
                    primal_obj: pcost,
                    dual_obj: dcost,
                    gap,
                    primal_residual: pres,
                    dual_residual: dres,
                    ray_residual: None,
                    iterations: iter,
                },
            }
        };

        let scale = pcost.abs().min(dcost.abs()).max(1.0);
        if pres <= opts.tol && dres <= opts.tol && gap <= opts.tol * scale {
            return Ok(snapshot(Status::Optimal, None));
        }
        if let Some(v) = pinf {
            if v <= opts.tol {
                return Ok(snapshot(Status::Infeasible, Some(v)));
            }
        }
        if let Some(v) = dinf {
            if v <= opts.tol {
                return Ok(snapshot(Status::Unbounded, Some(v)));
            }
        }
        let merit = pres.max(dres).max(gap / scale);
        if merit.is_finite() && merit < best_merit {
            best_merit = merit;
            last = Some(snapshot(Status::MaxIter, None));
        } else if best_merit < 1e-5 && !(merit < 1e4 * best_merit) {
            return Ok(numerical(last));
        }
        if iter == opts.max_iter {
            break;
        }

        // Newton systems.
        let wis: Vec<DMatrix<f64>> = scal.iter().map(Scaling::w_inv_sq).collect();
        let wns: Vec<DMatrix<f64>> = scal.iter().map(Scaling::w_sq).collect();
        let Some(fac) = ipm.factor(ipm.build_h(&wis)) else {
            return Ok(numerical(last));
        };
        let zero_bz: Vec<DMatrix<f64>> = block_sizes.iter().map(|&s| DMatrix::zeros(s, s)).collect();
        let Some((vx, vy, vz)) = ipm.kkt_solve(&fac, &wis, &wns, &(-&ipm.c), &ipm.b, &zero_bz) else {
            return Ok(numerical(last));
        };
        let denom = ipm.c.dot(&vx) + ipm.b.dot(&vy) - kappa / tau;

        let lam_sq: Vec<DMatrix<f64>> = scal
            .iter()
            .map(|w| DMatrix::from_diagonal(&w.lambda.map(|l| l * l)))
            .collect();

        // Returns (dx, dy, dz, dtau, dkappa, ds_scaled, dz_scaled).
        type Dir = (
            DVector<f64>,
            DVector<f64>,
            Vec<DMatrix<f64>>,
            f64,
            f64,
            Vec<DMatrix<f64>>,
            Vec<DMatrix<f64>>,
        );
        let direction = |sigma: f64, bs: &[DMatrix<f64>], bkappa: f64| -> Option<Dir> {
            let f = 1.0 - sigma;
            let lsb: Vec<DMatrix<f64>> = scal.iter().zip(bs).map(|(w, m)| w.lambda_solve(m)).collect();
            let bx = &rx * (-f);
            let by_ = &ry * (-f);
            let bz: Vec<DMatrix<f64>> = rz
                .iter()
                .zip(scal.iter().zip(&lsb))
                .map(|(r, (w, l))| r * (-f) - w.unscale_s(l))
                .collect();
            let (ux, uy, uz) = ipm.kkt_solve(&fac, &wis, &wns, &bx, &by_, &bz)?;
            let dtau = (-f * rt - bkappa / tau - ipm.c.dot(&ux) - ipm.b.dot(&uy)) / denom;
            let dx = &ux + &vx * dtau;
            let dy = &uy + &vy * dtau;
            let dz: Vec<DMatrix<f64>> = uz.iter().zip(&vz).map(|(u, v)| u + v * dtau).collect();
            let dkappa = (bkappa - kappa * dtau) / tau;
            let dzt: Vec<DMatrix<f64>> = scal.iter().zip(&dz).map(|(w, d)| w.scale_z(d)).collect();
            let dst: Vec<DMatrix<f64>> = lsb.iter().zip(&dzt).map(|(l, d)| l - d).collect();
            Some((dx, dy, dz, dtau, dkappa, dst, dzt))
        };
        let max_step = |dtau: f64, dkappa: f64, dst: &[DMatrix<f64>], dzt: &[DMatrix<f64>]| -> f64 {
            let mut a = f64::INFINITY;
            if dtau < 0.0 {
                a = a.min(-tau / dtau);
            }
            if dkappa < 0.0 {
                a = a.min(-kappa / dkappa);
            }
            for (w, (ds, dz)) in scal.iter().zip(dst.iter().zip(dzt)) {
                a = a.min(w.max_step(ds)).min(w.max_step(dz));
            }
            a
        };

        // Predictor.
        let bs_aff: Vec<DMatrix<f64>> = lam_sq.iter().map(|m| -m).collect();
        let Some((_, _, _, dtau_a, dkappa_a, dst_a, dzt_a)) =
            direction(0.0, &bs_aff, -tau * kappa)
        else {
            return Ok(numerical(last));
        };
        let alpha_aff = max_step(dtau_a, dkappa_a, &dst_a, &dzt_a).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);

        // Corrector.
        let bs: Vec<DMatrix<f64>> = lam_sq
            .iter()
            .zip(dst_a.iter().zip(&dzt_a))
            .map(|(l2, (ds, dz))| {
                let mut m = -l2 - jordan(ds, dz);
                for i in 0..m.nrows() {
                    m[(i, i)] += sigma * mu;
                }
                m
            })
            .collect();
        let bkappa = -tau * kappa + sigma * mu - dtau_a * dkappa_a;
        let Some((dx, dy, dz, dtau, dkappa, dst, dzt)) = direction(sigma, &bs, bkappa) else {
            return Ok(numerical(last));
        };
        let alpha = (0.99 * max_step(dtau, dkappa, &dst, &dzt)).min(1.0);
        if !(alpha > 1e-12) {
            return Ok(numerical(last));
        }

        x.axpy(alpha, &dx, 1.0);
        y.axpy(alpha, &dy, 1.0);
        tau += alpha * dtau;
        kappa += alpha * dkappa;
        let fdx = ipm.f_apply(&dx);
        let mut new_scal = Vec::with_capacity(nb);
        for (j, w) in scal.iter().enumerate() {
            let lam = DMatrix::from_diagonal(&w.lambda);
            let st = &lam + &dst[j] * alpha;
            let zt = &lam + &dzt[j] * alpha;
            let st = (&st + st.transpose()) * 0.5;
            let zt = (&zt + zt.transpose()) * 0.5;
            let exact = &ss[j] + (&fdx[j] - &rz[j] * (1.0 - sigma)) * alpha;
            let exact = (&exact + exact.transpose()) * 0.5;
            ss[j] = if exact.clone().cholesky().is_some() {
                exact
            } else {
                let m = &ss[j] + w.unscale_s(&dst[j]) * alpha;
                (&m + m.transpose()) * 0.5
            };
            zs[j] += &dz[j] * alpha;
            zs[j] = (&zs[j] + zs[j].transpose()) * 0.5;
            let (Some(l1), Some(l2)) = (st.cholesky(), zt.cholesky()) else {
                return Ok(numerical(last));
            };
            match Scaling::from_factors(&l1.l(), &l2.l(), Some(w)) {
                Some(nw) => new_scal.push(nw),
                None => return Ok(numerical(last)),
            }
        }
        scal = new_scal;
    }
    Ok(last.expect("at least one iteration recorded"))
}

fn numerical(last: Option<ConicSolution>) -> ConicSolution {
    let mut s = last.expect("residuals computed before any step");
    s.status = Status::NumericalFailure;
    s
}
