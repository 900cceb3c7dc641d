//! Acceptance criteria, one pass/fail line each.
//!
//! Runs as a plain binary so the summary lines are always printed. Exits
//! non-zero if any criterion fails.

use std::num::NonZeroUsize;
use std::time::{Duration, Instant};

use gauss_quad::legendre::GaussLegendre;
use jointmarg::algo::{algo1, algo2, global_intervals, maxcut_maxgap, shor_bound, AlgoConfig};
use jointmarg::bench::{
    self, brute_force_maxcut, brute_force_value_at, catalog, gen_concave_qp, report_maxcut_batch,
    report_value_function, uniform_grid,
};
use jointmarg::conic::{self, ConicProgram, SolverOptions, Status};
use jointmarg::moments::{uniform_moments, AffineMatrixMap, Interval, LinearForm};
use jointmarg::poly::Polynomial;
use jointmarg::relax::{build_parametric, build_standard, solve_relaxation, SemialgebraicProblem};
use jointmarg::univar::horner;
use nalgebra::DMatrix;
use rand_xoshiro::rand_core::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

struct Outcome {
    pass: bool,
    detail: String,
}

fn uniform(rng: &mut SplitMix64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * ((rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64)
}

fn poly(n: usize, t: &[(f64, &[u32])]) -> Polynomial {
    Polynomial::from_terms(n, t.iter().map(|(c, e)| (*c, e.to_vec()))).unwrap()
}

fn lf(t: &[(usize, f64)]) -> LinearForm {
    LinearForm::normalized(t.to_vec())
}

// 1. Uniform moments against Gauss-Legendre quadrature.
fn uniform_moment_check() -> Outcome {
    const TOL: f64 = 1e-12;
    let rule = GaussLegendre::new(NonZeroUsize::new(12).unwrap());
    let mut rng = SplitMix64::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let a = uniform(&mut rng, -2.0, 2.0);
        let b = uniform(&mut rng, -2.0, 2.0);
        let iv = Interval::new(a.min(b), a.max(b) + 1e-3);
        let beta = uniform_moments(iv, 20).unwrap();
        for (l, &bl) in beta.iter().enumerate() {
            let q: f64 = rule
                .iter()
                .map(|(x, w)| 0.5 * w * (iv.mid() + 0.5 * iv.width() * x).powi(l as i32))
                .sum();
            worst = worst.max((q - bl).abs() / bl.abs().max(1.0));
        }
    }
    Outcome {
        pass: worst <= TOL,
        detail: format!("max scaled deviation {worst:.2e} (tol {TOL:.0e})"),
    }
}

/// `z_0 = 1` plus an objective.
fn program(nvar: usize, obj: &[(usize, f64)]) -> ConicProgram {
    let mut p = ConicProgram::new(nvar, lf(obj));
    p.add_equality(lf(&[(0, 1.0)]), 1.0);
    p
}

fn block(size: usize, f: impl Fn(usize, usize) -> Vec<(usize, f64)>) -> AffineMatrixMap {
    AffineMatrixMap::from_upper(size, |a, b| Ok(lf(&f(a, b)))).unwrap()
}

fn scalar(t: &[(usize, f64)]) -> AffineMatrixMap {
    AffineMatrixMap::scalar(lf(t))
}

fn boxed(f: Polynomial, lo: f64, hi: f64) -> SemialgebraicProblem {
    let n = f.nvars();
    SemialgebraicProblem::new(f, vec![])
        .unwrap()
        .with_box_constraints(vec![Interval::new(lo, hi); n])
        .unwrap()
}

fn disk(f: Polynomial) -> SemialgebraicProblem {
    SemialgebraicProblem::new(f, vec![poly(2, &[(1.0, &[0, 0]), (-1.0, &[2, 0]), (-1.0, &[0, 2])])]).unwrap()
}

fn relaxation(prob: &SemialgebraicProblem, order: usize) -> ConicProgram {
    build_standard(prob, order).unwrap().program
}

fn hand_verified_programs() -> Vec<(&'static str, ConicProgram, f64)> {
    let mut out = Vec::new();

    let mut p = program(2, &[(1, 1.0)]);
    p.add_block(block(2, |a, b| if a == b { vec![(0, 1.0)] } else { vec![(1, 1.0)] }));
    out.push(("2x2 moment block", p, -1.0));

    let mut p = program(2, &[(1, 1.0)]);
    p.add_block(scalar(&[(1, 1.0), (0, 1.0)]));
    p.add_block(scalar(&[(0, 5.0), (1, -1.0)]));
    out.push(("interval LP", p, -1.0));

    let mut p = program(2, &[(1, 1.0)]);
    p.add_block(block(2, |a, b| if a == b { vec![(0, 2.0)] } else { vec![(1, 1.0)] }));
    out.push(("|z1| <= 2", p, -2.0));

    out.push((
        "order-1 min x on [0,1]",
        relaxation(&boxed(poly(1, &[(1.0, &[1])]), 0.0, 1.0), 1),
        0.0,
    ));

    // z = (1, X11, X12, X22)
    let mut p = program(4, &[(1, 1.0), (3, 1.0)]);
    p.add_equality(lf(&[(2, 1.0)]), 1.0);
    p.add_block(block(2, |a, b| vec![(1 + a + b, 1.0)]));
    out.push(("min tr X, X12 = 1", p, 2.0));

    let mut p = program(3, &[(1, 1.0), (2, 1.0)]);
    p.add_block(scalar(&[(1, 1.0), (0, -1.0)]));
    p.add_block(scalar(&[(2, 1.0), (0, -2.0)]));
    out.push(("z1 >= 1, z2 >= 2", p, 3.0));

    let mut p = program(2, &[(1, 1.0)]);
    p.add_block(block(2, |a, b| {
        if a == b {
            vec![(1, 1.0), (0, -2.0)]
        } else {
            vec![(0, -1.0)]
        }
    }));
    out.push(("lambda_max [[2,1],[1,2]]", p, 3.0));

    // z = (1, X11, X12, X13, X22, X23, X33)
    let idx = |a: usize, b: usize| -> usize {
        let (a, b) = (a.min(b), a.max(b));
        [[1, 2, 3], [2, 4, 5], [3, 5, 6]][a][b]
    };
    let mut p = program(7, &[(1, 2.0), (4, 2.0), (6, 2.0), (2, -2.0), (5, -2.0)]);
    p.add_equality(lf(&[(1, 1.0), (4, 1.0), (6, 1.0)]), 1.0);
    p.add_block(block(3, |a, b| vec![(idx(a, b), 1.0)]));
    out.push(("lambda_min tridiag(-1,2,-1)", p, 2.0 - 2f64.sqrt()));

    out.push(("disk, min x2", relaxation(&disk(poly(2, &[(1.0, &[0, 1])])), 1), -1.0));
    out.push((
        "min x^2 on [-1,1]",
        relaxation(&boxed(poly(1, &[(1.0, &[2])]), -1.0, 1.0), 1),
        0.0,
    ));
    out.push((
        "min x1 x2 on [-1,1]^2",
        relaxation(&boxed(poly(2, &[(1.0, &[1, 1])]), -1.0, 1.0), 1),
        -1.0,
    ));

    let q = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    let (mc, _) = jointmarg::algo::maxcut_problem(&q, &[None, None]).unwrap();
    out.push(("MAXCUT n=2 Shor", relaxation(&mc, 1), -2.0));

    let mut p = program(3, &[(1, 1.0)]);
    p.add_equality(lf(&[(2, 1.0)]), 0.6);
    p.add_block(block(3, |a, b| match (a, b) {
        (x, y) if x == y => vec![(0, 1.0)],
        (0, 1) => vec![(1, 1.0)],
        (0, 2) => vec![(2, 1.0)],
        _ => vec![],
    }));
    out.push(("arrow matrix, z2 = 0.6", p, -0.8));

    out.push((
        "disk, min x1 + x2",
        relaxation(&disk(poly(2, &[(1.0, &[1, 0]), (1.0, &[0, 1])])), 1),
        -(2f64.sqrt()),
    ));
    out.push((
        "min (x-0.3)^2 on [0,1]",
        relaxation(&boxed(poly(1, &[(1.0, &[2]), (-0.6, &[1]), (0.09, &[0])]), 0.0, 1.0), 1),
        0.0,
    ));
    out.push((
        "min -x^2 on [-1,1]",
        relaxation(&boxed(poly(1, &[(-1.0, &[2])]), -1.0, 1.0), 1),
        -1.0,
    ));

    let mut p = program(3, &[(1, 2.0), (2, 3.0)]);
    p.add_equality(lf(&[(1, 1.0), (2, 1.0)]), 1.0);
    p.add_block(scalar(&[(1, 1.0)]));
    p.add_block(scalar(&[(2, 1.0)]));
    out.push(("LP 2a + 3b, a + b = 1", p, 2.0));

    let mut p = program(3, &[(1, 1.0), (2, 1.0)]);
    p.add_block(block(2, |a, b| if a == b { vec![(0, 1.0)] } else { vec![(1, 1.0)] }));
    p.add_block(block(2, |a, b| if a == b { vec![(0, 2.0)] } else { vec![(2, 1.0)] }));
    out.push(("two blocks", p, -3.0));

    out.push((
        "x^4 - x^2, order 2",
        relaxation(
            &SemialgebraicProblem::new(poly(1, &[(1.0, &[4]), (-1.0, &[2])]), vec![]).unwrap(),
            2,
        ),
        -0.25,
    ));
    out.push((
        "(x1-1)^2 + (x2+0.5)^2",
        relaxation(
            &SemialgebraicProblem::new(
                poly(
                    2,
                    &[(1.0, &[2, 0]), (-2.0, &[1, 0]), (1.0, &[0, 2]), (1.0, &[0, 1]), (1.25, &[0, 0])],
                ),
                vec![],
            )
            .unwrap(),
            1,
        ),
        0.0,
    ));
    out
}

// 2. Conic solver on programs with known optima.
fn conic_check() -> Outcome {
    const TOL: f64 = 1e-7;
    let progs = hand_verified_programs();
    let mut bad = Vec::new();
    let mut worst_err = 0.0f64;
    let mut worst_gap = 0.0f64;
    for (name, p, opt) in &progs {
        let s = conic::solve(p, &SolverOptions::default()).unwrap();
        let err = (s.primal_obj - opt).abs();
        let gap = (s.primal_obj - s.dual_obj).abs();
        if s.status == Status::Optimal {
            worst_err = worst_err.max(err);
            worst_gap = worst_gap.max(gap);
        }
        if s.status != Status::Optimal || err > TOL || gap > TOL {
            bad.push(format!("{name} ({} err {err:.1e} gap {gap:.1e})", s.status));
        }
    }
    Outcome {
        pass: progs.len() == 20 && bad.is_empty(),
        detail: format!(
            "{}/{} optimal within {TOL:.0e}; max error {worst_err:.1e}, max gap {worst_gap:.1e}{}",
            progs.len() - bad.len(),
            progs.len(),
            if bad.is_empty() { String::new() } else { format!("; failing: {}", bad.join(", ")) }
        ),
    }
}

// 3. Finite-order properties of the parametric hierarchy.
fn hierarchy_check() -> Outcome {
    const ORDERS: [usize; 3] = [1, 2, 3];
    let solver = SolverOptions::default();
    let mut failures = Vec::new();
    let mut cases = 0;
    let (mut max_viol, mut max_cert) = (f64::NEG_INFINITY, 0.0f64);
    let wanted = ["unit_disk", "box_sum_squares", "box_concave", "parameter_only", "shifted_square", "ball_sum"];
    for entry in catalog().into_iter().filter(|e| wanted.contains(&e.name)) {
        for k in 0..entry.problem.n {
            cases += 1;
            let iv = entry.intervals[k];
            let rep = report_value_function(&entry.problem, k, iv, &ORDERS, 41, &solver).unwrap();
            let grid = uniform_grid(iv, 101);
            let oracle = brute_force_value_at(&entry.problem, k, &grid).unwrap();
            let tag = format!("{} k={}", entry.name, k + 1);
            for (idx, row) in rep.rows.iter().enumerate() {
                if row.status != Status::Optimal {
                    failures.push(format!("{tag} order {}: {}", row.order, row.status));
                    continue;
                }
                let viol = grid
                    .iter()
                    .zip(&oracle)
                    .map(|(&y, &j)| horner(&row.coeffs, y) - j)
                    .fold(f64::NEG_INFINITY, f64::max);
                max_viol = max_viol.max(viol);
                max_cert = max_cert.max(row.certificate_residual);
                if viol > 1e-6 {
                    failures.push(format!("{tag} order {}: p - J = {viol:.1e}", row.order));
                }
                if row.certificate_residual > 1e-6 {
                    failures.push(format!(
                        "{tag} order {}: certificate {:.1e}",
                        row.order, row.certificate_residual
                    ));
                }
                if idx > 0 {
                    let prev = &rep.rows[idx - 1];
                    if row.rho < prev.rho - 1e-7 {
                        failures.push(format!("{tag} order {}: rho decreased", row.order));
                    }
                    if row.l1_error > prev.l1_error + 1e-6 {
                        failures.push(format!("{tag} order {}: L1 error increased", row.order));
                    }
                }
            }
        }
    }
    Outcome {
        pass: failures.is_empty(),
        detail: format!(
            "{cases} (problem, coordinate) cases x orders 1-3; max p-J {max_viol:.1e}, max certificate residual {max_cert:.1e}{}",
            if failures.is_empty() { String::new() } else { format!("; failing: {}", failures.join(", ")) }
        ),
    }
}

// 4. ALGO 2 on concave quadratics over polytopes.
fn algo2_check() -> Outcome {
    let cfg = AlgoConfig {
        refine: true,
        ..AlgoConfig::with_order(1)
    };
    let mut within = 0;
    let mut infeasible = 0;
    let mut errors = Vec::new();
    let mut rels = Vec::new();
    for i in 0..20u64 {
        let n = 2 + (i as usize % 5);
        let qp = gen_concave_qp(n, 2, 1000 + i).unwrap();
        match algo2(&qp.problem, &cfg) {
            Ok(tr) => {
                if tr.residual > 1e-6 {
                    infeasible += 1;
                }
                let value = tr.refined.as_ref().map_or(f64::INFINITY, |r| r.value);
                let rel = (value - qp.optimum).abs() / qp.optimum.abs().max(1e-12);
                rels.push(rel);
                if rel <= 0.05 {
                    within += 1;
                }
            }
            Err(e) => errors.push(format!("instance {i}: {e}")),
        }
    }
    let worst = rels.iter().copied().fold(0.0, f64::max);
    Outcome {
        pass: within >= 18 && infeasible == 0 && errors.is_empty(),
        detail: format!(
            "{within}/20 refined within 5% (worst {:.1}%), {infeasible} infeasible outputs{}",
            100.0 * worst,
            if errors.is_empty() { String::new() } else { format!("; errors: {}", errors.join(", ")) }
        ),
    }
}

// 5. ALGO 1 with dichotomy on a disconnected feasible set.
fn dichotomy_check() -> Outcome {
    const ORDER: usize = 3;
    let entry = bench::catalog_entry("split_strip").unwrap();
    let prob = &entry.problem;
    let whole = solve_relaxation(&build_parametric(prob, 0, Interval::new(-1.0, 1.0), ORDER).unwrap(), &SolverOptions::default())
        .unwrap()
        .status;
    let cfg = AlgoConfig {
        refine: true,
        ..AlgoConfig::with_order(ORDER)
    };
    let run = global_intervals(prob, ORDER).and_then(|ivs| algo1(prob, &ivs, &cfg));
    match run {
        Ok(tr) => {
            let path = &tr.steps[0].dichotomy_path;
            let refined = tr.refined.as_ref().map_or(f64::INFINITY, |r| r.residual);
            let pass = whole == Status::Infeasible && path.len() > 1 && refined <= 1e-6;
            let path_s: Vec<String> = path.iter().map(|iv| format!("[{},{}]", iv.lo, iv.hi)).collect();
            Outcome {
                pass,
                detail: format!(
                    "order {ORDER}: relaxation on [-1,1] {whole}; dichotomy {}; x = ({:.4}, {:.4}), refined residual {refined:.1e}",
                    path_s.join(" -> "),
                    tr.x[0],
                    tr.x[1]
                ),
            }
        }
        Err(e) => Outcome {
            pass: false,
            detail: format!("run failed: {e}"),
        },
    }
}

// 6. Max-gap rounding on tiny MAXCUT instances.
fn tiny_maxcut_check() -> Outcome {
    let cfg = AlgoConfig::with_order(1);
    let mut rng = SplitMix64::seed_from_u64(6);
    let mut exact = 0;
    let mut below_shor = 0;
    let mut errors = 0;
    for i in 0..50 {
        let n = 2 + i % 3;
        let mut q = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in a + 1..n {
                let v = (rng.next_u64() % 3) as f64 - 1.0;
                q[(a, b)] = v;
                q[(b, a)] = v;
            }
        }
        let (opt, _) = brute_force_maxcut(&q).unwrap();
        match (maxcut_maxgap(&q, &cfg), shor_bound(&q, &cfg.solver)) {
            (Ok(tr), Ok(f1)) => {
                if (tr.cut.cost - opt).abs() < 1e-9 {
                    exact += 1;
                }
                if tr.cut.cost < f1 - 1e-6 {
                    below_shor += 1;
                }
            }
            _ => errors += 1,
        }
    }
    Outcome {
        pass: exact >= 48 && below_shor == 0 && errors == 0,
        detail: format!("{exact}/50 optimal, {below_shor} below the Shor bound, {errors} errors"),
    }
}

// 7. Relative gaps on n = 12 random graphs.
fn maxcut_batch_check() -> Outcome {
    const SHOR_CEIL: f64 = 0.15;
    const OPT_CEIL: f64 = 0.08;
    match report_maxcut_batch(12, 30, 0.5, 700, &AlgoConfig::with_order(1)) {
        Ok(b) => {
            let shor = b.mean_rel_gap_shor();
            let opt = b.mean_rel_gap_opt().unwrap_or(f64::INFINITY);
            Outcome {
                pass: shor <= SHOR_CEIL && opt <= OPT_CEIL,
                detail: format!(
                    "mean (rho-f1)/|f1| = {:.2}% (ceiling {:.0}%), mean (rho-opt)/|opt| = {:.2}% (ceiling {:.0}%)",
                    100.0 * shor,
                    100.0 * SHOR_CEIL,
                    100.0 * opt,
                    100.0 * OPT_CEIL
                ),
            }
        }
        Err(e) => Outcome {
            pass: false,
            detail: format!("batch failed: {e}"),
        },
    }
}

fn csv_bytes(threads: usize) -> Vec<Vec<u8>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let mut out = Vec::new();
        let entry = bench::catalog_entry("split_strip").unwrap();
        let cfg = AlgoConfig {
            refine: true,
            ..AlgoConfig::with_order(2)
        };
        let ivs = global_intervals(&entry.problem, 2).unwrap();
        let tr = algo1(&entry.problem, &ivs, &cfg).unwrap();
        let mut buf = Vec::new();
        bench::write_trace_csv(&tr, &mut buf).unwrap();
        out.push(buf);

        let qp = gen_concave_qp(4, 2, 3).unwrap();
        let tr = algo2(&qp.problem, &cfg).unwrap();
        let mut buf = Vec::new();
        bench::write_trace_csv(&tr, &mut buf).unwrap();
        out.push(buf);

        let disk = bench::catalog_entry("unit_disk").unwrap();
        let rep = report_value_function(&disk.problem, 0, disk.intervals[0], &[1, 2], 21, &SolverOptions::default())
            .unwrap();
        let mut buf = Vec::new();
        bench::write_value_function_csv(&rep, &mut buf).unwrap();
        out.push(buf);

        let batch = report_maxcut_batch(8, 6, 0.5, 42, &AlgoConfig::with_order(1)).unwrap();
        let mut buf = Vec::new();
        bench::write_maxcut_csv(&batch, &mut buf).unwrap();
        out.push(buf);
        out
    })
}

// 8. Byte-identical CSV across reruns and thread counts.
fn determinism_check() -> Outcome {
    let a = csv_bytes(1);
    let b = csv_bytes(1);
    let c = csv_bytes(4);
    let same = a == b && a == c;
    let bytes: usize = a.iter().map(Vec::len).sum();
    Outcome {
        pass: same,
        detail: format!(
            "{} CSV tables ({bytes} bytes) {} across reruns and 1 vs 4 threads",
            a.len(),
            if same { "identical" } else { "DIFFER" }
        ),
    }
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 8] = [
        ("uniform moments", Duration::from_secs(1), uniform_moment_check),
        ("conic solver", Duration::from_secs(10), conic_check),
        ("hierarchy properties", Duration::from_secs(120), hierarchy_check),
        ("ALGO 2 on convex sets", Duration::from_secs(300), algo2_check),
        ("ALGO 1 with dichotomy", Duration::from_secs(30), dichotomy_check),
        ("MAXCUT n <= 4", Duration::from_secs(30), tiny_maxcut_check),
        ("MAXCUT n = 12 batch", Duration::from_secs(600), maxcut_batch_check),
        ("CSV determinism", Duration::from_secs(600), determinism_check),
    ];
    let mut failed = 0;
    for (i, (name, limit, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = check();
        let el = t.elapsed();
        let pass = o.pass && el <= *limit;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {} [{}] {name}: {} ({:.2}s, limit {}s)",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            el.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
