use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use jointmarg::algo::{algo1, algo2, global_intervals, maxcut_maxgap, shor_bound, AlgoConfig};
use jointmarg::bench::{
    brute_force_maxcut, brute_force_value_at, catalog, gen_concave_qp, gen_maxcut, probability_nodes,
    rescale_to_unit_box,
};
use jointmarg::bounds::{projection_polytope, projection_sdp};
use jointmarg::conic::{self, min_eigenvalue, SolverOptions, Status};
use jointmarg::localopt::{refine, RefineOptions, FEAS_TOL};
use jointmarg::moments::{
    apply, localizing_matrix_map, moment_matrix_map, uniform_moments, Interval, MomentVector,
};
use jointmarg::poly::Polynomial;
use jointmarg::relax::{build_parametric, build_standard, solve_relaxation, SemialgebraicProblem};
use jointmarg::univar::{horner, minimize_on_interval};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn poly(n: usize, t: &[(f64, &[u32])]) -> Polynomial {
    Polynomial::from_terms(n, t.iter().map(|(c, e)| (*c, e.to_vec()))).unwrap()
}

fn disk() -> Polynomial {
    poly(2, &[(1.0, &[0, 0]), (-1.0, &[2, 0]), (-1.0, &[0, 2])])
}

fn interval() -> impl Strategy<Value = Interval> {
    (-10.0f64..10.0, -10.0f64..10.0)
        .prop_filter("proper", |(a, b)| (a - b).abs() > 1e-3)
        .prop_map(|(a, b)| Interval::new(a.min(b), a.max(b)))
}

/// Random quadratic on `n` variables with coefficients in `[-1, 1]`.
fn quadratic(n: usize) -> impl Strategy<Value = Polynomial> {
    let nterms = 1 + n + n * (n + 1) / 2;
    proptest::collection::vec(-1.0f64..1.0, nterms).prop_map(move |c| {
        let mut terms = vec![(c[0], vec![0u32; n])];
        let mut idx = 1;
        for i in 0..n {
            let mut e = vec![0u32; n];
            e[i] = 1;
            terms.push((c[idx], e));
            idx += 1;
        }
        for i in 0..n {
            for j in i..n {
                let mut e = vec![0u32; n];
                e[i] += 1;
                e[j] += 1;
                terms.push((c[idx], e));
                idx += 1;
            }
        }
        Polynomial::from_terms(n, terms).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn uniform_moments_match_quadrature(iv in interval()) {
        let rule = GaussLegendre::new(NonZeroUsize::new(64).unwrap());
        let beta = uniform_moments(iv, 20).unwrap();
        for (l, b) in beta.iter().enumerate() {
            let q: f64 = rule
                .iter()
                .map(|(x, w)| 0.5 * w * (iv.mid() + 0.5 * iv.width() * x).powi(l as i32))
                .sum();
            // Scaled by the largest |x|^l on the interval.
            let scale = iv.lo.abs().max(iv.hi.abs()).powi(l as i32).max(1.0);
            prop_assert!((q - b).abs() <= 1e-12 * scale, "l={} q={} b={}", l, q, b);
        }
    }

    #[test]
    fn dirac_moment_matrix_and_localizer(x in proptest::collection::vec(-1.2f64..1.2, 2), i in 1usize..=3) {
        let z = MomentVector::dirac(&x, 2 * i);
        let m = apply(&moment_matrix_map(2, i), &z).unwrap();
        prop_assert!(min_eigenvalue(&m) >= -1e-9);
        let g = disk();
        let gx = g.evaluate(&x).unwrap();
        let loc = apply(&localizing_matrix_map(&g, i - 1), &z).unwrap();
        // M_{i-1}(g z) = g(x) v v' for the monomial vector v.
        let v = apply(&moment_matrix_map(2, i - 1), &MomentVector::dirac(&x, 2 * (i - 1))).unwrap();
        let diff = (&loc - &v * gx).abs().max();
        prop_assert!(diff <= 1e-9 * (1.0 + loc.abs().max()));
        if gx >= 0.0 {
            prop_assert!(min_eigenvalue(&loc) >= -1e-9);
        }
    }

    #[test]
    fn mixtures_in_disk_are_psd(
        pts in proptest::collection::vec((0.0f64..1.0, 0.0f64..std::f64::consts::TAU), 1..6),
        w in proptest::collection::vec(0.01f64..1.0, 6),
    ) {
        let points: Vec<Vec<f64>> = pts.iter().map(|(r, t)| vec![r * t.cos(), r * t.sin()]).collect();
        let total: f64 = w[..points.len()].iter().sum();
        let weights: Vec<f64> = w[..points.len()].iter().map(|v| v / total).collect();
        let z = MomentVector::mixture(&points, &weights, 4);
        prop_assert!(min_eigenvalue(&apply(&moment_matrix_map(2, 2), &z).unwrap()) >= -1e-9);
        prop_assert!(min_eigenvalue(&apply(&localizing_matrix_map(&disk(), 1), &z).unwrap()) >= -1e-9);
    }

    #[test]
    fn univariate_minimum_is_sound(
        coeffs in proptest::collection::vec(-3.0f64..3.0, 1..=9),
        iv in interval(),
        samples in proptest::collection::vec(0.0f64..=1.0, 1000),
    ) {
        let m = minimize_on_interval(&coeffs, iv).unwrap();
        for t in samples {
            let x = iv.lo + t * iv.width();
            let px = horner(&coeffs, x);
            prop_assert!(m.value <= px + 1e-9 * px.abs().max(1.0));
        }
    }

    #[test]
    fn rescale_round_trip(
        boxes in proptest::collection::vec((-500.0f64..500.0, 0.01f64..500.0), 1..=5),
        t in proptest::collection::vec(0.0f64..=1.0, 5),
    ) {
        let n = boxes.len();
        let bounds: Vec<Interval> = boxes.iter().map(|(lo, w)| Interval::new(*lo, lo + w)).collect();
        let prob = SemialgebraicProblem::new(Polynomial::var(n, 0), vec![])
            .unwrap()
            .with_box_constraints(bounds.clone())
            .unwrap();
        let (scaled, map) = rescale_to_unit_box(&prob).unwrap();
        let x: Vec<f64> = bounds.iter().zip(&t).map(|(b, t)| b.lo + t * b.width()).collect();
        let u = map.to_unit(&x);
        prop_assert!(u.iter().all(|v| v.abs() <= 1.0 + 1e-12));
        let back = map.to_original(&u);
        for (a, b) in x.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        let (fx, fu) = (prob.objective(&x).unwrap(), scaled.objective(&u).unwrap());
        prop_assert!((fx - fu).abs() <= 1e-9 * fx.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn relaxations_satisfy_weak_duality_and_psd(f in quadratic(2), i in 1usize..=2) {
        let prob = SemialgebraicProblem::new(f, vec![disk()]).unwrap();
        let relax = build_standard(&prob, i).unwrap();
        let opts = SolverOptions::default();
        let a = conic::solve(&relax.program, &opts).unwrap();
        prop_assert_eq!(a.status, Status::Optimal);
        prop_assert!(a.dual_obj <= a.primal_obj + 1e-7);
        for b in &relax.program.psd_blocks {
            prop_assert!(min_eigenvalue(&b.apply(&a.primal_z).unwrap()) >= -1e-8);
        }
        let b = conic::solve(&relax.program, &opts).unwrap();
        prop_assert_eq!(a.status, b.status);
        prop_assert!((a.primal_obj - b.primal_obj).abs() <= 1e-10);
        prop_assert!((a.dual_obj - b.dual_obj).abs() <= 1e-10);
    }

    #[test]
    fn parametric_values_stay_below_value_function(f in quadratic(2)) {
        let prob = SemialgebraicProblem::new(f, vec![disk()]).unwrap();
        let iv = Interval::new(-1.0, 1.0);
        let nodes = probability_nodes(iv, 41);
        let ys: Vec<f64> = nodes.iter().map(|n| n.0).collect();
        let oracle = brute_force_value_at(&prob, 0, &ys).unwrap();
        let integral: f64 = nodes.iter().zip(&oracle).map(|((_, w), j)| w * j).sum();
        let mut running = vec![f64::NEG_INFINITY; ys.len()];
        let mut last = f64::NEG_INFINITY;
        for i in 1..=3 {
            let res = solve_relaxation(&build_parametric(&prob, 0, iv, i).unwrap(), &SolverOptions::default()).unwrap();
            prop_assert_eq!(res.status, Status::Optimal);
            prop_assert!(res.dual_value <= res.primal_value + 1e-7);
            prop_assert!(res.primal_value >= last - 1e-7);
            prop_assert!(res.primal_value <= integral + 1e-4);
            last = res.primal_value;
            let vp = res.value_poly.unwrap();
            for (j, (&y, &jy)) in ys.iter().zip(&oracle).enumerate() {
                let p = vp.eval(y);
                running[j] = running[j].max(p);
                prop_assert!(running[j] >= p);
                prop_assert!(running[j] <= jy + 1e-6, "y={} p={} J={}", y, running[j], jy);
            }
        }
    }

    #[test]
    fn sdp_projection_contains_polytope_projection(
        cuts in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, 0.2f64..1.0), 1..=3),
        k in 0usize..2,
    ) {
        let mut cons = Vec::new();
        for (a, b, c) in &cuts {
            cons.push(poly(2, &[(*c, &[0, 0]), (-a, &[1, 0]), (-b, &[0, 1])]));
        }
        let prob = SemialgebraicProblem::new(Polynomial::var(2, 0), cons)
            .unwrap()
            .with_box_constraints(vec![Interval::new(-1.0, 1.0); 2])
            .unwrap();
        let lp = projection_polytope(&prob, k).unwrap();
        let sdp = projection_sdp(&prob, k, 1).unwrap();
        prop_assert!(sdp.lo <= lp.lo + 1e-9 && sdp.hi >= lp.hi - 1e-9);
        prop_assert!((sdp.width() - lp.width()).abs() <= 1e-6);
        prop_assert!(sdp.lo >= -1.0 && sdp.hi <= 1.0);
    }

    #[test]
    fn maxcut_cost_above_shor_bound(n in 3usize..=6, seed in 0u64..1000) {
        let inst = gen_maxcut(n, 0.6, seed).unwrap();
        let cfg = AlgoConfig::with_order(1);
        let cost = maxcut_maxgap(&inst.q, &cfg).unwrap().cut.cost;
        let f1 = shor_bound(&inst.q, &cfg.solver).unwrap();
        let (opt, _) = brute_force_maxcut(&inst.q).unwrap();
        prop_assert!(cost >= f1 - 1e-6);
        prop_assert!(cost >= opt);
    }

    #[test]
    fn algorithms_are_deterministic_and_stay_in_intervals(n in 2usize..=4, seed in 0u64..1000) {
        let qp = gen_concave_qp(n, 2, seed).unwrap();
        let cfg = AlgoConfig::with_order(1);
        let a = algo2(&qp.problem, &cfg).unwrap();
        let b = algo2(&qp.problem, &cfg).unwrap();
        prop_assert_eq!(a.to_report(), b.to_report());
        prop_assert!(a.residual <= 1e-6);
        for s in &a.steps {
            prop_assert!(s.interval.contains(s.value, 1e-12));
        }
        let ivs = global_intervals(&qp.problem, 1).unwrap();
        let c = algo1(&qp.problem, &ivs, &cfg).unwrap();
        let d = algo1(&qp.problem, &ivs, &cfg).unwrap();
        prop_assert_eq!(c.to_report(), d.to_report());
        for s in &c.steps {
            prop_assert!(s.interval.contains(s.value, 1e-12));
        }
    }

    #[test]
    fn refinement_is_feasible_and_improves(f in quadratic(2), x0 in proptest::collection::vec(-1.0f64..1.0, 2)) {
        let prob = SemialgebraicProblem::new(f, vec![disk()]).unwrap();
        let r = refine(&prob, &x0, &RefineOptions::default()).unwrap();
        prop_assert!(r.residual <= FEAS_TOL);
        prop_assert!(r.value <= r.first_feasible_value + 1e-9);
    }
}

#[test]
fn guard_present_with_full_bounds() {
    let prob = SemialgebraicProblem::new(Polynomial::var(2, 0), vec![])
        .unwrap()
        .with_box_constraints(vec![Interval::new(-1.0, 2.0), Interval::new(0.0, 3.0)])
        .unwrap();
    let ball = prob.ball_constraint().unwrap();
    assert_eq!(ball, poly(2, &[(13.0, &[0, 0]), (-1.0, &[2, 0]), (-1.0, &[0, 2])]));
    assert_eq!(prob.guard_constraints().len(), 3);
    let free = SemialgebraicProblem::new(Polynomial::var(2, 0), vec![disk()]).unwrap();
    assert!(free.ball_constraint().is_none());
}

#[test]
fn oracle_consistent_with_catalog_optima() {
    for e in catalog() {
        for k in 0..e.problem.n {
            let iv = e.intervals[k];
            let ys: Vec<f64> = (0..=40).map(|j| iv.lo + iv.width() * j as f64 / 40.0).collect();
            let js = brute_force_value_at(&e.problem, k, &ys).unwrap();
            let min = js.iter().copied().fold(f64::INFINITY, f64::min);
            assert!(min >= e.optimum - 1e-4, "{} k={k}: {min} < {}", e.name, e.optimum);
            assert!(min <= e.optimum + 1e-2, "{} k={k}: {min} far above {}", e.name, e.optimum);
            for (y, j) in ys.iter().zip(&js) {
                let exact = (e.value_function)(k, *y);
                if exact.is_finite() {
                    assert!((j - exact).abs() <= 1e-4, "{} k={k} y={y}: {j} vs {exact}", e.name);
                } else {
                    assert!(j.is_infinite());
                }
            }
        }
    }
}

#[test]
fn maxcut_generator_snapshot() {
    let inst = gen_maxcut(12, 0.5, 7).unwrap();
    assert_eq!(inst.edge_count(), 37);
    let first: Vec<usize> = (0..12).filter(|&j| inst.q[(0, j)] == 1.0).collect();
    assert_eq!(&first[..4], &[1, 2, 5, 6]);
    let q = &inst.q;
    assert_eq!(q, &q.transpose());
    assert!((0..12).all(|i| q[(i, i)] == 0.0));
}

#[test]
fn brute_force_matches_independent_enumeration() {
    // Optima from a separate exhaustive enumeration of the same generator.
    for (seed, edges, opt) in [(700u64, 35usize, -34.0), (701, 33, -26.0), (702, 39, -34.0)] {
        let inst = gen_maxcut(12, 0.5, seed).unwrap();
        assert_eq!(inst.edge_count(), edges);
        let (v, s) = brute_force_maxcut(&inst.q).unwrap();
        assert_eq!(v, opt);
        assert_eq!(*s.last().unwrap(), 1);
        let q = DMatrix::from_fn(12, 12, |i, j| inst.q[(i, j)]);
        let x: Vec<f64> = s.iter().map(|&v| f64::from(v)).collect();
        let direct: f64 = (0..12).flat_map(|i| (0..12).map(move |j| (i, j))).map(|(i, j)| q[(i, j)] * x[i] * x[j]).sum();
        assert_eq!(direct, opt);
    }
}
