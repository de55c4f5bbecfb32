//! Acceptance suite: one test per criterion, each printing a pass line with
//! its runtime. Tolerances are pinned in the assertions.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use robinp::*;

/// Smallest positive root of w tan(w/2) = 1, bisected to 1e-12. For the unit
/// interval with unit Robin coefficient at p = 2, lambda1 = w^2 with
/// eigenfunction cos(w (x - 1/2)).
fn transcendental_omega() -> f64 {
    let f = |w: f64| w * (w / 2.0).tan() - 1.0;
    let (mut lo, mut hi) = (1.0f64, 1.5f64);
    assert!(f(lo) < 0.0 && f(hi) > 0.0, "root must be bracketed");
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Finite-difference eigensolve oracle, independent of the minimization path:
/// discretize -u'' = lambda u on (0, 1) with second-order ghost-node
/// elimination of the Robin conditions -u'(0) + u(0) = 0, u'(1) + u(1) = 0,
/// symmetrize with the trapezoid weights, and take the smallest eigenvalue of
/// the resulting symmetric tridiagonal pencil by Sturm-sequence bisection.
fn fd_robin_lambda1(n: usize) -> f64 {
    let h = 1.0 / n as f64;
    // A: tridiagonal stiffness-plus-boundary, M: trapezoid diagonal.
    let mut diag = vec![2.0 / h; n + 1];
    diag[0] = 1.0 / h + 1.0;
    diag[n] = 1.0 / h + 1.0;
    let off = vec![-1.0 / h; n];
    let mass: Vec<f64> = (0..=n)
        .map(|i| if i == 0 || i == n { h / 2.0 } else { h })
        .collect();

    // Symmetrized standard form T = M^{-1/2} A M^{-1/2}.
    let t_diag: Vec<f64> = (0..=n).map(|i| diag[i] / mass[i]).collect();
    let t_off: Vec<f64> = (0..n)
        .map(|i| off[i] / (mass[i] * mass[i + 1]).sqrt())
        .collect();

    // Sturm count: eigenvalues below mu via the LDL^T sign sequence.
    let count_below = |mu: f64| -> usize {
        let mut count = 0;
        let mut d = t_diag[0] - mu;
        if d < 0.0 {
            count += 1;
        }
        for i in 1..=n {
            if d == 0.0 {
                d = f64::MIN_POSITIVE;
            }
            d = t_diag[i] - mu - t_off[i - 1] * t_off[i - 1] / d;
            if d < 0.0 {
                count += 1;
            }
        }
        count
    };

    let gersh = t_diag
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let mut r = 0.0;
            if i > 0 {
                r += t_off[i - 1].abs();
            }
            if i < n {
                r += t_off[i].abs();
            }
            d + r
        })
        .fold(0.0f64, f64::max);
    let (mut lo, mut hi) = (0.0f64, gersh);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if count_below(mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn example_params_p2() -> ExampleReactionParams {
    ExampleReactionParams {
        eta: 2.5,
        theta: 1.0,
        q: 1.05,
        tau: 1.05,
        r: 3.0,
        p: 2.0,
    }
}

fn report(criterion: &str, start: Instant, budget_secs: f64) {
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        elapsed <= budget_secs,
        "{criterion}: runtime {elapsed:.2}s exceeds budget {budget_secs}s"
    );
    println!("{criterion}: PASS ({elapsed:.2}s)");
}

#[test]
fn criterion_01_neumann_degeneration() {
    let start = Instant::now();
    let meshes = [
        build_interval_mesh(0.0, 1.0, 256).unwrap(),
        build_rectangle_mesh(1.0, 1.0, 32, 32).unwrap(),
    ];
    for p in [2.0, 3.0] {
        for mesh in &meshes {
            let spec = ProblemSpec::new(mesh.clone(), p, 0.0).unwrap();
            let pair = principal_eigenpair(&spec, &EigenOptions::default()).unwrap();
            assert!(
                pair.lambda1.abs() <= 1e-8,
                "p={p}: |lambda1| = {} above 1e-8",
                pair.lambda1.abs()
            );
            let mean = pair.u1.values().iter().sum::<f64>() / pair.u1.len() as f64;
            for v in pair.u1.values() {
                assert!(
                    (v - mean).abs() <= 1e-6 * mean.abs(),
                    "p={p}: eigenfunction deviates from its mean"
                );
            }
        }
    }
    report("criterion 1 (neumann degeneration)", start, 10.0);
}

#[test]
fn criterion_02_robin_eigenvalue_oracle() {
    let start = Instant::now();
    let omega = transcendental_omega();
    let exact = omega * omega;

    // Dual-oracle gate: the transcendental root and the finite-difference
    // eigensolve must agree to 1e-6 relative before either is used.
    let fd = fd_robin_lambda1(4096);
    assert!(
        (fd - exact).abs() <= 1e-6 * exact,
        "oracles disagree: fd {fd:.12e} vs root {exact:.12e}"
    );

    let sizes = [64usize, 128, 256, 512, 1024];
    let mut errors = Vec::new();
    for &n in &sizes {
        let mesh = build_interval_mesh(0.0, 1.0, n).unwrap();
        let spec = ProblemSpec::new(mesh, 2.0, 1.0).unwrap();
        let pair = principal_eigenpair(&spec, &EigenOptions::default()).unwrap();
        errors.push((pair.lambda1 - exact).abs());
    }
    let rel_finest = errors.last().unwrap() / exact;
    assert!(
        rel_finest <= 1e-4,
        "n=1024 eigenvalue off by {rel_finest:.3e} relative"
    );

    // Least-squares slope of ln(error) against ln(h): second order observed.
    let lh: Vec<f64> = sizes.iter().map(|&n| (1.0 / n as f64).ln()).collect();
    let le: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let mh = lh.iter().sum::<f64>() / lh.len() as f64;
    let me = le.iter().sum::<f64>() / le.len() as f64;
    let slope = lh
        .iter()
        .zip(&le)
        .map(|(a, b)| (a - mh) * (b - me))
        .sum::<f64>()
        / lh.iter().map(|a| (a - mh) * (a - mh)).sum::<f64>();
    assert!(
        slope >= 1.8,
        "observed convergence order {slope:.2} below second order (errors {errors:?})"
    );
    report("criterion 2 (robin eigenvalue oracle)", start, 30.0);
}

#[test]
fn criterion_03_auxiliary_closed_form() {
    let start = Instant::now();
    let reaction = ReactionSpec::zero();
    for &n in &[32usize, 64, 128, 256] {
        let mesh = build_interval_mesh(0.0, 1.0, n).unwrap();
        let spec = ProblemSpec::new(mesh, 2.0, 1.0).unwrap();
        let e = DiscreteField::constant(spec.mesh(), 1.0);
        let aux = AuxiliaryProblem::new(&spec, &reaction, 1.0, e).unwrap();
        let init = DiscreteField::constant(spec.mesh(), 1.0);
        let sol = solve_auxiliary(&aux, &init, &SolverOptions::default()).unwrap();
        let exact =
            DiscreteField::from_fn(spec.mesh(), |z| (-z[0] * z[0] + z[0] + 1.0) / 2.0).unwrap();
        let err = sol.u.max_abs_diff(&exact);
        let h = 1.0 / n as f64;
        assert!(err <= h * h, "n={n}: nodal error {err:.3e} above h^2");
        if n == 256 {
            assert!(err <= 1e-4, "n=256: nodal error {err:.3e} above 1e-4");
        }
    }
    report("criterion 3 (auxiliary closed form)", start, 5.0);
}

#[test]
fn criterion_04_picone_pointwise_suite() {
    let start = Instant::now();
    let mesh = build_interval_mesh(0.0, 1.0, 16).unwrap();
    for p in [1.5, 2.0, 3.0] {
        let spec = ProblemSpec::new(mesh.clone(), p, 1.0).unwrap();
        let pair = principal_eigenpair(&spec, &EigenOptions::default()).unwrap();

        // Self-density vanishes pointwise.
        for r in picone_density(&spec, &pair.u1, &pair.u1).unwrap() {
            assert!(
                r.abs() <= 1e-12,
                "p={p}: self-density {r:.3e} not within 1e-12"
            );
        }

        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..1000 {
            let u = DiscreteField::new(
                (0..mesh.node_count())
                    .map(|_| rng.gen_range(0.75..1.35))
                    .collect(),
            )
            .unwrap();
            for r in picone_density(&spec, &pair.u1, &u).unwrap() {
                assert!(r >= -1e-12, "p={p}: density {r:.3e} below -1e-12");
            }
        }
    }
    report("criterion 4 (picone pointwise suite)", start, 20.0);
}

#[test]
fn criterion_05_operator_monotonicity_and_jacobian() {
    let start = Instant::now();
    let mesh = build_interval_mesh(0.0, 1.0, 8).unwrap();
    for p in [1.5, 2.0, 3.0] {
        let spec = ProblemSpec::new(mesh.clone(), p, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7 + p.to_bits() % 1000);
        for _ in 0..1000 {
            let u = DiscreteField::new(
                (0..mesh.node_count())
                    .map(|_| rng.gen_range(-0.5..0.5))
                    .collect(),
            )
            .unwrap();
            let v = DiscreteField::new(
                (0..mesh.node_count())
                    .map(|_| rng.gen_range(-0.5..0.5))
                    .collect(),
            )
            .unwrap();
            let d = u.axpy(-1.0, &v);
            let gap = a_form(&spec, &u, &d).unwrap() - a_form(&spec, &v, &d).unwrap();
            assert!(gap >= -1e-12, "p={p}: monotonicity gap {gap:.3e}");
        }
    }

    // Jacobian against central differences on 50 random states away from the
    // reaction's kinks (x = 0 and the example's branch switch at x = 1).
    let mesh = build_interval_mesh(0.0, 1.0, 12).unwrap();
    let mut checked = 0;
    for p in [1.5, 2.0, 3.0] {
        let spec = ProblemSpec::new(mesh.clone(), p, 1.0).unwrap();
        let reaction = ReactionSpec::example(ExampleReactionParams {
            eta: 2.5,
            theta: 1.0,
            q: (1.0 + p) / 2.0,
            tau: (1.0 + p) / 2.0,
            r: p + 1.0,
            p,
        })
        .unwrap();
        let e = DiscreteField::constant(spec.mesh(), 1.0);
        let aux = AuxiliaryProblem::new(&spec, &reaction, 0.5, e).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(p.to_bits());
        for _ in 0..17 {
            let u = DiscreteField::new(
                (0..mesh.node_count())
                    .map(|_| rng.gen_range(1.2..3.0))
                    .collect(),
            )
            .unwrap();
            let y = element_gradient(spec.mesh(), &u).unwrap();
            let jac = v_jacobian(&aux, &u, &y).unwrap();
            let dvals: Vec<f64> = (0..u.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dir = DiscreteField::new(dvals.clone()).unwrap();
            let step = 1e-6 * (1.0 + u.inf_norm());
            let rp = v_residual(&aux, &u.axpy(step, &dir), &y).unwrap();
            let rm = v_residual(&aux, &u.axpy(-step, &dir), &y).unwrap();
            let fd: Vec<f64> = rp
                .iter()
                .zip(&rm)
                .map(|(a, b)| (a - b) / (2.0 * step))
                .collect();
            let jd = jac.matvec(&dvals);
            let fd_norm = fd.iter().map(|v| v.abs()).fold(0.0, f64::max);
            let err = jd
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(
                err <= 1e-6 * fd_norm,
                "p={p}: jacobian mismatch {err:.3e} against fd norm {fd_norm:.3e}"
            );
            checked += 1;
        }
    }
    assert!(checked >= 50);
    report(
        "criterion 5 (operator monotonicity + jacobian)",
        start,
        20.0,
    );
}

#[test]
fn criterion_06_coercivity_margin() {
    let start = Instant::now();
    let mesh = build_interval_mesh(0.0, 1.0, 128).unwrap();
    let spec = ProblemSpec::new(mesh, 2.0, 1.0).unwrap();
    let pair = principal_eigenpair(&spec, &EigenOptions::default()).unwrap();
    let theta_val = pair.lambda1 - 0.1;
    let theta = DiscreteField::constant(spec.mesh(), theta_val);
    let est = coercivity_margin(&spec, &theta, &CoercivityOptions::default()).unwrap();
    assert!(est.c0 > 0.0, "margin must be positive, got {}", est.c0);

    let mesh = spec.mesh();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..10_000 {
        let raw = DiscreteField::new(
            (0..mesh.node_count())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        )
        .unwrap();
        let norm = sobolev_norm(mesh, &raw, 2.0).unwrap();
        if norm == 0.0 {
            continue;
        }
        let u = raw.scale(1.0 / norm);
        let form = a_form(&spec, &u, &u).unwrap() + robin_form(&spec, &u, &u).unwrap()
            - theta_val * lp_norm(mesh, &u, 2.0).unwrap().powi(2);
        assert!(
            form >= 0.99 * est.c0,
            "random unit field beats the margin: {form:.6e} < 0.99 * {:.6e}",
            est.c0
        );
    }
    report("criterion 6 (coercivity margin)", start, 30.0);
}

fn assert_healthy_continuation(p: f64, n: usize) -> ContinuationTrace {
    let mesh = build_interval_mesh(0.0, 1.0, n).unwrap();
    let spec = ProblemSpec::new(mesh, p, 1.0).unwrap();
    let pair = principal_eigenpair(&spec, &EigenOptions::default()).unwrap();
    let params = if p == 2.0 {
        example_params_p2()
    } else {
        ExampleReactionParams {
            eta: 1.5 * pair.lambda1,
            theta: 0.5 * pair.lambda1,
            q: 1.5,
            tau: 1.1,
            r: p + 1.0,
            p,
        }
    };
    params.validate(pair.lambda1).unwrap();
    let reaction = ReactionSpec::example(params).unwrap();

    // The admissibility window theta < lambda1 < eta is verified by the
    // hypothesis auditors before the run.
    let grid = SampleGrid::default();
    let opts = CheckOptions::default();
    let mesh = spec.mesh();
    assert!(check_growth(&reaction, p, mesh, &grid, &opts).unwrap().pass);
    assert!(
        check_limsup_at_infinity(&reaction, p, mesh, pair.lambda1, &grid, &opts)
            .unwrap()
            .pass
    );
    assert!(
        check_liminf_at_zero(&reaction, p, mesh, pair.lambda1, 1e3, &grid, &opts)
            .unwrap()
            .pass
    );

    let e = DiscreteField::constant(mesh, 1.0);
    let schedule = EpsilonSchedule::default();
    let trace = continuation_run(
        &spec,
        &reaction,
        &e,
        &schedule,
        &ContinuationOptions::default(),
    )
    .unwrap();

    assert_eq!(trace.records.len(), 21);
    // A single positive lower bound across the whole trace, and nonnegative
    // iterates step by step (the solver's acceptance gate enforces
    // ||u^-|| <= 1e-10 max u; strict positivity is stronger).
    let m = trace
        .records
        .iter()
        .map(|r| r.min_u)
        .fold(f64::INFINITY, f64::min)
        .min(trace.final_solution.min_value);
    assert!(m > 0.0, "p={p}: trace lower bound {m} not positive");

    // C^1 proxy stabilizes: the last five records vary within 1%.
    let proxies: Vec<f64> = trace
        .records
        .iter()
        .rev()
        .take(5)
        .map(|r| r.max_u + r.max_gradient_norm)
        .collect();
    let lo = proxies.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = proxies.iter().copied().fold(0.0f64, f64::max);
    assert!(
        (hi - lo) <= 0.01 * hi,
        "p={p}: C1 proxy varies {:.3}% over the last five records",
        100.0 * (hi - lo) / hi
    );

    let report = trace.collapse.as_ref().expect("wedge must be positive");
    assert_eq!(report.collapse, CollapseVerdict::Healthy);
    assert!(report.xi_star > 0.0);
    assert!(
        trace.final_residual <= 1e-8,
        "p={p}: final residual {:.3e}",
        trace.final_residual
    );
    trace
}

#[test]
fn criterion_07_end_to_end_continuation() {
    let start = Instant::now();
    assert_healthy_continuation(2.0, 256);
    assert_healthy_continuation(3.0, 128);
    report("criterion 7 (end-to-end continuation)", start, 120.0);
}

#[test]
fn criterion_08_negative_control() {
    let start = Instant::now();
    let mesh = build_interval_mesh(0.0, 1.0, 64).unwrap();
    let spec = ProblemSpec::new(mesh, 2.0, 1.0).unwrap();
    let pair = principal_eigenpair(&spec, &EigenOptions::default()).unwrap();
    let reaction = ReactionSpec::zero();

    // check-f fails hypothesis (iii) with a concrete witness.
    let rep = check_liminf_at_zero(
        &reaction,
        2.0,
        spec.mesh(),
        pair.lambda1,
        1e3,
        &SampleGrid::default(),
        &CheckOptions::default(),
    )
    .unwrap();
    assert!(!rep.pass, "zero reaction must fail the liminf hypothesis");
    let w = rep.witness.expect("failing report carries a witness");
    assert!(w.margin > 0.0);

    // The continuation collapses before the schedule bottoms out.
    let e = DiscreteField::constant(spec.mesh(), 1.0);
    let err = continuation_run(
        &spec,
        &reaction,
        &e,
        &EpsilonSchedule::default(),
        &ContinuationOptions::default(),
    )
    .unwrap_err();
    match err {
        Error::CollapseDetected {
            epsilon, records, ..
        } => {
            assert!(
                epsilon > 2f64.powi(-20),
                "collapse must fire before eps reaches 2^-20, fired at {epsilon:.3e}"
            );
            assert!(records.len() < 21);
            assert!(records.last().unwrap().collapse_flag);
        }
        other => panic!("expected collapse-detected, got {other}"),
    }
    report("criterion 8 (negative control)", start, 60.0);
}

#[test]
fn criterion_09_hypothesis_auditor() {
    let start = Instant::now();
    let mesh = build_interval_mesh(0.0, 1.0, 64).unwrap();
    let spec = ProblemSpec::new(mesh, 2.0, 1.0).unwrap();
    let pair = principal_eigenpair(&spec, &EigenOptions::default()).unwrap();
    let grid = SampleGrid::default();
    let opts = CheckOptions::default();
    let mesh = spec.mesh();

    // f = 2 lambda1 x^{p-1} violates the limsup bound.
    let too_strong = ReactionSpec::power(2.0 * pair.lambda1, 2.0);
    let rep = check_limsup_at_infinity(&too_strong, 2.0, mesh, pair.lambda1, &grid, &opts).unwrap();
    assert!(!rep.pass);
    assert!(rep.witness.is_some());

    // The example passes all three with sampled bounds near its parameters.
    let params = example_params_p2();
    let reaction = ReactionSpec::example(params).unwrap();
    let growth = check_growth(&reaction, 2.0, mesh, &grid, &opts).unwrap();
    assert!(growth.pass, "growth witness: {:?}", growth.witness);
    assert!(growth.sampled_bound.max().is_finite());

    let limsup =
        check_limsup_at_infinity(&reaction, 2.0, mesh, pair.lambda1, &grid, &opts).unwrap();
    assert!(limsup.pass);
    let theta_hat = limsup.sampled_bound.max();
    assert!(
        (theta_hat - params.theta).abs() <= 0.02 * params.theta,
        "sampled theta {theta_hat:.6} not within 2% of {}",
        params.theta
    );

    let liminf =
        check_liminf_at_zero(&reaction, 2.0, mesh, pair.lambda1, 1e3, &grid, &opts).unwrap();
    assert!(liminf.pass);
    let eta_hat = liminf.sampled_bound.min();
    assert!(
        (eta_hat - params.eta).abs() <= 0.02 * params.eta,
        "sampled eta {eta_hat:.6} not within 2% of {}",
        params.eta
    );
    report("criterion 9 (hypothesis auditor)", start, 20.0);
}

#[test]
fn criterion_10_determinism() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = format!(
        "\
mesh.kind = interval
mesh.n = 256
problem.p = 2
reaction.name = example
reaction.eta = 2.5
reaction.theta = 1.0
reaction.q = 1.05
reaction.tau = 1.05
reaction.r = 3.0
output.dir = {}
",
        out.display()
    );
    let cfg_path = dir.path().join("run.cfg");
    std::fs::write(&cfg_path, config).unwrap();

    let argv = vec![
        "robinp".to_string(),
        "continue".to_string(),
        "--config".to_string(),
        cfg_path.display().to_string(),
    ];
    assert_eq!(robinp::cli::run_cli(argv.clone()), 0);
    let first = std::fs::read(out.join("trace.csv")).unwrap();
    let first_field = std::fs::read(out.join("u_final.csv")).unwrap();
    assert_eq!(robinp::cli::run_cli(argv), 0);
    let second = std::fs::read(out.join("trace.csv")).unwrap();
    let second_field = std::fs::read(out.join("u_final.csv")).unwrap();
    assert_eq!(
        first, second,
        "trace CSV must be byte-identical across runs"
    );
    assert_eq!(first_field, second_field);
    report("criterion 10 (determinism)", start, 120.0);
}
