//! Acceptance gate: eleven end-to-end checks of the estimator pipeline at
//! desk scale, printed one PASS/FAIL line each. Oracles are analytic (the
//! autonomous principal eigenvalue), brute force (a dense eigensolve of the
//! frozen pencil at coarse resolution), or cross-checks between routes that
//! are independent by construction. Run with
//! `cargo test --test acceptance -- --nocapture` to watch the lines appear.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use parlyap::coeffs::parse_expression;
use parlyap::estimate::{
    lyapunov_direct, lyapunov_lnrho1_mc, measure_orbit, operator_norm_rate, Horizons,
    MeasureOptions, MonteCarloOptions, OrbitMeasurement,
};
use parlyap::fem::{assemble_form, interpolate};
use parlyap::flow::sample_invariant;
use parlyap::linalg::{m_norm, TriMat};
use parlyap::propagate::{
    cocycle_residual, initial_state, positive_constant_state, propagate, spin_up_floquet,
    steps_for, PropagateOptions, PropagatorState,
};
use parlyap::spectral::principal_eigen;
use parlyap::{EigenOptions, FlowPoint, Mesh1D, Problem, Scenario, TimeScheme};

const ALL_PRESETS: [&str; 5] = [
    "dirichlet-laplacian",
    "quasiperiodic-symmetric",
    "robin-advection",
    "switching-symmetric",
    "unbounded-c0",
];

const SYMMETRIC_PRESETS: [&str; 4] = [
    "dirichlet-laplacian",
    "quasiperiodic-symmetric",
    "switching-symmetric",
    "unbounded-c0",
];

/// One preset, spun up and measured over its configured horizons.
struct PresetRun {
    problem: Problem,
    anchor: FlowPoint,
    spin_state: PropagatorState,
    measure: OrbitMeasurement,
    horizons: Horizons,
    t_spin: f64,
    seed: u64,
    n_samples: usize,
    c0_source: String,
}

fn build_run(name: &str) -> PresetRun {
    let scenario = Scenario::preset(name).expect("preset builds");
    let cfg = &scenario.config;
    let problem = scenario.problem.clone();
    let seed = cfg.sampling.seed;
    let anchor = sample_invariant(&problem.flow, seed, 1).expect("anchor sample")[0].clone();
    let spin = spin_up_floquet(&problem, &anchor, cfg.horizons.t_spin).expect("spin-up");
    let horizons = Horizons {
        total: cfg.horizons.total,
        burn_in: cfg.horizons.burn_in,
        block_length: scenario.block_length,
    };
    let opts = MeasureOptions {
        with_eigen: problem.is_symmetric(),
        with_c0: true,
        c0_grid: 257,
    };
    let measure =
        measure_orbit(&problem, spin.state.clone(), &horizons, &opts).expect("orbit measure");
    PresetRun {
        problem,
        anchor,
        spin_state: spin.state,
        measure,
        horizons,
        t_spin: cfg.horizons.t_spin,
        seed,
        n_samples: cfg.sampling.n_samples,
        c0_source: cfg.coefficients.c0.clone(),
    }
}

#[derive(Default)]
struct Cache {
    runs: HashMap<&'static str, PresetRun>,
}

impl Cache {
    fn run(&mut self, name: &'static str) -> &PresetRun {
        self.runs.entry(name).or_insert_with(|| build_run(name))
    }
}

#[derive(Default)]
struct Gate {
    failures: Vec<String>,
}

impl Gate {
    fn check(&mut self, idx: usize, name: &str, pass: bool, details: String, t0: Instant) {
        let verdict = if pass { "PASS" } else { "FAIL" };
        let secs = t0.elapsed().as_secs_f64();
        println!("[{idx:2}/11] {verdict} {name}  {details} ({secs:.1}s)");
        if !pass {
            self.failures.push(format!("criterion {idx} ({name}): {details}"));
        }
    }
}

fn dense(m: &TriMat) -> DMatrix<f64> {
    let n = m.n();
    let mut d = DMatrix::zeros(n, n);
    for (i, j, v) in m.triplets() {
        d[(i, j)] = v;
    }
    d
}

#[test]
fn acceptance_criteria() {
    let mut cache = Cache::default();
    let mut gate = Gate::default();

    // 1. Autonomous oracle: on the constant-coefficient Dirichlet preset the
    //    direct rate, the quadratic-form rate and the frozen principal
    //    eigenvalue must agree with each other and with -pi^2.
    {
        let t0 = Instant::now();
        let run = cache.run("dirichlet-laplacian");
        let mass = run.problem.mass();
        let form = assemble_form(
            &run.problem.mesh,
            &run.problem.coeffs,
            &run.anchor,
            run.problem.bc,
            run.problem.scheme.lumped_mass,
        )
        .expect("frozen form");
        let lam = principal_eigen(&mass, &form, None, &EigenOptions::default())
            .expect("principal eigenvalue")
            .value;
        let (e1, e2) = (run.measure.e1, run.measure.e2);
        let spread = (e1 - e2)
            .abs()
            .max((e1 - lam).abs())
            .max((e2 - lam).abs());
        let offset = (e1 + PI * PI)
            .abs()
            .max((e2 + PI * PI).abs())
            .max((lam + PI * PI).abs());
        let secs = t0.elapsed().as_secs_f64();
        let pass = spread <= 1e-6 && offset <= 5e-3 && secs <= 10.0;
        gate.check(
            1,
            "autonomous-rates-match-eigenvalue",
            pass,
            format!("e1={e1:.6} e2={e2:.6} lambda={lam:.6} spread={spread:.1e} offset={offset:.1e}"),
            t0,
        );
    }

    // 2. The per-step gap between the log-norm increment and kappa*dt is a
    //    consistency defect of the scheme: halving dt must shrink the
    //    accumulated residual per unit time by about four.
    {
        let t0 = Instant::now();
        let (base, anchor) = {
            let run = cache.run("quasiperiodic-symmetric");
            (run.problem.clone(), run.anchor.clone())
        };
        let mut residuals = Vec::new();
        let mut slow = false;
        for dt in [1e-3, 5e-4] {
            let ti = Instant::now();
            let mut p = base.clone();
            p.scheme.dt = dt;
            let spin = spin_up_floquet(&p, &anchor, 1.0).expect("spin-up");
            let n = steps_for(5.0, dt).expect("horizon on grid");
            let traj =
                propagate(&p, spin.state, n, &PropagateOptions::default()).expect("propagate");
            residuals.push(traj.abs_residual_sum / 5.0);
            slow |= ti.elapsed().as_secs_f64() > 30.0;
        }
        let ratio = residuals[0] / residuals[1];
        let pass = residuals.iter().all(|r| r.is_finite() && *r > 0.0)
            && (3.5..=4.5).contains(&ratio)
            && !slow;
        gate.check(
            2,
            "identity-residual-second-order",
            pass,
            format!(
                "residual(1e-3)={:.2e} residual(5e-4)={:.2e} ratio={ratio:.2}",
                residuals[0], residuals[1]
            ),
            t0,
        );
    }

    // 3. Upper bound: on every symmetric preset the quadratic-form rate stays
    //    below the frozen-eigenvalue rate pointwise and on average, and the
    //    direct rate stays below it within noise.
    {
        let t0 = Instant::now();
        let mut bad: Vec<&str> = Vec::new();
        let mut worst_gap = f64::INFINITY;
        let mut worst_mean = f64::NEG_INFINITY;
        for name in SYMMETRIC_PRESETS {
            let run = cache.run(name);
            let m = &run.measure;
            let e3 = m.e3.expect("symmetric preset tracks the eigenvalue");
            let e3_se = m.e3_stderr.expect("eigenvalue stderr");
            let gap = m.min_eigen_gap.expect("pointwise gap");
            // The autonomous preset has zero block variance, so the stderr
            // band degenerates; 1e-8 is the same floating-point floor the
            // pointwise route carries.
            let ok = m.e2 <= e3 + 1e-8
                && gap >= -1e-8
                && m.e1 <= e3 + 3.0 * (m.e1_stderr + e3_se) + 1e-8;
            worst_gap = worst_gap.min(gap);
            worst_mean = worst_mean.max(m.e2 - e3);
            if !ok {
                bad.push(name);
            }
        }
        let detail_tail = if bad.is_empty() {
            String::new()
        } else {
            format!(" failing=[{}]", bad.join(","))
        };
        gate.check(
            3,
            "eigenvalue-upper-bound",
            bad.is_empty(),
            format!("min pointwise gap={worst_gap:.2e} max(e2-e3)={worst_mean:.2e}{detail_tail}"),
            t0,
        );
    }

    // 4. Every positive initial profile collapses onto the same direction, so
    //    all measured growth rates coincide.
    {
        let t0 = Instant::now();
        let (problem, anchor, horizons) = {
            let run = cache.run("quasiperiodic-symmetric");
            (
                run.problem.clone(),
                run.anchor.clone(),
                Horizons {
                    total: run.horizons.total,
                    burn_in: run.horizons.burn_in,
                    block_length: run.horizons.block_length,
                },
            )
        };
        let profiles = [
            vec![1.0; problem.n_dofs()],
            interpolate(&problem.mesh, problem.bc, |x| (PI * x).sin()),
            interpolate(&problem.mesh, problem.bc, |x| {
                1.0 + 0.6 * (2.0 * PI * x).sin()
            }),
        ];
        let mut values = Vec::new();
        for profile in &profiles {
            let state = initial_state(&problem, &anchor, profile).expect("initial state");
            values.push(
                lyapunov_direct(&problem, state, &horizons)
                    .expect("direct estimate")
                    .value,
            );
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let spread = hi - lo;
        gate.check(
            4,
            "positive-profiles-share-one-rate",
            spread <= 1e-4,
            format!("rates=[{:.6}, {:.6}, {:.6}] spread={spread:.1e}", values[0], values[1], values[2]),
            t0,
        );
    }

    // 5. The distinguished direction is flow-invariant: propagating it for t
    //    and spinning up independently at the advanced driver state give the
    //    same profile.
    {
        let t0 = Instant::now();
        let (problem, spin_state, t_spin) = {
            let run = cache.run("quasiperiodic-symmetric");
            (run.problem.clone(), run.spin_state.clone(), run.t_spin)
        };
        let mass = problem.mass();
        let mut worst = 0.0f64;
        for t_adv in [1.0, 5.0] {
            let n = steps_for(t_adv, problem.scheme.dt).expect("horizon on grid");
            let traj = propagate(
                &problem,
                spin_state.clone(),
                n,
                &PropagateOptions::default(),
            )
            .expect("propagate");
            let there =
                spin_up_floquet(&problem, &traj.state.point, t_spin).expect("spin-up at target");
            let diff: Vec<f64> = traj
                .state
                .u
                .iter()
                .zip(&there.state.u)
                .map(|(a, b)| a - b)
                .collect();
            worst = worst.max(m_norm(&mass, &diff));
        }
        gate.check(
            5,
            "propagated-direction-matches-spin-up",
            worst <= 1e-6,
            format!("max M-distance={worst:.1e}"),
            t0,
        );
    }

    // 6. Two-parameter composition law: splitting a run must reproduce the
    //    one-shot run exactly on every preset.
    {
        let t0 = Instant::now();
        let mut worst = 0.0f64;
        for name in ALL_PRESETS {
            let run = cache.run(name);
            let state =
                positive_constant_state(&run.problem, &run.anchor).expect("initial state");
            let r = cocycle_residual(&run.problem, &state, 0.1, 0.15).expect("residual");
            worst = worst.max(r);
        }
        gate.check(
            6,
            "composition-is-exact",
            worst <= 1e-12,
            format!("max residual={worst:.1e}"),
            t0,
        );
    }

    // 7. Adding a constant to the zero-order coefficient shifts every route
    //    by exactly that constant (implicit Euler mode).
    {
        let t0 = Instant::now();
        let (mut base, anchor, c0_source) = {
            let run = cache.run("quasiperiodic-symmetric");
            (run.problem.clone(), run.anchor.clone(), run.c0_source.clone())
        };
        base.scheme.scheme = TimeScheme::ImplicitEuler;
        let mut shifted = base.clone();
        shifted.coeffs.c0 =
            parse_expression(&format!("({c0_source}) + 2")).expect("shifted coefficient");

        let horizons = Horizons {
            total: 5.0,
            burn_in: 0.5,
            block_length: 0.25,
        };
        let meas_opts = MeasureOptions {
            with_eigen: true,
            with_c0: false,
            c0_grid: 257,
        };
        let mut rows = Vec::new();
        for p in [&base, &shifted] {
            let spin = spin_up_floquet(p, &anchor, 1.0).expect("spin-up");
            let m = measure_orbit(p, spin.state, &horizons, &meas_opts).expect("measure");
            let mc =
                lyapunov_lnrho1_mc(p, &MonteCarloOptions::new(8, 3, 1.0, 0.5)).expect("samples");
            let mass = p.mass();
            let form = assemble_form(&p.mesh, &p.coeffs, &anchor, p.bc, p.scheme.lumped_mass)
                .expect("frozen form");
            let lam = principal_eigen(&mass, &form, None, &EigenOptions::default())
                .expect("principal eigenvalue")
                .value;
            rows.push([m.e1, m.e2, m.e3.expect("symmetric"), mc.value, lam]);
        }
        let devs: Vec<f64> = (0..5)
            .map(|i| (rows[1][i] - rows[0][i] - 2.0).abs())
            .collect();
        let worst = devs.iter().copied().fold(0.0, f64::max);
        gate.check(
            7,
            "zero-order-shift-moves-all-routes",
            worst <= 1e-8,
            format!(
                "shift deviations e1={:.1e} e2={:.1e} e3={:.1e} mc={:.1e} lambda={:.1e}",
                devs[0], devs[1], devs[2], devs[3], devs[4]
            ),
            t0,
        );
    }

    // 8. Discrete maximum principle: implicit Euler with lumped mass keeps a
    //    nonnegative profile nonnegative at every one of 10^4 steps.
    {
        let t0 = Instant::now();
        let (problem, anchor) = {
            let run = cache.run("robin-advection");
            (run.problem.clone(), run.anchor.clone())
        };
        assert_eq!(problem.scheme.scheme, TimeScheme::ImplicitEuler);
        assert!(problem.scheme.lumped_mass);
        let mut state = positive_constant_state(&problem, &anchor).expect("initial state");
        let opts = PropagateOptions::default();
        let mut min_entry = f64::INFINITY;
        for _ in 0..10_000 {
            state = propagate(&problem, state, 1, &opts).expect("step").state;
            for &x in &state.u {
                min_entry = min_entry.min(x);
            }
        }
        gate.check(
            8,
            "implicit-lumped-step-keeps-positivity",
            min_entry >= 0.0,
            format!("min entry over 10000 steps={min_entry:.2e}"),
            t0,
        );
    }

    // 9. The normalized growth bound is finite and moves by less than 10%
    //    when the measurement window doubles, on every preset.
    {
        let t0 = Instant::now();
        let mut pass = true;
        let mut worst_rel = 0.0f64;
        for name in ALL_PRESETS {
            let run = cache.run(name);
            let g1 = run.measure.gamma_hat.expect("c0 tracked");
            let doubled = Horizons {
                total: run.horizons.burn_in + 2.0 * (run.horizons.total - run.horizons.burn_in),
                burn_in: run.horizons.burn_in,
                block_length: run.horizons.block_length,
            };
            let opts = MeasureOptions {
                with_eigen: false,
                with_c0: true,
                c0_grid: 257,
            };
            let m2 = measure_orbit(&run.problem, run.spin_state.clone(), &doubled, &opts)
                .expect("doubled measure");
            let g2 = m2.gamma_hat.expect("c0 tracked");
            let rel = (g2 - g1).abs() / g1.abs().max(1.0);
            worst_rel = worst_rel.max(rel);
            if !(g1.is_finite() && g2.is_finite() && rel <= 0.1) {
                pass = false;
            }
        }
        gate.check(
            9,
            "growth-bound-stable-under-doubling",
            pass,
            format!("max relative change={worst_rel:.2e}"),
            t0,
        );
    }

    // 10. The ensemble average over invariant samples agrees with the single
    //     long orbit within three combined standard errors.
    {
        let t0 = Instant::now();
        let (problem, e1, e1_se, n_samples, seed, t_spin, horizon) = {
            let run = cache.run("quasiperiodic-symmetric");
            (
                run.problem.clone(),
                run.measure.e1,
                run.measure.e1_stderr,
                run.n_samples,
                run.seed,
                run.t_spin,
                run.horizons.block_length,
            )
        };
        let mc = lyapunov_lnrho1_mc(
            &problem,
            &MonteCarloOptions::new(n_samples, seed, t_spin, horizon),
        )
        .expect("ensemble estimate");
        let dev = (mc.value - e1).abs();
        let band = 3.0 * (mc.stderr.powi(2) + e1_se.powi(2)).sqrt();
        let secs = t0.elapsed().as_secs_f64();
        let pass = dev <= band && secs <= 300.0;
        gate.check(
            10,
            "ensemble-average-matches-orbit-average",
            pass,
            format!(
                "mc={:.4} e1={e1:.4} |diff|={dev:.1e} 3se={band:.1e} kept={} dropped={}",
                mc.value, mc.kept, mc.dropped
            ),
            t0,
        );
    }

    // 11. Frame rates: the leading rate of a 3-frame reproduces the direct
    //     rate, and at coarse resolution the measured gap to the second rate
    //     dominates the spectral gap of a dense eigensolve of the same
    //     pencil. The scheme damps subdominant modes slightly faster than the
    //     exact flow, so the measured gap can only exceed the dense one.
    {
        let t0 = Instant::now();
        let (problem, anchor, e1) = {
            let run = cache.run("dirichlet-laplacian");
            (run.problem.clone(), run.anchor.clone(), run.measure.e1)
        };
        let rates = operator_norm_rate(&problem, &anchor, 3, 2.0, 1.0)
            .expect("frame rates")
            .rates;
        let top_dev = (rates[0] - e1).abs();

        let mut coarse = problem.clone();
        coarse.mesh = Mesh1D::uniform(48);
        let coarse_rates = operator_norm_rate(&coarse, &anchor, 3, 2.0, 1.0)
            .expect("coarse frame rates")
            .rates;
        let measured_gap = coarse_rates[0] - coarse_rates[1];

        let mass = coarse.mass();
        let form = assemble_form(
            &coarse.mesh,
            &coarse.coeffs,
            &anchor,
            coarse.bc,
            coarse.scheme.lumped_mass,
        )
        .expect("coarse form");
        let chol = dense(&mass).cholesky().expect("mass is positive definite");
        let l_inv = chol.l().try_inverse().expect("triangular inverse");
        let b = &l_inv * (-dense(&form)) * l_inv.transpose();
        let mut evs: Vec<f64> = SymmetricEigen::new(b).eigenvalues.iter().copied().collect();
        evs.sort_by(|x, y| y.partial_cmp(x).expect("finite eigenvalues"));
        let oracle_gap = evs[0] - evs[1];

        let pass = top_dev <= 1e-3 && oracle_gap > 0.0 && measured_gap >= oracle_gap;
        gate.check(
            11,
            "frame-rates-match-dense-spectrum",
            pass,
            format!(
                "top={:.6} e1={e1:.6} |diff|={top_dev:.1e} gap={measured_gap:.4} oracle={oracle_gap:.4}",
                rates[0]
            ),
            t0,
        );
    }

    assert!(
        gate.failures.is_empty(),
        "acceptance criteria failed:\n{}",
        gate.failures.join("\n")
    );
}
