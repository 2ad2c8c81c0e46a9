//! Estimators for the top Lyapunov exponent of the random parabolic flow.
//!
//! Three routes to the same number, kept deliberately independent:
//!
//! - E1, the direct route: log growth of one propagated profile per unit time.
//! - E2, the Dirichlet-form route: trapezoidal time average of the Rayleigh
//!   quotient along the same orbit. The per-step identity residual
//!   `|dlog - kappa dt|` bounds how far E1 and E2 can disagree.
//! - E3, the frozen-eigenvalue route: average of the principal eigenvalue of
//!   the operator frozen at each driver state, an upper bound for the other
//!   two. Available only for symmetric forms.
//!
//! On top of these, [`lyapunov_lnrho1_mc`] averages short-window growth rates
//! over independent invariant samples (each spun onto the distinguished
//! positive direction first), and [`operator_norm_rate`] grows a small frame
//! of profiles to expose the gap to the second exponent.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::interpolate;
use crate::flow::{sample_invariant, FlowPoint};
use crate::propagate::{
    propagate, propagate_frame, spin_up_floquet, steps_for, PropagateError, PropagateOptions,
    PropagatorState, Problem, StepRecord,
};

pub const REPORT_SCHEMA_VERSION: &str = "1.0.0";

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error(transparent)]
    Propagate(#[from] PropagateError),
    #[error("measurement window is empty: horizon {total} with burn-in {burn_in}")]
    EmptyWindow { total: f64, burn_in: f64 },
    #[error("upper bound unavailable: {reason}")]
    UpperBoundUnavailable { reason: String },
    #[error("Monte-Carlo estimate needs at least 2 samples, got {n}")]
    NotEnoughSamples { n: usize },
    #[error(
        "{dropped} of {total} Monte-Carlo samples failed the spin-up \
         convergence check (limit is 10%)"
    )]
    TooManyDropped { dropped: usize, total: usize },
    #[error("frame of {k} vectors exceeds the {n} degrees of freedom")]
    FrameTooLarge { k: usize, n: usize },
}

/// Time windows of one orbit measurement.
#[derive(Clone, Copy, Debug)]
pub struct Horizons {
    /// Total propagation time, burn-in included.
    pub total: f64,
    pub burn_in: f64,
    /// Batch length for the block standard errors.
    pub block_length: f64,
}

#[derive(Clone, Debug)]
pub struct MeasureOptions {
    pub with_eigen: bool,
    pub with_c0: bool,
    pub c0_grid: usize,
}

impl Default for MeasureOptions {
    fn default() -> Self {
        MeasureOptions {
            with_eigen: false,
            with_c0: false,
            c0_grid: 257,
        }
    }
}

/// Everything one orbit yields after the burn-in window.
#[derive(Clone, Debug)]
pub struct OrbitMeasurement {
    pub e1: f64,
    pub e1_stderr: f64,
    pub e2: f64,
    pub e2_stderr: f64,
    /// Mean absolute per-step identity defect per unit time.
    pub identity_residual: f64,
    pub e3: Option<f64>,
    pub e3_stderr: Option<f64>,
    /// Smallest node-sampled `lambda_princ - kappa`; nonnegative means the
    /// upper bound held pointwise.
    pub min_eigen_gap: Option<f64>,
    pub gamma_hat: Option<f64>,
    pub c0_lo_min: Option<f64>,
    /// Length of the measurement window (total minus burn-in).
    pub window: f64,
    pub records: Vec<StepRecord>,
    pub final_state: PropagatorState,
}

fn block_rate_stats(increments: &[f64], dt: f64, block_steps: usize) -> (f64, f64) {
    let n = increments.len();
    let total: f64 = increments.iter().sum();
    let mean = total / (n as f64 * dt);
    let bs = block_steps.clamp(1, (n / 2).max(1));
    let nb = n / bs;
    let rates: Vec<f64> = (0..nb)
        .map(|b| increments[b * bs..(b + 1) * bs].iter().sum::<f64>() / (bs as f64 * dt))
        .collect();
    let bm = rates.iter().sum::<f64>() / nb as f64;
    let var = rates.iter().map(|r| (r - bm).powi(2)).sum::<f64>() / (nb as f64 - 1.0).max(1.0);
    (mean, (var / nb as f64).sqrt())
}

/// Runs burn-in and measurement on one orbit and extracts E1, E2 and, for
/// symmetric problems, E3 with its pointwise gap.
pub fn measure_orbit(
    problem: &Problem,
    state: PropagatorState,
    horizons: &Horizons,
    opts: &MeasureOptions,
) -> Result<OrbitMeasurement, EstimateError> {
    let dt = problem.scheme.dt;
    let n_total = steps_for(horizons.total, dt)?;
    let n_burn = steps_for(horizons.burn_in, dt)?;
    if n_total <= n_burn {
        return Err(EstimateError::EmptyWindow {
            total: horizons.total,
            burn_in: horizons.burn_in,
        });
    }
    let n_meas = n_total - n_burn;

    let mut state = state;
    if n_burn > 0 {
        let burn = propagate(problem, state, n_burn, &PropagateOptions::default())?;
        state = burn.state;
        state.log_norm = 0.0;
        state.t = 0.0;
    }

    let run_opts = PropagateOptions {
        record: true,
        eigen_every: if opts.with_eigen { 1 } else { 0 },
        c0_every: if opts.with_c0 { 1 } else { 0 },
        c0_grid: opts.c0_grid,
        ..PropagateOptions::default()
    };
    let traj = propagate(problem, state, n_meas, &run_opts)?;
    let window = n_meas as f64 * dt;

    let block_steps = (horizons.block_length / dt).round().max(1.0) as usize;
    let dlogs: Vec<f64> = traj.records.iter().map(|r| r.dlog).collect();
    let kappas: Vec<f64> = traj.records.iter().map(|r| r.kappa * dt).collect();
    let (e1, e1_stderr) = block_rate_stats(&dlogs, dt, block_steps);
    let (e2, e2_stderr) = block_rate_stats(&kappas, dt, block_steps);
    let (e3, e3_stderr) = if opts.with_eigen {
        let lams: Vec<f64> = traj
            .records
            .iter()
            .map(|r| r.lambda_princ.expect("eigen tracking enabled") * dt)
            .collect();
        let (v, s) = block_rate_stats(&lams, dt, block_steps);
        (Some(v), Some(s))
    } else {
        (None, None)
    };

    Ok(OrbitMeasurement {
        e1,
        e1_stderr,
        e2,
        e2_stderr,
        identity_residual: traj.abs_residual_sum / window,
        e3,
        e3_stderr,
        min_eigen_gap: traj.min_eigen_gap,
        gamma_hat: traj.gamma_hat,
        c0_lo_min: traj.c0_lo_min,
        window,
        records: traj.records,
        final_state: traj.state,
    })
}

#[derive(Clone, Debug)]
pub struct DirectEstimate {
    pub value: f64,
    pub stderr: f64,
    pub window: f64,
}

/// E1: direct log-growth rate of one profile.
pub fn lyapunov_direct(
    problem: &Problem,
    state: PropagatorState,
    horizons: &Horizons,
) -> Result<DirectEstimate, EstimateError> {
    let m = measure_orbit(problem, state, horizons, &MeasureOptions::default())?;
    Ok(DirectEstimate {
        value: m.e1,
        stderr: m.e1_stderr,
        window: m.window,
    })
}

#[derive(Clone, Debug)]
pub struct KappaEstimate {
    pub value: f64,
    pub stderr: f64,
    /// Per-unit-time bound on `|E1 - E2|` from the per-step identity defect.
    pub identity_residual: f64,
    pub e1: f64,
}

/// E2: trapezoidal time average of the Rayleigh quotient.
pub fn lyapunov_kappa(
    problem: &Problem,
    state: PropagatorState,
    horizons: &Horizons,
) -> Result<KappaEstimate, EstimateError> {
    let m = measure_orbit(problem, state, horizons, &MeasureOptions::default())?;
    Ok(KappaEstimate {
        value: m.e2,
        stderr: m.e2_stderr,
        identity_residual: m.identity_residual,
        e1: m.e1,
    })
}

#[derive(Clone, Debug)]
pub struct UpperBound {
    pub value: f64,
    pub stderr: f64,
    pub samples: usize,
}

#[derive(Clone, Debug)]
pub enum UpperBoundMode {
    /// Average the frozen principal eigenvalue over independent invariant
    /// samples.
    Invariant { n_samples: usize, seed: u64 },
    /// Average it along one orbit, sampled at every step node.
    Orbit {
        state: Box<PropagatorState>,
        horizon: f64,
    },
}

/// E3: average frozen principal eigenvalue, an upper bound for E1 and E2.
pub fn upper_bound(problem: &Problem, mode: &UpperBoundMode) -> Result<UpperBound, EstimateError> {
    if !problem.is_symmetric() {
        return Err(EstimateError::UpperBoundUnavailable {
            reason: "the form has first-order terms (a1 or b not identically 0), \
                     so the frozen-eigenvalue bound does not apply"
                .into(),
        });
    }
    match mode {
        UpperBoundMode::Invariant { n_samples, seed } => {
            if *n_samples < 2 {
                return Err(EstimateError::NotEnoughSamples { n: *n_samples });
            }
            let points = sample_invariant(&problem.flow, *seed, *n_samples)
                .map_err(PropagateError::Flow)?;
            let mass = problem.mass();
            let values = points
                .par_iter()
                .map(|point| -> Result<f64, EstimateError> {
                    let a = crate::fem::assemble_form(
                        &problem.mesh,
                        &problem.coeffs,
                        point,
                        problem.bc,
                        problem.scheme.lumped_mass,
                    )
                    .map_err(PropagateError::Fem)?;
                    let eig = crate::spectral::principal_eigen(
                        &mass,
                        &a,
                        None,
                        &crate::spectral::EigenOptions::default(),
                    )
                    .map_err(PropagateError::Spectral)?;
                    Ok(eig.value)
                })
                .collect::<Result<Vec<f64>, _>>()?;
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            Ok(UpperBound {
                value: mean,
                stderr: (var / n).sqrt(),
                samples: values.len(),
            })
        }
        UpperBoundMode::Orbit { state, horizon } => {
            let horizons = Horizons {
                total: *horizon,
                burn_in: 0.0,
                block_length: horizon / 20.0,
            };
            let opts = MeasureOptions {
                with_eigen: true,
                ..MeasureOptions::default()
            };
            let m = measure_orbit(problem, (**state).clone(), &horizons, &opts)?;
            Ok(UpperBound {
                value: m.e3.expect("eigen tracking enabled"),
                stderr: m.e3_stderr.expect("eigen tracking enabled"),
                samples: m.records.len(),
            })
        }
    }
}

#[derive(Clone, Debug)]
pub struct MonteCarloOptions {
    pub n_samples: usize,
    pub seed: u64,
    /// Pullback spin-up horizon applied to every sample.
    pub t_spin: f64,
    /// Growth measurement window per sample.
    pub horizon: f64,
    /// Largest acceptable spin-up M-distance before a sample is dropped.
    pub spin_tolerance: f64,
}

impl MonteCarloOptions {
    pub fn new(n_samples: usize, seed: u64, t_spin: f64, horizon: f64) -> Self {
        MonteCarloOptions {
            n_samples,
            seed,
            t_spin,
            horizon,
            spin_tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MonteCarloEstimate {
    pub value: f64,
    pub stderr: f64,
    pub kept: usize,
    pub dropped: usize,
}

/// Growth rate averaged over invariant samples: each sample is spun onto the
/// distinguished positive direction, then measured over a short window.
/// Samples whose spin-up diagnostic exceeds the tolerance are dropped; more
/// than 10% dropped is an error.
pub fn lyapunov_lnrho1_mc(
    problem: &Problem,
    opts: &MonteCarloOptions,
) -> Result<MonteCarloEstimate, EstimateError> {
    if opts.n_samples < 2 {
        return Err(EstimateError::NotEnoughSamples { n: opts.n_samples });
    }
    let points =
        sample_invariant(&problem.flow, opts.seed, opts.n_samples).map_err(PropagateError::Flow)?;
    let n_meas = steps_for(opts.horizon, problem.scheme.dt)?.max(1);

    let outcomes = points
        .par_iter()
        .map(|point| -> Result<Option<f64>, EstimateError> {
            let spin = spin_up_floquet(problem, point, opts.t_spin)?;
            if !(spin.m_distance <= opts.spin_tolerance) {
                return Ok(None);
            }
            let traj = propagate(problem, spin.state, n_meas, &PropagateOptions::default())?;
            Ok(Some(traj.state.log_norm / (n_meas as f64 * problem.scheme.dt)))
        })
        .collect::<Result<Vec<Option<f64>>, _>>()?;

    let rates: Vec<f64> = outcomes.iter().flatten().copied().collect();
    let dropped = outcomes.len() - rates.len();
    if 10 * dropped > outcomes.len() || rates.len() < 2 {
        return Err(EstimateError::TooManyDropped {
            dropped,
            total: outcomes.len(),
        });
    }
    let n = rates.len() as f64;
    let mean = rates.iter().sum::<f64>() / n;
    let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(MonteCarloEstimate {
        value: mean,
        stderr: (var / n).sqrt(),
        kept: rates.len(),
        dropped,
    })
}

#[derive(Clone, Debug)]
pub struct OperatorRates {
    /// Per-vector growth rates, leading direction first.
    pub rates: Vec<f64>,
    pub window: f64,
}

/// Growth rates of a `k`-frame of profiles, Benettin style: the leading rate
/// estimates the top exponent through the operator norm, the following rates
/// expose the spectral gap.
pub fn operator_norm_rate(
    problem: &Problem,
    point: &FlowPoint,
    k: usize,
    horizon: f64,
    burn_in: f64,
) -> Result<OperatorRates, EstimateError> {
    let n = problem.n_dofs();
    if k == 0 || k > n {
        return Err(EstimateError::FrameTooLarge { k, n });
    }
    let dt = problem.scheme.dt;
    let n_meas = steps_for(horizon, dt)?;
    let n_burn = steps_for(burn_in, dt)?;
    if n_meas == 0 {
        return Err(EstimateError::EmptyWindow {
            total: horizon,
            burn_in,
        });
    }

    use crate::coeffs::BoundaryKind;
    use std::f64::consts::PI;
    let mut frame: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            interpolate(&problem.mesh, problem.bc, |x| match problem.bc {
                BoundaryKind::Dirichlet => ((j + 1) as f64 * PI * x).sin(),
                _ => {
                    if j == 0 {
                        1.0
                    } else {
                        (j as f64 * PI * x).cos()
                    }
                }
            })
        })
        .collect();
    crate::linalg::m_orthonormalize(&problem.mass(), &mut frame);

    let (frame, point) = if n_burn > 0 {
        let warm = propagate_frame(problem, point, frame, n_burn)?;
        (warm.frame, warm.point)
    } else {
        (frame, point.clone())
    };
    let traj = propagate_frame(problem, &point, frame, n_meas)?;
    Ok(OperatorRates {
        rates: traj.logs.iter().map(|l| l / traj.horizon).collect(),
        window: traj.horizon,
    })
}

// ---------------------------------------------------------------------------
// Report structure
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResolutionInfo {
    pub n_cells: usize,
    pub dt: f64,
    pub theta: f64,
    pub lumped_mass: bool,
    pub horizon: f64,
    pub burn_in: f64,
    pub block_length: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub t_spin: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportFlags {
    /// `|E1 - E2|` within the identity residual (plus rounding slack).
    pub e1_e2_concordant: bool,
    /// E2 below E3 pointwise and E1 below E3 within sampling error;
    /// absent when E3 is unavailable.
    pub upper_bound_ok: Option<bool>,
    /// Growth bound unchanged (within 10%) when the horizon doubles.
    pub gamma_stable: bool,
    /// Spin-up M-distance within tolerance on the reported orbit.
    pub spin_up_converged: bool,
}

/// Batch result of one scenario run; serialized as `report.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub schema_version: String,
    pub e1: f64,
    pub e1_stderr: f64,
    pub e2: f64,
    pub e2_stderr: f64,
    pub e3: Option<f64>,
    pub e3_stderr: Option<f64>,
    pub e3_unavailable_reason: Option<String>,
    pub ln_rho1_mc: f64,
    pub ln_rho1_mc_stderr: f64,
    pub ln_rho1_dropped: usize,
    pub op_norm_rate: f64,
    pub identity_residual: f64,
    pub gamma_hat: f64,
    /// Heuristic: the direct estimate fell substantially when the horizon
    /// doubled, suggesting divergence to minus infinity.
    pub divergent_downward: bool,
    pub resolution: ResolutionInfo,
    pub flags: ReportFlags,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{BoundaryKind, ProblemCoefficients};
    use crate::fem::Mesh1D;
    use crate::flow::MetricFlowSpec;
    use crate::propagate::{
        positive_constant_state, CoefficientTimeRule, SchemeConfig, TimeScheme,
    };
    use std::f64::consts::PI;

    fn problem(a: &str, a1: &str, b: &str, c0: &str, bc: BoundaryKind, n: usize, dt: f64) -> Problem {
        Problem {
            mesh: Mesh1D::uniform(n),
            coeffs: ProblemCoefficients::parse(a, a1, b, c0, None, None).unwrap(),
            flow: MetricFlowSpec::rotation(vec![1.0]),
            bc,
            scheme: SchemeConfig {
                dt,
                scheme: TimeScheme::CrankNicolson,
                lumped_mass: false,
                coefficient_time_rule: CoefficientTimeRule::Midpoint,
            },
        }
    }

    fn start(p: &Problem, origin: f64) -> PropagatorState {
        let point = FlowPoint::at_origin(&p.flow, vec![origin]).unwrap();
        positive_constant_state(p, &point).unwrap()
    }

    #[test]
    fn flat_mode_e2_matches_the_closed_form_average() {
        let p = problem(
            "1",
            "0",
            "0",
            "0.8*sin(2*pi*w1)",
            BoundaryKind::Neumann,
            16,
            1e-3,
        );
        let horizons = Horizons {
            total: 2.0,
            burn_in: 0.0,
            block_length: 0.1,
        };
        let m = measure_orbit(&p, start(&p, 0.25), &horizons, &MeasureOptions::default()).unwrap();
        // (1/T) int_0^T 0.8 sin(2 pi (0.25 + t)) dt over T = 2 (full periods).
        let expected = 0.0;
        assert!((m.e2 - expected).abs() < 1e-4, "e2 {}", m.e2);
        // On the constant mode dlog is the exact midpoint sample of kappa, so
        // the residual is the midpoint-vs-trapezoid quadrature gap:
        // (dt^2/8) mean|kappa''| = 0.8 pi dt^2 over whole periods.
        let oracle = 0.8 * PI * p.scheme.dt * p.scheme.dt;
        assert!(
            (m.identity_residual / oracle - 1.0).abs() < 1e-3,
            "residual {} oracle {}",
            m.identity_residual,
            oracle
        );
        assert!(
            (m.e1 - m.e2).abs() <= m.identity_residual + 1e-12,
            "e1 {} e2 {} residual {}",
            m.e1,
            m.e2,
            m.identity_residual
        );
    }

    #[test]
    fn autonomous_routes_agree_to_solver_accuracy() {
        let p = problem("1", "0", "0", "0", BoundaryKind::Dirichlet, 64, 1e-3);
        let point = FlowPoint::at_origin(&p.flow, vec![0.0]).unwrap();
        let spin = spin_up_floquet(&p, &point, 1.0).unwrap();
        let horizons = Horizons {
            total: 2.0,
            burn_in: 0.0,
            block_length: 0.1,
        };
        let opts = MeasureOptions {
            with_eigen: true,
            with_c0: true,
            c0_grid: 65,
        };
        let m = measure_orbit(&p, spin.state, &horizons, &opts).unwrap();
        let e3 = m.e3.unwrap();
        assert!((m.e1 - m.e2).abs() < 1e-6, "e1 {} e2 {}", m.e1, m.e2);
        assert!((m.e1 - e3).abs() < 1e-6, "e1 {} e3 {e3}", m.e1);
        assert!((m.e1 + PI * PI).abs() < 5e-3, "e1 {}", m.e1);
        assert!(m.min_eigen_gap.unwrap() >= -1e-9);
    }

    #[test]
    fn invariant_upper_bound_averages_the_frozen_eigenvalue() {
        // c0(w) = sin(2 pi w) constant in x under Neumann: the frozen
        // principal eigenvalue is exactly sin(2 pi w), with invariant mean 0.
        let p = problem(
            "1",
            "0",
            "0",
            "sin(2*pi*w1)",
            BoundaryKind::Neumann,
            12,
            1e-3,
        );
        let ub = upper_bound(
            &p,
            &UpperBoundMode::Invariant {
                n_samples: 400,
                seed: 9,
            },
        )
        .unwrap();
        assert_eq!(ub.samples, 400);
        assert!(ub.stderr > 0.02 && ub.stderr < 0.05, "stderr {}", ub.stderr);
        assert!(ub.value.abs() < 3.5 * ub.stderr, "value {}", ub.value);
    }

    #[test]
    fn upper_bound_refuses_first_order_terms() {
        let p = problem(
            "1",
            "0",
            "0.3*sin(pi*x)",
            "0",
            BoundaryKind::Dirichlet,
            16,
            1e-3,
        );
        match upper_bound(
            &p,
            &UpperBoundMode::Invariant {
                n_samples: 4,
                seed: 0,
            },
        ) {
            Err(EstimateError::UpperBoundUnavailable { reason }) => {
                assert!(reason.contains("first-order"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn monte_carlo_agrees_with_the_autonomous_eigenvalue() {
        let p = problem("1", "0", "0", "0", BoundaryKind::Dirichlet, 48, 1e-3);
        let mc = lyapunov_lnrho1_mc(&p, &MonteCarloOptions::new(8, 3, 1.0, 1.0)).unwrap();
        assert_eq!(mc.dropped, 0);
        assert_eq!(mc.kept, 8);
        // All samples see the same autonomous problem.
        assert!(mc.stderr < 1e-9, "stderr {}", mc.stderr);
        assert!((mc.value + PI * PI).abs() < 5e-3, "value {}", mc.value);
    }

    #[test]
    fn monte_carlo_rejects_single_samples_and_mass_drops() {
        let p = problem("1", "0", "0", "0", BoundaryKind::Dirichlet, 16, 1e-3);
        assert!(matches!(
            lyapunov_lnrho1_mc(&p, &MonteCarloOptions::new(1, 0, 1.0, 1.0)),
            Err(EstimateError::NotEnoughSamples { n: 1 })
        ));
        let mut opts = MonteCarloOptions::new(4, 0, 1.0, 0.5);
        opts.spin_tolerance = 0.0;
        match lyapunov_lnrho1_mc(&p, &opts) {
            Err(EstimateError::TooManyDropped { dropped, total }) => {
                assert_eq!((dropped, total), (4, 4));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn frame_of_one_reproduces_the_direct_estimate() {
        let p = problem(
            "1 + 0.25*cos(2*pi*w1)*sin(pi*x)",
            "0",
            "0",
            "0.8*sin(2*pi*w1)",
            BoundaryKind::Dirichlet,
            48,
            1e-3,
        );
        // Same starting profile on both routes: the rate frame interpolates
        // sin(pi x) internally, so the direct run starts from it too. The two
        // only differ in summation order (batch means vs sequential log).
        let point = FlowPoint::at_origin(&p.flow, vec![0.7]).unwrap();
        let u0 = interpolate(&p.mesh, p.bc, |x| (PI * x).sin());
        let state = crate::propagate::initial_state(&p, &point, &u0).unwrap();
        let horizons = Horizons {
            total: 1.0,
            burn_in: 0.0,
            block_length: 0.05,
        };
        let direct = lyapunov_direct(&p, state, &horizons).unwrap();
        let frame = operator_norm_rate(&p, &point, 1, 1.0, 0.0).unwrap();
        assert!(
            (frame.rates[0] - direct.value).abs() < 1e-10,
            "{} vs {}",
            frame.rates[0],
            direct.value
        );
    }

    #[test]
    fn frame_rates_separate_and_stay_ordered() {
        let p = problem("1", "0", "0", "0", BoundaryKind::Dirichlet, 48, 1e-3);
        let point = FlowPoint::at_origin(&p.flow, vec![0.0]).unwrap();
        let rates = operator_norm_rate(&p, &point, 3, 2.0, 0.0).unwrap().rates;
        assert!(rates[0] > rates[1] && rates[1] > rates[2], "{rates:?}");
        assert!(matches!(
            operator_norm_rate(&p, &point, 500, 1.0, 0.0),
            Err(EstimateError::FrameTooLarge { .. })
        ));
    }
}
