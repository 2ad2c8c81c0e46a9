//! Scenario configuration, validation and the batch run pipeline.
//!
//! A scenario is described by a TOML document (see the presets under
//! `presets/`). Building a [`Scenario`] parses the coefficient expressions,
//! checks the model assumptions against sampled driver states, and fixes the
//! discretization. Running it produces three artifacts in the output
//! directory: `trace.csv` (the measured orbit), `report.json` (the estimator
//! report, schema-versioned), and `validation.json` (the assumption scan).

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coeffs::{
    validate_assumptions, BoundaryKind, CoeffError, ProblemCoefficients, ValidationReport,
};
use crate::estimate::{
    lyapunov_lnrho1_mc, measure_orbit, operator_norm_rate, EstimateError, EstimatorReport,
    Horizons, MeasureOptions, MonteCarloOptions, ReportFlags, ResolutionInfo,
    REPORT_SCHEMA_VERSION,
};
use crate::fem::{assemble_form, Mesh1D};
use crate::flow::{sample_invariant, DriverKind, FlowError, MetricFlowSpec};
use crate::propagate::{
    spin_up_floquet, steps_for, CoefficientTimeRule, PropagateError, Problem, SchemeConfig,
    TimeScheme,
};

fn zero_expr() -> String {
    "0".into()
}

fn default_theta() -> f64 {
    0.5
}

fn default_t_spin() -> f64 {
    1.0
}

fn default_n_samples() -> usize {
    100
}

fn default_trace_stride() -> usize {
    10
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientsConfig {
    pub a: String,
    #[serde(default = "zero_expr")]
    pub a1: String,
    #[serde(default = "zero_expr")]
    pub b: String,
    pub c0: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d0_left: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d0_right: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub n_cells: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    /// Step size; omitted means a stability-derived suggestion is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default)]
    pub lumped_mass: bool,
    #[serde(default)]
    pub coefficient_time_rule: CoefficientTimeRule,
}

impl Default for SchemeSection {
    fn default() -> Self {
        SchemeSection {
            dt: None,
            theta: default_theta(),
            lumped_mass: false,
            coefficient_time_rule: CoefficientTimeRule::Midpoint,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonsConfig {
    #[serde(rename = "T")]
    pub total: f64,
    #[serde(default)]
    pub burn_in: f64,
    #[serde(rename = "T_spin", default = "default_t_spin")]
    pub t_spin: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Batch length for block standard errors and the per-sample Monte-Carlo
    /// window; defaults to a twentieth of the measurement window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_length: Option<f64>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            n_samples: default_n_samples(),
            seed: 0,
            block_length: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsConfig {
    #[serde(default = "default_trace_stride")]
    pub trace_stride: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_path: Option<String>,
}

impl Default for OutputsConfig {
    fn default() -> Self {
        OutputsConfig {
            trace_stride: default_trace_stride(),
            trace_path: None,
            report_path: None,
            validation_path: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub bc: BoundaryKind,
    pub flow: MetricFlowSpec,
    pub coefficients: CoefficientsConfig,
    pub mesh: MeshConfig,
    #[serde(default)]
    pub scheme: SchemeSection,
    pub horizons: HorizonsConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub outputs: OutputsConfig,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Validation(#[from] CoeffError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl ScenarioError {
    /// Process exit code the CLI maps this error to: 2 for configuration and
    /// validation problems, 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Config(_) | ScenarioError::Validation(_) => 2,
            ScenarioError::Numerical(_) => 3,
            ScenarioError::Io(_) => 1,
        }
    }
}

impl From<FlowError> for ScenarioError {
    fn from(e: FlowError) -> Self {
        ScenarioError::Config(e.to_string())
    }
}

impl From<EstimateError> for ScenarioError {
    fn from(e: EstimateError) -> Self {
        ScenarioError::Numerical(e.to_string())
    }
}

impl From<PropagateError> for ScenarioError {
    fn from(e: PropagateError) -> Self {
        ScenarioError::Numerical(e.to_string())
    }
}

/// A validated, runnable scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: Option<String>,
    pub config: ScenarioConfig,
    pub problem: Problem,
    pub validation: ValidationReport,
    /// Batch length actually used (config value or default).
    pub block_length: f64,
}

const PRESETS: &[(&str, &str, &str)] = &[
    (
        "dirichlet-laplacian",
        include_str!("../presets/dirichlet-laplacian.toml"),
        "autonomous heat equation; every route reproduces the principal eigenvalue near -pi^2",
    ),
    (
        "quasiperiodic-symmetric",
        include_str!("../presets/quasiperiodic-symmetric.toml"),
        "two-frequency quasiperiodic symmetric problem; all three routes apply",
    ),
    (
        "robin-advection",
        include_str!("../presets/robin-advection.toml"),
        "advective non-symmetric problem with Robin boundaries; positivity-preserving stepping",
    ),
    (
        "unbounded-c0",
        include_str!("../presets/unbounded-c0.toml"),
        "integrable singular driver amplitude makes c0 unbounded along the orbit",
    ),
    (
        "switching-symmetric",
        include_str!("../presets/switching-symmetric.toml"),
        "smoothed three-state switching driver under Neumann boundaries",
    ),
];

impl Scenario {
    /// Names, sources and one-line descriptions of the built-in scenarios.
    pub fn preset_catalog() -> impl Iterator<Item = (&'static str, &'static str)> {
        PRESETS.iter().map(|(name, _, desc)| (*name, *desc))
    }

    pub fn preset_source(name: &str) -> Option<&'static str> {
        PRESETS
            .iter()
            .find(|(n, _, _)| *n == name)
            .map(|(_, src, _)| *src)
    }

    pub fn preset(name: &str) -> Result<Scenario, ScenarioError> {
        let src = Scenario::preset_source(name).ok_or_else(|| {
            ScenarioError::Config(format!(
                "unknown preset `{name}`; available: {}",
                PRESETS
                    .iter()
                    .map(|(n, _, _)| *n)
                    .collect::<Vec<_>>()
                    .join(", ")
            ))
        })?;
        Scenario::from_toml_str(src, Some(name.to_string()))
    }

    pub fn from_toml_str(src: &str, name: Option<String>) -> Result<Scenario, ScenarioError> {
        let config: ScenarioConfig =
            toml::from_str(src).map_err(|e| ScenarioError::Config(e.to_string()))?;
        Scenario::from_config(config, name)
    }

    pub fn from_toml_path(path: &Path) -> Result<Scenario, ScenarioError> {
        let src = fs::read_to_string(path).map_err(|e| {
            ScenarioError::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned());
        Scenario::from_toml_str(&src, name)
    }

    pub fn from_config(
        config: ScenarioConfig,
        name: Option<String>,
    ) -> Result<Scenario, ScenarioError> {
        let fail = |msg: String| Err(ScenarioError::Config(msg));

        config.flow.validate()?;
        if config.mesh.n_cells < 2 {
            return fail(format!(
                "mesh.n_cells must be at least 2, got {}",
                config.mesh.n_cells
            ));
        }
        let scheme_kind = TimeScheme::from_theta(config.scheme.theta).ok_or_else(|| {
            ScenarioError::Config(format!(
                "scheme.theta must be 0.5 (Crank-Nicolson) or 1.0 (implicit Euler), got {}",
                config.scheme.theta
            ))
        })?;
        let coeffs = ProblemCoefficients::parse(
            &config.coefficients.a,
            &config.coefficients.a1,
            &config.coefficients.b,
            &config.coefficients.c0,
            config.coefficients.d0_left.as_deref(),
            config.coefficients.d0_right.as_deref(),
        )?;

        let mut validation = validate_assumptions(
            &coeffs,
            &config.flow,
            config.bc,
            config.sampling.seed,
            32,
            257,
        )?;

        let mesh = Mesh1D::uniform(config.mesh.n_cells);
        let horizons = &config.horizons;
        if !(horizons.total > 0.0) || !horizons.total.is_finite() {
            return fail("horizons.T must be positive".into());
        }
        if horizons.burn_in < 0.0 || horizons.burn_in >= horizons.total {
            return fail(format!(
                "horizons.burn_in must lie in [0, T), got {} with T = {}",
                horizons.burn_in, horizons.total
            ));
        }
        if !(horizons.t_spin > 0.0) {
            return fail("horizons.T_spin must be positive".into());
        }

        let dt = match config.scheme.dt {
            Some(dt) if dt > 0.0 && dt.is_finite() => dt,
            Some(dt) => return fail(format!("scheme.dt must be positive, got {dt}")),
            None => {
                let dt = suggested_dt(
                    &mesh,
                    &config.flow,
                    validation.sup_a,
                    horizons.total,
                    horizons.burn_in,
                )
                .ok_or_else(|| {
                    ScenarioError::Config(
                        "no suggested step divides both horizons.T and horizons.burn_in; \
                         set scheme.dt explicitly"
                            .into(),
                    )
                })?;
                validation
                    .warnings
                    .push(format!("scheme.dt not set; using suggested dt = {dt}"));
                dt
            }
        };

        let scheme = SchemeConfig {
            dt,
            scheme: scheme_kind,
            lumped_mass: config.scheme.lumped_mass,
            coefficient_time_rule: config.scheme.coefficient_time_rule,
        };
        let problem = Problem {
            mesh,
            coeffs,
            flow: config.flow.clone(),
            bc: config.bc,
            scheme,
        };

        for (label, t) in [("T", horizons.total), ("burn_in", horizons.burn_in)] {
            if steps_for(t, dt).is_err() {
                return fail(format!(
                    "horizons.{label} = {t} is not a whole number of steps of dt = {dt}"
                ));
            }
        }
        let window = horizons.total - horizons.burn_in;
        let block_length = match config.sampling.block_length {
            Some(b) => {
                if !(b > 0.0) || steps_for(b, dt).map(|n| n == 0).unwrap_or(true) {
                    return fail(format!(
                        "sampling.block_length = {b} must be a positive whole number of steps of dt = {dt}"
                    ));
                }
                b
            }
            None => {
                let steps = ((window / 20.0) / dt).round().max(1.0);
                steps * dt
            }
        };

        if config.flow.kind == DriverKind::SmoothedSwitching {
            let need = (2.0 * horizons.t_spin).max(2.0 * horizons.total) + 1.0;
            let window = config.flow.path_window();
            if window < need {
                return fail(format!(
                    "flow.path_window = {window} is too small; runs reach +-{need} \
                     (twice the horizon for the stability check, twice T_spin for spin-up)"
                ));
            }
        }

        if config.outputs.trace_stride == 0 {
            return fail("outputs.trace_stride must be at least 1".into());
        }

        Ok(Scenario {
            name,
            config,
            problem,
            validation,
            block_length,
        })
    }

    /// Full batch run. Writes `trace.csv`, `report.json` and
    /// `validation.json` under `out_dir` and returns the report.
    pub fn run(
        &self,
        out_dir: &Path,
        seed_override: Option<u64>,
        dump_matrices: bool,
    ) -> Result<RunArtifacts, ScenarioError> {
        let problem = &self.problem;
        let config = &self.config;
        let seed = seed_override.unwrap_or(config.sampling.seed);
        let dt = problem.scheme.dt;
        let spin_tolerance = 1e-6;

        let anchor = sample_invariant(&problem.flow, seed, 1)?
            .pop()
            .expect("one sample");
        let spin = spin_up_floquet(problem, &anchor, config.horizons.t_spin)?;
        let spin_up_converged = spin.m_distance <= spin_tolerance;

        let with_eigen = problem.is_symmetric();
        let horizons = Horizons {
            total: config.horizons.total,
            burn_in: config.horizons.burn_in,
            block_length: self.block_length,
        };
        let opts = MeasureOptions {
            with_eigen,
            with_c0: true,
            c0_grid: 257,
        };
        let m = measure_orbit(problem, spin.state.clone(), &horizons, &opts)?;

        // Stability check: double the measurement window.
        let window = config.horizons.total - config.horizons.burn_in;
        let doubled = Horizons {
            total: config.horizons.burn_in + 2.0 * window,
            ..horizons
        };
        let long_opts = MeasureOptions {
            with_eigen: false,
            with_c0: true,
            c0_grid: 257,
        };
        let m2 = measure_orbit(problem, spin.state.clone(), &doubled, &long_opts)?;
        let gamma_hat = m.gamma_hat.expect("c0 tracking enabled");
        let gamma_hat_2 = m2.gamma_hat.expect("c0 tracking enabled");
        let gamma_stable = gamma_hat_2 - gamma_hat <= 0.1 * gamma_hat.abs().max(1.0);
        let divergent_downward = m2.e1 < m.e1 - 0.2 * m.e1.abs().max(1.0);

        let mc = lyapunov_lnrho1_mc(
            problem,
            &MonteCarloOptions {
                n_samples: config.sampling.n_samples,
                seed,
                t_spin: config.horizons.t_spin,
                horizon: self.block_length,
                spin_tolerance,
            },
        )?;

        let op = operator_norm_rate(problem, &spin.state.point, 1, window, horizons.burn_in)?;

        let e1_e2_concordant = (m.e1 - m.e2).abs() <= m.identity_residual + 1e-12;
        let upper_bound_ok = m.e3.map(|e3| {
            // The statistical band degenerates on autonomous problems, so
            // both clauses carry the same 1e-8 floating-point floor.
            let pointwise = m.min_eigen_gap.map_or(false, |g| g >= -1e-8);
            let spread = 3.0 * (m.e1_stderr + m.e3_stderr.unwrap_or(0.0));
            pointwise && m.e1 <= e3 + spread + 1e-8
        });

        let report = EstimatorReport {
            schema_version: REPORT_SCHEMA_VERSION.to_string(),
            e1: m.e1,
            e1_stderr: m.e1_stderr,
            e2: m.e2,
            e2_stderr: m.e2_stderr,
            e3: m.e3,
            e3_stderr: m.e3_stderr,
            e3_unavailable_reason: if with_eigen {
                None
            } else {
                Some(
                    "the form has first-order terms (a1 or b not identically 0), \
                     so the frozen-eigenvalue bound does not apply"
                        .into(),
                )
            },
            ln_rho1_mc: mc.value,
            ln_rho1_mc_stderr: mc.stderr,
            ln_rho1_dropped: mc.dropped,
            op_norm_rate: op.rates[0],
            identity_residual: m.identity_residual,
            gamma_hat,
            divergent_downward,
            resolution: ResolutionInfo {
                n_cells: config.mesh.n_cells,
                dt,
                theta: problem.scheme.scheme.theta(),
                lumped_mass: problem.scheme.lumped_mass,
                horizon: config.horizons.total,
                burn_in: config.horizons.burn_in,
                block_length: self.block_length,
                n_samples: config.sampling.n_samples,
                seed,
                t_spin: config.horizons.t_spin,
            },
            flags: ReportFlags {
                e1_e2_concordant,
                upper_bound_ok,
                gamma_stable,
                spin_up_converged,
            },
        };

        let finite = [
            report.e1,
            report.e1_stderr,
            report.e2,
            report.e2_stderr,
            report.ln_rho1_mc,
            report.ln_rho1_mc_stderr,
            report.op_norm_rate,
            report.identity_residual,
            report.gamma_hat,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(ScenarioError::Numerical(
                "estimates contain non-finite values".into(),
            ));
        }

        fs::create_dir_all(out_dir)?;
        let trace_path = out_dir.join(
            config
                .outputs
                .trace_path
                .as_deref()
                .unwrap_or("trace.csv"),
        );
        let report_path = out_dir.join(
            config
                .outputs
                .report_path
                .as_deref()
                .unwrap_or("report.json"),
        );
        let validation_path = out_dir.join(
            config
                .outputs
                .validation_path
                .as_deref()
                .unwrap_or("validation.json"),
        );

        let mut trace = std::io::BufWriter::new(fs::File::create(&trace_path)?);
        if with_eigen {
            writeln!(trace, "t,log_norm,kappa,lambda_princ")?;
        } else {
            writeln!(trace, "t,log_norm,kappa")?;
        }
        for (i, rec) in m.records.iter().enumerate() {
            if i % config.outputs.trace_stride != 0 {
                continue;
            }
            if let Some(lambda) = rec.lambda_princ {
                writeln!(
                    trace,
                    "{},{},{},{}",
                    rec.t_end, rec.log_norm, rec.kappa, lambda
                )?;
            } else {
                writeln!(trace, "{},{},{}", rec.t_end, rec.log_norm, rec.kappa)?;
            }
        }
        trace.flush()?;

        write_json(&report_path, &report)?;
        write_json(&validation_path, &self.validation)?;

        if dump_matrices {
            let mass = problem.mass();
            let form = assemble_form(
                &problem.mesh,
                &problem.coeffs,
                &anchor,
                problem.bc,
                problem.scheme.lumped_mass,
            )
            .map_err(|e| ScenarioError::Numerical(e.to_string()))?;
            let dump = MatrixDump {
                n: mass.n(),
                mass: mass.triplets(),
                form_at_anchor: form.triplets(),
            };
            write_json(&out_dir.join("matrices.json"), &dump)?;
        }

        Ok(RunArtifacts {
            report,
            trace_path,
            report_path,
            validation_path,
        })
    }
}

#[derive(Serialize)]
struct MatrixDump {
    n: usize,
    mass: Vec<(usize, usize, f64)>,
    form_at_anchor: Vec<(usize, usize, f64)>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ScenarioError> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| ScenarioError::Numerical(format!("serialization failed: {e}")))?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// Step-size suggestion when the configuration leaves `dt` out: the smaller
/// of a diffusion-scale step and a hundredth of the fastest coefficient
/// period, snapped to the smallest step count that puts both the horizon and
/// the burn-in on the grid.
fn suggested_dt(
    mesh: &Mesh1D,
    flow: &MetricFlowSpec,
    sup_a: f64,
    total: f64,
    burn_in: f64,
) -> Option<f64> {
    let h = mesh.h();
    let diffusion = h * h / (2.0 * sup_a.max(1e-12));
    let period = match flow.kind {
        DriverKind::SmoothedSwitching => flow.switching_rate.map(|r| 1.0 / r),
        _ => flow.frequency_vector.as_ref().and_then(|nu| {
            nu.iter()
                .filter(|v| **v != 0.0)
                .map(|v| 1.0 / v.abs())
                .min_by(|a, b| a.partial_cmp(b).expect("finite"))
        }),
    }
    .unwrap_or(f64::INFINITY);
    let raw = diffusion.min(0.01 * period).min(total);
    let n0 = (total / raw).ceil().max(1.0) as u64;
    (n0..n0.saturating_add(10_000)).find_map(|n| {
        let dt = total / n as f64;
        (steps_for(total, dt).is_ok() && steps_for(burn_in, dt).is_ok()).then_some(dt)
    })
}

#[derive(Debug)]
pub struct RunArtifacts {
    pub report: EstimatorReport,
    pub trace_path: PathBuf,
    pub report_path: PathBuf,
    pub validation_path: PathBuf,
}
