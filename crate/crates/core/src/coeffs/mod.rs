//! Problem coefficients: the scalar fields `a, a1, b, c0` of the
//! divergence-form operator
//!
//! ```text
//!   u_t = (a(w, x) u_x + a1(w, x) u)_x + b(w, x) u_x + c0(w, x) u
//! ```
//!
//! on the unit interval, each given as an expression over `x`, the driver
//! coordinates `w1..wd`, and the driver amplitude `s`. Robin boundaries take
//! two extra expressions `d0_left`, `d0_right` that may depend on the driver
//! but not on `x`.

pub mod expr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use expr::{parse_expression, EvalContext, EvalError, Expr, ParseError, Program};

use crate::flow::{FlowPoint, MetricFlowSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
    Robin,
}

impl std::fmt::Display for BoundaryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            BoundaryKind::Dirichlet => "dirichlet",
            BoundaryKind::Neumann => "neumann",
            BoundaryKind::Robin => "robin",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum CoeffError {
    #[error("coefficient `{field}` failed to parse: {source}")]
    Parse {
        field: &'static str,
        source: ParseError,
    },
    #[error("coefficient `{field}` failed to evaluate: {source}")]
    Eval { field: String, source: EvalError },
    #[error("coefficient `{field}` is not finite at x = {x}")]
    NonFinite { field: String, x: f64 },
    #[error("model assumption violated: {0}")]
    Assumption(String),
}

/// The coefficient expressions of one problem.
#[derive(Clone, Debug)]
pub struct ProblemCoefficients {
    pub a: Expr,
    pub a1: Expr,
    pub b: Expr,
    pub c0: Expr,
    pub d0_left: Option<Expr>,
    pub d0_right: Option<Expr>,
}

impl ProblemCoefficients {
    /// Parses all coefficient sources; errors carry the field name.
    pub fn parse(
        a: &str,
        a1: &str,
        b: &str,
        c0: &str,
        d0_left: Option<&str>,
        d0_right: Option<&str>,
    ) -> Result<Self, CoeffError> {
        let field = |field: &'static str, src: &str| {
            parse_expression(src).map_err(|source| CoeffError::Parse { field, source })
        };
        let opt = |name: &'static str, src: Option<&str>| -> Result<Option<Expr>, CoeffError> {
            src.map(|s| field(name, s)).transpose()
        };
        Ok(ProblemCoefficients {
            a: field("a", a)?,
            a1: field("a1", a1)?,
            b: field("b", b)?,
            c0: field("c0", c0)?,
            d0_left: opt("d0_left", d0_left)?,
            d0_right: opt("d0_right", d0_right)?,
        })
    }

    fn fields(&self) -> impl Iterator<Item = (&'static str, &Expr)> {
        [
            ("a", &self.a),
            ("a1", &self.a1),
            ("b", &self.b),
            ("c0", &self.c0),
        ]
        .into_iter()
        .chain(self.d0_left.iter().map(|e| ("d0_left", e)))
        .chain(self.d0_right.iter().map(|e| ("d0_right", e)))
    }

    /// Largest 1-based driver coordinate index referenced by any field.
    pub fn max_w_index(&self) -> usize {
        self.fields()
            .map(|(_, e)| e.max_w_index())
            .max()
            .unwrap_or(0)
    }

    /// Whether any field references the amplitude variable `s`.
    pub fn references_amp(&self) -> bool {
        self.fields().any(|(_, e)| e.references_amp())
    }

    /// Whether every field is independent of the driver, i.e. the problem is
    /// autonomous in time.
    pub fn is_autonomous(&self) -> bool {
        self.fields()
            .all(|(_, e)| e.max_w_index() == 0 && !e.references_amp())
    }
}

/// Evaluates one coefficient at driver state `point` and position `x`.
pub fn eval_coefficient(expr: &Expr, point: &FlowPoint, x: f64) -> Result<f64, EvalError> {
    expr.eval(&EvalContext {
        x,
        w: point.coords(),
        amp: point.amp(),
    })
}

/// Default grid for scanning coefficients over the unit interval.
pub const DEFAULT_SCAN_GRID: usize = 1025;

/// Range estimate `(min(0, inf_x c0), max(0, sup_x c0))` of the zero-order
/// coefficient at driver state `point`, scanned on a uniform grid. The upper
/// half is the positive part's supremum used in growth bounds, so both ends
/// are clipped to include zero.
pub fn c0_bounds(
    coeffs: &ProblemCoefficients,
    point: &FlowPoint,
    grid: usize,
) -> Result<(f64, f64), CoeffError> {
    let n = grid.max(2);
    let mut lo = 0.0f64;
    let mut hi = 0.0f64;
    for k in 0..n {
        let x = k as f64 / (n - 1) as f64;
        let v = eval_coefficient(&coeffs.c0, point, x).map_err(|source| CoeffError::Eval {
            field: "c0".into(),
            source,
        })?;
        if !v.is_finite() {
            return Err(CoeffError::NonFinite {
                field: "c0".into(),
                x,
            });
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Ok((lo, hi))
}

/// Outcome of scanning the coefficients over sampled driver states.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Smallest sampled value of `a`; must stay positive (ellipticity).
    pub ellipticity_min: f64,
    pub sup_a: f64,
    pub sup_a1: f64,
    pub sup_b: f64,
    pub sup_c0: f64,
    /// Smallest sampled boundary coefficient (zero when no Robin data).
    pub d0_min: f64,
    /// Monte-Carlo mean of `sup_x |c0|` over driver samples, with its
    /// standard error: an integrability estimate for unbounded drivers.
    pub mean_sup_c0: f64,
    pub stderr_sup_c0: f64,
    /// Whether `c0` can grow without bound along driver realizations.
    pub c0_unbounded: bool,
    pub warnings: Vec<String>,
}

/// Scans the coefficients over `n_samples` invariant driver samples and a
/// uniform `grid` in `x`, rejecting hard assumption violations (ellipticity,
/// negative or x-dependent boundary coefficients, stale `w` indices) and
/// reporting soft issues as warnings.
pub fn validate_assumptions(
    coeffs: &ProblemCoefficients,
    flow: &MetricFlowSpec,
    bc: BoundaryKind,
    seed: u64,
    n_samples: usize,
    grid: usize,
) -> Result<ValidationReport, CoeffError> {
    flow.validate()
        .map_err(|e| CoeffError::Assumption(e.to_string()))?;
    let dim = flow.torus_dim();
    let max_w = coeffs.max_w_index();
    if max_w > dim {
        return Err(CoeffError::Assumption(format!(
            "coefficients reference w{max_w} but the driver has {dim} coordinate(s)"
        )));
    }
    if bc == BoundaryKind::Robin {
        for (name, d0) in [("d0_left", &coeffs.d0_left), ("d0_right", &coeffs.d0_right)] {
            match d0 {
                None => {
                    return Err(CoeffError::Assumption(format!(
                        "robin boundary requires `{name}`"
                    )))
                }
                Some(e) if e.references_x() => {
                    return Err(CoeffError::Assumption(format!(
                        "boundary coefficient `{name}` must not depend on x"
                    )))
                }
                Some(_) => {}
            }
        }
    }

    let provides_amp = matches!(
        flow.kind,
        crate::flow::DriverKind::SmoothedSwitching
            | crate::flow::DriverKind::UnboundedAmplitudeRotation
    );
    let mut warnings = flow.ergodicity_warnings();
    if coeffs.references_amp() && !provides_amp {
        warnings.push(
            "coefficients reference the amplitude variable s, which is constant 1 for this driver"
                .into(),
        );
    }

    let points = crate::flow::sample_invariant(flow, seed, n_samples.max(2))
        .map_err(|e| CoeffError::Assumption(e.to_string()))?;
    let n_grid = grid.max(2);

    let mut ellipticity_min = f64::INFINITY;
    let mut ellipticity_at = (0.0, 0.0);
    let mut sup = [0.0f64; 4];
    let mut d0_min = 0.0f64;
    let mut sup_c0_samples = Vec::with_capacity(points.len());
    for point in &points {
        let mut sup_c0_here = 0.0f64;
        for k in 0..n_grid {
            let x = k as f64 / (n_grid - 1) as f64;
            for (idx, (field, expr)) in [
                ("a", &coeffs.a),
                ("a1", &coeffs.a1),
                ("b", &coeffs.b),
                ("c0", &coeffs.c0),
            ]
            .into_iter()
            .enumerate()
            {
                let v = eval_coefficient(expr, point, x).map_err(|source| CoeffError::Eval {
                    field: field.into(),
                    source,
                })?;
                if !v.is_finite() {
                    return Err(CoeffError::NonFinite {
                        field: field.into(),
                        x,
                    });
                }
                sup[idx] = sup[idx].max(v.abs());
                if idx == 0 && v < ellipticity_min {
                    ellipticity_min = v;
                    ellipticity_at = (x, point.amp());
                }
                if idx == 3 {
                    sup_c0_here = sup_c0_here.max(v.abs());
                }
            }
        }
        sup_c0_samples.push(sup_c0_here);
        for d0 in [&coeffs.d0_left, &coeffs.d0_right].into_iter().flatten() {
            let v = eval_coefficient(d0, point, 0.0).map_err(|source| CoeffError::Eval {
                field: "d0".into(),
                source,
            })?;
            if !v.is_finite() {
                return Err(CoeffError::NonFinite {
                    field: "d0".into(),
                    x: 0.0,
                });
            }
            d0_min = d0_min.min(v);
        }
    }

    if ellipticity_min <= 0.0 {
        return Err(CoeffError::Assumption(format!(
            "ellipticity fails: a = {ellipticity_min} at x = {}, driver amplitude {}",
            ellipticity_at.0, ellipticity_at.1
        )));
    }
    if d0_min < 0.0 {
        return Err(CoeffError::Assumption(format!(
            "boundary coefficient is negative: min sampled d0 = {d0_min}"
        )));
    }

    let n = sup_c0_samples.len() as f64;
    let mean_sup_c0 = sup_c0_samples.iter().sum::<f64>() / n;
    let var = sup_c0_samples
        .iter()
        .map(|v| (v - mean_sup_c0).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    let stderr_sup_c0 = (var / n).sqrt();
    let c0_unbounded = coeffs.c0.references_amp()
        && flow.kind == crate::flow::DriverKind::UnboundedAmplitudeRotation;
    if c0_unbounded {
        warnings.push(format!(
            "c0 is unbounded along the driver; sampled integrability estimate mean(sup_x |c0|) = {mean_sup_c0:.4} +- {stderr_sup_c0:.4}"
        ));
    }

    Ok(ValidationReport {
        ellipticity_min,
        sup_a: sup[0],
        sup_a1: sup[1],
        sup_b: sup[2],
        sup_c0: sup[3],
        d0_min,
        mean_sup_c0,
        stderr_sup_c0,
        c0_unbounded,
        warnings,
    })
}
