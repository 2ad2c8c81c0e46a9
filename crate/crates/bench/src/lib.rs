//! Shared fixtures for the benchmarks: a representative quasiperiodic
//! problem at production resolution.

use parlyap::coeffs::ProblemCoefficients;
use parlyap::flow::MetricFlowSpec;
use parlyap::propagate::{CoefficientTimeRule, SchemeConfig, TimeScheme};
use parlyap::{BoundaryKind, Mesh1D, Problem};

pub fn quasiperiodic_problem(n_cells: usize, dt: f64) -> Problem {
    let coeffs = ProblemCoefficients::parse(
        "1 + 0.25*cos(2*pi*w1)*sin(pi*x) + 0.15*sin(2*pi*w2)",
        "0",
        "0",
        "0.8*sin(2*pi*w1) + 0.6*cos(2*pi*w2)*sin(pi*x)",
        None,
        None,
    )
    .expect("fixture coefficients parse");
    Problem {
        mesh: Mesh1D::uniform(n_cells),
        coeffs,
        flow: MetricFlowSpec::rotation(vec![1.0, 0.618_033_988_749_894_9]),
        bc: BoundaryKind::Dirichlet,
        scheme: SchemeConfig {
            dt,
            scheme: TimeScheme::CrankNicolson,
            lumped_mass: false,
            coefficient_time_rule: CoefficientTimeRule::Midpoint,
        },
    }
}
