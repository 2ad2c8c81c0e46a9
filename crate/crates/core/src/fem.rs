//! Piecewise-linear finite elements on the unit interval.
//!
//! [`assemble_mass`] and [`assemble_form`] build the tridiagonal Galerkin
//! matrices of the weak form
//!
//! ```text
//!   B(u, v) = int_0^1 (a u' + a1 u) v' - (b u' + c0 u) v dx
//!           + d0_left u(0) v(0) + d0_right u(1) v(1)
//! ```
//!
//! with the convention `A[i][j] = B(phi_j, phi_i)` (trial function indexes the
//! column), so that the semi-discrete evolution reads `M du/dt = -A u`.
//! Element integrals use two-point Gauss quadrature, exact for the `a = const`
//! stiffness and for polynomial mass terms up to degree three.
//!
//! Lumped mode replaces both the mass matrix and the zero-order block of the
//! form by their row-sum diagonal. Using the same rule on both sides keeps
//! the algebraic identity `A(c0 + s) = A(c0) - s M` exact in either mode,
//! which the estimators rely on.

use thiserror::Error;

use crate::coeffs::expr::{EvalContext, EvalError, Program};
use crate::coeffs::{BoundaryKind, ProblemCoefficients};
use crate::flow::FlowPoint;
use crate::linalg::TriMat;

/// Uniform mesh of the unit interval with cached Gauss points.
#[derive(Clone, Debug)]
pub struct Mesh1D {
    n_cells: usize,
    h: f64,
    nodes: Vec<f64>,
    gauss: Vec<[f64; 2]>,
}

impl Mesh1D {
    pub fn uniform(n_cells: usize) -> Mesh1D {
        assert!(n_cells >= 2, "mesh needs at least 2 cells");
        let h = 1.0 / n_cells as f64;
        let nodes: Vec<f64> = (0..=n_cells).map(|k| k as f64 / n_cells as f64).collect();
        let half_gap = h / (2.0 * 3.0f64.sqrt());
        let gauss = (0..n_cells)
            .map(|e| {
                let mid = 0.5 * (nodes[e] + nodes[e + 1]);
                [mid - half_gap, mid + half_gap]
            })
            .collect();
        Mesh1D {
            n_cells,
            h,
            nodes,
            gauss,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Number of unknowns: interior nodes for Dirichlet, all nodes otherwise.
    pub fn n_dofs(&self, bc: BoundaryKind) -> usize {
        match bc {
            BoundaryKind::Dirichlet => self.n_cells - 1,
            _ => self.n_cells + 1,
        }
    }

    /// Node coordinates of the unknowns, in dof order.
    pub fn dof_positions(&self, bc: BoundaryKind) -> Vec<f64> {
        match bc {
            BoundaryKind::Dirichlet => self.nodes[1..self.n_cells].to_vec(),
            _ => self.nodes.clone(),
        }
    }
}

/// Samples `f` at the dof positions.
pub fn interpolate(mesh: &Mesh1D, bc: BoundaryKind, f: impl Fn(f64) -> f64) -> Vec<f64> {
    mesh.dof_positions(bc).into_iter().map(f).collect()
}

#[derive(Debug, Error)]
pub enum FemError {
    #[error("coefficient `{field}` failed to evaluate: {source}")]
    Eval {
        field: &'static str,
        source: EvalError,
    },
    #[error("coefficient `{field}` is not finite at element {element} (x = {x})")]
    NonFinite {
        field: &'static str,
        element: usize,
        x: f64,
    },
}

/// Mass matrix `M[i][j] = int phi_i phi_j`, or its row-sum diagonal.
pub fn assemble_mass(mesh: &Mesh1D, bc: BoundaryKind, lumped: bool) -> TriMat {
    let n = mesh.n_cells;
    let h = mesh.h;
    let mut diag = vec![0.0; n + 1];
    let mut off = vec![0.0; n];
    for e in 0..n {
        if lumped {
            diag[e] += h / 2.0;
            diag[e + 1] += h / 2.0;
        } else {
            diag[e] += h / 3.0;
            diag[e + 1] += h / 3.0;
            off[e] += h / 6.0;
        }
    }
    restrict(bc, n, diag, off.clone(), off)
}

struct BoundField {
    name: &'static str,
    program: Program,
}

impl BoundField {
    fn new(name: &'static str, expr: &crate::coeffs::Expr, point: &FlowPoint) -> BoundField {
        let bound = expr.bind_driver(point.coords(), point.amp());
        BoundField {
            name,
            program: Program::compile(&bound),
        }
    }

    fn eval(
        &self,
        x: f64,
        element: usize,
        stack: &mut Vec<f64>,
    ) -> Result<f64, FemError> {
        let ctx = EvalContext {
            x,
            w: &[],
            amp: 0.0,
        };
        let v = self
            .program
            .eval_with_stack(&ctx, stack)
            .map_err(|source| FemError::Eval {
                field: self.name,
                source,
            })?;
        if !v.is_finite() {
            return Err(FemError::NonFinite {
                field: self.name,
                element,
                x,
            });
        }
        Ok(v)
    }
}

/// Assembles the form matrix at driver state `point`.
///
/// `lumped` controls only the zero-order (`c0`) block; pass the same flag
/// used for [`assemble_mass`] so shifts of `c0` by a constant `s` move the
/// matrix by exactly `-s M`.
pub fn assemble_form(
    mesh: &Mesh1D,
    coeffs: &ProblemCoefficients,
    point: &FlowPoint,
    bc: BoundaryKind,
    lumped: bool,
) -> Result<TriMat, FemError> {
    let n = mesh.n_cells;
    let h = mesh.h;
    let w = h / 2.0;
    let inv_h = 1.0 / h;

    let fa = BoundField::new("a", &coeffs.a, point);
    let fa1 = BoundField::new("a1", &coeffs.a1, point);
    let fb = BoundField::new("b", &coeffs.b, point);
    let fc0 = BoundField::new("c0", &coeffs.c0, point);
    let mut stack = Vec::with_capacity(16);

    // Hat function values at the two Gauss points of the reference cell.
    let p = 0.5 + 0.5 / 3.0f64.sqrt();
    let m = 0.5 - 0.5 / 3.0f64.sqrt();
    // (phi_left, phi_right) at each Gauss point.
    let basis = [[p, m], [m, p]];

    let mut diag = vec![0.0; n + 1];
    let mut sub = vec![0.0; n];
    let mut sup = vec![0.0; n];
    for e in 0..n {
        // Local 2x2 block, rows = test (i), cols = trial (j), 0 = left node.
        let mut local = [[0.0f64; 2]; 2];
        for (g, &x) in mesh.gauss[e].iter().enumerate() {
            let av = fa.eval(x, e, &mut stack)?;
            let a1v = fa1.eval(x, e, &mut stack)?;
            let bv = fb.eval(x, e, &mut stack)?;
            let c0v = fc0.eval(x, e, &mut stack)?;
            let phi = basis[g];
            let stiff = w * av * inv_h * inv_h;
            local[0][0] += stiff;
            local[1][1] += stiff;
            local[0][1] -= stiff;
            local[1][0] -= stiff;
            // a1 u v' and -b u' v with phi' = -1/h (left), +1/h (right).
            for (i, di) in [(0usize, -inv_h), (1usize, inv_h)] {
                for (j, dj) in [(0usize, -inv_h), (1usize, inv_h)] {
                    local[i][j] += w * (a1v * phi[j] * di - bv * dj * phi[i]);
                }
            }
            if lumped {
                // Row-sum lumping: sum_j phi_j = 1 on the cell.
                local[0][0] -= w * c0v * phi[0];
                local[1][1] -= w * c0v * phi[1];
            } else {
                for i in 0..2 {
                    for j in 0..2 {
                        local[i][j] -= w * c0v * phi[i] * phi[j];
                    }
                }
            }
        }
        diag[e] += local[0][0];
        diag[e + 1] += local[1][1];
        sup[e] += local[0][1];
        sub[e] += local[1][0];
    }

    if bc == BoundaryKind::Robin {
        for (field, expr, node) in [
            ("d0_left", &coeffs.d0_left, 0usize),
            ("d0_right", &coeffs.d0_right, n),
        ] {
            if let Some(expr) = expr {
                let bf = BoundField::new(field, expr, point);
                let v = bf.eval(0.0, node.min(n - 1), &mut stack)?;
                diag[node] += v;
            }
        }
    }

    Ok(restrict(bc, n, diag, sub, sup))
}

/// Applies the boundary restriction to full nodal arrays: Dirichlet drops the
/// endpoint rows and columns, other conditions keep every node.
fn restrict(bc: BoundaryKind, n: usize, diag: Vec<f64>, sub: Vec<f64>, sup: Vec<f64>) -> TriMat {
    match bc {
        BoundaryKind::Dirichlet => TriMat::from_parts(
            diag[1..n].to_vec(),
            sub[1..n - 1].to_vec(),
            sup[1..n - 1].to_vec(),
        ),
        _ => TriMat::from_parts(diag, sub, sup),
    }
}

/// Instantaneous logarithmic growth rate of `u` under `M du/dt = -A u`:
/// `-(u^T A u) / (u^T M u)`.
pub fn rayleigh_kappa(mass: &TriMat, form: &TriMat, u: &[f64]) -> f64 {
    -form.quad_form(u, u) / mass.quad_form(u, u)
}
