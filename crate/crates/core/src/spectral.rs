//! Principal eigenpair of the frozen operator: the largest `lambda` with
//! `-A v = lambda M v`, equivalently the maximizer of the Rayleigh quotient
//! `-(v^T A v)/(v^T M v)`. Only symmetric forms are accepted; the principal
//! vector is then simple and strictly positive, which the solver verifies.
//!
//! The solver is a two-phase iteration. Phase one runs inverse iteration with
//! a fixed shift placed above a Gershgorin bound of the pencil spectrum, so
//! the shifted matrix is positive definite and the iteration contracts onto
//! the principal direction from any start. Phase two switches to Rayleigh
//! quotient iteration for cubic convergence. A warm start (for example the
//! eigenvector from a nearby driver state) skips phase one.

use thiserror::Error;

use crate::fem::rayleigh_kappa;
use crate::linalg::{m_norm, LinalgError, TriMat};

#[derive(Clone, Debug)]
pub struct EigenOptions {
    /// Relative residual target for `||A v + lambda M v||`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EigenResult {
    /// Principal eigenvalue of the pencil `(-A, M)`.
    pub value: f64,
    /// M-normalized, strictly positive eigenvector.
    pub vector: Vec<f64>,
    pub iterations: usize,
    /// Relative residual reached.
    pub residual: f64,
}

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error(
        "form matrix is not symmetric (max asymmetry {asymmetry:.3e}); \
         the frozen-eigenvalue route requires a1 = b = 0"
    )]
    NotSymmetric { asymmetry: f64 },
    #[error(
        "eigeniteration stalled at relative residual {residual:.3e} \
         after {iters} iterations (target {tol:.1e})"
    )]
    NoConvergence {
        tol: f64,
        iters: usize,
        residual: f64,
    },
    #[error("principal eigenvector is not strictly positive")]
    NotPositive,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Upper bound for the pencil eigenvalues from Gershgorin rows of `-A` and
/// two-sided Gershgorin bounds of `M`.
fn pencil_upper_bound(mass: &TriMat, form: &TriMat) -> f64 {
    let n = form.n();
    let mut g = f64::NEG_INFINITY;
    let mut m_min = f64::INFINITY;
    let mut m_max = f64::NEG_INFINITY;
    for i in 0..n {
        let off_a = |j: usize| form.get(i, j).abs();
        let off_m = |j: usize| mass.get(i, j).abs();
        let (lo, hi) = (i.saturating_sub(1), (i + 1).min(n - 1));
        let mut row_a = -form.get(i, i);
        let mut row_m_off = 0.0;
        for j in lo..=hi {
            if j != i {
                row_a += off_a(j);
                row_m_off += off_m(j);
            }
        }
        g = g.max(row_a);
        m_min = m_min.min(mass.get(i, i) - row_m_off);
        m_max = m_max.max(mass.get(i, i) + row_m_off);
    }
    debug_assert!(m_min > 0.0, "mass matrix must be diagonally dominant");
    if g > 0.0 {
        g / m_min
    } else {
        g / m_max
    }
}

fn normalize_positive(mass: &TriMat, v: &mut [f64]) {
    let norm = m_norm(mass, v);
    let mut extreme = 0.0f64;
    for &x in v.iter() {
        if x.abs() > extreme.abs() {
            extreme = x;
        }
    }
    let scale = if extreme < 0.0 { -1.0 / norm } else { 1.0 / norm };
    for x in v.iter_mut() {
        *x *= scale;
    }
}

/// Relative residual of the candidate pair.
fn rel_residual(mass: &TriMat, form: &TriMat, v: &[f64], lambda: f64) -> f64 {
    let av = form.matvec(v);
    let mv = mass.matvec(v);
    let mut num = 0.0f64;
    let mut vmax = 0.0f64;
    for i in 0..v.len() {
        num = num.max((av[i] + lambda * mv[i]).abs());
        vmax = vmax.max(v[i].abs());
    }
    let scale = (form.norm_inf() + lambda.abs() * mass.norm_inf()) * vmax;
    if scale == 0.0 {
        num
    } else {
        num / scale
    }
}

/// Computes the principal eigenpair. `warm` skips the globalization phase,
/// which pays off when the matrix changed only slightly since the previous
/// call; a cold retry covers the rare case where the warm start misleads the
/// local iteration.
pub fn principal_eigen(
    mass: &TriMat,
    form: &TriMat,
    warm: Option<&[f64]>,
    opts: &EigenOptions,
) -> Result<EigenResult, SpectralError> {
    let n = form.n();
    let asymmetry = form.max_asymmetry();
    if asymmetry > 1e-12 * form.norm_inf().max(1.0) {
        return Err(SpectralError::NotSymmetric { asymmetry });
    }

    let mut total_iters = 0usize;
    if let Some(start) = warm {
        if start.len() == n {
            match refine(mass, form, start.to_vec(), opts, &mut total_iters) {
                Ok(res) => return Ok(res),
                // Fall through to a cold start below.
                Err(SpectralError::NotPositive) | Err(SpectralError::NoConvergence { .. }) => {}
                Err(e) => return Err(e),
            }
        }
    }

    // Phase one: shifted inverse iteration from a positive start.
    let upper = pencil_upper_bound(mass, form);
    let sigma = upper + 0.01 * upper.abs().max(1.0);
    let shifted = form.add_scaled(sigma, mass);
    let mut v = vec![1.0; n];
    normalize_positive(mass, &mut v);
    let mut lambda = rayleigh_kappa(mass, form, &v);
    for _ in 0..60 {
        total_iters += 1;
        let mv = mass.matvec(&v);
        v = shifted.solve(&mv)?;
        normalize_positive(mass, &mut v);
        let next = rayleigh_kappa(mass, form, &v);
        let done = (next - lambda).abs() <= 1e-3 * lambda.abs().max(1.0);
        lambda = next;
        if done {
            break;
        }
    }
    refine(mass, form, v, opts, &mut total_iters)
}

/// Rayleigh quotient iteration from `v` until the relative residual meets
/// `opts.tol`.
fn refine(
    mass: &TriMat,
    form: &TriMat,
    mut v: Vec<f64>,
    opts: &EigenOptions,
    total_iters: &mut usize,
) -> Result<EigenResult, SpectralError> {
    normalize_positive(mass, &mut v);
    let mut lambda = rayleigh_kappa(mass, form, &v);
    let mut residual = rel_residual(mass, form, &v, lambda);
    let mut iters = 0usize;
    while residual > opts.tol {
        if iters >= opts.max_iter {
            return Err(SpectralError::NoConvergence {
                tol: opts.tol,
                iters: *total_iters + iters,
                residual,
            });
        }
        iters += 1;
        // Solve (A + lambda M) w = M v; nudge the shift if it lands exactly
        // on an eigenvalue and makes the matrix singular.
        let mv = mass.matvec(&v);
        let mut shift = lambda;
        let w = loop {
            let s = form.add_scaled(shift, mass);
            match s.solve(&mv) {
                Ok(w) => break w,
                Err(LinalgError::Singular { .. }) => {
                    shift += 1e-10 * shift.abs().max(1.0);
                }
                Err(e) => return Err(e.into()),
            }
        };
        v = w;
        normalize_positive(mass, &mut v);
        lambda = rayleigh_kappa(mass, form, &v);
        residual = rel_residual(mass, form, &v, lambda);
    }
    *total_iters += iters;
    if v.iter().any(|&x| x <= 0.0) {
        return Err(SpectralError::NotPositive);
    }
    Ok(EigenResult {
        value: lambda,
        vector: v,
        iterations: *total_iters,
        residual,
    })
}

/// Variational sanity check: the principal value must dominate the Rayleigh
/// quotient of every trial vector up to `slack`.
pub fn check_rayleigh_bound(
    mass: &TriMat,
    form: &TriMat,
    value: f64,
    trials: &[Vec<f64>],
    slack: f64,
) -> bool {
    trials
        .iter()
        .all(|u| rayleigh_kappa(mass, form, u) <= value + slack)
}
