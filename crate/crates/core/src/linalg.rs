//! Tridiagonal matrices, a pivoting direct solver, and inner-product helpers.
//!
//! Everything downstream (assembly, time stepping, eigen iteration) works with
//! real tridiagonal matrices, so this is the single dense-free kernel of the
//! crate.

use thiserror::Error;

/// Square real tridiagonal matrix.
///
/// Storage: `sub[i]` is entry `(i+1, i)`, `diag[i]` is `(i, i)`, `sup[i]` is
/// `(i, i+1)`. A matrix of order 1 has empty off-diagonals.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMat {
    diag: Vec<f64>,
    sub: Vec<f64>,
    sup: Vec<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix is numerically singular at elimination step {row} (pivot {pivot:e})")]
    Singular { row: usize, pivot: f64 },
    #[error("dimension mismatch: matrix order {n}, vector length {len}")]
    DimensionMismatch { n: usize, len: usize },
}

impl TriMat {
    pub fn zeros(n: usize) -> Self {
        assert!(n > 0, "matrix order must be positive");
        TriMat {
            diag: vec![0.0; n],
            sub: vec![0.0; n.saturating_sub(1)],
            sup: vec![0.0; n.saturating_sub(1)],
        }
    }

    pub fn from_parts(diag: Vec<f64>, sub: Vec<f64>, sup: Vec<f64>) -> Self {
        assert!(!diag.is_empty());
        assert_eq!(sub.len(), diag.len() - 1);
        assert_eq!(sup.len(), diag.len() - 1);
        TriMat { diag, sub, sup }
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn sub(&self) -> &[f64] {
        &self.sub
    }

    pub fn sup(&self) -> &[f64] {
        &self.sup
    }

    pub fn diag_mut(&mut self) -> &mut [f64] {
        &mut self.diag
    }

    pub fn sub_mut(&mut self) -> &mut [f64] {
        &mut self.sub
    }

    pub fn sup_mut(&mut self) -> &mut [f64] {
        &mut self.sup
    }

    /// Entry accessor for tests and debug dumps; zero outside the three bands.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let n = self.n();
        assert!(i < n && j < n);
        if i == j {
            self.diag[i]
        } else if j + 1 == i {
            self.sub[j]
        } else if i + 1 == j {
            self.sup[i]
        } else {
            0.0
        }
    }

    /// `self * x` as a fresh vector.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        assert_eq!(x.len(), n);
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.sub[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.sup[i] * x[i + 1];
            }
            y[i] = s;
        }
        y
    }

    /// `u^T * self * v`, accumulated row by row in index order.
    pub fn quad_form(&self, u: &[f64], v: &[f64]) -> f64 {
        let n = self.n();
        assert_eq!(u.len(), n);
        assert_eq!(v.len(), n);
        let mut acc = 0.0;
        for i in 0..n {
            let mut s = self.diag[i] * v[i];
            if i > 0 {
                s += self.sub[i - 1] * v[i - 1];
            }
            if i + 1 < n {
                s += self.sup[i] * v[i + 1];
            }
            acc += u[i] * s;
        }
        acc
    }

    /// `self + c * other`, entrywise.
    #[must_use]
    pub fn add_scaled(&self, c: f64, other: &TriMat) -> TriMat {
        assert_eq!(self.n(), other.n());
        let comb = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| x + c * y).collect()
        };
        TriMat {
            diag: comb(&self.diag, &other.diag),
            sub: comb(&self.sub, &other.sub),
            sup: comb(&self.sup, &other.sup),
        }
    }

    /// Largest `|A_ij - A_ji|` over the off-diagonal pairs.
    pub fn max_asymmetry(&self) -> f64 {
        self.sub
            .iter()
            .zip(&self.sup)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Max absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        let n = self.n();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let mut s = self.diag[i].abs();
            if i > 0 {
                s += self.sub[i - 1].abs();
            }
            if i + 1 < n {
                s += self.sup[i].abs();
            }
            worst = worst.max(s);
        }
        worst
    }

    /// Nonzero entries as `(row, col, value)` in row-major order.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n();
        let mut out = Vec::with_capacity(3 * n);
        for i in 0..n {
            if i > 0 {
                out.push((i, i - 1, self.sub[i - 1]));
            }
            out.push((i, i, self.diag[i]));
            if i + 1 < n {
                out.push((i, i + 1, self.sup[i]));
            }
        }
        out
    }

    /// Solves `self * x = rhs` by Gaussian elimination with partial pivoting.
    ///
    /// Pivoting introduces one extra superdiagonal of fill, which keeps the
    /// factorization stable for indefinite matrices (shifted pencils). The
    /// cost stays linear in the order.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let n = self.n();
        if rhs.len() != n {
            return Err(LinalgError::DimensionMismatch { n, len: rhs.len() });
        }
        let mut dia = self.diag.clone();
        let mut up1 = self.sup.clone();
        up1.push(0.0);
        let mut up2 = vec![0.0; n];
        let mut low = self.sub.clone();
        let mut b = rhs.to_vec();

        let scale = self.norm_inf().max(f64::MIN_POSITIVE);
        let tiny = scale * f64::EPSILON * (n as f64).max(4.0);

        for k in 0..n - 1 {
            if low[k].abs() > dia[k].abs() {
                // Exchange rows k and k+1 column by column: their entries in
                // column k are (dia[k], low[k]), in column k+1
                // (up1[k], dia[k+1]), in column k+2 (up2[k], up1[k+1]).
                std::mem::swap(&mut dia[k], &mut low[k]);
                std::mem::swap(&mut up1[k], &mut dia[k + 1]);
                std::mem::swap(&mut up2[k], &mut up1[k + 1]);
                b.swap(k, k + 1);
            }
            let pivot = dia[k];
            if pivot.abs() <= tiny {
                return Err(LinalgError::Singular { row: k, pivot });
            }
            let m = low[k] / pivot;
            dia[k + 1] -= m * up1[k];
            if k + 1 < n - 1 {
                up1[k + 1] -= m * up2[k];
            }
            b[k + 1] -= m * b[k];
        }
        if dia[n - 1].abs() <= tiny {
            return Err(LinalgError::Singular {
                row: n - 1,
                pivot: dia[n - 1],
            });
        }

        let mut x = vec![0.0; n];
        x[n - 1] = b[n - 1] / dia[n - 1];
        if n >= 2 {
            x[n - 2] = (b[n - 2] - up1[n - 2] * x[n - 1]) / dia[n - 2];
        }
        for k in (0..n.saturating_sub(2)).rev() {
            x[k] = (b[k] - up1[k] * x[k + 1] - up2[k] * x[k + 2]) / dia[k];
        }
        Ok(x)
    }
}

/// `u^T M v` for a symmetric positive mass matrix; the inner product used for
/// every normalization in the crate.
pub fn m_dot(m: &TriMat, u: &[f64], v: &[f64]) -> f64 {
    m.quad_form(u, v)
}

/// Norm induced by the mass matrix.
pub fn m_norm(m: &TriMat, u: &[f64]) -> f64 {
    m_dot(m, u, u).max(0.0).sqrt()
}

/// In-place modified Gram-Schmidt in the `M` inner product. Each vector is
/// projected twice against its predecessors (for orthogonality to round-off)
/// and scaled exactly once. Returns the applied scalings `R_jj`, which carry
/// the per-vector growth factors: a vector with no predecessors is only
/// divided by its norm, so a one-vector frame reproduces plain
/// renormalization bit for bit.
pub fn m_orthonormalize(m: &TriMat, vectors: &mut [Vec<f64>]) -> Vec<f64> {
    let mut norms = Vec::with_capacity(vectors.len());
    for j in 0..vectors.len() {
        for _pass in 0..2 {
            for i in 0..j {
                let (head, tail) = vectors.split_at_mut(j);
                let proj = m_dot(m, &head[i], &tail[0]);
                for (t, h) in tail[0].iter_mut().zip(&head[i]) {
                    *t -= proj * h;
                }
            }
        }
        let norm = m_norm(m, &vectors[j]);
        norms.push(norm);
        assert!(norm > 0.0, "degenerate vector set in orthonormalization");
        for t in vectors[j].iter_mut() {
            *t /= norm;
        }
    }
    norms
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_solve_oracle(t: &TriMat, rhs: &[f64]) -> Vec<f64> {
        let n = t.n();
        let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
        for (i, j, v) in t.triplets() {
            a[(i, j)] = v;
        }
        let b = nalgebra::DVector::from_column_slice(rhs);
        a.lu().solve(&b).expect("oracle solve").iter().copied().collect()
    }

    #[test]
    fn solve_matches_dense_oracle_on_fixed_system() {
        let t = TriMat::from_parts(
            vec![4.0, 3.0, 5.0, 2.0],
            vec![1.0, -2.0, 0.5],
            vec![-1.0, 0.7, 1.5],
        );
        let rhs = [1.0, -2.0, 0.0, 3.0];
        let x = t.solve(&rhs).unwrap();
        let y = dense_solve_oracle(&t, &rhs);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn solve_pivots_through_zero_diagonal() {
        // Leading diagonal entry zero: unpivoted elimination would divide by 0.
        let t = TriMat::from_parts(vec![0.0, 1.0], vec![2.0], vec![1.0]);
        let x = t.solve(&[1.0, 1.0]).unwrap();
        // [0 1; 2 1] x = [1, 1] -> x = [0, 1].
        assert!((x[0] - 0.0).abs() < 1e-14);
        assert!((x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn solve_rejects_singular_matrix() {
        let t = TriMat::from_parts(vec![1.0, 1.0], vec![1.0], vec![1.0]);
        let err = t.solve(&[1.0, 0.0]).unwrap_err();
        assert!(matches!(err, LinalgError::Singular { .. }));
    }

    #[test]
    fn solve_rejects_wrong_rhs_length() {
        let t = TriMat::zeros(3);
        assert!(matches!(
            t.solve(&[1.0]),
            Err(LinalgError::DimensionMismatch { n: 3, len: 1 })
        ));
    }

    #[test]
    fn quad_form_and_matvec_agree() {
        let t = TriMat::from_parts(vec![2.0, 1.0, 1.5], vec![0.3, -0.2], vec![-0.5, 0.8]);
        let u = [1.0, 2.0, -1.0];
        let v = [0.5, -1.0, 2.0];
        let tv = t.matvec(&v);
        let direct: f64 = u.iter().zip(&tv).map(|(a, b)| a * b).sum();
        assert!((t.quad_form(&u, &v) - direct).abs() < 1e-14);
    }

    #[test]
    fn asymmetry_is_zero_for_symmetric_matrix() {
        let t = TriMat::from_parts(vec![5.0, 5.0, 5.0], vec![1.0, 2.0], vec![1.0, 2.0]);
        assert_eq!(t.max_asymmetry(), 0.0);
        let t2 = TriMat::from_parts(vec![5.0, 5.0, 5.0], vec![1.0, 2.0], vec![1.0, 2.5]);
        assert!((t2.max_asymmetry() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn orthonormalize_produces_m_orthonormal_frame() {
        let m = TriMat::from_parts(vec![1.0, 1.0, 1.0, 1.0], vec![0.2, 0.2, 0.2], vec![0.2, 0.2, 0.2]);
        let mut vecs = vec![
            vec![1.0, 1.0, 1.0, 1.0],
            vec![1.0, -1.0, 1.0, -1.0],
            vec![0.3, 0.1, -0.7, 0.2],
        ];
        let norms = m_orthonormalize(&m, &mut vecs);
        assert_eq!(norms.len(), 3);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((m_dot(&m, &vecs[i], &vecs[j]) - want).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn solve_matches_dense_oracle(n in 2usize..12,
                                      seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let mut draw = |lo: f64, hi: f64| rng.gen_range(lo..hi);
            // Diagonally dominant draws keep the oracle itself trustworthy.
            let sub: Vec<f64> = (0..n - 1).map(|_| draw(-1.0, 1.0)).collect();
            let sup: Vec<f64> = (0..n - 1).map(|_| draw(-1.0, 1.0)).collect();
            let diag: Vec<f64> = (0..n).map(|_| 3.0 + draw(0.0, 1.0)).collect();
            let rhs: Vec<f64> = (0..n).map(|_| draw(-2.0, 2.0)).collect();
            let t = TriMat::from_parts(diag, sub, sup);
            let x = t.solve(&rhs).unwrap();
            let y = dense_solve_oracle(&t, &rhs);
            for (a, b) in x.iter().zip(&y) {
                prop_assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
            }
        }
    }
}
