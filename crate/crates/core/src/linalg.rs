//! Small dense helpers shared by the spectral, prior and solver modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
///
/// The input is symmetrized as `½(A + Aᵀ)` first, so tiny asymmetries from
/// round-off never reach the solver.
pub fn sym_eigen_ascending(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(a.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Flip `v` so that its first entry with magnitude above `1e-12` is positive.
pub fn canonical_sign(v: &mut DVector<f64>) {
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            v.neg_mut();
        }
    }
}

/// Sine of the largest principal angle between the column spaces of two
/// matrices with orthonormal columns.
pub fn max_principal_angle_sin(u: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    let residual = v - u * (u.transpose() * v);
    if residual.ncols() == 0 {
        return 0.0;
    }
    residual.singular_values().max()
}

/// Largest deviation of `VᵀV` from the identity.
pub fn orthonormality_defect(v: &DMatrix<f64>) -> f64 {
    let g = v.transpose() * v;
    let mut worst: f64 = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

/// Vector of i.i.d. standard normal entries.
pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Inverse of a symmetric positive definite matrix through its Cholesky factor.
pub fn spd_inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))?;
    Ok(chol.inverse())
}

/// Dense matrix of a linear map given by its action, built column by column.
pub fn dense_from_action<F>(rows: usize, cols: usize, mut action: F) -> DMatrix<f64>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let mut out = DMatrix::zeros(rows, cols);
    let mut e = DVector::zeros(cols);
    for j in 0..cols {
        e[j] = 1.0;
        let col = action(&e);
        out.set_column(j, &col);
        e[j] = 0.0;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eigen_sorted_and_reconstructs() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 1.0]);
        let (vals, vecs) = sym_eigen_ascending(&a);
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let rebuilt = &vecs * DMatrix::from_diagonal(&DVector::from_vec(vals)) * vecs.transpose();
        assert!((rebuilt - a).norm() < 1e-12);
    }

    #[test]
    fn principal_angle_of_identical_and_orthogonal_spaces() {
        let u = DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 0.0]);
        let w = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 0.0]);
        assert!(max_principal_angle_sin(&u, &u) < 1e-15);
        assert!((max_principal_angle_sin(&u, &w) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sign_convention() {
        let mut v = DVector::from_vec(vec![0.0, -1e-14, -0.5, 0.2]);
        canonical_sign(&mut v);
        assert!(v[2] > 0.0);
    }

    #[test]
    fn spd_inverse_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = DMatrix::from_fn(5, 5, |_, _| rng.random::<f64>());
        let a = &b * b.transpose() + DMatrix::identity(5, 5);
        let inv = spd_inverse(&a, "test").unwrap();
        assert!((&a * inv - DMatrix::identity(5, 5)).norm() < 1e-10);
    }
}
