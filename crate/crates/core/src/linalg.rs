//! Symmetric eigen-based factorizations (backed by `nalgebra`).

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not symmetric: max |A - Aᵀ| = {0:e}")]
    Asymmetric(f64),
    #[error("matrix is not square: {0}x{1}")]
    NotSquare(usize, usize),
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<(), LinalgError> {
    if a.nrows() != a.ncols() {
        return Err(LinalgError::NotSquare(a.nrows(), a.ncols()));
    }
    let scale = a.amax().max(1.0);
    let mut worst: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in 0..i {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if worst > 1e-10 * scale {
        return Err(LinalgError::Asymmetric(worst));
    }
    Ok(())
}

fn symmetrized(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Square-root factor of a (possibly slightly indefinite) symmetric matrix.
#[derive(Clone, Debug)]
pub struct PsdFactor {
    /// `L` with `L·Lᵀ = clipped`.
    pub factor: DMatrix<f64>,
    /// The matrix after negative eigenvalues were set to zero.
    pub clipped: DMatrix<f64>,
    /// `‖clipped − A‖_F / ‖A‖_F`.
    pub clip_rel_error: f64,
    /// Count of eigenvalues below `−1e-12·λ_max` that were clipped.
    pub clip_warnings: usize,
}

/// Eigendecompose, clip negative eigenvalues to zero, and return
/// `L = V·diag(√λ⁺)`.
pub fn psd_factor(a: &DMatrix<f64>) -> Result<PsdFactor, LinalgError> {
    check_symmetric(a)?;
    let eig = SymmetricEigen::new(symmetrized(a));
    let lmax = eig.eigenvalues.amax();
    let mut warnings = 0;
    let clipped_vals = eig.eigenvalues.map(|l| {
        if l < -1e-12 * lmax.max(1e-300) {
            warnings += 1;
        }
        l.max(0.0)
    });
    let sqrt_vals = clipped_vals.map(f64::sqrt);
    let factor = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals);
    let clipped = &factor * factor.transpose();
    let norm = a.norm();
    let clip_rel_error = if norm > 0.0 {
        (&clipped - a).norm() / norm
    } else {
        0.0
    };
    Ok(PsdFactor {
        factor,
        clipped,
        clip_rel_error,
        clip_warnings: warnings,
    })
}

/// Moore–Penrose inverse of a symmetric PSD matrix with eigenvalues below
/// `rel_threshold·λ_max` discarded.
#[derive(Clone, Debug)]
pub struct PseudoInverse {
    pub inverse: DMatrix<f64>,
    /// Sum of `ln λ` over retained eigenvalues.
    pub log_pdet: f64,
    pub rank: usize,
    /// True when at least one eigenvalue was discarded.
    pub truncated: bool,
}

pub fn pinv_sym(a: &DMatrix<f64>, rel_threshold: f64) -> Result<PseudoInverse, LinalgError> {
    check_symmetric(a)?;
    let n = a.nrows();
    if n == 0 {
        return Ok(PseudoInverse {
            inverse: DMatrix::zeros(0, 0),
            log_pdet: 0.0,
            rank: 0,
            truncated: false,
        });
    }
    let eig = SymmetricEigen::new(symmetrized(a));
    let lmax = eig.eigenvalues.max();
    let cut = rel_threshold * lmax.max(0.0);
    let mut log_pdet = 0.0;
    let mut rank = 0;
    let inv_vals = eig.eigenvalues.map(|l| {
        if l > cut && l > 0.0 {
            log_pdet += l.ln();
            rank += 1;
            1.0 / l
        } else {
            0.0
        }
    });
    let v = &eig.eigenvectors;
    let inverse = v * DMatrix::from_diagonal(&inv_vals) * v.transpose();
    Ok(PseudoInverse {
        inverse,
        log_pdet,
        rank,
        truncated: rank < n,
    })
}

/// Eigenvalues of a symmetric matrix in descending order.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<f64>, LinalgError> {
    check_symmetric(a)?;
    let mut v: Vec<f64> = SymmetricEigen::new(symmetrized(a))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    v.sort_by(|a, b| b.total_cmp(a));
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_factor_is_orthogonal_square_root() {
        let f = psd_factor(&DMatrix::identity(4, 4)).unwrap();
        assert!((&f.factor * f.factor.transpose() - DMatrix::<f64>::identity(4, 4)).norm() < 1e-14);
        assert_eq!(f.clip_warnings, 0);
    }

    #[test]
    fn negative_eigenvalue_is_clipped_and_counted() {
        // Q diag(1, 0.5, -1e-6) Qᵀ with a rotation Q
        let c = 0.6f64;
        let s = 0.8f64;
        let q = DMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0]);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.5, -1e-6]));
        let a = &q * d * q.transpose();
        let f = psd_factor(&a).unwrap();
        assert_eq!(f.clip_warnings, 1);
        assert!(f.clip_rel_error > 0.0 && f.clip_rel_error < 1e-5);
        let ev = sym_eigenvalues(&f.clipped).unwrap();
        assert!(ev[2].abs() < 1e-15);
    }

    #[test]
    fn asymmetric_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(psd_factor(&a), Err(LinalgError::Asymmetric(_))));
    }

    #[test]
    fn pinv_of_singular_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let p = pinv_sym(&a, 1e-10).unwrap();
        assert_eq!(p.rank, 1);
        assert!(p.truncated);
        assert!((&a * &p.inverse * &a - &a).norm() < 1e-12);
        assert!((p.log_pdet - 2f64.ln()).abs() < 1e-12);
    }
}
