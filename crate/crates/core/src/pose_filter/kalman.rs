//! Dimension-generic linear Kalman algebra.
//!
//! The pose filter instantiates these with its 9-dimensional error state; the
//! tests instantiate them with 1×1 matrices to check the scalar formulas.

use nalgebra::SMatrix;

use super::FilterError;
use crate::geometry::{min_eigenvalue, symmetric_eigenvalues, symmetrize};

/// Innovation covariances with a condition number above this are treated as
/// singular.
pub const MAX_CONDITION: f64 = 1e12;

/// `F P Fᵀ + G Q Gᵀ`, symmetrized.
pub fn propagate_covariance<const N: usize, const M: usize>(
    covariance: &SMatrix<f64, N, N>,
    transition: &SMatrix<f64, N, N>,
    noise_gain: &SMatrix<f64, N, M>,
    process_noise: &SMatrix<f64, M, M>,
) -> SMatrix<f64, N, N> {
    let predicted = transition * covariance * transition.transpose()
        + noise_gain * process_noise * noise_gain.transpose();
    symmetrize(&predicted)
}

/// Result of a measurement update on the covariance.
#[derive(Debug, Clone)]
pub struct GainUpdate<const N: usize, const K: usize> {
    pub gain: SMatrix<f64, N, K>,
    pub covariance: SMatrix<f64, N, N>,
}

/// Kalman gain `K = P Hᵀ (H P Hᵀ + R)⁻¹` and posterior `(I - K H) P`, symmetrized.
pub fn kalman_gain<const N: usize, const K: usize>(
    covariance: &SMatrix<f64, N, N>,
    observation: &SMatrix<f64, K, N>,
    observation_noise: &SMatrix<f64, K, K>,
) -> Result<GainUpdate<N, K>, FilterError> {
    let innovation_cov =
        symmetrize(&(observation * covariance * observation.transpose() + observation_noise));
    let eig = symmetric_eigenvalues(&innovation_cov);
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition.is_finite() && condition <= MAX_CONDITION) {
        return Err(FilterError::SingularInnovation { condition });
    }
    let chol = innovation_cov
        .cholesky()
        .ok_or(FilterError::SingularInnovation { condition })?;
    // K = P Hᵀ S⁻¹  <=>  S Kᵀ = H P
    let gain = chol.solve(&(observation * covariance)).transpose();
    let posterior = (SMatrix::<f64, N, N>::identity() - gain * observation) * covariance;
    Ok(GainUpdate {
        gain,
        covariance: symmetrize(&posterior),
    })
}

/// Rejects matrices with an eigenvalue below `-tolerance`.
pub fn check_psd<const N: usize>(m: &SMatrix<f64, N, N>, tolerance: f64) -> Result<(), f64> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(f64::NAN);
    }
    let lo = min_eigenvalue(&symmetrize(m));
    if lo < -tolerance {
        Err(lo)
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix1, Matrix2};

    #[test]
    fn scalar_prediction() {
        let p = Matrix1::new(1.0);
        let out = propagate_covariance(&p, &Matrix1::new(1.0), &Matrix1::new(1.0), &Matrix1::new(0.5));
        assert!((out[(0, 0)] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn scalar_update() {
        let out = kalman_gain(&Matrix1::new(1.0), &Matrix1::new(1.0), &Matrix1::new(1.0)).unwrap();
        assert!((out.gain[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((out.covariance[(0, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn singular_innovation_reports_condition() {
        let err = kalman_gain(&Matrix2::zeros(), &Matrix2::identity(), &Matrix2::new(1.0, 0.0, 0.0, 0.0))
            .unwrap_err();
        match err {
            FilterError::SingularInnovation { condition } => assert!(condition.is_infinite()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn psd_check_names_eigenvalue() {
        let m = Matrix2::new(1.0, 0.0, 0.0, -0.25);
        assert_eq!(check_psd(&m, 1e-9), Err(-0.25));
        assert!(check_psd(&Matrix2::identity(), 1e-9).is_ok());
    }
}
