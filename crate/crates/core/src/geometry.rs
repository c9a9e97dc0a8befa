//! Small SO(3) helpers shared by the filter and the trajectory generator.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, UnitQuaternion, Vector3};

pub type Matrix9 = SMatrix<f64, 9, 9>;

/// Skew-symmetric cross-product matrix: `skew(a) * b == a.cross(&b)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Exponential map from a rotation vector to a unit quaternion.
pub fn exp_so3(phi: &Vector3<f64>) -> UnitQuaternion<f64> {
    let theta = phi.norm();
    let half = 0.5 * theta;
    let (w, k) = if theta < 1e-8 {
        // sin(x/2)/x ≈ 1/2 - x²/48
        (libm::cos(half), 0.5 - theta * theta / 48.0)
    } else {
        (libm::cos(half), libm::sin(half) / theta)
    };
    UnitQuaternion::new_normalize(nalgebra::Quaternion::new(w, k * phi.x, k * phi.y, k * phi.z))
}

/// Coefficients `(a, b)` of the left Jacobian `I + a K + b K²`, `K = skew(phi)`.
///
/// This is `∫₀¹ Exp(s·phi) ds`, which integrates a constant body-frame
/// acceleration over one step of constant angular rate.
pub fn first_integral_coeffs(theta: f64) -> (f64, f64) {
    if theta < 1e-4 {
        let t2 = theta * theta;
        (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let t2 = theta * theta;
        ((1.0 - libm::cos(theta)) / t2, (theta - libm::sin(theta)) / (t2 * theta))
    }
}

/// Coefficients `(c, a, b)` of `c I + a K + b K²` for `∫₀¹ (1 - s) Exp(s·phi) ds`.
pub fn second_integral_coeffs(theta: f64) -> (f64, f64, f64) {
    if theta < 1e-3 {
        let t2 = theta * theta;
        (0.5, 1.0 / 6.0 - t2 / 120.0, 1.0 / 24.0 - t2 / 720.0)
    } else {
        let t2 = theta * theta;
        (
            0.5,
            (theta - libm::sin(theta)) / (t2 * theta),
            (0.5 * t2 - 1.0 + libm::cos(theta)) / (t2 * t2),
        )
    }
}

pub fn first_integral(phi: &Vector3<f64>) -> Matrix3<f64> {
    let k = skew(phi);
    let (a, b) = first_integral_coeffs(phi.norm());
    Matrix3::identity() + k * a + k * k * b
}

pub fn second_integral(phi: &Vector3<f64>) -> Matrix3<f64> {
    let k = skew(phi);
    let (c, a, b) = second_integral_coeffs(phi.norm());
    Matrix3::identity() * c + k * a + k * k * b
}

/// Rotation matrix (row-major 3×3) to unit quaternion.
pub fn quaternion_from_rotation(r: &Matrix3<f64>) -> UnitQuaternion<f64> {
    let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
    UnitQuaternion::from_rotation_matrix(&rot)
}

pub fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix of any fixed size.
pub fn symmetric_eigenvalues<const N: usize>(m: &SMatrix<f64, N, N>) -> DVector<f64> {
    DMatrix::from_column_slice(N, N, m.as_slice()).symmetric_eigenvalues()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue<const N: usize>(m: &SMatrix<f64, N, N>) -> f64 {
    symmetric_eigenvalues(m).min()
}

pub fn max_eigenvalue<const N: usize>(m: &SMatrix<f64, N, N>) -> f64 {
    symmetric_eigenvalues(m).max()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric_integral(phi: &Vector3<f64>, weight: impl Fn(f64) -> f64) -> Matrix3<f64> {
        // composite Simpson rule on [0, 1]
        let n = 2000;
        let h = 1.0 / n as f64;
        let mut acc = Matrix3::zeros();
        for i in 0..=n {
            let s = i as f64 * h;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += exp_so3(&(phi * s)).to_rotation_matrix().into_inner() * (w * weight(s));
        }
        acc * (h / 3.0)
    }

    #[test]
    fn closed_form_integrals_match_quadrature() {
        for phi in [
            Vector3::new(0.3, -0.2, 0.9),
            Vector3::new(0.0, 0.0, 1e-5),
            Vector3::new(2.0, 1.0, -0.5),
        ] {
            let g1 = numeric_integral(&phi, |_| 1.0);
            let g2 = numeric_integral(&phi, |s| 1.0 - s);
            assert!((first_integral(&phi) - g1).abs().max() < 1e-10);
            assert!((second_integral(&phi) - g2).abs().max() < 1e-10);
        }
    }

    #[test]
    fn exp_matches_axis_angle() {
        let phi = Vector3::new(0.1, 0.2, -0.3);
        let q = exp_so3(&phi);
        let reference = UnitQuaternion::from_scaled_axis(phi);
        assert!(q.angle_to(&reference) < 1e-12);
        assert!((exp_so3(&Vector3::zeros()).w - 1.0).abs() < 1e-15);
    }

    #[test]
    fn skew_is_cross_product() {
        let a = Vector3::new(1.0, -2.0, 0.5);
        let b = Vector3::new(0.3, 0.7, -1.1);
        assert!((skew(&a) * b - a.cross(&b)).norm() < 1e-15);
    }
}
