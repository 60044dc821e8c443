use nalgebra::{Matrix2, Matrix4, Matrix6, SMatrix, Vector2, Vector4, Vector6};

pub type Vec2 = Vector2<f64>;
pub type Vec4 = Vector4<f64>;
pub type Vec6 = Vector6<f64>;
pub type Mat2 = Matrix2<f64>;
pub type Mat4 = Matrix4<f64>;
pub type Mat6 = Matrix6<f64>;

/// Planar rotation by `angle` radians.
pub fn rotation(angle: f64) -> Mat2 {
    let (s, c) = angle.sin_cos();
    Mat2::new(c, -s, s, c)
}

pub fn symmetrize<const D: usize>(m: &SMatrix<f64, D, D>) -> SMatrix<f64, D, D> {
    (m + m.transpose()) * 0.5
}

/// Inverse of a symmetric positive-definite matrix, or `None` when the
/// Cholesky factorization fails.
pub fn spd_inverse<const D: usize>(m: &SMatrix<f64, D, D>) -> Option<SMatrix<f64, D, D>> {
    m.cholesky().map(|c| symmetrize(&c.inverse()))
}

pub fn all_finite<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> bool {
    m.iter().all(|x| x.is_finite())
}
