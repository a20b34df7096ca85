use nalgebra::Matrix3;

use super::Point2;
use crate::error::{Error, Result};

const MIN_DET: f64 = 1e-12;
const MIN_DENOMINATOR: f64 = 1e-9;

/// A plane projective transform, stored with the bottom-right entry fixed to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self(Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0))
    }

    pub fn scaling(sx: f64, sy: f64) -> Self {
        Self(Matrix3::new(sx, 0.0, 0.0, 0.0, sy, 0.0, 0.0, 0.0, 1.0))
    }

    /// Normalizes `m` so that `m[(2, 2)] == 1` and checks it is invertible.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let corner = m[(2, 2)];
        if !corner.is_finite() || corner.abs() < 1e-10 * m.abs().max() {
            return Err(Error::DegenerateConfiguration(
                "homography bottom-right entry vanishes",
            ));
        }
        let m = m / corner;
        let det = m.determinant();
        if !det.is_finite() || det.abs() <= MIN_DET {
            return Err(Error::DegenerateConfiguration("singular homography"));
        }
        Ok(Self(m))
    }

    pub fn from_row_slice(rows: &[f64; 9]) -> Result<Self> {
        Self::from_matrix(Matrix3::from_row_slice(rows))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn apply(&self, p: Point2) -> Result<Point2> {
        let m = &self.0;
        let w = m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)];
        if !(w.abs() > MIN_DENOMINATOR) {
            return Err(Error::DegenerateProjection { denominator: w });
        }
        let x = m[(0, 0)] * p.x + m[(0, 1)] * p.y + m[(0, 2)];
        let y = m[(1, 0)] * p.x + m[(1, 1)] * p.y + m[(1, 2)];
        Ok(Point2::new(x / w, y / w))
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self
            .0
            .try_inverse()
            .ok_or(Error::DegenerateConfiguration("singular homography"))?;
        Self::from_matrix(inv)
    }

    pub fn compose(&self, then: &Homography) -> Result<Self> {
        Self::from_matrix(then.0 * self.0)
    }

    /// Upper-left 2×2 block.
    pub fn linear_part(&self) -> nalgebra::Matrix2<f64> {
        self.0.fixed_view::<2, 2>(0, 0).into_owned()
    }

    /// Frobenius norm of `H - I`.
    pub fn distance_to_identity(&self) -> f64 {
        (self.0 - Matrix3::identity()).norm()
    }
}

/// Applies `h` to `p`.
pub fn apply_homography(h: &Homography, p: Point2) -> Result<Point2> {
    h.apply(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_translation() {
        let p = Homography::identity().apply(Point2::new(3.0, 4.0)).unwrap();
        assert_eq!(p, Point2::new(3.0, 4.0));
        let q = Homography::translation(5.0, -2.0)
            .apply(Point2::new(0.0, 0.0))
            .unwrap();
        assert_eq!(q, Point2::new(5.0, -2.0));
    }

    #[test]
    fn random_matrix_matches_direct_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let mut a = [0.0f64; 9];
            for v in a.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            a[6] *= 1e-3;
            a[7] *= 1e-3;
            a[8] = 1.0;
            let Ok(h) = Homography::from_row_slice(&a) else {
                continue;
            };
            let (x, y) = (rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
            // plain 3x3 multiply then perspective divide
            let u = a[0] * x + a[1] * y + a[2];
            let v = a[3] * x + a[4] * y + a[5];
            let w = a[6] * x + a[7] * y + a[8];
            let got = h.apply(Point2::new(x, y)).unwrap();
            assert!((got.x - u / w).abs() < 1e-9 * (1.0 + (u / w).abs()));
            assert!((got.y - v / w).abs() < 1e-9 * (1.0 + (v / w).abs()));
        }
    }

    #[test]
    fn point_at_infinity_is_rejected() {
        let h = Homography::from_row_slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        assert!(matches!(
            h.apply(Point2::new(-1.0, 3.0)),
            Err(Error::DegenerateProjection { .. })
        ));
    }

    #[test]
    fn singular_matrix_rejected() {
        assert!(Homography::from_row_slice(&[1.0, 2.0, 0.0, 2.0, 4.0, 0.0, 0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn distance_of_translation() {
        assert_eq!(Homography::identity().distance_to_identity(), 0.0);
        assert!((Homography::translation(3.0, 4.0).distance_to_identity() - 5.0).abs() < 1e-15);
    }
}
