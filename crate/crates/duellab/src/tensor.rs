//! Symmetric second-order tensors in three dimensions.
//!
//! Stress, strain, and the internal state tensors of the material models are
//! all symmetric 3x3; this module stores the six independent components and
//! provides the invariants and contractions the constitutive laws need.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::num::Float;

/// Symmetric 3x3 tensor.
///
/// Off-diagonal components are stored once; contractions and norms account
/// for the duplicated entries.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Sym3<T> {
    pub xx: T,
    pub yy: T,
    pub zz: T,
    pub xy: T,
    pub yz: T,
    pub zx: T,
}

impl<T: Float> Sym3<T> {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn identity() -> Self {
        Self {
            xx: T::one(),
            yy: T::one(),
            zz: T::one(),
            ..Self::default()
        }
    }

    /// Diagonal tensor; principal-axes loading never leaves this subspace.
    pub fn diag(xx: T, yy: T, zz: T) -> Self {
        Self {
            xx,
            yy,
            zz,
            ..Self::default()
        }
    }

    /// Isotropic tensor `s * I`.
    pub fn spherical(s: T) -> Self {
        Self::diag(s, s, s)
    }

    pub fn trace(self) -> T {
        self.xx + self.yy + self.zz
    }

    /// Mean of the diagonal, `tr/3`.
    pub fn mean(self) -> T {
        self.trace() / T::lit(3.0)
    }

    /// Deviatoric part, `self - mean * I`.
    pub fn dev(self) -> Self {
        let m = self.mean();
        Self {
            xx: self.xx - m,
            yy: self.yy - m,
            zz: self.zz - m,
            ..self
        }
    }

    /// Double contraction `a : b` (off-diagonal terms counted twice).
    pub fn ddot(self, o: Self) -> T {
        let two = T::lit(2.0);
        self.xx * o.xx
            + self.yy * o.yy
            + self.zz * o.zz
            + two * (self.xy * o.xy + self.yz * o.yz + self.zx * o.zx)
    }

    /// Frobenius norm `sqrt(a : a)`.
    pub fn norm(self) -> T {
        self.ddot(self).sqrt()
    }

    /// Matrix square `a . a` (symmetric whenever `a` is).
    pub fn squared(self) -> Self {
        let Self {
            xx,
            yy,
            zz,
            xy,
            yz,
            zx,
        } = self;
        Self {
            xx: xx * xx + xy * xy + zx * zx,
            yy: xy * xy + yy * yy + yz * yz,
            zz: zx * zx + yz * yz + zz * zz,
            xy: xx * xy + xy * yy + zx * yz,
            yz: xy * zx + yy * yz + yz * zz,
            zx: xx * zx + xy * yz + zx * zz,
        }
    }

    /// `tr(a^3)`, written as `(a.a) : a`.
    pub fn trace_cubed(self) -> T {
        self.squared().ddot(self)
    }

    /// Unit tensor in the Frobenius norm, or `None` below `tol`.
    pub fn unit(self, tol: T) -> Option<Self> {
        let n = self.norm();
        if n <= tol {
            None
        } else {
            Some(self * (T::one() / n))
        }
    }
}

impl<T: Float> Add for Sym3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            xx: self.xx + o.xx,
            yy: self.yy + o.yy,
            zz: self.zz + o.zz,
            xy: self.xy + o.xy,
            yz: self.yz + o.yz,
            zx: self.zx + o.zx,
        }
    }
}

impl<T: Float> Sub for Sym3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self {
            xx: self.xx - o.xx,
            yy: self.yy - o.yy,
            zz: self.zz - o.zz,
            xy: self.xy - o.xy,
            yz: self.yz - o.yz,
            zx: self.zx - o.zx,
        }
    }
}

impl<T: Float> Neg for Sym3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            xx: -self.xx,
            yy: -self.yy,
            zz: -self.zz,
            xy: -self.xy,
            yz: -self.yz,
            zx: -self.zx,
        }
    }
}

impl<T: Float> Mul<T> for Sym3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self {
            xx: self.xx * s,
            yy: self.yy * s,
            zz: self.zz * s,
            xy: self.xy * s,
            yz: self.yz * s,
            zx: self.zx * s,
        }
    }
}

impl<T: Float> AddAssign for Sym3<T> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Float> SubAssign for Sym3<T> {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn invariants_of_identity() {
        let i = Sym3::<f64>::identity();
        assert_eq!(i.trace(), 3.0);
        assert_eq!(i.mean(), 1.0);
        assert_eq!(i.dev(), Sym3::zero());
        assert_eq!(i.ddot(i), 3.0);
        assert_eq!(i.squared(), i);
        assert_eq!(i.trace_cubed(), 3.0);
    }

    #[test]
    fn squared_matches_full_matrix_product() {
        let a = Sym3 {
            xx: 1.0,
            yy: -2.0,
            zz: 0.5,
            xy: 0.3,
            yz: -0.7,
            zx: 1.1,
        };
        let m = [
            [a.xx, a.xy, a.zx],
            [a.xy, a.yy, a.yz],
            [a.zx, a.yz, a.zz],
        ];
        let mut p = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    p[i][j] += m[i][k] * m[k][j];
                }
            }
        }
        let sq = a.squared();
        assert!(approx(sq.xx, p[0][0], 1e-15));
        assert!(approx(sq.yy, p[1][1], 1e-15));
        assert!(approx(sq.zz, p[2][2], 1e-15));
        assert!(approx(sq.xy, p[0][1], 1e-15));
        assert!(approx(sq.yz, p[1][2], 1e-15));
        assert!(approx(sq.zx, p[0][2], 1e-15));
    }

    #[test]
    fn unit_of_zero_is_none() {
        assert!(Sym3::<f64>::zero().unit(1e-12).is_none());
    }

    fn arb_sym3() -> impl Strategy<Value = Sym3<f64>> {
        let c = -10.0..10.0;
        (c.clone(), c.clone(), c.clone(), c.clone(), c.clone(), c).prop_map(
            |(xx, yy, zz, xy, yz, zx)| Sym3 {
                xx,
                yy,
                zz,
                xy,
                yz,
                zx,
            },
        )
    }

    proptest! {
        #[test]
        fn deviator_is_traceless(a in arb_sym3()) {
            prop_assert!(a.dev().trace().abs() < 1e-12 * (1.0 + a.trace().abs()));
        }

        #[test]
        fn norm_squared_is_self_contraction(a in arb_sym3()) {
            prop_assert!(approx(a.norm() * a.norm(), a.ddot(a), 1e-12));
        }

        #[test]
        fn ddot_is_symmetric(a in arb_sym3(), b in arb_sym3()) {
            prop_assert!(approx(a.ddot(b), b.ddot(a), 1e-12));
        }

        #[test]
        fn unit_has_unit_norm(a in arb_sym3()) {
            if let Some(u) = a.unit(1e-9) {
                prop_assert!(approx(u.norm(), 1.0, 1e-12));
            }
        }
    }
}
