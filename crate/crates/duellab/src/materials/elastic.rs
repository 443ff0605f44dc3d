//! Linear elastic material, mainly a reference for testing loading drivers.

use serde::{Deserialize, Serialize};

use super::{Constitutive, IsotropicElasticity, MaterialError};
use crate::num::Float;
use crate::tensor::Sym3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticParams<T> {
    /// Shear modulus, kPa.
    pub g0: T,
    /// Poisson ratio.
    pub nu: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticState<T> {
    pub stress: Sym3<T>,
    pub strain: Sym3<T>,
}

impl<T: Float> ElasticParams<T> {
    fn validate(&self) -> Result<(), MaterialError> {
        if !(self.g0 > T::zero()) {
            return Err(MaterialError::InvalidParameter {
                name: "g0",
                reason: format!("{} is not positive", self.g0),
            });
        }
        if !(self.nu > -T::one() && self.nu < T::lit(0.5)) {
            return Err(MaterialError::InvalidParameter {
                name: "nu",
                reason: format!("{} outside (-1, 0.5)", self.nu),
            });
        }
        Ok(())
    }

    pub fn elasticity(&self) -> IsotropicElasticity<T> {
        IsotropicElasticity::from_shear_poisson(self.g0, self.nu)
    }
}

impl<T: Float> Constitutive<T> for ElasticParams<T> {
    type State = ElasticState<T>;

    fn initial_state(&self, p0: T, _e0: T) -> Result<Self::State, MaterialError> {
        self.validate()?;
        if !p0.is_finite() {
            return Err(MaterialError::InvalidInitialState(format!(
                "mean stress {p0} is not finite"
            )));
        }
        Ok(ElasticState {
            stress: Sym3::spherical(p0),
            strain: Sym3::zero(),
        })
    }

    fn stress(&self, state: &Self::State) -> Sym3<T> {
        state.stress
    }

    fn strain(&self, state: &Self::State) -> Sym3<T> {
        state.strain
    }

    fn step(&self, state: &mut Self::State, deps: Sym3<T>) -> Result<(), MaterialError> {
        state.stress += self.elasticity().stress_from_strain(deps);
        state.strain += deps;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniaxial_strain_produces_expected_stress() {
        let m = ElasticParams { g0: 6.0e4_f64, nu: 0.25 };
        let mut st = m.initial_state(-300.0, 0.6).unwrap();
        let deps = Sym3::diag(-1e-4, 0.0, 0.0);
        m.step(&mut st, deps).unwrap();
        // sigma_11 = (K + 4G/3) eps_11, sigma_22 = (K - 2G/3) eps_11
        let el = m.elasticity();
        let sig = m.stress(&st);
        let expect_11 = -300.0 + (el.bulk + 4.0 * el.shear / 3.0) * -1e-4;
        let expect_22 = -300.0 + (el.bulk - 2.0 * el.shear / 3.0) * -1e-4;
        assert!((sig.xx - expect_11).abs() < 1e-9);
        assert!((sig.yy - expect_22).abs() < 1e-9);
    }

    #[test]
    fn closed_strain_loop_returns_to_initial_stress() {
        let m = ElasticParams { g0: 2.0e4_f64, nu: 0.3 };
        let mut st = m.initial_state(-100.0, 0.6).unwrap();
        let start = m.stress(&st);
        let leg = Sym3 { xx: -2e-4, yy: 1e-4, zz: 0.5e-4, xy: 3e-5, yz: 0.0, zx: -1e-5 };
        m.step(&mut st, leg).unwrap();
        m.step(&mut st, -leg).unwrap();
        assert!((m.stress(&st) - start).norm() < 1e-12);
        assert!(m.strain(&st).norm() < 1e-19);
    }

    #[test]
    fn rejects_bad_poisson_ratio() {
        let m = ElasticParams { g0: 1.0e4_f64, nu: 0.5 };
        assert!(m.initial_state(-100.0, 0.6).is_err());
    }
}
