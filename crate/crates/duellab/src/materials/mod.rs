//! Strain-driven constitutive models.
//!
//! Public quantities use the mechanics sign convention: compression is
//! negative, stresses are in kPa and strains are dimensionless. A model is a
//! parameter set implementing [`Constitutive`]; the state it evolves is a
//! separate value, so a loading driver can cheaply save and restore trial
//! states while iterating on mixed stress/strain control.

pub mod drucker_prager;
pub mod elastic;
pub mod sanisand;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Float;
use crate::tensor::Sym3;

pub use drucker_prager::{DpParams, DpState};
pub use elastic::{ElasticParams, ElasticState};
pub use sanisand::{SsParams, SsState};

#[derive(Debug, Clone, Error)]
pub enum MaterialError {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("invalid initial state: {0}")]
    InvalidInitialState(String),
    #[error("return mapping did not converge within {iterations} iterations")]
    ReturnMapping { iterations: usize },
    #[error("mean stress fell below {limit} kPa during integration")]
    PressureCollapse { limit: f64 },
    #[error("softening exceeded the elastic stiffness, response snapped back")]
    SnapBack,
    #[error("strain increment needed more than {limit} sub-steps")]
    SubstepLimit { limit: usize },
}

/// A rate-independent material driven by total strain increments.
pub trait Constitutive<T: Float> {
    type State: Clone + std::fmt::Debug;

    /// State of a sample consolidated isotropically to mean stress `p0`
    /// (negative, kPa) with void ratio `e0`. Models without a void ratio
    /// ignore `e0`.
    fn initial_state(&self, p0: T, e0: T) -> Result<Self::State, MaterialError>;

    fn stress(&self, state: &Self::State) -> Sym3<T>;

    fn strain(&self, state: &Self::State) -> Sym3<T>;

    /// Advance the state by a total strain increment.
    fn step(&self, state: &mut Self::State, deps: Sym3<T>) -> Result<(), MaterialError>;
}

/// Deviatoric stress invariant q = sqrt(3/2) ||dev(sigma)||.
pub fn deviatoric_q<T: Float>(sig: Sym3<T>) -> T {
    T::lit(1.5).sqrt() * sig.dev().norm()
}

/// Isotropic linear elasticity in bulk/shear form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsotropicElasticity<T> {
    pub bulk: T,
    pub shear: T,
}

impl<T: Float> IsotropicElasticity<T> {
    pub fn from_shear_poisson(shear: T, nu: T) -> Self {
        let two = T::lit(2.0);
        let three = T::lit(3.0);
        let bulk = two * (T::one() + nu) / (three * (T::one() - two * nu)) * shear;
        Self { bulk, shear }
    }

    pub fn stress_from_strain(&self, eps: Sym3<T>) -> Sym3<T> {
        Sym3::spherical(self.bulk * eps.trace()) + eps.dev() * (T::lit(2.0) * self.shear)
    }

    pub fn strain_from_stress(&self, sig: Sym3<T>) -> Sym3<T> {
        Sym3::spherical(sig.trace() / (T::lit(9.0) * self.bulk))
            + sig.dev() * (T::one() / (T::lit(2.0) * self.shear))
    }
}

/// One scalar material parameter: display name, starting value and box
/// bounds used by the calibration stage.
#[derive(Clone, Copy, Debug)]
pub struct ParamSpec<T> {
    pub name: &'static str,
    pub guess: T,
    pub lower: T,
    pub upper: T,
}

/// Any of the shipped material models, tagged for config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum Material<T> {
    Elastic(ElasticParams<T>),
    DruckerPrager(DpParams<T>),
    Sanisand(SsParams<T>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum MaterialState<T> {
    Elastic(ElasticState<T>),
    DruckerPrager(DpState<T>),
    Sanisand(SsState<T>),
}

impl<T: Float> Constitutive<T> for Material<T> {
    type State = MaterialState<T>;

    fn initial_state(&self, p0: T, e0: T) -> Result<Self::State, MaterialError> {
        Ok(match self {
            Material::Elastic(m) => MaterialState::Elastic(m.initial_state(p0, e0)?),
            Material::DruckerPrager(m) => MaterialState::DruckerPrager(m.initial_state(p0, e0)?),
            Material::Sanisand(m) => MaterialState::Sanisand(m.initial_state(p0, e0)?),
        })
    }

    fn stress(&self, state: &Self::State) -> Sym3<T> {
        match (self, state) {
            (Material::Elastic(m), MaterialState::Elastic(s)) => m.stress(s),
            (Material::DruckerPrager(m), MaterialState::DruckerPrager(s)) => m.stress(s),
            (Material::Sanisand(m), MaterialState::Sanisand(s)) => m.stress(s),
            _ => panic!("state does not belong to this material"),
        }
    }

    fn strain(&self, state: &Self::State) -> Sym3<T> {
        match (self, state) {
            (Material::Elastic(m), MaterialState::Elastic(s)) => m.strain(s),
            (Material::DruckerPrager(m), MaterialState::DruckerPrager(s)) => m.strain(s),
            (Material::Sanisand(m), MaterialState::Sanisand(s)) => m.strain(s),
            _ => panic!("state does not belong to this material"),
        }
    }

    fn step(&self, state: &mut Self::State, deps: Sym3<T>) -> Result<(), MaterialError> {
        match (self, state) {
            (Material::Elastic(m), MaterialState::Elastic(s)) => m.step(s, deps),
            (Material::DruckerPrager(m), MaterialState::DruckerPrager(s)) => m.step(s, deps),
            (Material::Sanisand(m), MaterialState::Sanisand(s)) => m.step(s, deps),
            _ => panic!("state does not belong to this material"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elasticity_round_trips_stress_and_strain() {
        let el = IsotropicElasticity::from_shear_poisson(6.0e4_f64, 0.25);
        assert!((el.bulk - 1.0e5).abs() < 1e-9);
        let eps = Sym3 { xx: -1e-3, yy: 2e-4, zz: 3e-4, xy: -1e-4, yz: 5e-5, zx: 0.0 };
        let sig = el.stress_from_strain(eps);
        let back = el.strain_from_stress(sig);
        assert!((back - eps).norm() < 1e-15);
    }

    #[test]
    fn q_invariant_of_triaxial_state() {
        // sigma = diag(-500, -300, -300): q = |sigma_1 - sigma_3| = 200.
        let sig = Sym3::diag(-500.0_f64, -300.0, -300.0);
        assert!((deviatoric_q(sig) - 200.0).abs() < 1e-10);
    }

    #[test]
    fn material_enum_dispatches_to_elastic() {
        let m: Material<f64> = Material::Elastic(ElasticParams { g0: 1.0e4, nu: 0.2 });
        let mut st = m.initial_state(-100.0, 0.6).unwrap();
        m.step(&mut st, Sym3::spherical(-1e-4)).unwrap();
        let sig = m.stress(&st);
        assert!(sig.mean() < -100.0);
    }

    #[test]
    fn material_enum_serializes_with_model_tag() {
        let m: Material<f64> = Material::DruckerPrager(DpParams::reference());
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.contains("\"model\":\"drucker-prager\""));
        let back: Material<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }
}
