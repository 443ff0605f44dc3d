//! Drucker-Prager plasticity with a pressure and plastic-strain dependent
//! cone.
//!
//! Linear elasticity; yield surface f = q + alpha(p, ep) p with alpha
//! hardening in accumulated plastic strain and mean stress; non-associative
//! potential g = q + beta p with beta = alpha - beta0. The stress update is
//! a fully implicit return onto the moving cone, falling back to an apex
//! projection when the trial deviator is exhausted before consistency can
//! be restored.

use serde::{Deserialize, Serialize};

use super::{deviatoric_q, Constitutive, IsotropicElasticity, MaterialError, ParamSpec};
use crate::num::Float;
use crate::tensor::Sym3;

/// The hardening exponent coefficient is specified per Pa; stresses run in kPa.
const PA_PER_KPA: f64 = 1.0e3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpParams<T> {
    /// Shear modulus, kPa.
    pub g0: T,
    /// Poisson ratio.
    pub nu: T,
    /// Cone slope at zero plastic strain.
    pub a0: T,
    /// Hardening amplitude.
    pub a1: T,
    /// Pressure sensitivity of hardening, 1/Pa.
    pub a2: T,
    /// Plastic-strain decay of hardening.
    pub a3: T,
    /// Offset between the yield cone and the plastic potential cone.
    pub beta0: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpState<T> {
    pub stress: Sym3<T>,
    pub strain: Sym3<T>,
    /// Accumulated plastic strain driving the hardening law.
    pub ep_bar: T,
}

impl<T: Float> DpParams<T> {
    pub const N_PARAMS: usize = 7;
    pub const N_ELASTIC: usize = 2;

    /// Calibration metadata; the slice order matches `to_vec`/`from_slice`
    /// and the first `N_ELASTIC` entries are the elastic parameters.
    pub fn specs() -> [ParamSpec<T>; 7] {
        [
            ParamSpec { name: "G0", guess: T::lit(6.0e4), lower: T::lit(4.0e4), upper: T::lit(8.0e4) },
            ParamSpec { name: "nu", guess: T::lit(0.25), lower: T::lit(0.1), upper: T::lit(0.4) },
            ParamSpec { name: "a0", guess: T::lit(1.0), lower: T::lit(0.5), upper: T::lit(1.5) },
            ParamSpec { name: "a1", guess: T::lit(2.0e4), lower: T::lit(1.0e2), upper: T::lit(6.0e4) },
            ParamSpec { name: "a2", guess: T::lit(1.0e-5), lower: T::lit(5.0e-6), upper: T::lit(5.0e-5) },
            ParamSpec { name: "a3", guess: T::lit(60.0), lower: T::lit(20.0), upper: T::lit(200.0) },
            ParamSpec { name: "beta0", guess: T::lit(0.5), lower: T::lit(0.2), upper: T::lit(0.8) },
        ]
    }

    /// Parameter set used to generate synthetic data and as the default
    /// calibration starting point.
    pub fn reference() -> Self {
        let g: Vec<T> = Self::specs().iter().map(|s| s.guess).collect();
        Self::from_slice(&g)
    }

    pub fn to_vec(&self) -> Vec<T> {
        vec![self.g0, self.nu, self.a0, self.a1, self.a2, self.a3, self.beta0]
    }

    pub fn from_slice(x: &[T]) -> Self {
        assert_eq!(x.len(), Self::N_PARAMS);
        Self { g0: x[0], nu: x[1], a0: x[2], a1: x[3], a2: x[4], a3: x[5], beta0: x[6] }
    }

    pub fn elasticity(&self) -> IsotropicElasticity<T> {
        IsotropicElasticity::from_shear_poisson(self.g0, self.nu)
    }

    /// Cone slope alpha(p, ep). `p` in kPa, mechanics sign.
    pub fn cone_slope(&self, p: T, ep: T) -> T {
        self.a0 + self.a1 * ep * (self.a2 * T::lit(PA_PER_KPA) * p - self.a3 * ep).exp()
    }

    /// Yield function at a stress state; non-positive inside the cone.
    pub fn yield_value(&self, sig: Sym3<T>, ep: T) -> T {
        deviatoric_q(sig) + self.cone_slope(sig.mean(), ep) * sig.mean()
    }

    fn validate(&self) -> Result<(), MaterialError> {
        let checks: [(&'static str, bool); 5] = [
            ("g0", self.g0 > T::zero()),
            ("nu", self.nu > -T::one() && self.nu < T::lit(0.5)),
            ("a1", self.a1 >= T::zero()),
            ("a2", self.a2 >= T::zero()),
            ("a3", self.a3 >= T::zero()),
        ];
        for (name, ok) in checks {
            if !ok {
                return Err(MaterialError::InvalidParameter { name, reason: "out of range".into() });
            }
        }
        Ok(())
    }

    // Cone slope consistent with the pressure it produces: solves
    // a = cone_slope(p_tr - K (a - beta0) dl, ep) by bisection. The
    // residual is strictly decreasing in a, so the bracket is safe.
    fn consistent_slope(&self, p_tr: T, ep: T, dl: T, bulk: T) -> T {
        if self.a1 * ep == T::zero() {
            return self.a0;
        }
        if dl == T::zero() {
            return self.cone_slope(p_tr, ep);
        }
        let phi = |a: T| self.cone_slope(p_tr - bulk * (a - self.beta0) * dl, ep) - a;
        let mut lo = self.a0; // phi(a0) >= 0 because the hardening term is non-negative
        let mut hi = self.a0 + T::one();
        for _ in 0..200 {
            if phi(hi) <= T::zero() {
                break;
            }
            hi = self.a0 + (hi - self.a0) * T::lit(2.0);
        }
        for _ in 0..80 {
            let mid = (lo + hi) * T::lit(0.5);
            if phi(mid) > T::zero() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo + hi) * T::lit(0.5)
    }
}

impl<T: Float> Constitutive<T> for DpParams<T> {
    type State = DpState<T>;

    fn initial_state(&self, p0: T, _e0: T) -> Result<Self::State, MaterialError> {
        self.validate()?;
        if !(p0 < T::zero()) || !p0.is_finite() {
            return Err(MaterialError::InvalidInitialState(format!(
                "isotropic mean stress must be compressive, got {p0}"
            )));
        }
        Ok(DpState { stress: Sym3::spherical(p0), strain: Sym3::zero(), ep_bar: T::zero() })
    }

    fn stress(&self, state: &Self::State) -> Sym3<T> {
        state.stress
    }

    fn strain(&self, state: &Self::State) -> Sym3<T> {
        state.strain
    }

    fn step(&self, state: &mut Self::State, deps: Sym3<T>) -> Result<(), MaterialError> {
        let el = self.elasticity();
        let old_stress = state.stress;
        let trial = old_stress + el.stress_from_strain(deps);
        state.strain += deps;
        let p_tr = trial.mean();
        let q_tr = deviatoric_q(trial);
        let ep0 = state.ep_bar;
        let f_tr = q_tr + self.cone_slope(p_tr, ep0) * p_tr;
        if f_tr <= T::zero() {
            state.stress = trial;
            return Ok(());
        }

        let g3 = T::lit(3.0) * self.g0;
        let dl_max = q_tr / g3;
        // consistency residual at a given plastic increment
        let eval = |dl: T| {
            let a = self.consistent_slope(p_tr, ep0 + dl, dl, el.bulk);
            let p_new = p_tr - el.bulk * (a - self.beta0) * dl;
            (q_tr - g3 * dl + a * p_new, p_new)
        };
        let scale = q_tr.max(p_tr.abs()).max(T::one());
        let tol = T::lit(1e-12) * scale;

        let (f_hi, p_hi) = eval(dl_max);
        if f_hi.abs() <= tol {
            state.stress = Sym3::spherical(p_hi);
            state.ep_bar = ep0 + dl_max;
            return Ok(());
        }
        if f_hi > T::zero() {
            // the deviator is exhausted before consistency can be restored:
            // project to the apex and log the remaining plastic distortion
            let deps_p = deps + el.strain_from_stress(old_stress);
            state.ep_bar += T::lit(2.0 / 3.0).sqrt() * deps_p.dev().norm();
            state.stress = Sym3::zero();
            return Ok(());
        }

        // Illinois iteration for the root of the residual on (0, dl_max)
        let (mut lo, mut flo) = (T::zero(), f_tr);
        let (mut hi, mut fhi) = (dl_max, f_hi);
        let mut side = 0i8;
        for _ in 0..200 {
            let mut x = hi - fhi * (hi - lo) / (fhi - flo);
            if !(x > lo && x < hi) {
                x = (lo + hi) * T::lit(0.5);
            }
            let (fx, px) = eval(x);
            if fx.abs() <= tol {
                let ratio = (q_tr - g3 * x) / q_tr;
                state.stress = trial.dev() * ratio + Sym3::spherical(px);
                state.ep_bar = ep0 + x;
                return Ok(());
            }
            if (fx > T::zero()) == (flo > T::zero()) {
                lo = x;
                flo = fx;
                if side < 0 {
                    fhi = fhi * T::lit(0.5);
                }
                side = -1;
            } else {
                hi = x;
                fhi = fx;
                if side > 0 {
                    flo = flo * T::lit(0.5);
                }
                side = 1;
            }
        }
        Err(MaterialError::ReturnMapping { iterations: 200 })
    }
}
