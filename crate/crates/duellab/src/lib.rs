//! Adversarial experiment selection for constitutive-model calibration.
//!
//! Two agents play against each other over a decision tree of laboratory
//! experiments: a protagonist picks the tests used to calibrate a candidate
//! material model, an adversary picks the tests most likely to expose it.
//! Both learn through AlphaZero-style self-play (policy/value network plus
//! PUCT tree search), and a brute-force enumerator provides exact equilibria
//! on small trees for cross-checking.
//!
//! The numeric core (tensors, material models, lab drivers, calibration,
//! scoring, the network) is generic over the scalar type; end-to-end runs use
//! [`Real`].

pub mod calib;
pub mod driver;
pub mod game;
pub mod lab;
pub mod learner;
pub mod materials;
pub mod num;
pub mod scoring;
pub mod tensor;
pub mod tree;

/// Scalar type used by the orchestration layer and the CLI.
pub type Real = f64;

/// Symmetric 3x3 tensor at the default scalar.
pub type Tensor = tensor::Sym3<Real>;
