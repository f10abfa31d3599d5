//! Natural-policy-gradient training with diverse exploration via conjugate
//! policies, plus TRPO and random-perturbation baselines, desk-scale
//! environments, and an experiment CLI.

pub mod config;
pub mod env;
pub mod error;
pub mod estimation;
pub mod experiment;
pub mod linalg;
pub mod nn;
pub mod perturbation;
pub mod policy;
pub mod scalar;
pub mod stats;
pub mod trpo;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default scalar type for training and experiments.
pub type Real = f64;

pub type Vector = linalg::Vector<Real>;
pub type DenseMatrix = linalg::DenseMatrix<Real>;
pub type GaussianMlpPolicy = policy::GaussianMlpPolicy<Real>;
pub type EmpiricalFisher = policy::EmpiricalFisher<Real>;
