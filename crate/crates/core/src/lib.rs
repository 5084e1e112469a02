//! Learned sparse-grid quadrature for random fields driven by Lévy noise.
//!
//! A sparse Gauss-Hermite rule for the standard normal is pushed through a
//! trained generative map `g` (an affine coupling flow or a flow-matching
//! vector field) so that it integrates against the law of the modal
//! coefficients of a smoothed Lévy field. The weights are left unchanged.
//! The crate also contains the noise and field machinery, a mixed finite
//! element solver for the flow-cell problem used as a quantity of interest,
//! and the experiment pipeline.
//!
//! Numerical types are generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below fix the precision.

pub mod error;
pub mod fem;
pub mod flow;
pub mod hermite;
pub mod levy;
pub mod linalg;
pub mod pipeline;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type QuadratureRuleF64 = hermite::QuadratureRule<f64>;
pub type QuadratureRuleF32 = hermite::QuadratureRule<f32>;
pub type LatticeFieldF64 = levy::LatticeField<f64>;
pub type LatticeFieldF32 = levy::LatticeField<f32>;
pub type FlowModelF64 = flow::FlowModel<f64>;
pub type FlowModelF32 = flow::FlowModel<f32>;
pub type MeshF64 = fem::Mesh<f64>;
pub type MeshF32 = fem::Mesh<f32>;
pub type MatrixF64 = linalg::Matrix<f64>;
pub type MatrixF32 = linalg::Matrix<f32>;
