//! Hyperbolic neural networks on the Poincaré ball with learnable curvature.
//!
//! The crate provides:
//! - a small dense-tensor substrate with reverse-mode gradients and verified
//!   second-order products ([`tensor`]),
//! - Poincaré-ball geometry parameterized by positive curvature ([`geometry`]),
//! - the hyperbolic feed-forward + MLR model and its cross-entropy loss
//!   ([`model`]),
//! - scope-sharpness machinery: closed-form measure, worst-case perturbation,
//!   Hessian power iteration, and perturbation sweeps ([`sharpness`]),
//! - sharpness-aware bilevel curvature training with implicit-differentiation
//!   hypergradients ([`bilevel`]),
//! - closed-form Lipschitz/bound constants with a randomized certificate
//!   verifier ([`lipschitz`]),
//! - dataset generation, δ-hyperbolicity, configuration, and the CLI
//!   ([`data`], [`config`], [`cli`]).

pub mod bilevel;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod geometry;
pub mod lipschitz;
pub mod model;
pub mod sharpness;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
