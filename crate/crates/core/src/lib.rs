//! Probabilistic safety certification for networks of stochastic hybrid
//! systems: polynomial barrier certificates checked by Bernstein
//! branch-and-bound, lifted to counter-augmented certificates, composed by
//! small-gain reasoning, turned into reach-probability bounds, and
//! cross-checked by Monte Carlo simulation.

// `!(x > 0)` is used deliberately so that NaN fails every domain check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod bounds;
pub mod cbc;
pub mod certify;
pub mod compose;
pub mod model;
pub mod poly;
pub mod scalar;
pub mod sim;

pub use scalar::Scalar;

/// Double-precision polynomial, the carrier used by models and certificates.
pub type Poly = poly::Polynomial<f64>;
/// Single-precision polynomial.
pub type Poly32 = poly::Polynomial<f32>;
/// Double-precision box.
pub type Region = poly::Hyperbox<f64>;
