//! Desk-scale library for deterministic and linearized-Bayesian inverse
//! problems governed by PDEs.
//!
//! The pieces fit together as follows: [`fem`] builds structured triangular
//! meshes and assembles sparse finite-element operators; [`prior`] turns an
//! elliptic operator into a Gaussian smoothness prior with exact sampling and
//! pointwise-variance estimators; [`model`] defines the abstract
//! forward/adjoint/incremental contract that the two bundled model problems
//! ([`poisson`], [`advdiff`]) implement; [`newtoncg`] finds the MAP point with
//! a globalized inexact Newton-CG iteration; [`randeig`] provides randomized
//! solvers for the generalized eigenproblem that [`posterior`] uses to build a
//! low-rank Laplace approximation of the posterior, with sampling and variance
//! fields. [`linalg`] is the shared dense/sparse substrate.

pub mod advdiff;
pub mod fem;
pub mod linalg;
pub mod model;
pub mod newtoncg;
pub mod oracle;
pub mod poisson;
pub mod posterior;
pub mod prior;
pub mod randeig;
pub mod rng;
