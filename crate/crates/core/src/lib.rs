//! Low-rank solver for the even-parity radiative transfer equation in slab
//! geometry.
//!
//! The discrete system is a short sum of Kronecker products acting on
//! `(J+1) x N_ang` coefficient matrices (spatial index in rows). It is
//! left-right preconditioned with an exponential-sum approximation of the
//! inverse square root of a Kronecker-sum Riesz operator and then solved by a
//! Richardson iteration whose iterates are kept low-rank by soft thresholding
//! of their singular values.
//!
//! The crate is `no_std` (it needs `alloc`). Enable the `std` feature for
//! wall-clock timing in solver traces and for the `std` builds of the linear
//! algebra backend.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod banded;
pub mod cases;
pub mod coeff;
pub mod dense;
pub mod discretization;
pub mod error;
pub mod expsum;
pub mod kron;
pub mod lowrank;
pub mod quadrature;
pub mod solver;
pub mod study;

pub(crate) mod fmath;

pub use error::{Error, Result};

/// Dense real matrix used for small-size materialization and test oracles.
pub type DenseMatrix = nalgebra::DMatrix<f64>;
/// Dense real column vector.
pub type DenseVector = nalgebra::DVector<f64>;

pub use cases::{CaseId, ManufacturedCase};
pub use coeff::CoefficientFunction;
pub use discretization::{AssembledSystem, DiscretizationSpec, Scheme};
pub use expsum::{ExpSumApproximation, Preconditioner};
pub use kron::{KronOperator, KronTerm, LinearMap};
pub use lowrank::LowRankMatrix;
pub use solver::{LowRankOperator, Sandwich, SolveOutcome, SolveTrace, SolverParams};
pub use study::{ConvergenceRow, SolverVariant, StudyParams, ToleranceRule};
