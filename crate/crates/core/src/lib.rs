//! Exact computer algebra for systems of spectral-curve differentials.
//!
//! Everything is computed over arbitrary-precision rationals at a finite
//! truncation order in the formal parameter; there are no floating-point
//! numbers anywhere. The main pipelines are:
//!
//! * the x-y swap of a system of correlation differentials (graph-sum form)
//!   and its inverse, [`graphsum`];
//! * formal Gaussian-integral transforms of functions and kernels,
//!   [`gaussian`];
//! * KP-integrability verification: Baker-Akhiezer kernels, determinantal
//!   formulas, Grassmannian frames, Schur expansions and Pluecker relations,
//!   [`kp`];
//! * the semi-classical normal form of the (0,2) differential, also in
//!   [`kp`].

pub mod curve;
pub mod graphsum;
pub mod poly;
pub mod ratfn;
pub mod series;
