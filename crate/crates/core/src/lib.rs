//! Spatial scalar-on-function quantile regression.
//!
//! The crate is organised bottom-up:
//!
//! * [`funcspace`] – discretised curves, trapezoidal quadrature, FPCA and
//!   B-spline smoothing.
//! * [`spatial`] – row-normalised weight matrices, spatial lags, the
//!   `(I - rho W)` filter and local Moran's I.
//! * [`qrcore`] – check loss and an exact linear quantile regression solver
//!   (interior point followed by a simplex polish onto an optimal vertex).
//! * [`estimators`] – the two instrumental-variable estimators (reduced-form
//!   substitution and inverse quantile regression), prediction and
//!   prediction intervals.
//! * [`simlab`] – the Ornstein–Uhlenbeck simulation design, contamination,
//!   evaluation metrics and a seeded Monte Carlo runner.
//! * [`cli`] – the `ssofqr` command line front-end.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod estimators;
pub mod funcspace;
pub mod qrcore;
pub mod simlab;
pub mod spatial;

pub use error::{Error, Result};
