//! Numerical laboratory for the doubly nonlinear parabolic problem
//! `d/dt beta(u) + A_mu u = Div f(u) + g` on a bounded interval, where
//! `A_mu = -Delta_p + mu (-Delta)_q^s` mixes a local p-Laplacian with a nonlocal
//! fractional q-Laplacian and `u` vanishes outside the interval.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod grid;
pub mod nonlinearities;
pub mod operators;
pub mod elliptic;
pub mod time_stepper;
pub mod diagnostics;
pub mod experiments;

pub use error::{Error, Result};
pub use grid::{lp_norm, lp_norm_pow, w1p_seminorm, wsq_seminorm, Field, Grid};
