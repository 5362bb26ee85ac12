#![allow(clippy::neg_cmp_op_on_partial_ord)] // negated comparisons reject NaN on purpose

//! Blocking geometry, exact covariance calculus, field simulation and the
//! quantile-transform Wiener coupling for associated random fields on `Z_+^d`.

pub mod coupling;
pub mod covariance;
pub mod field;
pub mod geometry;
pub mod lattice;
pub mod normal;
pub mod rng;
pub mod special;
pub mod verify;
