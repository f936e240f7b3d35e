//! Independent references for verifying rtf-core: f64 reference forwards,
//! finite-difference gradient checks and the suites built from them.

pub mod fd;
pub mod gradients;
pub mod kernels;
pub mod reference;
