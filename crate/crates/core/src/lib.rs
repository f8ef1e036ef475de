//! Numerics for Brownian motion conditioned to stay in thin tubes around a
//! closed plane curve: tube geometry, finite-difference forms on the unit
//! tube, ground states, heat kernels, functional inequalities and
//! path samplers.

pub mod discretize;
pub mod geometry;
pub mod heatkernel;
pub mod inequalities;
pub mod linalg;
pub mod sampler;
pub mod spectral;
