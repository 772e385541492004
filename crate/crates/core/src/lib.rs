//! Digital-twin-aided probabilistic 3D indoor positioning.
//!
//! The pipeline localizes a user equipment (UE) in a non-line-of-sight indoor
//! environment from noisy base-station measurements:
//!
//! 1. [`scene`] — the digital twin: planar-faceted geometry, specular
//!    multi-bounce ray tracing, and discretization of traced rays into
//!    length-annotated 3D points.
//! 2. [`measure`] — measurement generation and Gaussian error models for
//!    angle-of-arrival (AoA), propagation time (PT), and relative propagation
//!    time (RPT, TDoA-derived).
//! 3. [`cloud`] — Monte-Carlo point clouds per base station and fusion
//!    down-selection of points by PT or RPT consistency.
//! 4. [`gmm`] — 3D Gaussian mixture fitting on per-BS clouds, the product
//!    posterior over a grid, and argmax position estimation.
//! 5. [`sim`] — experiment harness: random UE drops, campaigns, error CDFs,
//!    and parameter sweeps.

pub mod cloud;
pub mod geom;
pub mod gmm;
pub mod measure;
pub mod scene;
pub mod sim;
