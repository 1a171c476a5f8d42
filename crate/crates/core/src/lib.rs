//! Differentiable spherical tri-plane neural fields.
//!
//! Two spherical tri-planes in mutually rotated frames are fused with a
//! cosine weight map, rendered with emission-absorption volume rendering and
//! fitted to multi-view images with hand-written reverse-mode gradients.
//! Cartesian tri-plane and tri-grid baselines share the same interface.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod field;
pub mod geometry;
pub mod optim;
pub mod planes;
pub mod real;
pub mod render;
pub mod vico;

pub use error::{Error, Result};
pub use real::Real;
