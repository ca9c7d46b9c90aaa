//! Geometric error estimation for 3D face meshes, plus a benchmark for the
//! estimators themselves.
//!
//! The estimation pipeline is: crop → rigid alignment → optional non-rigid
//! warp → correspondence → distance → optional correction. The warped mesh is
//! used only to establish correspondences; distances are always measured from
//! the rigidly aligned reconstruction. The [`bench`] module runs configured
//! estimators over a corpus with known true errors and scores their fidelity.

pub mod bench;
pub mod correspondence;
pub mod error;
pub mod io;
pub mod mesh;
pub mod metrics;
pub mod registration;
pub mod spatial;
pub mod synth;
pub mod warp;

pub use error::{Error, Result};
pub use mesh::{LandmarkSet, Mesh, PerVertexError, VertexMask};
