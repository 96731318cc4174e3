//! Binaural signal matching (BSM) for arbitrary microphone arrays.
//!
//! The crate designs per-ear, per-frequency microphone-combination filters
//! that reproduce binaural signals from array recordings, optionally after
//! splitting the captured sound field into its direct and reverberant parts.
//! A shoebox image-method simulator and an NMSE evaluator are included so
//! the whole chain can be exercised without external data.
//!
//! Module map:
//!
//! * [`sphere`] and [`special`]: coordinates, spherical harmonics, direction
//!   grids and plane-wave steering vectors.
//! * [`hrtf`]: head-related transfer functions, the `BSMH` container and
//!   spherical-harmonic interpolation.
//! * [`solver`]: the filter solvers and filter-bank design.
//! * [`stft`]: analysis/synthesis transforms.
//! * [`scene`]: room simulation and scene statistics.
//! * [`render`]: applying filter banks and building binaural references.
//! * [`eval`]: NMSE reports and pipeline comparisons.
//! * [`config`] and [`pipeline`]: the config-driven command-line stages.

// NaN-rejecting checks are written as `!(x > 0.0)`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub(crate) mod dsp;
pub mod error;
pub mod eval;
pub mod hrtf;
pub mod io;
pub mod pipeline;
pub mod render;
pub mod scene;
pub mod solver;
pub mod special;
pub mod sphere;
pub mod stft;

pub use error::{Error, Result};
pub use num_complex::Complex64;

pub(crate) use nalgebra::{DMatrix, DVector};
