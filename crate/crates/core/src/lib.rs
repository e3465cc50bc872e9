//! Stylization of UV-textured urban meshes through a neural texture field.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`scene`] loads and validates textured meshes and bakes multi-view labels
//!   into a per-texel semantic texture.
//! * [`planner`] places pivot cameras, samples augmented novel views and
//!   schedules the progressive field-of-view levels.
//! * [`render`] rasterizes meshes into UV buffers and renders content,
//!   semantics and neural-field images (with a backward pass).
//! * [`field`] holds the multi-resolution grid + MLP texture field, its
//!   distillation, baking and checkpoint format.
//! * [`style`] builds the multi-scale style patch bank and performs
//!   structure-based patch matching.
//! * [`losses`] implements every optimization objective with analytic gradients.
//! * [`trainer`] runs the joint progressive optimization.
//! * [`sky`] synthesizes equirectangular sky panoramas by joint multi-window
//!   latent denoising.
//! * [`metrics`] provides the evaluation metrics.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and falls back to sequential iteration
//! otherwise. Results are identical in both modes.

pub mod camera;
pub mod embedding;
pub mod error;
pub mod features;
pub mod field;
pub mod fixture;
pub mod geom;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod par;
pub mod planner;
pub mod render;
pub mod rng;
pub mod scene;
pub mod sky;
pub mod style;
pub mod trainer;

pub use error::{Error, Result};
