//! Link-level simulation and beamforming for intelligent omni-surfaces:
//! metasurfaces that reflect and refract at the same time, serving users on
//! both sides.
//!
//! The crate is organized bottom-up:
//!
//! - [`element`]: single-element response tables and the circuit model.
//! - [`channel`]: scenario geometry and cascaded Rician channel synthesis.
//! - [`beamform`]: precoders, rates and CSI-known hybrid optimization.
//! - [`codebook`]: CSI-free beam training with hierarchical codebooks.
//! - [`multicell`]: two-cell negotiation of a shared surface.
//! - [`chanest`]: grouped linear channel estimation.
//! - [`pattern`]: far-field beam patterns and their metrics.
//! - [`harness`]: configuration files, experiment runners and CSV output.
//!
//! ```
//! use omnisurf::{beamform, channel, harness};
//!
//! let scenario = harness::canonical("two_side").unwrap();
//! let channels = channel::synthesize_channels(&scenario, 7);
//! let opts = beamform::AltOptions::default();
//! let result = beamform::alternating_optimize(&channels, &scenario, &opts, 7).unwrap();
//! assert!(result.sum_rate > 0.0);
//! ```

pub mod beamform;
pub mod chanest;
pub mod channel;
pub mod codebook;
pub mod element;
mod error;
pub mod harness;
pub mod multicell;
pub mod pattern;

pub use error::{Error, Result};

pub type C64 = num_complex::Complex64;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/elements.md")]
mod book_elements {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/channels.md")]
mod book_channels {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/hybrid.md")]
mod book_hybrid {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/training.md")]
mod book_training {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/multicell.md")]
mod book_multicell {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/estimation.md")]
mod book_estimation {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/patterns.md")]
mod book_patterns {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/experiments.md")]
mod book_experiments {}
