//! # asac-core
//!
//! Nested named-entity recognition by layered sequence labeling. Entity
//! categories are grouped into classes, each class gets its own mixture of
//! encoder layers and its own linear-chain CRF, and a second decoding pass
//! corrects every class's emissions with an attention residual queried by the
//! other classes' first-pass decodes.
//!
//! The crate is `no_std` (with `alloc`) and has no IO. File formats, the
//! command line and corpus loading live in the `asac` crate.
//!
//! ```
//! use asac_core::crf::{viterbi, CrfParameters};
//! use asac_core::emission::EmissionMatrix;
//! use asac_core::tensor::Matrix;
//!
//! // Three real tags plus the padding slot.
//! let crf = CrfParameters::zeros(4);
//! let scores = Matrix::from_rows(&[&[0.0, 2.0, 0.0, 0.0], &[0.0, 0.0, 3.0, 0.0]]);
//! let emissions = EmissionMatrix::new(scores, 8);
//! let path = viterbi(&emissions, &crf, 0);
//! assert_eq!(path.valid(), &[1, 2]);
//! ```
#![cfg_attr(not(feature = "std"), no_std)]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod adaptive;
pub mod attentive;
pub mod crf;
pub mod data;
pub mod emission;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod math;
pub mod model;
pub mod optim;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
