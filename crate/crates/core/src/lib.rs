//! Audio deepfake detection trained with reconstruction-based hard samples,
//! adaptive multi-layer feature aggregation and a regularization-assisted
//! contrastive objective.
//!
//! The pipeline runs left to right:
//!
//! ```text
//! synth ─► reconstruct ─► train ─► eval
//!             │             │
//!   mel round-trip     extract → aggregate → head → RACL losses
//! ```
//!
//! Every stage is deterministic under a fixed seed and independent of the
//! number of worker threads.

pub mod audio;
pub mod augment;
pub mod config;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod features;
pub mod losses;
pub mod model;
pub mod reconstruct;
pub mod rng;
pub mod synth;
pub mod verify;

pub use audio::{AudioClip, SampleLabel};
pub use config::RunConfig;
pub use error::{RaclError, Result};
