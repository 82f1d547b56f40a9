//! Hyperspectral image classification with attention-fused hybrid 3D/2D
//! dense inception networks.
//!
//! The crate covers the whole pipeline: container I/O ([`hsio`]), PCA band
//! reduction, patch extraction and stratified splits ([`prep`]), the network
//! and its baselines ([`net`]), Adam training ([`trainer`]), OA/AA/kappa
//! evaluation and map rendering ([`metrics`]), benchmark sweeps ([`bench`])
//! and the command-line front end ([`cli`]).

pub mod bench;
pub mod cli;
pub mod error;
pub mod hsio;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod prep;
pub mod seed;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
