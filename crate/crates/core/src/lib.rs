//! Causal multichannel speech enhancement in the Mel domain: kernels, STFT and
//! Mel DSP, the STFT-to-Mel compression module, the recurrent backbone, a
//! streaming engine, an operation ledger and a weight archive.

pub mod audio;
pub mod backbone;
pub mod cli;
pub mod config;
pub mod dsp;
pub mod engine;
pub mod error;
pub mod kernels;
pub mod ledger;
pub mod rng;
pub mod stft2mel;
pub mod tensor;
pub mod weights;

pub use config::{PipelineConfig, Variant};
pub use error::{Error, Result};
pub use tensor::{OpCounter, Tensor};
pub use weights::{Manifest, Weights};
