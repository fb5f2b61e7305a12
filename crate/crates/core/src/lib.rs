//! Music-conditioned 3D conducting-motion generation engine.
//!
//! Pipeline: WAV audio -> 35-dim music features (`dsp`) -> diffusion denoiser
//! (`nn`, `ssm`, `denoiser`, `diffusion`) -> motion sequences over a skeleton
//! (`kin`), plus evaluation metrics (`metrics`), a synthetic metronome
//! dataset (`toy`), latency benchmarks (`bench`), and binary file formats
//! (`formats`). Core never touches the filesystem; byte buffers in, byte
//! buffers out.

pub mod denoiser;
pub mod diffusion;
pub mod dsp;
pub mod bench;
pub mod error;
pub mod formats;
pub mod kin;
pub mod metrics;
pub mod nn;
pub mod ssm;
pub mod toy;

pub use error::{Error, Result};
