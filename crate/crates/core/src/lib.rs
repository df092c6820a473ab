//! Instructional fingerprinting for small decoder-only language models.
//!
//! The crate covers the whole ownership lifecycle at desk scale:
//!
//! * [`lm`]: a byte-level causal transformer with hand-written gradients,
//!   incremental decoding and a checksummed checkpoint container.
//! * [`data`]: secret sampling, fingerprint pair rendering and dataset
//!   assembly with synthetic regularization instances.
//! * [`train`]: the three fingerprinting variants (full, embedding-only,
//!   embedding + F-Adapter) and simulated downstream fine-tuning.
//! * [`verify`]: activation checks, fingerprint success rate, white-box
//!   adapter recombination, sampled black-box probing with a one-sample
//!   t-test, guessing/leakage probes and multi-stage verification.
//! * [`analysis`]: parameter-shift metrics and the perplexity harmlessness
//!   proxy.
//! * [`cli`]: the commands behind the `ifp` binary.
//!
//! See the crate's `examples/` directory for one runnable program per
//! capability.

pub mod analysis;
pub mod cli;
pub mod data;
pub mod error;
pub mod lm;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
