//! Learned signal partitioning for self-supervised denoising of 1D signals.
//!
//! A single noisy recording is cut into short windows and every window is
//! split into two equal halves. Concatenating the halves gives two
//! sub-signals that (for a good split) share the same clean content but carry
//! independent noise, so a small convolutional denoiser can be trained on
//! them Noise2Noise-style. The split is chosen either by a recurrent policy
//! trained with policy gradients ([`policy`]) or, for a single recording with
//! no training set, by a best-arm bandit over splits shared by all windows
//! ([`zeroshot`]).

pub mod data;
pub mod denoiser;
pub mod error;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod policy;
pub mod rng;
pub mod signal;
pub mod zeroshot;

pub mod cli;

pub use error::{IpsdError, Result};
pub use signal::{PartitionCatalog, PartitionChoice, Side, Signal, SubSignalPair, WindowGrid};
