//! Simulation and decoding for the noisy nanopore channel.
//!
//! A read is a path through the de Bruijn graph of τ-mers. Each state emits
//! its pore-model level a geometric number of times and the samples are
//! observed in Gaussian noise. The crate simulates that channel, aligns
//! levels to signals with DTW, computes exact a-posteriori path probabilities
//! with forward recursions and turns them into achievable-rate estimates.

pub mod channel;
pub mod config;
pub mod crosscheck;
pub mod dataset_io;
pub mod decoder;
pub mod dtw;
pub mod error;
pub mod pipeline;
pub mod pore_model;
pub mod rates;

pub use channel::{
    simulate_dataset, split_seed, NncParams, Segmentation, SimulatedRead, Simulator,
};
pub use config::{RunConfig, SimulationConfig};
pub use dataset_io::{normalize_signal, OutputHeader, Read};
pub use decoder::{DecodeOutput, Decoder, TransitionWeights};
pub use dtw::{dtw_align, dtw_align_banded, Band, Block, DtwResult};
pub use error::{Error, Result};
pub use pore_model::{Base, PoreModel, StateModel, StateSpace};
pub use rates::{
    estimate_rate, info_density, rate_loss_bound, FilterConstraints, RateConfig, RateReport,
};
