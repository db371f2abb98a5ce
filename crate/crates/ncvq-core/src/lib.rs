//! Two-stage generative modeling of univariate time series.
//!
//! Stage 1 tokenizes series with a vector-quantized autoencoder whose latent
//! space is additionally shaped by a non-contrastive self-supervised loss
//! (Barlow Twins or VIbCReg) computed between an original and an augmented
//! view. Stage 2 fits a masked bidirectional transformer prior over the
//! discrete token grids and generates new series by cosine-scheduled
//! iterative decoding. The [`eval`] module scores generations with probe
//! classifiers, Inception Score and Fréchet distance on features from a
//! dataset-specific convolutional extractor.

pub mod augment;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod prior;
pub mod rng;
pub mod ssl;
pub mod stft;
pub mod tokenizer;
pub mod train;

pub use config::ExperimentConfig;
pub use data::{NormStats, Split, TimeSeriesDataset};
pub use error::{Error, Result};
pub use eval::MetricsReport;
pub use tokenizer::{Codebook, LatentBatch, Stage1LossWeights};
