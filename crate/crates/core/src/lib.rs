//! County-level crop yield prediction with graph-recurrent neural networks.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense f64 tensors with a reverse-mode tape
//! - [`layers`]: CNN encoders, LSTM/GRU cells, dense heads, dropout
//! - [`optim`]: log-cosh loss, Adam, learning-rate schedules
//! - [`graph`]: county adjacency, neighbour sampling, GraphSAGE
//! - [`dataset`]: feature/yield tables, normalisation, windows, synthetic data
//! - [`models`]: the ten compared methods, training and checkpoints
//! - [`geo`]: raster-to-county aggregation, weekly reduction, soil texture
//! - [`eval`]: metrics, early-season masking, report emission
//! - [`par`]: rayon helpers with a sequential fallback

pub mod dataset;
pub mod error;
pub mod eval;
pub mod geo;
pub mod par;
pub mod graph;
pub mod layers;
pub mod models;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
