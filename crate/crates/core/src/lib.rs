//! Gaussian-process geostatistics with Matérn covariances.
//!
//! Fits models by exact, tile low-rank (TLR), Vecchia and Gaussian
//! predictive process likelihoods, performs simple kriging, and measures how
//! much prediction efficiency an approximated or misspecified covariance
//! model loses (MLOE, MMOM, RMOM, conditional K-L divergence, MSPE).

pub mod bessel;
pub mod cli;
pub mod config;
pub mod covariance;
pub mod criteria;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod io;
pub mod kriging;
pub mod likelihood;
pub mod linalg;
pub mod simulation;
pub mod tlr;

pub use error::{Error, Result};
