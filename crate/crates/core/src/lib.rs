//! Modality-decoupled any-to-any re-identification.
//!
//! Samples carry one specific and one shared feature per available modality
//! (RGB, NIR, TIR). The crate scores arbitrary query/gallery modality
//! combinations with a masked similarity, trains a small dual-token encoder
//! with orthogonality and discrepancy losses, and evaluates retrieval with
//! mAP / CMC over scenario matrices.

pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod gradcheck;
pub mod metric;
pub mod params;
pub mod repr;
pub mod sim;
pub mod train;

mod io_util;

pub use error::{Error, FormatError, Result};
