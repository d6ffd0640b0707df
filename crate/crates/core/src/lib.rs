//! Network-wide traffic speed forecasting with spatiotemporal recurrent
//! convolutional networks (SRCN).
//!
//! Road links are rasterized onto a fine lat/lon grid so each time bin of
//! link speeds becomes a single-channel image. A convolutional stack turns
//! each image into a feature vector, a stacked LSTM consumes the sequence of
//! features, and one affine head per horizon offset predicts every link's
//! future speed.

pub mod data;
pub mod error;
pub mod eval;
pub mod grid_codec;
pub mod lstm;
pub mod model;
pub mod nn;
pub mod tensor;

pub use error::{Error, Result};
