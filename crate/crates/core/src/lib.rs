//! Aircraft trajectory dataset augmentation in a learned latent space.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod binio;
pub mod error;
pub mod neuralcore;
pub mod airsim;
pub mod trajdata;
pub mod autoencoder;
pub mod latentstats;
pub mod evalharness;
pub mod pipeline;

pub use error::{Error, Result};
