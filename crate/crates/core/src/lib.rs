#![cfg_attr(not(test), no_std)]
extern crate alloc;

pub mod autograd;
pub mod config;
pub mod decoder;
pub mod embed;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod lexical;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod phoc;
pub mod pipeline;
pub mod scene;
pub mod synth;
pub mod tensor;
pub mod text;
pub mod train;
pub mod vocab;
pub mod vqa;

pub use error::{Error, Result};
