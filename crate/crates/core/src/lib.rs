//! Image-to-video person re-identification with a joint
//! verification-identification network and fixed model reuse.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod diffcore;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod fmr;
pub mod network;
pub mod pipeline;
pub mod seed;
pub mod trainer;
pub mod verid;

pub use error::{Error, Result};
