//! Joint active speaker detection and audio-visual speech enhancement.

pub mod context;
pub mod encoders;
pub mod error;
pub mod features;
pub mod fusion;
pub mod harness;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod signalio;
pub mod xmodal;

pub use error::{Error, Result};
