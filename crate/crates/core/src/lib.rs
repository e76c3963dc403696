//! Spoken language identification: log-mel features, a separable 1D
//! convolutional encoder, self-attentive pooling and a linear classifier,
//! with the autodiff, training and evaluation code to go with them.
//!
//! The guide in `book/` covers the command line and file formats.

pub mod augment;
pub mod autodiff;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod features;
pub mod layers;
pub mod model;
pub mod sap;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{LidError, Result};

// The guide's code blocks run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/command-line.md")]
    mod command_line {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
}
