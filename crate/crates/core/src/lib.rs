//! Fine-grained multi-view 3D shape classification with generally semantic
//! part detection and hierarchical part-view attention.

pub mod attention;
pub mod cli;
pub mod bbox;
pub mod config;
pub mod detect;
pub mod error;
pub mod geometry;
pub mod gradsuite;
pub mod render;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

/// The guide's chapters, compiled and run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/shapes-and-views.md")]
    mod shapes_and_views {}
    #[doc = include_str!("../../../book/src/detection.md")]
    mod detection {}
    #[doc = include_str!("../../../book/src/attention.md")]
    mod attention {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
