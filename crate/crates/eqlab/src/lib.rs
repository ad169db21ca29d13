//! eqlab: a desk-scale laboratory for long-tailed classification losses.
//!
//! The crate implements the equalization loss family (sigmoid form with an
//! excluding function for background, softmax form with stochastic ignoring),
//! the usual baselines it is compared against, synthetic long-tailed data to
//! exercise them on, and the gradient/probability telemetry that makes the
//! tail-suppression effect visible.
//!
//! The narrative guide lives in `book/`; its code blocks are compiled and
//! run as doctests below, so the book cannot drift from the library.

pub mod cli;
pub mod config;
pub mod datagen;
pub mod error;
pub mod freqstats;
pub mod gradcheck;
pub mod losses;
pub mod sampling;
pub mod telemetry;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/category-statistics.md")]
    mod category_statistics {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/synthetic-data.md")]
    mod synthetic_data {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    mod sampling {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
