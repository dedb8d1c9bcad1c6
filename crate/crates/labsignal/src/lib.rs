//! Screening irregularly sampled longitudinal laboratory series for
//! clinically meaningful pre-event signal.
//!
//! The pipeline: sample a nested case-control cohort from event-labeled
//! longitudinal data, fit truncated-power-spline mixed models over the
//! 180-day window before each index date, apply a three-criterion
//! likelihood-ratio screen per marker, localize the change onset with an AIC
//! knot scan, and validate surviving markers on a held-out cohort via ROC
//! comparison.

pub mod cli;
pub mod cohort;
pub mod error;
pub mod lmm;
pub mod predict;
pub mod screen;
pub mod spline;
pub mod stats;
pub mod synth;
pub mod testutil;

pub use error::{Error, Result};

/// Code blocks in the book are compiled and run as doctests so the guide
/// cannot drift out of sync with the library.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/splines.md")]
    mod splines {}
    #[doc = include_str!("../../../book/src/mixed-models.md")]
    mod mixed_models {}
    #[doc = include_str!("../../../book/src/cohort.md")]
    mod cohort {}
    #[doc = include_str!("../../../book/src/screening.md")]
    mod screening {}
    #[doc = include_str!("../../../book/src/validation.md")]
    mod validation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
