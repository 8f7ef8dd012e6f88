//! Two embodied agents form emotion categories from interoception and
//! exteroception, then align them by playing a Metropolis-Hastings naming game.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod core_affect;
pub mod error;
pub mod gmm;
pub mod harness;
pub mod metrics;
pub mod mhng;
pub mod mvae;
pub mod stimuli;

pub use error::{Error, Result};
