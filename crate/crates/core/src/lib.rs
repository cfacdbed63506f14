#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::type_complexity)]

pub mod baselines;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod mmpld;
pub mod plfit;
pub mod sampler;
pub mod scene;
pub mod sfla;
pub mod synthgen;

pub use error::{Error, Result};
