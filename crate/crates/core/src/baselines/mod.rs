//! Data-driven reference methods: inverse distance weighting and low-rank
//! tensor completion.

mod halrtc;
mod idw;

pub use halrtc::{halrtc_reconstruct, nuclear_objective, HalrtcConfig, HalrtcOutcome};
pub use idw::{idw_reconstruct, IdwConfig};
