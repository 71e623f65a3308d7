//! Density and isolation baselines over encoder latents.

mod iforest;
mod kde;

pub use iforest::{average_path_length, IsoForest, IsoForestConfig};
pub use kde::KdeModel;
