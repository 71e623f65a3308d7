//! Forecast-the-past gradient scores for detecting distribution shift in
//! 2-D trajectory data.
//!
//! A mixture-density decoder is trained on top of a frozen trajectory
//! encoder to predict the second half of an observed history from its first
//! half. At test time the L2 norm of that forecasting loss' gradient, taken
//! at the decoder's last-layer input, is the shift score.

pub mod baselines;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod models;
pub mod ndgrad;
pub mod score;
pub mod synthgen;
pub mod traj;
pub mod train;

pub use error::{Error, Result};
