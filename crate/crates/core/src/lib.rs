//! Bivariate postprocessing of ensemble wind-vector forecasts.

pub mod boost;
pub mod copula;
pub mod dataio;
pub mod drn;
pub mod emos;
pub mod error;
pub mod gaussian;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod simulate;
pub mod special;
pub mod verify;
pub mod yvine;

pub use error::{Error, Result};
pub use gaussian::{link_to_params, BivNormalParams, PredictorVector};
