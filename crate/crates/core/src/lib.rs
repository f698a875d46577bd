//! Online correction of frozen spatial-temporal forecasters.
//!
//! A base forecast is split into seasonal and trend-cyclical parts, each part
//! is corrected by a small two-layer network, and the corrections are added
//! back with per-node weights that start at zero. The weights and networks are
//! updated after every entry once its ground truth arrives.

pub mod decomposition;
pub mod engine;
pub mod error;
pub mod forecasters;
pub mod io;
pub mod metrics;
pub mod network;
pub mod optimizer;
pub mod reference;
pub mod scalar;
pub mod sim;
pub mod tensor;
pub mod windows;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type SeriesTensor32 = tensor::SeriesTensor<f32>;
pub type SeriesTensor64 = tensor::SeriesTensor<f64>;
pub type NodeVector32 = tensor::NodeVector<f32>;
pub type NodeVector64 = tensor::NodeVector<f64>;
pub type CorrectionNet32 = network::CorrectionNet<f32>;
pub type CorrectionNet64 = network::CorrectionNet<f64>;
pub type AdaptState32 = engine::AdaptState<f32>;
pub type AdaptState64 = engine::AdaptState<f64>;
pub type BaseForecaster32 = forecasters::BaseForecaster<f32>;
pub type BaseForecaster64 = forecasters::BaseForecaster<f64>;
