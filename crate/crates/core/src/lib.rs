//! Vehicle trajectory forecasting with a Transformer encoder-decoder.
//!
//! The crate covers the whole pipeline: parsing bird's-eye-view traffic
//! datasets ([`ingest`]), turning tracks into normalized windows of velocity
//! increments ([`features`]), the model itself ([`model`]), training
//! ([`training`]), ADE/FDE evaluation ([`evaluation`]) and the declarative
//! experiment runner ([`harness`]).

mod container;

pub mod evaluation;
pub mod features;
pub mod harness;
pub mod ingest;
pub mod model;
pub mod synthetic;
pub mod training;
pub mod types;

pub use container::ContainerError;
