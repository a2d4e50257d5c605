//! Multi-sensor predictive models that stay useful when sensors go missing.
//!
//! The crate provides a small reverse-mode differentiation engine
//! ([`autograd`], [`layers`], [`optim`]), multi-sensor datasets ([`data`]),
//! four fusion architectures including a sensor-invariant ensemble
//! ([`models`]), training-time sensor/temporal dropout and inference-time
//! missing-sensor handlers ([`robustness`]), predictive and robustness
//! metrics ([`metrics`]) and the cross-validation protocol with simulated
//! missingness ([`harness`]).

pub mod autograd;
pub mod data;
pub mod error;
pub mod harness;
pub mod layers;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod robustness;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
