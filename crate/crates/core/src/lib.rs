// SPDX-License-Identifier: MIT OR Apache-2.0

//! Weight-only interpretability for sparse-autoencoder features.
//!
//! Everything here works from model and SAE weights alone: logit
//! attributions of decoder rows and encoder columns, metrics over the
//! attributed tokens, percentile-calibrated semantic classification, and
//! out-of-context query/key attention between features.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); weights are
//! typically stored as `f32` while every reduction accumulates in `f64`.

pub mod attribution;
pub mod bundle;
pub mod error;
pub mod metrics;
pub mod parallel;
pub mod persist;
pub mod population;
pub mod qkcircuit;
pub mod report;
pub mod scalar;
pub mod semantics;
pub mod stats;
pub mod synth;
pub mod tensor;
pub mod topk;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Bundle = bundle::ModelBundle<f32>;
pub type Bundle64 = bundle::ModelBundle<f64>;
pub type Attribution = attribution::LogitAttribution<f32>;
pub type Attribution64 = attribution::LogitAttribution<f64>;
pub type Projection = qkcircuit::HeadProjection<f32>;
pub type Projection64 = qkcircuit::HeadProjection<f64>;
pub type Sae = bundle::SaeWeights<f32>;
pub type Sae64 = bundle::SaeWeights<f64>;
