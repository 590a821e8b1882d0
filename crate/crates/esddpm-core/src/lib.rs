//! Desk-scale engine for early-stopped denoising diffusion.
//!
//! A diffusion model is trained on the first `T'` of `T` forward noising
//! steps. At sampling time a cheap base generator proposes a draft sample,
//! the draft is noised up to step `T'` through the closed-form forward
//! marginal, and the learned reverse chain denoises it back down. `T' = 0`
//! degenerates to the base generator alone, `T' = T` to a vanilla
//! denoising diffusion model.
//!
//! Everything here is deterministic given the caller's RNG and runs on a
//! single thread; types are safe to share across threads once built. The
//! crate is `no_std`-compatible (with `alloc`) when the default `std`
//! feature is disabled.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod basegen;
pub mod diffusion;
pub mod elbo;
pub mod metrics;
pub mod nn;
pub mod reference;
pub mod sampler;
pub mod schedule;

pub use basegen::BaseGenerator;
pub use diffusion::{DiffusionModel, NoisePredictor, SigmaMode};
pub use metrics::MetricReport;
pub use nn::Network;
pub use sampler::SamplerPlan;
pub use schedule::NoiseSchedule;
