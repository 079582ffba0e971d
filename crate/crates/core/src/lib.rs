//! Coordinated EV charging as an aggregated-state MDP solved by fitted
//! Q-iteration, with reference schedulers and an evaluation pipeline.

pub mod baselines;
pub mod calendar;
pub mod error;
pub mod eval;
pub mod experience;
pub mod fqi;
pub mod mdp;
pub mod nn;
pub mod pipeline;
pub mod policy;
pub mod scalar;
pub mod seeds;
pub mod sessions;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type QNetwork64 = nn::QNetwork<f64>;
pub type QNetwork32 = nn::QNetwork<f32>;
pub type GreedyPolicy64 = fqi::GreedyPolicy<f64>;
pub type GreedyPolicy32 = fqi::GreedyPolicy<f32>;
pub type FqiOutcome64 = fqi::FqiOutcome<f64>;
pub type FqiOutcome32 = fqi::FqiOutcome<f32>;
