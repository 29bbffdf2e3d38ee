//! Value-guided trial-and-error deployment for chunked imitation policies.
//!
//! A value function trained on expert demonstrations watches the progress of a
//! stochastic base policy. When the k-step Bellman self-consistency check says
//! the current strategy is falling behind expert pace, the robot recovers to a
//! neutral pose and resamples, skewing new action chunks away from the
//! proprioceptive states where earlier attempts went wrong.
//!
//! The crate is organised bottom-up:
//!
//! * [`dist`] categorical progress distributions and their delta arithmetic
//! * [`graspworld`] a 2D hidden-parameter grasp-and-carry simulator
//! * [`demogen`] a privileged scripted expert and the demonstration file format
//! * [`valuefn`] scalar and categorical value functions with hand-derived gradients
//! * [`monitor`] the progress check that decides when to recover
//! * [`policy`] a retrieval-based chunk policy and skewed chunk selection
//! * [`deploy`] the closed deployment loop for one episode
//! * [`bench`] the matched-pair benchmark harness, metrics and reports
//!
//! Numeric kernels are generic over [`Scalar`]; the aliases below fix them to
//! `f64`, which is what the simulator and the command line use.

// `!(x >= 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cli;
pub mod demogen;
pub mod deploy;
pub mod dist;
mod error;
pub mod graspworld;
pub mod monitor;
pub mod policy;
pub mod rng;
mod scalar;
pub mod types;
pub mod valuefn;

pub use error::{Error, Result};
pub use rng::SeedStream;
pub use scalar::Scalar;
pub use types::{ActionChunk, Event, Observation, ProprioPoint, Trajectory, Transition};

/// 50-bin progress distribution in double precision.
pub type CategoricalDist = dist::CategoricalValueDist<f64>;
/// Signed bin-difference distribution in double precision.
pub type DeltaDist = dist::SignedBinDist<f64>;
/// Value model in double precision.
pub type ValueModel = valuefn::ValueModel<f64>;
/// Value model in single precision.
pub type ValueModel32 = valuefn::ValueModel<f32>;
/// One value prediction in double precision.
pub type Prediction = valuefn::Prediction<f64>;
/// Two-layer approximator in double precision.
pub type Mlp = valuefn::net::Mlp<f64>;
