//! A small reinforcement-learning laboratory built around goal- and
//! horizon-conditioned Q-functions of the form `Q(s, a, g, tau) = -||f(s, a, g, tau) - g||_1`,
//! trained off-policy with goal/horizon relabeling and extracted into policies
//! via model-predictive control.
//!
//! The crate is organized as:
//!
//! - [`nn`] — dense networks with manual backprop, Adam, polyak target copies
//! - [`envs`] — deterministic micro-environments with explicit goal maps
//! - [`replay`] — transition storage plus goal/horizon relabeling at sample time
//! - [`tdm`] — the horizon-conditioned critic/actor and their training loop
//! - [`control`] — policy extraction: direct, explicit MPC, K-step skip plans
//! - [`baselines`] — learned-dynamics shooting MPC and a plain DDPG agent
//! - [`oracle`] — exact finite-horizon dynamic programming on tabular MDPs
//! - [`harness`] — config files, seeded multi-run execution, CSV export

pub mod baselines;
pub mod control;
pub mod envs;
pub mod error;
pub mod harness;
pub mod nn;
pub mod oracle;
pub mod replay;
pub mod tdm;
pub mod util;

pub use error::{Error, Result};
