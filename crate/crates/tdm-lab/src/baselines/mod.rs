//! The comparison points: a learned forward-dynamics model driven by
//! random-shooting MPC, and a plain goal-as-input DDPG agent without
//! relabeling.

mod ddpg;
mod dynamics;

pub use ddpg::{ddpg_train, BoundedPolicy, DdpgConfig, DdpgCritic};
pub use dynamics::{
    fit_dynamics, fit_dynamics_step, mbmpc_train, shooting_mpc, shooting_mpc_with_score,
    DynamicsModel, ForwardModel, MbmpcConfig, Normalizer,
};
