//! Policy extraction from a trained goal-conditioned model: direct
//! goal-reaching through the actor, explicit single-effective-step MPC
//! through f, and the every-K-step skip plan. Planners are pure given
//! (networks, state, rng); candidate scoring is sequential in candidate
//! index with ties broken toward the lowest index.

use rand::Rng;

use crate::envs::EnvSpec;
use crate::tdm::{TdmActor, TdmCritic};
use crate::util::l1_distance;
use crate::{Error, Result};

/// A goal-conditioned state predictor: `predict` plays the role of f, and
/// `value` derives the negative L1 distance. The TDM critic implements it;
/// oracles implement it in tests.
pub trait GoalConditionedModel {
    fn predict(&self, s: &[f64], a: &[f64], g: &[f64], tau: u32) -> Result<Vec<f64>>;

    fn value(&self, s: &[f64], a: &[f64], g: &[f64], tau: u32) -> Result<f64> {
        Ok(-l1_distance(&self.predict(s, a, g, tau)?, g))
    }
}

impl GoalConditionedModel for TdmCritic {
    fn predict(&self, s: &[f64], a: &[f64], g: &[f64], tau: u32) -> Result<Vec<f64>> {
        TdmCritic::predict(self, s, a, g, tau)
    }
}

/// A goal- and horizon-conditioned deterministic policy.
pub trait GoalPolicy {
    fn act(&self, s: &[f64], g: &[f64], tau: u32) -> Result<Vec<f64>>;
}

impl GoalPolicy for TdmActor {
    fn act(&self, s: &[f64], g: &[f64], tau: u32) -> Result<Vec<f64>> {
        TdmActor::act(self, s, g, tau)
    }
}

/// Terminal task reward over goal-space vectors:
/// `r_c(v) = -sum_j |v_j - target_j|` over the fixed components.
#[derive(Debug, Clone)]
pub enum TaskReward {
    /// Every goal dimension is pinned.
    GoalReaching(Vec<f64>),
    /// Only the listed (index, target) components are pinned; the rest are
    /// free for the optimizer to exploit.
    FeatureTarget(Vec<(usize, f64)>),
}

impl TaskReward {
    pub fn eval(&self, v: &[f64]) -> f64 {
        match self {
            TaskReward::GoalReaching(target) => -l1_distance(v, target),
            TaskReward::FeatureTarget(targets) => {
                -targets.iter().map(|(i, t)| (v[*i] - t).abs()).sum::<f64>()
            }
        }
    }

    /// Goal-space indices the task does not pin.
    pub fn free_indices(&self, goal_dim: usize) -> Vec<usize> {
        match self {
            TaskReward::GoalReaching(_) => Vec::new(),
            TaskReward::FeatureTarget(targets) => (0..goal_dim)
                .filter(|j| !targets.iter().any(|(i, _)| i == j))
                .collect(),
        }
    }

    /// A full goal vector with fixed components pinned and free components
    /// zeroed (the planner overwrites the free ones per candidate).
    fn base_goal(&self, goal_dim: usize) -> Result<Vec<f64>> {
        match self {
            TaskReward::GoalReaching(target) => {
                if target.len() != goal_dim {
                    return Err(Error::Shape {
                        what: "goal-reaching target",
                        expected: goal_dim,
                        got: target.len(),
                    });
                }
                Ok(target.clone())
            }
            TaskReward::FeatureTarget(targets) => {
                let mut g = vec![0.0; goal_dim];
                for (i, t) in targets {
                    if *i >= goal_dim {
                        return Err(Error::InvalidArg(format!(
                            "feature target index {i} out of range (goal dim {goal_dim})"
                        )));
                    }
                    g[*i] = *t;
                }
                Ok(g)
            }
        }
    }
}

/// How planners pick the horizon fed to the networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HorizonMode {
    /// Remaining time, capped at the horizon the critic was trained for.
    Remaining { tau_cap: u32 },
    /// A fixed horizon (still never beyond the remaining time).
    Fixed(u32),
}

#[derive(Debug, Clone)]
pub struct PlannerConfig {
    /// Candidate count for the stochastic search over free goal components.
    pub candidates: usize,
    pub horizon: HorizonMode,
}

impl PlannerConfig {
    pub fn new(candidates: usize, tau_cap: u32) -> Self {
        PlannerConfig {
            candidates,
            horizon: HorizonMode::Remaining { tau_cap },
        }
    }
}

/// Direct goal-reaching: delegate the argmax over actions to the trained
/// actor.
pub fn direct_policy(
    actor: &impl GoalPolicy,
    s: &[f64],
    goal: &[f64],
    tau: u32,
) -> Result<Vec<f64>> {
    actor.act(s, goal, tau)
}

fn effective_tau(mode: HorizonMode, t_remaining: u32) -> u32 {
    match mode {
        HorizonMode::Remaining { tau_cap } => (t_remaining - 1).min(tau_cap),
        HorizonMode::Fixed(tau) => tau.min(t_remaining - 1),
    }
}

/// Candidate search shared by [`explicit_mpc`] and [`skip_k_plan`]: draw
/// full goal vectors with free components uniform in the goal box, score
/// each by the task reward of the model's prediction, return the action of
/// the best (first, on ties). Candidate draws consume a fixed number of rng
/// values each, so a run with more candidates shares its prefix with a
/// smaller one seeded identically.
fn plan_at_horizon<R: Rng + ?Sized>(
    model: &impl GoalConditionedModel,
    policy: &impl GoalPolicy,
    spec: &EnvSpec,
    s: &[f64],
    task: &TaskReward,
    tau: u32,
    cfg: &PlannerConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, f64)> {
    if cfg.candidates == 0 {
        return Err(Error::InvalidArg("candidate count must be >= 1".to_string()));
    }
    let mut goal = task.base_goal(spec.goal_dim)?;
    let free = task.free_indices(spec.goal_dim);
    // A fully pinned goal admits exactly one effective candidate.
    let n = if free.is_empty() { 1 } else { cfg.candidates };
    let mut best_score = f64::NEG_INFINITY;
    let mut best_action: Option<Vec<f64>> = None;
    for _ in 0..n {
        for j in &free {
            goal[*j] = rng.random_range(spec.goal_low[*j]..spec.goal_high[*j]);
        }
        let action = policy.act(s, &goal, tau)?;
        let predicted = model.predict(s, &action, &goal, tau)?;
        let score = task.eval(&predicted);
        if score > best_score {
            best_score = score;
            best_action = Some(action);
        }
    }
    Ok((best_action.expect("at least one candidate scored"), best_score))
}

/// Fully explicit MPC: optimize the terminal reward over the free goal
/// components, reading the reached state from f instead of solving a
/// constrained program.
pub fn explicit_mpc<R: Rng + ?Sized>(
    model: &impl GoalConditionedModel,
    policy: &impl GoalPolicy,
    spec: &EnvSpec,
    s: &[f64],
    task: &TaskReward,
    t_remaining: u32,
    cfg: &PlannerConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    explicit_mpc_with_score(model, policy, spec, s, task, t_remaining, cfg, rng)
        .map(|(action, _)| action)
}

/// [`explicit_mpc`] plus the winning candidate's predicted score; the score
/// is what the monotonicity property (more candidates never score worse
/// under a shared seed prefix) is stated over.
#[allow(clippy::too_many_arguments)]
pub fn explicit_mpc_with_score<R: Rng + ?Sized>(
    model: &impl GoalConditionedModel,
    policy: &impl GoalPolicy,
    spec: &EnvSpec,
    s: &[f64],
    task: &TaskReward,
    t_remaining: u32,
    cfg: &PlannerConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, f64)> {
    if t_remaining < 1 {
        return Err(Error::InvalidArg(
            "explicit_mpc needs at least one remaining step".to_string(),
        ));
    }
    let tau = effective_tau(cfg.horizon, t_remaining);
    plan_at_horizon(model, policy, spec, s, task, tau, cfg, rng)
}

/// Greedy realization of the every-K-step plan: choose the first waypoint
/// at horizon K - 1 and return its action, replanning each step MPC-style.
/// With K = T_remaining this is exactly [`explicit_mpc`].
pub fn skip_k_plan<R: Rng + ?Sized>(
    model: &impl GoalConditionedModel,
    policy: &impl GoalPolicy,
    spec: &EnvSpec,
    s: &[f64],
    task: &TaskReward,
    t_remaining: u32,
    k: u32,
    cfg: &PlannerConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if k < 1 || k > t_remaining {
        return Err(Error::InvalidArg(format!(
            "skip step K = {k} outside 1..={t_remaining}"
        )));
    }
    let tau = effective_tau(cfg.horizon, k);
    plan_at_horizon(model, policy, spec, s, task, tau, cfg, rng).map(|(action, _)| action)
}

/// Index of the maximal score, lowest index on ties. Scores scale out: any
/// positive rescaling selects the same candidate.
pub fn select_best(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if best.map_or(true, |(_, b)| *s > b) {
            best = Some((i, *s));
        }
    }
    best.map(|(i, _)| i)
}
