//! Deterministic environments with explicit goal-space maps: a double
//! integrator point mass, a two-joint planar reacher, and wrappers that
//! expose tabular MDPs (one-hot states, snapped actions) to the same
//! continuous interface.

mod tabular;

pub use tabular::TabularMdp;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::util::all_finite;
use crate::{Error, Result};

pub type StateVector = Vec<f64>;
pub type ActionVector = Vec<f64>;
pub type GoalVector = Vec<f64>;

const DT: f64 = 0.1;
const POINT_MASS_VMAX: f64 = 2.0;

#[derive(Debug, Clone)]
pub enum EnvKind {
    /// Double integrator: state (px, py, vx, vy), action = acceleration.
    PointMass,
    /// Two unit links, joint velocities commanded directly. State
    /// (theta1, theta2, tip_x, tip_y); angles wrap to (-pi, pi].
    Reacher2,
    /// One-hot states over a finite MDP; continuous actions snap to the
    /// nearest canonical action.
    Tabular(TabularMdp),
}

/// Which state features form the goal space.
#[derive(Debug, Clone)]
pub enum GoalMap {
    Identity,
    Select(Vec<usize>),
    /// Fixed affine (here linear) map; `rows[j]` holds the weights producing
    /// goal coordinate `j`. Used by tabular wrappers to turn one-hot states
    /// into embedding coordinates.
    Linear(Vec<Vec<f64>>),
}

#[derive(Debug, Clone)]
pub struct EnvSpec {
    pub name: String,
    pub kind: EnvKind,
    pub state_dim: usize,
    pub action_dim: usize,
    pub goal_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    /// Episode horizon T; episodes always run to T, goal-reach time is only
    /// logged.
    pub horizon: usize,
    pub goal_map: GoalMap,
    pub goal_low: Vec<f64>,
    pub goal_high: Vec<f64>,
}

impl EnvSpec {
    pub fn point_mass() -> Self {
        EnvSpec {
            name: "pointmass".to_string(),
            kind: EnvKind::PointMass,
            state_dim: 4,
            action_dim: 2,
            goal_dim: 2,
            action_low: vec![-1.0, -1.0],
            action_high: vec![1.0, 1.0],
            horizon: 50,
            goal_map: GoalMap::Select(vec![0, 1]),
            goal_low: vec![-1.0, -1.0],
            goal_high: vec![1.0, 1.0],
        }
    }

    pub fn reacher2() -> Self {
        EnvSpec {
            name: "reacher2".to_string(),
            kind: EnvKind::Reacher2,
            state_dim: 4,
            action_dim: 2,
            goal_dim: 2,
            action_low: vec![-PI, -PI],
            action_high: vec![PI, PI],
            horizon: 50,
            goal_map: GoalMap::Select(vec![2, 3]),
            // Radius <= 1.2*sqrt(2) < 2, so every sampled tip goal is reachable.
            goal_low: vec![-1.2, -1.2],
            goal_high: vec![1.2, 1.2],
        }
    }

    /// Wraps a tabular MDP: one-hot states, canonical-snapped actions, goals
    /// living in the coordinate embedding.
    pub fn tabular(name: &str, mdp: TabularMdp, horizon: usize) -> Self {
        let n = mdp.n_states;
        let embed_dim = mdp.embed_dim;
        let mut rows = vec![vec![0.0; n]; embed_dim];
        for s in 0..n {
            for (j, row) in rows.iter_mut().enumerate() {
                row[s] = mdp.embed(s)[j];
            }
        }
        let (mut lo, mut hi) = (vec![f64::INFINITY; embed_dim], vec![f64::NEG_INFINITY; embed_dim]);
        for s in 0..n {
            for j in 0..embed_dim {
                lo[j] = lo[j].min(mdp.embed(s)[j]);
                hi[j] = hi[j].max(mdp.embed(s)[j]);
            }
        }
        let action_dim = mdp.action_rep_dim();
        EnvSpec {
            name: name.to_string(),
            kind: EnvKind::Tabular(mdp),
            state_dim: n,
            action_dim,
            goal_dim: embed_dim,
            action_low: vec![-1.0; action_dim],
            action_high: vec![1.0; action_dim],
            horizon,
            goal_map: GoalMap::Linear(rows),
            goal_low: lo,
            goal_high: hi,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "pointmass" => Ok(Self::point_mass()),
            "reacher2" => Ok(Self::reacher2()),
            "gridchain5" => Ok(Self::tabular("gridchain5", TabularMdp::chain(5), 10)),
            "grid9x9" => Ok(Self::tabular("grid9x9", TabularMdp::grid(9, 9), 40)),
            other => Err(Error::Config(format!("unknown environment `{other}`"))),
        }
    }

    pub fn action_range(&self) -> Vec<f64> {
        self.action_low
            .iter()
            .zip(&self.action_high)
            .map(|(l, h)| h - l)
            .collect()
    }
}

fn wrap_angle(x: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut y = (x + PI).rem_euclid(two_pi);
    if y == 0.0 {
        y = two_pi; // keep the range (-pi, pi]
    }
    y - PI
}

fn reacher_tip(theta1: f64, theta2: f64) -> (f64, f64) {
    (
        theta1.cos() + (theta1 + theta2).cos(),
        theta1.sin() + (theta1 + theta2).sin(),
    )
}

/// Initial state and a goal drawn from the spec's goal-sampling region, as a
/// deterministic function of the seed.
pub fn env_reset(spec: &EnvSpec, seed: u64) -> (StateVector, GoalVector) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match &spec.kind {
        EnvKind::PointMass => {
            let state = vec![0.0; 4];
            let goal = sample_goal_box(spec, &mut rng);
            (state, goal)
        }
        EnvKind::Reacher2 => {
            let (tx, ty) = reacher_tip(0.0, 0.0);
            let state = vec![0.0, 0.0, tx, ty];
            let goal = sample_goal_box(spec, &mut rng);
            (state, goal)
        }
        EnvKind::Tabular(mdp) => {
            // Start and goal are uniform over states; the goal is the chosen
            // state's embedding, so every sampled goal is attainable.
            let s = rng.random_range(0..mdp.n_states);
            let g = rng.random_range(0..mdp.n_states);
            (mdp.one_hot(s), mdp.embed(g).to_vec())
        }
    }
}

fn sample_goal_box<R: Rng + ?Sized>(spec: &EnvSpec, rng: &mut R) -> GoalVector {
    spec.goal_low
        .iter()
        .zip(&spec.goal_high)
        .map(|(l, h)| rng.random_range(*l..*h))
        .collect()
}

pub(crate) fn sample_goal_in_box<R: Rng + ?Sized>(spec: &EnvSpec, rng: &mut R) -> GoalVector {
    sample_goal_box(spec, rng)
}

/// Projects a raw action onto the environment's action set: clipping to
/// bounds for continuous tasks, snapping to the canonical representative of
/// the induced discrete action for tabular wrappers. This is the action the
/// environment actually executes and the one stored in replay.
pub fn effective_action(spec: &EnvSpec, action: &[f64]) -> Result<ActionVector> {
    if action.len() != spec.action_dim {
        return Err(Error::Shape {
            what: "action",
            expected: spec.action_dim,
            got: action.len(),
        });
    }
    if !all_finite(action) {
        return Err(Error::NumericHealth(format!(
            "non-finite action {action:?}"
        )));
    }
    match &spec.kind {
        EnvKind::Tabular(mdp) => Ok(mdp.canonical_action(mdp.snap_action(action))),
        _ => Ok(action
            .iter()
            .zip(spec.action_low.iter().zip(&spec.action_high))
            .map(|(a, (l, h))| a.clamp(*l, *h))
            .collect()),
    }
}

/// The unique next state. Actions are projected via [`effective_action`]
/// first, so callers may pass raw (noisy) actions.
pub fn env_step(spec: &EnvSpec, state: &[f64], action: &[f64]) -> Result<StateVector> {
    if state.len() != spec.state_dim {
        return Err(Error::Shape {
            what: "state",
            expected: spec.state_dim,
            got: state.len(),
        });
    }
    let a = effective_action(spec, action)?;
    match &spec.kind {
        EnvKind::PointMass => {
            // Position integrates the pre-update velocity.
            let mut next = state.to_vec();
            next[0] = state[0] + state[2] * DT;
            next[1] = state[1] + state[3] * DT;
            next[2] = (state[2] + a[0] * DT).clamp(-POINT_MASS_VMAX, POINT_MASS_VMAX);
            next[3] = (state[3] + a[1] * DT).clamp(-POINT_MASS_VMAX, POINT_MASS_VMAX);
            Ok(next)
        }
        EnvKind::Reacher2 => {
            let t1 = wrap_angle(state[0] + a[0] * DT);
            let t2 = wrap_angle(state[1] + a[1] * DT);
            let (tx, ty) = reacher_tip(t1, t2);
            Ok(vec![t1, t2, tx, ty])
        }
        EnvKind::Tabular(mdp) => {
            let s = mdp.state_of_one_hot(state)?;
            let next = mdp.next(s, mdp.snap_action(&a))?;
            Ok(mdp.one_hot(next))
        }
    }
}

/// Projects a state into goal space.
pub fn goal_map(spec: &EnvSpec, state: &[f64]) -> GoalVector {
    debug_assert_eq!(state.len(), spec.state_dim);
    match &spec.goal_map {
        GoalMap::Identity => state.to_vec(),
        GoalMap::Select(idx) => idx.iter().map(|i| state[*i]).collect(),
        GoalMap::Linear(rows) => rows
            .iter()
            .map(|row| row.iter().zip(state).map(|(w, x)| w * x).sum())
            .collect(),
    }
}

/// Table lookup on a tabular MDP; total and deterministic.
pub fn tabular_step(mdp: &TabularMdp, s: usize, a: usize) -> Result<usize> {
    mdp.next(s, a)
}
