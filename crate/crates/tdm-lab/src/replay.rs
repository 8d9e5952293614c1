//! Transition storage with trajectory structure and goal/horizon relabeling
//! at sample time. Transitions never carry goals or horizons; both are
//! attached when a batch is drawn, which is what multiplies the supervision
//! extracted from each environment step.

use std::collections::HashMap;
use std::collections::VecDeque;
use std::io::Write;

use rand::Rng;

use crate::envs::{goal_map, sample_goal_in_box, EnvSpec};
use crate::util::all_finite;
use crate::{Error, Result};

/// One environment step. Goals and horizons are attached only at sampling
/// time.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub traj_id: u64,
    /// Step index within the trajectory, starting at 0.
    pub step: u32,
}

/// How relabeled goals are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelabelStrategy {
    /// Uniform over states strictly later on the same trajectory (the base
    /// transition's own next state when it is the last stored step).
    /// `window`, when set, caps how far ahead the source may lie.
    FutureOnTrajectory { window: Option<u32> },
    /// goal_map of the next state of a uniformly drawn stored transition.
    UniformFromBuffer,
    /// Uniform in the environment's goal box.
    UniformFromGoalBox,
}

impl RelabelStrategy {
    pub fn future() -> Self {
        RelabelStrategy::FutureOnTrajectory { window: None }
    }
}

#[derive(Debug, Clone)]
pub struct RelabeledRow {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub goal: Vec<f64>,
    pub tau: u32,
    /// Trajectory-relative index of the state the goal was taken from, when
    /// the strategy has one (future/buffer strategies).
    pub goal_source_step: Option<u32>,
    /// Base transition's within-trajectory index, for causality checks.
    pub base_step: u32,
}

#[derive(Debug, Clone)]
pub struct RelabeledBatch {
    pub rows: Vec<RelabeledRow>,
}

/// Ring buffer of transitions; eviction is oldest-first.
#[derive(Debug, Clone, Default)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
    /// Highest stored step index per trajectory; stale entries for fully
    /// evicted trajectories are harmless because nothing references them.
    last_step: HashMap<u64, u32>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        ReplayBuffer {
            items: VecDeque::with_capacity(capacity.min(1 << 20)),
            capacity,
            last_step: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, idx: usize) -> &Transition {
        &self.items[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Appends a transition, evicting the oldest when full.
    pub fn store(&mut self, t: Transition) -> Result<()> {
        if !(all_finite(&t.state) && all_finite(&t.action) && all_finite(&t.next_state)) {
            return Err(Error::NumericHealth(format!(
                "non-finite transition rejected (traj {}, step {})",
                t.traj_id, t.step
            )));
        }
        let entry = self.last_step.entry(t.traj_id).or_insert(t.step);
        if t.step > *entry || self.items.is_empty() {
            *entry = t.step;
        } else {
            *entry = (*entry).max(t.step);
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        Ok(())
    }

    /// Draws `m` relabeled rows: base transitions uniform over the buffer,
    /// horizons uniform on {0..tau_max}, goals per strategy. Read-only.
    pub fn sample_relabeled<R: Rng + ?Sized>(
        &self,
        spec: &EnvSpec,
        m: usize,
        strategy: RelabelStrategy,
        tau_max: u32,
        rng: &mut R,
    ) -> Result<RelabeledBatch> {
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        if m == 0 {
            return Err(Error::InvalidArg("batch size must be >= 1".to_string()));
        }
        let mut rows = Vec::with_capacity(m);
        for _ in 0..m {
            let idx = rng.random_range(0..self.items.len());
            let base = &self.items[idx];
            let tau = if tau_max == 0 {
                0
            } else {
                rng.random_range(0..=tau_max)
            };
            let (goal, goal_source_step) = match strategy {
                RelabelStrategy::FutureOnTrajectory { window } => {
                    // Candidate goals are the next_state fields of same-
                    // trajectory transitions at step >= base.step, i.e. the
                    // trajectory states strictly after the base state. The
                    // last stored step contributes its own next state.
                    let last = *self
                        .last_step
                        .get(&base.traj_id)
                        .expect("stored trajectory has a last-step entry");
                    let hi = match window {
                        Some(w) => last.min(base.step.saturating_add(w)),
                        None => last,
                    };
                    let k = if hi > base.step {
                        rng.random_range(base.step..=hi)
                    } else {
                        base.step
                    };
                    let source = &self.items[idx + (k - base.step) as usize];
                    debug_assert_eq!(source.traj_id, base.traj_id);
                    debug_assert_eq!(source.step, k);
                    (goal_map(spec, &source.next_state), Some(k + 1))
                }
                RelabelStrategy::UniformFromBuffer => {
                    let j = rng.random_range(0..self.items.len());
                    (goal_map(spec, &self.items[j].next_state), None)
                }
                RelabelStrategy::UniformFromGoalBox => (sample_goal_in_box(spec, rng), None),
            };
            rows.push(RelabeledRow {
                state: base.state.clone(),
                action: base.action.clone(),
                next_state: base.next_state.clone(),
                goal,
                tau,
                goal_source_step,
                base_step: base.step,
            });
        }
        Ok(RelabeledBatch { rows })
    }

    /// Uniform sample without relabeling (used by the DDPG baseline, which
    /// stores goals inside its observations and never rewrites them).
    pub fn sample_uniform<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..m).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    /// Debug dump, one row per transition.
    pub fn dump_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "traj_id,step,state,action,next_state")?;
        for t in &self.items {
            let join = |v: &[f64]| {
                v.iter()
                    .map(|x| x.to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            writeln!(
                w,
                "{},{},{},{},{}",
                t.traj_id,
                t.step,
                join(&t.state),
                join(&t.action),
                join(&t.next_state)
            )?;
        }
        Ok(())
    }
}
