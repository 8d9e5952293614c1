//! The training loop: act with exploration noise, store, then per step run
//! I relabeled update iterations (sample, targets, critic step, actor step,
//! polyak both target copies).

use std::path::PathBuf;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::envs::{effective_action, env_reset, env_step, goal_map, EnvKind, EnvSpec};
use crate::nn::{polyak_blend, AdamState};
use crate::replay::{RelabelStrategy, ReplayBuffer, Transition};
use crate::util::{derive_seed_indexed, l2_distance, rng_from};
use crate::{Error, Result};

use super::{
    actor_update, bellman_targets, critic_update, MaxRealization, SupervisionMode, TdmActor,
    TdmCritic,
};

/// Distance below which a goal counts as reached in the logs. Episodes
/// still always run to the horizon.
pub const REACH_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Episode count N.
    pub episodes: usize,
    /// Minibatch size M.
    pub batch_size: usize,
    /// Update iterations I per environment step.
    pub updates_per_step: usize,
    /// Polyak coefficient for both target copies.
    pub polyak: f64,
    /// Exploration noise, as a fraction of each action dimension's range.
    pub noise_scale: f64,
    pub tau_max: u32,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub supervision: SupervisionMode,
    pub relabel: RelabelStrategy,
    pub capacity: usize,
    /// Initial steps with uniform random actions, before the actor drives
    /// exploration.
    pub warmup_steps: usize,
    /// Updates start once the buffer holds this many transitions.
    pub min_buffer: usize,
    pub hidden: Vec<usize>,
    pub reward_scale: f64,
    /// When set, the replay buffer is dumped as CSV after a successful run.
    pub dump_buffer_to: Option<PathBuf>,
}

impl TrainConfig {
    /// Spec defaults; tau_max follows the environment horizon (T - 1).
    pub fn for_env(spec: &EnvSpec) -> Self {
        TrainConfig {
            episodes: 200,
            batch_size: 128,
            updates_per_step: 5,
            polyak: 0.999,
            noise_scale: 0.1,
            tau_max: spec.horizon.saturating_sub(1) as u32,
            critic_lr: 1e-3,
            actor_lr: 1e-4,
            supervision: SupervisionMode::Vectorized,
            relabel: RelabelStrategy::future(),
            capacity: 100_000,
            warmup_steps: 500,
            min_buffer: 128,
            hidden: vec![64, 64],
            reward_scale: 1.0,
            dump_buffer_to: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.updates_per_step == 0 {
            return Err(Error::Config(
                "batch size and updates-per-step must be >= 1".to_string(),
            ));
        }
        if self.noise_scale < 0.0 {
            return Err(Error::Config("noise scale must be >= 0".to_string()));
        }
        if !(0.0..=1.0).contains(&self.polyak) {
            return Err(Error::Config("polyak must lie in [0, 1]".to_string()));
        }
        Ok(())
    }
}

/// One row of the per-episode metrics log.
#[derive(Debug, Clone)]
pub struct EpisodeMetrics {
    pub episode: u64,
    /// Environment transitions taken so far (training only; evaluation
    /// rollouts are never counted here).
    pub env_steps: u64,
    /// Goal distance at the episode's final state (L2 in goal space).
    pub final_distance: f64,
    /// Whether the distance dropped below [`REACH_THRESHOLD`] at any step.
    pub reached: bool,
    pub mean_critic_loss: f64,
    pub mean_q: f64,
}

impl EpisodeMetrics {
    pub const CSV_HEADER: &'static str =
        "episode,env_steps,final_distance,reached,mean_critic_loss,mean_q";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.episode,
            self.env_steps,
            self.final_distance,
            u8::from(self.reached),
            self.mean_critic_loss,
            self.mean_q
        )
    }
}

/// Runs N episodes of Algorithm-style training and returns the critic, the
/// actor, and the per-episode log. `step_hook` fires after every environment
/// step (the harness uses it to schedule frozen evaluations); `episode_hook`
/// fires after every episode so partial logs survive mid-run failures.
pub fn train(
    spec: &EnvSpec,
    cfg: &TrainConfig,
    seed: u64,
    mut step_hook: impl FnMut(u64, &TdmCritic, &TdmActor) -> Result<()>,
    mut episode_hook: impl FnMut(&EpisodeMetrics) -> Result<()>,
) -> Result<(TdmCritic, TdmActor, Vec<EpisodeMetrics>)> {
    cfg.validate()?;
    let mut init_rng = rng_from(seed, "tdm-init");
    let mut explore_rng = rng_from(seed, "tdm-explore");
    let mut relabel_rng = rng_from(seed, "tdm-relabel");

    let mut critic = TdmCritic::new(spec, &cfg.hidden, &mut init_rng);
    let mut actor = TdmActor::new(spec, &cfg.hidden, &mut init_rng);
    // Target copies kept as full critic/actor values so targets can be
    // evaluated without re-wrapping parameters each update.
    let mut critic_target = critic.clone();
    let mut actor_target = actor.clone();
    let mut critic_opt = AdamState::new(&critic.f);
    let mut actor_opt = AdamState::new(&actor.net);
    let mut buffer = ReplayBuffer::new(cfg.capacity);

    // Tabular wrappers: behavior is uniform over the canonical actions
    // (learning is fully off-policy) and the Bellman max enumerates them,
    // so the certification never bootstraps from between-action
    // interpolation. Continuous tasks use the target actor throughout.
    let canonical: Option<Vec<Vec<f64>>> = match &spec.kind {
        EnvKind::Tabular(mdp) => Some(mdp.canonical_action_set()),
        _ => None,
    };

    let noise_sigma: Vec<f64> = spec
        .action_range()
        .iter()
        .map(|r| cfg.noise_scale * r)
        .collect();

    let wrap_ctx = |e: Error, episode: usize, t: usize| -> Error {
        match e {
            Error::NumericHealth(msg) => Error::NumericHealth(format!(
                "{msg} (episode {episode}, step {t}, seed {seed})"
            )),
            other => other,
        }
    };

    let mut log: Vec<EpisodeMetrics> = Vec::with_capacity(cfg.episodes);
    let mut env_steps: u64 = 0;
    let horizon = spec.horizon;

    for episode in 0..cfg.episodes {
        let (mut state, goal) = env_reset(spec, derive_seed_indexed(seed, "episode", episode as u64));
        let mut reached = false;
        let mut final_distance = l2_distance(&goal_map(spec, &state), &goal);
        let mut loss_sum = 0.0;
        let mut q_sum = 0.0;
        let mut update_count = 0u64;

        for t in 0..horizon {
            let raw_action: Vec<f64> = if let Some(actions) = &canonical {
                actions[explore_rng.random_range(0..actions.len())].clone()
            } else if env_steps < cfg.warmup_steps as u64 {
                spec.action_low
                    .iter()
                    .zip(&spec.action_high)
                    .map(|(l, h)| explore_rng.random_range(*l..*h))
                    .collect()
            } else {
                let tau_plan = ((horizon - 1 - t) as u32).min(cfg.tau_max);
                let mut a = actor.act(&state, &goal, tau_plan)?;
                for (ai, sigma) in a.iter_mut().zip(&noise_sigma) {
                    if *sigma > 0.0 {
                        let z: f64 = StandardNormal.sample(&mut explore_rng);
                        *ai += sigma * z;
                    }
                }
                a
            };
            let action = effective_action(spec, &raw_action)
                .map_err(|e| wrap_ctx(e, episode, t))?;
            let next_state =
                env_step(spec, &state, &action).map_err(|e| wrap_ctx(e, episode, t))?;
            buffer
                .store(Transition {
                    state: state.clone(),
                    action,
                    next_state: next_state.clone(),
                    traj_id: episode as u64,
                    step: t as u32,
                })
                .map_err(|e| wrap_ctx(e, episode, t))?;

            final_distance = l2_distance(&goal_map(spec, &next_state), &goal);
            if final_distance < REACH_THRESHOLD {
                reached = true;
            }
            state = next_state;
            env_steps += 1;

            if buffer.len() >= cfg.min_buffer && env_steps >= cfg.warmup_steps as u64 {
                for _ in 0..cfg.updates_per_step {
                    let batch = buffer
                        .sample_relabeled(spec, cfg.batch_size, cfg.relabel, cfg.tau_max, &mut relabel_rng)
                        .map_err(|e| wrap_ctx(e, episode, t))?;
                    let max_real = match &canonical {
                        Some(actions) => MaxRealization::EnumerateActions(actions),
                        None => MaxRealization::TargetActor(&actor_target),
                    };
                    let targets = bellman_targets(
                        &critic_target,
                        max_real,
                        spec,
                        &batch,
                        cfg.supervision,
                        cfg.reward_scale,
                    )
                    .map_err(|e| wrap_ctx(e, episode, t))?;
                    let stats = critic_update(
                        &mut critic,
                        &batch,
                        &targets,
                        &mut critic_opt,
                        cfg.critic_lr,
                        cfg.supervision,
                    )
                    .map_err(|e| wrap_ctx(e, episode, t))?;
                    loss_sum += stats.loss;
                    q_sum += stats.mean_q;
                    update_count += 1;
                    if canonical.is_none() {
                        actor_update(&mut actor, &critic, &batch, &mut actor_opt, cfg.actor_lr)
                            .map_err(|e| wrap_ctx(e, episode, t))?;
                    }
                    polyak_blend(&mut critic_target.f, &critic.f, cfg.polyak)?;
                    polyak_blend(&mut actor_target.net, &actor.net, cfg.polyak)?;
                }
            }
            step_hook(env_steps, &critic, &actor)?;
        }

        let metrics = EpisodeMetrics {
            episode: episode as u64,
            env_steps,
            final_distance,
            reached,
            mean_critic_loss: if update_count > 0 {
                loss_sum / update_count as f64
            } else {
                0.0
            },
            mean_q: if update_count > 0 {
                q_sum / update_count as f64
            } else {
                0.0
            },
        };
        episode_hook(&metrics)?;
        log.push(metrics);
    }

    if let Some(path) = &cfg.dump_buffer_to {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        buffer.dump_csv(&mut file)?;
    }
    Ok((critic, actor, log))
}
