//! Plain DDPG with the goal concatenated to the observation, a dense
//! negative-L1-distance reward, and no relabeling: goals are baked into the
//! stored observations at collection time and never rewritten. The replay
//! path has no horizon input at all.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::envs::{effective_action, env_reset, env_step, goal_map, EnvSpec};
use crate::nn::{adam_step, mlp_forward, polyak_blend, AdamState, Activation, MlpGrads, MlpParams};
use crate::replay::{ReplayBuffer, Transition};
use crate::tdm::{EpisodeMetrics, REACH_THRESHOLD};
use crate::util::{derive_seed_indexed, l1_distance, l2_distance, rng_from};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct DdpgConfig {
    pub episodes: usize,
    pub batch_size: usize,
    pub updates_per_step: usize,
    pub polyak: f64,
    pub noise_scale: f64,
    pub gamma: f64,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub capacity: usize,
    pub warmup_steps: usize,
    pub min_buffer: usize,
    pub hidden: Vec<usize>,
    pub reward_scale: f64,
}

impl DdpgConfig {
    pub fn for_env(_spec: &EnvSpec) -> Self {
        DdpgConfig {
            episodes: 200,
            batch_size: 128,
            updates_per_step: 5,
            polyak: 0.999,
            noise_scale: 0.1,
            gamma: 0.99,
            critic_lr: 1e-3,
            actor_lr: 1e-4,
            capacity: 100_000,
            warmup_steps: 500,
            min_buffer: 128,
            hidden: vec![64, 64],
            reward_scale: 1.0,
        }
    }
}

/// Unconstrained scalar critic over concat(observation, action).
#[derive(Debug, Clone)]
pub struct DdpgCritic {
    pub net: MlpParams,
    pub obs_dim: usize,
    pub action_dim: usize,
}

impl DdpgCritic {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![obs_dim + action_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let mut net = MlpParams::new(&dims, Activation::Linear, rng);
        net.scale_final_layer(0.1);
        DdpgCritic {
            net,
            obs_dim,
            action_dim,
        }
    }

    fn input(&self, obs: &[f64], a: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(obs.len() + a.len());
        x.extend_from_slice(obs);
        x.extend_from_slice(a);
        x
    }

    pub fn q(&self, obs: &[f64], a: &[f64]) -> Result<f64> {
        Ok(mlp_forward(&self.net, &self.input(obs, a))?[0])
    }
}

/// Deterministic policy over observations with tanh outputs scaled to
/// bounds.
#[derive(Debug, Clone)]
pub struct BoundedPolicy {
    pub net: MlpParams,
    center: Vec<f64>,
    half_range: Vec<f64>,
}

impl BoundedPolicy {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        low: &[f64],
        high: &[f64],
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(hidden);
        dims.push(low.len());
        let mut net = MlpParams::new(&dims, Activation::Tanh, rng);
        net.scale_final_layer(0.1);
        BoundedPolicy {
            net,
            center: low.iter().zip(high).map(|(l, h)| 0.5 * (l + h)).collect(),
            half_range: low.iter().zip(high).map(|(l, h)| 0.5 * (h - l)).collect(),
        }
    }

    pub fn act(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let y = mlp_forward(&self.net, obs)?;
        Ok(y.iter()
            .zip(self.center.iter().zip(&self.half_range))
            .map(|(yi, (c, h))| c + yi * h)
            .collect())
    }
}

/// Dense reward: negative (scaled) L1 distance between the goal-mapped next
/// state and the episode goal carried inside the observation.
fn dense_reward(spec: &EnvSpec, next_obs: &[f64], reward_scale: f64) -> f64 {
    let (next_state, goal) = next_obs.split_at(spec.state_dim);
    -reward_scale * l1_distance(&goal_map(spec, next_state), goal)
}

/// Bellman targets `y = r + gamma * q'(obs', actor'(obs'))` for the given
/// buffer rows. With gamma = 0 this is exactly the immediate reward.
pub fn ddpg_targets(
    spec: &EnvSpec,
    critic_target: &DdpgCritic,
    actor_target: &BoundedPolicy,
    buffer: &ReplayBuffer,
    rows: &[usize],
    gamma: f64,
    reward_scale: f64,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(rows.len());
    for &i in rows {
        let t = buffer.get(i);
        let r = dense_reward(spec, &t.next_state, reward_scale);
        let boot = if gamma == 0.0 {
            0.0
        } else {
            let a_star = actor_target.act(&t.next_state)?;
            critic_target.q(&t.next_state, &a_star)?
        };
        out.push(r + gamma * boot);
    }
    Ok(out)
}

/// Standard DDPG under the same logging schema as the TDM loop, for curve
/// comparison.
pub fn ddpg_train(
    spec: &EnvSpec,
    cfg: &DdpgConfig,
    seed: u64,
    mut step_hook: impl FnMut(u64, &DdpgCritic, &BoundedPolicy) -> Result<()>,
    mut episode_hook: impl FnMut(&EpisodeMetrics) -> Result<()>,
) -> Result<(DdpgCritic, BoundedPolicy, Vec<EpisodeMetrics>)> {
    let mut init_rng = rng_from(seed, "ddpg-init");
    let mut explore_rng = rng_from(seed, "ddpg-explore");
    let mut sample_rng = rng_from(seed, "ddpg-sample");

    let obs_dim = spec.state_dim + spec.goal_dim;
    let mut critic = DdpgCritic::new(obs_dim, spec.action_dim, &cfg.hidden, &mut init_rng);
    let mut actor = BoundedPolicy::new(
        obs_dim,
        &spec.action_low,
        &spec.action_high,
        &cfg.hidden,
        &mut init_rng,
    );
    let mut critic_target = critic.clone();
    let mut actor_target = actor.clone();
    let mut critic_opt = AdamState::new(&critic.net);
    let mut actor_opt = AdamState::new(&actor.net);
    let mut buffer = ReplayBuffer::new(cfg.capacity);

    let noise_sigma: Vec<f64> = spec
        .action_range()
        .iter()
        .map(|r| cfg.noise_scale * r)
        .collect();

    let mut log = Vec::with_capacity(cfg.episodes);
    let mut env_steps = 0u64;

    for episode in 0..cfg.episodes {
        let (mut state, goal) =
            env_reset(spec, derive_seed_indexed(seed, "episode", episode as u64));
        let mut obs = [state.clone(), goal.clone()].concat();
        let mut reached = false;
        let mut final_distance = l2_distance(&goal_map(spec, &state), &goal);
        let mut loss_sum = 0.0;
        let mut q_sum = 0.0;
        let mut update_count = 0u64;

        for t in 0..spec.horizon {
            let raw: Vec<f64> = if env_steps < cfg.warmup_steps as u64 {
                spec.action_low
                    .iter()
                    .zip(&spec.action_high)
                    .map(|(l, h)| explore_rng.random_range(*l..*h))
                    .collect()
            } else {
                let mut a = actor.act(&obs)?;
                for (ai, sigma) in a.iter_mut().zip(&noise_sigma) {
                    if *sigma > 0.0 {
                        let z: f64 = StandardNormal.sample(&mut explore_rng);
                        *ai += sigma * z;
                    }
                }
                a
            };
            let action = effective_action(spec, &raw)?;
            let next_state = env_step(spec, &state, &action)?;
            let next_obs = [next_state.clone(), goal.clone()].concat();
            buffer.store(Transition {
                state: obs.clone(),
                action: action.clone(),
                next_state: next_obs.clone(),
                traj_id: episode as u64,
                step: t as u32,
            })?;
            final_distance = l2_distance(&goal_map(spec, &next_state), &goal);
            if final_distance < REACH_THRESHOLD {
                reached = true;
            }
            state = next_state;
            obs = next_obs;
            env_steps += 1;

            if buffer.len() >= cfg.min_buffer && env_steps >= cfg.warmup_steps as u64 {
                for _ in 0..cfg.updates_per_step {
                    let rows = buffer.sample_uniform(cfg.batch_size, &mut sample_rng)?;
                    let targets = ddpg_targets(
                        spec,
                        &critic_target,
                        &actor_target,
                        &buffer,
                        &rows,
                        cfg.gamma,
                        cfg.reward_scale,
                    )?;
                    let stats = ddpg_critic_update(
                        &mut critic,
                        &buffer,
                        &rows,
                        &targets,
                        &mut critic_opt,
                        cfg.critic_lr,
                    )?;
                    loss_sum += stats.0;
                    q_sum += stats.1;
                    update_count += 1;
                    ddpg_actor_update(
                        &mut actor,
                        &critic,
                        &buffer,
                        &rows,
                        &mut actor_opt,
                        cfg.actor_lr,
                    )?;
                    polyak_blend(&mut critic_target.net, &critic.net, cfg.polyak)?;
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
    Ok((critic, actor, log))
}

fn ddpg_critic_update(
    critic: &mut DdpgCritic,
    buffer: &ReplayBuffer,
    rows: &[usize],
    targets: &[f64],
    opt: &mut AdamState,
    lr: f64,
) -> Result<(f64, f64)> {
    let inv_m = 1.0 / rows.len() as f64;
    let mut grads = MlpGrads::zeros_like(&critic.net);
    let mut loss = 0.0;
    let mut q_sum = 0.0;
    for (&i, y) in rows.iter().zip(targets) {
        let t = buffer.get(i);
        let input = critic.input(&t.state, &t.action);
        let trace = critic.net.forward_trace(&input)?;
        let q = trace.last().expect("network has layers")[0];
        q_sum += q;
        let resid = q - y;
        loss += resid * resid;
        let upstream = [2.0 * resid * inv_m];
        critic
            .net
            .backward_from_trace(&input, &trace, &upstream, &mut grads)?;
    }
    loss *= inv_m;
    if !loss.is_finite() {
        return Err(Error::NumericHealth("non-finite ddpg critic loss".to_string()));
    }
    adam_step(&mut critic.net, &grads, opt, lr)?;
    Ok((loss, q_sum * inv_m))
}

fn ddpg_actor_update(
    actor: &mut BoundedPolicy,
    critic: &DdpgCritic,
    buffer: &ReplayBuffer,
    rows: &[usize],
    opt: &mut AdamState,
    lr: f64,
) -> Result<()> {
    let inv_m = 1.0 / rows.len() as f64;
    let mut grads = MlpGrads::zeros_like(&actor.net);
    for &i in rows {
        let t = buffer.get(i);
        let trace = actor.net.forward_trace(&t.state)?;
        let y = trace.last().expect("network has layers");
        let action: Vec<f64> = y
            .iter()
            .zip(actor.center.iter().zip(&actor.half_range))
            .map(|(yi, (c, h))| c + yi * h)
            .collect();
        // dq/da via the critic's input gradient.
        let input = critic.input(&t.state, &action);
        let ctrace = critic.net.forward_trace(&input)?;
        let mut scratch = MlpGrads::zeros_like(&critic.net);
        let igrad = critic
            .net
            .backward_from_trace(&input, &ctrace, &[1.0], &mut scratch)?;
        let dq_da = &igrad[critic.obs_dim..critic.obs_dim + critic.action_dim];
        let upstream: Vec<f64> = dq_da
            .iter()
            .zip(&actor.half_range)
            .map(|(d, h)| -d * h * inv_m)
            .collect();
        actor
            .net
            .backward_from_trace(&t.state, &trace, &upstream, &mut grads)?;
    }
    adam_step(&mut actor.net, &grads, opt, lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_buffer(spec: &EnvSpec) -> ReplayBuffer {
        let mut b = ReplayBuffer::new(64);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for step in 0..16u32 {
            let state: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let goal = vec![0.25, -0.5];
            let action = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let next: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            b.store(Transition {
                state: [state.clone(), goal.clone()].concat(),
                action,
                next_state: [next, goal].concat(),
                traj_id: 0,
                step,
            })
            .unwrap();
        }
        b
    }

    #[test]
    fn gamma_zero_reduces_targets_to_immediate_reward() {
        let spec = EnvSpec::point_mass();
        let buffer = tiny_buffer(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let critic = DdpgCritic::new(6, 2, &[8], &mut rng);
        let actor = BoundedPolicy::new(6, &spec.action_low, &spec.action_high, &[8], &mut rng);
        let rows: Vec<usize> = (0..buffer.len()).collect();
        let targets =
            ddpg_targets(&spec, &critic, &actor, &buffer, &rows, 0.0, 1.0).unwrap();
        for (&i, y) in rows.iter().zip(&targets) {
            let t = buffer.get(i);
            let (next_state, goal) = t.next_state.split_at(4);
            let want = -l1_distance(&goal_map(&spec, next_state), goal);
            assert_eq!(*y, want);
        }
    }

    #[test]
    fn stored_goals_are_never_rewritten() {
        // The goal rides inside the observation; sampling and training have
        // no code path that touches stored rows.
        let spec = EnvSpec::point_mass();
        let buffer = tiny_buffer(&spec);
        let goals_before: Vec<Vec<f64>> = buffer
            .iter()
            .map(|t| t.state[4..].to_vec())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let _ = buffer.sample_uniform(32, &mut rng).unwrap();
        let goals_after: Vec<Vec<f64>> = buffer
            .iter()
            .map(|t| t.state[4..].to_vec())
            .collect();
        assert_eq!(goals_before, goals_after);
        assert!(goals_before.iter().all(|g| g == &vec![0.25, -0.5]));
    }

    #[test]
    fn ddpg_learning_curve_is_bit_identical_per_seed() {
        let spec = EnvSpec::point_mass();
        let mut cfg = DdpgConfig::for_env(&spec);
        cfg.episodes = 2;
        cfg.batch_size = 8;
        cfg.updates_per_step = 1;
        cfg.warmup_steps = 10;
        cfg.min_buffer = 8;
        cfg.hidden = vec![8, 8];
        let run = || {
            let (critic, _, log) =
                ddpg_train(&spec, &cfg, 3, |_, _, _| Ok(()), |_| Ok(())).unwrap();
            (
                critic.net.flatten(),
                log.iter().map(|m| m.final_distance).collect::<Vec<_>>(),
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn critic_gradient_direction_reduces_loss() {
        let spec = EnvSpec::point_mass();
        let buffer = tiny_buffer(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut critic = DdpgCritic::new(6, 2, &[12], &mut rng);
        let rows: Vec<usize> = (0..buffer.len()).collect();
        let targets: Vec<f64> = rows.iter().map(|_| -1.0).collect();
        let mut opt = AdamState::new(&critic.net);
        let (first, _) =
            ddpg_critic_update(&mut critic, &buffer, &rows, &targets, &mut opt, 1e-2).unwrap();
        let mut last = first;
        for _ in 0..200 {
            let (l, _) =
                ddpg_critic_update(&mut critic, &buffer, &rows, &targets, &mut opt, 1e-2).unwrap();
            last = l;
        }
        assert!(last < first * 0.1, "loss did not drop: {first} -> {last}");
    }
}
