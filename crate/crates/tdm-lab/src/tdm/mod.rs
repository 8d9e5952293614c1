//! The horizon-conditioned critic `Q(s, a, g, tau) = -||f(s, a, g, tau) - g||_1`,
//! its DDPG-style actor, Bellman targets over relabeled batches, and the
//! training loop. The norm head makes non-positivity architectural: the
//! network cannot output an optimistic positive value no matter what it
//! learns.

mod train;

pub use train::{train, EpisodeMetrics, TrainConfig, REACH_THRESHOLD};

use crate::envs::{goal_map, EnvSpec};
use crate::nn::{adam_step, mlp_forward, AdamState, Activation, MlpGrads, MlpParams};
use crate::replay::RelabeledBatch;
use crate::{Error, Result};

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupervisionMode {
    /// Regress the scalar q onto the scalar Bellman target.
    Scalar,
    /// Regress each per-dimension distance onto its own target.
    Vectorized,
}

/// Prediction network f plus the derived value. The horizon enters the
/// network as a raw integer scalar appended to the input; distances are
/// always L1 and always in goal space.
#[derive(Debug, Clone)]
pub struct TdmCritic {
    pub f: MlpParams,
    pub state_dim: usize,
    pub action_dim: usize,
    pub goal_dim: usize,
}

impl TdmCritic {
    pub fn new<R: Rng + ?Sized>(spec: &EnvSpec, hidden: &[usize], rng: &mut R) -> Self {
        let mut dims = vec![spec.state_dim + spec.action_dim + spec.goal_dim + 1];
        dims.extend_from_slice(hidden);
        dims.push(spec.goal_dim);
        let mut f = MlpParams::new(&dims, Activation::Linear, rng);
        f.scale_final_layer(0.1);
        TdmCritic {
            f,
            state_dim: spec.state_dim,
            action_dim: spec.action_dim,
            goal_dim: spec.goal_dim,
        }
    }

    pub fn input(&self, s: &[f64], a: &[f64], g: &[f64], tau: u32) -> Result<Vec<f64>> {
        if s.len() != self.state_dim {
            return Err(Error::Shape {
                what: "critic state input",
                expected: self.state_dim,
                got: s.len(),
            });
        }
        if a.len() != self.action_dim {
            return Err(Error::Shape {
                what: "critic action input",
                expected: self.action_dim,
                got: a.len(),
            });
        }
        if g.len() != self.goal_dim {
            return Err(Error::Shape {
                what: "critic goal input",
                expected: self.goal_dim,
                got: g.len(),
            });
        }
        let mut x = Vec::with_capacity(s.len() + a.len() + g.len() + 1);
        x.extend_from_slice(s);
        x.extend_from_slice(a);
        x.extend_from_slice(g);
        x.push(f64::from(tau));
        Ok(x)
    }

    /// The raw f output: the state (in goal space) the critic expects to
    /// reach when pursuing `g` for `tau` extra steps.
    pub fn predict(&self, s: &[f64], a: &[f64], g: &[f64], tau: u32) -> Result<Vec<f64>> {
        mlp_forward(&self.f, &self.input(s, a, g, tau)?)
    }
}

/// Scalar value and per-dimension distances. The horizon is unsigned by
/// construction, so negative values are unrepresentable rather than checked.
pub fn tdm_value(
    critic: &TdmCritic,
    s: &[f64],
    a: &[f64],
    g: &[f64],
    tau: u32,
) -> Result<(f64, Vec<f64>)> {
    let f = critic.predict(s, a, g, tau)?;
    let per_dim: Vec<f64> = f.iter().zip(g).map(|(fj, gj)| (fj - gj).abs()).collect();
    let q = -per_dim.iter().sum::<f64>();
    Ok((q, per_dim))
}

/// Deterministic policy with tanh outputs scaled to the action bounds.
#[derive(Debug, Clone)]
pub struct TdmActor {
    pub net: MlpParams,
    pub state_dim: usize,
    pub goal_dim: usize,
    center: Vec<f64>,
    half_range: Vec<f64>,
}

impl TdmActor {
    pub fn new<R: Rng + ?Sized>(spec: &EnvSpec, hidden: &[usize], rng: &mut R) -> Self {
        let mut dims = vec![spec.state_dim + spec.goal_dim + 1];
        dims.extend_from_slice(hidden);
        dims.push(spec.action_dim);
        let mut net = MlpParams::new(&dims, Activation::Tanh, rng);
        net.scale_final_layer(0.1);
        Self::from_net(net, spec)
    }

    pub fn from_net(net: MlpParams, spec: &EnvSpec) -> Self {
        let center = spec
            .action_low
            .iter()
            .zip(&spec.action_high)
            .map(|(l, h)| 0.5 * (l + h))
            .collect();
        let half_range = spec
            .action_low
            .iter()
            .zip(&spec.action_high)
            .map(|(l, h)| 0.5 * (h - l))
            .collect();
        TdmActor {
            net,
            state_dim: spec.state_dim,
            goal_dim: spec.goal_dim,
            center,
            half_range,
        }
    }

    pub fn input(&self, s: &[f64], g: &[f64], tau: u32) -> Result<Vec<f64>> {
        if s.len() != self.state_dim {
            return Err(Error::Shape {
                what: "actor state input",
                expected: self.state_dim,
                got: s.len(),
            });
        }
        if g.len() != self.goal_dim {
            return Err(Error::Shape {
                what: "actor goal input",
                expected: self.goal_dim,
                got: g.len(),
            });
        }
        let mut x = Vec::with_capacity(s.len() + g.len() + 1);
        x.extend_from_slice(s);
        x.extend_from_slice(g);
        x.push(f64::from(tau));
        Ok(x)
    }

    fn scale(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.center.iter().zip(&self.half_range))
            .map(|(yi, (c, h))| c + yi * h)
            .collect()
    }

    /// Action within bounds for any input (tanh output times half range).
    pub fn act(&self, s: &[f64], g: &[f64], tau: u32) -> Result<Vec<f64>> {
        let y = mlp_forward(&self.net, &self.input(s, g, tau)?)?;
        Ok(self.scale(&y))
    }
}

/// How the `max_a` in the Bellman target is realized: the trained target
/// actor for continuous action spaces; exact enumeration of the canonical
/// action set for tabular wrappers, where an actor would probe the critic
/// between its trained action points and bootstrap from interpolation
/// artifacts.
#[derive(Debug, Clone, Copy)]
pub enum MaxRealization<'a> {
    TargetActor(&'a TdmActor),
    EnumerateActions(&'a [Vec<f64>]),
}

#[derive(Debug, Clone)]
pub enum Targets {
    Scalar(Vec<f64>),
    Vector(Vec<Vec<f64>>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Scalar(v) => v.len(),
            Targets::Vector(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Bellman targets over a relabeled batch; detached constants for the
/// subsequent regression. At tau = 0 the target is the (scaled) goal-space
/// distance of the actual next state; otherwise it bootstraps from the
/// target critic at horizon tau - 1.
pub fn bellman_targets(
    target_critic: &TdmCritic,
    max_realization: MaxRealization<'_>,
    spec: &EnvSpec,
    batch: &RelabeledBatch,
    mode: SupervisionMode,
    reward_scale: f64,
) -> Result<Targets> {
    let mut scalar = Vec::new();
    let mut vector = Vec::new();
    match mode {
        SupervisionMode::Scalar => scalar.reserve(batch.rows.len()),
        SupervisionMode::Vectorized => vector.reserve(batch.rows.len()),
    }
    for row in &batch.rows {
        let per_dim: Vec<f64> = if row.tau == 0 {
            goal_map(spec, &row.next_state)
                .iter()
                .zip(&row.goal)
                .map(|(sj, gj)| reward_scale * (sj - gj).abs())
                .collect()
        } else {
            let tau_next = row.tau - 1;
            match max_realization {
                MaxRealization::TargetActor(actor) => {
                    let a_star = actor.act(&row.next_state, &row.goal, tau_next)?;
                    tdm_value(target_critic, &row.next_state, &a_star, &row.goal, tau_next)?.1
                }
                MaxRealization::EnumerateActions(actions) => {
                    if actions.is_empty() {
                        return Err(Error::InvalidArg(
                            "enumerated action set is empty".to_string(),
                        ));
                    }
                    let mut best: Option<(f64, Vec<f64>)> = None;
                    for a in actions {
                        let (q, per) =
                            tdm_value(target_critic, &row.next_state, a, &row.goal, tau_next)?;
                        if best.as_ref().map_or(true, |(bq, _)| q > *bq) {
                            best = Some((q, per));
                        }
                    }
                    best.expect("non-empty action set").1
                }
            }
        };
        match mode {
            SupervisionMode::Scalar => scalar.push(-per_dim.iter().sum::<f64>()),
            SupervisionMode::Vectorized => vector.push(per_dim),
        }
    }
    Ok(match mode {
        SupervisionMode::Scalar => Targets::Scalar(scalar),
        SupervisionMode::Vectorized => Targets::Vector(vector),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct CriticUpdateStats {
    /// Mean squared error before the step.
    pub loss: f64,
    /// Mean scalar q over the batch before the step.
    pub mean_q: f64,
}

/// Batch-mean squared error of the critic against fixed targets, plus its
/// gradients. Exposed separately from [`critic_update`] so the gradient can
/// be certified against finite differences.
pub fn critic_loss_and_grads(
    critic: &TdmCritic,
    batch: &RelabeledBatch,
    targets: &Targets,
    mode: SupervisionMode,
) -> Result<(CriticUpdateStats, MlpGrads)> {
    let m = batch.rows.len();
    if targets.len() != m {
        return Err(Error::Shape {
            what: "targets per batch row",
            expected: m,
            got: targets.len(),
        });
    }
    if m == 0 {
        return Err(Error::InvalidArg("empty batch".to_string()));
    }
    let mut grads = MlpGrads::zeros_like(&critic.f);
    let mut loss = 0.0;
    let mut q_sum = 0.0;
    let inv_m = 1.0 / m as f64;
    for (i, row) in batch.rows.iter().enumerate() {
        let input = critic.input(&row.state, &row.action, &row.goal, row.tau)?;
        let trace = critic.f.forward_trace(&input)?;
        let f_out = trace.last().expect("network has layers");
        let mut upstream = vec![0.0; critic.goal_dim];
        let mut q = 0.0;
        for (j, (fj, gj)) in f_out.iter().zip(&row.goal).enumerate() {
            q -= (fj - gj).abs();
            upstream[j] = sign_or_zero(fj - gj);
        }
        q_sum += q;
        let row_loss = match (targets, mode) {
            (Targets::Scalar(ys), SupervisionMode::Scalar) => {
                let resid = q - ys[i];
                // dq/df_j = -sign(f_j - g_j)
                for u in upstream.iter_mut() {
                    *u *= -2.0 * resid * inv_m;
                }
                resid * resid
            }
            (Targets::Vector(ys), SupervisionMode::Vectorized) => {
                let y = &ys[i];
                if y.len() != critic.goal_dim {
                    return Err(Error::Shape {
                        what: "vector target",
                        expected: critic.goal_dim,
                        got: y.len(),
                    });
                }
                let mut rl = 0.0;
                for (j, u) in upstream.iter_mut().enumerate() {
                    let dj = (f_out[j] - row.goal[j]).abs();
                    let resid = dj - y[j];
                    rl += resid * resid;
                    *u *= 2.0 * resid * inv_m;
                }
                rl
            }
            _ => {
                return Err(Error::InvalidArg(
                    "supervision mode does not match target kind".to_string(),
                ))
            }
        };
        if !row_loss.is_finite() {
            return Err(Error::NumericHealth(format!(
                "non-finite critic loss at batch row {i} (state {:?}, goal {:?}, tau {})",
                row.state, row.goal, row.tau
            )));
        }
        loss += row_loss;
        critic
            .f
            .backward_from_trace(&input, &trace, &upstream, &mut grads)?;
    }
    loss *= inv_m;
    Ok((
        CriticUpdateStats {
            loss,
            mean_q: q_sum * inv_m,
        },
        grads,
    ))
}

/// One Adam step on the batch-mean squared error; returns the pre-step loss.
pub fn critic_update(
    critic: &mut TdmCritic,
    batch: &RelabeledBatch,
    targets: &Targets,
    opt: &mut AdamState,
    learning_rate: f64,
    mode: SupervisionMode,
) -> Result<CriticUpdateStats> {
    let (stats, grads) = critic_loss_and_grads(critic, batch, targets, mode)?;
    adam_step(&mut critic.f, &grads, opt, learning_rate)?;
    Ok(stats)
}

/// Anything that can report q and its gradient with respect to the action
/// input. The TDM critic backpropagates through f; tests can supply
/// analytic surrogates.
pub trait ActionValue {
    fn q_and_action_grad(
        &self,
        s: &[f64],
        a: &[f64],
        g: &[f64],
        tau: u32,
    ) -> Result<(f64, Vec<f64>)>;
}

impl ActionValue for TdmCritic {
    fn q_and_action_grad(
        &self,
        s: &[f64],
        a: &[f64],
        g: &[f64],
        tau: u32,
    ) -> Result<(f64, Vec<f64>)> {
        let input = self.input(s, a, g, tau)?;
        let trace = self.f.forward_trace(&input)?;
        let f_out = trace.last().expect("network has layers");
        let mut q = 0.0;
        let mut upstream = vec![0.0; self.goal_dim];
        for (j, (fj, gj)) in f_out.iter().zip(g).enumerate() {
            q -= (fj - gj).abs();
            upstream[j] = -sign_or_zero(fj - gj);
        }
        let mut scratch = MlpGrads::zeros_like(&self.f);
        let input_grad = self
            .f
            .backward_from_trace(&input, &trace, &upstream, &mut scratch)?;
        let a_grad = input_grad[self.state_dim..self.state_dim + self.action_dim].to_vec();
        Ok((q, a_grad))
    }
}

/// Mean q at the actor's own actions, and the gradient of `-mean q` with
/// respect to the actor parameters (gradients flow through the critic's
/// action input only).
pub fn actor_objective_and_grads<C: ActionValue>(
    actor: &TdmActor,
    critic: &C,
    batch: &RelabeledBatch,
) -> Result<(f64, MlpGrads)> {
    let m = batch.rows.len();
    if m == 0 {
        return Err(Error::InvalidArg("empty batch".to_string()));
    }
    let inv_m = 1.0 / m as f64;
    let mut grads = MlpGrads::zeros_like(&actor.net);
    let mut q_sum = 0.0;
    for row in &batch.rows {
        let input = actor.input(&row.state, &row.goal, row.tau)?;
        let trace = actor.net.forward_trace(&input)?;
        let y = trace.last().expect("network has layers");
        let action = actor.scale(y);
        let (q, dq_da) = critic.q_and_action_grad(&row.state, &action, &row.goal, row.tau)?;
        if !dq_da.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericHealth(format!(
                "non-finite actor gradient (state {:?}, goal {:?}, tau {})",
                row.state, row.goal, row.tau
            )));
        }
        q_sum += q;
        // Minimize -q: upstream on the pre-scale output is -dq/da * half.
        let upstream: Vec<f64> = dq_da
            .iter()
            .zip(&actor.half_range)
            .map(|(d, h)| -d * h * inv_m)
            .collect();
        actor
            .net
            .backward_from_trace(&input, &trace, &upstream, &mut grads)?;
    }
    Ok((q_sum * inv_m, grads))
}

/// One Adam ascent step on the batch-mean q at the actor's own actions.
pub fn actor_update<C: ActionValue>(
    actor: &mut TdmActor,
    critic: &C,
    batch: &RelabeledBatch,
    opt: &mut AdamState,
    learning_rate: f64,
) -> Result<()> {
    let (_, grads) = actor_objective_and_grads(actor, critic, batch)?;
    adam_step(&mut actor.net, &grads, opt, learning_rate)
}

/// Subgradient of |x| that is 0 at the kink.
#[inline]
fn sign_or_zero(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests;
