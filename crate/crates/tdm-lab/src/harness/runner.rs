//! Seeded multi-run execution: training with frozen evaluations at a fixed
//! env-step cadence, per-seed and aggregate CSVs, checkpoints with
//! manifests, and ablation sweeps. (config, seed) fully determines every
//! output byte; seeds run as isolated workers and the aggregator is a pure
//! function of the per-seed curves.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rayon::prelude::*;

use crate::baselines::{
    ddpg_train, mbmpc_train, shooting_mpc, BoundedPolicy, DdpgConfig, DdpgCritic, DynamicsModel,
    MbmpcConfig, Normalizer,
};
use crate::control::{explicit_mpc, skip_k_plan, PlannerConfig, TaskReward};
use crate::envs::{env_reset, env_step, goal_map, EnvSpec};
use crate::nn::{load_params, save_params};
use crate::replay::RelabelStrategy;
use crate::tdm::{
    train as tdm_train, EpisodeMetrics, SupervisionMode, TdmActor, TdmCritic, TrainConfig,
    REACH_THRESHOLD,
};
use crate::util::{derive_seed_indexed, l2_distance, mean, median, std_dev};
use crate::{Error, Result};

use super::config::{Algo, ExperimentConfig, PolicyKind};

/// One frozen-evaluation measurement.
#[derive(Debug, Clone)]
pub struct EvalPoint {
    pub env_steps: u64,
    /// Cumulative env transitions spent inside evaluations (never counted
    /// into `env_steps`).
    pub eval_steps: u64,
    pub median_final_distance: f64,
    pub mean_final_distance: f64,
    pub reached_fraction: f64,
}

impl EvalPoint {
    pub const CSV_HEADER: &'static str =
        "env_steps,eval_steps,median_final_distance,mean_final_distance,reached_fraction";

    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.env_steps,
            self.eval_steps,
            self.median_final_distance,
            self.mean_final_distance,
            self.reached_fraction
        )
    }
}

#[derive(Debug, Clone)]
pub struct AggregateRow {
    pub env_steps: u64,
    pub median: f64,
    pub mean: f64,
    pub std: f64,
}

/// Trained networks, kept in memory so callers (tests, the acceptance
/// suite) can probe them without reloading checkpoints.
#[derive(Debug, Clone)]
pub enum TrainedNets {
    Tdm { critic: TdmCritic, actor: TdmActor },
    Ddpg { critic: DdpgCritic, actor: BoundedPolicy },
    Mbmpc { model: DynamicsModel },
}

#[derive(Debug, Clone)]
pub struct SeedRunResult {
    pub seed: u64,
    pub eval_curve: Vec<EvalPoint>,
    pub episodes: Vec<EpisodeMetrics>,
    pub nets: TrainedNets,
}

#[derive(Debug)]
pub struct RunSummary {
    pub per_seed: Vec<SeedRunResult>,
    pub aggregate: Vec<AggregateRow>,
    /// Seeds whose training aborted, with the error text; their partial
    /// logs are on disk but they do not enter the aggregate.
    pub failures: Vec<(u64, String)>,
}

impl RunSummary {
    /// First env-step count at which the aggregate median drops below the
    /// threshold.
    pub fn steps_to_threshold(&self, threshold: f64) -> Option<u64> {
        self.aggregate
            .iter()
            .find(|r| r.median < threshold)
            .map(|r| r.env_steps)
    }

    /// Median of the aggregate medians over the last quarter of the curve.
    pub fn converged_median(&self) -> f64 {
        if self.aggregate.is_empty() {
            return f64::NAN;
        }
        let tail = (self.aggregate.len() / 4).max(1);
        let vals: Vec<f64> = self.aggregate[self.aggregate.len() - tail..]
            .iter()
            .map(|r| r.median)
            .collect();
        median(&vals)
    }
}

/// Runs every seed of the experiment, writing per-seed logs, checkpoints,
/// and the aggregate curve under `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let spec = cfg.env_spec()?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("config.txt"), cfg.canonical_string())?;

    let outcomes: Vec<(u64, Result<SeedRunResult>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| (seed, run_seed(cfg, &spec, seed)))
        .collect();

    let mut per_seed = Vec::new();
    let mut failures = Vec::new();
    for (seed, outcome) in outcomes {
        let status_path = cfg.out_dir.join(format!("seed_{seed}")).join("status.txt");
        match outcome {
            Ok(r) => {
                fs::write(status_path, "ok\n")?;
                per_seed.push(r);
            }
            Err(e) => {
                let msg = e.to_string();
                let _ = fs::write(status_path, format!("failed: {msg}\n"));
                failures.push((seed, msg));
            }
        }
    }

    let aggregate = aggregate_curves(&per_seed);
    let mut w = BufWriter::new(fs::File::create(cfg.out_dir.join("aggregate.csv"))?);
    writeln!(
        w,
        "env_steps,median_final_distance,mean_final_distance,std_final_distance"
    )?;
    for row in &aggregate {
        writeln!(w, "{},{},{},{}", row.env_steps, row.median, row.mean, row.std)?;
    }
    w.flush()?;

    Ok(RunSummary {
        per_seed,
        aggregate,
        failures,
    })
}

fn aggregate_curves(per_seed: &[SeedRunResult]) -> Vec<AggregateRow> {
    if per_seed.is_empty() {
        return Vec::new();
    }
    let points = per_seed
        .iter()
        .map(|r| r.eval_curve.len())
        .min()
        .unwrap_or(0);
    (0..points)
        .map(|i| {
            let vals: Vec<f64> = per_seed
                .iter()
                .map(|r| r.eval_curve[i].median_final_distance)
                .collect();
            AggregateRow {
                env_steps: per_seed[0].eval_curve[i].env_steps,
                median: median(&vals),
                mean: mean(&vals),
                std: std_dev(&vals),
            }
        })
        .collect()
}

/// Streams eval points to CSV while collecting them for the aggregate.
struct EvalRecorder {
    writer: BufWriter<fs::File>,
    curve: Vec<EvalPoint>,
    cadence: u64,
    budget: u64,
    next_at: u64,
    eval_steps: u64,
}

impl EvalRecorder {
    fn create(path: &Path, cadence: u64, budget: u64) -> Result<Self> {
        let mut writer = BufWriter::new(fs::File::create(path)?);
        writeln!(writer, "{}", EvalPoint::CSV_HEADER)?;
        writer.flush()?;
        Ok(EvalRecorder {
            writer,
            curve: Vec::new(),
            cadence,
            budget,
            next_at: cadence,
            eval_steps: 0,
        })
    }

    fn due(&self, env_steps: u64) -> bool {
        env_steps >= self.next_at && env_steps <= self.budget
    }

    fn record(
        &mut self,
        env_steps: u64,
        mut evaluate: impl FnMut(u64) -> Result<(Vec<f64>, u64)>,
    ) -> Result<()> {
        while self.due(env_steps) {
            let point_index = self.next_at / self.cadence;
            let (finals, steps_used) = evaluate(point_index)?;
            self.eval_steps += steps_used;
            let reached = finals.iter().filter(|d| **d < REACH_THRESHOLD).count() as f64
                / finals.len() as f64;
            let point = EvalPoint {
                env_steps: self.next_at,
                eval_steps: self.eval_steps,
                median_final_distance: median(&finals),
                mean_final_distance: mean(&finals),
                reached_fraction: reached,
            };
            writeln!(self.writer, "{}", point.csv_row())?;
            self.writer.flush()?;
            self.curve.push(point);
            self.next_at += self.cadence;
        }
        Ok(())
    }
}

struct EpisodeLog {
    writer: BufWriter<fs::File>,
}

impl EpisodeLog {
    fn create(path: &Path) -> Result<Self> {
        let mut writer = BufWriter::new(fs::File::create(path)?);
        writeln!(writer, "{}", EpisodeMetrics::CSV_HEADER)?;
        writer.flush()?;
        Ok(EpisodeLog { writer })
    }

    fn record(&mut self, m: &EpisodeMetrics) -> Result<()> {
        writeln!(self.writer, "{}", m.csv_row())?;
        self.writer.flush()?;
        Ok(())
    }
}

fn run_seed(cfg: &ExperimentConfig, spec: &EnvSpec, seed: u64) -> Result<SeedRunResult> {
    let dir = cfg.out_dir.join(format!("seed_{seed}"));
    fs::create_dir_all(&dir)?;
    let mut eval_rec = EvalRecorder::create(&dir.join("eval.csv"), cfg.eval_cadence, cfg.budget)?;
    let mut train_log = EpisodeLog::create(&dir.join("train.csv"))?;
    let tau_max = cfg.resolved_tau_max(spec);

    let (eval_curve, episodes, nets) = match cfg.algo {
        Algo::Tdm => {
            let mut tc = TrainConfig::for_env(spec);
            tc.episodes = cfg.episodes(spec);
            tc.batch_size = cfg.batch_size;
            tc.updates_per_step = cfg.updates_per_step;
            tc.polyak = cfg.polyak;
            tc.noise_scale = cfg.noise_scale;
            tc.tau_max = tau_max;
            tc.critic_lr = cfg.critic_lr;
            tc.actor_lr = cfg.actor_lr;
            tc.supervision = cfg.supervision;
            tc.relabel = cfg.relabel;
            tc.capacity = cfg.capacity;
            tc.warmup_steps = cfg.warmup_steps;
            tc.min_buffer = cfg.min_buffer;
            tc.hidden = cfg.hidden.clone();
            tc.reward_scale = cfg.reward_scale;
            tc.dump_buffer_to = cfg.dump_buffer.then(|| dir.join("buffer.csv"));
            let (critic, actor, episodes) = tdm_train(
                spec,
                &tc,
                seed,
                |env_steps, critic, actor| {
                    eval_rec.record(env_steps, |point| {
                        eval_tdm(spec, cfg, tau_max, critic, actor, seed, point)
                    })
                },
                |m| train_log.record(m),
            )?;
            let nets = TrainedNets::Tdm { critic, actor };
            (eval_rec.curve, episodes, nets)
        }
        Algo::Ddpg => {
            let dc = DdpgConfig {
                episodes: cfg.episodes(spec),
                batch_size: cfg.batch_size,
                updates_per_step: cfg.updates_per_step,
                polyak: cfg.polyak,
                noise_scale: cfg.noise_scale,
                gamma: cfg.gamma,
                critic_lr: cfg.critic_lr,
                actor_lr: cfg.actor_lr,
                capacity: cfg.capacity,
                warmup_steps: cfg.warmup_steps,
                min_buffer: cfg.min_buffer,
                hidden: cfg.hidden.clone(),
                reward_scale: cfg.reward_scale,
            };
            let (critic, actor, episodes) = ddpg_train(
                spec,
                &dc,
                seed,
                |env_steps, _critic, actor| {
                    eval_rec.record(env_steps, |point| eval_ddpg(spec, cfg, actor, seed, point))
                },
                |m| train_log.record(m),
            )?;
            let nets = TrainedNets::Ddpg { critic, actor };
            (eval_rec.curve, episodes, nets)
        }
        Algo::Mbmpc => {
            let mc = MbmpcConfig {
                episodes: cfg.episodes(spec),
                warmup_rollouts: cfg.warmup_rollouts,
                horizon: cfg.shooting_horizon,
                n_seq: cfg.shooting_sequences,
                batch_size: cfg.batch_size,
                learning_rate: cfg.dynamics_lr,
                capacity: cfg.capacity,
                hidden: cfg.hidden.clone(),
                reward_scale: cfg.reward_scale,
            };
            let (model, episodes) = mbmpc_train(
                spec,
                &mc,
                seed,
                |env_steps, model| {
                    eval_rec.record(env_steps, |point| eval_mbmpc(spec, cfg, model, seed, point))
                },
                |m| train_log.record(m),
            )?;
            let nets = TrainedNets::Mbmpc { model };
            (eval_rec.curve, episodes, nets)
        }
    };

    save_checkpoint(cfg, spec, &dir, &nets, episodes.len(), tau_max)?;
    Ok(SeedRunResult {
        seed,
        eval_curve,
        episodes,
        nets,
    })
}

/// Rolls `episodes` noise-free episodes and returns the final distances plus
/// the env transitions consumed.
fn eval_rollouts(
    spec: &EnvSpec,
    cfg: &ExperimentConfig,
    seed: u64,
    point: u64,
    mut act: impl FnMut(&[f64], &[f64], usize, &mut ChaCha8Rng) -> Result<Vec<f64>>,
) -> Result<(Vec<f64>, u64)> {
    let mut finals = Vec::with_capacity(cfg.eval_episodes);
    let mut steps = 0u64;
    for e in 0..cfg.eval_episodes {
        let ep_tag = point * 100_000 + e as u64;
        let (mut state, goal) = env_reset(spec, derive_seed_indexed(seed, "eval-env", ep_tag));
        let mut plan_rng =
            ChaCha8Rng::seed_from_u64(derive_seed_indexed(seed, "eval-plan", ep_tag));
        for t in 0..spec.horizon {
            let action = act(&state, &goal, t, &mut plan_rng)?;
            state = env_step(spec, &state, &action)?;
            steps += 1;
        }
        finals.push(l2_distance(&goal_map(spec, &state), &goal));
    }
    Ok((finals, steps))
}

fn eval_tdm(
    spec: &EnvSpec,
    cfg: &ExperimentConfig,
    tau_max: u32,
    critic: &TdmCritic,
    actor: &TdmActor,
    seed: u64,
    point: u64,
) -> Result<(Vec<f64>, u64)> {
    let planner = PlannerConfig::new(cfg.candidates, tau_max);
    eval_rollouts(spec, cfg, seed, point, |state, goal, t, rng| {
        let remaining = (spec.horizon - t) as u32;
        match cfg.policy {
            PolicyKind::Direct => {
                let tau = (remaining - 1).min(tau_max);
                actor.act(state, goal, tau)
            }
            PolicyKind::Mpc => {
                let task = TaskReward::GoalReaching(goal.to_vec());
                explicit_mpc(critic, actor, spec, state, &task, remaining, &planner, rng)
            }
            PolicyKind::SkipK => {
                let task = TaskReward::GoalReaching(goal.to_vec());
                let k = cfg.skip_k.clamp(1, remaining);
                skip_k_plan(critic, actor, spec, state, &task, remaining, k, &planner, rng)
            }
        }
    })
}

fn eval_ddpg(
    spec: &EnvSpec,
    cfg: &ExperimentConfig,
    actor: &BoundedPolicy,
    seed: u64,
    point: u64,
) -> Result<(Vec<f64>, u64)> {
    eval_rollouts(spec, cfg, seed, point, |state, goal, _t, _rng| {
        let obs = [state, goal].concat();
        actor.act(&obs)
    })
}

fn eval_mbmpc(
    spec: &EnvSpec,
    cfg: &ExperimentConfig,
    model: &DynamicsModel,
    seed: u64,
    point: u64,
) -> Result<(Vec<f64>, u64)> {
    eval_rollouts(spec, cfg, seed, point, |state, goal, _t, rng| {
        let task = TaskReward::GoalReaching(goal.to_vec());
        shooting_mpc(
            model,
            spec,
            state,
            &task,
            cfg.shooting_horizon,
            cfg.shooting_sequences,
            rng,
        )
    })
}

fn save_checkpoint(
    cfg: &ExperimentConfig,
    spec: &EnvSpec,
    dir: &Path,
    nets: &TrainedNets,
    episodes: usize,
    tau_max: u32,
) -> Result<()> {
    match nets {
        TrainedNets::Tdm { critic, actor } => {
            save_params(&critic.f, &dir.join("critic.net"))?;
            save_params(&actor.net, &dir.join("actor.net"))?;
        }
        TrainedNets::Ddpg { critic, actor } => {
            save_params(&critic.net, &dir.join("critic.net"))?;
            save_params(&actor.net, &dir.join("actor.net"))?;
        }
        TrainedNets::Mbmpc { model } => {
            save_params(&model.net, &dir.join("model.net"))?;
            let mut w = BufWriter::new(fs::File::create(dir.join("norms.txt"))?);
            for (name, n) in [
                ("s", &model.s_norm),
                ("a", &model.a_norm),
                ("ds", &model.ds_norm),
            ] {
                let fmt = |v: &[f64]| {
                    v.iter()
                        .map(|x| x.to_string())
                        .collect::<Vec<_>>()
                        .join(" ")
                };
                writeln!(w, "{}_mean {}", name, fmt(&n.mean))?;
                writeln!(w, "{}_std {}", name, fmt(&n.std))?;
            }
            w.flush()?;
        }
    }
    let manifest = format!(
        "env = {}\nalgo = {}\nconfig_hash = {}\nepisodes = {}\ntau_max = {}\npolicy = {}\n\
         candidates = {}\nskip_k = {}\nshooting_horizon = {}\nshooting_sequences = {}\n",
        spec.name,
        cfg.algo.name(),
        cfg.config_hash(),
        episodes,
        tau_max,
        cfg.policy.name(),
        cfg.candidates,
        cfg.skip_k,
        cfg.shooting_horizon,
        cfg.shooting_sequences,
    );
    fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

/// The sweepable ablation knobs.
pub const SWEEP_KEYS: [&str; 3] = ["supervision_mode", "tau_max", "updates_per_step"];

/// Runs the base experiment once per sweep value with shared seeds and
/// emits a combined long-format CSV `sweep_value,seed,env_steps,final_distance`.
pub fn run_ablation(
    base: &ExperimentConfig,
    sweep_key: &str,
    values: &[String],
) -> Result<Vec<(String, RunSummary)>> {
    if !SWEEP_KEYS.contains(&sweep_key) {
        return Err(Error::Config(format!(
            "sweep key `{sweep_key}` not in {SWEEP_KEYS:?}"
        )));
    }
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".to_string()));
    }
    fs::create_dir_all(&base.out_dir)?;
    let mut results = Vec::with_capacity(values.len());
    for value in values {
        let mut cfg = base.clone();
        cfg.set(sweep_key, value)?;
        cfg.out_dir = base.out_dir.join(format!("{sweep_key}={value}"));
        let summary = run_experiment(&cfg)?;
        results.push((value.clone(), summary));
    }
    let mut w = BufWriter::new(fs::File::create(
        base.out_dir.join(format!("sweep_{sweep_key}.csv")),
    )?);
    writeln!(w, "sweep_value,seed,env_steps,final_distance")?;
    for (value, summary) in &results {
        for seed_run in &summary.per_seed {
            for p in &seed_run.eval_curve {
                writeln!(
                    w,
                    "{},{},{},{}",
                    value, seed_run.seed, p.env_steps, p.median_final_distance
                )?;
            }
        }
    }
    w.flush()?;
    Ok(results)
}

/// Loaded checkpoint manifest.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub env: String,
    pub algo: Algo,
    pub tau_max: u32,
    pub policy: PolicyKind,
    pub candidates: usize,
    pub skip_k: u32,
    pub shooting_horizon: usize,
    pub shooting_sequences: usize,
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(dir.join("manifest.txt"))?;
    let mut env = None;
    let mut algo = None;
    let mut tau_max = None;
    let mut policy = PolicyKind::Direct;
    let mut candidates = 1024usize;
    let mut skip_k = 1u32;
    let mut shooting_horizon = 15usize;
    let mut shooting_sequences = 512usize;
    for line in text.lines() {
        let Some((k, v)) = line.split_once('=') else {
            continue;
        };
        let (k, v) = (k.trim(), v.trim());
        match k {
            "env" => env = Some(v.to_string()),
            "algo" => algo = Some(Algo::parse(v)?),
            "tau_max" => tau_max = v.parse().ok(),
            "policy" => policy = PolicyKind::parse(v)?,
            "candidates" => candidates = v.parse().unwrap_or(candidates),
            "skip_k" => skip_k = v.parse().unwrap_or(skip_k),
            "shooting_horizon" => shooting_horizon = v.parse().unwrap_or(shooting_horizon),
            "shooting_sequences" => {
                shooting_sequences = v.parse().unwrap_or(shooting_sequences)
            }
            _ => {}
        }
    }
    Ok(Manifest {
        env: env.ok_or_else(|| Error::Config("manifest missing env".to_string()))?,
        algo: algo.ok_or_else(|| Error::Config("manifest missing algo".to_string()))?,
        tau_max: tau_max.ok_or_else(|| Error::Config("manifest missing tau_max".to_string()))?,
        policy,
        candidates,
        skip_k,
        shooting_horizon,
        shooting_sequences,
    })
}

pub fn load_checkpoint(dir: &Path) -> Result<(Manifest, EnvSpec, TrainedNets)> {
    let manifest = load_manifest(dir)?;
    let spec = EnvSpec::by_name(&manifest.env)?;
    let nets = match manifest.algo {
        Algo::Tdm => {
            let f = load_params(&dir.join("critic.net"))?;
            let net = load_params(&dir.join("actor.net"))?;
            TrainedNets::Tdm {
                critic: TdmCritic {
                    f,
                    state_dim: spec.state_dim,
                    action_dim: spec.action_dim,
                    goal_dim: spec.goal_dim,
                },
                actor: TdmActor::from_net(net, &spec),
            }
        }
        Algo::Ddpg => {
            let cnet = load_params(&dir.join("critic.net"))?;
            let anet = load_params(&dir.join("actor.net"))?;
            let obs_dim = spec.state_dim + spec.goal_dim;
            let mut actor = BoundedPolicy::new(
                obs_dim,
                &spec.action_low,
                &spec.action_high,
                &[1],
                &mut ChaCha8Rng::seed_from_u64(0),
            );
            actor.net = anet;
            TrainedNets::Ddpg {
                critic: DdpgCritic {
                    net: cnet,
                    obs_dim,
                    action_dim: spec.action_dim,
                },
                actor,
            }
        }
        Algo::Mbmpc => {
            let net = load_params(&dir.join("model.net"))?;
            let mut model = DynamicsModel {
                net,
                s_norm: Normalizer::identity(spec.state_dim),
                a_norm: Normalizer::identity(spec.action_dim),
                ds_norm: Normalizer::identity(spec.state_dim),
                state_dim: spec.state_dim,
                action_dim: spec.action_dim,
            };
            load_norms(&dir.join("norms.txt"), &mut model)?;
            TrainedNets::Mbmpc { model }
        }
    };
    Ok((manifest, spec, nets))
}

fn load_norms(path: &Path, model: &mut DynamicsModel) -> Result<()> {
    let text = fs::read_to_string(path)?;
    let mut parse = |tag: &str| -> Result<Vec<f64>> {
        let line = text
            .lines()
            .find(|l| l.starts_with(tag))
            .ok_or_else(|| Error::Config(format!("norms.txt missing `{tag}`")))?;
        line[tag.len()..]
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad number in norms.txt: `{t}`")))
            })
            .collect()
    };
    model.s_norm = Normalizer {
        mean: parse("s_mean")?,
        std: parse("s_std")?,
    };
    model.a_norm = Normalizer {
        mean: parse("a_mean")?,
        std: parse("a_std")?,
    };
    model.ds_norm = Normalizer {
        mean: parse("ds_mean")?,
        std: parse("ds_std")?,
    };
    Ok(())
}

/// One row of the `eval` subcommand's per-episode CSV.
#[derive(Debug, Clone)]
pub struct EvalEpisodeRow {
    pub episode: usize,
    pub final_distance: f64,
    pub reached: bool,
    /// 1-based step at which the distance first dropped below the reach
    /// threshold; -1 when it never did.
    pub steps_to_reach: i64,
}

/// Replays a checkpoint for `episodes` noise-free episodes under the chosen
/// extraction policy.
pub fn eval_checkpoint(
    dir: &Path,
    policy_override: Option<PolicyKind>,
    k_override: Option<u32>,
    candidates_override: Option<usize>,
    episodes: usize,
    seed: u64,
) -> Result<Vec<EvalEpisodeRow>> {
    let (manifest, spec, nets) = load_checkpoint(dir)?;
    let policy = policy_override.unwrap_or(manifest.policy);
    let skip_k = k_override.unwrap_or(manifest.skip_k);
    let candidates = candidates_override.unwrap_or(manifest.candidates);
    let planner = PlannerConfig::new(candidates, manifest.tau_max);

    let mut rows = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let (mut state, goal) =
            env_reset(&spec, derive_seed_indexed(seed, "cli-eval-env", e as u64));
        let mut plan_rng =
            ChaCha8Rng::seed_from_u64(derive_seed_indexed(seed, "cli-eval-plan", e as u64));
        let mut steps_to_reach = -1i64;
        let mut final_distance = f64::NAN;
        for t in 0..spec.horizon {
            let remaining = (spec.horizon - t) as u32;
            let action = match &nets {
                TrainedNets::Tdm { critic, actor } => match policy {
                    PolicyKind::Direct => {
                        actor.act(&state, &goal, (remaining - 1).min(manifest.tau_max))?
                    }
                    PolicyKind::Mpc => {
                        let task = TaskReward::GoalReaching(goal.clone());
                        explicit_mpc(
                            critic,
                            actor,
                            &spec,
                            &state,
                            &task,
                            remaining,
                            &planner,
                            &mut plan_rng,
                        )?
                    }
                    PolicyKind::SkipK => {
                        let task = TaskReward::GoalReaching(goal.clone());
                        let k = skip_k.clamp(1, remaining);
                        skip_k_plan(
                            critic,
                            actor,
                            &spec,
                            &state,
                            &task,
                            remaining,
                            k,
                            &planner,
                            &mut plan_rng,
                        )?
                    }
                },
                TrainedNets::Ddpg { actor, .. } => {
                    let obs = [state.as_slice(), goal.as_slice()].concat();
                    actor.act(&obs)?
                }
                TrainedNets::Mbmpc { model } => {
                    let task = TaskReward::GoalReaching(goal.clone());
                    shooting_mpc(
                        model,
                        &spec,
                        &state,
                        &task,
                        manifest.shooting_horizon,
                        manifest.shooting_sequences,
                        &mut plan_rng,
                    )?
                }
            };
            state = env_step(&spec, &state, &action)?;
            let d = l2_distance(&goal_map(&spec, &state), &goal);
            if d < REACH_THRESHOLD && steps_to_reach < 0 {
                steps_to_reach = (t + 1) as i64;
            }
            final_distance = d;
        }
        rows.push(EvalEpisodeRow {
            episode: e,
            final_distance,
            reached: steps_to_reach >= 0,
            steps_to_reach,
        });
    }
    Ok(rows)
}

/// Formats the `eval` subcommand rows as CSV.
pub fn eval_rows_to_csv(rows: &[EvalEpisodeRow]) -> String {
    let mut out = String::from("episode,final_distance,reached,steps_to_reach\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.episode,
            r.final_distance,
            u8::from(r.reached),
            r.steps_to_reach
        ));
    }
    out
}
