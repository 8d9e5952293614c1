//! Plain-text experiment configs: flat `key = value` lines, `#` comments,
//! no nesting. Every field has a default; unknown keys are rejected so
//! typos cannot silently fall back.

use std::path::{Path, PathBuf};

use crate::envs::EnvSpec;
use crate::replay::RelabelStrategy;
use crate::tdm::SupervisionMode;
use crate::util::fnv1a_hex;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algo {
    Tdm,
    Ddpg,
    Mbmpc,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Tdm => "tdm",
            Algo::Ddpg => "ddpg",
            Algo::Mbmpc => "mbmpc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tdm" => Ok(Algo::Tdm),
            "ddpg" => Ok(Algo::Ddpg),
            "mbmpc" => Ok(Algo::Mbmpc),
            other => Err(Error::Config(format!("unknown algo `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Direct,
    Mpc,
    SkipK,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Direct => "direct",
            PolicyKind::Mpc => "mpc",
            PolicyKind::SkipK => "skipK",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(PolicyKind::Direct),
            "mpc" => Ok(PolicyKind::Mpc),
            "skipK" | "skipk" => Ok(PolicyKind::SkipK),
            other => Err(Error::Config(format!("unknown policy `{other}`"))),
        }
    }
}

/// Full run description. `tau_max = 0` in the file means "auto" (horizon - 1);
/// the resolved value lives in [`ExperimentConfig::tau_max`].
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub env: String,
    pub algo: Algo,
    pub seeds: Vec<u64>,
    /// Training env-step budget per seed.
    pub budget: u64,
    /// Env steps between frozen evaluations.
    pub eval_cadence: u64,
    pub eval_episodes: usize,
    pub out_dir: PathBuf,
    pub batch_size: usize,
    pub updates_per_step: usize,
    pub polyak: f64,
    pub noise_scale: f64,
    /// 0 = auto (horizon - 1).
    pub tau_max: u32,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub dynamics_lr: f64,
    pub supervision: SupervisionMode,
    pub relabel: RelabelStrategy,
    pub capacity: usize,
    pub warmup_steps: usize,
    pub min_buffer: usize,
    pub hidden: Vec<usize>,
    pub reward_scale: f64,
    pub gamma: f64,
    pub shooting_horizon: usize,
    pub shooting_sequences: usize,
    pub warmup_rollouts: usize,
    pub policy: PolicyKind,
    pub candidates: usize,
    pub skip_k: u32,
    pub dump_buffer: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env: "pointmass".to_string(),
            algo: Algo::Tdm,
            seeds: vec![0, 1, 2],
            budget: 50_000,
            eval_cadence: 1_000,
            eval_episodes: 10,
            out_dir: PathBuf::from("runs/out"),
            batch_size: 128,
            updates_per_step: 5,
            polyak: 0.999,
            noise_scale: 0.1,
            tau_max: 0,
            critic_lr: 1e-3,
            actor_lr: 1e-4,
            dynamics_lr: 1e-3,
            supervision: SupervisionMode::Vectorized,
            relabel: RelabelStrategy::future(),
            capacity: 100_000,
            warmup_steps: 500,
            min_buffer: 128,
            hidden: vec![64, 64],
            reward_scale: 1.0,
            gamma: 0.99,
            shooting_horizon: 15,
            shooting_sequences: 512,
            warmup_rollouts: 20,
            policy: PolicyKind::Direct,
            candidates: 1024,
            skip_k: 1,
            dump_buffer: false,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("bad value `{value}` for key `{key}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| parse_num::<T>(key, t))
        .collect()
}

impl ExperimentConfig {
    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "env" => self.env = value.to_string(),
            "algo" => self.algo = Algo::parse(value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "budget" => self.budget = parse_num(key, value)?,
            "eval_cadence" => self.eval_cadence = parse_num(key, value)?,
            "eval_episodes" => self.eval_episodes = parse_num(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "updates_per_step" => self.updates_per_step = parse_num(key, value)?,
            "polyak" => self.polyak = parse_num(key, value)?,
            "noise_scale" => self.noise_scale = parse_num(key, value)?,
            "tau_max" => {
                self.tau_max = if value == "auto" {
                    0
                } else {
                    parse_num(key, value)?
                }
            }
            "critic_lr" => self.critic_lr = parse_num(key, value)?,
            "actor_lr" => self.actor_lr = parse_num(key, value)?,
            "dynamics_lr" => self.dynamics_lr = parse_num(key, value)?,
            "supervision" | "supervision_mode" => {
                self.supervision = match value {
                    "scalar" => SupervisionMode::Scalar,
                    "vectorized" => SupervisionMode::Vectorized,
                    other => {
                        return Err(Error::Config(format!("unknown supervision `{other}`")))
                    }
                }
            }
            "relabel" => {
                self.relabel = match value {
                    "future" => RelabelStrategy::future(),
                    "buffer" => RelabelStrategy::UniformFromBuffer,
                    "goalbox" => RelabelStrategy::UniformFromGoalBox,
                    other => return Err(Error::Config(format!("unknown relabel `{other}`"))),
                }
            }
            "future_window" => {
                let w: u32 = parse_num(key, value)?;
                if let RelabelStrategy::FutureOnTrajectory { window } = &mut self.relabel {
                    *window = if w == 0 { None } else { Some(w) };
                } else if w != 0 {
                    return Err(Error::Config(
                        "future_window requires relabel = future".to_string(),
                    ));
                }
            }
            "capacity" => self.capacity = parse_num(key, value)?,
            "warmup_steps" => self.warmup_steps = parse_num(key, value)?,
            "min_buffer" => self.min_buffer = parse_num(key, value)?,
            "hidden" => self.hidden = parse_list(key, value)?,
            "reward_scale" => self.reward_scale = parse_num(key, value)?,
            "gamma" => self.gamma = parse_num(key, value)?,
            "shooting_horizon" => self.shooting_horizon = parse_num(key, value)?,
            "shooting_sequences" => self.shooting_sequences = parse_num(key, value)?,
            "warmup_rollouts" => self.warmup_rollouts = parse_num(key, value)?,
            "policy" => self.policy = PolicyKind::parse(value)?,
            "candidates" => self.candidates = parse_num(key, value)?,
            "skip_k" => self.skip_k = parse_num(key, value)?,
            "dump_buffer" => {
                self.dump_buffer = match value {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    other => {
                        return Err(Error::Config(format!("bad bool `{other}` for dump_buffer")))
                    }
                }
            }
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list must be nonempty".to_string()));
        }
        if self.eval_cadence == 0 {
            return Err(Error::Config("eval_cadence must be positive".to_string()));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be positive".to_string()));
        }
        if self.batch_size == 0 || self.updates_per_step == 0 {
            return Err(Error::Config(
                "batch_size and updates_per_step must be >= 1".to_string(),
            ));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config("gamma must lie in [0, 1)".to_string()));
        }
        if self.hidden.is_empty() {
            return Err(Error::Config("hidden layer list must be nonempty".to_string()));
        }
        EnvSpec::by_name(&self.env)?;
        Ok(())
    }

    pub fn env_spec(&self) -> Result<EnvSpec> {
        EnvSpec::by_name(&self.env)
    }

    /// tau_max resolved against the environment horizon.
    pub fn resolved_tau_max(&self, spec: &EnvSpec) -> u32 {
        if self.tau_max == 0 {
            spec.horizon.saturating_sub(1) as u32
        } else {
            self.tau_max
        }
    }

    pub fn episodes(&self, spec: &EnvSpec) -> usize {
        (self.budget as usize).div_ceil(spec.horizon)
    }

    /// Canonical text form: every resolved field in a fixed order. Written
    /// next to run outputs and hashed into manifests.
    pub fn canonical_string(&self) -> String {
        let window = match self.relabel {
            RelabelStrategy::FutureOnTrajectory { window } => window.unwrap_or(0),
            _ => 0,
        };
        let seeds = self
            .seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let hidden = self
            .hidden
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "actor_lr = {}\nalgo = {}\nbatch_size = {}\nbudget = {}\ncandidates = {}\n\
             capacity = {}\ncritic_lr = {}\ndump_buffer = {}\ndynamics_lr = {}\n\
             env = {}\neval_cadence = {}\neval_episodes = {}\nfuture_window = {}\n\
             gamma = {}\nhidden = {}\nmin_buffer = {}\nnoise_scale = {}\npolicy = {}\n\
             polyak = {}\nrelabel = {}\nreward_scale = {}\nseeds = {}\nshooting_horizon = {}\n\
             shooting_sequences = {}\nskip_k = {}\nsupervision = {}\ntau_max = {}\n\
             updates_per_step = {}\nwarmup_rollouts = {}\nwarmup_steps = {}\n",
            self.actor_lr,
            self.algo.name(),
            self.batch_size,
            self.budget,
            self.candidates,
            self.capacity,
            self.critic_lr,
            self.dump_buffer,
            self.dynamics_lr,
            self.env,
            self.eval_cadence,
            self.eval_episodes,
            window,
            self.gamma,
            hidden,
            self.min_buffer,
            self.noise_scale,
            self.policy.name(),
            self.polyak,
            match self.relabel {
                RelabelStrategy::FutureOnTrajectory { .. } => "future",
                RelabelStrategy::UniformFromBuffer => "buffer",
                RelabelStrategy::UniformFromGoalBox => "goalbox",
            },
            self.reward_scale,
            seeds,
            self.shooting_horizon,
            self.shooting_sequences,
            self.skip_k,
            match self.supervision {
                SupervisionMode::Scalar => "scalar",
                SupervisionMode::Vectorized => "vectorized",
            },
            self.tau_max,
            self.updates_per_step,
            self.warmup_rollouts,
            self.warmup_steps,
        )
    }

    pub fn config_hash(&self) -> String {
        fnv1a_hex(self.canonical_string().as_bytes())
    }
}
