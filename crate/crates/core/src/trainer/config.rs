use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nets::{HeadInput, NetConfig};
use crate::rl::SacHyper;
use crate::worldsim::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetPreset {
    Tiny,
    Small,
    Desk,
}

impl NetPreset {
    fn name(self) -> &'static str {
        match self {
            NetPreset::Tiny => "tiny",
            NetPreset::Small => "small",
            NetPreset::Desk => "desk",
        }
    }
}

/// Every hyperparameter of a run. Serialized as flat `key = value` text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: Task,
    pub seeds: Vec<u64>,
    pub net: NetPreset,
    pub image_size: usize,
    pub head_input: HeadInput,
    pub lambda_ft: f64,
    pub lambda_l1: f64,
    pub lr_rl: f64,
    pub lr_pretrain: f64,
    /// Maximum dynamic camera offset, degrees.
    pub phi: f64,
    pub total_steps: u64,
    pub pretrain_steps: u64,
    pub pretrain_batch: usize,
    pub pretrain_max_gap: usize,
    pub pretrain_3d: bool,
    pub finetune_3d: bool,
    pub freeze_encoder: bool,
    pub update_posenet: bool,
    /// Debug switch: when false the actor, critic and temperature never update.
    pub rl_updates: bool,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub recon_batch: usize,
    /// 3D pairs are drawn from this many most recent transitions.
    pub recent_window: usize,
    /// Uniform random actions before the first update.
    pub seed_steps: u64,
    pub gamma: f64,
    pub tau: f64,
    pub alpha_init: f64,
    pub alpha_lr: f64,
    pub augment_shift: i32,
    pub eval_every: u64,
    pub eval_trials: usize,
    /// Stop once an evaluation reaches this success rate; 0 disables.
    pub stop_success: f64,
    pub checkpoint_every: u64,
    pub data_root: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::Reach,
            seeds: vec![0],
            net: NetPreset::Small,
            image_size: 32,
            head_input: HeadInput::Pool,
            lambda_ft: 0.01,
            lambda_l1: 1.0,
            lr_rl: 1e-3,
            lr_pretrain: 1e-3,
            phi: 30.0,
            total_steps: 100_000,
            pretrain_steps: 5_000,
            pretrain_batch: 8,
            pretrain_max_gap: crate::dataio::DEFAULT_MAX_GAP,
            pretrain_3d: true,
            finetune_3d: true,
            freeze_encoder: false,
            update_posenet: true,
            rl_updates: true,
            buffer_capacity: 100_000,
            batch_size: 128,
            recon_batch: 8,
            recent_window: 10_000,
            seed_steps: 1_000,
            gamma: 0.99,
            tau: 0.01,
            alpha_init: 0.1,
            alpha_lr: 1e-4,
            augment_shift: 4,
            eval_every: 5_000,
            eval_trials: 10,
            stop_success: 0.0,
            checkpoint_every: 10_000,
            data_root: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "task",
    "seeds",
    "net",
    "image_size",
    "head_input",
    "lambda_ft",
    "lambda_l1",
    "lr_rl",
    "lr_pretrain",
    "phi",
    "total_steps",
    "pretrain_steps",
    "pretrain_batch",
    "pretrain_max_gap",
    "pretrain_3d",
    "finetune_3d",
    "freeze_encoder",
    "update_posenet",
    "rl_updates",
    "buffer_capacity",
    "batch_size",
    "recon_batch",
    "recent_window",
    "seed_steps",
    "gamma",
    "tau",
    "alpha_init",
    "alpha_lr",
    "augment_shift",
    "eval_every",
    "eval_trials",
    "stop_success",
    "checkpoint_every",
    "data_root",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::config(key, format!("expected a boolean, got {value:?}"))),
    }
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment. Keys absent from
    /// the text keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", n + 1), "expected `key = value`"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies `key=value` overrides in order, then validates.
    pub fn with_overrides<S: AsRef<str>>(mut self, overrides: &[S]) -> Result<Self> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::config(o, "override must look like key=value"))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "task" => self.task = value.parse().map_err(|_| Error::config(key, format!("unknown task {value:?}")))?,
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<Vec<u64>>>()?
            }
            "net" => {
                self.net = match value {
                    "tiny" => NetPreset::Tiny,
                    "small" => NetPreset::Small,
                    "desk" => NetPreset::Desk,
                    _ => return Err(Error::config(key, format!("unknown preset {value:?}"))),
                }
            }
            "image_size" => self.image_size = parse(key, value)?,
            "head_input" => {
                self.head_input = match value {
                    "pool" => HeadInput::Pool,
                    "flatten" => HeadInput::Flatten,
                    _ => return Err(Error::config(key, format!("expected pool or flatten, got {value:?}"))),
                }
            }
            "lambda_ft" => self.lambda_ft = parse(key, value)?,
            "lambda_l1" => self.lambda_l1 = parse(key, value)?,
            "lr_rl" => self.lr_rl = parse(key, value)?,
            "lr_pretrain" => self.lr_pretrain = parse(key, value)?,
            "phi" => self.phi = parse(key, value)?,
            "total_steps" => self.total_steps = parse(key, value)?,
            "pretrain_steps" => self.pretrain_steps = parse(key, value)?,
            "pretrain_batch" => self.pretrain_batch = parse(key, value)?,
            "pretrain_max_gap" => self.pretrain_max_gap = parse(key, value)?,
            "pretrain_3d" => self.pretrain_3d = parse_bool(key, value)?,
            "finetune_3d" => self.finetune_3d = parse_bool(key, value)?,
            "freeze_encoder" => self.freeze_encoder = parse_bool(key, value)?,
            "update_posenet" => self.update_posenet = parse_bool(key, value)?,
            "rl_updates" => self.rl_updates = parse_bool(key, value)?,
            "buffer_capacity" => self.buffer_capacity = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "recon_batch" => self.recon_batch = parse(key, value)?,
            "recent_window" => self.recent_window = parse(key, value)?,
            "seed_steps" => self.seed_steps = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "alpha_init" => self.alpha_init = parse(key, value)?,
            "alpha_lr" => self.alpha_lr = parse(key, value)?,
            "augment_shift" => self.augment_shift = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "eval_trials" => self.eval_trials = parse(key, value)?,
            "stop_success" => self.stop_success = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "data_root" => self.data_root = if value.is_empty() { None } else { Some(PathBuf::from(value)) },
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, reason: &str| if ok { Ok(()) } else { Err(Error::config(key, reason)) };
        check(!self.seeds.is_empty(), "seeds", "at least one seed required")?;
        check(self.lambda_ft >= 0.0 && self.lambda_ft.is_finite(), "lambda_ft", "must be finite and >= 0")?;
        check(self.lambda_l1 >= 0.0 && self.lambda_l1.is_finite(), "lambda_l1", "must be finite and >= 0")?;
        check(self.lr_pretrain > 0.0, "lr_pretrain", "must be positive")?;
        check(self.phi >= 0.0 && self.phi.is_finite(), "phi", "must be finite and >= 0")?;
        check(self.pretrain_batch > 0, "pretrain_batch", "must be positive")?;
        check(self.pretrain_max_gap > 0, "pretrain_max_gap", "must be positive")?;
        check(self.buffer_capacity > 0, "buffer_capacity", "must be positive")?;
        check(self.batch_size > 0, "batch_size", "must be positive")?;
        check(self.recon_batch > 0, "recon_batch", "must be positive")?;
        check(self.recent_window > 0, "recent_window", "must be positive")?;
        check(self.augment_shift >= 0, "augment_shift", "must be >= 0")?;
        check((0.0..=1.0).contains(&self.stop_success), "stop_success", "must lie in [0, 1]")?;
        check(self.eval_trials > 0 || self.eval_every == 0, "eval_trials", "must be positive when evaluating")?;
        self.sac_hyper().validate()?;
        self.net_config().validate()
    }

    /// Learning rate of the 3D objective during joint training.
    pub fn lr_3d(&self) -> f64 {
        self.lambda_ft * self.lr_rl
    }

    pub fn sac_hyper(&self) -> SacHyper {
        SacHyper {
            gamma: self.gamma,
            tau: self.tau,
            alpha_init: self.alpha_init,
            target_entropy: -(self.task.action_dim() as f64),
            lr: self.lr_rl,
            alpha_lr: self.alpha_lr,
        }
    }

    pub fn net_config(&self) -> NetConfig {
        let a = self.task.action_dim();
        let mut cfg = match self.net {
            NetPreset::Tiny => NetConfig::tiny(a),
            NetPreset::Small => NetConfig::small(self.image_size, a),
            NetPreset::Desk => NetConfig::desk(a),
        };
        cfg.image_size = self.image_size;
        cfg.head_input = self.head_input;
        cfg
    }

    /// Canonical text form listing every key.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).expect("listed key"));
        }
        s
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "task" => self.task.name().to_string(),
            "seeds" => self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
            "net" => self.net.name().to_string(),
            "image_size" => self.image_size.to_string(),
            "head_input" => match self.head_input {
                HeadInput::Pool => "pool".into(),
                HeadInput::Flatten => "flatten".into(),
            },
            "lambda_ft" => self.lambda_ft.to_string(),
            "lambda_l1" => self.lambda_l1.to_string(),
            "lr_rl" => self.lr_rl.to_string(),
            "lr_pretrain" => self.lr_pretrain.to_string(),
            "phi" => self.phi.to_string(),
            "total_steps" => self.total_steps.to_string(),
            "pretrain_steps" => self.pretrain_steps.to_string(),
            "pretrain_batch" => self.pretrain_batch.to_string(),
            "pretrain_max_gap" => self.pretrain_max_gap.to_string(),
            "pretrain_3d" => self.pretrain_3d.to_string(),
            "finetune_3d" => self.finetune_3d.to_string(),
            "freeze_encoder" => self.freeze_encoder.to_string(),
            "update_posenet" => self.update_posenet.to_string(),
            "rl_updates" => self.rl_updates.to_string(),
            "buffer_capacity" => self.buffer_capacity.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "recon_batch" => self.recon_batch.to_string(),
            "recent_window" => self.recent_window.to_string(),
            "seed_steps" => self.seed_steps.to_string(),
            "gamma" => self.gamma.to_string(),
            "tau" => self.tau.to_string(),
            "alpha_init" => self.alpha_init.to_string(),
            "alpha_lr" => self.alpha_lr.to_string(),
            "augment_shift" => self.augment_shift.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "eval_trials" => self.eval_trials.to_string(),
            "stop_success" => self.stop_success.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "data_root" => self.data_root.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            _ => return None,
        })
    }

    /// Hex digest of the canonical text.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_text().as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Directory name for one seed of this configuration.
    pub fn run_id(&self, seed: u64) -> String {
        format!("{}-{}-s{seed}", self.task.name(), &self.digest()[..10])
    }
}
