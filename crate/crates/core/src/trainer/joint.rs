use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{recon_step, RunConfig, TrainLog};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::eval::{eval_policy, learned_policy};
use crate::image::Image;
use crate::nets::{Adam, AdamConfig, Bound, Checkpoint, Group, NetConfig, ParamSet, RngState};
use crate::rl::{
    act, actor_loss_fwd, alpha_update, critic_loss_fwd, critic_target, standard_normal, target_update, Batch,
    ReplayBuffer, SacHyper, Transition,
};
use crate::tensor::Tensor;
use crate::worldsim::{DualObservation, Env, EnvConfig, EnvSnapshot};

pub const JOINT_CHECKPOINT: &str = "joint.ckpt";
pub const TARGET_CHECKPOINT: &str = "joint_target.ckpt";
pub const BUFFER_CHECKPOINT: &str = "joint_buffer.bin";
pub const LOG_CHECKPOINT: &str = "joint_log.csv";

/// Interleaved environment interaction, SAC updates and 3D updates.
pub struct JointTrainer {
    cfg: RunConfig,
    net: NetConfig,
    hyper: SacHyper,
    seed: u64,
    params: ParamSet,
    target: ParamSet,
    actor_opt: Adam,
    critic_opt: Adam,
    recon_opt: Option<Adam>,
    alpha: f64,
    env: Env,
    obs: DualObservation,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    step: u64,
    episode_return: f64,
    log: TrainLog,
    stopped: bool,
}

impl JointTrainer {
    /// Fresh run. Parameters start from a seeded initialization, then any
    /// entries of `init` (typically pretrained 3D weights) overwrite them.
    pub fn new(cfg: &RunConfig, seed: u64, init: Option<&ParamSet>) -> Result<Self> {
        cfg.validate()?;
        let net = cfg.net_config();
        let hyper = cfg.sac_hyper();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = net.init_params(&mut rng)?;
        if let Some(init) = init {
            params.overwrite_from(init)?;
        }
        let target = params.subset(|g| matches!(g, Group::Encoder | Group::Critic));

        let encoder: &[Group] = if cfg.freeze_encoder { &[] } else { &[Group::Encoder] };
        let critic_groups: Vec<Group> = encoder.iter().copied().chain([Group::Critic]).collect();
        let actor_opt = Adam::new(AdamConfig::with_lr(cfg.lr_rl), &[Group::Actor]);
        let critic_opt = Adam::new(AdamConfig::with_lr(cfg.lr_rl), &critic_groups);
        let recon_opt = cfg.finetune_3d.then(|| {
            let mut groups: Vec<Group> = encoder.iter().copied().chain([Group::Lift, Group::Decoder]).collect();
            if cfg.update_posenet {
                groups.push(Group::PoseNet);
            }
            Adam::new(AdamConfig::with_lr(cfg.lr_3d()), &groups)
        });
        if let Some(opt) = &recon_opt {
            if opt.config.lr != cfg.lambda_ft * cfg.lr_rl {
                return Err(Error::config("lambda_ft", "3D learning rate differs from lambda_ft * lr_rl"));
            }
        }

        let env_cfg = EnvConfig::new(cfg.task, cfg.image_size, cfg.phi);
        let mut env = Env::new(env_cfg)?;
        let obs = env.reset(rng.random());
        Ok(Self {
            cfg: cfg.clone(),
            net,
            hyper,
            seed,
            params,
            target,
            actor_opt,
            critic_opt,
            recon_opt,
            alpha: hyper.alpha_init,
            env,
            obs,
            buffer: ReplayBuffer::new(cfg.buffer_capacity, cfg.image_size)?,
            rng,
            step: 0,
            episode_return: 0.0,
            log: TrainLog::new(),
            stopped: false,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn target_params(&self) -> &ParamSet {
        &self.target
    }

    pub fn net(&self) -> &NetConfig {
        &self.net
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Learning rate of the 3D optimizer, if 3D finetuning is on.
    pub fn lr_3d(&self) -> Option<f64> {
        self.recon_opt.as_ref().map(|o| o.config.lr)
    }

    /// True once an evaluation reached `stop_success`.
    pub fn stopped(&self) -> bool {
        self.stopped
    }

    pub fn env_config(&self) -> EnvConfig {
        *self.env.config()
    }

    /// One environment step followed by the configured updates.
    pub fn step(&mut self) -> Result<()> {
        let step = self.step;
        let action = if step < self.cfg.seed_steps {
            let a = self.cfg.task.action_dim();
            (0..a).map(|_| self.rng.random_range(-1.0f32..=1.0)).collect()
        } else {
            act(
                &self.net,
                &self.params,
                &self.obs.static_view,
                &self.obs.robot_state,
                &mut self.rng,
                false,
            )?
        };
        let out = self.env.step(&action)?;
        self.buffer.add(&Transition {
            obs: self.obs.clone(),
            action,
            reward: out.reward as f32,
            next_obs: out.obs.clone(),
            done: out.success,
        })?;
        self.episode_return += out.reward;
        if out.done {
            self.log.push(step, "episode_return", self.episode_return)?;
            self.log.push(step, "episode_success", if out.success { 1.0 } else { 0.0 })?;
            self.episode_return = 0.0;
            self.obs = self.env.reset(self.rng.random());
        } else {
            self.obs = out.obs;
        }

        if step >= self.cfg.seed_steps {
            if self.cfg.rl_updates {
                self.sac_update(step)?;
            }
            if self.recon_opt.is_some() {
                self.recon_update(step)?;
            }
        }
        self.step += 1;

        if self.cfg.eval_every > 0 && self.step.is_multiple_of(self.cfg.eval_every) {
            let rate = self.evaluate()?;
            self.log.push(self.step, "success_rate", rate)?;
            if self.cfg.stop_success > 0.0 && rate >= self.cfg.stop_success {
                self.stopped = true;
            }
        }
        Ok(())
    }

    /// Deterministic-policy success rate over `eval_trials` episodes.
    pub fn evaluate(&self) -> Result<f64> {
        let env_cfg = *self.env.config();
        let seed = self.seed.wrapping_mul(1_000_003).wrapping_add(self.step);
        Ok(eval_policy(&env_cfg, self.cfg.eval_trials, seed, learned_policy(&self.net, &self.params))?.success_rate)
    }

    fn sac_update(&mut self, step: u64) -> Result<()> {
        let n = self.cfg.batch_size.min(self.buffer.len());
        let idx = self.buffer.sample_indices(n, &mut self.rng)?;
        let items: Vec<_> = idx.iter().map(|&i| self.buffer.get(i).expect("sampled index")).collect();
        let shift = (self.cfg.augment_shift > 0).then_some(self.cfg.augment_shift);
        let batch = Batch::from_stored(&items, self.cfg.image_size, &mut self.rng, shift)?;
        let a = self.cfg.task.action_dim();

        let eps = Tensor::from_vec(&[n, a], standard_normal(&mut self.rng, n * a))?;
        let y = critic_target(
            &self.net,
            &self.params,
            &self.target,
            &batch,
            self.alpha,
            self.hyper.gamma,
            &eps,
        )?;
        let mut t = Tape::new();
        let owned = self.critic_opt.groups().to_vec();
        let b = Bound::groups(&mut t, &self.params, &[Group::Encoder, Group::Critic], |g| owned.contains(&g));
        let loss = critic_loss_fwd(&mut t, &self.net, &b, &batch, &y)?;
        let critic_loss = t.value(loss).item() as f64;
        let mut g = t.backward(loss)?;
        self.critic_opt.step(&mut self.params, &b.gradients(&mut g))?;

        let eps = Tensor::from_vec(&[n, a], standard_normal(&mut self.rng, n * a))?;
        let mut t = Tape::new();
        let b = Bound::groups(
            &mut t,
            &self.params,
            &[Group::Encoder, Group::Actor, Group::Critic],
            |g| g == Group::Actor,
        );
        let (loss, logp) = actor_loss_fwd(&mut t, &self.net, &b, &batch, self.alpha, &eps)?;
        let actor_loss = t.value(loss).item() as f64;
        let mut g = t.backward(loss)?;
        self.actor_opt.step(&mut self.params, &b.gradients(&mut g))?;

        self.alpha = alpha_update(self.alpha, &logp, self.hyper.target_entropy, self.hyper.alpha_lr)?;
        target_update(&self.params, &mut self.target, self.hyper.tau)?;

        self.log.push(step, "critic_loss", critic_loss)?;
        self.log.push(step, "actor_loss", actor_loss)?;
        self.log.push(step, "alpha", self.alpha)?;
        Ok(())
    }

    fn recon_update(&mut self, step: u64) -> Result<()> {
        let opt = self.recon_opt.as_mut().expect("3D finetuning enabled");
        let n = self.cfg.recon_batch.min(self.buffer.len());
        let idx = self.buffer.sample_recent_indices(n, self.cfg.recent_window, &mut self.rng)?;
        let size = self.cfg.image_size;
        let views: Vec<(Image, Image)> = idx
            .iter()
            .map(|&i| {
                let it = self.buffer.get(i).expect("sampled index");
                (it.image(&it.static_view, size), it.image(&it.dynamic_view, size))
            })
            .collect();
        let refs: Vec<(&Image, &Image)> = views.iter().map(|(s, d)| (s, d)).collect();
        let loss = recon_step(&self.net, &mut self.params, opt, &refs, self.cfg.lambda_l1)?;
        self.log.push(step, "recon_loss", loss)?;
        Ok(())
    }

    /// Runs until `total_steps` or an early stop.
    pub fn run(&mut self) -> Result<()> {
        let started = Instant::now();
        while self.step < self.cfg.total_steps && !self.stopped {
            self.step()?;
        }
        self.log.wall_clock_s += started.elapsed().as_secs_f64();
        Ok(())
    }

    /// Everything a resumed run needs to continue exactly: networks, target
    /// networks, optimizers, temperature, RNG, environment, replay buffer and
    /// the log so far.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        let fp = self.net.fingerprint();
        let mut ck = Checkpoint::new(fp.clone(), self.step, self.params.clone());
        ck.rng = Some(RngState::capture(&self.rng));
        ck.optimizers.push(("actor".into(), self.actor_opt.clone()));
        ck.optimizers.push(("critic".into(), self.critic_opt.clone()));
        if let Some(o) = &self.recon_opt {
            ck.optimizers.push(("recon".into(), o.clone()));
        }
        ck.meta = json!({
            "alpha": self.alpha,
            "seed": self.seed,
            "config": self.cfg.to_text(),
            "env": self.env.snapshot(),
            "obs_phi_d": self.obs.phi_d,
            "episode_return": self.episode_return,
            "stopped": self.stopped,
        });
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let buffer_path = dir.join(BUFFER_CHECKPOINT);
        fs::write(&buffer_path, self.buffer.to_bytes()).map_err(|e| Error::io(&buffer_path, e))?;
        self.log.save(&dir.join(LOG_CHECKPOINT))?;
        Checkpoint::new(fp, self.step, self.target.clone()).save(&dir.join(TARGET_CHECKPOINT))?;
        ck.save(&dir.join(JOINT_CHECKPOINT))
    }

    pub fn resume(cfg: &RunConfig, dir: &Path) -> Result<Self> {
        let net = cfg.net_config();
        let fp = net.fingerprint();
        let ck = Checkpoint::load(&dir.join(JOINT_CHECKPOINT), &fp)?;
        let tk = Checkpoint::load(&dir.join(TARGET_CHECKPOINT), &fp)?;
        let seed = ck.meta["seed"].as_u64().ok_or_else(|| Error::Checkpoint("missing seed".into()))?;
        let mut me = Self::new(cfg, seed, Some(&ck.params))?;
        me.target.overwrite_from(&tk.params)?;
        let opt = |name: &str| {
            ck.optimizer(name)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("missing {name} optimizer state")))
        };
        me.actor_opt = opt("actor")?;
        me.critic_opt = opt("critic")?;
        if me.recon_opt.is_some() {
            me.recon_opt = Some(opt("recon")?);
        }
        me.alpha = ck.meta["alpha"]
            .as_f64()
            .ok_or_else(|| Error::Checkpoint("missing alpha".into()))?;
        me.rng = ck
            .rng
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("missing rng state".into()))?
            .restore()?;
        me.step = ck.step;
        let meta = |key: &str| ck.meta.get(key).ok_or_else(|| Error::Checkpoint(format!("missing {key}")));
        let env: EnvSnapshot =
            serde_json::from_value(meta("env")?.clone()).map_err(|e| Error::Checkpoint(format!("bad env state: {e}")))?;
        me.env.restore(&env)?;
        let phi_d = meta("obs_phi_d")?.as_f64().ok_or_else(|| Error::Checkpoint("bad obs_phi_d".into()))?;
        me.obs = me.env.observe_at(phi_d);
        me.episode_return = meta("episode_return")?
            .as_f64()
            .ok_or_else(|| Error::Checkpoint("bad episode_return".into()))?;
        me.stopped = meta("stopped")?.as_bool().unwrap_or(false);
        let buffer_path = dir.join(BUFFER_CHECKPOINT);
        me.buffer = ReplayBuffer::from_bytes(&fs::read(&buffer_path).map_err(|e| Error::io(&buffer_path, e))?)?;
        me.log = TrainLog::load(&dir.join(LOG_CHECKPOINT))?;
        Ok(me)
    }

    pub fn into_parts(self) -> (ParamSet, TrainLog) {
        (self.params, self.log)
    }
}

/// Runs one joint-training seed to completion. With `run_dir` set, a
/// checkpoint is written there every `checkpoint_every` steps and at the end,
/// and an existing checkpoint there is resumed.
pub fn joint_train(
    cfg: &RunConfig,
    seed: u64,
    init: Option<&ParamSet>,
    run_dir: Option<&Path>,
) -> Result<(ParamSet, TrainLog)> {
    let mut trainer = match run_dir {
        Some(d) if d.join(JOINT_CHECKPOINT).exists() => JointTrainer::resume(cfg, d)?,
        _ => JointTrainer::new(cfg, seed, init)?,
    };
    let started = Instant::now();
    while trainer.steps_done() < cfg.total_steps && !trainer.stopped() {
        trainer.step()?;
        if let Some(d) = run_dir {
            if cfg.checkpoint_every > 0 && trainer.steps_done() % cfg.checkpoint_every == 0 {
                trainer.save_checkpoint(d)?;
            }
        }
    }
    if let Some(d) = run_dir {
        trainer.save_checkpoint(d)?;
    }
    trainer.log.wall_clock_s += started.elapsed().as_secs_f64();
    Ok(trainer.into_parts())
}

/// One cell of an ablation sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationCell {
    pub lambda_ft: f64,
    pub pretrain: bool,
    pub freeze: bool,
    pub seed: u64,
}

impl fmt::Display for AblationCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "lambda_ft={};pretrain={};freeze={};seed={}",
            self.lambda_ft, self.pretrain as u8, self.freeze as u8, self.seed
        )
    }
}

impl FromStr for AblationCell {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for part in s.split(';') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::config(part, "cell id parts look like key=value"))?;
            kv.insert(k, v);
        }
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| Error::config(k, "missing from cell id"));
        let flag = |k: &str| -> Result<bool> {
            match get(k)? {
                "1" => Ok(true),
                "0" => Ok(false),
                v => Err(Error::config(k, format!("expected 0 or 1, got {v:?}"))),
            }
        };
        Ok(Self {
            lambda_ft: get("lambda_ft")?.parse().map_err(|_| Error::config("lambda_ft", "not a number"))?,
            pretrain: flag("pretrain")?,
            freeze: flag("freeze")?,
            seed: get("seed")?.parse().map_err(|_| Error::config("seed", "not an integer"))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationGrid {
    pub lambdas: Vec<f64>,
    pub pretrain: Vec<bool>,
    pub freeze: Vec<bool>,
    pub seeds: Vec<u64>,
}

impl AblationGrid {
    pub fn cells(&self) -> Vec<AblationCell> {
        let mut out = Vec::new();
        for &lambda_ft in &self.lambdas {
            for &pretrain in &self.pretrain {
                for &freeze in &self.freeze {
                    for &seed in &self.seeds {
                        out.push(AblationCell {
                            lambda_ft,
                            pretrain,
                            freeze,
                            seed,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Trains every cell of `grid` on top of `base`. Cells with pretraining on
/// start from `pretrained[seed]`.
pub fn run_ablation(
    base: &RunConfig,
    grid: &AblationGrid,
    pretrained: &BTreeMap<u64, ParamSet>,
) -> Result<Vec<(AblationCell, ParamSet, TrainLog)>> {
    let cells = grid.cells();
    if cells.is_empty() {
        return Err(Error::Precondition("ablation grid is empty".into()));
    }
    cells
        .into_iter()
        .map(|cell| {
            let mut cfg = base.clone();
            cfg.lambda_ft = cell.lambda_ft;
            cfg.pretrain_3d = cell.pretrain;
            cfg.freeze_encoder = cell.freeze;
            cfg.seeds = vec![cell.seed];
            let init = if cell.pretrain {
                Some(pretrained.get(&cell.seed).ok_or_else(|| {
                    Error::Precondition(format!("no pretrained parameters for seed {}", cell.seed))
                })?)
            } else {
                None
            };
            let (params, log) = joint_train(&cfg, cell.seed, init, None)?;
            Ok((cell, params, log))
        })
        .collect()
}
