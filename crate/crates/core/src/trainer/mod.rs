//! Training loops: 3D pretraining on multi-view data, joint 3D + RL training
//! in the simulated world, and ablation sweeps.

mod config;
mod joint;
mod log;

pub use config::{NetPreset, RunConfig, KEYS};
pub use joint::{
    joint_train, run_ablation, AblationCell, AblationGrid, JointTrainer, BUFFER_CHECKPOINT, JOINT_CHECKPOINT, LOG_CHECKPOINT,
    TARGET_CHECKPOINT,
};
pub use log::{Record, TrainLog, LOG_HEADER};

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::dataio::LoadedDataset;
use crate::error::{Error, Result};
use crate::image::{batch_to_tensor, Image};
use crate::nets::{recon_loss_fwd, Adam, AdamConfig, Bound, Checkpoint, Group, NetConfig, ParamSet, RngState};

/// Parameter groups trained by the reconstruction objective.
pub const RECON_GROUPS: [Group; 4] = [Group::Encoder, Group::Lift, Group::Decoder, Group::PoseNet];

pub const PRETRAIN_CHECKPOINT: &str = "pretrain.ckpt";
pub const PRETRAIN_LOG: &str = "pretrain_log.csv";

/// One reconstruction step on `(source, target)` pairs: predicts the target
/// view from the source, then updates whatever groups `opt` owns.
pub fn recon_step(
    net: &NetConfig,
    params: &mut ParamSet,
    opt: &mut Adam,
    pairs: &[(&Image, &Image)],
    lambda_l1: f64,
) -> Result<f64> {
    let (src, tgt): (Vec<&Image>, Vec<&Image>) = pairs.iter().copied().unzip();
    let mut t = Tape::new();
    let b = Bound::groups(&mut t, params, &RECON_GROUPS, |g| opt.groups().contains(&g));
    let s = t.constant(batch_to_tensor(&src)?);
    let g = t.constant(batch_to_tensor(&tgt)?);
    let (pred, _) = net.reconstruct_fwd(&mut t, &b, s, g)?;
    let loss = recon_loss_fwd(&mut t, pred, g, lambda_l1 as f32)?;
    let value = t.value(loss).item() as f64;
    let mut grads = t.backward(loss)?;
    let grads = b.gradients(&mut grads);
    opt.step(params, &grads)?;
    Ok(value)
}

/// Mean reconstruction loss over fixed pairs, without updating anything.
pub fn recon_eval(net: &NetConfig, params: &ParamSet, pairs: &[(Image, Image)], lambda_l1: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Precondition("no evaluation pairs".into()));
    }
    let mut total = 0.0;
    for chunk in pairs.chunks(8) {
        let src: Vec<&Image> = chunk.iter().map(|p| &p.0).collect();
        let tgt: Vec<&Image> = chunk.iter().map(|p| &p.1).collect();
        let mut t = Tape::new();
        let b = Bound::groups(&mut t, params, &RECON_GROUPS, |_| false);
        let s = t.constant(batch_to_tensor(&src)?);
        let g = t.constant(batch_to_tensor(&tgt)?);
        let (pred, _) = net.reconstruct_fwd(&mut t, &b, s, g)?;
        let loss = recon_loss_fwd(&mut t, pred, g, lambda_l1 as f32)?;
        total += t.value(loss).item() as f64 * chunk.len() as f64;
    }
    Ok(total / pairs.len() as f64)
}

/// `n` pairs drawn with a fixed seed, for held-out tracking.
pub fn fixed_pairs(data: &LoadedDataset, n: usize, seed: u64, max_gap: usize) -> Result<Vec<(Image, Image)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| data.sample_pair(&mut rng, max_gap).map(|p| (p.i_src, p.i_tgt)))
        .collect()
}

/// Resumable state of a pretraining run.
#[derive(Debug, Clone)]
pub struct Pretrainer {
    net: NetConfig,
    params: ParamSet,
    opt: Adam,
    rng: ChaCha8Rng,
    step: u64,
    batch: usize,
    max_gap: usize,
    lambda_l1: f64,
}

impl Pretrainer {
    pub fn new(cfg: &RunConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let net = cfg.net_config();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = net.init_params(&mut rng)?;
        Ok(Self {
            net,
            params,
            opt: Adam::new(AdamConfig::with_lr(cfg.lr_pretrain), &RECON_GROUPS),
            rng,
            step: 0,
            batch: cfg.pretrain_batch,
            max_gap: cfg.pretrain_max_gap,
            lambda_l1: cfg.lambda_l1,
        })
    }

    pub fn resume(cfg: &RunConfig, ck: &Checkpoint) -> Result<Self> {
        let mut me = Self::new(cfg, 0)?;
        if ck.fingerprint != me.net.fingerprint() {
            return Err(Error::Checkpoint("checkpoint was written for a different network".into()));
        }
        me.params.overwrite_from(&ck.params)?;
        me.opt = ck
            .optimizer("recon")
            .cloned()
            .ok_or_else(|| Error::Checkpoint("missing recon optimizer state".into()))?;
        me.rng = ck
            .rng
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("missing rng state".into()))?
            .restore()?;
        me.step = ck.step;
        Ok(me)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.net.fingerprint(), self.step, self.params.clone());
        ck.rng = Some(RngState::capture(&self.rng));
        ck.optimizers.push(("recon".into(), self.opt.clone()));
        ck
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn net(&self) -> &NetConfig {
        &self.net
    }

    /// The trained 3D parameters (encoder, lift, decoder, PoseNet).
    pub fn into_params(self) -> ParamSet {
        self.params.subset(|g| g.is_3d())
    }

    pub fn step(&mut self, data: &LoadedDataset) -> Result<f64> {
        if let Some((h, w)) = data.image_size() {
            if (h, w) != (self.net.image_size, self.net.image_size) {
                return Err(Error::shape((self.net.image_size, self.net.image_size), (h, w)));
            }
        }
        let pairs = (0..self.batch)
            .map(|_| data.sample_pair(&mut self.rng, self.max_gap))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<(&Image, &Image)> = pairs.iter().map(|p| (&p.i_src, &p.i_tgt)).collect();
        let loss = recon_step(&self.net, &mut self.params, &mut self.opt, &refs, self.lambda_l1)?;
        self.step += 1;
        Ok(loss)
    }
}

/// Runs `cfg.pretrain_steps` reconstruction steps, logging `recon_loss` each
/// step. With `checkpoint_dir` set, resumes from a checkpoint found there and
/// writes one, together with the log so far, every `cfg.checkpoint_every`
/// steps and at the end.
pub fn pretrain(
    cfg: &RunConfig,
    data: &LoadedDataset,
    seed: u64,
    checkpoint_dir: Option<&Path>,
) -> Result<(ParamSet, TrainLog)> {
    if data.frames.iter().all(|f| f.len() < 2) {
        return Err(Error::EmptyDataset);
    }
    let save = |trainer: &Pretrainer, log: &TrainLog| -> Result<()> {
        if let Some(d) = checkpoint_dir {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            log.save(&d.join(PRETRAIN_LOG))?;
            trainer.checkpoint().save(&d.join(PRETRAIN_CHECKPOINT))?;
        }
        Ok(())
    };
    let (mut trainer, mut log) = match checkpoint_dir {
        Some(d) if d.join(PRETRAIN_CHECKPOINT).exists() => {
            let net = cfg.net_config();
            let ck = Checkpoint::load(&d.join(PRETRAIN_CHECKPOINT), &net.fingerprint())?;
            (Pretrainer::resume(cfg, &ck)?, TrainLog::load(&d.join(PRETRAIN_LOG))?)
        }
        _ => (Pretrainer::new(cfg, seed)?, TrainLog::new()),
    };
    let started = Instant::now();
    while trainer.steps_done() < cfg.pretrain_steps {
        let step = trainer.steps_done();
        let loss = trainer.step(data)?;
        log.push(step, "recon_loss", loss)?;
        if cfg.checkpoint_every > 0 && trainer.steps_done() % cfg.checkpoint_every == 0 {
            save(&trainer, &log)?;
        }
    }
    log.wall_clock_s += started.elapsed().as_secs_f64();
    save(&trainer, &log)?;
    Ok((trainer.into_params(), log))
}
