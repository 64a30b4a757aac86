use std::fs;
use std::path::{Path, PathBuf};

use voxrep::dataio::{generate_orbit_dataset, LoadedDataset, OrbitSpec};
use voxrep::eval::{eval_policy, eval_pose, eval_synthesis, learned_policy};
use voxrep::nets::{Checkpoint, ParamSet};
use voxrep::trainer::{joint_train, RunConfig};
use voxrep::worldsim::EnvConfig;

use crate::{EvalArgs, EvalMode, Failure, GenDataArgs, Outcome, RunArgs, TrainArgs};

pub const CONFIG_SNAPSHOT: &str = "config.cfg";
pub const PRETRAINED_PARAMS: &str = "params_pretrained.ckpt";
pub const FINAL_PARAMS: &str = "params_final.ckpt";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const DATA_ROOT_VAR: &str = "VOXREP_DATA_ROOT";

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn dir_bytes(path: &Path) -> std::io::Result<u64> {
    let mut total = 0;
    for entry in fs::read_dir(path)? {
        let entry = entry?;
        let meta = entry.metadata()?;
        total += if meta.is_dir() { dir_bytes(&entry.path())? } else { meta.len() };
    }
    Ok(total)
}

pub fn gen_data(a: &GenDataArgs) -> Outcome {
    if a.scenes == 0 || a.views < 2 || a.size == 0 || !a.size.is_multiple_of(4) {
        return Err(Failure::Usage(
            "need --scenes >= 1, --views >= 2 and --size a positive multiple of 4".into(),
        ));
    }
    if !(a.arc.is_finite() && a.arc > 0.0) {
        return Err(Failure::Usage(format!("--arc must be positive, got {}", a.arc)));
    }
    let spec = OrbitSpec {
        arc_degrees: a.arc,
        ..OrbitSpec::new(a.scenes, a.views, a.size, a.seed)
    };
    let manifests = generate_orbit_dataset(&spec, &a.out)?;
    let frames: usize = manifests.iter().map(|m| m.frame_paths.len()).sum();
    let bytes = dir_bytes(&a.out).map_err(|e| io_failure(&a.out, e))?;
    println!("scenes {} frames {frames} bytes {bytes} -> {}", manifests.len(), a.out.display());
    Ok(())
}

fn load_config(a: &RunArgs) -> Result<RunConfig, Failure> {
    let base = match &a.config {
        Some(p) if !p.is_file() => return Err(Failure::Usage(format!("config file {} not found", p.display()))),
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    Ok(base.with_overrides(&a.overrides)?)
}

fn seeds(a: &RunArgs, cfg: &RunConfig) -> Vec<u64> {
    match a.seed {
        Some(s) => vec![s],
        None if !a.seeds.is_empty() => a.seeds.clone(),
        None => cfg.seeds.clone(),
    }
}

/// The single-seed config and its run directory, with the config snapshot
/// written into it.
fn prepare_run(a: &RunArgs, cfg: &RunConfig, seed: u64) -> Result<(RunConfig, PathBuf), Failure> {
    let mut c = cfg.clone();
    c.seeds = vec![seed];
    let dir = a.out.join(c.run_id(seed));
    fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
    let snap = dir.join(CONFIG_SNAPSHOT);
    fs::write(&snap, c.to_text()).map_err(|e| io_failure(&snap, e))?;
    Ok((c, dir))
}

fn data_root(a: &RunArgs, cfg: &RunConfig) -> Result<PathBuf, Failure> {
    a.data
        .clone()
        .or_else(|| cfg.data_root.clone())
        .or_else(|| std::env::var_os(DATA_ROOT_VAR).map(PathBuf::from))
        .ok_or_else(|| {
            Failure::Usage(format!("no dataset given: pass --data, set data_root or set {DATA_ROOT_VAR}"))
        })
}

fn save_params(path: &Path, cfg: &RunConfig, params: &ParamSet) -> Outcome {
    Checkpoint::new(cfg.net_config().fingerprint(), 0, params.clone()).save(path)?;
    Ok(())
}

fn load_params(path: &Path, cfg: &RunConfig) -> Result<ParamSet, Failure> {
    Ok(Checkpoint::load(path, &cfg.net_config().fingerprint())?.params)
}

fn pretrain_into(cfg: &RunConfig, data: &LoadedDataset, seed: u64, dir: &Path) -> Result<ParamSet, Failure> {
    println!("pretraining {} steps -> {}", cfg.pretrain_steps, dir.display());
    let (params, log) = voxrep::trainer::pretrain(cfg, data, seed, Some(dir))?;
    save_params(&dir.join(PRETRAINED_PARAMS), cfg, &params)?;
    if let Some(loss) = log.last("recon_loss") {
        println!("final recon_loss {loss:.5}");
    }
    Ok(params)
}

pub fn pretrain(a: &RunArgs) -> Outcome {
    let cfg = load_config(a)?;
    let data = LoadedDataset::load(&data_root(a, &cfg)?)?;
    for seed in seeds(a, &cfg) {
        let (c, dir) = prepare_run(a, &cfg, seed)?;
        pretrain_into(&c, &data, seed, &dir)?;
    }
    Ok(())
}

pub fn train(a: &TrainArgs) -> Outcome {
    let cfg = load_config(&a.run)?;
    for seed in seeds(&a.run, &cfg) {
        let (c, dir) = prepare_run(&a.run, &cfg, seed)?;
        let own = dir.join(PRETRAINED_PARAMS);
        let init = match &a.init {
            Some(p) => Some(load_params(p, &c)?),
            None if c.pretrain_3d && own.exists() => Some(load_params(&own, &c)?),
            None if c.pretrain_3d => {
                let data = LoadedDataset::load(&data_root(&a.run, &c)?)?;
                Some(pretrain_into(&c, &data, seed, &dir)?)
            }
            None => None,
        };
        println!("training up to {} steps -> {}", c.total_steps, dir.display());
        let (params, log) = joint_train(&c, seed, init.as_ref(), Some(&dir))?;
        log.save(&dir.join(TRAIN_LOG))?;
        save_params(&dir.join(FINAL_PARAMS), &c, &params)?;
        match log.series("success_rate").last() {
            Some((step, rate)) => println!("success_rate {rate:.3} at step {step}"),
            None => println!("no evaluations logged"),
        }
    }
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Outcome {
    let snap = a.run.join(CONFIG_SNAPSHOT);
    if !snap.is_file() {
        return Err(Failure::Usage(format!("{} is not a run directory (no {CONFIG_SNAPSHOT})", a.run.display())));
    }
    let cfg = RunConfig::from_file(&snap)?;
    let (path, default_variant) = match &a.params {
        Some(p) => (p.clone(), p.file_stem().map_or("custom".into(), |s| s.to_string_lossy().into_owned())),
        None if a.run.join(FINAL_PARAMS).exists() => (a.run.join(FINAL_PARAMS), "finetuned".to_string()),
        None if a.run.join(PRETRAINED_PARAMS).exists() => (a.run.join(PRETRAINED_PARAMS), "pretrained".to_string()),
        None => return Err(Failure::Usage(format!("no parameters found in {}", a.run.display()))),
    };
    let params = load_params(&path, &cfg)?;
    let net = cfg.net_config();
    let env = EnvConfig::new(cfg.task, cfg.image_size, cfg.phi);
    let (name, text) = match a.mode {
        EvalMode::Synth => {
            let report = eval_synthesis(&net, &params, &env, cfg.lambda_ft, &a.phi_d, a.n_pairs, a.seed)?;
            for r in &report.rows {
                println!("phi_d {} ssim {:.4} psnr {:.2} dB", r.phi_d, r.ssim_mean, r.psnr_db_mean);
            }
            ("synthesis.csv".to_string(), report.to_csv())
        }
        EvalMode::Pose => {
            let variant = a.variant.clone().unwrap_or(default_variant);
            let report = eval_pose(&net, &params, &env, &a.phi_d, a.traj_len, a.trajectories, a.seed, &variant)?;
            for r in &report.rows {
                println!("phi_d {} {} rmse {:.5}", r.phi_d, r.domain, r.rmse);
            }
            (format!("pose_{variant}.csv"), report.to_csv())
        }
        EvalMode::Policy => {
            let r = eval_policy(&env, a.trials, a.seed, learned_policy(&net, &params))?;
            println!("success_rate {:.3} ({}/{})", r.success_rate, r.successes, r.episodes);
            (
                "policy.csv".to_string(),
                format!("success_rate,episodes,successes\n{:?},{},{}\n", r.success_rate, r.episodes, r.successes),
            )
        }
    };
    let out = a.out.clone().unwrap_or_else(|| a.run.join(name));
    fs::write(&out, text).map_err(|e| io_failure(&out, e))?;
    println!("wrote {}", out.display());
    Ok(())
}
