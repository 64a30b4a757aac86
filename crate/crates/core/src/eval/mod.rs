//! Image metrics, view-synthesis and pose-estimation sweeps, and policy
//! success rates.

mod metrics;

pub use metrics::{mse, psnr, psnr_from_mse, ssim, PSNR_CAP_DB, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::geometry::{aligned_pose_rmse, euler_to_rotation, EulerPose};
use crate::image::{batch_to_tensor, tensor_to_batch, Image};
use crate::nets::{Bound, Group, NetConfig, ParamSet};
use crate::rl::act;
use crate::trainer::RECON_GROUPS;
use crate::worldsim::{camera_at_offset, scripted_action, DualObservation, Env, EnvConfig, WorldState, MAX_STEPS};

pub const SYNTHESIS_HEADER: &str = "lambda_ft,phi_d,ssim_mean,psnr_db_mean,n";
pub const POSE_HEADER: &str = "phi_d,domain,variant,rmse";

fn csv_error(line: usize, reason: impl Into<String>) -> Error {
    Error::MalformedCsv {
        source_name: "report".into(),
        line,
        reason: reason.into(),
    }
}

fn csv_rows<'a>(text: &'a str, header: &str) -> Result<impl Iterator<Item = (usize, Vec<&'a str>)>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == header => {}
        _ => return Err(csv_error(1, format!("expected header `{header}`"))),
    }
    Ok(lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 2, l.split(',').map(str::trim).collect())))
}

fn field<T: FromStr>(line: usize, name: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| csv_error(line, format!("bad {name} {v:?}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRow {
    pub lambda_ft: f64,
    pub phi_d: f64,
    pub ssim_mean: f64,
    pub psnr_db_mean: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub rows: Vec<SynthesisRow>,
}

impl SynthesisReport {
    pub fn row(&self, lambda_ft: f64, phi_d: f64) -> Option<&SynthesisRow> {
        self.rows.iter().find(|r| r.lambda_ft == lambda_ft && r.phi_d == phi_d)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{SYNTHESIS_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:?},{:?},{:?},{:?},{}",
                r.lambda_ft, r.phi_d, r.ssim_mean, r.psnr_db_mean, r.n
            );
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (n, f) in csv_rows(text, SYNTHESIS_HEADER)? {
            let [l, p, s, q, c] = f[..] else {
                return Err(csv_error(n, "expected 5 fields"));
            };
            rows.push(SynthesisRow {
                lambda_ft: field(n, "lambda_ft", l)?,
                phi_d: field(n, "phi_d", p)?,
                ssim_mean: field(n, "ssim_mean", s)?,
                psnr_db_mean: field(n, "psnr_db_mean", q)?,
                n: field(n, "n", c)?,
            });
        }
        Ok(Self { rows })
    }
}

/// Whether a dynamic camera offset lies inside the training range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    InDomain,
    OutOfDomain,
}

impl Domain {
    pub fn classify(phi_d: f64, phi: f64) -> Self {
        if phi_d <= phi {
            Domain::InDomain
        } else {
            Domain::OutOfDomain
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::InDomain => "ID",
            Domain::OutOfDomain => "OOD",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ID" => Ok(Domain::InDomain),
            "OOD" => Ok(Domain::OutOfDomain),
            _ => Err(Error::Precondition(format!("unknown domain label {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRow {
    pub phi_d: f64,
    pub domain: Domain,
    pub variant: String,
    pub rmse: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseReport {
    pub rows: Vec<PoseRow>,
}

impl PoseReport {
    /// Mean RMSE over the rows of one variant.
    pub fn average(&self, variant: &str) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().filter(|r| r.variant == variant).map(|r| r.rmse).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{POSE_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(s, "{:?},{},{},{:?}", r.phi_d, r.domain, r.variant, r.rmse);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (n, f) in csv_rows(text, POSE_HEADER)? {
            let [p, d, v, r] = f[..] else {
                return Err(csv_error(n, "expected 4 fields"));
            };
            rows.push(PoseRow {
                phi_d: field(n, "phi_d", p)?,
                domain: d.parse().map_err(|_| csv_error(n, format!("bad domain {d:?}")))?,
                variant: v.to_string(),
                rmse: field(n, "rmse", r)?,
            });
        }
        Ok(Self { rows })
    }
}

/// Deterministic policy from learned parameters: `tanh` of the mean action
/// for the static view and robot state.
pub fn learned_policy<'a>(
    net: &'a NetConfig,
    params: &'a ParamSet,
) -> impl FnMut(&DualObservation, &WorldState) -> Result<Vec<f32>> + 'a {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    move |obs, _| act(net, params, &obs.static_view, &obs.robot_state, &mut rng, true)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyEval {
    pub success_rate: f64,
    pub episodes: usize,
    pub successes: usize,
}

/// Runs `n_trials` episodes from the predefined configurations in order
/// (wrapping around) and reports the fraction that succeed.
pub fn eval_policy(
    env_cfg: &EnvConfig,
    n_trials: usize,
    seed: u64,
    mut policy: impl FnMut(&DualObservation, &WorldState) -> Result<Vec<f32>>,
) -> Result<PolicyEval> {
    if n_trials == 0 {
        return Err(Error::Precondition("n_trials must be at least 1".into()));
    }
    let mut env = Env::new(*env_cfg)?;
    let mut successes = 0;
    for trial in 0..n_trials {
        let mut obs = env.reset_to(trial, seed.wrapping_add(trial as u64));
        for _ in 0..MAX_STEPS {
            let action = policy(&obs, env.state())?;
            let step = env.step(&action)?;
            if step.success {
                successes += 1;
            }
            if step.done {
                break;
            }
            obs = step.obs;
        }
    }
    Ok(PolicyEval {
        success_rate: successes as f64 / n_trials as f64,
        episodes: n_trials,
        successes,
    })
}

/// Predicted target views for `(source, target)` pairs, batched.
pub fn reconstruct_batch(net: &NetConfig, params: &ParamSet, pairs: &[(&Image, &Image)]) -> Result<Vec<(Image, EulerPose)>> {
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(8) {
        let (src, tgt): (Vec<&Image>, Vec<&Image>) = chunk.iter().copied().unzip();
        let mut t = Tape::new();
        let b = Bound::groups(&mut t, params, &RECON_GROUPS, |_| false);
        let s = t.constant(batch_to_tensor(&src)?);
        let g = t.constant(batch_to_tensor(&tgt)?);
        let (img, pose) = net.reconstruct_fwd(&mut t, &b, s, g)?;
        let imgs = tensor_to_batch(t.value(img))?;
        for (i, img) in imgs.into_iter().enumerate() {
            let p = &t.value(pose).data()[i * 6..(i + 1) * 6];
            out.push((img, EulerPose::from_array(std::array::from_fn(|k| p[k] as f64))?));
        }
    }
    Ok(out)
}

/// Relative poses for `(source, target)` pairs, batched.
pub fn estimate_pose_batch(net: &NetConfig, params: &ParamSet, pairs: &[(&Image, &Image)]) -> Result<Vec<EulerPose>> {
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(8) {
        let (src, tgt): (Vec<&Image>, Vec<&Image>) = chunk.iter().copied().unzip();
        let mut t = Tape::new();
        let b = Bound::groups(&mut t, params, &[Group::PoseNet], |_| false);
        let s = t.constant(batch_to_tensor(&src)?);
        let g = t.constant(batch_to_tensor(&tgt)?);
        let pose = net.pose_fwd(&mut t, &b, s, g)?;
        for p in t.value(pose).data().chunks(6) {
            out.push(EulerPose::from_array(std::array::from_fn(|k| p[k] as f64))?);
        }
    }
    Ok(out)
}

/// Static views paired with dynamic views at exactly `phi_d`, taken at every
/// step of deterministic rollouts of the learned policy.
pub fn collect_view_pairs(
    net: &NetConfig,
    params: &ParamSet,
    env_cfg: &EnvConfig,
    phi_d: f64,
    n_pairs: usize,
    seed: u64,
) -> Result<Vec<(Image, Image)>> {
    let has_actor = params.names().any(|n| Group::of(n) == Some(Group::Actor));
    let mut policy = learned_policy(net, params);
    let mut env = Env::new(*env_cfg)?;
    let mut pairs = Vec::with_capacity(n_pairs);
    let mut episode = 0usize;
    while pairs.len() < n_pairs {
        env.reset_to(episode, seed.wrapping_add(episode as u64));
        while pairs.len() < n_pairs && !env.is_done() {
            let obs = env.observe_at(phi_d);
            let action = if has_actor {
                policy(&obs, env.state())?
            } else {
                scripted_action(env.state(), env.task())
            };
            pairs.push((obs.static_view, obs.dynamic_view));
            env.step(&action)?;
        }
        episode += 1;
    }
    Ok(pairs)
}

/// Mean SSIM and PSNR of reconstructed dynamic views, one row per `phi_d`.
/// Every row sees the same rollout states.
pub fn eval_synthesis(
    net: &NetConfig,
    params: &ParamSet,
    env_cfg: &EnvConfig,
    lambda_ft: f64,
    phi_d_list: &[f64],
    n_pairs: usize,
    seed: u64,
) -> Result<SynthesisReport> {
    if n_pairs == 0 {
        return Err(Error::Precondition("n_pairs must be at least 1".into()));
    }
    if phi_d_list.is_empty() {
        return Err(Error::Precondition("no dynamic camera offsets given".into()));
    }
    let mut rows = Vec::new();
    for &phi_d in phi_d_list {
        let pairs = collect_view_pairs(net, params, env_cfg, phi_d, n_pairs, seed)?;
        let refs: Vec<(&Image, &Image)> = pairs.iter().map(|(s, d)| (s, d)).collect();
        let preds = reconstruct_batch(net, params, &refs)?;
        let (mut s, mut p) = (0.0, 0.0);
        for ((_, tgt), (pred, _)) in pairs.iter().zip(&preds) {
            s += ssim(pred, tgt)?;
            p += psnr(pred, tgt)?;
        }
        rows.push(SynthesisRow {
            lambda_ft,
            phi_d,
            ssim_mean: s / n_pairs as f64,
            psnr_db_mean: p / n_pairs as f64,
            n: n_pairs,
        });
    }
    Ok(SynthesisReport { rows })
}

/// Camera positions implied by relative rotations: each rotation applied to
/// a unit vector pointing from the volume center toward the static camera.
pub fn pose_positions(poses: &[EulerPose]) -> Vec<[f64; 3]> {
    poses.iter().map(|p| euler_to_rotation(p).apply([0.0, 0.0, -1.0])).collect()
}

/// Ground-truth dynamic camera centers for azimuth offsets, relative to the
/// point the cameras look at.
pub fn true_camera_positions(env_cfg: &EnvConfig, offsets: &[f64]) -> Vec<[f64; 3]> {
    let c = env_cfg.static_camera;
    offsets
        .iter()
        .map(|&o| {
            let p = camera_at_offset(&c, o).position();
            std::array::from_fn(|i| p[i] - c.look_at[i])
        })
        .collect()
}

/// Aligned RMSE between predicted relative poses and true camera centers.
pub fn trajectory_rmse(pred: &[EulerPose], truth: &[[f64; 3]]) -> Result<f64> {
    aligned_pose_rmse(&pose_positions(pred), truth)
}

/// Sweeps the dynamic camera from 0 to `phi_d` over `traj_len` steps of a
/// scripted trajectory, estimates each relative pose, aligns the implied
/// positions to the true ones and reports the pooled RMSE per `phi_d`.
#[allow(clippy::too_many_arguments)]
pub fn eval_pose(
    net: &NetConfig,
    params: &ParamSet,
    env_cfg: &EnvConfig,
    phi_d_list: &[f64],
    traj_len: usize,
    trajectories: usize,
    seed: u64,
    variant: &str,
) -> Result<PoseReport> {
    if traj_len < 3 {
        return Err(Error::Precondition(format!("trajectory length {traj_len} < 3")));
    }
    if trajectories == 0 || phi_d_list.is_empty() {
        return Err(Error::Precondition("need at least one trajectory and one offset".into()));
    }
    if variant.contains(',') {
        return Err(Error::Precondition(format!("variant name {variant:?} is not CSV-safe")));
    }
    let mut env = Env::new(*env_cfg)?;
    let mut rows = Vec::new();
    for &phi_d in phi_d_list {
        let offsets: Vec<f64> = (0..traj_len).map(|k| phi_d * k as f64 / (traj_len - 1) as f64).collect();
        let truth = true_camera_positions(env_cfg, &offsets);
        let mut sq = 0.0;
        for j in 0..trajectories {
            env.reset_to(j, seed.wrapping_add(j as u64));
            let mut views = Vec::with_capacity(traj_len);
            for &o in &offsets {
                let obs = env.observe_at(o);
                views.push((obs.static_view, obs.dynamic_view));
                if !env.is_done() {
                    env.step(&scripted_action(env.state(), env.task()))?;
                }
            }
            let refs: Vec<(&Image, &Image)> = views.iter().map(|(s, d)| (s, d)).collect();
            let poses = estimate_pose_batch(net, params, &refs)?;
            sq += trajectory_rmse(&poses, &truth)?.powi(2);
        }
        rows.push(PoseRow {
            phi_d,
            domain: Domain::classify(phi_d, env_cfg.phi),
            variant: variant.to_string(),
            rmse: (sq / trajectories as f64).sqrt(),
        });
    }
    Ok(PoseReport { rows })
}
