//! Networks: 2D encoder, voxel lift, 3D decoder, PoseNet and the SAC heads.
//!
//! Every network exists in two forms. The `*_fwd` functions record onto a
//! [`Tape`] with parameters bound through [`Bound`] and operate on batches
//! (`[N, 3, 1, H, W]` images). The plain functions (`encode`, `reconstruct`,
//! ...) wrap them for single examples without gradients.

mod checkpoint;
mod optim;
mod params;

pub use checkpoint::{Checkpoint, RngState};
pub use optim::{Adam, AdamConfig};
pub use params::{Bound, Group, ParamSet};

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{EulerPose, VoxelGrid};
use crate::image::{batch_to_tensor, tensor_to_batch, Image};
use crate::tensor::Tensor;

/// How the RL heads read the feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadInput {
    /// Spatial mean over the feature map.
    Pool,
    /// The whole feature map, flattened.
    Flatten,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Square input resolution; must be divisible by 4.
    pub image_size: usize,
    pub enc_base: usize,
    /// Feature-map channels `C`.
    pub feat_channels: usize,
    pub enc_blocks: usize,
    /// Number of depth slices the feature channels are reshaped into.
    pub depth_split: usize,
    /// Voxel feature channels `C'`.
    pub voxel_channels: usize,
    pub dec_channels: usize,
    pub dec_hidden: usize,
    pub pose_channels: usize,
    pub pose_hidden: usize,
    pub angle_max: f64,
    pub t_max: f64,
    /// When false PoseNet translations are pinned to zero.
    pub pose_translation: bool,
    pub latent_dim: usize,
    pub head_hidden: usize,
    pub head_input: HeadInput,
    pub state_dim: usize,
    pub action_dim: usize,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl NetConfig {
    /// 84x84 inputs, 64x21x21 features, 16x16x42x42 voxels.
    pub fn desk(action_dim: usize) -> Self {
        Self {
            image_size: 84,
            enc_base: 32,
            feat_channels: 64,
            enc_blocks: 6,
            depth_split: 8,
            voxel_channels: 16,
            dec_channels: 8,
            dec_hidden: 32,
            pose_channels: 32,
            pose_hidden: 64,
            angle_max: FRAC_PI_2,
            t_max: 0.5,
            pose_translation: true,
            latent_dim: 50,
            head_hidden: 256,
            head_input: HeadInput::Pool,
            state_dim: 4,
            action_dim,
            log_std_min: -10.0,
            log_std_max: 2.0,
        }
    }

    /// 8x8 inputs and 4x4x4x4 voxels, for gradient checks.
    pub fn tiny(action_dim: usize) -> Self {
        Self {
            image_size: 8,
            enc_base: 4,
            feat_channels: 8,
            enc_blocks: 1,
            depth_split: 2,
            voxel_channels: 4,
            dec_channels: 2,
            dec_hidden: 4,
            pose_channels: 4,
            pose_hidden: 8,
            latent_dim: 6,
            head_hidden: 8,
            ..Self::desk(action_dim)
        }
    }

    /// A reduced network at an arbitrary resolution, sized for CPU training.
    pub fn small(image_size: usize, action_dim: usize) -> Self {
        Self {
            image_size,
            enc_base: 16,
            feat_channels: 32,
            enc_blocks: 1,
            depth_split: 4,
            voxel_channels: 4,
            dec_channels: 2,
            dec_hidden: 16,
            pose_channels: 16,
            pose_hidden: 32,
            latent_dim: 50,
            head_hidden: 128,
            ..Self::desk(action_dim)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || !self.image_size.is_multiple_of(4) {
            return Err(Error::Config {
                key: "image_size".into(),
                reason: format!("{} is not a positive multiple of 4", self.image_size),
            });
        }
        if self.depth_split == 0 || !self.feat_channels.is_multiple_of(self.depth_split) {
            return Err(Error::Divisibility {
                channels: self.feat_channels,
                depth_split: self.depth_split,
            });
        }
        let dims = [
            ("enc_base", self.enc_base),
            ("feat_channels", self.feat_channels),
            ("voxel_channels", self.voxel_channels),
            ("dec_channels", self.dec_channels),
            ("dec_hidden", self.dec_hidden),
            ("pose_channels", self.pose_channels),
            ("pose_hidden", self.pose_hidden),
            ("latent_dim", self.latent_dim),
            ("head_hidden", self.head_hidden),
            ("action_dim", self.action_dim),
        ];
        for (key, v) in dims {
            if v == 0 {
                return Err(Error::Config {
                    key: key.into(),
                    reason: "must be positive".into(),
                });
            }
        }
        if !(self.log_std_min < self.log_std_max) {
            return Err(Error::Config {
                key: "log_std_min".into(),
                reason: "must be below log_std_max".into(),
            });
        }
        Ok(())
    }

    /// `(C, H_f, W_f)` of the encoder output.
    pub fn feature_dims(&self) -> (usize, usize, usize) {
        let s = self.image_size / 4;
        (self.feat_channels, s, s)
    }

    /// `(C', D, H, W)` of the deep voxel grid.
    pub fn voxel_dims(&self) -> (usize, usize, usize, usize) {
        let s = self.image_size / 2;
        (self.voxel_channels, 2 * self.depth_split, s, s)
    }

    fn head_features(&self) -> usize {
        let (c, h, w) = self.feature_dims();
        match self.head_input {
            HeadInput::Pool => c,
            HeadInput::Flatten => c * h * w,
        }
    }

    /// Fresh parameters for every group.
    pub fn init_params(&self, rng: &mut impl Rng) -> Result<ParamSet> {
        self.validate()?;
        let mut p = ParamSet::new();
        let c = self.feat_channels;
        conv_param(&mut p, rng, "encoder.stem", 3, self.enc_base, [1, 3, 3]);
        conv_param(&mut p, rng, "encoder.down", self.enc_base, c, [1, 3, 3]);
        for i in 0..self.enc_blocks {
            conv_param(&mut p, rng, &format!("encoder.block{i}.a"), c, c, [1, 3, 3]);
            conv_param(&mut p, rng, &format!("encoder.block{i}.b"), c, c, [1, 3, 3]);
        }

        let (cv, d, _, _) = self.voxel_dims();
        convt_param(&mut p, rng, "lift.up", c / self.depth_split, cv, [4, 4, 4]);

        conv_param(&mut p, rng, "decoder.vol", cv, self.dec_channels, [3, 3, 3]);
        conv_param(&mut p, rng, "decoder.proj", self.dec_channels * d, self.dec_hidden, [1, 1, 1]);
        convt_param(&mut p, rng, "decoder.up", self.dec_hidden, self.dec_hidden, [1, 4, 4]);
        conv_param(&mut p, rng, "decoder.out", self.dec_hidden, 3, [1, 3, 3]);

        let pc = self.pose_channels;
        conv_param(&mut p, rng, "posenet.c0", 6, pc, [1, 3, 3]);
        conv_param(&mut p, rng, "posenet.c1", pc, pc, [1, 3, 3]);
        conv_param(&mut p, rng, "posenet.c2", pc, pc, [1, 3, 3]);
        linear_param(&mut p, rng, "posenet.fc", pc, self.pose_hidden);
        linear_param(&mut p, rng, "posenet.out", self.pose_hidden, 6);
        // Start near the identity warp.
        if let Some(w) = p.get_mut("posenet.out.w") {
            w.data_mut().iter_mut().for_each(|v| *v *= 0.01);
        }

        let hf = self.head_features();
        let (l, hh, a, s) = (self.latent_dim, self.head_hidden, self.action_dim, self.state_dim);
        linear_param(&mut p, rng, "actor.proj", hf, l);
        norm_param(&mut p, "actor.norm", l);
        linear_param(&mut p, rng, "actor.fc0", l + s, hh);
        linear_param(&mut p, rng, "actor.fc1", hh, hh);
        linear_param(&mut p, rng, "actor.out", hh, 2 * a);

        linear_param(&mut p, rng, "critic.proj", hf, l);
        norm_param(&mut p, "critic.norm", l);
        for q in ["q1", "q2"] {
            linear_param(&mut p, rng, &format!("critic.{q}.fc0"), l + s + a, hh);
            linear_param(&mut p, rng, &format!("critic.{q}.fc1"), hh, hh);
            linear_param(&mut p, rng, &format!("critic.{q}.out"), hh, 1);
        }
        Ok(p)
    }

    /// Short stable hash of the architecture, stored in checkpoints.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    fn check_images(&self, t: &Tape, x: Var) -> Result<usize> {
        let s = t.shape(x);
        let want = [3, 1, self.image_size, self.image_size];
        if s.len() != 5 || s[1..] != want {
            return Err(Error::shape(format!("[N, 3, 1, {0}, {0}]", self.image_size), s.to_vec()));
        }
        Ok(s[0])
    }

    /// `f`: images `[N, 3, 1, H, W]` to features `[N, C, 1, H/4, W/4]`.
    pub fn encoder_fwd(&self, t: &mut Tape, b: &Bound, x: Var) -> Result<Var> {
        self.check_images(t, x)?;
        let x = t.add_scalar(x, -0.5);
        let h = conv(t, b, "encoder.stem", x, [1, 2, 2], [0, 1, 1])?;
        let h = t.relu(h);
        let mut h = conv(t, b, "encoder.down", h, [1, 2, 2], [0, 1, 1])?;
        for i in 0..self.enc_blocks {
            let r = t.relu(h);
            let r = conv(t, b, &format!("encoder.block{i}.a"), r, [1, 1, 1], [0, 1, 1])?;
            let r = t.relu(r);
            let r = conv(t, b, &format!("encoder.block{i}.b"), r, [1, 1, 1], [0, 1, 1])?;
            h = t.add(h, r)?;
        }
        Ok(h)
    }

    /// `g`: reshape channels into depth slices, then learned 2x upsampling.
    pub fn lift_fwd(&self, t: &mut Tape, b: &Bound, z: Var) -> Result<Var> {
        let s = t.shape(z).to_vec();
        let (c, hf, wf) = self.feature_dims();
        if s.len() != 5 || s[1..] != [c, 1, hf, wf] {
            return Err(Error::shape(format!("[N, {c}, 1, {hf}, {wf}]"), s));
        }
        let d = self.depth_split;
        let v = t.reshape(z, &[s[0], c / d, d, hf, wf])?;
        convt(t, b, "lift.up", v, [2, 2, 2], [1, 1, 1])
    }

    fn check_voxels(&self, t: &Tape, v: Var) -> Result<usize> {
        let s = t.shape(v);
        let (c, d, h, w) = self.voxel_dims();
        if s.len() != 5 || s[1..] != [c, d, h, w] {
            return Err(Error::shape(format!("[N, {c}, {d}, {h}, {w}]"), s.to_vec()));
        }
        Ok(s[0])
    }

    /// `h`: voxel grid to an image in `[0, 1]`.
    pub fn decoder_fwd(&self, t: &mut Tape, b: &Bound, v: Var) -> Result<Var> {
        let n = self.check_voxels(t, v)?;
        let (_, d, h, w) = self.voxel_dims();
        let x = conv(t, b, "decoder.vol", v, [1, 1, 1], [1, 1, 1])?;
        let x = t.relu(x);
        let x = t.reshape(x, &[n, self.dec_channels * d, 1, h, w])?;
        let x = conv(t, b, "decoder.proj", x, [1, 1, 1], [0, 0, 0])?;
        let x = t.relu(x);
        let x = convt(t, b, "decoder.up", x, [1, 2, 2], [0, 1, 1])?;
        let x = t.relu(x);
        let x = conv(t, b, "decoder.out", x, [1, 1, 1], [0, 1, 1])?;
        Ok(t.sigmoid(x))
    }

    /// `F_pose` on a channel-stacked pair; returns bounded poses `[N, 6]`.
    pub fn pose_fwd(&self, t: &mut Tape, b: &Bound, src: Var, tgt: Var) -> Result<Var> {
        let n = self.check_images(t, src)?;
        if self.check_images(t, tgt)? != n {
            return Err(Error::shape(t.shape(src).to_vec(), t.shape(tgt).to_vec()));
        }
        let s = self.image_size;
        let plane = 3 * s * s;
        let a = t.reshape(src, &[n, plane])?;
        let c = t.reshape(tgt, &[n, plane])?;
        let x = t.concat(a, c)?;
        let x = t.reshape(x, &[n, 6, 1, s, s])?;
        let x = t.add_scalar(x, -0.5);
        let mut x = x;
        for name in ["posenet.c0", "posenet.c1", "posenet.c2"] {
            x = conv(t, b, name, x, [1, 2, 2], [0, 1, 1])?;
            x = t.relu(x);
        }
        let x = t.mean_pool(x)?;
        let x = linear(t, b, "posenet.fc", x)?;
        let x = t.relu(x);
        let x = linear(t, b, "posenet.out", x)?;
        let x = t.tanh(x);
        let (am, tm) = (self.angle_max as f32, if self.pose_translation { self.t_max as f32 } else { 0.0 });
        let scale: Vec<f32> = (0..n).flat_map(|_| [am, am, am, tm, tm, tm]).collect();
        let scale = t.constant(Tensor::from_vec(&[n, 6], scale)?);
        t.mul(x, scale)
    }

    /// `h(T(g(f(src))))` with the pose predicted from `(src, tgt)`.
    pub fn reconstruct_fwd(&self, t: &mut Tape, b: &Bound, src: Var, tgt: Var) -> Result<(Var, Var)> {
        let z = self.encoder_fwd(t, b, src)?;
        let v = self.lift_fwd(t, b, z)?;
        let pose = self.pose_fwd(t, b, src, tgt)?;
        let warped = t.warp(v, pose)?;
        let img = self.decoder_fwd(t, b, warped)?;
        Ok((img, pose))
    }

    fn head_input(&self, t: &mut Tape, z: Var) -> Result<Var> {
        let n = t.shape(z)[0];
        match self.head_input {
            HeadInput::Pool => t.mean_pool(z),
            HeadInput::Flatten => t.reshape(z, &[n, self.head_features()]),
        }
    }

    fn trunk(&self, t: &mut Tape, b: &Bound, group: &str, z: Var) -> Result<Var> {
        let x = self.head_input(t, z)?;
        let x = linear(t, b, &format!("{group}.proj"), x)?;
        let x = t.layer_norm(x, b.var(&format!("{group}.norm.gamma"))?, b.var(&format!("{group}.norm.beta"))?)?;
        Ok(t.tanh(x))
    }

    fn check_rows(&self, t: &Tape, v: Var, n: usize, width: usize, what: &str) -> Result<()> {
        if t.shape(v) != [n, width] {
            return Err(Error::shape(format!("{what} [{n}, {width}]"), t.shape(v).to_vec()));
        }
        Ok(())
    }

    /// Policy head: returns `(mean, log_std)`, each `[N, A]`, with `log_std`
    /// smoothly squashed into `[log_std_min, log_std_max]`.
    pub fn actor_fwd(&self, t: &mut Tape, b: &Bound, z: Var, state: Var) -> Result<(Var, Var)> {
        let n = t.shape(z)[0];
        self.check_rows(t, state, n, self.state_dim, "robot state")?;
        let x = self.trunk(t, b, "actor", z)?;
        let x = t.concat(x, state)?;
        let x = linear(t, b, "actor.fc0", x)?;
        let x = t.relu(x);
        let x = linear(t, b, "actor.fc1", x)?;
        let x = t.relu(x);
        let out = linear(t, b, "actor.out", x)?;
        let a = self.action_dim;
        let mean = t.narrow(out, 0, a)?;
        let raw = t.narrow(out, a, a)?;
        let raw = t.tanh(raw);
        let (lo, hi) = (self.log_std_min as f32, self.log_std_max as f32);
        let half = 0.5 * (hi - lo);
        let log_std = t.scale(raw, half);
        let log_std = t.add_scalar(log_std, lo + half);
        Ok((mean, log_std))
    }

    /// Twin Q heads: returns `(q1, q2)`, each `[N, 1]`.
    pub fn critic_fwd(&self, t: &mut Tape, b: &Bound, z: Var, state: Var, action: Var) -> Result<(Var, Var)> {
        let n = t.shape(z)[0];
        self.check_rows(t, state, n, self.state_dim, "robot state")?;
        self.check_rows(t, action, n, self.action_dim, "action")?;
        let x = self.trunk(t, b, "critic", z)?;
        let x = t.concat(x, state)?;
        let x = t.concat(x, action)?;
        let mut qs = [x; 2];
        for (q, name) in qs.iter_mut().zip(["q1", "q2"]) {
            let h = linear(t, b, &format!("critic.{name}.fc0"), x)?;
            let h = t.relu(h);
            let h = linear(t, b, &format!("critic.{name}.fc1"), h)?;
            let h = t.relu(h);
            *q = linear(t, b, &format!("critic.{name}.out"), h)?;
        }
        Ok((qs[0], qs[1]))
    }
}

/// `lambda * mean|pred - tgt|`.
pub fn recon_loss_fwd(t: &mut Tape, pred: Var, tgt: Var, lambda: f32) -> Result<Var> {
    let d = t.sub(pred, tgt)?;
    let d = t.abs(d);
    let m = t.mean_all(d);
    Ok(t.scale(m, lambda))
}

fn conv_param(p: &mut ParamSet, rng: &mut impl Rng, name: &str, cin: usize, cout: usize, k: [usize; 3]) {
    let fan_in = cin * k.iter().product::<usize>();
    p.init_uniform(rng, &format!("{name}.w"), &[cout, cin, k[0], k[1], k[2]], fan_in);
    p.init_uniform(rng, &format!("{name}.b"), &[cout], fan_in);
}

fn convt_param(p: &mut ParamSet, rng: &mut impl Rng, name: &str, cin: usize, cout: usize, k: [usize; 3]) {
    let fan_in = cout * k.iter().product::<usize>();
    p.init_uniform(rng, &format!("{name}.w"), &[cin, cout, k[0], k[1], k[2]], fan_in);
    p.init_uniform(rng, &format!("{name}.b"), &[cout], fan_in);
}

fn linear_param(p: &mut ParamSet, rng: &mut impl Rng, name: &str, fin: usize, fout: usize) {
    p.init_uniform(rng, &format!("{name}.w"), &[fout, fin], fin);
    p.init_uniform(rng, &format!("{name}.b"), &[fout], fin);
}

fn norm_param(p: &mut ParamSet, name: &str, f: usize) {
    p.init_const(&format!("{name}.gamma"), &[f], 1.0);
    p.init_const(&format!("{name}.beta"), &[f], 0.0);
}

fn conv(t: &mut Tape, b: &Bound, name: &str, x: Var, stride: [usize; 3], pad: [usize; 3]) -> Result<Var> {
    t.conv(x, b.var(&format!("{name}.w"))?, b.var(&format!("{name}.b"))?, stride, pad)
}

fn convt(t: &mut Tape, b: &Bound, name: &str, x: Var, stride: [usize; 3], pad: [usize; 3]) -> Result<Var> {
    t.conv_transpose(x, b.var(&format!("{name}.w"))?, b.var(&format!("{name}.b"))?, stride, pad)
}

fn linear(t: &mut Tape, b: &Bound, name: &str, x: Var) -> Result<Var> {
    t.linear(x, b.var(&format!("{name}.w"))?, b.var(&format!("{name}.b"))?)
}

/// Encoder output for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl FeatureMap {
    fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() != 5 || s[0] != 1 || s[2] != 1 {
            return Err(Error::shape("[1, C, 1, H, W]", s.to_vec()));
        }
        Ok(Self {
            channels: s[1],
            height: s[3],
            width: s[4],
            values: t.data().to_vec(),
        })
    }

    fn to_tensor(&self) -> Result<Tensor> {
        Tensor::from_vec(&[1, self.channels, 1, self.height, self.width], self.values.clone())
    }
}

/// Squashed-Gaussian policy parameters for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub mean: Vec<f32>,
    pub log_std: Vec<f32>,
}

fn single_image(cfg: &NetConfig, img: &Image) -> Result<Tensor> {
    if img.dims() != (cfg.image_size, cfg.image_size) {
        return Err(Error::shape((cfg.image_size, cfg.image_size), img.dims()));
    }
    batch_to_tensor(&[img])
}

fn inference(params: &ParamSet) -> (Tape, Bound) {
    let mut t = Tape::new();
    let b = Bound::new(&mut t, params, |_| false);
    (t, b)
}

pub fn encode(cfg: &NetConfig, params: &ParamSet, img: &Image) -> Result<FeatureMap> {
    let (mut t, b) = inference(params);
    let x = t.constant(single_image(cfg, img)?);
    let z = cfg.encoder_fwd(&mut t, &b, x)?;
    FeatureMap::from_tensor(t.value(z))
}

pub fn lift(cfg: &NetConfig, params: &ParamSet, z: &FeatureMap) -> Result<VoxelGrid> {
    if !z.channels.is_multiple_of(cfg.depth_split) {
        return Err(Error::Divisibility {
            channels: z.channels,
            depth_split: cfg.depth_split,
        });
    }
    let (mut t, b) = inference(params);
    let x = t.constant(z.to_tensor()?);
    let v = cfg.lift_fwd(&mut t, &b, x)?;
    let s = t.value(v).shape().to_vec();
    VoxelGrid::from_values(s[1], s[2], s[3], s[4], t.value(v).data().to_vec())
}

pub fn decode(cfg: &NetConfig, params: &ParamSet, v: &VoxelGrid) -> Result<Image> {
    let (mut t, b) = inference(params);
    let (d, h, w) = v.dims();
    let x = t.constant(Tensor::from_vec(&[1, v.channels, d, h, w], v.values.clone())?);
    let img = cfg.decoder_fwd(&mut t, &b, x)?;
    Ok(tensor_to_batch(t.value(img))?.remove(0))
}

pub fn estimate_pose(cfg: &NetConfig, params: &ParamSet, src: &Image, tgt: &Image) -> Result<EulerPose> {
    let (mut t, b) = inference(params);
    let s = t.constant(single_image(cfg, src)?);
    let g = t.constant(single_image(cfg, tgt)?);
    let p = cfg.pose_fwd(&mut t, &b, s, g)?;
    let d = t.value(p).data();
    EulerPose::from_array(std::array::from_fn(|i| d[i] as f64))
}

pub fn reconstruct(cfg: &NetConfig, params: &ParamSet, src: &Image, tgt: &Image) -> Result<(Image, EulerPose)> {
    let (mut t, b) = inference(params);
    let s = t.constant(single_image(cfg, src)?);
    let g = t.constant(single_image(cfg, tgt)?);
    let (img, pose) = cfg.reconstruct_fwd(&mut t, &b, s, g)?;
    let d = t.value(pose).data();
    let pose = EulerPose::from_array(std::array::from_fn(|i| d[i] as f64))?;
    Ok((tensor_to_batch(t.value(img))?.remove(0), pose))
}

/// `lambda * mean|pred - tgt|`, accumulated in double precision.
pub fn recon_loss(pred: &Image, tgt: &Image, lambda: f64) -> Result<f64> {
    if pred.dims() != tgt.dims() {
        return Err(Error::shape(tgt.dims(), pred.dims()));
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(tgt.data())
        .map(|(a, b)| (*a as f64 - *b as f64).abs())
        .sum();
    Ok(lambda * sum / pred.data().len() as f64)
}

fn state_tensor(cfg: &NetConfig, state: &[f32]) -> Result<Tensor> {
    if state.len() != cfg.state_dim {
        return Err(Error::shape(cfg.state_dim, state.len()));
    }
    Tensor::from_vec(&[1, cfg.state_dim], state.to_vec())
}

pub fn policy_forward(cfg: &NetConfig, params: &ParamSet, z: &FeatureMap, state: &[f32]) -> Result<ActionDistribution> {
    let (mut t, b) = inference(params);
    let zt = t.constant(z.to_tensor()?);
    let st = t.constant(state_tensor(cfg, state)?);
    let (mean, log_std) = cfg.actor_fwd(&mut t, &b, zt, st)?;
    Ok(ActionDistribution {
        mean: t.value(mean).data().to_vec(),
        log_std: t.value(log_std).data().to_vec(),
    })
}

pub fn critic_forward(
    cfg: &NetConfig,
    params: &ParamSet,
    z: &FeatureMap,
    state: &[f32],
    action: &[f32],
) -> Result<(f32, f32)> {
    if action.len() != cfg.action_dim {
        return Err(Error::shape(cfg.action_dim, action.len()));
    }
    let (mut t, b) = inference(params);
    let zt = t.constant(z.to_tensor()?);
    let st = t.constant(state_tensor(cfg, state)?);
    let at = t.constant(Tensor::from_vec(&[1, cfg.action_dim], action.to_vec())?);
    let (q1, q2) = cfg.critic_fwd(&mut t, &b, zt, st, at)?;
    Ok((t.value(q1).item(), t.value(q2).item()))
}
