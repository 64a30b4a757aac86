#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxrep::geometry::{euler_to_rotation, lattice_coord, EulerPose, VoxelGrid};
use voxrep::nets::{NetConfig, ParamSet};
use voxrep::rl::{standard_normal, Batch, StoredTransition};
use voxrep::tensor::Tensor;

pub fn random_volume(rng: &mut ChaCha8Rng, c: usize, n: usize) -> VoxelGrid {
    let values = (0..c * n * n * n).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    VoxelGrid::from_values(c, n, n, n, values).unwrap()
}

/// Coordinates at least `margin` away from every lattice plane of an `n`
/// sample axis and from the padding boundary.
pub fn off_lattice(rng: &mut ChaCha8Rng, n: usize, margin: f32) -> f32 {
    loop {
        let v = rng.random_range(-0.98f32..0.98);
        let near = (0..n).any(|i| (v as f64 - lattice_coord(i, n)).abs() < margin as f64);
        if !near {
            return v;
        }
    }
}

pub fn weighted_sum(out: &VoxelGrid, up: &VoxelGrid) -> f64 {
    out.values.iter().zip(&up.values).map(|(a, b)| *a as f64 * *b as f64).sum()
}

/// `max |a - b| / max |b|` over the whole gradient.
pub fn rel_err(analytic: &[f64], fd: &[f64]) -> f64 {
    let diff = analytic.iter().zip(fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = fd.iter().map(|b| b.abs()).fold(0.0, f64::max);
    diff / scale
}

pub fn points(seed: u64, n: usize) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| [0; 3].map(|_| rng.random_range(-1.0..1.0))).collect()
}

pub fn similarity(p: &[[f64; 3]], s: f64, pose: &EulerPose, t: [f64; 3]) -> Vec<[f64; 3]> {
    let r = euler_to_rotation(pose);
    p.iter()
        .map(|x| {
            let y = r.apply(*x);
            std::array::from_fn(|i| s * y[i] + t[i])
        })
        .collect()
}

pub fn random_stored(rng: &mut ChaCha8Rng, size: usize, action_dim: usize, done: bool) -> StoredTransition {
    let view = |rng: &mut ChaCha8Rng| (0..size * size * 3).map(|_| rng.random::<u8>()).collect::<Vec<u8>>();
    let vec = |rng: &mut ChaCha8Rng, n: usize| (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect::<Vec<_>>();
    StoredTransition {
        static_view: view(rng),
        dynamic_view: view(rng),
        phi_d: 10.0,
        state: vec(rng, 4),
        action: vec(rng, action_dim),
        reward: rng.random_range(-1.0..1.0),
        next_static_view: view(rng),
        next_state: vec(rng, 4),
        done,
    }
}

/// Tiny networks, a distinct target network and `n` random transitions.
pub struct SacFixture {
    pub cfg: NetConfig,
    pub params: ParamSet,
    pub target: ParamSet,
    pub items: Vec<StoredTransition>,
    pub batch: Batch,
    pub eps: Tensor,
}

pub fn sac_fixture(n: usize, action_dim: usize, seed: u64) -> SacFixture {
    use voxrep::nets::Group;
    let cfg = NetConfig::tiny(action_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = cfg.init_params(&mut rng).unwrap();
    let target = cfg
        .init_params(&mut rng)
        .unwrap()
        .subset(|g| matches!(g, Group::Encoder | Group::Critic));
    let items: Vec<_> = (0..n)
        .map(|i| random_stored(&mut rng, cfg.image_size, action_dim, i % 3 == 2))
        .collect();
    let refs: Vec<_> = items.iter().collect();
    let batch = Batch::from_stored(&refs, cfg.image_size, &mut rng, None).unwrap();
    let eps = Tensor::from_vec(&[n, action_dim], standard_normal(&mut rng, n * action_dim)).unwrap();
    SacFixture {
        cfg,
        params,
        target,
        items,
        batch,
        eps,
    }
}
