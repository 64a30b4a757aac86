mod common;

use common::{off_lattice, points, random_volume, rel_err, similarity, weighted_sum};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxrep::geometry::{
    affine_grid, aligned_pose_rmse, canonical_lattice, euler_to_rotation, lattice_coord, trilinear_sample,
    trilinear_sample_backward, umeyama_align, warp_voxels, warp_voxels_backward, EulerPose, RotationMatrix,
    SampleGrid, VoxelGrid,
};

#[test]
fn sampler_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 4;
    let vol = random_volume(&mut rng, 2, n);
    let coords: Vec<[f32; 3]> = (0..n * n * n)
        .map(|_| [0; 3].map(|_| off_lattice(&mut rng, n, 0.01)))
        .collect();
    let grid = SampleGrid {
        depth: n,
        height: n,
        width: n,
        coords,
    };
    let up = random_volume(&mut rng, 2, n);
    let (gv, gg) = trilinear_sample_backward(&vol, &grid, &up).unwrap();
    let h = 1e-3f32;

    let (mut an, mut num) = (Vec::new(), Vec::new());
    for i in 0..vol.values.len() {
        let mut plus = vol.clone();
        plus.values[i] += h;
        let mut minus = vol.clone();
        minus.values[i] -= h;
        let fd = (weighted_sum(&trilinear_sample(&plus, &grid), &up)
            - weighted_sum(&trilinear_sample(&minus, &grid), &up))
            / (2.0 * h as f64);
        an.push(gv.values[i] as f64);
        num.push(fd);
    }
    let vol_err = rel_err(&an, &num);
    let (mut an, mut num) = (Vec::new(), Vec::new());
    for p in 0..grid.len() {
        for k in 0..3 {
            let mut plus = grid.clone();
            plus.coords[p][k] += h;
            let mut minus = grid.clone();
            minus.coords[p][k] -= h;
            let fd = (weighted_sum(&trilinear_sample(&vol, &plus), &up)
                - weighted_sum(&trilinear_sample(&vol, &minus), &up))
                / (2.0 * h as f64);
            an.push(gg[p][k] as f64);
            num.push(fd);
        }
    }
    let grid_err = rel_err(&an, &num);
    assert!(vol_err < 1e-3 && grid_err < 1e-3, "volume {vol_err}, grid {grid_err}");
}

#[test]
fn warp_volume_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let vol = random_volume(&mut rng, 2, 4);
    let up = random_volume(&mut rng, 2, 4);
    let pose = EulerPose::new(0.3, -0.2, 0.1, [0.05, -0.1, 0.02]).unwrap();
    let (gv, _) = warp_voxels_backward(&vol, &pose, &up).unwrap();
    let h = 1e-3f32;
    let fd: Vec<f64> = (0..vol.values.len())
        .map(|i| {
            let mut plus = vol.clone();
            plus.values[i] += h;
            let mut minus = vol.clone();
            minus.values[i] -= h;
            (weighted_sum(&warp_voxels(&plus, &pose), &up) - weighted_sum(&warp_voxels(&minus, &pose), &up))
                / (2.0 * h as f64)
        })
        .collect();
    let an: Vec<f64> = gv.values.iter().map(|&v| v as f64).collect();
    assert!(rel_err(&an, &fd) < 1e-3);
}

#[test]
fn grids_compose_under_matrix_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dims = (3, 4, 5);
    for _ in 0..20 {
        let angles = |rng: &mut ChaCha8Rng| {
            let v: [f64; 6] = std::array::from_fn(|i| if i < 3 { rng.random_range(-3.0..3.0) } else { rng.random_range(-0.5..0.5) });
            EulerPose::from_array(v).unwrap()
        };
        let (p1, p2) = (angles(&mut rng), angles(&mut rng));
        let (r1, r2) = (euler_to_rotation(&p1), euler_to_rotation(&p2));
        let (t1, t2) = (p1.translation(), p2.translation());
        let g1 = affine_grid(&r1, t1, dims);
        let r21 = r2.compose(&r1);
        let r2t1 = r2.apply(t1);
        let t21: [f64; 3] = std::array::from_fn(|i| r2t1[i] + t2[i]);
        let g21 = affine_grid(&r21, t21, dims);
        for (a, b) in g1.coords.iter().zip(&g21.coords) {
            let a64 = a.map(|v| v as f64);
            let r = r2.apply(a64);
            for k in 0..3 {
                assert!((r[k] + t2[k] - b[k] as f64).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn identity_grid_is_bit_exact_lattice() {
    let g = affine_grid(&RotationMatrix::identity(), [0.0; 3], (3, 5, 2));
    assert_eq!(g, canonical_lattice((3, 5, 2)));
    for (i, c) in g.coords.iter().enumerate() {
        let (d, rem) = (i / 10, i % 10);
        let (h, w) = (rem / 2, rem % 2);
        assert_eq!(c, &[lattice_coord(w, 2) as f32, lattice_coord(h, 5) as f32, lattice_coord(d, 3) as f32]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rotations_are_proper(a in -10.0f64..10.0, b in -10.0f64..10.0, c in -10.0f64..10.0) {
        let r = euler_to_rotation(&EulerPose::new(a, b, c, [0.0; 3]).unwrap());
        prop_assert!(r.orthonormality_error() < 1e-6);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sampler_is_linear(seed in 0u64..1000, a in -2.0f32..2.0, b in -2.0f32..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_volume(&mut rng, 2, 3);
        let w = random_volume(&mut rng, 2, 3);
        let coords = (0..27).map(|_| [0; 3].map(|_| rng.random_range(-1.3f32..1.3))).collect();
        let grid = SampleGrid { depth: 3, height: 3, width: 3, coords };
        let mix = VoxelGrid::from_values(2, 3, 3, 3, u.values.iter().zip(&w.values).map(|(x, y)| a * x + b * y).collect()).unwrap();
        let (su, sw, sm) = (trilinear_sample(&u, &grid), trilinear_sample(&w, &grid), trilinear_sample(&mix, &grid));
        for i in 0..sm.values.len() {
            prop_assert!((sm.values[i] - (a * su.values[i] + b * sw.values[i])).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_pose_warp_is_identity(seed in 0u64..1000, t in prop::array::uniform3(-1.0f64..1.0)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = random_volume(&mut rng, 1, 4);
        prop_assert_eq!(warp_voxels(&v, &EulerPose::new(0.0, 0.0, 0.0, [0.0; 3]).unwrap()), v.clone());
        let _ = t;
    }

    #[test]
    fn umeyama_recovers_exact_similarities(
        seed in 0u64..1000,
        s in 0.2f64..5.0,
        ang in prop::array::uniform3(-3.0f64..3.0),
        t in prop::array::uniform3(-5.0f64..5.0),
    ) {
        let src = points(seed, 12);
        let pose = EulerPose::new(ang[0], ang[1], ang[2], [0.0; 3]).unwrap();
        let tgt = similarity(&src, s, &pose, t);
        let sim = umeyama_align(&src, &tgt).unwrap();
        prop_assert!((sim.scale - s).abs() < 1e-6);
        for i in 0..3 {
            prop_assert!((sim.translation[i] - t[i]).abs() < 1e-6);
        }
        prop_assert!(aligned_pose_rmse(&src, &tgt).unwrap() < 1e-6);
    }

    #[test]
    fn aligned_rmse_ignores_similarities_of_the_prediction(
        seed in 0u64..1000,
        s in 0.2f64..5.0,
        ang in prop::array::uniform3(-3.0f64..3.0),
        t in prop::array::uniform3(-5.0f64..5.0),
    ) {
        let gt = points(seed, 10);
        let pred = points(seed + 1, 10);
        let base = aligned_pose_rmse(&pred, &gt).unwrap();
        let pose = EulerPose::new(ang[0], ang[1], ang[2], [0.0; 3]).unwrap();
        let moved = similarity(&pred, s, &pose, t);
        prop_assert!((aligned_pose_rmse(&moved, &gt).unwrap() - base).abs() < 1e-6);
    }
}
