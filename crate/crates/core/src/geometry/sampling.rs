use nalgebra::Matrix3;

use super::rotation::{euler_rotation_jacobian, euler_to_rotation, EulerPose, RotationMatrix};
use crate::error::{Error, Result};

/// Deep voxel volume, stored channel-major as `[C][D][H][W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub channels: usize,
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl VoxelGrid {
    pub fn zeros(channels: usize, depth: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            depth,
            height,
            width,
            values: vec![0.0; channels * depth * height * width],
        }
    }

    pub fn from_values(
        channels: usize,
        depth: usize,
        height: usize,
        width: usize,
        values: Vec<f32>,
    ) -> Result<Self> {
        if channels == 0 || depth == 0 || height == 0 || width == 0 {
            return Err(Error::Precondition(format!(
                "voxel dims must be positive, got {channels}x{depth}x{height}x{width}"
            )));
        }
        let n = channels * depth * height * width;
        if values.len() != n {
            return Err(Error::shape(n, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("voxel values must be finite".into()));
        }
        Ok(Self {
            channels,
            depth,
            height,
            width,
            values,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.depth, self.height, self.width)
    }

    pub fn spatial_len(&self) -> usize {
        self.depth * self.height * self.width
    }

    pub fn index(&self, c: usize, d: usize, h: usize, w: usize) -> usize {
        ((c * self.depth + d) * self.height + h) * self.width + w
    }

    pub fn get(&self, c: usize, d: usize, h: usize, w: usize) -> f32 {
        self.values[self.index(c, d, h, w)]
    }
}

/// Source coordinates `(x, y, z)` for every output voxel, ordered `[D][H][W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub coords: Vec<[f32; 3]>,
}

impl SampleGrid {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.depth, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Normalized coordinate of lattice index `i` on an axis of `n` samples.
pub fn lattice_coord(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        let span = (n - 1) as f64;
        (2.0 * i as f64 - span) / span
    }
}

pub fn canonical_lattice(dims: (usize, usize, usize)) -> SampleGrid {
    affine_grid(&RotationMatrix::identity(), [0.0; 3], dims)
}

/// `grid[c] = R c + t` for each canonical lattice point `c`.
pub fn affine_grid(rot: &RotationMatrix, t: [f64; 3], dims: (usize, usize, usize)) -> SampleGrid {
    let (depth, height, width) = dims;
    let m = rot.matrix();
    let mut coords = Vec::with_capacity(depth * height * width);
    for d in 0..depth {
        let z = lattice_coord(d, depth);
        for h in 0..height {
            let y = lattice_coord(h, height);
            for w in 0..width {
                let x = lattice_coord(w, width);
                let mut out = [0f32; 3];
                for (r, o) in out.iter_mut().enumerate() {
                    *o = (m[(r, 0)] * x + m[(r, 1)] * y + m[(r, 2)] * z + t[r]) as f32;
                }
                coords.push(out);
            }
        }
    }
    SampleGrid {
        depth,
        height,
        width,
        coords,
    }
}

// Index-space offsets closer than this to a lattice line are treated as
// lying on it, so lattice-aligned grids reproduce voxel values exactly.
const LATTICE_SNAP: f32 = 1e-4;

#[derive(Clone, Copy)]
struct AxisTaps {
    idx: [usize; 2],
    weight: [f32; 2],
    dweight: [f32; 2],
    count: usize,
}

fn axis_taps(coord: f32, size: usize) -> AxisTaps {
    let mut taps = AxisTaps {
        idx: [0; 2],
        weight: [0.0; 2],
        dweight: [0.0; 2],
        count: 0,
    };
    if size == 1 {
        if coord.abs() <= 1.0 {
            taps.weight[0] = 1.0;
            taps.count = 1;
        }
        return taps;
    }
    let scale = 0.5 * (size - 1) as f32;
    let mut u = (coord + 1.0) * scale;
    let r = u.round();
    if (u - r).abs() < LATTICE_SNAP {
        u = r;
    }
    let base = u.floor();
    let frac = u - base;
    let i0 = base as i64;
    for (i, w, dw) in [(i0, 1.0 - frac, -scale), (i0 + 1, frac, scale)] {
        if i >= 0 && (i as usize) < size {
            let slot = taps.count;
            taps.idx[slot] = i as usize;
            taps.weight[slot] = w;
            taps.dweight[slot] = dw;
            taps.count += 1;
        }
    }
    taps
}

pub(crate) struct VolumeShape {
    pub channels: usize,
    pub depth: usize,
    pub height: usize,
    pub width: usize,
}

impl VolumeShape {
    fn spatial(&self) -> usize {
        self.depth * self.height * self.width
    }
}

pub(crate) fn sample_slice(vol: &[f32], shape: &VolumeShape, grid: &[[f32; 3]], out: &mut [f32]) {
    let n_out = grid.len();
    let sp = shape.spatial();
    let hw = shape.height * shape.width;
    for (o, p) in grid.iter().enumerate() {
        let tx = axis_taps(p[0], shape.width);
        let ty = axis_taps(p[1], shape.height);
        let tz = axis_taps(p[2], shape.depth);
        for c in 0..shape.channels {
            out[c * n_out + o] = 0.0;
        }
        for a in 0..tz.count {
            for b in 0..ty.count {
                let wzy = tz.weight[a] * ty.weight[b];
                let base_zy = tz.idx[a] * hw + ty.idx[b] * shape.width;
                for e in 0..tx.count {
                    let w = wzy * tx.weight[e];
                    let src = base_zy + tx.idx[e];
                    for c in 0..shape.channels {
                        out[c * n_out + o] += w * vol[c * sp + src];
                    }
                }
            }
        }
    }
}

/// Accumulates gradients into `grad_vol` and writes `grad_grid`.
pub(crate) fn sample_backward_slice(
    vol: &[f32],
    shape: &VolumeShape,
    grid: &[[f32; 3]],
    upstream: &[f32],
    grad_vol: &mut [f32],
    grad_grid: &mut [[f32; 3]],
) {
    let n_out = grid.len();
    let sp = shape.spatial();
    let hw = shape.height * shape.width;
    for (o, p) in grid.iter().enumerate() {
        let tx = axis_taps(p[0], shape.width);
        let ty = axis_taps(p[1], shape.height);
        let tz = axis_taps(p[2], shape.depth);
        let mut g = [0f32; 3];
        for a in 0..tz.count {
            for b in 0..ty.count {
                let base_zy = tz.idx[a] * hw + ty.idx[b] * shape.width;
                for e in 0..tx.count {
                    let src = base_zy + tx.idx[e];
                    let w = tz.weight[a] * ty.weight[b] * tx.weight[e];
                    let dwx = tz.weight[a] * ty.weight[b] * tx.dweight[e];
                    let dwy = tz.weight[a] * ty.dweight[b] * tx.weight[e];
                    let dwz = tz.dweight[a] * ty.weight[b] * tx.weight[e];
                    let mut dot = 0f32;
                    for c in 0..shape.channels {
                        let up = upstream[c * n_out + o];
                        grad_vol[c * sp + src] += w * up;
                        dot += up * vol[c * sp + src];
                    }
                    g[0] += dwx * dot;
                    g[1] += dwy * dot;
                    g[2] += dwz * dot;
                }
            }
        }
        grad_grid[o] = g;
    }
}

/// Trilinear resampling of `volume` at the grid's source coordinates with zero
/// padding outside `[-1, 1]^3`.
pub fn trilinear_sample(volume: &VoxelGrid, grid: &SampleGrid) -> VoxelGrid {
    let shape = VolumeShape {
        channels: volume.channels,
        depth: volume.depth,
        height: volume.height,
        width: volume.width,
    };
    let mut out = VoxelGrid::zeros(volume.channels, grid.depth, grid.height, grid.width);
    sample_slice(&volume.values, &shape, &grid.coords, &mut out.values);
    out
}

/// Analytic gradients of [`trilinear_sample`] with respect to the volume and
/// the grid coordinates. On interpolation-cell boundaries the grid gradient is
/// the right-sided derivative.
pub fn trilinear_sample_backward(
    volume: &VoxelGrid,
    grid: &SampleGrid,
    upstream: &VoxelGrid,
) -> Result<(VoxelGrid, Vec<[f32; 3]>)> {
    if upstream.channels != volume.channels || upstream.dims() != grid.dims() {
        return Err(Error::shape(
            (volume.channels, grid.dims()),
            (upstream.channels, upstream.dims()),
        ));
    }
    let shape = VolumeShape {
        channels: volume.channels,
        depth: volume.depth,
        height: volume.height,
        width: volume.width,
    };
    let mut grad_vol = VoxelGrid::zeros(volume.channels, volume.depth, volume.height, volume.width);
    let mut grad_grid = vec![[0f32; 3]; grid.len()];
    sample_backward_slice(
        &volume.values,
        &shape,
        &grid.coords,
        &upstream.values,
        &mut grad_vol.values,
        &mut grad_grid,
    );
    Ok((grad_vol, grad_grid))
}

/// `V_hat = T_{R,t}(V)`: rotate and translate the volume, output dims equal input dims.
pub fn warp_voxels(volume: &VoxelGrid, pose: &EulerPose) -> VoxelGrid {
    let grid = affine_grid(&euler_to_rotation(pose), pose.translation(), volume.dims());
    trilinear_sample(volume, &grid)
}

/// Chain rule from grid-coordinate gradients to the six pose parameters.
pub fn pose_grad_from_grid(
    pose: &EulerPose,
    grad_grid: &[[f32; 3]],
    dims: (usize, usize, usize),
) -> [f64; 6] {
    let (depth, height, width) = dims;
    let mut grad_r = Matrix3::<f64>::zeros();
    let mut grad_t = [0f64; 3];
    let mut o = 0;
    for d in 0..depth {
        let z = lattice_coord(d, depth);
        for h in 0..height {
            let y = lattice_coord(h, height);
            for w in 0..width {
                let x = lattice_coord(w, width);
                let g = grad_grid[o];
                o += 1;
                let c = [x, y, z];
                for r in 0..3 {
                    let gr = g[r] as f64;
                    grad_t[r] += gr;
                    for (k, ck) in c.iter().enumerate() {
                        grad_r[(r, k)] += gr * ck;
                    }
                }
            }
        }
    }
    let jac = euler_rotation_jacobian(pose);
    let mut out = [0f64; 6];
    for (k, j) in jac.iter().enumerate() {
        out[k] = grad_r.component_mul(j).sum();
    }
    out[3..].copy_from_slice(&grad_t);
    out
}

/// Gradients of [`warp_voxels`] with respect to the volume and the pose.
pub fn warp_voxels_backward(
    volume: &VoxelGrid,
    pose: &EulerPose,
    upstream: &VoxelGrid,
) -> Result<(VoxelGrid, [f64; 6])> {
    let grid = affine_grid(&euler_to_rotation(pose), pose.translation(), volume.dims());
    let (grad_vol, grad_grid) = trilinear_sample_backward(volume, &grid, upstream)?;
    let grad_pose = pose_grad_from_grid(pose, &grad_grid, volume.dims());
    Ok((grad_vol, grad_pose))
}
