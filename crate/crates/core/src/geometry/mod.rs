//! Differentiable 3D math used by the voxel warp and by pose evaluation.
//!
//! Conventions shared by every function in this module:
//!
//! * Volumes span `[-1, 1]` on each axis with voxel centers on the lattice
//!   points, so index `i` of an axis with `n > 1` samples sits at
//!   `-1 + 2i / (n - 1)`. An axis of size one sits at `0`.
//! * Sample grids store *source* coordinates as `(x, y, z)` where `x` runs
//!   along width, `y` along height and `z` along depth.
//! * Euler angles are intrinsic X, then Y, then Z, in radians:
//!   `R = Rx(alpha) * Ry(beta) * Rz(gamma)`.
//! * Sampling outside the volume reads zeros.

mod align;
mod rotation;
mod sampling;

pub use align::{aligned_pose_rmse, umeyama_align, SimilarityTransform};
pub use rotation::{euler_rotation_jacobian, euler_to_rotation, EulerPose, RotationMatrix};
pub use sampling::{
    affine_grid, canonical_lattice, lattice_coord, pose_grad_from_grid, trilinear_sample,
    trilinear_sample_backward, warp_voxels, warp_voxels_backward, SampleGrid, VoxelGrid,
};

pub(crate) use sampling::{sample_backward_slice as sample_backward_into, sample_slice as sample_into};

pub(crate) fn sampling_shape(channels: usize, depth: usize, height: usize, width: usize) -> sampling::VolumeShape {
    sampling::VolumeShape {
        channels,
        depth,
        height,
        width,
    }
}
