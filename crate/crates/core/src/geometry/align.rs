use nalgebra::{Matrix3, Vector3};

use super::rotation::RotationMatrix;
use crate::error::{Error, Result};

/// `p -> scale * R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: RotationMatrix,
    pub translation: [f64; 3],
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: RotationMatrix::identity(),
            translation: [0.0; 3],
        }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = self.rotation.apply(p);
        std::array::from_fn(|i| self.scale * r[i] + self.translation[i])
    }
}

// Second singular value of the source covariance, relative to the first,
// below which the points are treated as collinear.
const RANK_TOLERANCE: f64 = 1e-10;

fn check_inputs(src: &[[f64; 3]], tgt: &[[f64; 3]]) -> Result<()> {
    if src.len() != tgt.len() {
        return Err(Error::shape(src.len(), tgt.len()));
    }
    if src.len() < 3 {
        return Err(Error::Precondition(format!(
            "alignment needs at least 3 points, got {}",
            src.len()
        )));
    }
    if src.iter().chain(tgt).flatten().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("non-finite trajectory point".into()));
    }
    Ok(())
}

fn mean(points: &[[f64; 3]]) -> Vector3<f64> {
    let mut m = Vector3::zeros();
    for p in points {
        m += Vector3::from(*p);
    }
    m / points.len() as f64
}

/// Closed-form least-squares similarity transform mapping `src` onto `tgt`
/// (minimizes `sum |tgt_i - (s R src_i + t)|^2`).
pub fn umeyama_align(src: &[[f64; 3]], tgt: &[[f64; 3]]) -> Result<SimilarityTransform> {
    check_inputs(src, tgt)?;
    let n = src.len() as f64;
    let mu_src = mean(src);
    let mu_tgt = mean(tgt);

    let mut cov_src = Matrix3::<f64>::zeros();
    let mut cov_cross = Matrix3::<f64>::zeros();
    let mut var_src = 0.0;
    for (s, t) in src.iter().zip(tgt) {
        let ds = Vector3::from(*s) - mu_src;
        let dt = Vector3::from(*t) - mu_tgt;
        cov_src += ds * ds.transpose();
        cov_cross += dt * ds.transpose();
        var_src += ds.norm_squared();
    }
    cov_src /= n;
    cov_cross /= n;
    var_src /= n;

    let sv = cov_src.singular_values();
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if sorted[0] <= f64::MIN_POSITIVE || sorted[1] <= RANK_TOLERANCE * sorted[0] {
        return Err(Error::DegenerateConfiguration(
            "source points are collinear or coincident".into(),
        ));
    }

    let svd = cov_cross.svd(true, true);
    let u = svd.u.expect("svd computed with u");
    let v_t = svd.v_t.expect("svd computed with v_t");
    let mut sign = Matrix3::<f64>::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        sign[(2, 2)] = -1.0;
    }
    // nalgebra does not order singular values, so the reflection fix must hit
    // the smallest one.
    let d = svd.singular_values;
    let smallest = (0..3).min_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap();
    if sign[(2, 2)] < 0.0 && smallest != 2 {
        sign[(2, 2)] = 1.0;
        sign[(smallest, smallest)] = -1.0;
    }
    let rotation = u * sign * v_t;
    let trace: f64 = (0..3).map(|i| d[i] * sign[(i, i)]).sum();
    let scale = trace / var_src;
    let t = mu_tgt - scale * rotation * mu_src;
    Ok(SimilarityTransform {
        scale,
        rotation: RotationMatrix(rotation),
        translation: [t[0], t[1], t[2]],
    })
}

/// RMSE of point distances after aligning `pred` onto `gt` with [`umeyama_align`].
pub fn aligned_pose_rmse(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<f64> {
    let sim = umeyama_align(pred, gt)?;
    let sq: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let a = sim.apply(*p);
            (0..3).map(|i| (a[i] - g[i]).powi(2)).sum::<f64>()
        })
        .sum();
    Ok((sq / pred.len() as f64).sqrt())
}
