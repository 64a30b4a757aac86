use rand::Rng;

use crate::image::Image;

/// One draw of the shift-and-jitter augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Content displacement in pixels along x and y.
    pub dx: i32,
    pub dy: i32,
    /// Additive brightness offset.
    pub brightness: f32,
    /// Contrast factor about the image mean.
    pub contrast: f32,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        dx: 0,
        dy: 0,
        brightness: 0.0,
        contrast: 1.0,
    };

    /// Offsets uniform in `[-max_shift, max_shift]`, brightness in
    /// `[-0.2, 0.2]` and contrast in `[0.8, 1.2]`.
    pub fn sample(rng: &mut impl Rng, max_shift: i32) -> Self {
        Self {
            dx: rng.random_range(-max_shift..=max_shift),
            dy: rng.random_range(-max_shift..=max_shift),
            brightness: rng.random_range(-0.2..=0.2),
            contrast: rng.random_range(0.8..=1.2),
        }
    }

    /// Shift with replicate padding, then jitter, then clip to `[0, 1]`.
    pub fn apply(&self, img: &Image) -> Image {
        let (h, w) = img.dims();
        let mut out = Image::new(h, w);
        let clampi = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
        for y in 0..h {
            let sy = clampi(y as i64 - self.dy as i64, h);
            for x in 0..w {
                let sx = clampi(x as i64 - self.dx as i64, w);
                out.set(y, x, [img.get(sy, sx, 0), img.get(sy, sx, 1), img.get(sy, sx, 2)]);
            }
        }
        if self.brightness != 0.0 || self.contrast != 1.0 {
            let n = out.data().len() as f64;
            let mean = (out.data().iter().map(|&v| v as f64).sum::<f64>() / n) as f32;
            for v in out.data_mut() {
                *v = (*v - mean) * self.contrast + mean + self.brightness;
            }
        }
        for v in out.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        out
    }
}

/// Random `±max_shift` shift plus color jitter.
pub fn augment(img: &Image, rng: &mut impl Rng, max_shift: i32) -> Image {
    AugmentParams::sample(rng, max_shift).apply(img)
}
