//! Flat-shaded, z-buffered triangle rasterizer with a perspective camera.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

pub const BACKGROUND: [f32; 3] = [0.78, 0.80, 0.84];

/// Orbit camera looking at `look_at` with world `z` up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub azimuth: f64,
    pub elevation: f64,
    pub radius: f64,
    pub look_at: [f64; 3],
    /// Vertical field of view in degrees.
    pub fov: f64,
}

impl CameraSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.azimuth, self.elevation, self.radius, self.fov]
            .iter()
            .chain(&self.look_at)
            .all(|v| v.is_finite());
        if !finite || self.radius <= 0.0 || !(self.fov > 0.0 && self.fov < 180.0) {
            return Err(Error::Precondition(format!("invalid camera {self:?}")));
        }
        if self.elevation.abs() >= 90.0 {
            return Err(Error::Precondition("camera elevation must lie in (-90, 90)".into()));
        }
        Ok(())
    }

    pub fn position(&self) -> [f64; 3] {
        let (az, el) = (self.azimuth.to_radians(), self.elevation.to_radians());
        [
            self.look_at[0] + self.radius * el.cos() * az.cos(),
            self.look_at[1] + self.radius * el.cos() * az.sin(),
            self.look_at[2] + self.radius * el.sin(),
        ]
    }

    /// Orthonormal `(right, up, forward)` basis.
    fn basis(&self) -> [[f64; 3]; 3] {
        let p = self.position();
        let f = normalize(sub(self.look_at, p));
        let r = normalize(cross(f, [0.0, 0.0, 1.0]));
        let u = cross(r, f);
        [r, u, f]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    /// Box with half extents, rotated by `yaw` radians about world `z`.
    Cuboid { half: [f64; 3], yaw: f64 },
    Sphere { radius: f64 },
    /// Square-based pyramid standing on its base.
    Pyramid { half_base: f64, height: f64, yaw: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub center: [f64; 3],
    pub color: [f32; 3],
    /// Period of a 3D checker pattern modulating brightness; `None` is plain.
    pub checker: Option<f64>,
}

struct Triangle {
    v: [[f64; 3]; 3],
    color: [f32; 3],
    checker: Option<f64>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

fn yawed(p: [f64; 3], yaw: f64, c: [f64; 3]) -> [f64; 3] {
    let (s, co) = yaw.sin_cos();
    [c[0] + co * p[0] - s * p[1], c[1] + s * p[0] + co * p[1], c[2] + p[2]]
}

fn push_quad(out: &mut Vec<[[f64; 3]; 3]>, a: [f64; 3], b: [f64; 3], c: [f64; 3], d: [f64; 3]) {
    out.push([a, b, c]);
    out.push([a, c, d]);
}

fn tessellate(p: &Primitive) -> Vec<Triangle> {
    let mut tris = Vec::new();
    match p.shape {
        Shape::Cuboid { half, yaw } => {
            let corner = |i: usize| {
                let s = |bit: usize| if i >> bit & 1 == 1 { 1.0 } else { -1.0 };
                yawed([s(0) * half[0], s(1) * half[1], s(2) * half[2]], yaw, p.center)
            };
            let faces = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
            for f in faces {
                push_quad(&mut tris, corner(f[0]), corner(f[1]), corner(f[2]), corner(f[3]));
            }
        }
        Shape::Sphere { radius } => {
            let (rings, segs) = (6, 10);
            let pt = |i: usize, j: usize| {
                let th = std::f64::consts::PI * i as f64 / rings as f64;
                let ph = 2.0 * std::f64::consts::PI * j as f64 / segs as f64;
                [
                    p.center[0] + radius * th.sin() * ph.cos(),
                    p.center[1] + radius * th.sin() * ph.sin(),
                    p.center[2] + radius * th.cos(),
                ]
            };
            for i in 0..rings {
                for j in 0..segs {
                    push_quad(&mut tris, pt(i, j), pt(i + 1, j), pt(i + 1, j + 1), pt(i, j + 1));
                }
            }
        }
        Shape::Pyramid { half_base, height, yaw } => {
            let b = |x: f64, y: f64| yawed([x * half_base, y * half_base, -0.5 * height], yaw, p.center);
            let apex = [p.center[0], p.center[1], p.center[2] + 0.5 * height];
            let base = [b(-1.0, -1.0), b(1.0, -1.0), b(1.0, 1.0), b(-1.0, 1.0)];
            push_quad(&mut tris, base[0], base[3], base[2], base[1]);
            for k in 0..4 {
                tris.push([base[k], base[(k + 1) % 4], apex]);
            }
        }
    }
    tris.into_iter()
        .map(|v| Triangle {
            v,
            color: p.color,
            checker: p.checker,
        })
        .collect()
}

const LIGHT: [f64; 3] = [0.40824829046386296, -0.40824829046386296, 0.8164965809277261];
const NEAR: f64 = 1e-3;

/// Renders `prims` from `cam` into a `size x size` image.
pub fn render_primitives(prims: &[Primitive], cam: &CameraSpec, size: usize) -> Image {
    let mut img = Image::filled(size, size, BACKGROUND);
    let mut depth = vec![f64::INFINITY; size * size];
    let eye = cam.position();
    let [r, u, f] = cam.basis();
    let focal = 0.5 * size as f64 / (0.5 * cam.fov.to_radians()).tan();
    let half = 0.5 * size as f64;
    for prim in prims {
        for tri in tessellate(prim) {
            let normal = normalize(cross(sub(tri.v[1], tri.v[0]), sub(tri.v[2], tri.v[0])));
            let cam_rel: Vec<[f64; 3]> = tri.v.iter().map(|v| sub(*v, eye)).collect();
            // Two-sided: flip the normal toward the viewer.
            let n = if dot(normal, cam_rel[0]) > 0.0 { [-normal[0], -normal[1], -normal[2]] } else { normal };
            let shade = (0.45 + 0.55 * dot(n, LIGHT).max(0.0)) as f32;
            let mut sx = [0.0; 3];
            let mut sy = [0.0; 3];
            let mut inv_z = [0.0; 3];
            let mut culled = false;
            for k in 0..3 {
                let z = dot(cam_rel[k], f);
                if z < NEAR {
                    culled = true;
                    break;
                }
                sx[k] = half + focal * dot(cam_rel[k], r) / z;
                sy[k] = half - focal * dot(cam_rel[k], u) / z;
                inv_z[k] = 1.0 / z;
            }
            if culled {
                continue;
            }
            let area = (sx[1] - sx[0]) * (sy[2] - sy[0]) - (sx[2] - sx[0]) * (sy[1] - sy[0]);
            if area.abs() < 1e-12 {
                continue;
            }
            let x0 = sx.iter().cloned().fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
            let x1 = (sx.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ceil() as isize).min(size as isize - 1);
            let y0 = sy.iter().cloned().fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
            let y1 = (sy.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ceil() as isize).min(size as isize - 1);
            if x1 < 0 || y1 < 0 {
                continue;
            }
            for py in y0..=y1 as usize {
                for px in x0..=x1 as usize {
                    let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
                    let mut w = [0.0; 3];
                    for k in 0..3 {
                        let (a, b) = ((k + 1) % 3, (k + 2) % 3);
                        w[k] = ((sx[b] - sx[a]) * (cy - sy[a]) - (cx - sx[a]) * (sy[b] - sy[a])) / area;
                    }
                    if w.iter().any(|&wk| wk < 0.0) {
                        continue;
                    }
                    let iz = w[0] * inv_z[0] + w[1] * inv_z[1] + w[2] * inv_z[2];
                    let z = 1.0 / iz;
                    let idx = py * size + px;
                    if z >= depth[idx] {
                        continue;
                    }
                    depth[idx] = z;
                    let mut c = shade;
                    if let Some(period) = tri.checker {
                        // Perspective-correct world position for the pattern.
                        let mut wp = [0.0; 3];
                        for k in 0..3 {
                            let wk = w[k] * inv_z[k] * z;
                            for (a, o) in wp.iter_mut().enumerate() {
                                *o += wk * tri.v[k][a];
                            }
                        }
                        let parity: i64 = wp.iter().map(|v| (v / period).floor() as i64).sum();
                        if parity.rem_euclid(2) == 1 {
                            c *= 0.7;
                        }
                    }
                    img.set(py, px, tri.color.map(|ch| (ch * c).clamp(0.0, 1.0)));
                }
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraSpec {
        CameraSpec {
            azimuth: -90.0,
            elevation: 30.0,
            radius: 1.0,
            look_at: [0.0; 3],
            fov: 50.0,
        }
    }

    fn cube(center: [f64; 3]) -> Primitive {
        Primitive {
            shape: Shape::Cuboid { half: [0.05; 3], yaw: 0.0 },
            center,
            color: [0.1, 0.8, 0.1],
            checker: None,
        }
    }

    fn green_centroid(img: &Image) -> (f64, f64) {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for y in 0..img.height() {
            for x in 0..img.width() {
                if img.get(y, x, 1) > 0.3 && img.get(y, x, 0) < 0.2 {
                    sx += x as f64;
                    sy += y as f64;
                    n += 1.0;
                }
            }
        }
        assert!(n > 0.0, "no green pixels");
        (sx / n, sy / n)
    }

    #[test]
    fn empty_scene_is_uniform_background() {
        let img = render_primitives(&[], &cam(), 16);
        assert_eq!(img, Image::filled(16, 16, BACKGROUND));
    }

    #[test]
    fn cube_moves_left_in_image_when_moved_left_in_world() {
        // Camera at -y looking toward +y: world -x is image left.
        let a = render_primitives(&[cube([0.0, 0.0, 0.0])], &cam(), 48);
        let b = render_primitives(&[cube([-0.15, 0.0, 0.0])], &cam(), 48);
        assert!(green_centroid(&b).0 < green_centroid(&a).0 - 1.0);
        let c = render_primitives(&[cube([0.0, 0.0, 0.15])], &cam(), 48);
        assert!(green_centroid(&c).1 < green_centroid(&a).1 - 1.0);
    }

    #[test]
    fn nearer_surface_wins_depth_test() {
        let mut red = cube([0.0, 0.2, 0.0]);
        red.color = [0.9, 0.1, 0.1];
        red.shape = Shape::Cuboid { half: [0.2; 3], yaw: 0.0 };
        let front = cube([0.0, -0.3, 0.0]);
        let img = render_primitives(&[front, red], &cam(), 48);
        let img2 = render_primitives(&[red, front], &cam(), 48);
        assert_eq!(img, img2);
        let (cx, cy) = green_centroid(&img);
        assert!(img.get(cy as usize, cx as usize, 1) > 0.3);
    }

    #[test]
    fn checker_and_shapes_render_deterministically() {
        let prims = [
            Primitive {
                shape: Shape::Sphere { radius: 0.1 },
                center: [0.1, 0.0, 0.0],
                color: [0.2, 0.3, 0.9],
                checker: Some(0.05),
            },
            Primitive {
                shape: Shape::Pyramid { half_base: 0.1, height: 0.2, yaw: 0.4 },
                center: [-0.15, 0.05, 0.0],
                color: [0.9, 0.6, 0.1],
                checker: Some(0.04),
            },
        ];
        let a = render_primitives(&prims, &cam(), 32);
        assert_eq!(a, render_primitives(&prims, &cam(), 32));
        assert_ne!(a, render_primitives(&[], &cam(), 32));
        assert!(a.in_unit_range());
    }

    #[test]
    fn camera_validation() {
        let mut c = cam();
        assert!(c.validate().is_ok());
        c.radius = 0.0;
        assert!(c.validate().is_err());
    }
}
