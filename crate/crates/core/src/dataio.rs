//! Multi-view datasets in a CO3D-style layout, plus a procedural orbit
//! generator that writes the same layout:
//!
//! ```text
//! root/<category>/<sequence_id>/manifest.json
//! root/<category>/<sequence_id>/frames/00000.png
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::worldsim::{render_primitives, CameraSpec, Primitive, Shape};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_MAX_GAP: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ManifestFile {
    sequence_id: String,
    category: String,
    frame_count: usize,
    frames: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceManifest {
    pub sequence_id: String,
    pub category: String,
    pub frame_count: usize,
    /// Absolute frame paths in orbit order.
    pub frame_paths: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub i_src: Image,
    pub i_tgt: Image,
    pub sequence_id: String,
    pub frame_gap: usize,
}

fn sorted_dirs(path: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        let entry = entry.map_err(|e| Error::io(path, e))?;
        let p = entry.path();
        if p.is_dir() {
            dirs.push(p);
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn read_manifest(dir: &Path) -> Result<SequenceManifest> {
    let name = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let malformed = |reason: String| Error::MalformedManifest {
        sequence: name.clone(),
        reason,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| malformed(format!("cannot read {}: {e}", path.display())))?;
    let m: ManifestFile = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    if m.frame_count != m.frames.len() {
        return Err(malformed(format!("frame_count {} but {} frames listed", m.frame_count, m.frames.len())));
    }
    if m.frame_count < 2 {
        return Err(malformed("fewer than 2 frames".into()));
    }
    let mut frame_paths = Vec::with_capacity(m.frames.len());
    for rel in &m.frames {
        let p = dir.join(rel);
        if !p.is_file() {
            return Err(malformed(format!("missing frame {rel}")));
        }
        frame_paths.push(p);
    }
    Ok(SequenceManifest {
        sequence_id: m.sequence_id,
        category: m.category,
        frame_count: m.frame_count,
        frame_paths,
    })
}

/// Every sequence under `root`, sorted by `(category, sequence_id)`.
pub fn scan_dataset(root: &Path) -> Result<Vec<SequenceManifest>> {
    if !root.is_dir() {
        return Err(Error::MissingRoot(root.to_path_buf()));
    }
    let mut out = Vec::new();
    for cat in sorted_dirs(root)? {
        for seq in sorted_dirs(&cat)? {
            out.push(read_manifest(&seq)?);
        }
    }
    out.sort_by(|a, b| (&a.category, &a.sequence_id).cmp(&(&b.category, &b.sequence_id)));
    Ok(out)
}

/// `(sequence index, src frame, tgt frame)` drawn as: uniform sequence,
/// uniform source frame, uniform target among frames within `max_gap`.
pub fn sample_pair_indices(
    frame_counts: &[usize],
    rng: &mut impl Rng,
    max_gap: usize,
) -> Result<(usize, usize, usize)> {
    let usable: Vec<usize> = (0..frame_counts.len()).filter(|&i| frame_counts[i] >= 2).collect();
    if usable.is_empty() || max_gap == 0 {
        return Err(Error::EmptyDataset);
    }
    let seq = usable[rng.random_range(0..usable.len())];
    let n = frame_counts[seq];
    let src = rng.random_range(0..n);
    let lo = src.saturating_sub(max_gap);
    let hi = (src + max_gap).min(n - 1);
    // Candidates are lo..=hi without src itself.
    let k = rng.random_range(0..hi - lo);
    let tgt = if lo + k >= src { lo + k + 1 } else { lo + k };
    Ok((seq, src, tgt))
}

/// Loads a random same-sequence pair from disk.
pub fn sample_pair(manifests: &[SequenceManifest], rng: &mut impl Rng, max_gap: usize) -> Result<ViewPair> {
    let counts: Vec<usize> = manifests.iter().map(|m| m.frame_paths.len()).collect();
    let (s, a, b) = sample_pair_indices(&counts, rng, max_gap)?;
    let m = &manifests[s];
    Ok(ViewPair {
        i_src: Image::load_png(&m.frame_paths[a])?,
        i_tgt: Image::load_png(&m.frame_paths[b])?,
        sequence_id: m.sequence_id.clone(),
        frame_gap: a.abs_diff(b),
    })
}

/// A dataset held in memory.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub manifests: Vec<SequenceManifest>,
    pub frames: Vec<Vec<Image>>,
}

impl LoadedDataset {
    pub fn load(root: &Path) -> Result<Self> {
        let manifests = scan_dataset(root)?;
        Self::from_manifests(manifests)
    }

    pub fn from_manifests(manifests: Vec<SequenceManifest>) -> Result<Self> {
        let frames = manifests
            .iter()
            .map(|m| m.frame_paths.iter().map(|p| Image::load_png(p)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { manifests, frames })
    }

    pub fn image_size(&self) -> Option<(usize, usize)> {
        self.frames.first().and_then(|f| f.first()).map(Image::dims)
    }

    pub fn sample_pair(&self, rng: &mut impl Rng, max_gap: usize) -> Result<ViewPair> {
        let counts: Vec<usize> = self.frames.iter().map(Vec::len).collect();
        let (s, a, b) = sample_pair_indices(&counts, rng, max_gap)?;
        Ok(ViewPair {
            i_src: self.frames[s][a].clone(),
            i_tgt: self.frames[s][b].clone(),
            sequence_id: self.manifests[s].sequence_id.clone(),
            frame_gap: a.abs_diff(b),
        })
    }

    /// Splits off the last `n` sequences, e.g. for held-out evaluation.
    pub fn split_last(mut self, n: usize) -> (Self, Self) {
        let keep = self.manifests.len().saturating_sub(n);
        let held_m = self.manifests.split_off(keep);
        let held_f = self.frames.split_off(keep);
        (
            self,
            Self {
                manifests: held_m,
                frames: held_f,
            },
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitSpec {
    pub scenes: usize,
    pub views: usize,
    pub image_size: usize,
    pub seed: u64,
    /// Total azimuth swept by one orbit, in degrees.
    pub arc_degrees: f64,
}

impl OrbitSpec {
    pub fn new(scenes: usize, views: usize, image_size: usize, seed: u64) -> Self {
        Self {
            scenes,
            views,
            image_size,
            seed,
            arc_degrees: 90.0,
        }
    }
}

fn random_color(rng: &mut impl Rng) -> [f32; 3] {
    std::array::from_fn(|_| rng.random_range(0.1..0.95))
}

/// One scene: a textured table with 1 to 3 random primitives on it.
fn random_scene(rng: &mut impl Rng) -> (String, Vec<Primitive>) {
    let mut prims = vec![Primitive {
        shape: Shape::Cuboid {
            half: [0.36, 0.36, 0.01],
            yaw: 0.0,
        },
        center: [0.0, 0.0, -0.0101],
        color: random_color(rng),
        checker: Some(rng.random_range(0.08..0.16)),
    }];
    let count = rng.random_range(1..=3);
    let mut category = String::new();
    for k in 0..count {
        let x = rng.random_range(-0.15..0.15);
        let y = rng.random_range(-0.15..0.15);
        let yaw = rng.random_range(0.0..std::f64::consts::PI);
        let (name, shape, z) = match rng.random_range(0..3) {
            0 => {
                let half = [rng.random_range(0.03..0.08), rng.random_range(0.03..0.08), rng.random_range(0.03..0.1)];
                ("box", Shape::Cuboid { half, yaw }, half[2])
            }
            1 => {
                let r = rng.random_range(0.04..0.09);
                ("sphere", Shape::Sphere { radius: r }, r)
            }
            _ => {
                let h = rng.random_range(0.08..0.2);
                let b = rng.random_range(0.04..0.08);
                ("pyramid", Shape::Pyramid { half_base: b, height: h, yaw }, 0.5 * h)
            }
        };
        if k == 0 {
            category = name.to_string();
        }
        let checker = rng.random_bool(0.5).then(|| rng.random_range(0.02..0.06));
        prims.push(Primitive {
            shape,
            center: [x, y, z],
            color: random_color(rng),
            checker,
        });
    }
    (category, prims)
}

/// Renders orbit sequences around random scenes and writes them under `out`.
pub fn generate_orbit_dataset(spec: &OrbitSpec, out: &Path) -> Result<Vec<SequenceManifest>> {
    if spec.scenes == 0 || spec.image_size == 0 {
        return Err(Error::Precondition("scene count and image size must be >= 1".into()));
    }
    if spec.views < 2 {
        return Err(Error::Precondition("an orbit needs at least 2 views to form pairs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut manifests = Vec::with_capacity(spec.scenes);
    for s in 0..spec.scenes {
        let (category, prims) = random_scene(&mut rng);
        let start = rng.random_range(-180.0..180.0);
        let elevation = rng.random_range(25.0..50.0);
        let sequence_id = format!("scene_{s:04}");
        let dir = out.join(&category).join(&sequence_id);
        let frames_dir = dir.join("frames");
        fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
        let mut rel = Vec::with_capacity(spec.views);
        let mut paths = Vec::with_capacity(spec.views);
        for v in 0..spec.views {
            let cam = CameraSpec {
                azimuth: start + spec.arc_degrees * v as f64 / (spec.views - 1) as f64,
                elevation,
                radius: 0.75,
                look_at: [0.0, 0.0, 0.05],
                fov: 45.0,
            };
            let img = render_primitives(&prims, &cam, spec.image_size);
            let name = format!("frames/{v:05}.png");
            let path = dir.join(&name);
            img.save_png(&path)?;
            rel.push(name);
            paths.push(path);
        }
        let m = ManifestFile {
            sequence_id: sequence_id.clone(),
            category: category.clone(),
            frame_count: spec.views,
            frames: rel,
        };
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&m).expect("manifest serializes");
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        manifests.push(SequenceManifest {
            sequence_id,
            category,
            frame_count: spec.views,
            frame_paths: paths,
        });
    }
    manifests.sort_by(|a, b| (&a.category, &a.sequence_id).cmp(&(&b.category, &b.sequence_id)));
    Ok(manifests)
}
