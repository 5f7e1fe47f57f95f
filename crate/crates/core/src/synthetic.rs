//! Seeded synthetic crowd scenes with exact head annotations.
//!
//! Heads are bright soft-edged disks on a dark background whose radius grows
//! linearly from the top row to the bottom row, a crude stand-in for
//! perspective. Annotations are drawn first and rendered second, so every
//! disk is centered exactly on its annotation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::annotations::{AnnotationError, AnnotationSet, Point};
use crate::imageio::{save_image, ImageError};
use crate::kv::parse_key_values;
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.txt";

const BACKGROUND: f64 = 0.2;
const HEAD: f64 = 0.85;

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("invalid scene configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Inclusive head-count range.
    pub count_range: (usize, usize),
    /// Head radius at the top and at the bottom of the image, in pixels.
    pub radius_range: (f64, f64),
    /// Standard deviation of the additive per-pixel Gaussian noise.
    pub noise: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            width: 224,
            height: 224,
            count_range: (5, 50),
            radius_range: (2.0, 5.0),
            noise: 0.05,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        let bad = |m: String| Err(SyntheticError::Config(m));
        if self.width == 0 || self.height == 0 {
            return bad(format!("degenerate image size {}x{}", self.width, self.height));
        }
        if self.count_range.0 > self.count_range.1 {
            return bad(format!("empty count range {:?}", self.count_range));
        }
        let (a, b) = self.radius_range;
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return bad(format!("radii must be positive, got {:?}", self.radius_range));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("invalid noise amplitude {}", self.noise));
        }
        Ok(())
    }

    fn radius_at(&self, y: f64) -> f64 {
        let (top, bottom) = self.radius_range;
        top + (bottom - top) * y / self.height as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// `3 x H x W`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    pub annotations: AnnotationSet,
}

/// Renders one scene; the result depends only on `config`.
pub fn generate_scene(config: &SceneConfig) -> Result<Scene, SyntheticError> {
    config.validate()?;
    let (w, h) = (config.width, config.height);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = rng.random_range(config.count_range.0..=config.count_range.1);
    let heads: Vec<Point> = (0..n)
        .map(|_| Point::new(rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64)))
        .collect();
    let annotations = AnnotationSet::new(w, h, heads)?;

    // Coverage of each pixel center by the nearest disk edge: 1 inside,
    // fading linearly over one pixel.
    let mut cover = vec![0.0f64; w * h];
    for p in annotations.heads() {
        let r = config.radius_at(p.y);
        let reach = r + 0.5;
        let x_lo = (p.x - reach).floor().max(0.0) as usize;
        let x_hi = ((p.x + reach).ceil() as usize).min(w - 1);
        let y_lo = (p.y - reach).floor().max(0.0) as usize;
        let y_hi = ((p.y + reach).ceil() as usize).min(h - 1);
        for row in y_lo..=y_hi {
            for col in x_lo..=x_hi {
                let d = Point::new(col as f64 + 0.5, row as f64 + 0.5).distance(p);
                let a = (reach - d).clamp(0.0, 1.0);
                let c = &mut cover[row * w + col];
                *c = c.max(a);
            }
        }
    }

    let noise = Normal::new(0.0, config.noise).expect("validated noise amplitude");
    let mut data = vec![0.0f32; 3 * w * h];
    for ch in 0..3 {
        for (i, &c) in cover.iter().enumerate() {
            let v = BACKGROUND + (HEAD - BACKGROUND) * c + noise.sample(&mut rng);
            data[ch * w * h + i] = v.clamp(0.0, 1.0) as f32;
        }
    }
    Ok(Scene {
        image: Tensor::from_vec(&[3, h, w], data).expect("positive dimensions"),
        annotations,
    })
}

/// Seed of scene `index` in a dataset with base seed `seed`.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn scene_name(index: usize) -> String {
    format!("scene_{index:04}")
}

/// What [`generate_dataset`] wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSummary {
    pub dir: PathBuf,
    pub counts: Vec<usize>,
    pub total_count: usize,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SyntheticError + '_ {
    move |source| SyntheticError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn manifest_text(config: &SceneConfig, n_scenes: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "seed = {}", config.seed);
    let _ = writeln!(s, "scenes = {n_scenes}");
    let _ = writeln!(s, "width = {}", config.width);
    let _ = writeln!(s, "height = {}", config.height);
    let _ = writeln!(s, "count_min = {}", config.count_range.0);
    let _ = writeln!(s, "count_max = {}", config.count_range.1);
    let _ = writeln!(s, "radius_top = {}", config.radius_range.0);
    let _ = writeln!(s, "radius_bottom = {}", config.radius_range.1);
    let _ = writeln!(s, "noise = {}", config.noise);
    for i in 0..n_scenes {
        let _ = writeln!(s, "{} = {}", scene_name(i), scene_seed(config.seed, i));
    }
    s
}

/// Writes `scene_NNNN.png` / `scene_NNNN.csv` pairs and a manifest into
/// `dir`, creating it if needed. Scenes are rendered in parallel.
pub fn generate_dataset(dir: &Path, config: &SceneConfig, n_scenes: usize) -> Result<DatasetSummary, SyntheticError> {
    config.validate()?;
    if n_scenes == 0 {
        return Err(SyntheticError::Config("need at least one scene".into()));
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let counts: Vec<usize> = (0..n_scenes)
        .into_par_iter()
        .map(|i| {
            let scene = generate_scene(&SceneConfig {
                seed: scene_seed(config.seed, i),
                ..config.clone()
            })?;
            let name = scene_name(i);
            save_image(&dir.join(format!("{name}.png")), &scene.image)?;
            scene.annotations.save(&dir.join(format!("{name}.csv")))?;
            Ok(scene.annotations.count())
        })
        .collect::<Result<_, SyntheticError>>()?;
    let manifest = dir.join(MANIFEST);
    fs::write(&manifest, manifest_text(config, n_scenes)).map_err(io_err(&manifest))?;
    Ok(DatasetSummary {
        dir: dir.to_path_buf(),
        total_count: counts.iter().sum(),
        counts,
    })
}

/// `train/` and `test/` subdirectories; the test scenes use the next base
/// seed.
pub fn generate_split(
    dir: &Path,
    config: &SceneConfig,
    n_train: usize,
    n_test: usize,
) -> Result<(DatasetSummary, DatasetSummary), SyntheticError> {
    let train = generate_dataset(&dir.join("train"), config, n_train)?;
    let test_cfg = SceneConfig {
        seed: config.seed.wrapping_add(1),
        ..config.clone()
    };
    let test = generate_dataset(&dir.join("test"), &test_cfg, n_test)?;
    Ok((train, test))
}

/// Scene configuration and scene count recorded in a manifest.
pub fn read_manifest(path: &Path) -> Result<(SceneConfig, usize), SyntheticError> {
    let bad = |reason: String| SyntheticError::Manifest {
        path: path.to_path_buf(),
        reason,
    };
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let kv = parse_key_values(&text).map_err(bad)?;
    fn field<T: std::str::FromStr>(
        kv: &std::collections::BTreeMap<String, String>,
        key: &str,
    ) -> Result<T, String> {
        kv.get(key)
            .ok_or_else(|| format!("missing `{key}`"))?
            .parse()
            .map_err(|_| format!("bad value for `{key}`"))
    }
    let read = || -> Result<(SceneConfig, usize), String> {
        let config = SceneConfig {
            seed: field(&kv, "seed")?,
            width: field(&kv, "width")?,
            height: field(&kv, "height")?,
            count_range: (field(&kv, "count_min")?, field(&kv, "count_max")?),
            radius_range: (field(&kv, "radius_top")?, field(&kv, "radius_bottom")?),
            noise: field(&kv, "noise")?,
        };
        let n: usize = field(&kv, "scenes")?;
        for i in 0..n {
            let recorded: u64 = field(&kv, &scene_name(i))?;
            if recorded != scene_seed(config.seed, i) {
                return Err(format!("seed of {} does not follow from the base seed", scene_name(i)));
            }
        }
        Ok((config, n))
    };
    read().map_err(bad)
}

/// Re-renders the dataset described by `manifest` into `dir`.
pub fn regenerate_from_manifest(manifest: &Path, dir: &Path) -> Result<DatasetSummary, SyntheticError> {
    let (config, n) = read_manifest(manifest)?;
    generate_dataset(dir, &config, n)
}
