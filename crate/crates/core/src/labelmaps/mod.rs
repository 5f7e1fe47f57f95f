//! Ground-truth rasters: Gaussian density maps, kNN distance maps and inverse
//! kNN (ikNN) maps, plus block pooling to coarser label resolutions and
//! export to the binary LMAP format or PNG.
//!
//! Rasters are sampled at pixel centers: pixel `(row i, col j)` is evaluated
//! at `(j + 0.5, i + 0.5)`.

mod generate;
mod io;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::spatial::IndexError;

pub use generate::{density_map, generate, iknn_map, knn_map, sigma_for_head, sigma_for_head_indexed};
pub use io::{export_png, read_lmap, write_lmap, PngScale};

/// Native label size used by the network.
pub const NATIVE_RESOLUTION: usize = 224;

#[derive(Debug, Error)]
pub enum MapError {
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("beta must be positive, got {0}")]
    InvalidBeta(f64),
    #[error("sigma must be positive, got {0}")]
    InvalidSigma(f64),
    #[error("k must be positive")]
    InvalidK,
    #[error("head index {index} out of range for {count} heads")]
    HeadIndex { index: usize, count: usize },
    #[error("label resolution {0} must divide {NATIVE_RESOLUTION}")]
    InvalidResolution(usize),
    #[error("cannot pool {width}x{height} map to {target}x{target}")]
    NotDivisible { width: usize, height: usize, target: usize },
    #[error("crop window exceeds the map")]
    Crop,
    #[error("map contains non-finite values")]
    NonFinite,
    #[error("invalid map values for kind {0}")]
    InvalidValues(MapKind),
    #[error("malformed LMAP data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("png export failed: {0}")]
    Png(#[from] image::ImageError),
    #[error("cannot parse {what}: `{text}`")]
    Parse { what: &'static str, text: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MapKind {
    Density,
    Knn,
    Iknn,
}

impl MapKind {
    pub fn code(self) -> u8 {
        match self {
            MapKind::Density => 0,
            MapKind::Knn => 1,
            MapKind::Iknn => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(MapKind::Density),
            1 => Some(MapKind::Knn),
            2 => Some(MapKind::Iknn),
            _ => None,
        }
    }

    /// Pooling that keeps the map's meaning when shrinking it: density is
    /// mass and must be summed, distances and ikNN values are averaged.
    pub fn pool_mode(self) -> PoolMode {
        match self {
            MapKind::Density => PoolMode::Sum,
            MapKind::Knn | MapKind::Iknn => PoolMode::Mean,
        }
    }
}

impl fmt::Display for MapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MapKind::Density => "density",
            MapKind::Knn => "knn",
            MapKind::Iknn => "iknn",
        })
    }
}

impl FromStr for MapKind {
    type Err = MapError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "density" => Ok(MapKind::Density),
            "knn" => Ok(MapKind::Knn),
            "iknn" => Ok(MapKind::Iknn),
            _ => Err(MapError::Parse {
                what: "map kind",
                text: s.to_string(),
            }),
        }
    }
}

pub use crate::tensor::kernels::PoolMode;

/// How the per-head Gaussian scale is chosen for density maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaMode {
    /// Mean distance to the `k_sigma` nearest other heads; `fallback` when
    /// fewer than `k_sigma` other heads exist.
    Adaptive { k_sigma: usize, fallback: f64 },
    Fixed(f64),
}

impl SigmaMode {
    pub const DEFAULT_FALLBACK: f64 = 16.0;

    pub fn adaptive(k_sigma: usize) -> Self {
        SigmaMode::Adaptive {
            k_sigma,
            fallback: Self::DEFAULT_FALLBACK,
        }
    }
}

impl Default for SigmaMode {
    fn default() -> Self {
        SigmaMode::adaptive(3)
    }
}

impl fmt::Display for SigmaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SigmaMode::Adaptive { k_sigma, .. } => write!(f, "adaptive:{k_sigma}"),
            SigmaMode::Fixed(s) => write!(f, "fixed:{s}"),
        }
    }
}

impl FromStr for SigmaMode {
    type Err = MapError;

    /// Parses `adaptive:K` or `fixed:S`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || MapError::Parse {
            what: "sigma mode",
            text: s.to_string(),
        };
        let (mode, arg) = s.split_once(':').ok_or_else(err)?;
        match mode {
            "adaptive" => {
                let k: usize = arg.parse().map_err(|_| err())?;
                if k == 0 {
                    return Err(err());
                }
                Ok(SigmaMode::adaptive(k))
            }
            "fixed" => {
                let v: f64 = arg.parse().map_err(|_| err())?;
                if !(v > 0.0 && v.is_finite()) {
                    return Err(MapError::InvalidSigma(v));
                }
                Ok(SigmaMode::Fixed(v))
            }
            _ => Err(err()),
        }
    }
}

/// Labeling parameters shared by all map kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapConfig {
    /// Neighbor count for kNN / ikNN maps.
    pub k: usize,
    /// Gaussian scale multiplier: the kernel width is `beta * sigma_h`.
    pub beta: f64,
    pub sigma_mode: SigmaMode,
    /// Side length labels are compared at; divides 224.
    pub label_resolution: usize,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            k: 1,
            beta: 0.3,
            sigma_mode: SigmaMode::default(),
            label_resolution: NATIVE_RESOLUTION,
        }
    }
}

impl MapConfig {
    pub fn validate(&self) -> Result<(), MapError> {
        if self.k == 0 {
            return Err(MapError::InvalidK);
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(MapError::InvalidBeta(self.beta));
        }
        if let SigmaMode::Fixed(s) = self.sigma_mode {
            if !(s > 0.0 && s.is_finite()) {
                return Err(MapError::InvalidSigma(s));
            }
        }
        if self.label_resolution == 0 || NATIVE_RESOLUTION % self.label_resolution != 0 {
            return Err(MapError::InvalidResolution(self.label_resolution));
        }
        Ok(())
    }
}

/// A single-channel raster of label values, stored row-major in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    kind: MapKind,
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl LabelMap {
    pub fn new(kind: MapKind, width: usize, height: usize, values: Vec<f64>) -> Result<Self, MapError> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(MapError::Format(format!(
                "{} values for a {width}x{height} map",
                values.len()
            )));
        }
        Ok(Self {
            kind,
            width,
            height,
            values,
        })
    }

    pub fn zeros(kind: MapKind, width: usize, height: usize) -> Self {
        Self {
            kind,
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Copies out the window `[x0, x0 + w) x [y0, y0 + h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self, MapError> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(MapError::Crop);
        }
        let mut values = Vec::with_capacity(w * h);
        for row in y0..y0 + h {
            values.extend_from_slice(&self.values[row * self.width + x0..row * self.width + x0 + w]);
        }
        Ok(Self {
            kind: self.kind,
            width: w,
            height: h,
            values,
        })
    }
}

/// Non-overlapping block pooling of a square map to `target x target`.
/// Sum pooling preserves the total; mean pooling preserves the value range.
pub fn downsample_map(map: &LabelMap, target: usize, mode: PoolMode) -> Result<LabelMap, MapError> {
    if target == 0 || map.width != map.height || map.width % target != 0 {
        return Err(MapError::NotDivisible {
            width: map.width,
            height: map.height,
            target,
        });
    }
    pool_map(map, map.width / target, mode)
}

/// Pools `factor x factor` blocks; both dimensions must be multiples of
/// `factor`.
pub fn pool_map(map: &LabelMap, factor: usize, mode: PoolMode) -> Result<LabelMap, MapError> {
    if factor == 0 || map.width % factor != 0 || map.height % factor != 0 {
        return Err(MapError::NotDivisible {
            width: map.width,
            height: map.height,
            target: if factor == 0 { 0 } else { map.width / factor },
        });
    }
    let (tw, th) = (map.width / factor, map.height / factor);
    let mut values = vec![0.0; tw * th];
    for row in 0..map.height {
        let src = &map.values[row * map.width..(row + 1) * map.width];
        let dst = &mut values[(row / factor) * tw..(row / factor + 1) * tw];
        for (col, &v) in src.iter().enumerate() {
            dst[col / factor] += v;
        }
    }
    if mode == PoolMode::Mean {
        let n = (factor * factor) as f64;
        values.iter_mut().for_each(|v| *v /= n);
    }
    LabelMap::new(map.kind, tw, th, values)
}
