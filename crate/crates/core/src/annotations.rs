//! Head-point annotations: loading, validation, serialization and dataset
//! summaries.
//!
//! The on-disk format is one CSV per image with one `x,y` row per annotated
//! head, optionally preceded by an `x,y` header line. Coordinates are
//! continuous pixel positions; `(0, 0)` is the top-left corner of the top-left
//! pixel.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// A single annotated head position in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }
}

impl From<(f64, f64)> for Point {
    fn from((x, y): (f64, f64)) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("cannot read annotations from {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed row {row}: {reason}")]
    Malformed { row: usize, reason: String },
    #[error("head out of bounds at row {row}")]
    OutOfBounds { row: usize },
    #[error("image dimensions must be positive, got {width}x{height}")]
    EmptyImage { width: usize, height: usize },
    #[error("dataset statistics need at least one annotation set")]
    NoSets,
}

/// Ground-truth head positions for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    width: usize,
    height: usize,
    heads: Vec<Point>,
}

impl AnnotationSet {
    /// Builds a set, rejecting heads outside `[0, width) x [0, height)`.
    /// Row numbers in errors are 1-based positions in `heads`.
    pub fn new(width: usize, height: usize, heads: Vec<Point>) -> Result<Self, AnnotationError> {
        if width == 0 || height == 0 {
            return Err(AnnotationError::EmptyImage { width, height });
        }
        for (i, h) in heads.iter().enumerate() {
            if !in_bounds(h, width, height) {
                return Err(AnnotationError::OutOfBounds { row: i + 1 });
            }
        }
        Ok(Self { width, height, heads })
    }

    pub fn empty(width: usize, height: usize) -> Result<Self, AnnotationError> {
        Self::new(width, height, Vec::new())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn heads(&self) -> &[Point] {
        &self.heads
    }

    pub fn count(&self) -> usize {
        self.heads.len()
    }

    /// Heads falling inside the window `[x0, x0 + w) x [y0, y0 + h)`,
    /// translated into window coordinates.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self, AnnotationError> {
        let (fx, fy) = (x0 as f64, y0 as f64);
        let heads = self
            .heads
            .iter()
            .filter(|p| p.x >= fx && p.x < fx + w as f64 && p.y >= fy && p.y < fy + h as f64)
            .map(|p| Point::new(p.x - fx, p.y - fy))
            .collect();
        Self::new(w, h, heads)
    }

    /// CSV text with an `x,y` header. Coordinates use the shortest decimal
    /// representation that parses back to the same `f64`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y\n");
        for h in &self.heads {
            writeln!(out, "{},{}", h.x, h.y).expect("writing to a String cannot fail");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), AnnotationError> {
        fs::write(path, self.to_csv()).map_err(|source| AnnotationError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn in_bounds(p: &Point, width: usize, height: usize) -> bool {
    p.x.is_finite()
        && p.y.is_finite()
        && p.x >= 0.0
        && p.y >= 0.0
        && p.x < width as f64
        && p.y < height as f64
}

/// Parses annotation CSV text. Data rows are numbered from 1, not counting
/// the optional header line.
pub fn parse_annotations(
    text: &str,
    image_width: usize,
    image_height: usize,
) -> Result<AnnotationSet, AnnotationError> {
    if image_width == 0 || image_height == 0 {
        return Err(AnnotationError::EmptyImage {
            width: image_width,
            height: image_height,
        });
    }
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut heads = Vec::new();
    let mut row = 0;
    for (line_no, raw) in text.split('\n').enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw).trim();
        if line.is_empty() {
            continue;
        }
        if line_no == 0 && line.replace(' ', "").eq_ignore_ascii_case("x,y") {
            continue;
        }
        row += 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(AnnotationError::Malformed {
                row,
                reason: format!("expected 2 fields, found {}", fields.len()),
            });
        }
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|_| AnnotationError::Malformed {
                row,
                reason: format!("`{s}` is not a number"),
            })
        };
        let p = Point::new(parse(fields[0])?, parse(fields[1])?);
        if !in_bounds(&p, image_width, image_height) {
            return Err(AnnotationError::OutOfBounds { row });
        }
        heads.push(p);
    }
    AnnotationSet::new(image_width, image_height, heads)
}

pub fn load_annotations(
    path: &Path,
    image_width: usize,
    image_height: usize,
) -> Result<AnnotationSet, AnnotationError> {
    let text = fs::read_to_string(path).map_err(|source| AnnotationError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_annotations(&text, image_width, image_height)
}

/// Dataset-level summary in the style of a dataset statistics table.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub images: usize,
    pub total_count: usize,
    pub mean_count: f64,
    pub max_count: usize,
    /// Mean (height, width).
    pub average_resolution: (f64, f64),
}

pub fn dataset_stats(sets: &[AnnotationSet]) -> Result<DatasetStats, AnnotationError> {
    if sets.is_empty() {
        return Err(AnnotationError::NoSets);
    }
    let n = sets.len() as f64;
    let total_count: usize = sets.iter().map(AnnotationSet::count).sum();
    let max_count = sets.iter().map(AnnotationSet::count).max().unwrap_or(0);
    let mean_h = sets.iter().map(|s| s.height as f64).sum::<f64>() / n;
    let mean_w = sets.iter().map(|s| s.width as f64).sum::<f64>() / n;
    Ok(DatasetStats {
        images: sets.len(),
        total_count,
        mean_count: total_count as f64 / n,
        max_count,
        average_resolution: (mean_h, mean_w),
    })
}
