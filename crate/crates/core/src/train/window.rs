//! Full-image inference by tiling with overlapping patches.

use crate::model::{ModelError, MudModel};
use crate::tensor::Tensor;

use super::data::{crop_chw, reflect_pad};
use super::TrainError;

pub const DEFAULT_STEP: usize = 128;

fn axis_offsets(dim: usize, patch: usize, step: usize) -> Vec<usize> {
    let last = dim - patch;
    let mut out: Vec<usize> = (0..=last).step_by(step).collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

/// Top-left offsets `(x, y)` of the tiling, row by row. Each axis steps by
/// `step` from 0 and ends with a window flush against the far edge.
pub fn sliding_window_positions(
    width: usize,
    height: usize,
    patch: usize,
    step: usize,
) -> Result<Vec<(usize, usize)>, TrainError> {
    if patch == 0 || step == 0 {
        return Err(TrainError::Config("patch and step must be positive".into()));
    }
    if width < patch || height < patch {
        return Err(TrainError::ImageTooSmall { width, height, patch });
    }
    let xs = axis_offsets(width, patch, step);
    let ys = axis_offsets(height, patch, step);
    Ok(ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect())
}

/// Anything that maps a `3 x P x P` patch to a `P x P` map and a count.
pub trait PatchPredictor: Sync {
    fn patch_size(&self) -> usize;

    /// Row-major map values and the patch count.
    fn predict_patch(&self, patch: &Tensor<f32>) -> Result<(Vec<f64>, f64), TrainError>;
}

impl PatchPredictor for MudModel<f32> {
    fn patch_size(&self) -> usize {
        self.config().patch
    }

    /// The patch map is the mean of the module maps.
    fn predict_patch(&self, patch: &Tensor<f32>) -> Result<(Vec<f64>, f64), TrainError> {
        let pred = self.forward(patch).map_err(|e: ModelError| TrainError::Model(e))?;
        let n = pred.maps.len() as f64;
        let mut map = vec![0.0; pred.maps[0].len()];
        for m in &pred.maps {
            for (acc, &v) in map.iter_mut().zip(m.data()) {
                *acc += f64::from(v) / n;
            }
        }
        Ok((map, pred.final_count))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePrediction {
    pub width: usize,
    pub height: usize,
    /// Row-major, `width * height` values.
    pub map: Vec<f64>,
    pub count: f64,
}

/// Tiles `image` (`3 x H x W`), averages overlapping patch maps per pixel and
/// spreads each patch count uniformly over its pixels before averaging, so
/// the image count is the sum of the averaged spread.
///
/// Images smaller than the patch are reflect-padded and the padding is
/// cropped off the result.
pub fn predict_image<P: PatchPredictor + ?Sized>(
    model: &P,
    image: &Tensor<f32>,
    step: usize,
) -> Result<ImagePrediction, TrainError> {
    let patch = model.patch_size();
    let (_, height, width) = image.chw()?;
    let padded = reflect_pad(image, patch, patch)?;
    let (_, ph, pw) = padded.chw()?;
    let positions = sliding_window_positions(pw, ph, patch, step)?;

    let mut map_sum = vec![0.0; pw * ph];
    let mut count_sum = vec![0.0; pw * ph];
    let mut hits = vec![0u32; pw * ph];
    let per_pixel = 1.0 / (patch * patch) as f64;
    for &(x0, y0) in &positions {
        let (map, count) = model.predict_patch(&crop_chw(&padded, x0, y0, patch, patch)?)?;
        let spread = count * per_pixel;
        for row in 0..patch {
            let base = (y0 + row) * pw + x0;
            for col in 0..patch {
                map_sum[base + col] += map[row * patch + col];
                count_sum[base + col] += spread;
                hits[base + col] += 1;
            }
        }
    }

    let mut map = Vec::with_capacity(width * height);
    let mut count = 0.0;
    for row in 0..height {
        for col in 0..width {
            let i = row * pw + col;
            let n = f64::from(hits[i]);
            map.push(map_sum[i] / n);
            count += count_sum[i] / n;
        }
    }
    Ok(ImagePrediction { width, height, map, count })
}
