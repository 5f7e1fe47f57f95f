//! RGB images as `3 x H x W` tensors with values in `[0, 1]`.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use thiserror::Error;

use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Codec {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("expected a 3 x H x W tensor, got {0:?}")]
    Shape(Vec<usize>),
}

pub fn from_rgb<F: Scalar>(img: &RgbImage) -> Tensor<F> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![F::zero(); 3 * w * h];
    for (x, y, px) in img.enumerate_pixels() {
        let at = y as usize * w + x as usize;
        for c in 0..3 {
            data[c * w * h + at] = F::from_f64(f64::from(px[c]) / 255.0);
        }
    }
    Tensor::from_vec(&[3, h, w], data).expect("image dimensions are positive")
}

/// Quantizes to 8 bits per channel; values are clamped to `[0, 1]`.
pub fn to_rgb<F: Scalar>(t: &Tensor<F>) -> Result<RgbImage, ImageError> {
    let (c, h, w) = t.chw().map_err(|_| ImageError::Shape(t.shape().to_vec()))?;
    if c != 3 {
        return Err(ImageError::Shape(t.shape().to_vec()));
    }
    let d = t.data();
    let q = |v: F| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8;
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let at = y as usize * w + x as usize;
        Rgb([q(d[at]), q(d[w * h + at]), q(d[2 * w * h + at])])
    }))
}

pub fn load_image<F: Scalar>(path: &Path) -> Result<Tensor<F>, ImageError> {
    let img = image::open(path).map_err(|source| ImageError::Codec {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(from_rgb(&img.to_rgb8()))
}

pub fn save_image<F: Scalar>(path: &Path, t: &Tensor<F>) -> Result<(), ImageError> {
    to_rgb(t)?.save(path).map_err(|source| ImageError::Codec {
        path: path.to_path_buf(),
        source,
    })
}
