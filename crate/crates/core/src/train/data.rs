//! Image/annotation pairs and the patch-level tensor helpers used by
//! training and inference.

use std::fs;
use std::path::Path;

use crate::annotations::{load_annotations, AnnotationSet};
use crate::imageio::load_image;
use crate::tensor::{Scalar, Tensor};

use super::TrainError;

/// One image with its ground-truth heads.
#[derive(Debug, Clone)]
pub struct Sample {
    /// `3 x H x W`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    pub annotations: AnnotationSet,
}

impl Sample {
    pub fn new(image: Tensor<f32>, annotations: AnnotationSet) -> Result<Self, TrainError> {
        let (c, h, w) = image.chw()?;
        if c != 3 || w != annotations.width() || h != annotations.height() {
            return Err(TrainError::Config(format!(
                "image {:?} does not match annotations {}x{}",
                image.shape(),
                annotations.width(),
                annotations.height()
            )));
        }
        Ok(Self { image, annotations })
    }

    pub fn width(&self) -> usize {
        self.annotations.width()
    }

    pub fn height(&self) -> usize {
        self.annotations.height()
    }

    pub fn count(&self) -> usize {
        self.annotations.count()
    }
}

/// Loads every `<name>.png` in `dir` paired with `<name>.csv`, sorted by name.
pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>, TrainError> {
    let err = |reason: String| TrainError::Dataset {
        path: dir.to_path_buf(),
        reason,
    };
    let mut pngs: Vec<_> = fs::read_dir(dir)
        .map_err(|e| err(e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    pngs.sort();
    let mut out = Vec::with_capacity(pngs.len());
    for png in pngs {
        let csv = png.with_extension("csv");
        if !csv.exists() {
            return Err(err(format!("{} has no matching annotation file", png.display())));
        }
        let image: Tensor<f32> = load_image(&png)?;
        let (_, h, w) = image.chw()?;
        let annotations = load_annotations(&csv, w, h)?;
        out.push(Sample::new(image, annotations)?);
    }
    if out.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    Ok(out)
}

/// `(train, test)`: the `train/` and `test/` subdirectories when both exist,
/// otherwise the first 80% of `dir` (by name) and the rest.
pub fn load_split(dir: &Path) -> Result<(Vec<Sample>, Vec<Sample>), TrainError> {
    let (train_dir, test_dir) = (dir.join("train"), dir.join("test"));
    if train_dir.is_dir() && test_dir.is_dir() {
        return Ok((load_dataset(&train_dir)?, load_dataset(&test_dir)?));
    }
    let mut all = load_dataset(dir)?;
    if all.len() < 2 {
        return Err(TrainError::Dataset {
            path: dir.to_path_buf(),
            reason: "need at least two images to split".into(),
        });
    }
    let n_train = ((all.len() * 4) / 5).clamp(1, all.len() - 1);
    let test = all.split_off(n_train);
    Ok((all, test))
}

/// Copies the window `[x0, x0 + w) x [y0, y0 + h)` of a `C x H x W` tensor.
pub fn crop_chw<F: Scalar>(t: &Tensor<F>, x0: usize, y0: usize, w: usize, h: usize) -> Result<Tensor<F>, TrainError> {
    let (c, th, tw) = t.chw()?;
    if x0 + w > tw || y0 + h > th {
        return Err(TrainError::Config(format!(
            "window {w}x{h} at ({x0}, {y0}) exceeds {tw}x{th}"
        )));
    }
    let mut out = Vec::with_capacity(c * w * h);
    let d = t.data();
    for ch in 0..c {
        for row in y0..y0 + h {
            let start = ch * th * tw + row * tw + x0;
            out.extend_from_slice(&d[start..start + w]);
        }
    }
    Ok(Tensor::from_vec(&[c, h, w], out)?)
}

/// Mirror index without repeating the edge sample (`d c b | a b c d | c b a`).
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Reflect-pads a `C x H x W` tensor on the right and bottom to at least
/// `min_w x min_h`.
pub fn reflect_pad<F: Scalar>(t: &Tensor<F>, min_w: usize, min_h: usize) -> Result<Tensor<F>, TrainError> {
    let (c, h, w) = t.chw()?;
    let (nw, nh) = (w.max(min_w), h.max(min_h));
    if (nw, nh) == (w, h) {
        return Ok(t.clone());
    }
    let d = t.data();
    let mut out = Vec::with_capacity(c * nw * nh);
    for ch in 0..c {
        for row in 0..nh {
            let src = ch * h * w + reflect(row, h) * w;
            out.extend((0..nw).map(|col| d[src + reflect(col, w)]));
        }
    }
    Ok(Tensor::from_vec(&[c, nh, nw], out)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::Point;
    use crate::imageio::save_image;

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (0..9).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, [0, 1, 2, 3, 2, 1, 0, 1, 2]);
        assert_eq!(reflect(5, 1), 0);
    }

    #[test]
    fn pad_and_crop_recover_original() {
        let t = Tensor::from_vec(&[1, 2, 3], vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let p = reflect_pad(&t, 5, 3).unwrap();
        assert_eq!(p.shape(), [1, 3, 5]);
        assert_eq!(p.data(), [1.0, 2.0, 3.0, 2.0, 1.0, 4.0, 5.0, 6.0, 5.0, 4.0, 1.0, 2.0, 3.0, 2.0, 1.0]);
        assert_eq!(crop_chw(&p, 0, 0, 3, 2).unwrap(), t);
        assert!(crop_chw(&p, 3, 0, 3, 2).is_err());
    }

    #[test]
    fn split_falls_back_to_ratio() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..5 {
            let img = Tensor::<f32>::full(&[3, 4, 6], 0.2);
            save_image(&dir.path().join(format!("s{i}.png")), &img).unwrap();
            AnnotationSet::new(6, 4, vec![Point::new(1.0, 1.0); i])
                .unwrap()
                .save(&dir.path().join(format!("s{i}.csv")))
                .unwrap();
        }
        let (train, test) = load_split(dir.path()).unwrap();
        assert_eq!((train.len(), test.len()), (4, 1));
        assert_eq!(test[0].count(), 4);
    }

    #[test]
    fn missing_csv_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        save_image(&dir.path().join("a.png"), &Tensor::<f32>::zeros(&[3, 2, 2])).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(TrainError::Dataset { .. })));
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(empty.path()), Err(TrainError::EmptyDataset)));
    }
}
