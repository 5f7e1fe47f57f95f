use std::f64::consts::PI;

use log::warn;
use rayon::prelude::*;

use super::{LabelMap, MapConfig, MapError, MapKind, SigmaMode};
use crate::annotations::{AnnotationSet, Point};
use crate::spatial::HeadIndex;

/// Kernels are cut off at this many widths from the head.
const TRUNCATION: f64 = 4.0;

fn pixel_center(row: usize, col: usize) -> Point {
    Point::new(col as f64 + 0.5, row as f64 + 0.5)
}

/// Gaussian scale `sigma_h` for one head.
pub fn sigma_for_head(annotations: &AnnotationSet, head_index: usize, mode: SigmaMode) -> Result<f64, MapError> {
    let index = HeadIndex::build(annotations.heads());
    sigma_for_head_indexed(&index, head_index, mode)
}

/// As [`sigma_for_head`], reusing an index built over the same heads.
pub fn sigma_for_head_indexed(index: &HeadIndex, head_index: usize, mode: SigmaMode) -> Result<f64, MapError> {
    let count = index.size();
    let head = *index
        .points()
        .get(head_index)
        .ok_or(MapError::HeadIndex { index: head_index, count })?;
    match mode {
        SigmaMode::Fixed(s) => Ok(s),
        SigmaMode::Adaptive { k_sigma, fallback } => {
            if count - 1 < k_sigma {
                return Ok(fallback);
            }
            // the head itself is always among the nearest at distance zero
            let d = index.knn_distances(head, k_sigma + 1)?;
            Ok(d[1..].iter().sum::<f64>() / k_sigma as f64)
        }
    }
}

/// Sum of unit-mass Gaussians, one per head, with width `beta * sigma_h`.
///
/// Each kernel uses the 2D normalization `1 / (2 pi f^2)`, is truncated at
/// `4 f`, and is then rescaled so its discrete mass is exactly 1; the map
/// total therefore equals the head count. A kernel too narrow to cover any
/// pixel center puts its unit mass on the pixel containing the head.
pub fn density_map(annotations: &AnnotationSet, config: &MapConfig) -> Result<LabelMap, MapError> {
    if !(config.beta > 0.0 && config.beta.is_finite()) {
        return Err(MapError::InvalidBeta(config.beta));
    }
    let (w, h) = (annotations.width(), annotations.height());
    let mut values = vec![0.0f64; w * h];
    let index = HeadIndex::build(annotations.heads());
    let mut kernel = Vec::new();
    for (hi, head) in annotations.heads().iter().enumerate() {
        let f = config.beta * sigma_for_head_indexed(&index, hi, config.sigma_mode)?;
        let radius = TRUNCATION * f;
        kernel.clear();
        let mut mass = 0.0;
        if f > 0.0 && f.is_finite() {
            let norm = 1.0 / (2.0 * PI * f * f);
            let col_lo = (head.x - radius - 0.5).ceil().max(0.0) as usize;
            let col_hi = ((head.x + radius - 0.5).floor()).min(w as f64 - 1.0);
            let row_lo = (head.y - radius - 0.5).ceil().max(0.0) as usize;
            let row_hi = ((head.y + radius - 0.5).floor()).min(h as f64 - 1.0);
            if col_hi >= 0.0 && row_hi >= 0.0 {
                for row in row_lo..=row_hi as usize {
                    for col in col_lo..=col_hi as usize {
                        let d2 = {
                            let c = pixel_center(row, col);
                            let (dx, dy) = (c.x - head.x, c.y - head.y);
                            dx * dx + dy * dy
                        };
                        if d2 > radius * radius {
                            continue;
                        }
                        let v = norm * (-d2 / (2.0 * f * f)).exp();
                        if v > 0.0 {
                            kernel.push((row * w + col, v));
                            mass += v;
                        }
                    }
                }
            }
        }
        if mass > 0.0 {
            for &(i, v) in &kernel {
                values[i] += v / mass;
            }
        } else {
            let (col, row) = (head.x.floor() as usize, head.y.floor() as usize);
            values[row.min(h - 1) * w + col.min(w - 1)] += 1.0;
        }
    }
    LabelMap::new(MapKind::Density, w, h, values)
}

fn raster_from_index(index: &HeadIndex, w: usize, h: usize, k: usize, transform: fn(f64) -> f64) -> Vec<f64> {
    let mut values = vec![0.0; w * h];
    values.par_chunks_mut(w).enumerate().for_each(|(row, out)| {
        for (col, v) in out.iter_mut().enumerate() {
            let d = index
                .mean_knn_distance(pixel_center(row, col), k)
                .expect("k checked against head count");
            *v = transform(d);
        }
    });
    values
}

/// Mean distance from every pixel center to its `k` nearest heads.
pub fn knn_map(annotations: &AnnotationSet, k: usize) -> Result<LabelMap, MapError> {
    if k == 0 {
        return Err(MapError::InvalidK);
    }
    let index = HeadIndex::build(annotations.heads());
    if index.size() < k {
        return Err(crate::spatial::IndexError::InsufficientHeads { k, heads: index.size() }.into());
    }
    let values = raster_from_index(&index, annotations.width(), annotations.height(), k, |d| d);
    LabelMap::new(MapKind::Knn, annotations.width(), annotations.height(), values)
}

/// Element-wise `1 / (K + 1)` of the kNN map.
///
/// With no heads the map is all zeros (the limit as every distance grows
/// without bound). With fewer heads than `k`, `k` is reduced to the head
/// count.
pub fn iknn_map(annotations: &AnnotationSet, k: usize) -> Result<LabelMap, MapError> {
    if k == 0 {
        return Err(MapError::InvalidK);
    }
    let (w, h) = (annotations.width(), annotations.height());
    let count = annotations.count();
    if count == 0 {
        return Ok(LabelMap::zeros(MapKind::Iknn, w, h));
    }
    let k = if count < k {
        warn!("ikNN map: only {count} heads for k = {k}; using k = {count}");
        count
    } else {
        k
    };
    let index = HeadIndex::build(annotations.heads());
    let values = raster_from_index(&index, w, h, k, |d| 1.0 / (d + 1.0));
    LabelMap::new(MapKind::Iknn, w, h, values)
}

/// Builds the map of the requested kind at the annotation's native size.
pub fn generate(annotations: &AnnotationSet, kind: MapKind, config: &MapConfig) -> Result<LabelMap, MapError> {
    match kind {
        MapKind::Density => density_map(annotations, config),
        MapKind::Knn => knn_map(annotations, config.k),
        MapKind::Iknn => iknn_map(annotations, config.k),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labelmaps::{downsample_map, PoolMode};
    use crate::spatial::brute_force_knn;
    use proptest::prelude::*;

    fn set(w: usize, h: usize, heads: &[(f64, f64)]) -> AnnotationSet {
        AnnotationSet::new(w, h, heads.iter().copied().map(Point::from).collect()).unwrap()
    }

    fn fixed(beta: f64, sigma: f64) -> MapConfig {
        MapConfig {
            beta,
            sigma_mode: SigmaMode::Fixed(sigma),
            ..Default::default()
        }
    }

    #[test]
    fn sigma_examples() {
        let s = set(10, 10, &[(0.0, 0.0), (3.0, 4.0)]);
        assert_eq!(sigma_for_head(&s, 0, SigmaMode::adaptive(1)).unwrap(), 5.0);
        let one = set(10, 10, &[(2.0, 2.0)]);
        assert_eq!(sigma_for_head(&one, 0, SigmaMode::adaptive(3)).unwrap(), 16.0);
        assert_eq!(sigma_for_head(&s, 1, SigmaMode::Fixed(4.0)).unwrap(), 4.0);
        assert!(matches!(
            sigma_for_head(&s, 2, SigmaMode::Fixed(4.0)),
            Err(MapError::HeadIndex { index: 2, count: 2 })
        ));
    }

    #[test]
    fn density_examples() {
        let empty = set(224, 224, &[]);
        assert_eq!(density_map(&empty, &MapConfig::default()).unwrap().sum(), 0.0);

        let center = set(224, 224, &[(112.0, 112.0)]);
        let m = density_map(&center, &fixed(0.3, 10.0)).unwrap();
        assert!((m.sum() - 1.0).abs() < 1e-6);
        assert!(m.min() >= 0.0);

        let corner = set(224, 224, &[(0.0, 0.0)]);
        assert!((density_map(&corner, &fixed(0.3, 10.0)).unwrap().sum() - 1.0).abs() < 1e-6);

        assert!(matches!(
            density_map(&center, &fixed(0.0, 10.0)),
            Err(MapError::InvalidBeta(_))
        ));
    }

    #[test]
    fn density_narrow_kernel_falls_back_to_containing_pixel() {
        // f = 0.01 px cannot reach any pixel center from a pixel corner
        let s = set(8, 8, &[(3.0, 5.0)]);
        let m = density_map(&s, &fixed(0.01, 1.0)).unwrap();
        assert_eq!(m.get(5, 3), 1.0);
        assert_eq!(m.sum(), 1.0);
        // coincident heads give sigma 0 in adaptive mode
        let dup = set(8, 8, &[(3.5, 3.5), (3.5, 3.5)]);
        let m = density_map(&dup, &MapConfig { sigma_mode: SigmaMode::adaptive(1), ..Default::default() }).unwrap();
        assert_eq!(m.get(3, 3), 2.0);
    }

    #[test]
    fn density_sum_pool_preserves_total() {
        let s = set(224, 224, &[(10.0, 20.0), (100.5, 3.0), (200.0, 210.0), (150.0, 150.0)]);
        let m = density_map(&s, &MapConfig::default()).unwrap();
        let p = downsample_map(&m, 28, PoolMode::Sum).unwrap();
        assert_eq!((p.width(), p.height()), (28, 28));
        assert!((p.sum() - m.sum()).abs() < 1e-6);
    }

    #[test]
    fn knn_examples() {
        let s = set(32, 32, &[(10.5, 10.5)]);
        let m = knn_map(&s, 1).unwrap();
        assert_eq!(m.get(10, 10), 0.0);
        // pixel center (13.5, 14.5): col 13, row 14
        assert_eq!(m.get(14, 13), 5.0);

        let two = set(32, 2, &[(0.5, 0.5), (20.5, 0.5)]);
        assert_eq!(knn_map(&two, 2).unwrap().get(0, 10), 10.0);

        let three = set(16, 16, &[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]);
        let err = knn_map(&three, 9).unwrap_err();
        assert!(err.to_string().starts_with("insufficient heads for k"));
    }

    #[test]
    fn iknn_examples() {
        let s = set(32, 32, &[(10.5, 10.5)]);
        let m = iknn_map(&s, 1).unwrap();
        assert_eq!(m.get(10, 10), 1.0);
        assert_eq!(m.get(14, 13), 1.0 / 6.0);
        assert!(iknn_map(&set(8, 8, &[]), 3).unwrap().values().iter().all(|&v| v == 0.0));
        // k clamped to the head count
        let clamped = iknn_map(&s, 4).unwrap();
        assert_eq!(clamped, m);
    }

    #[test]
    fn knn_map_equals_per_pixel_oracle() {
        let heads = [(3.2, 4.9), (17.0, 30.5), (25.25, 2.0), (8.0, 8.0), (31.9, 31.9), (0.0, 16.0)];
        let s = set(32, 32, &heads);
        for k in 1..=heads.len() {
            let m = knn_map(&s, k).unwrap();
            for row in 0..32 {
                for col in 0..32 {
                    let d = brute_force_knn(s.heads(), pixel_center(row, col), k);
                    assert_eq!(m.get(row, col), d.iter().sum::<f64>() / k as f64);
                }
            }
        }
    }

    #[test]
    fn two_head_segment_is_constant_for_k2() {
        let s = set(64, 8, &[(4.5, 3.5), (50.5, 3.5)]);
        let m = knn_map(&s, 2).unwrap();
        for col in 4..=50 {
            assert_eq!(m.get(3, col), 23.0);
        }
    }

    #[test]
    fn iknn_profile_decreases_along_ray() {
        let s = set(64, 64, &[(10.5, 10.5)]);
        let m = iknn_map(&s, 1).unwrap();
        let profile: Vec<f64> = (10..64).map(|c| m.get(10, c)).collect();
        assert!(profile.windows(2).all(|w| w[0] > w[1]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn density_total_is_head_count(
            heads in prop::collection::vec((0.0f64..64.0, 0.0f64..48.0), 0..40),
            beta in 0.05f64..0.5,
        ) {
            let s = AnnotationSet::new(64, 48, heads.into_iter().map(Point::from).collect()).unwrap();
            let m = density_map(&s, &MapConfig { beta, ..Default::default() }).unwrap();
            prop_assert!((m.sum() - s.count() as f64).abs() < 1e-3);
            prop_assert!(m.min() >= 0.0);
        }

        #[test]
        fn iknn_in_unit_interval(heads in prop::collection::vec((0.0f64..40.0, 0.0f64..40.0), 1..20), k in 1usize..4) {
            let s = AnnotationSet::new(40, 40, heads.into_iter().map(Point::from).collect()).unwrap();
            let m = iknn_map(&s, k).unwrap();
            prop_assert!(m.min() > 0.0);
            prop_assert!(m.max() <= 1.0);
        }
    }
}
