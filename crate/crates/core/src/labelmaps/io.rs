//! LMAP raster files and PNG visualization.
//!
//! LMAP layout (little-endian): `"LMAP"`, `u8` version (1), `u8` kind
//! (0 density, 1 knn, 2 iknn), `u16` reserved (0), `u32` width, `u32` height,
//! then `width * height` `f32` values in row-major order.

use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use image::GrayImage;

use super::{LabelMap, MapError, MapKind};

const MAGIC: &[u8; 4] = b"LMAP";
const VERSION: u8 = 1;

pub fn write_lmap<W: Write>(map: &LabelMap, out: &mut W) -> Result<(), MapError> {
    let mut buf = Vec::with_capacity(16 + map.values().len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.push(map.kind().code());
    buf.extend_from_slice(&0u16.to_le_bytes());
    buf.extend_from_slice(&(map.width() as u32).to_le_bytes());
    buf.extend_from_slice(&(map.height() as u32).to_le_bytes());
    for &v in map.values() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_lmap<R: Read>(input: &mut R) -> Result<LabelMap, MapError> {
    let mut header = [0u8; 16];
    input.read_exact(&mut header)?;
    if &header[..4] != MAGIC {
        return Err(MapError::Format("bad magic".into()));
    }
    if header[4] != VERSION {
        return Err(MapError::Format(format!("unsupported version {}", header[4])));
    }
    let kind = MapKind::from_code(header[5]).ok_or_else(|| MapError::Format(format!("unknown kind {}", header[5])))?;
    let width = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes")) as usize;
    let height = u32::from_le_bytes(header[12..16].try_into().expect("4 bytes")) as usize;
    let n = width
        .checked_mul(height)
        .filter(|&n| n > 0 && n <= 1 << 30)
        .ok_or_else(|| MapError::Format(format!("bad dimensions {width}x{height}")))?;
    let mut raw = vec![0u8; n * 4];
    input.read_exact(&mut raw)?;
    let values = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    LabelMap::new(kind, width, height, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PngScale {
    #[default]
    Linear,
    /// `log(1 + v)` before the affine stretch, to make faint tails visible.
    Log,
}

impl FromStr for PngScale {
    type Err = MapError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(PngScale::Linear),
            "log" => Ok(PngScale::Log),
            _ => Err(MapError::Parse {
                what: "png scale",
                text: s.to_string(),
            }),
        }
    }
}

/// Grayscale rendering: values (optionally log-transformed) are stretched
/// affinely from `[min, max]` to `[0, 255]`; a constant map renders black.
pub fn render_gray(map: &LabelMap, scale: PngScale) -> Result<GrayImage, MapError> {
    if map.values().iter().any(|v| !v.is_finite()) {
        return Err(MapError::NonFinite);
    }
    let transformed: Vec<f64> = match scale {
        PngScale::Linear => map.values().to_vec(),
        PngScale::Log => map.values().iter().map(|&v| v.max(0.0).ln_1p()).collect(),
    };
    let lo = transformed.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = transformed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let pixels = transformed
        .iter()
        .map(|&v| {
            if range > 0.0 {
                ((v - lo) / range * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect();
    Ok(GrayImage::from_raw(map.width() as u32, map.height() as u32, pixels).expect("buffer matches dimensions"))
}

pub fn export_png(map: &LabelMap, path: &Path, scale: PngScale) -> Result<(), MapError> {
    let img = render_gray(map, scale)?;
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lmap_header_layout() {
        let m = LabelMap::new(MapKind::Iknn, 2, 1, vec![0.5, 1.0]).unwrap();
        let mut buf = Vec::new();
        write_lmap(&m, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"LMAP");
        assert_eq!(buf[4], 1);
        assert_eq!(buf[5], 2);
        assert_eq!(&buf[6..8], &[0, 0]);
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[12..16], &1u32.to_le_bytes());
        assert_eq!(&buf[16..20], &0.5f32.to_le_bytes());
        assert_eq!(buf.len(), 24);
        assert_eq!(read_lmap(&mut buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn lmap_rejects_garbage() {
        assert!(read_lmap(&mut &b"NOPE\x01\x00\x00\x00\x01\x00\x00\x00\x01\x00\x00\x00"[..]).is_err());
        let mut buf = Vec::new();
        write_lmap(&LabelMap::zeros(MapKind::Knn, 3, 3), &mut buf).unwrap();
        buf.truncate(20);
        assert!(read_lmap(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn png_ranges() {
        let zero = LabelMap::zeros(MapKind::Density, 4, 4);
        assert!(render_gray(&zero, PngScale::Linear).unwrap().pixels().all(|p| p.0[0] == 0));
        let two = LabelMap::new(MapKind::Iknn, 2, 1, vec![0.0, 1.0]).unwrap();
        let img = render_gray(&two, PngScale::Linear).unwrap();
        assert_eq!(img.as_raw(), &vec![0u8, 255]);
        let img = render_gray(&two, PngScale::Log).unwrap();
        assert_eq!(img.as_raw(), &vec![0u8, 255]);
        let nan = LabelMap::new(MapKind::Knn, 1, 1, vec![f64::NAN]).unwrap();
        assert!(matches!(render_gray(&nan, PngScale::Linear), Err(MapError::NonFinite)));
    }

    #[test]
    fn log_scale_brightens_tails() {
        // a decaying profile: log scaling lifts mid-range values
        let values: Vec<f64> = (0..32).map(|d| 10.0 / (d as f64 + 1.0)).collect();
        let m = LabelMap::new(MapKind::Density, 32, 1, values).unwrap();
        let lin = render_gray(&m, PngScale::Linear).unwrap();
        let log = render_gray(&m, PngScale::Log).unwrap();
        assert!(log.as_raw()[8] > lin.as_raw()[8]);
    }
}
