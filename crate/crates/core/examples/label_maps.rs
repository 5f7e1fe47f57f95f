//! Rasterize one set of head annotations as density, kNN and ikNN maps and
//! print a horizontal profile through the first head.
//!
//! cargo run --release --example label_maps [out_dir]

use std::path::PathBuf;

use mudiknn::labelmaps::{export_png, generate, PngScale};
use mudiknn::{AnnotationSet, MapConfig, MapKind, Point};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from);
    let heads = vec![
        Point::new(40.5, 60.5),
        Point::new(52.5, 64.5),
        Point::new(150.5, 120.5),
        Point::new(100.5, 180.5),
        Point::new(110.5, 170.5),
    ];
    let ann = AnnotationSet::new(224, 224, heads)?;
    let cfg = MapConfig::default();

    for kind in [MapKind::Density, MapKind::Knn, MapKind::Iknn] {
        let map = generate(&ann, kind, &cfg)?;
        let row: Vec<String> = (30..56).step_by(2).map(|c| format!("{:.4}", map.get(60, c))).collect();
        println!("{kind:>8}: sum {:8.3}  max {:.4}  row 60 = [{}]", map.sum(), map.max(), row.join(" "));
        if let Some(dir) = &out {
            std::fs::create_dir_all(dir)?;
            let scale = if kind == MapKind::Knn { PngScale::Log } else { PngScale::Linear };
            export_png(&map, &dir.join(format!("{kind}.png")), scale)?;
        }
    }
    Ok(())
}
