//! Generate a small synthetic dataset and summarize it from the files.
//!
//! cargo run --release --example dataset_stats [out_dir]

use std::path::PathBuf;

use mudiknn::annotations::{dataset_stats, load_annotations};
use mudiknn::synthetic::{generate_dataset, read_manifest, scene_name, SceneConfig, MANIFEST};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp;
    let dir = match std::env::args().nth(1) {
        Some(d) => PathBuf::from(d),
        None => {
            tmp = tempfile::tempdir()?;
            tmp.path().to_path_buf()
        }
    };
    let cfg = SceneConfig {
        seed: 5,
        width: 320,
        height: 240,
        ..Default::default()
    };
    let summary = generate_dataset(&dir, &cfg, 20)?;
    println!("wrote {} scenes to {}", summary.counts.len(), dir.display());

    let mut sets = Vec::new();
    for i in 0..summary.counts.len() {
        let csv = dir.join(format!("{}.csv", scene_name(i)));
        sets.push(load_annotations(&csv, cfg.width, cfg.height)?);
    }
    let stats = dataset_stats(&sets)?;
    println!("{stats:#?}");
    assert_eq!(stats.total_count, summary.total_count);
    println!("manifest: {:?}", read_manifest(&dir.join(MANIFEST))?);
    Ok(())
}
