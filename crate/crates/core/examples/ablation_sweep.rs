//! A reduced neighbor-count sweep on a small synthetic split.
//!
//! cargo run --release --example ablation_sweep [epochs]

use mudiknn::synthetic::{generate_split, SceneConfig};
use mudiknn::train::{ablation_sweep, load_split, sweep_csv, SweepAxis, TrainConfig, DEFAULT_STEP};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize = std::env::args().nth(1).as_deref().unwrap_or("4").parse()?;
    let dir = tempfile::tempdir()?;
    generate_split(dir.path(), &SceneConfig { seed: 9, ..Default::default() }, 40, 10)?;
    let (train_set, test_set) = load_split(dir.path())?;
    let base = TrainConfig {
        epochs,
        ..Default::default()
    };
    let rows = ablation_sweep(&train_set, &test_set, &base, SweepAxis::K, &[1.0, 3.0, 6.0], &[0, 1], DEFAULT_STEP)?;
    for row in &rows {
        let maes: Vec<String> = row.runs.iter().map(|r| format!("{:.3}", r.mae)).collect();
        println!("{}: per-seed MAE [{}]", row.method, maes.join(", "));
    }
    print!("{}", sweep_csv(&rows));
    Ok(())
}
