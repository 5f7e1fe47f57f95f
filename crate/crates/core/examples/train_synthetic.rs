//! Train on a synthetic split and compare with the constant-count baseline.
//!
//! cargo run --release --example train_synthetic [epochs] [kind] [k]
//!
//! With 200 training scenes one epoch takes a few seconds per core.

use mudiknn::synthetic::{generate_split, SceneConfig};
use mudiknn::train::{constant_baseline, history_csv, load_split, method_name, run_experiment, TrainConfig, DEFAULT_STEP};
use mudiknn::MapKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().as_deref().unwrap_or("12").parse()?;
    let kind: MapKind = args.next().as_deref().unwrap_or("iknn").parse()?;
    let k: usize = args.next().as_deref().unwrap_or("1").parse()?;

    let dir = tempfile::tempdir()?;
    generate_split(dir.path(), &SceneConfig { seed: 2024, ..Default::default() }, 200, 50)?;
    let (train_set, test_set) = load_split(dir.path())?;

    let mut cfg = TrainConfig {
        kind,
        epochs,
        ..Default::default()
    };
    cfg.map.k = k;
    let baseline = constant_baseline(&train_set, &test_set)?;
    let (outcome, report) = run_experiment(&train_set, &test_set, &cfg, DEFAULT_STEP)?;
    print!("{}", history_csv(&outcome.history));
    println!("constant baseline: MAE {:.3}  RMSE {:.3}", baseline.mae, baseline.rmse);
    println!("{}: MAE {:.3}  RMSE {:.3}  NAE {:?}", method_name(&cfg), report.mae, report.rmse, report.nae);
    Ok(())
}
