//! One-axis ablations over label parameters.

use std::fmt;
use std::str::FromStr;

use crate::labelmaps::{MapKind, NATIVE_RESOLUTION};

use super::data::Sample;
use super::metrics::{compute_metrics, metrics_csv, MetricsReport};
use super::trainer::{run_experiment, TrainConfig};
use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Density maps with the given kernel scale.
    Beta,
    /// ikNN maps with the given neighbor count.
    K,
    /// The base configuration at the given label resolution.
    Resolution,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Beta => "beta",
            Self::K => "k",
            Self::Resolution => "resolution",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "beta" => Ok(Self::Beta),
            "k" => Ok(Self::K),
            "resolution" => Ok(Self::Resolution),
            other => Err(format!("unknown sweep axis `{other}` (expected beta, k or resolution)")),
        }
    }
}

/// Table label of a configuration, e.g. `MUD-i1NN`, `MUD-density-beta0.3`,
/// `MUD-i1NN 28x28`. The resolution is quoted per 224-pixel patch.
pub fn method_name(config: &TrainConfig) -> String {
    let base = match config.kind {
        MapKind::Iknn => format!("MUD-i{}NN", config.map.k),
        MapKind::Knn => format!("MUD-{}NN", config.map.k),
        MapKind::Density => format!("MUD-density-beta{}", config.map.beta),
    };
    let r = config.map.label_resolution * NATIVE_RESOLUTION / config.model.patch.max(1);
    if r == NATIVE_RESOLUTION {
        base
    } else {
        format!("{base} {r}x{r}")
    }
}

/// `base` with one axis set to `value`.
pub fn sweep_config(base: &TrainConfig, axis: SweepAxis, value: f64) -> Result<TrainConfig, TrainError> {
    let mut cfg = base.clone();
    let whole = || {
        (value.fract() == 0.0 && value >= 1.0)
            .then_some(value as usize)
            .ok_or_else(|| TrainError::Config(format!("{axis} value {value} must be a positive integer")))
    };
    match axis {
        SweepAxis::Beta => {
            cfg.kind = MapKind::Density;
            cfg.map.beta = value;
        }
        SweepAxis::K => {
            cfg.kind = MapKind::Iknn;
            cfg.map.k = whole()?;
        }
        SweepAxis::Resolution => cfg.map.label_resolution = whole()?,
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub method: String,
    pub value: f64,
    /// One report per seed, in seed order.
    pub runs: Vec<MetricsReport>,
    /// Per-metric median over seeds; `pairs` holds the first seed's pairs.
    pub summary: MetricsReport,
}

/// Trains and evaluates one model per `(value, seed)`.
pub fn ablation_sweep(
    train_set: &[Sample],
    test_set: &[Sample],
    base: &TrainConfig,
    axis: SweepAxis,
    values: &[f64],
    seeds: &[u64],
    step: usize,
) -> Result<Vec<SweepRow>, TrainError> {
    if values.is_empty() || seeds.is_empty() {
        return Err(TrainError::Config("sweep needs at least one value and one seed".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let cfg = sweep_config(base, axis, value)?;
        let method = method_name(&cfg);
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let cfg = TrainConfig { seed, ..cfg.clone() };
            let (_, report) = run_experiment(train_set, test_set, &cfg, step)?;
            log::info!("{method} seed {seed}: MAE {:.3}, RMSE {:.3}", report.mae, report.rmse);
            runs.push(report);
        }
        let pick = |f: fn(&MetricsReport) -> f64| median(&runs.iter().map(f).collect::<Vec<_>>()).unwrap_or(f64::NAN);
        let naes: Vec<f64> = runs.iter().filter_map(|r| r.nae).collect();
        let summary = MetricsReport {
            mae: pick(|r| r.mae),
            rmse: pick(|r| r.rmse),
            nae: median(&naes),
            ..compute_metrics(&runs[0].pairs)?
        };
        rows.push(SweepRow {
            method,
            value,
            runs,
            summary,
        });
    }
    Ok(rows)
}

/// `method,mae,nae,rmse` with one row per swept value.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    metrics_csv(rows.iter().map(|r| (r.method.as_str(), &r.summary)))
}
