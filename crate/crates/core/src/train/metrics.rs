//! Count-error metrics over a test set.

use std::fmt::Write as _;

use super::TrainError;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// `(truth, predicted)` per image.
    pub pairs: Vec<(f64, f64)>,
    pub mae: f64,
    /// `None` when every image has a zero true count.
    pub nae: Option<f64>,
    /// Images left out of the normalized error because their true count is 0.
    pub nae_excluded: usize,
    pub rmse: f64,
}

impl MetricsReport {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Mean absolute, normalized absolute and root-mean-squared count errors.
pub fn compute_metrics(pairs: &[(f64, f64)]) -> Result<MetricsReport, TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::EmptyMetrics);
    }
    let n = pairs.len() as f64;
    let mae = pairs.iter().map(|(c, p)| (p - c).abs()).sum::<f64>() / n;
    let rmse = (pairs.iter().map(|(c, p)| (p - c) * (p - c)).sum::<f64>() / n).sqrt();
    let normalized: Vec<f64> = pairs
        .iter()
        .filter(|(c, _)| *c != 0.0)
        .map(|(c, p)| (p - c).abs() / c)
        .collect();
    let nae = (!normalized.is_empty()).then(|| normalized.iter().sum::<f64>() / normalized.len() as f64);
    Ok(MetricsReport {
        pairs: pairs.to_vec(),
        mae,
        nae,
        nae_excluded: pairs.len() - normalized.len(),
        rmse,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"))
}

/// `method,mae,nae,rmse` table.
pub fn metrics_csv<'a>(rows: impl IntoIterator<Item = (&'a str, &'a MetricsReport)>) -> String {
    let mut out = String::from("method,mae,nae,rmse\n");
    for (method, r) in rows {
        let _ = writeln!(out, "{method},{:.6},{},{:.6}", r.mae, cell(r.nae), r.rmse);
    }
    out
}
