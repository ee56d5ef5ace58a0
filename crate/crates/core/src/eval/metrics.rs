//! Correlation and error metrics between predictions and subjective scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_lengths(a: &[f64], b: &[f64], min: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.len() < min {
        return Err(Error::Degenerate(format!("need at least {min} paired values, got {}", a.len())));
    }
    if let Some(v) = a.iter().chain(b).find(|v| !v.is_finite()) {
        return Err(Error::Degenerate(format!("non-finite value {v}")));
    }
    Ok(())
}

/// 1-based ranks with ties sharing the average of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate("correlation of a constant sequence is undefined".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson linear correlation coefficient.
pub fn plcc(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b, 2)?;
    pearson(a, b)
}

/// Spearman rank-order correlation: Pearson correlation of average ranks.
pub fn srcc(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b, 3)?;
    pearson(&average_ranks(a), &average_ranks(b))
}

pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b, 1)?;
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((ss / a.len() as f64).sqrt())
}

/// Mean and population standard deviation of repeated measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("no values to summarise"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(MeanStd {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3} (±{:.3})", self.mean, self.std)
    }
}

/// Test metrics of one trained model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub srcc: f64,
    pub plcc: f64,
    /// RMSE on the manifest's rating scale.
    pub rmse: f64,
    /// RMSE after mapping the rating scale linearly onto [0, 1].
    pub rmse_normalized: f64,
}

impl SplitMetrics {
    pub fn compute(predicted: &[f64], mos: &[f64], scale_span: f64) -> Result<Self> {
        let rmse = rmse(predicted, mos)?;
        Ok(SplitMetrics {
            srcc: srcc(predicted, mos)?,
            plcc: plcc(predicted, mos)?,
            rmse,
            rmse_normalized: rmse / scale_span,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub srcc: MeanStd,
    pub plcc: MeanStd,
    pub rmse: MeanStd,
    pub rmse_normalized: MeanStd,
    pub per_split: Vec<SplitMetrics>,
}

impl MetricsSummary {
    pub fn aggregate(per_split: Vec<SplitMetrics>) -> Result<Self> {
        let col = |f: fn(&SplitMetrics) -> f64| per_split.iter().map(f).collect::<Vec<_>>();
        Ok(MetricsSummary {
            srcc: MeanStd::of(&col(|m| m.srcc))?,
            plcc: MeanStd::of(&col(|m| m.plcc))?,
            rmse: MeanStd::of(&col(|m| m.rmse))?,
            rmse_normalized: MeanStd::of(&col(|m| m.rmse_normalized))?,
            per_split,
        })
    }
}
