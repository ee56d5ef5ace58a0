//! Content-diversity analysis of video datasets in content-feature space.
//!
//! A dataset is a point set of per-video content vectors. The coverage of a
//! set `X` by a set `Y` at radius `s` is the fraction of points of `X` whose
//! nearest neighbour in `Y` lies within Euclidean distance `s`; as a
//! function of `s` this is the empirical CDF of the point-to-set distances.

use std::path::Path;

use ndarray::{concatenate, Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{read_feature_archive, write_feature_archive, FeatureArchive};
use crate::error::{Error, Result};

/// Number of thresholds in the default evaluation grid.
pub const DEFAULT_GRID: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub name: String,
    points: Array2<f64>,
}

impl PointSet {
    pub fn new(name: impl Into<String>, points: Array2<f64>) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::Empty("point set has no points"));
        }
        if points.ncols() == 0 {
            return Err(Error::Empty("point set has zero dimension"));
        }
        if let Some(((row, col), _)) = points.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { row, col });
        }
        Ok(PointSet {
            name: name.into(),
            points,
        })
    }

    pub fn from_f32(name: impl Into<String>, points: &Array2<f32>) -> Result<Self> {
        Self::new(name, points.mapv(|v| v as f64))
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// Reads a set stored as a feature archive whose rows are videos.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let archive = read_feature_archive(path)?;
        Self::from_f32(archive.video_id.clone(), archive.data())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let data = self.points.mapv(|v| v as f32);
        let archive = FeatureArchive::single_block(self.name.clone(), data, "content")?;
        write_feature_archive(&archive, path)
    }

    fn check_dim(&self, other: &PointSet) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: other.dim(),
                found: self.dim(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Aggregator {
    #[default]
    Median,
    Max,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCurve {
    pub covered_name: String,
    pub covering_name: String,
    pub thresholds: Vec<f64>,
    pub ratios: Vec<f64>,
    /// Exact median of the point-to-set distances, independent of the grid.
    pub median_distance: f64,
    pub max_distance: f64,
    pub n_covered: usize,
}

fn euclidean(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        s += d * d;
    }
    s.sqrt()
}

fn nearest(x: ArrayView1<'_, f64>, set: &PointSet) -> f64 {
    set.points
        .rows()
        .into_iter()
        .map(|y| euclidean(x, y))
        .fold(f64::INFINITY, f64::min)
}

/// `d(x, Y)`: Euclidean distance from `x` to its nearest point in `set`.
pub fn point_to_set_distance(x: &[f64], set: &PointSet) -> Result<f64> {
    if x.len() != set.dim() {
        return Err(Error::DimensionMismatch {
            expected: set.dim(),
            found: x.len(),
        });
    }
    Ok(nearest(ArrayView1::from(x), set))
}

/// `d(x, Y)` for every `x` in `covered`, in row order.
pub fn distances_to_set(covered: &PointSet, covering: &PointSet) -> Result<Vec<f64>> {
    covered.check_dim(covering)?;
    Ok(covered
        .points
        .axis_iter(Axis(0))
        .into_par_iter()
        .map(|x| nearest(x, covering))
        .collect())
}

fn fraction_within(distances: &[f64], s: f64) -> f64 {
    distances.iter().filter(|&&d| d <= s).count() as f64 / distances.len() as f64
}

fn check_threshold(s: f64) -> Result<()> {
    if !(s >= 0.0) || !s.is_finite() {
        return Err(Error::Validation(format!("coverage threshold must be finite and >= 0, got {s}")));
    }
    Ok(())
}

/// `C_{Y,s}(X)`: fraction of `covered` within distance `s` of `covering`.
pub fn coverage_ratio(covered: &PointSet, covering: &PointSet, s: f64) -> Result<f64> {
    check_threshold(s)?;
    let d = distances_to_set(covered, covering)?;
    Ok(fraction_within(&d, s))
}

/// Median with the two middle order statistics averaged for even counts.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("median of no values"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

pub fn aggregate(values: &[f64], aggregator: Aggregator) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("aggregate of no values"));
    }
    Ok(match aggregator {
        Aggregator::Median => median(values)?,
        Aggregator::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Aggregator::Mean => values.iter().sum::<f64>() / values.len() as f64,
    })
}

/// `d(X, Y)`: aggregate of the point-to-set distances from `covered` to
/// `covering`. With [`Aggregator::Max`] this is the one-sided Hausdorff
/// distance.
pub fn one_sided_distance(covered: &PointSet, covering: &PointSet, aggregator: Aggregator) -> Result<f64> {
    aggregate(&distances_to_set(covered, covering)?, aggregator)
}

/// `n` evenly spaced thresholds from 0 to `max`, inclusive.
pub fn threshold_grid(max: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![max],
        _ => (0..n)
            .map(|i| if i == n - 1 { max } else { max * i as f64 / (n - 1) as f64 })
            .collect(),
    }
}

fn check_ascending(thresholds: &[f64]) -> Result<()> {
    for &s in thresholds {
        check_threshold(s)?;
    }
    if thresholds.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Validation("thresholds must be ascending".into()));
    }
    Ok(())
}

fn curve_from_distances(
    covered_name: &str,
    covering_name: &str,
    distances: &[f64],
    thresholds: Option<&[f64]>,
) -> Result<CoverageCurve> {
    let max_distance = distances.iter().copied().fold(0.0, f64::max);
    let thresholds = match thresholds {
        Some(t) => {
            check_ascending(t)?;
            t.to_vec()
        }
        None => threshold_grid(max_distance, DEFAULT_GRID),
    };
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let ratios = thresholds
        .iter()
        .map(|&s| sorted.partition_point(|&d| d <= s) as f64 / n)
        .collect();
    Ok(CoverageCurve {
        covered_name: covered_name.to_owned(),
        covering_name: covering_name.to_owned(),
        thresholds,
        ratios,
        median_distance: median(distances)?,
        max_distance,
        n_covered: distances.len(),
    })
}

/// Cumulative coverage of `covered` by `covering`. When `thresholds` is
/// `None` a [`DEFAULT_GRID`]-point grid up to the largest distance is used.
pub fn coverage_curve(covered: &PointSet, covering: &PointSet, thresholds: Option<&[f64]>) -> Result<CoverageCurve> {
    let d = distances_to_set(covered, covering)?;
    curve_from_distances(&covered.name, &covering.name, &d, thresholds)
}

/// For each set `X_k`, the coverage curve of the union of all other sets by
/// `X_k`. Without explicit thresholds all curves share one grid spanning the
/// largest distance seen.
pub fn one_vs_all(sets: &[PointSet], thresholds: Option<&[f64]>) -> Result<Vec<CoverageCurve>> {
    if sets.len() < 2 {
        return Err(Error::Validation(format!(
            "one-vs-all coverage needs at least 2 datasets, got {}",
            sets.len()
        )));
    }
    for s in &sets[1..] {
        s.check_dim(&sets[0])?;
    }
    let per_set: Vec<(String, Vec<f64>)> = (0..sets.len())
        .map(|k| {
            let others: Vec<_> = sets
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != k)
                .map(|(_, s)| s.points.view())
                .collect();
            let rest = concatenate(Axis(0), &others).expect("dimensions checked");
            let complement = PointSet {
                name: format!("not {}", sets[k].name),
                points: rest,
            };
            Ok((complement.name.clone(), distances_to_set(&complement, &sets[k])?))
        })
        .collect::<Result<_>>()?;

    let shared;
    let grid = match thresholds {
        Some(t) => Some(t),
        None => {
            let max = per_set
                .iter()
                .flat_map(|(_, d)| d.iter().copied())
                .fold(0.0, f64::max);
            shared = threshold_grid(max, DEFAULT_GRID);
            Some(shared.as_slice())
        }
    };
    per_set
        .iter()
        .zip(sets)
        .map(|((covered, d), covering)| curve_from_distances(covered, &covering.name, d, grid))
        .collect()
}
