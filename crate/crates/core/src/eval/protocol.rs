use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetManifest, RatingScale};
use crate::error::{Error, Result};
use crate::eval::metrics::{rmse, srcc, MeanStd, MetricsSummary, SplitMetrics};
use crate::eval::splits::{make_splits, SplitSpec};
use crate::eval::train::{predict_items, train_head, HeadInputs, LabeledSet, TrainConfig};
use crate::seed::{derive_rng, derive_seed};
use crate::subjective::NoiseGrid;

/// Outcome of one trained model on its test partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitOutcome {
    pub split: usize,
    pub metrics: SplitMetrics,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Manifest indices of the test items.
    pub test: Vec<usize>,
    /// Predictions for `test` on the manifest's rating scale.
    pub predicted: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntraResult {
    pub summary: MetricsSummary,
    pub splits: Vec<SplitOutcome>,
}

fn check_aligned(manifest: &DatasetManifest, inputs: &HeadInputs<'_>) -> Result<()> {
    let same = manifest.len() == inputs.len()
        && manifest.records().iter().zip(inputs.ids()).all(|(r, id)| &r.video_id == id);
    if same {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "prepared inputs do not follow the record order of manifest {:?}",
            manifest.name
        )))
    }
}

fn select(values: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| values[i]).collect()
}

/// Trains one head per random split and summarises test metrics.
///
/// Splits run in parallel on the current rayon pool; each derives its own
/// seed from `tc.seed` and the split index.
pub fn run_intra(
    manifest: &DatasetManifest,
    inputs: &HeadInputs<'_>,
    tc: &TrainConfig,
    spec: &SplitSpec,
) -> Result<IntraResult> {
    check_aligned(manifest, inputs)?;
    let splits = make_splits(manifest.len(), spec)?;
    let mos = manifest.mos();
    let scale = manifest.scale;
    let config = inputs.config();

    let outcomes = splits
        .par_iter()
        .enumerate()
        .map(|(i, split)| {
            let tc = TrainConfig {
                seed: derive_seed(tc.seed, "split-train", i as u64),
                ..*tc
            };
            let train = LabeledSet::new(inputs, split.train.clone(), &select(&mos, &split.train), &scale)?;
            let val = LabeledSet::new(inputs, split.val.clone(), &select(&mos, &split.val), &scale)?;
            let trained = train_head(config, &tc, scale, &train, &val)?;
            let predicted: Vec<f64> = predict_items(&trained.head, inputs, &split.test)?
                .into_iter()
                .map(|p| scale.denormalize(p))
                .collect();
            let metrics = SplitMetrics::compute(&predicted, &select(&mos, &split.test), scale.hi - scale.lo)?;
            log::info!("split {i}: SRCC {:.4} PLCC {:.4}", metrics.srcc, metrics.plcc);
            Ok(SplitOutcome {
                split: i,
                metrics,
                best_epoch: trained.best_epoch,
                epochs_run: trained.history.len(),
                test: split.test.clone(),
                predicted,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let summary = MetricsSummary::aggregate(outcomes.iter().map(|o| o.metrics).collect())?;
    Ok(IntraResult {
        summary,
        splits: outcomes,
    })
}

/// A manifest with inputs prepared in its record order.
pub struct Prepared<'m, 'a, 'b> {
    pub manifest: &'m DatasetManifest,
    pub inputs: &'b HeadInputs<'a>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterTarget {
    pub name: String,
    pub summary: MetricsSummary,
}

/// Cross-dataset protocol: every repeat trains on the whole training
/// manifest, validates on a random `val_fraction` of the validation
/// manifest and tests on each test manifest. The unused part of the
/// validation manifest is reported as an extra target named
/// `<name>-heldout`.
pub fn run_inter(
    train: &Prepared<'_, '_, '_>,
    val: &Prepared<'_, '_, '_>,
    val_fraction: f64,
    tests: &[Prepared<'_, '_, '_>],
    tc: &TrainConfig,
    repeats: usize,
) -> Result<Vec<InterTarget>> {
    if !(val_fraction > 0.0 && val_fraction <= 1.0) {
        return Err(Error::Validation(format!("validation fraction must lie in (0, 1], got {val_fraction}")));
    }
    if repeats == 0 {
        return Err(Error::Validation("need at least one repeat".into()));
    }
    let config = train.inputs.config();
    for p in std::iter::once(val).chain(tests) {
        check_aligned(p.manifest, p.inputs)?;
        if p.inputs.config().input_dim != config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: config.input_dim,
                found: p.inputs.config().input_dim,
            });
        }
        if p.inputs.config() != config {
            return Err(Error::Validation("all manifests must be prepared for the same head".into()));
        }
    }
    check_aligned(train.manifest, train.inputs)?;

    let train_scale = train.manifest.scale;
    let train_items: Vec<usize> = (0..train.manifest.len()).collect();
    let train_set = LabeledSet::new(train.inputs, train_items, &train.manifest.mos(), &train_scale)?;
    let val_mos = val.manifest.mos();
    let n_val = ((val.manifest.len() as f64 * val_fraction).floor() as usize).clamp(1, val.manifest.len());
    let heldout_name = format!("{}-heldout", val.manifest.name);

    let per_repeat = (0..repeats)
        .into_par_iter()
        .map(|r| {
            let mut order: Vec<usize> = (0..val.manifest.len()).collect();
            order.shuffle(&mut derive_rng(tc.seed, "inter-val", r as u64));
            let (val_idx, held) = order.split_at(n_val);
            let val_set = LabeledSet::new(val.inputs, val_idx.to_vec(), &select(&val_mos, val_idx), &val.manifest.scale)?;
            let tc_r = TrainConfig {
                seed: derive_seed(tc.seed, "inter-train", r as u64),
                ..*tc
            };
            let trained = train_head(config, &tc_r, train_scale, &train_set, &val_set)?;

            let mut out = Vec::new();
            let mut evaluate = |name: &str, p: &Prepared<'_, '_, '_>, items: &[usize]| -> Result<()> {
                let scale = p.manifest.scale;
                let predicted: Vec<f64> = predict_items(&trained.head, p.inputs, items)?
                    .into_iter()
                    .map(|v| scale.denormalize(v))
                    .collect();
                let mos = select(&p.manifest.mos(), items);
                out.push((name.to_string(), SplitMetrics::compute(&predicted, &mos, scale.hi - scale.lo)?));
                Ok(())
            };
            if held.len() >= 3 {
                evaluate(&heldout_name, val, held)?;
            }
            for t in tests {
                let all: Vec<usize> = (0..t.manifest.len()).collect();
                evaluate(&t.manifest.name, t, &all)?;
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut by_target: BTreeMap<String, Vec<SplitMetrics>> = BTreeMap::new();
    let mut order = Vec::new();
    for rep in per_repeat {
        for (name, m) in rep {
            if !by_target.contains_key(&name) {
                order.push(name.clone());
            }
            by_target.entry(name).or_default().push(m);
        }
    }
    order
        .into_iter()
        .map(|name| {
            let summary = MetricsSummary::aggregate(by_target.remove(&name).unwrap())?;
            Ok(InterTarget { name, summary })
        })
        .collect()
}

/// Test SRCC of all models trained on one `(train_votes, val_votes)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseCell {
    pub train_votes: usize,
    pub val_votes: usize,
    pub srcc: MeanStd,
}

/// Trains one head per noise-grid variant. Repeat `r` uses split `r` of
/// `spec` (so `spec.n_splits` is replaced by the repeat count); training
/// and validation targets are the variant's subsampled MOS and test SRCC
/// is measured against its held-out test MOS. `inputs` must follow the
/// grid's video order.
pub fn run_noise_grid(
    grid: &NoiseGrid,
    inputs: &HeadInputs<'_>,
    scale: RatingScale,
    tc: &TrainConfig,
    spec: &SplitSpec,
) -> Result<Vec<NoiseCell>> {
    if inputs.ids() != grid.video_ids.as_slice() {
        return Err(Error::Validation("prepared inputs do not follow the vote table's video order".into()));
    }
    let repeats = grid.variants.iter().map(|v| v.repeat + 1).max().unwrap_or(0);
    let splits = make_splits(grid.video_ids.len(), &SplitSpec { n_splits: repeats, ..*spec })?;
    let config = inputs.config();

    let scores = grid
        .variants
        .par_iter()
        .enumerate()
        .map(|(i, v)| {
            let split = &splits[v.repeat];
            let tc = TrainConfig {
                seed: derive_seed(tc.seed, "noise-train", i as u64),
                ..*tc
            };
            let train = LabeledSet::new(inputs, split.train.clone(), &select(&v.train_mos, &split.train), &scale)?;
            let val = LabeledSet::new(inputs, split.val.clone(), &select(&v.val_mos, &split.val), &scale)?;
            let trained = train_head(config, &tc, scale, &train, &val)?;
            let predicted = predict_items(&trained.head, inputs, &split.test)?;
            srcc(&predicted, &select(&v.test_mos, &split.test))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut cells: Vec<((usize, usize), Vec<f64>)> = Vec::new();
    for (v, s) in grid.variants.iter().zip(scores) {
        let key = (v.train_votes, v.val_votes);
        match cells.iter_mut().find(|(k, _)| *k == key) {
            Some((_, vals)) => vals.push(s),
            None => cells.push((key, vec![s])),
        }
    }
    cells
        .into_iter()
        .map(|((train_votes, val_votes), vals)| {
            Ok(NoiseCell {
                train_votes,
                val_votes,
                srcc: MeanStd::of(&vals)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDeviation {
    pub group: String,
    pub count: usize,
    pub rmse: f64,
    /// `100 * (rmse - overall) / overall`.
    pub deviation_pct: f64,
}

/// Per-group RMSE relative to the RMSE over all records, for a group tag
/// carried by every record. `predictions` follow the manifest's order.
pub fn group_rmse_deviation(predictions: &[f64], manifest: &DatasetManifest, tag: &str) -> Result<Vec<GroupDeviation>> {
    if predictions.len() != manifest.len() {
        return Err(Error::DimensionMismatch {
            expected: manifest.len(),
            found: predictions.len(),
        });
    }
    let mos = manifest.mos();
    let overall = rmse(predictions, &mos)?;
    if overall == 0.0 {
        return Err(Error::Degenerate("overall RMSE is zero; deviations are undefined".into()));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.records().iter().enumerate() {
        let g = r
            .groups
            .get(tag)
            .ok_or_else(|| Error::Validation(format!("video {:?} has no {tag:?} tag", r.video_id)))?;
        groups.entry(g.as_str()).or_default().push(i);
    }
    groups
        .into_iter()
        .map(|(g, idx)| {
            let e = rmse(&select(predictions, &idx), &select(&mos, &idx))?;
            Ok(GroupDeviation {
                group: g.to_string(),
                count: idx.len(),
                rmse: e,
                deviation_pct: 100.0 * (e - overall) / overall,
            })
        })
        .collect()
}
