use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{archive_path, read_feature_archive, RatingScale};
use crate::error::{Error, Result};
use crate::nn::heads::stack_inputs;
use crate::nn::{Adam, EpochRecord, Head, HeadConfig, HeadKind, TrainedHead};
use crate::seed::derive_rng;

/// Optimisation settings for one head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Validation loss must drop by more than this to count as improvement.
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 128,
            max_epochs: 250,
            patience: 25,
            min_delta: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Validation("batch size and epoch limit must be positive".into()));
        }
        if self.patience >= self.max_epochs {
            return Err(Error::Validation(format!(
                "patience {} must be below the epoch limit {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.min_delta >= 0.0) {
            return Err(Error::Validation("min_delta must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-dataset training settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Konvid1k,
    Qualcomm,
    Cvd2014,
    Vqc,
    Proposed,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::Konvid1k, Preset::Qualcomm, Preset::Cvd2014, Preset::Vqc, Preset::Proposed];

    pub fn batch_size(self) -> usize {
        match self {
            Preset::Konvid1k | Preset::Proposed => 128,
            _ => 8,
        }
    }

    pub fn learning_rate(self, kind: HeadKind) -> f64 {
        match (kind, self) {
            (HeadKind::Ff, Preset::Konvid1k | Preset::Proposed) => 1e-2,
            (HeadKind::Ff, _) => 1e-3,
            _ => 1e-4,
        }
    }

    /// Frames per sequence for the recurrent heads.
    pub fn sequence_length(self) -> usize {
        match self {
            Preset::Konvid1k | Preset::Proposed => 180,
            Preset::Qualcomm | Preset::Vqc => 150,
            Preset::Cvd2014 => 140,
        }
    }

    pub fn train_config(self, kind: HeadKind, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate(kind),
            batch_size: self.batch_size(),
            seed,
            ..TrainConfig::default()
        }
    }

    pub fn head_config(self, kind: HeadKind, input_dim: usize) -> HeadConfig {
        HeadConfig::new(kind, input_dim).with_sequence_length(self.sequence_length())
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Konvid1k => "konvid1k",
            Preset::Qualcomm => "qualcomm",
            Preset::Cvd2014 => "cvd2014",
            Preset::Vqc => "vqc",
            Preset::Proposed => "proposed",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Validation(format!(
                    "unknown preset {s:?} (expected konvid1k, qualcomm, cvd2014, vqc or proposed)"
                ))
            })
    }
}

/// Where per-video feature matrices come from.
pub trait FeatureSource: Sync {
    fn load(&self, video_id: &str) -> Result<Array2<f32>>;
}

impl FeatureSource for HashMap<String, Array2<f32>> {
    fn load(&self, video_id: &str) -> Result<Array2<f32>> {
        self.get(video_id)
            .cloned()
            .ok_or_else(|| Error::Validation(format!("no features for video {video_id:?}")))
    }
}

/// A directory of feature archives named after their video ids.
#[derive(Debug, Clone)]
pub struct FeatureDir {
    pub dir: PathBuf,
}

impl FeatureDir {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FeatureDir { dir: dir.into() }
    }
}

impl FeatureSource for FeatureDir {
    fn load(&self, video_id: &str) -> Result<Array2<f32>> {
        Ok(read_feature_archive(archive_path(&self.dir, video_id))?.into_data())
    }
}

/// Keep prepared inputs in memory up to this many bytes, otherwise reload
/// from the source for every batch.
pub const DEFAULT_MEMORY_LIMIT: usize = 4 << 30;

enum Store<'a> {
    Memory(Vec<Array2<f32>>),
    Lazy(&'a dyn FeatureSource),
}

/// Head inputs for a list of videos, prepared for one head configuration.
pub struct HeadInputs<'a> {
    config: HeadConfig,
    ids: Vec<String>,
    store: Store<'a>,
}

impl<'a> HeadInputs<'a> {
    pub fn prepare(
        config: &HeadConfig,
        source: &'a dyn FeatureSource,
        ids: Vec<String>,
        memory_limit: usize,
    ) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Empty("no videos to prepare"));
        }
        let first = config.prepare(&source.load(&ids[0])?)?;
        let bytes = first.len() * 4 * ids.len();
        let store = if bytes <= memory_limit {
            let mut rows = vec![first];
            for id in &ids[1..] {
                rows.push(config.prepare(&source.load(id)?)?);
            }
            Store::Memory(rows)
        } else {
            log::info!("prepared inputs need {bytes} bytes; streaming from the feature source");
            Store::Lazy(source)
        };
        Ok(HeadInputs {
            config: config.clone(),
            ids,
            store,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn batch(&self, items: &[usize]) -> Result<Array3<f64>> {
        match &self.store {
            Store::Memory(rows) => {
                let views: Vec<_> = items.iter().map(|&i| rows[i].view()).collect();
                stack_inputs(&views)
            }
            Store::Lazy(source) => {
                let rows = items
                    .iter()
                    .map(|&i| self.config.prepare(&source.load(&self.ids[i])?))
                    .collect::<Result<Vec<_>>>()?;
                let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
                stack_inputs(&views)
            }
        }
    }
}

/// Items of a [`HeadInputs`] with their targets on the normalised scale.
pub struct LabeledSet<'a, 'b> {
    pub inputs: &'b HeadInputs<'a>,
    pub items: Vec<usize>,
    pub targets: Vec<f64>,
}

impl<'a, 'b> LabeledSet<'a, 'b> {
    /// Targets are `mos` normalised with `scale`, aligned with `items`.
    pub fn new(inputs: &'b HeadInputs<'a>, items: Vec<usize>, mos: &[f64], scale: &RatingScale) -> Result<Self> {
        if items.len() != mos.len() {
            return Err(Error::DimensionMismatch {
                expected: items.len(),
                found: mos.len(),
            });
        }
        if let Some(&bad) = items.iter().find(|&&i| i >= inputs.len()) {
            return Err(Error::Validation(format!("item {bad} out of range for {} inputs", inputs.len())));
        }
        let targets = mos.iter().map(|&m| scale.normalize(m)).collect();
        Ok(LabeledSet { inputs, items, targets })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

const INFERENCE_CHUNK: usize = 256;

/// Normalised-scale predictions for `items` of `inputs`.
pub fn predict_items(head: &Head, inputs: &HeadInputs<'_>, items: &[usize]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(INFERENCE_CHUNK) {
        let x = inputs.batch(chunk)?;
        let y = head.predict_batch(x.view());
        if let Some(row) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row, col: 0 });
        }
        out.extend(y);
    }
    Ok(out)
}

fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64
}

/// Trains a head with Adam on MSE, stopping once validation loss has not
/// improved for `patience` epochs and restoring the best epoch's weights.
pub fn train_head(
    config: &HeadConfig,
    tc: &TrainConfig,
    scale: RatingScale,
    train: &LabeledSet<'_, '_>,
    val: &LabeledSet<'_, '_>,
) -> Result<TrainedHead> {
    tc.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set is empty"));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation set is empty"));
    }
    for set in [train, val] {
        if set.inputs.config() != config {
            return Err(Error::Validation("inputs were prepared for a different head configuration".into()));
        }
    }

    let mut head = Head::build(config.clone(), &mut derive_rng(tc.seed, "head-init", 0))?;
    let mut adam = Adam::new(tc.learning_rate);
    let mut dropout_rng = derive_rng(tc.seed, "dropout", 0);
    let mut history = Vec::new();
    let mut best: Option<(f64, Head)> = None;
    let mut best_epoch = 0;
    let mut waited = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..tc.max_epochs {
        order.shuffle(&mut derive_rng(tc.seed, "epoch-order", epoch as u64));
        let mut loss_sum = 0.0;
        for batch in order.chunks(tc.batch_size) {
            let items: Vec<usize> = batch.iter().map(|&k| train.items[k]).collect();
            let target = ndarray::Array1::from_iter(batch.iter().map(|&k| train.targets[k]));
            let x = train.inputs.batch(&items)?;
            head.zero_grad();
            let y = head.forward_train(x.view(), &mut dropout_rng);
            let diff = &y - &target;
            let loss = diff.mapv(|d| d * d).mean().unwrap();
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    message: format!("training loss became {loss} (learning rate {})", tc.learning_rate),
                });
            }
            loss_sum += loss * batch.len() as f64;
            head.backward(&(diff * (2.0 / batch.len() as f64)));
            adam.step(&mut head);
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_pred = predict_items(&head, val.inputs, &val.items).map_err(|e| Error::Diverged {
            epoch,
            message: format!("validation predictions failed: {e}"),
        })?;
        let val_loss = mse(&val_pred, &val.targets);
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");

        let improved = match &best {
            None => true,
            Some((b, _)) => val_loss < b - tc.min_delta,
        };
        if improved {
            best = Some((val_loss, head.clone()));
            best_epoch = epoch;
            waited = 0;
        } else {
            waited += 1;
            if waited >= tc.patience {
                log::info!("early stop at epoch {epoch}, best epoch {best_epoch}");
                break;
            }
        }
    }

    let (_, head) = best.expect("at least one epoch ran");
    Ok(TrainedHead {
        head,
        scale,
        history,
        best_epoch,
    })
}
