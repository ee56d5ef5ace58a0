//! Trained heads and their on-disk container.
//!
//! Layout, little-endian: 8-byte magic, `u32` version, `u64` header length,
//! JSON header (config, rating scale, history, best epoch), `u32` tensor
//! count, then per tensor a `u32`-prefixed UTF-8 name, `u32` rank, `u64`
//! dimensions and `f64` values.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::data::{FeatureArchive, RatingScale};
use crate::error::{Error, Result};
use crate::nn::heads::{stack_inputs, Head, HeadConfig};
use crate::seed::derive_rng;

pub const HEAD_MAGIC: &[u8; 8] = b"MLSPH1\n\0";
pub const HEAD_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// A fitted head together with the scale its targets were normalised from.
#[derive(Debug, Clone)]
pub struct TrainedHead {
    pub head: Head,
    pub scale: RatingScale,
    pub history: Vec<EpochRecord>,
    /// Index into `history` of the restored weights.
    pub best_epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: HeadConfig,
    scale: RatingScale,
    history: Vec<EpochRecord>,
    best_epoch: usize,
}

impl TrainedHead {
    pub fn config(&self) -> &HeadConfig {
        self.head.config()
    }

    /// Predicted score of one video on the manifest's rating scale.
    pub fn predict(&self, archive: &FeatureArchive) -> Result<f64> {
        Ok(self.predict_many(&[archive])?[0])
    }

    /// Predictions for several videos, batched.
    pub fn predict_many(&self, archives: &[&FeatureArchive]) -> Result<Vec<f64>> {
        let inputs = archives
            .iter()
            .map(|a| self.config().prepare(a.data()))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = inputs.iter().map(|r| r.view()).collect();
        let x = stack_inputs(&views)?;
        self.predict_prepared(x.view())
    }

    /// Predictions for an already prepared `batch x steps x D` tensor.
    pub fn predict_prepared(&self, x: ArrayView3<'_, f64>) -> Result<Vec<f64>> {
        if x.dim().2 != self.config().input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config().input_dim,
                found: x.dim().2,
            });
        }
        let y = self.head.predict_batch(x);
        finite_scores(&y)?;
        Ok(y.iter().map(|&v| self.scale.denormalize(v)).collect())
    }

    fn validate(&self) -> Result<()> {
        if !self.head.is_finite() {
            return Err(Error::ModelFormat("non-finite parameters".into()));
        }
        if !self.history.is_empty() {
            if self.best_epoch >= self.history.len() {
                return Err(Error::ModelFormat(format!(
                    "best epoch {} outside a history of {} epochs",
                    self.best_epoch,
                    self.history.len()
                )));
            }
            let best = self.history[self.best_epoch].val_loss;
            if self.history.iter().any(|r| r.val_loss < best) {
                return Err(Error::ModelFormat("best epoch is not the minimum validation loss".into()));
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            config: self.config().clone(),
            scale: self.scale,
            history: self.history.clone(),
            best_epoch: self.best_epoch,
        })
        .map_err(|e| Error::ModelFormat(format!("cannot encode header: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(HEAD_MAGIC);
        out.extend_from_slice(&HEAD_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);

        let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
        self.head
            .visit_state(&mut |name, shape, values| tensors.push((name.to_string(), shape.to_vec(), values.to_vec())));
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, shape, values) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(HEAD_MAGIC.len())? != HEAD_MAGIC {
            return Err(Error::BadMagic);
        }
        let version = r.u32()?;
        if version != HEAD_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let len = r.len64()?;
        let header: Header = serde_json::from_slice(r.take(len)?)
            .map_err(|e| Error::ModelFormat(format!("bad header: {e}")))?;

        let count = r.u32()? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| Error::ModelFormat("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.len64()?);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| Error::ModelFormat(format!("tensor {name} is too large")))?;
            let values: Vec<f64> = r
                .take(len)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if tensors.insert(name.clone(), (shape, values)).is_some() {
                return Err(Error::ModelFormat(format!("duplicate tensor {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::ModelFormat(format!("{} trailing bytes", bytes.len() - r.pos)));
        }

        // weights are overwritten below; the seed only fixes tensor shapes
        let mut head = Head::build(header.config, &mut derive_rng(0, "load", 0))?;
        let mut problem = None;
        head.visit_state_mut(&mut |name, shape, dst| {
            if problem.is_some() {
                return;
            }
            match tensors.remove(name) {
                None => problem = Some(format!("missing tensor {name}")),
                Some((s, _)) if s != shape => {
                    problem = Some(format!("tensor {name} has shape {s:?}, expected {shape:?}"))
                }
                Some((_, v)) => dst.copy_from_slice(&v),
            }
        });
        if let Some(p) = problem {
            return Err(Error::ModelFormat(p));
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::ModelFormat(format!("unexpected tensor {extra}")));
        }
        let trained = TrainedHead {
            head,
            scale: header.scale,
            history: header.history,
            best_epoch: header.best_epoch,
        };
        trained.validate()?;
        Ok(trained)
    }
}

fn finite_scores(y: &Array1<f64>) -> Result<()> {
    match y.iter().position(|v| !v.is_finite()) {
        Some(row) => Err(Error::NonFinite { row, col: 0 }),
        None => Ok(()),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(Error::Truncated {
                needed: n as u64,
                available: available as u64,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn len64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::ModelFormat(format!("length {v} does not fit in memory")))
    }
}

pub fn save_head(head: &TrainedHead, path: impl AsRef<Path>) -> Result<()> {
    crate::data::archive::write_atomic(path.as_ref(), &head.encode()?)
}

pub fn load_head(path: impl AsRef<Path>) -> Result<TrainedHead> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    TrainedHead::decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::HeadKind;
    use ndarray::Array2;

    fn trained(kind: HeadKind) -> TrainedHead {
        let mut c = HeadConfig::new(kind, 6).with_sequence_length(3);
        c.ff_widths = vec![5, 4];
        c.rnn_hidden = vec![4, 3];
        c.hyb_frame_widths = vec![5, 3];
        c.hyb_merge_width = 4;
        TrainedHead {
            head: Head::build(c, &mut derive_rng(3, "io", 0)).unwrap(),
            scale: RatingScale::ACR,
            history: vec![
                EpochRecord { epoch: 0, train_loss: 0.3, val_loss: 0.2 },
                EpochRecord { epoch: 1, train_loss: 0.2, val_loss: 0.25 },
            ],
            best_epoch: 0,
        }
    }

    fn probe() -> FeatureArchive {
        let data = Array2::from_shape_fn((7, 6), |(t, d)| ((t * 5 + d * 3) % 11) as f32 / 11.0);
        FeatureArchive::single_block("probe", data, "mlsp").unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for kind in HeadKind::ALL {
            let h = trained(kind);
            let before = h.predict(&probe()).unwrap();
            let back = TrainedHead::decode(&h.encode().unwrap()).unwrap();
            assert_eq!(back.predict(&probe()).unwrap().to_bits(), before.to_bits());
            assert_eq!(back.history, h.history);
            assert_eq!(back.config(), h.config());
        }
    }

    #[test]
    fn corruption_is_reported() {
        let bytes = trained(HeadKind::Ff).encode().unwrap();
        assert!(matches!(TrainedHead::decode(&bytes[..bytes.len() - 3]), Err(Error::Truncated { .. })));
        assert!(matches!(TrainedHead::decode(b"nonsense"), Err(Error::BadMagic)));
        let mut v = bytes.clone();
        v[8] = 9;
        assert!(matches!(TrainedHead::decode(&v), Err(Error::UnsupportedVersion(9))));
        let mut nan = bytes.clone();
        let n = nan.len();
        nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(TrainedHead::decode(&nan), Err(Error::ModelFormat(_))));
    }

    #[test]
    fn wrong_feature_width_is_a_dimension_error() {
        let h = trained(HeadKind::Rn);
        let other = FeatureArchive::single_block("x", Array2::zeros((4, 9)), "mlsp").unwrap();
        assert!(matches!(h.predict(&other), Err(Error::DimensionMismatch { expected: 6, found: 9 })));
    }
}
