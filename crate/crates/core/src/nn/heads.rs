use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, s, Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{resample_rows, FrameSampling};
use crate::nn::layers::{dropout_mask, relu, relu_backward, BatchNorm, Dense};
use crate::nn::lstm::Lstm;
use crate::nn::{ParamVisitor, StateMutVisitor, StateVisitor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Dense blocks over the temporal mean of the frame features.
    Ff,
    /// Stacked LSTM over the frame sequence.
    Rn,
    /// LSTM channel and per-frame dense channel, merged per timestep.
    Hyb,
}

impl HeadKind {
    pub const ALL: [HeadKind; 3] = [HeadKind::Ff, HeadKind::Rn, HeadKind::Hyb];

    pub fn is_recurrent(self) -> bool {
        self != HeadKind::Ff
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadKind::Ff => "ff",
            HeadKind::Rn => "rn",
            HeadKind::Hyb => "hyb",
        })
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ff" => Ok(HeadKind::Ff),
            "rn" => Ok(HeadKind::Rn),
            "hyb" => Ok(HeadKind::Hyb),
            other => Err(Error::Validation(format!("unknown head kind {other:?} (expected ff, rn or hyb)"))),
        }
    }
}

/// Architecture of a regression head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub kind: HeadKind,
    pub input_dim: usize,
    pub ff_widths: Vec<usize>,
    /// Dropout after each FF block. Recurrent heads use none.
    pub dropout: f64,
    pub rnn_hidden: Vec<usize>,
    /// Per-timestep dense stack of the HYB frame channel.
    pub hyb_frame_widths: Vec<usize>,
    pub hyb_merge_width: usize,
    /// Frames per sequence for RN and HYB; FF ignores it.
    pub sequence_length: usize,
}

impl HeadConfig {
    pub fn new(kind: HeadKind, input_dim: usize) -> Self {
        HeadConfig {
            kind,
            input_dim,
            ff_widths: vec![2048, 1024, 256],
            dropout: if kind == HeadKind::Ff { 0.25 } else { 0.0 },
            rnn_hidden: vec![512, 256, 128],
            hyb_frame_widths: vec![2048, 512, 128],
            hyb_merge_width: 32,
            sequence_length: 180,
        }
    }

    pub fn with_sequence_length(mut self, t: usize) -> Self {
        self.sequence_length = t;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        if self.input_dim == 0 {
            return bad("input_dim must be positive".into());
        }
        let widths = |name: &str, w: &[usize]| -> Result<()> {
            if w.is_empty() || w.contains(&0) {
                return Err(Error::Validation(format!("{name} must be a nonempty list of positive widths, got {w:?}")));
            }
            Ok(())
        };
        match self.kind {
            HeadKind::Ff => {
                widths("ff_widths", &self.ff_widths)?;
                if !(0.0..1.0).contains(&self.dropout) {
                    return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
                }
            }
            HeadKind::Rn | HeadKind::Hyb => {
                widths("rnn_hidden", &self.rnn_hidden)?;
                if self.sequence_length == 0 {
                    return bad("sequence_length must be at least 1".into());
                }
                if self.dropout != 0.0 {
                    return bad(format!("{} heads take no dropout, got {}", self.kind, self.dropout));
                }
            }
        }
        if self.kind == HeadKind::Hyb {
            widths("hyb_frame_widths", &self.hyb_frame_widths)?;
            if self.hyb_merge_width == 0 {
                return bad("hyb_merge_width must be positive".into());
            }
            let (frame, temporal) = (self.hyb_frame_widths.last(), self.rnn_hidden.last());
            if frame != temporal {
                return bad(format!(
                    "HYB frame channel ends at width {} but the temporal channel ends at {}",
                    frame.unwrap(),
                    temporal.unwrap()
                ));
            }
        }
        Ok(())
    }

    /// Turns one video's `frames x D` features into the head's input rows:
    /// the single temporal-mean row for FF, exactly `sequence_length` rows
    /// for the recurrent heads.
    pub fn prepare(&self, rows: &Array2<f32>) -> Result<Array2<f32>> {
        if rows.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: rows.ncols(),
            });
        }
        if rows.nrows() == 0 {
            return Err(Error::Empty("feature archive has no frames"));
        }
        if self.kind.is_recurrent() {
            resample_rows(rows, &FrameSampling::fixed(self.sequence_length))
        } else {
            let mut mean = Array1::<f64>::zeros(rows.ncols());
            for row in rows.rows() {
                mean.zip_mut_with(&row, |m, &v| *m += f64::from(v));
            }
            mean /= rows.nrows() as f64;
            Ok(mean.mapv(|v| v as f32).insert_axis(Axis(0)))
        }
    }
}

fn temporal_mean(x: ArrayView3<'_, f64>) -> Array2<f64> {
    x.mean_axis(Axis(1)).expect("at least one timestep")
}

#[derive(Debug, Clone)]
struct FfBlock {
    dense: Dense,
    bn: BatchNorm,
    act: Option<Array2<f64>>,
    mask: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
struct FfHead {
    blocks: Vec<FfBlock>,
    out: Dense,
    dropout: f64,
}

#[derive(Debug, Clone)]
struct LstmStack {
    layers: Vec<Lstm>,
}

impl LstmStack {
    fn new<R: Rng + ?Sized>(inputs: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut n = inputs;
        for &h in hidden {
            layers.push(Lstm::new(n, h, rng));
            n = h;
        }
        LstmStack { layers }
    }

    fn infer(&self, x: ArrayView3<'_, f64>) -> Array3<f64> {
        let mut h = self.layers[0].infer(x);
        for l in &self.layers[1..] {
            h = l.infer(h.view());
        }
        h
    }

    fn forward(&mut self, x: ArrayView3<'_, f64>) -> Array3<f64> {
        let mut h = self.layers[0].forward(x);
        for l in &mut self.layers[1..] {
            h = l.forward(h.view());
        }
        h
    }

    fn backward(&mut self, dh: Array3<f64>) {
        let mut dh = dh;
        for (i, l) in self.layers.iter_mut().enumerate().rev() {
            match l.backward(&dh, i > 0) {
                Some(d) => dh = d,
                None => break,
            }
        }
    }

    fn param_count(&self) -> usize {
        self.layers.iter().map(Lstm::param_count).sum()
    }
}

#[derive(Debug, Clone)]
struct RnHead {
    stack: LstmStack,
    out: Dense,
}

#[derive(Debug, Clone)]
struct HybHead {
    stack: LstmStack,
    frame: Vec<Dense>,
    frame_acts: Vec<Array2<f64>>,
    merge: Dense,
    merge_act: Option<Array2<f64>>,
    out: Dense,
    steps: usize,
}

#[derive(Debug, Clone)]
enum Body {
    Ff(FfHead),
    Rn(RnHead),
    Hyb(HybHead),
}

/// An untrained or trained regression head.
///
/// Inputs are `batch x steps x D` tensors as produced by
/// [`HeadConfig::prepare`]. FF averages over the steps itself, so it
/// accepts full sequences as well as single mean rows.
#[derive(Debug, Clone)]
pub struct Head {
    config: HeadConfig,
    body: Body,
}

impl Head {
    pub fn build<R: Rng + ?Sized>(config: HeadConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.input_dim;
        let body = match config.kind {
            HeadKind::Ff => {
                let mut blocks = Vec::with_capacity(config.ff_widths.len());
                let mut n = d;
                for &w in &config.ff_widths {
                    blocks.push(FfBlock {
                        dense: Dense::new(n, w, rng),
                        bn: BatchNorm::new(w),
                        act: None,
                        mask: None,
                    });
                    n = w;
                }
                Body::Ff(FfHead {
                    blocks,
                    out: Dense::new(n, 1, rng),
                    dropout: config.dropout,
                })
            }
            HeadKind::Rn => {
                let stack = LstmStack::new(d, &config.rnn_hidden, rng);
                let out = Dense::new(*config.rnn_hidden.last().unwrap(), 1, rng);
                Body::Rn(RnHead { stack, out })
            }
            HeadKind::Hyb => {
                let stack = LstmStack::new(d, &config.rnn_hidden, rng);
                let mut frame = Vec::with_capacity(config.hyb_frame_widths.len());
                let mut n = d;
                for &w in &config.hyb_frame_widths {
                    frame.push(Dense::new(n, w, rng));
                    n = w;
                }
                let merged = 2 * n;
                Body::Hyb(HybHead {
                    stack,
                    frame,
                    frame_acts: Vec::new(),
                    merge: Dense::new(merged, config.hyb_merge_width, rng),
                    merge_act: None,
                    out: Dense::new(config.hyb_merge_width, 1, rng),
                    steps: 0,
                })
            }
        };
        Ok(Head { config, body })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn kind(&self) -> HeadKind {
        self.config.kind
    }

    /// Number of trainable scalars. Batch-norm running statistics are
    /// persisted but not counted.
    pub fn param_count(&self) -> usize {
        match &self.body {
            Body::Ff(h) => {
                h.blocks.iter().map(|b| b.dense.param_count() + b.bn.param_count()).sum::<usize>() + h.out.param_count()
            }
            Body::Rn(h) => h.stack.param_count() + h.out.param_count(),
            Body::Hyb(h) => {
                h.stack.param_count()
                    + h.frame.iter().map(Dense::param_count).sum::<usize>()
                    + h.merge.param_count()
                    + h.out.param_count()
            }
        }
    }

    fn check_input(&self, x: &ArrayView3<'_, f64>) {
        assert_eq!(x.dim().2, self.config.input_dim, "head input width");
        assert!(x.dim().0 > 0 && x.dim().1 > 0, "empty head input");
    }

    /// Inference-mode predictions: dropout off, batch-norm running statistics.
    pub fn predict_batch(&self, x: ArrayView3<'_, f64>) -> Array1<f64> {
        self.check_input(&x);
        let y = match &self.body {
            Body::Ff(h) => {
                let mut a = temporal_mean(x);
                for b in &h.blocks {
                    a = b.bn.infer(relu(&b.dense.infer(a.view())).view());
                }
                h.out.infer(a.view())
            }
            Body::Rn(h) => {
                let seq = h.stack.infer(x);
                let last = seq.slice(s![.., seq.dim().1 - 1, ..]);
                h.out.infer(last)
            }
            Body::Hyb(h) => {
                let (batch, steps, d) = x.dim();
                let seq = h.stack.infer(x);
                let mut f = flatten(x, batch * steps, d);
                for dense in &h.frame {
                    f = relu(&dense.infer(f.view()));
                }
                let pooled = hyb_pool(&seq, &f, batch, steps);
                let m = relu(&h.merge.infer(pooled.view()));
                h.out.infer(m.view())
            }
        };
        y.column(0).to_owned()
    }

    /// Training-mode forward pass that caches what [`Head::backward`] needs.
    /// Dropout masks are drawn from `rng`.
    pub fn forward_train<R: Rng + ?Sized>(&mut self, x: ArrayView3<'_, f64>, rng: &mut R) -> Array1<f64> {
        self.check_input(&x);
        let y = match &mut self.body {
            Body::Ff(h) => {
                let mut a = temporal_mean(x);
                for b in &mut h.blocks {
                    let act = relu(&b.dense.forward(a));
                    let mut y = b.bn.forward(act.clone(), true);
                    b.act = Some(act);
                    b.mask = None;
                    if h.dropout > 0.0 {
                        let mask = dropout_mask(y.dim(), h.dropout, rng);
                        y *= &mask;
                        b.mask = Some(mask);
                    }
                    a = y;
                }
                h.out.forward(a)
            }
            Body::Rn(h) => {
                let seq = h.stack.forward(x);
                let last = seq.slice(s![.., seq.dim().1 - 1, ..]).to_owned();
                h.out.forward(last)
            }
            Body::Hyb(h) => {
                let (batch, steps, d) = x.dim();
                let seq = h.stack.forward(x);
                let mut f = flatten(x, batch * steps, d);
                h.frame_acts.clear();
                for dense in &mut h.frame {
                    f = relu(&dense.forward(f));
                    h.frame_acts.push(f.clone());
                }
                let pooled = hyb_pool(&seq, &f, batch, steps);
                let m = relu(&h.merge.forward(pooled));
                h.merge_act = Some(m.clone());
                h.steps = steps;
                h.out.forward(m)
            }
        };
        y.column(0).to_owned()
    }

    /// Accumulates parameter gradients given `dL/dy` for the last
    /// [`Head::forward_train`] batch.
    pub fn backward(&mut self, dy: &Array1<f64>) {
        let dy = dy.view().insert_axis(Axis(1)).to_owned();
        match &mut self.body {
            Body::Ff(h) => {
                let mut d = h.out.backward(&dy);
                for (i, b) in h.blocks.iter_mut().enumerate().rev() {
                    if let Some(mask) = b.mask.take() {
                        d *= &mask;
                    }
                    d = b.bn.backward(&d);
                    d = relu_backward(&d, b.act.as_ref().expect("forward_train before backward"));
                    if i == 0 {
                        b.dense.backward_params(&d);
                    } else {
                        d = b.dense.backward(&d);
                    }
                }
            }
            Body::Rn(h) => {
                let d = h.out.backward(&dy);
                let (batch, hidden) = d.dim();
                let steps = h.stack.layers[0].cached_steps();
                let mut dseq = Array3::<f64>::zeros((batch, steps, hidden));
                dseq.slice_mut(s![.., steps - 1, ..]).assign(&d);
                h.stack.backward(dseq);
            }
            Body::Hyb(h) => {
                let mut d = h.out.backward(&dy);
                d = relu_backward(&d, h.merge_act.as_ref().expect("forward_train before backward"));
                let d = h.merge.backward(&d);
                let (batch, merged) = d.dim();
                let width = merged / 2;
                let steps = h.steps;
                let scale = 1.0 / steps as f64;

                let dseq_mean = d.slice(s![.., ..width]).mapv(|v| v * scale);
                let dseq = dseq_mean
                    .insert_axis(Axis(1))
                    .broadcast((batch, steps, width))
                    .expect("broadcast over steps")
                    .to_owned();
                h.stack.backward(dseq);

                let dframe_mean = d.slice(s![.., width..]).mapv(|v| v * scale);
                let mut df = Array2::<f64>::zeros((batch * steps, width));
                for (r, mut row) in df.rows_mut().into_iter().enumerate() {
                    row.assign(&dframe_mean.row(r / steps));
                }
                let acts = std::mem::take(&mut h.frame_acts);
                for (i, dense) in h.frame.iter_mut().enumerate().rev() {
                    df = relu_backward(&df, &acts[i]);
                    if i == 0 {
                        dense.backward_params(&df);
                    } else {
                        df = dense.backward(&df);
                    }
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.visit_params(&mut |_, _, g| g.fill(0.0));
    }

    /// Visits every trainable tensor in a fixed order.
    pub fn visit_params(&mut self, f: &mut ParamVisitor<'_>) {
        match &mut self.body {
            Body::Ff(h) => {
                for (i, b) in h.blocks.iter_mut().enumerate() {
                    b.dense.visit_params(&format!("ff.{i}.dense"), f);
                    b.bn.visit_params(&format!("ff.{i}.bn"), f);
                }
                h.out.visit_params("out", f);
            }
            Body::Rn(h) => {
                for (i, l) in h.stack.layers.iter_mut().enumerate() {
                    l.visit_params(&format!("lstm.{i}"), f);
                }
                h.out.visit_params("out", f);
            }
            Body::Hyb(h) => {
                for (i, l) in h.stack.layers.iter_mut().enumerate() {
                    l.visit_params(&format!("lstm.{i}"), f);
                }
                for (i, d) in h.frame.iter_mut().enumerate() {
                    d.visit_params(&format!("frame.{i}"), f);
                }
                h.merge.visit_params("merge", f);
                h.out.visit_params("out", f);
            }
        }
    }

    /// Visits every persisted tensor, including batch-norm statistics.
    pub fn visit_state(&self, f: &mut StateVisitor<'_>) {
        match &self.body {
            Body::Ff(h) => {
                for (i, b) in h.blocks.iter().enumerate() {
                    b.dense.visit_state(&format!("ff.{i}.dense"), f);
                    b.bn.visit_state(&format!("ff.{i}.bn"), f);
                }
                h.out.visit_state("out", f);
            }
            Body::Rn(h) => {
                for (i, l) in h.stack.layers.iter().enumerate() {
                    l.visit_state(&format!("lstm.{i}"), f);
                }
                h.out.visit_state("out", f);
            }
            Body::Hyb(h) => {
                for (i, l) in h.stack.layers.iter().enumerate() {
                    l.visit_state(&format!("lstm.{i}"), f);
                }
                for (i, d) in h.frame.iter().enumerate() {
                    d.visit_state(&format!("frame.{i}"), f);
                }
                h.merge.visit_state("merge", f);
                h.out.visit_state("out", f);
            }
        }
    }

    pub fn visit_state_mut(&mut self, f: &mut StateMutVisitor<'_>) {
        match &mut self.body {
            Body::Ff(h) => {
                for (i, b) in h.blocks.iter_mut().enumerate() {
                    b.dense.visit_state_mut(&format!("ff.{i}.dense"), f);
                    b.bn.visit_state_mut(&format!("ff.{i}.bn"), f);
                }
                h.out.visit_state_mut("out", f);
            }
            Body::Rn(h) => {
                for (i, l) in h.stack.layers.iter_mut().enumerate() {
                    l.visit_state_mut(&format!("lstm.{i}"), f);
                }
                h.out.visit_state_mut("out", f);
            }
            Body::Hyb(h) => {
                for (i, l) in h.stack.layers.iter_mut().enumerate() {
                    l.visit_state_mut(&format!("lstm.{i}"), f);
                }
                for (i, d) in h.frame.iter_mut().enumerate() {
                    d.visit_state_mut(&format!("frame.{i}"), f);
                }
                h.merge.visit_state_mut("merge", f);
                h.out.visit_state_mut("out", f);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit_state(&mut |_, _, v| ok &= v.iter().all(|x| x.is_finite()));
        ok
    }
}

fn flatten(x: ArrayView3<'_, f64>, rows: usize, cols: usize) -> Array2<f64> {
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((rows, cols))
        .expect("contiguous")
}

/// Concatenates both channels per timestep and averages over time.
fn hyb_pool(seq: &Array3<f64>, frame: &Array2<f64>, batch: usize, steps: usize) -> Array2<f64> {
    let width = frame.ncols();
    let frame = frame
        .view()
        .into_shape_with_order((batch, steps, width))
        .expect("contiguous");
    let merged = concatenate(Axis(2), &[seq.view(), frame]).expect("matching batch and steps");
    temporal_mean(merged.view())
}

/// Stacks prepared per-video inputs into one batch tensor.
pub fn stack_inputs(rows: &[ArrayView2<'_, f32>]) -> Result<Array3<f64>> {
    let first = rows.first().ok_or(Error::Empty("empty batch"))?;
    let (steps, dim) = first.dim();
    let mut out = Array3::<f64>::zeros((rows.len(), steps, dim));
    for (mut dst, src) in out.outer_iter_mut().zip(rows) {
        if src.dim() != (steps, dim) {
            return Err(Error::DimensionMismatch {
                expected: steps * dim,
                found: src.len(),
            });
        }
        dst.zip_mut_with(src, |d, &v| *d = f64::from(v));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::derive_rng;

    fn toy(kind: HeadKind) -> HeadConfig {
        let mut c = HeadConfig::new(kind, 8).with_sequence_length(4);
        c.ff_widths = vec![4, 4, 4];
        c.rnn_hidden = vec![4, 4, 4];
        c.hyb_frame_widths = vec![4, 4, 4];
        c.hyb_merge_width = 4;
        c
    }

    #[test]
    fn hyb_width_mismatch_is_rejected() {
        let mut c = HeadConfig::new(HeadKind::Hyb, 16);
        c.hyb_frame_widths = vec![256, 64];
        let err = Head::build(c, &mut derive_rng(0, "t", 0)).unwrap_err();
        assert!(err.to_string().contains("64"), "{err}");
    }

    #[test]
    fn recurrent_heads_reject_dropout() {
        let mut c = HeadConfig::new(HeadKind::Rn, 4);
        c.dropout = 0.1;
        assert!(c.validate().is_err());
        assert_eq!(HeadConfig::new(HeadKind::Ff, 4).dropout, 0.25);
        assert_eq!(HeadConfig::new(HeadKind::Hyb, 4).dropout, 0.0);
    }

    #[test]
    fn kind_round_trips_through_text() {
        for k in HeadKind::ALL {
            assert_eq!(k.to_string().parse::<HeadKind>().unwrap(), k);
        }
        assert!("lstm".parse::<HeadKind>().is_err());
    }

    #[test]
    fn every_kind_emits_one_score_per_video() {
        for kind in HeadKind::ALL {
            let head = Head::build(toy(kind), &mut derive_rng(1, "t", 0)).unwrap();
            let x = Array3::from_shape_fn((3, 4, 8), |(b, t, d)| ((b * 7 + t * 3 + d) % 5) as f64 / 5.0);
            let y = head.predict_batch(x.view());
            assert_eq!(y.len(), 3);
            assert!(y.iter().all(|v| v.is_finite()));
            assert_eq!(y, head.predict_batch(x.view()));
        }
    }

    #[test]
    fn prepare_shapes() {
        let rows = Array2::from_shape_fn((10, 8), |(t, d)| (t + d) as f32);
        let ff = toy(HeadKind::Ff).prepare(&rows).unwrap();
        assert_eq!(ff.dim(), (1, 8));
        assert_eq!(ff[[0, 0]], 4.5);
        let rn = toy(HeadKind::Rn).prepare(&rows).unwrap();
        assert_eq!(rn.dim(), (4, 8));
        let short = Array2::from_shape_fn((2, 8), |(t, _)| t as f32);
        let padded = toy(HeadKind::Hyb).prepare(&short).unwrap();
        assert_eq!(padded.column(0).to_vec(), vec![0.0, 1.0, 1.0, 1.0]);
        let wrong = Array2::<f32>::zeros((3, 7));
        assert!(matches!(toy(HeadKind::Ff).prepare(&wrong), Err(Error::DimensionMismatch { .. })));
    }
}
