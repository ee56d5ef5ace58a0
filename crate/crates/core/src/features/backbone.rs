//! Backbone descriptors and the trait every feature extractor implements.
//!
//! A descriptor is a small key-value text file:
//!
//! ```text
//! graph = inception_resnet_v2.onnx   # relative to the descriptor
//! input = input_1
//! layout = nhwc                      # or nchw
//! preprocess = linear 0 255 -1 1     # pixel range [0,255] -> [-1,1]
//! content = content_pool 1792
//! block = mixed_5b 320
//! block = block35_1_mixed 128
//! ```
//!
//! `block` lines are ordered; their channel counts define the MLSP layout.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array3, ArrayView3};
use rand::Rng;

use crate::data::Block;
use crate::error::{Error, Result};
use crate::seed;

const REFERENCE_DESCRIPTOR: &str = include_str!("../../assets/inception_resnet_v2.backbone");

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelScaling {
    pub in_lo: f32,
    pub in_hi: f32,
    pub out_lo: f32,
    pub out_hi: f32,
}

impl PixelScaling {
    pub const IDENTITY: PixelScaling = PixelScaling {
        in_lo: 0.0,
        in_hi: 255.0,
        out_lo: 0.0,
        out_hi: 255.0,
    };

    /// `[0, 255] -> [-1, 1]`.
    pub const SYMMETRIC_UNIT: PixelScaling = PixelScaling {
        in_lo: 0.0,
        in_hi: 255.0,
        out_lo: -1.0,
        out_hi: 1.0,
    };

    #[inline]
    pub fn apply(&self, v: u8) -> f32 {
        let t = (v as f32 - self.in_lo) / (self.in_hi - self.in_lo);
        self.out_lo + t * (self.out_hi - self.out_lo)
    }

    pub fn apply_frame(&self, frame: ArrayView3<'_, u8>) -> Array3<f32> {
        frame.mapv(|v| self.apply(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TensorLayout {
    #[default]
    Nhwc,
    Nchw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneSpec {
    pub graph_path: Option<PathBuf>,
    pub input_node: String,
    pub layout: TensorLayout,
    pub blocks: Vec<Block>,
    pub content: Option<Block>,
    pub preprocessing: PixelScaling,
}

impl BackboneSpec {
    pub fn new(blocks: Vec<Block>) -> Result<Self> {
        let spec = BackboneSpec {
            graph_path: None,
            input_node: "input".into(),
            layout: TensorLayout::Nhwc,
            blocks,
            content: None,
            preprocessing: PixelScaling::SYMMETRIC_UNIT,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_content(mut self, name: impl Into<String>, channels: usize) -> Self {
        self.content = Some(Block::new(name, channels));
        self
    }

    /// The Inception-ResNet-v2 tap layout: 43 blocks, 16,928 channels,
    /// 1792-wide content tap.
    pub fn reference() -> Self {
        Self::parse(REFERENCE_DESCRIPTOR, None).expect("bundled descriptor is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Validation("backbone declares no block outputs".into()));
        }
        let all = self.blocks.iter().chain(self.content.iter());
        if let Some(b) = all.clone().find(|b| b.channels == 0) {
            return Err(Error::Validation(format!("tap {:?} has zero channels", b.name)));
        }
        if let Some(b) = all.clone().find(|b| b.name.is_empty()) {
            return Err(Error::Validation(format!("tap with empty node name ({} channels)", b.channels)));
        }
        let s = self.preprocessing;
        if !(s.in_hi > s.in_lo) {
            return Err(Error::Validation("preprocessing input range is empty".into()));
        }
        Ok(())
    }

    /// MLSP width `D`: the sum of block channel counts.
    pub fn feature_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.channels).sum()
    }

    pub fn content_dim(&self) -> Option<usize> {
        self.content.as_ref().map(|b| b.channels)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, Some(path))
    }

    /// Parses descriptor text. Relative graph paths are resolved against the
    /// directory of `origin` when given.
    pub fn parse(text: &str, origin: Option<&Path>) -> Result<Self> {
        let where_ = origin.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("<descriptor>"));
        let mut spec = BackboneSpec {
            graph_path: None,
            input_node: String::new(),
            layout: TensorLayout::Nhwc,
            blocks: Vec::new(),
            content: None,
            preprocessing: PixelScaling::IDENTITY,
        };
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(&where_, line_no, "expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            let err = |m: &str| Error::parse(&where_, line_no, format!("{key}: {m}"));
            match key {
                "graph" => {
                    let p = PathBuf::from(value);
                    spec.graph_path = Some(match origin.and_then(Path::parent) {
                        Some(dir) if p.is_relative() => dir.join(p),
                        _ => p,
                    });
                }
                "input" => spec.input_node = value.to_owned(),
                "layout" => {
                    spec.layout = match value {
                        "nhwc" => TensorLayout::Nhwc,
                        "nchw" => TensorLayout::Nchw,
                        _ => return Err(err("expected nhwc or nchw")),
                    }
                }
                "preprocess" => spec.preprocessing = parse_scaling(value).ok_or_else(|| err("expected `linear IN_LO IN_HI OUT_LO OUT_HI` or `identity`"))?,
                "block" | "content" => {
                    let (name, channels) = value
                        .rsplit_once(char::is_whitespace)
                        .ok_or_else(|| err("expected `NODE CHANNELS`"))?;
                    let channels = channels.parse::<usize>().map_err(|_| err("channel count is not an integer"))?;
                    let block = Block::new(name.trim(), channels);
                    if key == "block" {
                        spec.blocks.push(block);
                    } else {
                        spec.content = Some(block);
                    }
                }
                _ => return Err(err("unknown key")),
            }
        }
        if spec.input_node.is_empty() {
            spec.input_node = "input".into();
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_descriptor(&self) -> String {
        let mut out = String::new();
        if let Some(g) = &self.graph_path {
            let _ = writeln!(out, "graph = {}", g.display());
        }
        let _ = writeln!(out, "input = {}", self.input_node);
        let _ = writeln!(
            out,
            "layout = {}",
            match self.layout {
                TensorLayout::Nhwc => "nhwc",
                TensorLayout::Nchw => "nchw",
            }
        );
        let s = self.preprocessing;
        let _ = writeln!(out, "preprocess = linear {} {} {} {}", s.in_lo, s.in_hi, s.out_lo, s.out_hi);
        if let Some(c) = &self.content {
            let _ = writeln!(out, "content = {} {}", c.name, c.channels);
        }
        for b in &self.blocks {
            let _ = writeln!(out, "block = {} {}", b.name, b.channels);
        }
        out
    }
}

fn parse_scaling(value: &str) -> Option<PixelScaling> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    match parts.as_slice() {
        ["identity"] => Some(PixelScaling::IDENTITY),
        ["linear", a, b, c, d] => {
            let s = PixelScaling {
                in_lo: a.parse().ok()?,
                in_hi: b.parse().ok()?,
                out_lo: c.parse().ok()?,
                out_hi: d.parse().ok()?,
            };
            (s.in_hi > s.in_lo).then_some(s)
        }
        _ => None,
    }
}

/// A pretrained network that exposes named intermediate activations.
pub trait Backbone {
    fn spec(&self) -> &BackboneSpec;

    /// Runs one preprocessed `H x W x 3` frame and returns the `H' x W' x C`
    /// activation map of each requested tap, in request order.
    fn activations(&mut self, input: ArrayView3<'_, f32>, taps: &[&str]) -> Result<Vec<Array3<f32>>>;
}

/// Synthetic backbone for tests and dry runs; needs no weights.
///
/// Each block's map is computed on a coarse grid of mean patch colors and
/// projected to the block width through a fixed random matrix with a ReLU,
/// so activations depend on frame content while staying cheap.
#[derive(Debug, Clone)]
pub struct StubBackbone {
    spec: BackboneSpec,
    mode: StubMode,
}

#[derive(Debug, Clone)]
enum StubMode {
    Constant(f32),
    Projection { weights: Vec<Vec<[f32; 4]>> },
}

impl StubBackbone {
    pub fn constant(spec: BackboneSpec, value: f32) -> Self {
        StubBackbone {
            spec,
            mode: StubMode::Constant(value),
        }
    }

    pub fn projection(spec: BackboneSpec, seed: u64) -> Self {
        let taps: Vec<&Block> = spec.blocks.iter().chain(spec.content.iter()).collect();
        let weights = taps
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let mut rng = seed::derive_rng(seed, "stub-backbone", i as u64);
                (0..b.channels)
                    .map(|_| {
                        [
                            rng.random_range(-1.0f32..1.0),
                            rng.random_range(-1.0f32..1.0),
                            rng.random_range(-1.0f32..1.0),
                            rng.random_range(-0.2f32..0.2),
                        ]
                    })
                    .collect()
            })
            .collect();
        StubBackbone {
            spec,
            mode: StubMode::Projection { weights },
        }
    }

    fn tap_index(&self, name: &str) -> Option<usize> {
        self.spec
            .blocks
            .iter()
            .chain(self.spec.content.iter())
            .position(|b| b.name == name)
    }
}

impl Backbone for StubBackbone {
    fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    fn activations(&mut self, input: ArrayView3<'_, f32>, taps: &[&str]) -> Result<Vec<Array3<f32>>> {
        let (h, w, c) = input.dim();
        if c != 3 || h == 0 || w == 0 {
            return Err(Error::Backbone(format!("expected an H x W x 3 frame, got {h} x {w} x {c}")));
        }
        let taps_all: Vec<&Block> = self.spec.blocks.iter().chain(self.spec.content.iter()).collect();
        taps.iter()
            .map(|&name| {
                let idx = self
                    .tap_index(name)
                    .ok_or_else(|| Error::Backbone(format!("node {name:?} not found in graph")))?;
                let channels = taps_all[idx].channels;
                // deeper taps see a coarser grid
                let cells = (4usize >> idx.min(2)).max(1);
                let (gh, gw) = (cells.min(h), cells.min(w));
                Ok(match &self.mode {
                    StubMode::Constant(v) => Array3::from_elem((gh, gw, channels), *v),
                    StubMode::Projection { weights } => {
                        let patches = patch_means(input, gh, gw);
                        Array3::from_shape_fn((gh, gw, channels), |(i, j, k)| {
                            let [wr, wg, wb, bias] = weights[idx][k];
                            let p = patches[i * gw + j];
                            (wr * p[0] + wg * p[1] + wb * p[2] + bias).max(0.0)
                        })
                    }
                })
            })
            .collect()
    }
}

fn patch_means(input: ArrayView3<'_, f32>, gh: usize, gw: usize) -> Vec<[f32; 3]> {
    let (h, w, _) = input.dim();
    let mut out = Vec::with_capacity(gh * gw);
    for i in 0..gh {
        let (r0, r1) = (i * h / gh, ((i + 1) * h / gh).max(i * h / gh + 1));
        for j in 0..gw {
            let (c0, c1) = (j * w / gw, ((j + 1) * w / gw).max(j * w / gw + 1));
            let mut acc = [0.0f64; 3];
            for r in r0..r1 {
                for c in c0..c1 {
                    for (ch, a) in acc.iter_mut().enumerate() {
                        *a += input[[r, c, ch]] as f64;
                    }
                }
            }
            let n = ((r1 - r0) * (c1 - c0)) as f64;
            out.push([(acc[0] / n) as f32, (acc[1] / n) as f32, (acc[2] / n) as f32]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_layout_arithmetic() {
        let spec = BackboneSpec::reference();
        assert_eq!(spec.blocks.len(), 43);
        assert_eq!(spec.feature_dim(), 16_928);
        assert_eq!(spec.content_dim(), Some(1792));
        assert_eq!(spec.preprocessing, PixelScaling::SYMMETRIC_UNIT);
    }

    #[test]
    fn descriptor_round_trip() {
        let spec = BackboneSpec::reference();
        let back = BackboneSpec::parse(&spec.to_descriptor(), None).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn relative_graph_resolves_against_descriptor() {
        let spec = BackboneSpec::parse("graph = net.onnx\nblock = a 2\n", Some(Path::new("/models/x.backbone"))).unwrap();
        assert_eq!(spec.graph_path.as_deref(), Some(Path::new("/models/net.onnx")));
    }

    #[test]
    fn descriptor_errors() {
        assert!(BackboneSpec::parse("input = x\n", None).is_err());
        assert!(BackboneSpec::parse("block = a 0\n", None).is_err());
        assert!(BackboneSpec::parse("block = a two\n", None).is_err());
        assert!(BackboneSpec::parse("colour = blue\nblock = a 1\n", None).is_err());
        assert!(matches!(
            BackboneSpec::parse("block = a 1\npreprocess = linear 5 5 0 1\n", None),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn pixel_scaling_maps_endpoints() {
        let s = PixelScaling::SYMMETRIC_UNIT;
        assert_eq!(s.apply(0), -1.0);
        assert_eq!(s.apply(255), 1.0);
        assert!(s.apply(128).abs() < 0.01);
    }

    #[test]
    fn stub_rejects_unknown_tap() {
        let spec = BackboneSpec::new(vec![Block::new("a", 2)]).unwrap();
        let mut bb = StubBackbone::constant(spec, 1.0);
        let frame = Array3::<f32>::zeros((4, 4, 3));
        assert!(bb.activations(frame.view(), &["nope"]).is_err());
        assert!(bb.activations(Array3::<f32>::zeros((4, 4, 1)).view(), &["a"]).is_err());
    }
}
