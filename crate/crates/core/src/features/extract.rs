use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2, ArrayView3, Axis};

use crate::data::FeatureArchive;
use crate::error::{Error, Result};
use crate::features::backbone::Backbone;
use crate::features::frames::Frame;
use crate::features::gap::gap;
use crate::features::sampling::FrameSampling;

/// One video's extraction result.
#[derive(Debug, Clone)]
pub struct ExtractedVideo {
    pub archive: FeatureArchive,
    /// Temporal mean of the pooled content tap over the distinct sampled
    /// frames, when requested and declared by the backbone.
    pub content: Option<Array1<f32>>,
}

/// Pools every declared block of one frame and concatenates the results.
pub fn extract_frame_mlsp(frame: ArrayView3<'_, u8>, backbone: &mut dyn Backbone) -> Result<Array1<f32>> {
    Ok(pool_frame(frame, backbone, false)?.0)
}

fn pool_frame(
    frame: ArrayView3<'_, u8>,
    backbone: &mut dyn Backbone,
    with_content: bool,
) -> Result<(Array1<f32>, Option<Array1<f32>>)> {
    let spec = backbone.spec().clone();
    let input = spec.preprocessing.apply_frame(frame);
    let mut taps: Vec<&str> = spec.blocks.iter().map(|b| b.name.as_str()).collect();
    let content = if with_content {
        let c = spec
            .content
            .as_ref()
            .ok_or_else(|| Error::Validation("backbone declares no content output".into()))?;
        taps.push(&c.name);
        Some(c)
    } else {
        None
    };

    let maps = backbone.activations(input.view(), &taps)?;
    if maps.len() != taps.len() {
        return Err(Error::Backbone(format!("asked for {} taps, got {}", taps.len(), maps.len())));
    }

    let mut mlsp = Vec::with_capacity(spec.feature_dim());
    for (block, map) in spec.blocks.iter().zip(&maps) {
        let pooled = gap(map.view())?;
        if pooled.len() != block.channels {
            return Err(Error::Backbone(format!(
                "block {:?} declared {} channels but produced {}",
                block.name,
                block.channels,
                pooled.len()
            )));
        }
        mlsp.extend(pooled);
    }
    let content = match content {
        Some(c) => {
            let pooled = gap(maps[maps.len() - 1].view())?;
            if pooled.len() != c.channels {
                return Err(Error::Backbone(format!(
                    "content tap {:?} declared {} channels but produced {}",
                    c.name,
                    c.channels,
                    pooled.len()
                )));
            }
            Some(pooled)
        }
        None => None,
    };
    Ok((Array1::from(mlsp), content))
}

/// Collects a decoded stream, converting the first failure into a decode
/// error carrying its frame index.
pub fn collect_frames(frames: impl IntoIterator<Item = Result<Frame>>) -> Result<Vec<Frame>> {
    let mut out = Vec::new();
    for (index, frame) in frames.into_iter().enumerate() {
        match frame {
            Ok(f) => out.push(f),
            Err(e @ Error::Decode { .. }) => return Err(e),
            Err(e) => {
                return Err(Error::Decode {
                    index,
                    message: e.to_string(),
                })
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Empty("no decodable frames"));
    }
    Ok(out)
}

pub fn extract_video_mlsp(
    video_id: &str,
    frames: &[Frame],
    sampling: &FrameSampling,
    backbone: &mut dyn Backbone,
) -> Result<FeatureArchive> {
    Ok(extract_video(video_id, frames, sampling, backbone, false)?.archive)
}

/// Builds the `T x D` MLSP matrix for a clip. Each distinct source frame is
/// run through the backbone once, even when padding repeats it.
pub fn extract_video(
    video_id: &str,
    frames: &[Frame],
    sampling: &FrameSampling,
    backbone: &mut dyn Backbone,
    with_content: bool,
) -> Result<ExtractedVideo> {
    let indices = sampling.indices(frames.len())?;
    let dim = backbone.spec().feature_dim();

    let mut pooled: BTreeMap<usize, (Array1<f32>, Option<Array1<f32>>)> = BTreeMap::new();
    for &i in &indices {
        if !pooled.contains_key(&i) {
            pooled.insert(i, pool_frame(frames[i].view(), backbone, with_content)?);
        }
    }

    let mut data = Array2::<f32>::zeros((indices.len(), dim));
    for (row, &i) in indices.iter().enumerate() {
        data.row_mut(row).assign(&pooled[&i].0);
    }
    let archive = FeatureArchive::new(video_id, data, backbone.spec().blocks.clone())?;

    let content = if with_content {
        let rows: Vec<ArrayView2<'_, f32>> = pooled
            .values()
            .filter_map(|(_, c)| c.as_ref().map(|c| c.view().insert_axis(Axis(0))))
            .collect();
        let stacked = ndarray::concatenate(Axis(0), &rows).map_err(|e| Error::Validation(e.to_string()))?;
        Some(content_vector_from_rows(stacked.view())?)
    } else {
        None
    };
    Ok(ExtractedVideo { archive, content })
}

/// Temporal mean of pooled content-tap activations over `frames`.
pub fn content_vector(frames: &[Frame], backbone: &mut dyn Backbone) -> Result<Array1<f32>> {
    if backbone.spec().content.is_none() {
        return Err(Error::Validation("backbone declares no content output".into()));
    }
    if frames.is_empty() {
        return Err(Error::Empty("no frames for content vector"));
    }
    let content_dim = backbone.spec().content_dim().unwrap_or(0);
    let mut acc = vec![0.0f64; content_dim];
    for f in frames {
        let c = pool_content(f.view(), backbone)?;
        for (a, v) in acc.iter_mut().zip(c.iter()) {
            *a += *v as f64;
        }
    }
    let n = frames.len() as f64;
    Ok(acc.into_iter().map(|a| (a / n) as f32).collect())
}

fn pool_content(frame: ArrayView3<'_, u8>, backbone: &mut dyn Backbone) -> Result<Array1<f32>> {
    let spec = backbone.spec().clone();
    let c = spec.content.as_ref().expect("checked by caller");
    let input = spec.preprocessing.apply_frame(frame);
    let maps = backbone.activations(input.view(), &[c.name.as_str()])?;
    let map = maps
        .into_iter()
        .next()
        .ok_or_else(|| Error::Backbone("content tap produced no output".into()))?;
    let pooled = gap(map.view())?;
    if pooled.len() != c.channels {
        return Err(Error::DimensionMismatch {
            expected: c.channels,
            found: pooled.len(),
        });
    }
    Ok(pooled)
}

/// Temporal mean of already-pooled rows.
pub fn content_vector_from_rows(rows: ArrayView2<'_, f32>) -> Result<Array1<f32>> {
    if rows.nrows() == 0 {
        return Err(Error::Empty("no frames for content vector"));
    }
    let mean = rows.mapv(|v| v as f64).mean_axis(Axis(0)).expect("nonempty");
    Ok(mean.mapv(|v| v as f32))
}
