use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplingMode {
    All,
    /// Exactly `T` rows: uniform over the clip, padded when the clip is short.
    FixedCount(usize),
    Stride { step: usize, offset: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PadPolicy {
    #[default]
    RepeatLast,
    Cycle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSampling {
    pub mode: SamplingMode,
    pub pad: PadPolicy,
}

impl FrameSampling {
    pub const ALL: FrameSampling = FrameSampling {
        mode: SamplingMode::All,
        pad: PadPolicy::RepeatLast,
    };

    pub fn fixed(count: usize) -> Self {
        FrameSampling {
            mode: SamplingMode::FixedCount(count),
            pad: PadPolicy::RepeatLast,
        }
    }

    pub fn stride(step: usize, offset: usize) -> Self {
        FrameSampling {
            mode: SamplingMode::Stride { step, offset },
            pad: PadPolicy::RepeatLast,
        }
    }

    pub fn with_pad(mut self, pad: PadPolicy) -> Self {
        self.pad = pad;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            SamplingMode::FixedCount(0) => Err(Error::Validation("fixed frame count must be >= 1".into())),
            SamplingMode::Stride { step: 0, .. } => Err(Error::Validation("frame stride must be >= 1".into())),
            _ => Ok(()),
        }
    }

    /// Source frame index for every output row, in temporal order.
    pub fn indices(&self, n_frames: usize) -> Result<Vec<usize>> {
        self.validate()?;
        if n_frames == 0 {
            return Err(Error::Empty("no decodable frames"));
        }
        let picked: Vec<usize> = match self.mode {
            SamplingMode::All => (0..n_frames).collect(),
            SamplingMode::FixedCount(count) if count <= n_frames => linspace_indices(n_frames, count),
            SamplingMode::FixedCount(count) => (0..count)
                .map(|i| match self.pad {
                    PadPolicy::RepeatLast => i.min(n_frames - 1),
                    PadPolicy::Cycle => i % n_frames,
                })
                .collect(),
            SamplingMode::Stride { step, offset } => (offset..n_frames).step_by(step).collect(),
        };
        if picked.is_empty() {
            return Err(Error::Empty("sampling selected no frames"));
        }
        Ok(picked)
    }
}

impl Default for FrameSampling {
    fn default() -> Self {
        FrameSampling::ALL
    }
}

/// `count` indices rounded from an evenly spaced grid over `[0, n - 1]`.
fn linspace_indices(n: usize, count: usize) -> Vec<usize> {
    if count == 1 {
        return vec![0];
    }
    let last = (n - 1) as f64;
    (0..count)
        .map(|i| (i as f64 * last / (count - 1) as f64).round() as usize)
        .collect()
}

/// Selects rows of a `T x D` matrix according to `sampling`.
pub fn resample_rows(rows: &Array2<f32>, sampling: &FrameSampling) -> Result<Array2<f32>> {
    let idx = sampling.indices(rows.nrows())?;
    Ok(rows.select(ndarray::Axis(0), &idx))
}

impl fmt::Display for FrameSampling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mode {
            SamplingMode::All => write!(f, "all"),
            SamplingMode::FixedCount(n) => write!(f, "fixed:{n}"),
            SamplingMode::Stride { step, offset } => write!(f, "stride:{step}:{offset}"),
        }?;
        if self.pad == PadPolicy::Cycle {
            write!(f, ",cycle")?;
        }
        Ok(())
    }
}

/// Parses `all`, `fixed:N` or `stride:K[:OFFSET]`, optionally followed by
/// `,cycle` or `,repeat`.
impl FromStr for FrameSampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (mode, pad) = match s.split_once(',') {
            Some((m, p)) => (m, Some(p)),
            None => (s, None),
        };
        let bad = || Error::Validation(format!("invalid sampling {s:?}; expected all, fixed:N or stride:K[:OFFSET]"));
        let parts: Vec<&str> = mode.trim().split(':').collect();
        let num = |p: &str| p.parse::<usize>().map_err(|_| bad());
        let mode = match parts.as_slice() {
            ["all"] => SamplingMode::All,
            ["fixed", n] => SamplingMode::FixedCount(num(n)?),
            ["stride", k] => SamplingMode::Stride { step: num(k)?, offset: 0 },
            ["stride", k, o] => SamplingMode::Stride {
                step: num(k)?,
                offset: num(o)?,
            },
            _ => return Err(bad()),
        };
        let pad = match pad.map(str::trim) {
            None | Some("repeat") | Some("repeat_last") => PadPolicy::RepeatLast,
            Some("cycle") => PadPolicy::Cycle,
            Some(_) => return Err(bad()),
        };
        let out = FrameSampling { mode, pad };
        out.validate()?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_is_passthrough() {
        assert_eq!(FrameSampling::ALL.indices(120).unwrap().len(), 120);
    }

    #[test]
    fn short_clip_repeats_last_frame() {
        let idx = FrameSampling::fixed(180).indices(120).unwrap();
        assert_eq!(idx.len(), 180);
        assert_eq!(&idx[..120], &(0..120).collect::<Vec<_>>()[..]);
        assert!(idx[120..].iter().all(|&i| i == 119));
    }

    #[test]
    fn short_clip_cycles() {
        let idx = FrameSampling::fixed(7).with_pad(PadPolicy::Cycle).indices(3).unwrap();
        assert_eq!(idx, vec![0, 1, 2, 0, 1, 2, 0]);
    }

    #[test]
    fn fixed_count_matches_linspace_oracle() {
        // oracle: numpy.round(numpy.linspace(0, 299, 150)); no exact .5 ties occur
        // for this grid because 149 is prime and divides no interior index
        let idx = FrameSampling::fixed(150).indices(300).unwrap();
        let step = 299.0 / 149.0;
        for (i, &got) in idx.iter().enumerate() {
            let x = i as f64 * step;
            let lo = x.floor();
            let want = if x - lo < 0.5 { lo } else { lo + 1.0 };
            assert_eq!(got, want as usize, "position {i}");
        }
        assert_eq!(idx[0], 0);
        assert_eq!(idx[149], 299);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn stride_and_offset() {
        assert_eq!(FrameSampling::stride(2, 1).indices(7).unwrap(), vec![1, 3, 5]);
        assert!(FrameSampling::stride(2, 9).indices(7).is_err());
    }

    #[test]
    fn invalid_specs() {
        assert!(FrameSampling::fixed(0).indices(5).is_err());
        assert!(FrameSampling::stride(0, 0).indices(5).is_err());
        assert!(FrameSampling::ALL.indices(0).is_err());
    }

    #[test]
    fn parse_and_display() {
        for s in ["all", "fixed:180", "stride:2:1", "fixed:5,cycle"] {
            let parsed: FrameSampling = s.parse().unwrap();
            assert_eq!(parsed.to_string(), s);
        }
        assert_eq!("stride:3".parse::<FrameSampling>().unwrap(), FrameSampling::stride(3, 0));
        assert!("fixed:x".parse::<FrameSampling>().is_err());
        assert!("fixed:0".parse::<FrameSampling>().is_err());
    }

    #[test]
    fn deterministic_given_counts() {
        let s = FrameSampling::fixed(37);
        assert_eq!(s.indices(1000).unwrap(), s.indices(1000).unwrap());
    }
}
