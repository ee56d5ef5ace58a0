//! Normalisation of raw videos before feature extraction: 960x540, the
//! middle five seconds, H.264 at constant rate factor 23.
//!
//! Transcoding is delegated to `ffmpeg`; this module decides what to ask
//! for and checks that the result matches.

use std::ffi::OsString;
use std::path::Path;
use std::process::Command;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::features::frames::tool_error;

pub const TARGET_WIDTH: u32 = 960;
pub const TARGET_HEIGHT: u32 = 540;
pub const CLIP_SECONDS: f64 = 5.0;
pub const CRF: u32 = 23;
pub const CODEC: &str = "h264";

/// Properties of a video's first stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamInfo {
    pub width: u32,
    pub height: u32,
    pub duration: f64,
    pub fps: f64,
    pub codec: String,
}

#[derive(Deserialize)]
struct ProbeJson {
    #[serde(default)]
    streams: Vec<ProbeStream>,
    format: Option<ProbeFormat>,
}

#[derive(Deserialize)]
struct ProbeStream {
    codec_name: Option<String>,
    width: Option<u32>,
    height: Option<u32>,
    r_frame_rate: Option<String>,
    duration: Option<String>,
}

#[derive(Deserialize)]
struct ProbeFormat {
    duration: Option<String>,
}

fn parse_rate(s: &str) -> Option<f64> {
    let v = match s.split_once('/') {
        Some((n, d)) => n.trim().parse::<f64>().ok()? / d.trim().parse::<f64>().ok()?,
        None => s.trim().parse().ok()?,
    };
    (v.is_finite() && v > 0.0).then_some(v)
}

/// Parses `ffprobe -of json` output for the first video stream.
pub fn parse_probe(json: &str) -> Result<StreamInfo> {
    let bad = |m: &str| Error::ExternalTool {
        tool: "ffprobe".into(),
        message: m.to_string(),
    };
    let p: ProbeJson = serde_json::from_str(json).map_err(|e| bad(&format!("unreadable output: {e}")))?;
    let s = p.streams.into_iter().next().ok_or_else(|| bad("no video stream"))?;
    let duration = s
        .duration
        .or(p.format.and_then(|f| f.duration))
        .and_then(|d| d.parse::<f64>().ok())
        .ok_or_else(|| bad("no duration"))?;
    Ok(StreamInfo {
        width: s.width.ok_or_else(|| bad("no width"))?,
        height: s.height.ok_or_else(|| bad("no height"))?,
        duration,
        fps: s.r_frame_rate.as_deref().and_then(parse_rate).ok_or_else(|| bad("no frame rate"))?,
        codec: s.codec_name.unwrap_or_default(),
    })
}

pub fn probe(path: &Path) -> Result<StreamInfo> {
    let output = Command::new("ffprobe")
        .args([
            "-v",
            "error",
            "-select_streams",
            "v:0",
            "-show_entries",
            "stream=codec_name,width,height,r_frame_rate,duration:format=duration",
            "-of",
            "json",
        ])
        .arg(path)
        .output()
        .map_err(|e| tool_error("ffprobe", e))?;
    if !output.status.success() {
        return Err(Error::ExternalTool {
            tool: "ffprobe".into(),
            message: String::from_utf8_lossy(&output.stderr).trim().to_owned(),
        });
    }
    parse_probe(&String::from_utf8_lossy(&output.stdout))
}

/// Rejects sources outside the inclusion rule: 16:9 at 960x540 or larger,
/// and at least five seconds long.
pub fn check_source(info: &StreamInfo) -> Result<()> {
    if u64::from(info.width) * 9 != u64::from(info.height) * 16 {
        return Err(Error::Validation(format!(
            "{}x{} is not 16:9; only 16:9 sources of at least {TARGET_WIDTH}x{TARGET_HEIGHT} are accepted",
            info.width, info.height
        )));
    }
    if info.width < TARGET_WIDTH || info.height < TARGET_HEIGHT {
        return Err(Error::Validation(format!(
            "{}x{} is below the {TARGET_WIDTH}x{TARGET_HEIGHT} minimum",
            info.width, info.height
        )));
    }
    if info.duration < CLIP_SECONDS {
        return Err(Error::Validation(format!(
            "{:.2} s is shorter than the {CLIP_SECONDS} s clip",
            info.duration
        )));
    }
    Ok(())
}

/// The transcode to run for one source.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipPlan {
    /// Offset of the clip into the source, seconds.
    pub start: f64,
    pub duration: f64,
    pub rescale: bool,
}

pub fn plan_clip(info: &StreamInfo) -> Result<ClipPlan> {
    check_source(info)?;
    Ok(ClipPlan {
        start: (info.duration - CLIP_SECONDS) / 2.0,
        duration: CLIP_SECONDS,
        rescale: (info.width, info.height) != (TARGET_WIDTH, TARGET_HEIGHT),
    })
}

/// `ffmpeg` arguments realising `plan`. Audio is dropped.
pub fn ffmpeg_args(input: &Path, output: &Path, plan: &ClipPlan) -> Vec<OsString> {
    let mut args: Vec<OsString> = ["-v", "error", "-y", "-ss"].iter().map(OsString::from).collect();
    args.push(format!("{:.3}", plan.start).into());
    args.push("-i".into());
    args.push(input.into());
    args.push("-t".into());
    args.push(format!("{:.3}", plan.duration).into());
    if plan.rescale {
        args.push("-vf".into());
        args.push(format!("scale={TARGET_WIDTH}:{TARGET_HEIGHT}").into());
    }
    for a in ["-c:v", "libx264", "-crf"] {
        args.push(a.into());
    }
    args.push(CRF.to_string().into());
    for a in ["-pix_fmt", "yuv420p", "-an"] {
        args.push(a.into());
    }
    args.push(output.into());
    args
}

/// Checks a transcoded clip: target resolution, H.264, and a duration
/// within one frame of five seconds.
pub fn validate_output(info: &StreamInfo) -> Result<()> {
    let mut problems = Vec::new();
    if (info.width, info.height) != (TARGET_WIDTH, TARGET_HEIGHT) {
        problems.push(format!("resolution {}x{}", info.width, info.height));
    }
    if info.codec != CODEC {
        problems.push(format!("codec {:?}", info.codec));
    }
    if (info.duration - CLIP_SECONDS).abs() > 1.0 / info.fps + 1e-9 {
        problems.push(format!("duration {:.3} s", info.duration));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Preprocess(format!("output check failed: {}", problems.join(", "))))
    }
}

/// Probes `input`, transcodes its middle five seconds into `output` and
/// verifies the result.
pub fn preprocess_video(input: &Path, output: &Path) -> Result<ClipPlan> {
    let plan = plan_clip(&probe(input)?)?;
    let status = Command::new("ffmpeg")
        .args(ffmpeg_args(input, output, &plan))
        .status()
        .map_err(|e| tool_error("ffmpeg", e))?;
    if !status.success() {
        return Err(Error::ExternalTool {
            tool: "ffmpeg".into(),
            message: format!("transcode of {} exited with {status}", input.display()),
        });
    }
    validate_output(&probe(output)?)?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn info(w: u32, h: u32, duration: f64) -> StreamInfo {
        StreamInfo {
            width: w,
            height: h,
            duration,
            fps: 30.0,
            codec: "h264".into(),
        }
    }

    #[test]
    fn middle_window_of_a_full_hd_source() {
        let plan = plan_clip(&info(1920, 1080, 20.0)).unwrap();
        assert_eq!(plan, ClipPlan { start: 7.5, duration: 5.0, rescale: true });
        let args: Vec<String> = ffmpeg_args(Path::new("in.mp4"), Path::new("out.mp4"), &plan)
            .into_iter()
            .map(|a| a.into_string().unwrap())
            .collect();
        let joined = args.join(" ");
        assert!(joined.contains("-ss 7.500 -i in.mp4 -t 5.000"), "{joined}");
        assert!(joined.contains("scale=960:540"));
        assert!(joined.contains("-crf 23"));
    }

    #[test]
    fn native_resolution_is_not_rescaled() {
        let plan = plan_clip(&info(960, 540, 8.0)).unwrap();
        assert!(!plan.rescale);
        assert_eq!(plan.start, 1.5);
        let args = ffmpeg_args(Path::new("a"), Path::new("b"), &plan);
        assert!(!args.iter().any(|a| a == "-vf"));
    }

    #[test]
    fn inclusion_rule() {
        let err = check_source(&info(1440, 1080, 10.0)).unwrap_err();
        assert!(err.to_string().contains("16:9"), "{err}");
        assert!(check_source(&info(640, 360, 10.0)).is_err());
        assert!(check_source(&info(1280, 720, 4.0)).is_err());
        assert!(check_source(&info(3840, 2160, 10.0)).is_ok());
    }

    #[test]
    fn output_checks() {
        assert!(validate_output(&info(960, 540, 5.0 + 1.0 / 30.0)).is_ok());
        assert!(validate_output(&info(960, 540, 5.1)).is_err());
        let mut vp9 = info(960, 540, 5.0);
        vp9.codec = "vp9".into();
        let err = validate_output(&vp9).unwrap_err();
        assert!(err.to_string().contains("vp9"));
    }

    #[test]
    fn parses_probe_json() {
        let json = r#"{"programs":[],"streams":[{"codec_name":"h264","width":960,"height":540,
            "r_frame_rate":"30000/1001"}],"format":{"duration":"5.005000"}}"#;
        let i = parse_probe(json).unwrap();
        assert_eq!((i.width, i.height, i.codec.as_str()), (960, 540, "h264"));
        assert!((i.fps - 29.97).abs() < 0.01);
        assert_eq!(i.duration, 5.005);
        assert!(parse_probe("{}").is_err());
        assert!(parse_probe("not json").is_err());
    }
}
