//! Frame decoding. Video files are decoded by piping raw RGB out of an
//! external `ffmpeg`; directories of still images are read directly.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use ndarray::Array3;

use crate::error::{Error, Result};

/// One decoded `H x W x 3` RGB frame.
pub type Frame = Array3<u8>;

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp"];

/// Decodes every frame of `path`: a directory of frame images (sorted by
/// file name) or a video file readable by `ffmpeg`.
///
/// The returned list stops at the first failure, which is kept as its last
/// element so callers can report the failing index.
pub fn decode_frames(path: &Path) -> Result<Vec<Result<Frame>>> {
    if path.is_dir() {
        image_dir_frames(path)
    } else {
        ffmpeg_frames(path)
    }
}

pub fn image_dir_frames(dir: &Path) -> Result<Vec<Result<Frame>>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    let mut out = Vec::with_capacity(files.len());
    for (index, file) in files.iter().enumerate() {
        let frame = image::open(file)
            .map(|img| {
                let rgb = img.to_rgb8();
                let (w, h) = rgb.dimensions();
                Array3::from_shape_vec((h as usize, w as usize, 3), rgb.into_raw()).expect("rgb8 buffer is h*w*3")
            })
            .map_err(|e| Error::Decode {
                index,
                message: format!("{}: {e}", file.display()),
            });
        let failed = frame.is_err();
        out.push(frame);
        if failed {
            break;
        }
    }
    Ok(out)
}

/// Width and height of the first video stream, via `ffprobe`.
pub fn probe_dimensions(path: &Path) -> Result<(usize, usize)> {
    let output = Command::new("ffprobe")
        .args(["-v", "error", "-select_streams", "v:0", "-show_entries", "stream=width,height", "-of", "csv=p=0:s=x"])
        .arg(path)
        .output()
        .map_err(|e| tool_error("ffprobe", e))?;
    if !output.status.success() {
        return Err(Error::ExternalTool {
            tool: "ffprobe".into(),
            message: String::from_utf8_lossy(&output.stderr).trim().to_owned(),
        });
    }
    let text = String::from_utf8_lossy(&output.stdout);
    let dims = text.trim().split_once('x').and_then(|(w, h)| Some((w.parse().ok()?, h.parse().ok()?)));
    dims.map(|(w, h)| (h, w)).ok_or_else(|| Error::ExternalTool {
        tool: "ffprobe".into(),
        message: format!("unexpected dimension output {text:?}"),
    })
}

pub fn ffmpeg_frames(path: &Path) -> Result<Vec<Result<Frame>>> {
    let (h, w) = probe_dimensions(path)?;
    let mut child = Command::new("ffmpeg")
        .args(["-v", "error", "-i"])
        .arg(path)
        .args(["-f", "rawvideo", "-pix_fmt", "rgb24", "-"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| tool_error("ffmpeg", e))?;
    let mut stdout = child.stdout.take().expect("piped stdout");
    let frame_bytes = h * w * 3;
    let mut out = Vec::new();
    loop {
        let mut buf = vec![0u8; frame_bytes];
        match read_full(&mut stdout, &mut buf) {
            Ok(0) => break,
            Ok(n) if n == frame_bytes => {
                out.push(Ok(Array3::from_shape_vec((h, w, 3), buf).expect("buffer sized h*w*3")));
            }
            Ok(n) => {
                out.push(Err(Error::Decode {
                    index: out.len(),
                    message: format!("partial frame: {n} of {frame_bytes} bytes"),
                }));
                break;
            }
            Err(e) => {
                out.push(Err(Error::Decode {
                    index: out.len(),
                    message: e.to_string(),
                }));
                break;
            }
        }
    }
    let status = child.wait().map_err(|e| tool_error("ffmpeg", e))?;
    if !status.success() && out.last().is_none_or(|f| f.is_ok()) {
        let mut stderr = String::new();
        if let Some(mut s) = child.stderr.take() {
            let _ = s.read_to_string(&mut stderr);
        }
        out.push(Err(Error::Decode {
            index: out.len(),
            message: format!("ffmpeg exited with {status}: {}", stderr.trim()),
        }));
    }
    Ok(out)
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 => break,
            n => filled += n,
        }
    }
    Ok(filled)
}

pub(crate) fn tool_error(tool: &str, err: std::io::Error) -> Error {
    let message = if err.kind() == std::io::ErrorKind::NotFound {
        format!("{tool} not found on PATH")
    } else {
        err.to_string()
    };
    Error::ExternalTool {
        tool: tool.into(),
        message,
    }
}
