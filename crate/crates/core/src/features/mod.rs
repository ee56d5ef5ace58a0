//! Per-frame MLSP feature extraction: backbone taps, global average pooling,
//! frame sampling and content vectors.

pub mod backbone;
pub mod extract;
pub mod frames;
pub mod gap;
#[cfg(feature = "onnx")]
pub mod onnx;
pub mod sampling;

pub use backbone::{Backbone, BackboneSpec, PixelScaling, StubBackbone, TensorLayout};
pub use extract::{
    collect_frames, content_vector, content_vector_from_rows, extract_frame_mlsp, extract_video,
    extract_video_mlsp, ExtractedVideo,
};
pub use frames::{decode_frames, Frame};
pub use gap::gap;
pub use sampling::{resample_rows, FrameSampling, PadPolicy, SamplingMode};
