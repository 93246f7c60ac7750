//! Point cloud videos: file formats, depth back-projection, frame sampling,
//! point budgeting and the seeded synthetic motion dataset.

mod dataset;
mod depth;
mod pcvd;
mod sampling;
pub(crate) mod synth;

pub use dataset::{dataset_checksum, load_dataset, save_dataset, Sample, Split, MANIFEST_FILE};
pub use depth::{depth_to_points, project, DepthFrame};
pub use pcvd::{decode_pcvd, encode_pcvd, load_pcv, save_pcv, PCVD_MAGIC};
pub use sampling::{
    budget_points, prepare_video, segment_sample, select_frames, strided_clip, FrameSampling,
    SampleMode, DEFAULT_POINTS_PER_FRAME,
};
pub use synth::{generate_synthetic, Motion, SynthSpec, MOTION_BANK};

use crate::error::{Error, Result};
use crate::geom::FrameCloud;

/// An ordered sequence of frames with a class label.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudVideo {
    pub frames: Vec<FrameCloud>,
    pub sample_id: String,
    pub label: usize,
}

impl PointCloudVideo {
    pub fn new(frames: Vec<FrameCloud>, sample_id: impl Into<String>, label: usize) -> Result<Self> {
        let sample_id = sample_id.into();
        if frames.is_empty() {
            return Err(Error::Argument(format!("video {sample_id} has no frames")));
        }
        if let Some(f) = frames.iter().find(|f| f.is_empty()) {
            return Err(Error::Argument(format!(
                "video {sample_id} frame {} has no points",
                f.frame_index
            )));
        }
        Ok(Self {
            frames,
            sample_id,
            label,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }
}
