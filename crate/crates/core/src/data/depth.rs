use crate::error::{Error, Result};
use crate::geom::{FrameCloud, Point};

/// A depth image with pinhole intrinsics. Depth is in meters, 0 marks an
/// invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f32>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl DepthFrame {
    fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Argument(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.depth.len() != self.width * self.height {
            return Err(Error::Dimension(format!(
                "{}x{} depth frame with {} values",
                self.width,
                self.height,
                self.depth.len()
            )));
        }
        if self.depth.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::Argument("depth values must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Back-projects every valid pixel: `x = (u - cx)·z/fx`, `y = (v - cy)·z/fy`.
pub fn depth_to_points(frame: &DepthFrame, frame_index: usize) -> Result<FrameCloud> {
    frame.validate()?;
    let mut coords = Vec::new();
    for v in 0..frame.height {
        for u in 0..frame.width {
            let z = frame.depth[v * frame.width + u] as f64;
            if z > 0.0 {
                coords.push([
                    ((u as f64 - frame.cx) * z / frame.fx) as f32,
                    ((v as f64 - frame.cy) * z / frame.fy) as f32,
                    z as f32,
                ]);
            }
        }
    }
    if coords.is_empty() {
        return Err(Error::Data(format!("depth frame {frame_index} has no valid pixels")));
    }
    FrameCloud::new(coords, frame_index)
}

/// Forward pinhole projection to `(u, v, z)`.
pub fn project(p: &Point, frame: &DepthFrame) -> (f64, f64, f64) {
    let z = p[2] as f64;
    (
        p[0] as f64 * frame.fx / z + frame.cx,
        p[1] as f64 * frame.fy / z + frame.cy,
        z,
    )
}
