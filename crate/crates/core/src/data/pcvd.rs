use std::path::Path;

use super::PointCloudVideo;
use crate::error::{Error, Result};
use crate::geom::FrameCloud;
use crate::io::ByteCursor;

pub const PCVD_MAGIC: &[u8; 8] = b"PCVD0001";

/// Serializes a video: magic, `u32` frame count, `u32` label, `u32` id length
/// and UTF-8 id, then per frame a `u32` point count and `x, y, z` as `f32`.
/// All integers and floats are little-endian.
pub fn encode_pcvd(video: &PointCloudVideo) -> Vec<u8> {
    let id = video.sample_id.as_bytes();
    let points: usize = video.frames.iter().map(FrameCloud::len).sum();
    let mut out = Vec::with_capacity(20 + id.len() + 4 * video.frames.len() + 12 * points);
    out.extend_from_slice(PCVD_MAGIC);
    out.extend_from_slice(&(video.frames.len() as u32).to_le_bytes());
    out.extend_from_slice(&(video.label as u32).to_le_bytes());
    out.extend_from_slice(&(id.len() as u32).to_le_bytes());
    out.extend_from_slice(id);
    for f in &video.frames {
        out.extend_from_slice(&(f.len() as u32).to_le_bytes());
        for p in &f.coords {
            for c in p {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_pcvd(bytes: &[u8]) -> Result<PointCloudVideo> {
    let mut cur = ByteCursor::new(bytes);
    if cur.take(8)? != PCVD_MAGIC {
        return Err(Error::format(0, "bad PCVD magic"));
    }
    let at = cur.offset();
    let num_frames = cur.u32()? as usize;
    if num_frames == 0 {
        return Err(Error::format(at, "video has zero frames"));
    }
    let label = cur.u32()? as usize;
    let id_len = cur.u32()? as usize;
    let at = cur.offset();
    let id = std::str::from_utf8(cur.take(id_len)?)
        .map_err(|_| Error::format(at, "sample id is not UTF-8"))?
        .to_string();
    let mut frames = Vec::with_capacity(num_frames);
    for t in 0..num_frames {
        let at = cur.offset();
        let n = cur.u32()? as usize;
        if n == 0 {
            return Err(Error::format(at, format!("frame {t} has zero points")));
        }
        let mut coords = Vec::with_capacity(n);
        for _ in 0..n {
            coords.push([cur.f32()?, cur.f32()?, cur.f32()?]);
        }
        frames.push(FrameCloud::new(coords, t).map_err(|e| Error::format(at, e.to_string()))?);
    }
    if !cur.is_empty() {
        return Err(Error::format(
            cur.offset(),
            format!("{} trailing bytes after {num_frames} frames", bytes.len() as u64 - cur.offset()),
        ));
    }
    PointCloudVideo::new(frames, id, label)
}

pub fn save_pcv(video: &PointCloudVideo, path: &Path) -> Result<()> {
    crate::io::write_file(path, &encode_pcvd(video))
}

pub fn load_pcv(path: &Path) -> Result<PointCloudVideo> {
    decode_pcvd(&crate::io::read_file(path)?)
}
