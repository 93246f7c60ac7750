use super::ImPstNetConfig;
use crate::error::{Error, Result};
use crate::geom::{fps, relative_offsets, NeighborhoodPlan, Point};

/// Flattened gather indices and constant geometry for one stage.
///
/// Rows are ordered frame, centroid, tube entry. `neighbor_rows[r]` and
/// `center_rows[r]` index the stage's input points flattened as
/// `frame * points_in + point`.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePlan {
    pub num_frames: usize,
    pub points_in: usize,
    pub centroids_per_frame: usize,
    pub tube_len: usize,
    pub neighbor_rows: Vec<usize>,
    pub center_rows: Vec<usize>,
    /// Row-major `rows × geo_dim`: displacement (3) then optional time offset.
    pub geometry: Vec<f64>,
    pub geo_dim: usize,
    pub neighborhood: NeighborhoodPlan,
}

impl StagePlan {
    pub fn rows(&self) -> usize {
        self.neighbor_rows.len()
    }

    pub fn num_centroids(&self) -> usize {
        self.num_frames * self.centroids_per_frame
    }

    /// Builds the stage over `frames` (all with the same point count) from
    /// explicit centroid indices.
    pub fn build(
        frames: &[Vec<Point>],
        centroids: Vec<Vec<usize>>,
        radius: f64,
        k_nbr: usize,
        temporal_radius: usize,
        normalize_offsets: bool,
        encode_time_offset: bool,
    ) -> Result<Self> {
        let num_frames = frames.len();
        if num_frames == 0 {
            return Err(Error::Argument("stage input has no frames".into()));
        }
        let points_in = frames[0].len();
        if points_in == 0 {
            return Err(Error::Argument("stage input frame is empty".into()));
        }
        if let Some((t, f)) = frames.iter().enumerate().find(|(_, f)| f.len() != points_in) {
            return Err(Error::Dimension(format!(
                "frame {t} has {} points, frame 0 has {points_in}",
                f.len()
            )));
        }
        let centroids_per_frame = centroids.first().map_or(0, Vec::len);
        if centroids_per_frame == 0 || centroids.iter().any(|c| c.len() != centroids_per_frame) {
            return Err(Error::Dimension("every frame needs the same non-zero centroid count".into()));
        }
        let nb = NeighborhoodPlan::build(frames, centroids, radius, temporal_radius, k_nbr)?;
        let offsets = relative_offsets(&nb, frames, normalize_offsets)?;
        let with_time = encode_time_offset && temporal_radius > 0;
        let geo_dim = 3 + usize::from(with_time);
        let tube_len = nb.tube_len();
        let rows = num_frames * centroids_per_frame * tube_len;
        let mut neighbor_rows = Vec::with_capacity(rows);
        let mut center_rows = Vec::with_capacity(rows);
        let mut geometry = Vec::with_capacity(rows * geo_dim);
        let time_scale = 1.0 / temporal_radius.max(1) as f64;
        let mut k = 0;
        for t in 0..num_frames {
            for (ci, &c) in nb.centroid_indices[t].iter().enumerate() {
                for n in &nb.neighbor_indices[t][ci] {
                    neighbor_rows.push(n.frame * points_in + n.point);
                    center_rows.push(t * points_in + c);
                    geometry.extend_from_slice(&offsets[k]);
                    if with_time {
                        geometry.push((n.frame as f64 - t as f64) * time_scale);
                    }
                    k += 1;
                }
            }
        }
        Ok(Self {
            num_frames,
            points_in,
            centroids_per_frame,
            tube_len,
            neighbor_rows,
            center_rows,
            geometry,
            geo_dim,
            neighborhood: nb,
        })
    }

    /// Centroid coordinates per frame, which become the next stage's input.
    pub fn centroid_coords(&self, frames: &[Vec<Point>]) -> Vec<Vec<Point>> {
        self.neighborhood
            .centroid_indices
            .iter()
            .zip(frames)
            .map(|(c, f)| c.iter().map(|&i| f[i]).collect())
            .collect()
    }
}

/// Geometry for every stage of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoPlan {
    pub stages: Vec<StagePlan>,
}

impl VideoPlan {
    /// FPS-driven plan: each stage keeps `⌊N / S_s⌋` centroids per frame.
    pub fn new(frames: &[Vec<Point>], cfg: &ImPstNetConfig) -> Result<Self> {
        Self::build(frames, cfg, None)
    }

    /// Plan with caller-chosen centroids: `centroids[s][t]` indexes stage
    /// `s`'s input points of frame `t`.
    pub fn with_centroids(frames: &[Vec<Point>], cfg: &ImPstNetConfig, centroids: Vec<Vec<Vec<usize>>>) -> Result<Self> {
        if centroids.len() != cfg.stages.len() {
            return Err(Error::Dimension(format!(
                "{} centroid sets for {} stages",
                centroids.len(),
                cfg.stages.len()
            )));
        }
        Self::build(frames, cfg, Some(centroids))
    }

    fn build(frames: &[Vec<Point>], cfg: &ImPstNetConfig, pinned: Option<Vec<Vec<Vec<usize>>>>) -> Result<Self> {
        cfg.validate()?;
        if frames.is_empty() || frames.iter().any(Vec::is_empty) {
            return Err(Error::Argument("video has an empty frame".into()));
        }
        let mut pinned = pinned.map(|p| p.into_iter());
        let mut level: Vec<Vec<Point>> = frames.to_vec();
        let mut stages = Vec::with_capacity(cfg.stages.len());
        for (s, sc) in cfg.stages.iter().enumerate() {
            let n = level[0].len();
            let m = n / sc.subsample_rate;
            if m == 0 {
                return Err(Error::Argument(format!(
                    "stage {s}: {n} points per frame cannot be subsampled by {}",
                    sc.subsample_rate
                )));
            }
            let cents = match pinned.as_mut().and_then(Iterator::next) {
                Some(c) => c,
                None => level.iter().map(|f| fps(f, m)).collect::<Result<Vec<_>>>()?,
            };
            let sp = StagePlan::build(
                &level,
                cents,
                sc.radius,
                sc.k_nbr,
                cfg.stage_temporal_radius(s),
                cfg.normalize_offsets,
                cfg.encode_time_offset,
            )?;
            level = sp.centroid_coords(&level);
            stages.push(sp);
        }
        Ok(Self { stages })
    }
}
