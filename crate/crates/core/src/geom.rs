//! Farthest point sampling and spatio-temporal neighbourhood construction.
//!
//! Everything here is a pure, index-producing function of its inputs.
//! Distances are computed in `f64` from `f32` coordinates, and every sort
//! breaks ties by the lower point index, so results are deterministic.

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// A 3D point in meters.
pub type Point = [f32; 3];

/// One frame of a point cloud video.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameCloud {
    pub coords: Vec<Point>,
    pub frame_index: usize,
}

impl FrameCloud {
    pub fn new(coords: Vec<Point>, frame_index: usize) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Argument(format!("frame {frame_index} has no points")));
        }
        if coords.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Argument(format!("frame {frame_index} has non-finite coordinates")));
        }
        Ok(Self { coords, frame_index })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

#[inline]
pub fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a[0] as f64 - b[0] as f64;
    let dy = a[1] as f64 - b[1] as f64;
    let dz = a[2] as f64 - b[2] as f64;
    dx * dx + dy * dy + dz * dz
}

/// Greedy farthest point sampling seeded at index 0.
pub fn fps(coords: &[Point], m: usize) -> Result<Vec<usize>> {
    let n = coords.len();
    if m == 0 || m > n {
        return Err(Error::Argument(format!("fps needs 1 <= m <= n, got m={m}, n={n}")));
    }
    let mut picked = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    let mut min_d = vec![f64::INFINITY; n];
    let mut cur = 0;
    loop {
        picked.push(cur);
        taken[cur] = true;
        if picked.len() == m {
            return Ok(picked);
        }
        let c = coords[cur];
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            let d = dist2(&coords[j], &c);
            if d < min_d[j] {
                min_d[j] = d;
            }
            if !taken[j] && best.is_none_or(|(_, bd)| min_d[j] > bd) {
                best = Some((j, min_d[j]));
            }
        }
        cur = best.expect("m <= n leaves an untaken point").0;
    }
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Up to `k` points of `cloud` within distance `r` of `centroid`, nearest
/// first, padded to exactly `k` by repeating the first entry. An empty ball is
/// filled with the globally nearest point.
pub fn radius_neighbors(centroid: Point, cloud: &[Point], r: f64, k: usize) -> Result<Vec<usize>> {
    if cloud.is_empty() {
        return Err(Error::Argument("radius search in an empty cloud".into()));
    }
    if !(r > 0.0) {
        return Err(Error::Argument(format!("search radius must be > 0, got {r}")));
    }
    if k == 0 {
        return Err(Error::Argument("neighbour count must be >= 1".into()));
    }
    let r2 = r * r;
    let mut inside: Vec<(f64, usize)> = Vec::with_capacity(k * 2);
    let mut nearest = (f64::INFINITY, 0);
    for (j, p) in cloud.iter().enumerate() {
        let d = dist2(p, &centroid);
        if d < nearest.0 {
            nearest = (d, j);
        }
        if d <= r2 {
            inside.push((d, j));
        }
    }
    if inside.is_empty() {
        return Ok(vec![nearest.1; k]);
    }
    inside.sort_unstable_by(by_distance_then_index);
    inside.truncate(k);
    let mut out: Vec<usize> = inside.iter().map(|&(_, j)| j).collect();
    out.resize(k, out[0]);
    Ok(out)
}

/// Neighbours of one centroid inside one frame of its temporal window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TubeSlice {
    /// Requested offset `t' - t` in `-r_t..=r_t`.
    pub offset: i32,
    /// Frame actually searched after clamping to the video.
    pub frame: usize,
    pub indices: Vec<usize>,
}

pub fn clamp_frame(t: usize, offset: i32, num_frames: usize) -> usize {
    (t as i64 + offset as i64).clamp(0, num_frames as i64 - 1) as usize
}

/// Runs [`radius_neighbors`] in every frame `t-r_t..=t+r_t`; out-of-range
/// frames are clamped to the boundary frame.
pub fn tube_neighbors<F: AsRef<[Point]>>(
    centroid: Point,
    t: usize,
    frames: &[F],
    r: f64,
    r_t: usize,
    k: usize,
) -> Result<Vec<TubeSlice>> {
    if t >= frames.len() {
        return Err(Error::Argument(format!("frame {t} out of range for {} frames", frames.len())));
    }
    let rt = r_t as i32;
    (-rt..=rt)
        .map(|offset| {
            let frame = clamp_frame(t, offset, frames.len());
            Ok(TubeSlice {
                offset,
                frame,
                indices: radius_neighbors(centroid, frames[frame].as_ref(), r, k)?,
            })
        })
        .collect()
}

/// One entry of a point tube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Neighbor {
    pub frame_offset: i32,
    pub frame: usize,
    pub point: usize,
}

/// Centroids per frame plus their padded spatio-temporal neighbour lists.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodPlan {
    /// `centroid_indices[t]` indexes into frame `t`'s points.
    pub centroid_indices: Vec<Vec<usize>>,
    /// `neighbor_indices[t][i]` has exactly `(2·r_t + 1)·k_nbr` entries,
    /// grouped by increasing frame offset.
    pub neighbor_indices: Vec<Vec<Vec<Neighbor>>>,
    pub search_radius: f64,
    pub temporal_radius: usize,
    pub k_nbr: usize,
}

impl NeighborhoodPlan {
    pub fn build<F: AsRef<[Point]>>(
        frames: &[F],
        centroid_indices: Vec<Vec<usize>>,
        search_radius: f64,
        temporal_radius: usize,
        k_nbr: usize,
    ) -> Result<Self> {
        if centroid_indices.len() != frames.len() {
            return Err(Error::Dimension(format!(
                "{} centroid lists for {} frames",
                centroid_indices.len(),
                frames.len()
            )));
        }
        let mut neighbor_indices = Vec::with_capacity(frames.len());
        for (t, cents) in centroid_indices.iter().enumerate() {
            let pts = frames[t].as_ref();
            let mut per_frame = Vec::with_capacity(cents.len());
            for &c in cents {
                let centroid = *pts.get(c).ok_or_else(|| {
                    Error::Argument(format!("centroid {c} out of range in frame {t}"))
                })?;
                let tube = tube_neighbors(centroid, t, frames, search_radius, temporal_radius, k_nbr)?;
                per_frame.push(
                    tube.into_iter()
                        .flat_map(|s| {
                            let (off, fr) = (s.offset, s.frame);
                            s.indices.into_iter().map(move |p| Neighbor {
                                frame_offset: off,
                                frame: fr,
                                point: p,
                            })
                        })
                        .collect(),
                );
            }
            neighbor_indices.push(per_frame);
        }
        Ok(Self {
            centroid_indices,
            neighbor_indices,
            search_radius,
            temporal_radius,
            k_nbr,
        })
    }

    /// FPS to `m` centroids in every frame, then [`NeighborhoodPlan::build`].
    pub fn with_fps<F: AsRef<[Point]>>(
        frames: &[F],
        m: usize,
        search_radius: f64,
        temporal_radius: usize,
        k_nbr: usize,
    ) -> Result<Self> {
        let cents = frames
            .iter()
            .map(|f| fps(f.as_ref(), m))
            .collect::<Result<Vec<_>>>()?;
        Self::build(frames, cents, search_radius, temporal_radius, k_nbr)
    }

    pub fn tube_len(&self) -> usize {
        (2 * self.temporal_radius + 1) * self.k_nbr
    }

    pub fn num_centroids(&self) -> usize {
        self.centroid_indices.iter().map(Vec::len).sum()
    }

    /// Checks indices, list lengths and offsets against `frames`.
    pub fn validate<F: AsRef<[Point]>>(&self, frames: &[F]) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(format!("invalid neighbourhood plan: {m}")));
        if self.centroid_indices.len() != frames.len() || self.neighbor_indices.len() != frames.len() {
            return bad(format!("plan covers {} frames, video has {}", self.centroid_indices.len(), frames.len()));
        }
        for (t, (cents, nbrs)) in self.centroid_indices.iter().zip(&self.neighbor_indices).enumerate() {
            if cents.len() != nbrs.len() {
                return bad(format!("frame {t}: {} centroids but {} neighbour lists", cents.len(), nbrs.len()));
            }
            let n = frames[t].as_ref().len();
            if let Some(c) = cents.iter().find(|&&c| c >= n) {
                return bad(format!("frame {t}: centroid {c} >= {n}"));
            }
            for list in nbrs {
                if list.len() != self.tube_len() {
                    return bad(format!("neighbour list of length {} (want {})", list.len(), self.tube_len()));
                }
                for nb in list {
                    if nb.frame_offset.unsigned_abs() as usize > self.temporal_radius {
                        return bad(format!("frame offset {} beyond {}", nb.frame_offset, self.temporal_radius));
                    }
                    if nb.frame >= frames.len() || nb.point >= frames[nb.frame].as_ref().len() {
                        return bad(format!("neighbour {nb:?} out of range"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Per-neighbour displacement `x_j^{t'} - x_i^t`, divided by the search
/// radius when `normalize` is set. Flattened in plan order: frame, centroid,
/// neighbour.
pub fn relative_offsets<F: AsRef<[Point]>>(
    plan: &NeighborhoodPlan,
    frames: &[F],
    normalize: bool,
) -> Result<Vec<[f64; 3]>> {
    plan.validate(frames)?;
    let scale = if normalize { 1.0 / plan.search_radius } else { 1.0 };
    let mut out = Vec::with_capacity(plan.num_centroids() * plan.tube_len());
    for (t, (cents, nbrs)) in plan.centroid_indices.iter().zip(&plan.neighbor_indices).enumerate() {
        for (&c, list) in cents.iter().zip(nbrs) {
            let ci = frames[t].as_ref()[c];
            for nb in list {
                let p = frames[nb.frame].as_ref()[nb.point];
                out.push([
                    (p[0] as f64 - ci[0] as f64) * scale,
                    (p[1] as f64 - ci[1] as f64) * scale,
                    (p[2] as f64 - ci[2] as f64) * scale,
                ]);
            }
        }
    }
    Ok(out)
}
