use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PointCloudVideo;
use crate::error::{Error, Result};
use crate::geom::{FrameCloud, Point};

pub const DEFAULT_POINTS_PER_FRAME: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    Train,
    Test,
}

/// Resizes a frame to exactly `points_per_frame` points. Larger clouds are
/// subsampled uniformly without replacement (original order kept); smaller
/// clouds keep every point and are topped up by drawing with replacement.
pub fn budget_points<R: Rng + ?Sized>(cloud: &FrameCloud, points_per_frame: usize, rng: &mut R) -> FrameCloud {
    let n = cloud.coords.len();
    let coords = match n.cmp(&points_per_frame) {
        std::cmp::Ordering::Equal => cloud.coords.clone(),
        std::cmp::Ordering::Greater => {
            let mut idx = rand::seq::index::sample(rng, n, points_per_frame).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| cloud.coords[i]).collect()
        }
        std::cmp::Ordering::Less => {
            let mut c = cloud.coords.clone();
            c.extend((n..points_per_frame).map(|_| cloud.coords[rng.random_range(0..n)]));
            c
        }
    };
    FrameCloud {
        coords,
        frame_index: cloud.frame_index,
    }
}

/// One frame per segment of `num_segments` near-equal contiguous segments:
/// a uniform pick in training, the middle (`start + len/2`) at test time.
pub fn segment_sample<R: Rng + ?Sized>(
    total_frames: usize,
    num_segments: usize,
    mode: SampleMode,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if num_segments == 0 || total_frames < num_segments {
        return Err(Error::Argument(format!(
            "cannot split {total_frames} frames into {num_segments} segments"
        )));
    }
    Ok((0..num_segments)
        .map(|s| {
            let start = s * total_frames / num_segments;
            let end = (s + 1) * total_frames / num_segments;
            let len = end - start;
            match mode {
                SampleMode::Train => start + rng.random_range(0..len),
                SampleMode::Test => start + len / 2,
            }
        })
        .collect())
}

/// `[start, start + stride, ..., start + (clip_len - 1)·stride]`.
pub fn strided_clip(total_frames: usize, clip_len: usize, stride: usize, start: usize) -> Result<Vec<usize>> {
    if clip_len == 0 || stride == 0 {
        return Err(Error::Argument("clip length and stride must be >= 1".into()));
    }
    let last = start + (clip_len - 1) * stride;
    if last >= total_frames {
        return Err(Error::Argument(format!(
            "clip ending at frame {last} does not fit in {total_frames} frames"
        )));
    }
    Ok((0..clip_len).map(|i| start + i * stride).collect())
}

/// How frames are picked from a video before it reaches the encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FrameSampling {
    /// Segment-based sampling over the whole video.
    Segment { segments: usize },
    /// A fixed-stride clip: random start in training, centred at test time.
    Strided { clip_len: usize, stride: usize },
    /// A strided clip, then segment sampling over the clip's frames.
    StridedThenSegment {
        clip_len: usize,
        stride: usize,
        segments: usize,
    },
}

impl FrameSampling {
    /// Number of frames the encoder receives.
    pub fn output_len(&self) -> usize {
        match *self {
            FrameSampling::Segment { segments } => segments,
            FrameSampling::Strided { clip_len, .. } => clip_len,
            FrameSampling::StridedThenSegment { segments, .. } => segments,
        }
    }
}

fn clip_start<R: Rng + ?Sized>(total: usize, clip_len: usize, stride: usize, mode: SampleMode, rng: &mut R) -> Result<usize> {
    let span = clip_len.saturating_sub(1) * stride;
    if span >= total {
        return Err(Error::Argument(format!(
            "clip of {clip_len} frames at stride {stride} does not fit in {total} frames"
        )));
    }
    let max_start = total - 1 - span;
    Ok(match mode {
        SampleMode::Train => rng.random_range(0..=max_start),
        SampleMode::Test => max_start / 2,
    })
}

pub fn select_frames<R: Rng + ?Sized>(
    total_frames: usize,
    sampling: &FrameSampling,
    mode: SampleMode,
    rng: &mut R,
) -> Result<Vec<usize>> {
    match *sampling {
        FrameSampling::Segment { segments } => segment_sample(total_frames, segments, mode, rng),
        FrameSampling::Strided { clip_len, stride } => {
            let start = clip_start(total_frames, clip_len, stride, mode, rng)?;
            strided_clip(total_frames, clip_len, stride, start)
        }
        FrameSampling::StridedThenSegment {
            clip_len,
            stride,
            segments,
        } => {
            let start = clip_start(total_frames, clip_len, stride, mode, rng)?;
            let clip = strided_clip(total_frames, clip_len, stride, start)?;
            Ok(segment_sample(clip.len(), segments, mode, rng)?
                .into_iter()
                .map(|i| clip[i])
                .collect())
        }
    }
}

/// Frame selection followed by per-frame point budgeting.
pub fn prepare_video<R: Rng + ?Sized>(
    video: &PointCloudVideo,
    sampling: &FrameSampling,
    mode: SampleMode,
    points_per_frame: usize,
    rng: &mut R,
) -> Result<Vec<Vec<Point>>> {
    let idx = select_frames(video.num_frames(), sampling, mode, rng)?;
    Ok(idx
        .into_iter()
        .map(|i| budget_points(&video.frames[i], points_per_frame, rng).coords)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize) -> FrameCloud {
        FrameCloud::new((0..n).map(|i| [i as f32, 0.0, 0.0]).collect(), 0).unwrap()
    }

    #[test]
    fn budget_exact_fit_keeps_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = cloud(7);
        assert_eq!(budget_points(&c, 7, &mut rng), c);
    }

    #[test]
    fn budget_counts_and_determinism() {
        let c = cloud(10);
        let a = budget_points(&c, 4, &mut ChaCha8Rng::seed_from_u64(3));
        let b = budget_points(&c, 4, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a.len(), 4);
        assert_eq!(a, b);
        let mut xs: Vec<f32> = a.coords.iter().map(|p| p[0]).collect();
        xs.dedup();
        assert_eq!(xs.len(), 4, "subsample must be without replacement");
        let up = budget_points(&c, 25, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(up.len(), 25);
        assert_eq!(&up.coords[..10], &c.coords[..]);
    }

    #[test]
    fn segments_forced_when_total_equals_t() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for mode in [SampleMode::Train, SampleMode::Test] {
            assert_eq!(segment_sample(6, 6, mode, &mut rng).unwrap(), (0..6).collect::<Vec<_>>());
        }
        assert_eq!(segment_sample(23, 23, SampleMode::Test, &mut rng).unwrap().len(), 23);
    }

    #[test]
    fn segment_middle_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(segment_sample(10, 5, SampleMode::Test, &mut rng).unwrap(), vec![1, 3, 5, 7, 9]);
        assert!(segment_sample(4, 5, SampleMode::Test, &mut rng).is_err());
    }

    #[test]
    fn strided_clip_cases() {
        let c = strided_clip(45, 23, 2, 0).unwrap();
        assert_eq!(c, (0..23).map(|i| 2 * i).collect::<Vec<_>>());
        assert_eq!(*c.last().unwrap(), 44);
        assert_eq!(strided_clip(9, 9, 1, 0).unwrap(), (0..9).collect::<Vec<_>>());
        // last valid start on a 50 frame video
        let last = strided_clip(50, 23, 2, 5).unwrap();
        assert_eq!(*last.last().unwrap(), 49);
        assert!(strided_clip(50, 23, 2, 6).is_err());
    }

    #[test]
    fn strided_then_segment_stays_in_clip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = FrameSampling::StridedThenSegment {
            clip_len: 8,
            stride: 2,
            segments: 4,
        };
        let idx = select_frames(30, &s, SampleMode::Test, &mut rng).unwrap();
        assert_eq!(idx.len(), 4);
        assert!(idx.iter().all(|i| i % 2 == 1));
    }

    proptest! {
        #[test]
        fn test_mode_is_pure_and_train_stays_in_segment(total in 1usize..200, t_frac in 0.0f64..1.0, seed in 0u64..1000) {
            let t = ((total as f64 * t_frac) as usize).clamp(1, total);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let before = rng.clone();
            let test = segment_sample(total, t, SampleMode::Test, &mut rng).unwrap();
            prop_assert_eq!(&rng, &before);
            prop_assert!(test.windows(2).all(|w| w[0] < w[1]));
            let train = segment_sample(total, t, SampleMode::Train, &mut rng).unwrap();
            prop_assert!(train.windows(2).all(|w| w[0] < w[1]));
            for (s, &f) in train.iter().enumerate() {
                let start = s * total / t;
                let end = (s + 1) * total / t;
                prop_assert!(f >= start && f < end);
                prop_assert!(end - start == total / t || end - start == total / t + 1);
            }
        }
    }
}
