use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{PointCloudVideo, Sample, Split};
use crate::error::{Error, Result};
use crate::geom::{FrameCloud, Point};

/// Per-frame translation step in meters.
pub const TRANSLATE_STEP: f64 = 0.05;
/// Per-frame rotation step in radians.
pub const ROTATE_STEP: f64 = 0.1;
/// Per-frame relative scale step.
pub const SCALE_STEP: f64 = 0.05;

/// Blob semi-axes are drawn from this range (meters).
const BLOB_AXIS_RANGE: (f64, f64) = (0.3, 0.5);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Motion {
    TranslatePosX,
    TranslateNegX,
    TranslatePosY,
    TranslateNegY,
    RotateCw,
    RotateCcw,
    Expand,
    Contract,
}

/// Class `k` of the synthetic dataset moves its blob by `MOTION_BANK[k]`.
pub const MOTION_BANK: [Motion; 8] = [
    Motion::TranslatePosX,
    Motion::TranslateNegX,
    Motion::TranslatePosY,
    Motion::TranslateNegY,
    Motion::RotateCw,
    Motion::RotateCcw,
    Motion::Expand,
    Motion::Contract,
];

impl Motion {
    pub fn name(self) -> &'static str {
        match self {
            Motion::TranslatePosX => "translate +x",
            Motion::TranslateNegX => "translate -x",
            Motion::TranslatePosY => "translate +y",
            Motion::TranslateNegY => "translate -y",
            Motion::RotateCw => "rotate clockwise",
            Motion::RotateCcw => "rotate counter-clockwise",
            Motion::Expand => "expand",
            Motion::Contract => "contract",
        }
    }

    /// Position at frame `t` of a point at `p` (relative to the blob centre
    /// `c`) in frame 0.
    fn apply(self, p: [f64; 3], c: [f64; 3], t: usize) -> [f64; 3] {
        let tf = t as f64;
        let rel = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
        let shifted = |dx: f64, dy: f64| [p[0] + dx, p[1] + dy, p[2]];
        let rotated = |sign: f64| {
            let (s, co) = (sign * ROTATE_STEP * tf).sin_cos();
            [c[0] + co * rel[0] - s * rel[1], c[1] + s * rel[0] + co * rel[1], p[2]]
        };
        let scaled = |f: f64| {
            let k = f.powi(t as i32);
            [c[0] + k * rel[0], c[1] + k * rel[1], c[2] + k * rel[2]]
        };
        match self {
            Motion::TranslatePosX => shifted(TRANSLATE_STEP * tf, 0.0),
            Motion::TranslateNegX => shifted(-TRANSLATE_STEP * tf, 0.0),
            Motion::TranslatePosY => shifted(0.0, TRANSLATE_STEP * tf),
            Motion::TranslateNegY => shifted(0.0, -TRANSLATE_STEP * tf),
            Motion::RotateCw => rotated(-1.0),
            Motion::RotateCcw => rotated(1.0),
            Motion::Expand => scaled(1.0 + SCALE_STEP),
            Motion::Contract => scaled(1.0 - SCALE_STEP),
        }
    }
}

fn default_test_fraction() -> f64 {
    0.2
}

/// Parameters of the synthetic motion dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub frames_per_video: usize,
    pub points_per_frame: usize,
    pub noise_sigma: f64,
    pub rng_seed: u64,
    /// Share of each class assigned to the test split (last samples of the
    /// class).
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 8,
            samples_per_class: 40,
            frames_per_video: 8,
            points_per_frame: 64,
            noise_sigma: 0.005,
            rng_seed: 0,
            test_fraction: default_test_fraction(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.samples_per_class == 0 || self.frames_per_video == 0 || self.points_per_frame == 0 {
            return Err(Error::Argument("synthetic dataset counts must all be >= 1".into()));
        }
        if self.num_classes > MOTION_BANK.len() {
            return Err(Error::Argument(format!(
                "built-in motion bank has {} classes, asked for {}",
                MOTION_BANK.len(),
                self.num_classes
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Argument(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if !(0.0..=1.0).contains(&self.test_fraction) {
            return Err(Error::Argument(format!("test_fraction must lie in [0, 1], got {}", self.test_fraction)));
        }
        Ok(())
    }

    pub fn test_per_class(&self) -> usize {
        (self.samples_per_class as f64 * self.test_fraction).round() as usize
    }
}

fn random_blob(rng: &mut ChaCha8Rng, n: usize) -> (Vec<[f64; 3]>, [f64; 3]) {
    let axes: [f64; 3] = std::array::from_fn(|_| rng.random_range(BLOB_AXIS_RANGE.0..BLOB_AXIS_RANGE.1));
    let yaw: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let centre: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let (s, c) = yaw.sin_cos();
    let pts = (0..n)
        .map(|_| {
            // uniform in the unit ball by rejection
            let u = loop {
                let q: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                if q.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
                    break q;
                }
            };
            let e = [u[0] * axes[0], u[1] * axes[1], u[2] * axes[2]];
            [
                centre[0] + c * e[0] - s * e[1],
                centre[1] + s * e[0] + c * e[1],
                centre[2] + e[2],
            ]
        })
        .collect();
    (pts, centre)
}

/// Deterministic dataset of moving blobs; samples are class-major with ids
/// `c{class}_s{index}`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Argument(e.to_string()))?;
    let n_test = spec.test_per_class();
    let mut out = Vec::with_capacity(spec.num_classes * spec.samples_per_class);
    for (label, &motion) in MOTION_BANK.iter().enumerate().take(spec.num_classes) {
        for s in 0..spec.samples_per_class {
            let (base, centre) = random_blob(&mut rng, spec.points_per_frame);
            let mut frames = Vec::with_capacity(spec.frames_per_video);
            for t in 0..spec.frames_per_video {
                let coords: Vec<Point> = base
                    .iter()
                    .map(|&p| {
                        let q = motion.apply(p, centre, t);
                        let jitter: [f64; 3] = if spec.noise_sigma > 0.0 {
                            std::array::from_fn(|_| noise.sample(&mut rng))
                        } else {
                            [0.0; 3]
                        };
                        [
                            (q[0] + jitter[0]) as f32,
                            (q[1] + jitter[1]) as f32,
                            (q[2] + jitter[2]) as f32,
                        ]
                    })
                    .collect();
                frames.push(FrameCloud::new(coords, t)?);
            }
            let split = if s >= spec.samples_per_class - n_test {
                Split::Test
            } else {
                Split::Train
            };
            out.push(Sample {
                video: PointCloudVideo::new(frames, format!("c{label:02}_s{s:03}"), label)?,
                split,
            });
        }
    }
    Ok(out)
}

/// Gaussian draw helper shared with embedding synthesis.
pub(crate) fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}
