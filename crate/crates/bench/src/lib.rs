//! Fixtures shared by the kernel benchmarks.

use vg4d::data::{generate_synthetic, prepare_video, FrameSampling, SampleMode, SynthSpec};
use vg4d::Point;

/// Frames of the first synthetic video at the default desk-scale size.
pub fn synthetic_frames(points_per_frame: usize) -> Vec<Vec<Point>> {
    let spec = SynthSpec {
        samples_per_class: 1,
        points_per_frame,
        ..Default::default()
    };
    let data = generate_synthetic(&spec).expect("valid spec");
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    prepare_video(
        &data[0].video,
        &FrameSampling::Segment { segments: spec.frames_per_video },
        SampleMode::Test,
        points_per_frame,
        &mut rng,
    )
    .expect("video prepares")
}
