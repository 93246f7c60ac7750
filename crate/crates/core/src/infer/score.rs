use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fuse, ChannelMask, FusionWeights};
use crate::align::EmbeddingStore;
use crate::data::{prepare_video, FrameSampling, PointCloudVideo, SampleMode};
use crate::error::{Error, Result};
use crate::geom::Point;
use crate::model::ImPstNet;

/// Per-class probabilities from the four channels. The RGB channels are
/// absent when the sample has no video embedding and skipping was allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBundle {
    pub pc: Vec<f64>,
    pub pc_text: Vec<f64>,
    pub rgb: Option<Vec<f64>>,
    pub rgb_text: Option<Vec<f64>>,
}

/// Numerically stable softmax in 64-bit.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn text_scores(store: &EmbeddingStore, v: &[f64]) -> Vec<f64> {
    let logits: Vec<f64> = (0..store.text.len())
        .map(|k| store.text.row(k).iter().zip(v).map(|(&t, &x)| t as f64 * x).sum())
        .collect();
    softmax(&logits)
}

/// All four channel distributions for one prepared video.
pub fn score_sample(
    net: &ImPstNet<f32>,
    frames: &[Vec<Point>],
    sample_id: &str,
    store: &EmbeddingStore,
    skip_missing: bool,
) -> Result<ScoreBundle> {
    let k = net.config.num_classes;
    if store.num_classes() != k || store.dim() != net.config.embed_dim {
        return Err(Error::Dimension(format!(
            "store has {} classes of dim {}, model expects {k} of dim {}",
            store.num_classes(),
            store.dim(),
            net.config.embed_dim
        )));
    }
    let pred = net.forward(frames)?;
    let logits: Vec<f64> = pred.logits.iter().map(|&v| v as f64).collect();
    let emb: Vec<f64> = pred.embedding.iter().map(|&v| v as f64).collect();
    let mut bundle = ScoreBundle {
        pc: softmax(&logits),
        pc_text: text_scores(store, &emb),
        rgb: None,
        rgb_text: None,
    };
    match store.video_embedding(sample_id) {
        Some(v) => {
            let rgb: Vec<f64> = net.rgb_logits(v)?.iter().map(|&x| x as f64).collect();
            let v64: Vec<f64> = v.iter().map(|&x| x as f64).collect();
            bundle.rgb = Some(softmax(&rgb));
            bundle.rgb_text = Some(text_scores(store, &v64));
        }
        None if skip_missing => {}
        None => {
            return Err(Error::Data(format!("no video embedding for sample {sample_id}")));
        }
    }
    Ok(bundle)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub sample_id: String,
    pub label: usize,
    pub bundle: ScoreBundle,
}

/// Scores every video with test-mode frame selection. Each sample's point
/// budgeting draws from its own generator seeded by `seed` and its position,
/// so the result does not depend on thread scheduling.
pub fn score_split(
    net: &ImPstNet<f32>,
    videos: &[PointCloudVideo],
    store: &EmbeddingStore,
    sampling: &FrameSampling,
    points_per_frame: usize,
    seed: u64,
    skip_missing: bool,
) -> Result<Vec<ScoredSample>> {
    videos
        .par_iter()
        .enumerate()
        .map(|(i, v)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let frames = prepare_video(v, sampling, SampleMode::Test, points_per_frame, &mut rng)?;
            Ok(ScoredSample {
                sample_id: v.sample_id.clone(),
                label: v.label,
                bundle: score_sample(net, &frames, &v.sample_id, store, skip_missing)?,
            })
        })
        .collect()
}

/// Accuracy report for one fusion setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `None` for classes without samples in the split.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// `confusion_matrix[true][predicted]`.
    pub confusion_matrix: Vec<Vec<usize>>,
    pub channel_mask: ChannelMask,
    pub fusion_weights: FusionWeights,
    pub num_samples: usize,
}

pub fn evaluate_scores(
    scored: &[ScoredSample],
    num_classes: usize,
    weights: &FusionWeights,
    mask: ChannelMask,
) -> Result<EvalReport> {
    if scored.is_empty() {
        return Err(Error::Data("evaluation split is empty".into()));
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for s in scored {
        if s.label >= num_classes {
            return Err(Error::Data(format!("sample {} has label {} >= {num_classes}", s.sample_id, s.label)));
        }
        let (_, pred) = fuse(&s.bundle, weights, mask)?;
        confusion[s.label][pred] += 1;
    }
    let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row[c] as f64 / n as f64)
        })
        .collect();
    Ok(EvalReport {
        accuracy: correct as f64 / scored.len() as f64,
        per_class_accuracy,
        confusion_matrix: confusion,
        channel_mask: mask,
        fusion_weights: *weights,
        num_samples: scored.len(),
    })
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    net: &ImPstNet<f32>,
    videos: &[PointCloudVideo],
    store: &EmbeddingStore,
    weights: &FusionWeights,
    mask: ChannelMask,
    sampling: &FrameSampling,
    points_per_frame: usize,
    seed: u64,
) -> Result<EvalReport> {
    let scored = score_split(net, videos, store, sampling, points_per_frame, seed, true)?;
    evaluate_scores(&scored, net.config.num_classes, weights, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scored(label: usize, pc: Vec<f64>) -> ScoredSample {
        ScoredSample {
            sample_id: format!("s{label}"),
            label,
            bundle: ScoreBundle {
                pc_text: pc.clone(),
                pc,
                rgb: None,
                rgb_text: None,
            },
        }
    }

    #[test]
    fn softmax_is_a_distribution() {
        let p = softmax(&[1000.0, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
        let q = softmax(&[0.3, -2.0, 5.0]);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(q.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn single_correct_sample() {
        let r = evaluate_scores(&[scored(1, vec![0.2, 0.8])], 2, &FusionWeights::default(), ChannelMask::ALL).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.per_class_accuracy, vec![None, Some(1.0)]);
    }

    #[test]
    fn confusion_rows_count_samples() {
        let s = vec![
            scored(0, vec![0.9, 0.1, 0.0]),
            scored(0, vec![0.1, 0.9, 0.0]),
            scored(2, vec![0.1, 0.1, 0.8]),
        ];
        let r = evaluate_scores(&s, 3, &FusionWeights::default(), ChannelMask::PC).unwrap();
        let rows: Vec<usize> = r.confusion_matrix.iter().map(|row| row.iter().sum()).collect();
        assert_eq!(rows, vec![2, 0, 1]);
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert!(evaluate_scores(&[], 3, &FusionWeights::default(), ChannelMask::PC).is_err());
    }
}
