use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::align::{pretrain, Decay, TrainOptions, TrainSchedule};
use crate::data::{prepare_video, FrameSampling, PointCloudVideo, SampleMode};
use crate::error::{Error, Result};
use crate::model::{ImPstNet, ImPstNetConfig};

/// Training strategies the harness can switch on one after another.
pub const ABLATION_TOGGLES: [&str; 4] = [
    "random_frame_sampling",
    "cosine_decay",
    "normalize_offsets",
    "include_center_feature",
];

/// Fixed part of every ablation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationBase {
    pub model: ImPstNetConfig,
    pub schedule: TrainSchedule,
    /// Frames fed to the encoder per video.
    pub clip_len: usize,
    pub points_per_frame: usize,
    pub seed: u64,
}

/// One configuration of the additive study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// `baseline` or the toggle switched on at this row.
    pub added: String,
    pub random_frame_sampling: bool,
    pub cosine_decay: bool,
    pub normalize_offsets: bool,
    pub include_center_feature: bool,
    pub config_hash: String,
    pub accuracy: f64,
    /// Accuracy change against the previous row (0 for the baseline).
    pub delta: f64,
}

#[derive(Serialize)]
struct ResolvedRun<'a> {
    model: &'a ImPstNetConfig,
    schedule: &'a TrainSchedule,
    sampling: &'a FrameSampling,
    points_per_frame: usize,
    seed: u64,
}

fn config_hash(run: &ResolvedRun<'_>) -> String {
    let json = serde_json::to_vec(run).expect("run config serializes");
    hex::encode(&Sha256::digest(&json)[..6])
}

/// Top-1 accuracy of the classification head alone, with test-mode frame
/// selection and one seeded generator per sample.
pub fn pc_accuracy(
    net: &ImPstNet<f32>,
    videos: &[PointCloudVideo],
    sampling: &FrameSampling,
    points_per_frame: usize,
    seed: u64,
) -> Result<f64> {
    let hits = videos
        .par_iter()
        .enumerate()
        .map(|(i, v)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let frames = prepare_video(v, sampling, SampleMode::Test, points_per_frame, &mut rng)?;
            let logits = net.forward(&frames)?.logits;
            let mut best = 0;
            for (k, &z) in logits.iter().enumerate() {
                if z > logits[best] {
                    best = k;
                }
            }
            Ok(usize::from(best == v.label))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / videos.len() as f64)
}

/// Trains and evaluates the baseline (every listed toggle off) and then one
/// row per toggle, each adding that toggle to the previous row.
///
/// Frame sampling is a clip of `clip_len` consecutive frames at a random
/// start when `random_frame_sampling` is off, and one random frame from each
/// of `clip_len` segments when it is on. `cosine_decay` off means step decay.
pub fn ablation_run(
    base: &AblationBase,
    toggles: &[String],
    train: &[PointCloudVideo],
    test: &[PointCloudVideo],
) -> Result<Vec<AblationRow>> {
    for (i, t) in toggles.iter().enumerate() {
        if !ABLATION_TOGGLES.contains(&t.as_str()) {
            return Err(Error::Config(format!("unknown ablation toggle {t:?}; expected one of {ABLATION_TOGGLES:?}")));
        }
        if toggles[..i].contains(t) {
            return Err(Error::Config(format!("ablation toggle {t:?} listed twice")));
        }
    }
    if test.is_empty() {
        return Err(Error::Data("ablation test split is empty".into()));
    }
    let listed = |name: &str| toggles.iter().any(|t| t == name);
    let mut state = [
        !listed("random_frame_sampling"),
        base.schedule.decay == Decay::Cosine && !listed("cosine_decay"),
        base.model.normalize_offsets && !listed("normalize_offsets"),
        base.model.include_center_feature && !listed("include_center_feature"),
    ];
    let mut rows: Vec<AblationRow> = Vec::with_capacity(toggles.len() + 1);
    for step in 0..=toggles.len() {
        let added = if step == 0 {
            "baseline".to_string()
        } else {
            let name = &toggles[step - 1];
            let idx = ABLATION_TOGGLES.iter().position(|t| t == name).expect("validated");
            state[idx] = true;
            name.clone()
        };
        let sampling = if state[0] {
            FrameSampling::Segment { segments: base.clip_len }
        } else {
            FrameSampling::Strided {
                clip_len: base.clip_len,
                stride: 1,
            }
        };
        let schedule = TrainSchedule {
            decay: if state[1] { Decay::Cosine } else { Decay::Step },
            ..base.schedule.clone()
        };
        let model = ImPstNetConfig {
            normalize_offsets: state[2],
            include_center_feature: state[3],
            ..base.model.clone()
        };
        let hash = config_hash(&ResolvedRun {
            model: &model,
            schedule: &schedule,
            sampling: &sampling,
            points_per_frame: base.points_per_frame,
            seed: base.seed,
        });
        log::info!("ablation row {step} ({added}) config {hash}");
        let mut net = ImPstNet::<f32>::new(model, base.seed)?;
        let opts = TrainOptions {
            schedule,
            sampling: sampling.clone(),
            points_per_frame: base.points_per_frame,
            seed: base.seed,
            checkpoint_interval: 0,
            output_dir: None,
        };
        pretrain(&mut net, train, &opts)?;
        let accuracy = pc_accuracy(&net, test, &sampling, base.points_per_frame, base.seed)?;
        let delta = rows.last().map_or(0.0, |r| accuracy - r.accuracy);
        rows.push(AblationRow {
            added,
            random_frame_sampling: state[0],
            cosine_decay: state[1],
            normalize_offsets: state[2],
            include_center_feature: state[3],
            config_hash: hash,
            accuracy,
            delta,
        });
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from(
        "row,added,random_frame_sampling,cosine_decay,normalize_offsets,include_center_feature,config_hash,accuracy,delta\n",
    );
    for (i, r) in rows.iter().enumerate() {
        writeln!(
            s,
            "{i},{},{},{},{},{},{},{},{}",
            r.added,
            r.random_frame_sampling,
            r.cosine_decay,
            r.normalize_offsets,
            r.include_center_feature,
            r.config_hash,
            r.accuracy,
            r.delta
        )
        .expect("writing to a String");
    }
    s
}
