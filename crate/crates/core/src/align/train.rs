use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{cross_entropy, loss_final_graph, loss_pc_text, loss_pc_video, lr_at, EmbeddingStore, LossWeights, TrainSchedule};
use crate::data::{prepare_video, FrameSampling, PointCloudVideo, SampleMode};
use crate::error::{Error, Result};
use crate::geom::Point;
use crate::model::{ImPstNet, PROJ_HEAD_PREFIX, RGB_HEAD_PREFIX};
use crate::tensor::{Graph, ParamGrads, Scalar, Sgd};

pub const METRICS_FILE: &str = "metrics.csv";
pub const MODEL_CHECKPOINT: &str = "model.vg4dckpt";
pub const MODEL_CONFIG: &str = "model.json";
const METRICS_HEADER: &str = "epoch,lr,loss_total,loss_pc_video,loss_pc_text,loss_pc_ce,loss_rgb_ce,train_acc";

/// What a batch is trained against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    /// Cross-entropy on the classification head only.
    Classification,
    /// Weighted sum of the pc-video, pc-text, point cloud CE and RGB CE terms.
    CrossModal { weights: LossWeights, logit_scale: f64 },
}

/// One training example after frame selection and point budgeting.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub frames: Vec<Vec<Point>>,
    pub label: usize,
    pub sample_id: String,
}

/// Batch-mean loss terms. Terms that the objective does not use are zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchLosses {
    pub total: f64,
    pub pc_video: f64,
    pub pc_text: f64,
    pub pc_ce: f64,
    pub rgb_ce: f64,
}

#[derive(Debug, Clone)]
pub struct BatchResult<T> {
    pub losses: BatchLosses,
    pub grads: ParamGrads<T>,
    pub correct: usize,
}

fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Loss and parameter gradients of one batch.
///
/// Every sample's encoder graph is built and differentiated independently
/// (in parallel); the batch-level objective runs on a small graph whose
/// leaves are the stacked logits and embeddings. Gradients are summed in
/// sample order, so the result does not depend on the thread count.
pub fn batch_loss_and_grads<T: Scalar>(
    net: &ImPstNet<T>,
    batch: &[PreparedSample],
    objective: &Objective,
    embeddings: Option<&EmbeddingStore>,
) -> Result<BatchResult<T>> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let k = net.config.num_classes;
    if let Some(s) = batch.iter().find(|s| s.label >= k) {
        return Err(Error::Data(format!("sample {} has label {} >= {k}", s.sample_id, s.label)));
    }
    let forwards = batch
        .par_iter()
        .map(|s| {
            let plan = net.plan(&s.frames)?;
            let mut g = Graph::new();
            let vars = net.params.bind(&mut g)?;
            let out = net.forward_graph(&mut g, &vars, &plan)?;
            Ok((g, vars, out))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = batch.len();
    let c = net.config.embed_dim;
    let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
    let logits_v: Vec<T> = forwards.iter().flat_map(|(g, _, o)| g.value(o.logits).to_vec()).collect();
    let emb_v: Vec<T> = forwards.iter().flat_map(|(g, _, o)| g.value(o.embedding).to_vec()).collect();
    let correct = logits_v.chunks(k).zip(&labels).filter(|(l, &y)| argmax(l) == y).count();

    let mut bg = Graph::new();
    let logits = bg.variable(&[n, k], logits_v)?;
    let emb = bg.variable(&[n, c], emb_v)?;
    let pc_ce = cross_entropy(&mut bg, logits, &labels)?;
    let mut losses = BatchLosses::default();
    let mut head_grads = None;
    let total = match objective {
        Objective::Classification => pc_ce,
        Objective::CrossModal { weights, logit_scale } => {
            let store = embeddings.ok_or_else(|| Error::Argument("cross-modal objective needs embeddings".into()))?;
            if store.dim() != c || net.config.video_dim != c {
                return Err(Error::Dimension(format!(
                    "embedding dim {} does not match model embed_dim {c} / video_dim {}",
                    store.dim(),
                    net.config.video_dim
                )));
            }
            if store.num_classes() != k {
                return Err(Error::Dimension(format!(
                    "{} text embeddings for {k} classes",
                    store.num_classes()
                )));
            }
            let mut video = Vec::with_capacity(n * c);
            for s in batch {
                let v = store
                    .video_embedding(&s.sample_id)
                    .ok_or_else(|| Error::Data(format!("no video embedding for sample {}", s.sample_id)))?;
                video.extend(v.iter().map(|&x| T::from_f64(x as f64)));
            }
            let text_v = store.text.matrix().iter().map(|&x| T::from_f64(x as f64)).collect();
            let text = bg.constant(&[k, c], text_v)?;
            let video = bg.constant(&[n, c], video)?;
            let vars = net.params.bind(&mut bg)?;
            let pv = loss_pc_video(&mut bg, emb, video, *logit_scale)?;
            let pt = loss_pc_text(&mut bg, emb, &labels, text, *logit_scale)?;
            let rgb_logits = net.rgb_logits_graph(&mut bg, &vars, video)?;
            let rgb_ce = cross_entropy(&mut bg, rgb_logits, &labels)?;
            losses.pc_video = bg.scalar(pv).as_f64();
            losses.pc_text = bg.scalar(pt).as_f64();
            losses.rgb_ce = bg.scalar(rgb_ce).as_f64();
            head_grads = Some(vars);
            loss_final_graph(&mut bg, weights, pv, pt, pc_ce, rgb_ce)?
        }
    };
    losses.pc_ce = bg.scalar(pc_ce).as_f64();
    losses.total = bg.scalar(total).as_f64();
    if !losses.total.is_finite() {
        return Err(Error::Numerical(format!("non-finite batch loss {}", losses.total)));
    }
    let bgrads = bg.backward(total)?;
    let d_logits = bgrads.get_or_zeros(&bg, logits);
    let d_emb = bgrads.get_or_zeros(&bg, emb);
    let cross_modal = head_grads.is_some();

    let per_sample = forwards
        .par_iter()
        .enumerate()
        .map(|(i, (g, vars, out))| {
            let mut seeds = vec![(out.logits, d_logits[i * k..(i + 1) * k].to_vec())];
            if cross_modal {
                seeds.push((out.embedding, d_emb[i * c..(i + 1) * c].to_vec()));
            }
            let gr = g.backward_seeded(&seeds)?;
            let mut pg = ParamGrads::for_store(&net.params);
            for (id, &v) in vars.iter().enumerate() {
                pg.accumulate(id, &gr.get_or_zeros(g, v));
            }
            Ok(pg)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grads = ParamGrads::for_store(&net.params);
    for pg in &per_sample {
        grads.merge(pg);
    }
    if let Some(vars) = head_grads {
        for (id, &v) in vars.iter().enumerate() {
            if let Some(gv) = bgrads.get(v) {
                grads.accumulate(id, gv);
            }
        }
    }
    if !grads.all_finite() {
        return Err(Error::Numerical("non-finite gradient".into()));
    }
    Ok(BatchResult { losses, grads, correct })
}

/// Settings shared by pretraining and fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    pub schedule: TrainSchedule,
    pub sampling: FrameSampling,
    pub points_per_frame: usize,
    pub seed: u64,
    /// Save a checkpoint every this many epochs; 0 disables periodic saves.
    #[serde(default)]
    pub checkpoint_interval: usize,
    /// Where metrics and checkpoints go; nothing is written when unset.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_pc_video: f64,
    pub loss_pc_text: f64,
    pub loss_pc_ce: f64,
    pub loss_rgb_ce: f64,
    pub train_acc: f64,
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.epoch, r.lr, r.loss_total, r.loss_pc_video, r.loss_pc_text, r.loss_pc_ce, r.loss_rgb_ce, r.train_acc
        )
        .expect("writing to a String");
    }
    s
}

fn save_outputs(net: &ImPstNet<f32>, dir: &Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    net.save(&dir.join(format!("{stem}.vg4dckpt")), &dir.join(format!("{stem}.json")))
}

/// Runs `objective` over `videos` for the whole schedule, updating `net` in
/// place. Only parameters marked trainable are updated.
pub fn train(
    net: &mut ImPstNet<f32>,
    videos: &[PointCloudVideo],
    objective: &Objective,
    embeddings: Option<&EmbeddingStore>,
    opts: &TrainOptions,
) -> Result<Vec<EpochMetrics>> {
    opts.schedule.validate()?;
    if videos.is_empty() {
        return Err(Error::Data("no training samples".into()));
    }
    if let Objective::CrossModal { weights, logit_scale } = objective {
        weights.validate()?;
        if !(*logit_scale > 0.0 && logit_scale.is_finite()) {
            return Err(Error::Config(format!("logit_scale must be positive, got {logit_scale}")));
        }
        let store = embeddings.ok_or_else(|| Error::Argument("cross-modal objective needs embeddings".into()))?;
        store.ensure_covers(videos.iter().map(|v| v.sample_id.as_str()))?;
    }
    let sched = &opts.schedule;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut sgd = Sgd::new(sched.weight_decay, sched.momentum);
    let mut order: Vec<usize> = (0..videos.len()).collect();
    let mut rows = Vec::with_capacity(sched.epochs);
    for epoch in 0..sched.epochs {
        let lr = lr_at(sched, epoch)?;
        order.shuffle(&mut rng);
        let mut acc = BatchLosses::default();
        let mut correct = 0;
        for chunk in order.chunks(sched.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| {
                    let v = &videos[i];
                    Ok(PreparedSample {
                        frames: prepare_video(v, &opts.sampling, SampleMode::Train, opts.points_per_frame, &mut rng)?,
                        label: v.label,
                        sample_id: v.sample_id.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let res = batch_loss_and_grads(net, &batch, objective, embeddings)?;
            sgd.step(&mut net.params, &res.grads, lr)?;
            let w = batch.len() as f64;
            acc.total += w * res.losses.total;
            acc.pc_video += w * res.losses.pc_video;
            acc.pc_text += w * res.losses.pc_text;
            acc.pc_ce += w * res.losses.pc_ce;
            acc.rgb_ce += w * res.losses.rgb_ce;
            correct += res.correct;
        }
        let n = videos.len() as f64;
        let row = EpochMetrics {
            epoch,
            lr,
            loss_total: acc.total / n,
            loss_pc_video: acc.pc_video / n,
            loss_pc_text: acc.pc_text / n,
            loss_pc_ce: acc.pc_ce / n,
            loss_rgb_ce: acc.rgb_ce / n,
            train_acc: correct as f64 / n,
        };
        log::info!(
            "epoch {epoch} lr {lr:.6} loss {:.4} acc {:.3}",
            row.loss_total,
            row.train_acc
        );
        rows.push(row);
        if let Some(dir) = &opts.output_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            crate::io::write_file(&dir.join(METRICS_FILE), metrics_csv(&rows).as_bytes())?;
            if opts.checkpoint_interval > 0 && (epoch + 1) % opts.checkpoint_interval == 0 {
                save_outputs(net, dir, &format!("epoch_{:04}", epoch + 1))?;
            }
        }
    }
    if let Some(dir) = &opts.output_dir {
        save_outputs(net, dir, "model")?;
    }
    Ok(rows)
}

/// Supervised pretraining: the classification head and encoder learn while
/// the projection and RGB heads stay frozen.
pub fn pretrain(net: &mut ImPstNet<f32>, videos: &[PointCloudVideo], opts: &TrainOptions) -> Result<Vec<EpochMetrics>> {
    net.params
        .set_trainable(|name| !name.starts_with(PROJ_HEAD_PREFIX) && !name.starts_with(RGB_HEAD_PREFIX));
    let out = train(net, videos, &Objective::Classification, None, opts);
    net.params.set_trainable(|_| true);
    out
}

/// Cross-modal fine-tuning of every parameter against frozen text and video
/// embeddings.
pub fn cross_modal_finetune(
    net: &mut ImPstNet<f32>,
    videos: &[PointCloudVideo],
    embeddings: &EmbeddingStore,
    weights: LossWeights,
    logit_scale: f64,
    opts: &TrainOptions,
) -> Result<Vec<EpochMetrics>> {
    net.params.set_trainable(|_| true);
    train(
        net,
        videos,
        &Objective::CrossModal { weights, logit_scale },
        Some(embeddings),
        opts,
    )
}
