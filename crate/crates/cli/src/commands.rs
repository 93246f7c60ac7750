use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use serde_json::json;
use vg4d::align::{cross_modal_finetune, pretrain as run_pretrain, synth_embeddings, EmbeddingStore, TrainOptions};
use vg4d::data::{dataset_checksum, generate_synthetic, load_dataset, save_dataset, PointCloudVideo, Sample, Split, MOTION_BANK};
use vg4d::infer::{
    ablation_csv, ablation_run, evaluate_scores, pc_accuracy, score_split, AblationBase, ChannelMask, FusionWeights,
    TABLE_MASKS,
};
use vg4d::model::ImPstNet;
use vg4d::verify::{gradcheck_all, oracle_check_all, CheckReport};
use vg4d::Error;

use crate::config::{RunConfig, RESOLVED_CONFIG};
use crate::ScheduleArgs;

pub const SUMMARY_FILE: &str = "summary.json";
pub const METRICS_JSON: &str = "metrics.json";
pub const EVAL_FILE: &str = "eval.json";
pub const FUSION_TABLE: &str = "fusion_table.csv";
pub const ABLATION_CSV: &str = "ablation.csv";

/// A verification suite ran to completion but some checks failed.
#[derive(Debug, thiserror::Error)]
#[error("{0} check(s) failed")]
pub struct CheckFailed(pub usize);

fn write(dir: &Path, name: &str, contents: &[u8]) -> anyhow::Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> anyhow::Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write(dir, name, s.as_bytes())
}

/// Creates the run directory and records the resolved configuration.
fn start_run(cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write(&dir, RESOLVED_CONFIG, cfg.to_toml().as_bytes())?;
    Ok(dir)
}

fn dataset(cfg: &RunConfig, data: Option<&Path>) -> anyhow::Result<Vec<Sample>> {
    Ok(match data {
        Some(dir) => load_dataset(dir)?,
        None => generate_synthetic(&cfg.synth)?,
    })
}

fn split(samples: &[Sample], which: Split) -> Vec<PointCloudVideo> {
    samples.iter().filter(|s| s.split == which).map(|s| s.video.clone()).collect()
}

fn class_names(k: usize) -> Vec<String> {
    (0..k)
        .map(|i| MOTION_BANK.get(i).map_or_else(|| format!("class_{i}"), |m| m.name().to_string()))
        .collect()
}

fn synth_store(cfg: &RunConfig, samples: &[Sample]) -> anyhow::Result<EmbeddingStore> {
    let pairs: Vec<(String, usize)> = samples.iter().map(|s| (s.video.sample_id.clone(), s.video.label)).collect();
    Ok(synth_embeddings(&cfg.embed, &class_names(cfg.model.num_classes), &pairs, cfg.seed)?)
}

fn store(cfg: &RunConfig, samples: &[Sample], dir: Option<&Path>) -> anyhow::Result<EmbeddingStore> {
    match dir {
        Some(d) => Ok(EmbeddingStore::load(d)?),
        None => synth_store(cfg, samples),
    }
}

fn load_model(dir: &Path) -> anyhow::Result<ImPstNet<f32>> {
    use vg4d::align::{MODEL_CHECKPOINT, MODEL_CONFIG};
    ImPstNet::load(&dir.join(MODEL_CHECKPOINT), &dir.join(MODEL_CONFIG))
        .with_context(|| format!("loading model from {}", dir.display()))
}

/// Refuses to write a run into the directory an input is read from.
fn ensure_distinct(output: &Path, input: &Path) -> anyhow::Result<()> {
    let same = match (output.canonicalize(), input.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if same {
        return Err(Error::Config(format!("output_dir {} is also an input; choose another", output.display())).into());
    }
    Ok(())
}

fn apply_schedule(s: &mut vg4d::align::TrainSchedule, args: &ScheduleArgs) -> anyhow::Result<()> {
    if let Some(e) = args.epochs {
        s.epochs = e;
    }
    if let Some(lr) = args.lr {
        s.lr_init = lr;
    }
    if let Some(b) = args.batch_size {
        s.batch_size = b;
    }
    s.validate()?;
    Ok(())
}

pub fn synth_data(
    mut cfg: RunConfig,
    samples_per_class: Option<usize>,
    frames: Option<usize>,
    points: Option<usize>,
    noise: Option<f64>,
) -> anyhow::Result<()> {
    let s = &mut cfg.synth;
    s.samples_per_class = samples_per_class.unwrap_or(s.samples_per_class);
    s.frames_per_video = frames.unwrap_or(s.frames_per_video);
    s.points_per_frame = points.unwrap_or(s.points_per_frame);
    s.noise_sigma = noise.unwrap_or(s.noise_sigma);
    cfg.validate()?;
    let dir = start_run(&cfg)?;
    let samples = generate_synthetic(&cfg.synth)?;
    save_dataset(&dir, &samples)?;
    let checksum = dataset_checksum(&dir)?;
    log::info!("wrote {} samples to {} (sha256 {checksum})", samples.len(), dir.display());
    write_json(
        &dir,
        SUMMARY_FILE,
        &json!({
            "command": "synth-data",
            "num_samples": samples.len(),
            "num_train": samples.iter().filter(|s| s.split == Split::Train).count(),
            "num_test": samples.iter().filter(|s| s.split == Split::Test).count(),
            "checksum": checksum,
        }),
    )
}

pub fn synth_embed(mut cfg: RunConfig, data: Option<PathBuf>, sigma_emb: Option<f64>) -> anyhow::Result<()> {
    if let Some(s) = sigma_emb {
        cfg.embed.sigma_emb = s;
    }
    cfg.validate()?;
    if let Some(d) = &data {
        ensure_distinct(&cfg.output_dir, d)?;
    }
    let samples = dataset(&cfg, data.as_deref())?;
    let dir = start_run(&cfg)?;
    let store = synth_store(&cfg, &samples)?;
    store.save(&dir)?;
    write_json(
        &dir,
        SUMMARY_FILE,
        &json!({
            "command": "synth-embed",
            "num_classes": store.num_classes(),
            "num_videos": store.video.len(),
            "dim": store.dim(),
            "sigma_emb": cfg.embed.sigma_emb,
        }),
    )
}

pub fn pretrain(mut cfg: RunConfig, data: Option<PathBuf>, sched: &ScheduleArgs) -> anyhow::Result<()> {
    apply_schedule(&mut cfg.pretrain, sched)?;
    cfg.validate()?;
    let samples = dataset(&cfg, data.as_deref())?;
    let dir = start_run(&cfg)?;
    let (train, test) = (split(&samples, Split::Train), split(&samples, Split::Test));
    let mut net = ImPstNet::<f32>::new(cfg.model.clone(), cfg.seed)?;
    let opts = TrainOptions {
        schedule: cfg.pretrain.clone(),
        sampling: cfg.input.sampling.clone(),
        points_per_frame: cfg.input.points_per_frame,
        seed: cfg.seed,
        checkpoint_interval: cfg.checkpoint_interval,
        output_dir: Some(dir.clone()),
    };
    let t0 = Instant::now();
    let rows = run_pretrain(&mut net, &train, &opts)?;
    log::info!("pretraining took {:.1}s", t0.elapsed().as_secs_f64());
    write_json(&dir, METRICS_JSON, &rows)?;
    let test_accuracy = if test.is_empty() {
        None
    } else {
        Some(pc_accuracy(&net, &test, &cfg.input.sampling, cfg.input.points_per_frame, cfg.seed)?)
    };
    let last = rows.last().expect("at least one epoch");
    if let Some(a) = test_accuracy {
        log::info!("test top-1 (point cloud head) {a:.4}");
    }
    write_json(
        &dir,
        SUMMARY_FILE,
        &json!({
            "command": "pretrain",
            "epochs": rows.len(),
            "final_loss": last.loss_total,
            "final_train_accuracy": last.train_acc,
            "test_accuracy": test_accuracy,
            "num_train": train.len(),
            "num_test": test.len(),
        }),
    )
}

pub fn finetune(
    mut cfg: RunConfig,
    data: Option<PathBuf>,
    embeddings: Option<PathBuf>,
    model: &Path,
    sched: &ScheduleArgs,
) -> anyhow::Result<()> {
    apply_schedule(&mut cfg.finetune, sched)?;
    let mut net = load_model(model)?;
    cfg.model = net.config.clone();
    cfg.validate()?;
    for input in [Some(model.to_path_buf()), data.clone(), embeddings.clone()].into_iter().flatten() {
        ensure_distinct(&cfg.output_dir, &input)?;
    }
    let samples = dataset(&cfg, data.as_deref())?;
    let store = store(&cfg, &samples, embeddings.as_deref())?;
    let dir = start_run(&cfg)?;
    let train = split(&samples, Split::Train);
    let opts = TrainOptions {
        schedule: cfg.finetune.clone(),
        sampling: cfg.input.sampling.clone(),
        points_per_frame: cfg.input.points_per_frame,
        seed: cfg.seed,
        checkpoint_interval: cfg.checkpoint_interval,
        output_dir: Some(dir.clone()),
    };
    let t0 = Instant::now();
    let rows = cross_modal_finetune(
        &mut net,
        &train,
        &store,
        cfg.alignment.weights,
        cfg.alignment.logit_scale,
        &opts,
    )?;
    log::info!("fine-tuning took {:.1}s", t0.elapsed().as_secs_f64());
    write_json(&dir, METRICS_JSON, &rows)?;
    let last = rows.last().expect("at least one epoch");
    write_json(
        &dir,
        SUMMARY_FILE,
        &json!({
            "command": "finetune",
            "epochs": rows.len(),
            "final_loss": last.loss_total,
            "final_loss_pc_text": last.loss_pc_text,
            "final_loss_pc_video": last.loss_pc_video,
            "final_train_accuracy": last.train_acc,
            "num_train": train.len(),
        }),
    )
}

#[allow(clippy::too_many_arguments)]
pub fn eval(
    mut cfg: RunConfig,
    data: Option<PathBuf>,
    embeddings: Option<PathBuf>,
    model: &Path,
    weights: Option<FusionWeights>,
    mask: ChannelMask,
    which: Split,
    require_video: bool,
) -> anyhow::Result<()> {
    if let Some(w) = weights {
        cfg.fusion = w;
    }
    let net = load_model(model)?;
    cfg.model = net.config.clone();
    cfg.validate()?;
    let samples = dataset(&cfg, data.as_deref())?;
    let store = store(&cfg, &samples, embeddings.as_deref())?;
    let dir = start_run(&cfg)?;
    let videos = split(&samples, which);
    let scored = score_split(
        &net,
        &videos,
        &store,
        &cfg.input.sampling,
        cfg.input.points_per_frame,
        cfg.seed,
        !require_video,
    )?;
    let k = net.config.num_classes;
    let report = evaluate_scores(&scored, k, &cfg.fusion, mask)?;
    log::info!("top-1 {:.4} over {} samples ({mask})", report.accuracy, report.num_samples);
    write_json(&dir, EVAL_FILE, &report)?;
    let mut table = String::from("channels,accuracy\n");
    for m in TABLE_MASKS {
        // masks whose channels all carry zero weight get an empty cell
        let weighted = cfg.fusion.as_array().iter().zip(m.as_array()).any(|(&w, on)| on && w > 0.0);
        if weighted {
            let r = evaluate_scores(&scored, k, &cfg.fusion, m)?;
            table.push_str(&format!("{m},{}\n", r.accuracy));
        } else {
            table.push_str(&format!("{m},\n"));
        }
    }
    write(&dir, FUSION_TABLE, table.as_bytes())?;
    write_json(
        &dir,
        SUMMARY_FILE,
        &json!({
            "command": "eval",
            "split": which,
            "accuracy": report.accuracy,
            "num_samples": report.num_samples,
            "channel_mask": mask.to_string(),
            "fusion_weights": cfg.fusion,
        }),
    )
}

pub fn ablate(
    mut cfg: RunConfig,
    data: Option<PathBuf>,
    toggles: Option<Vec<String>>,
    sched: &ScheduleArgs,
) -> anyhow::Result<()> {
    apply_schedule(&mut cfg.pretrain, sched)?;
    if let Some(t) = toggles {
        cfg.ablation.toggles = t.into_iter().filter(|s| !s.is_empty()).collect();
    }
    cfg.validate()?;
    let samples = dataset(&cfg, data.as_deref())?;
    let dir = start_run(&cfg)?;
    let base = AblationBase {
        model: cfg.model.clone(),
        schedule: cfg.pretrain.clone(),
        clip_len: cfg.input.sampling.output_len(),
        points_per_frame: cfg.input.points_per_frame,
        seed: cfg.seed,
    };
    let rows = ablation_run(&base, &cfg.ablation.toggles, &split(&samples, Split::Train), &split(&samples, Split::Test))?;
    write(&dir, ABLATION_CSV, ablation_csv(&rows).as_bytes())?;
    write_json(&dir, SUMMARY_FILE, &json!({ "command": "ablate", "rows": rows }))
}

fn finish_checks(cfg: &RunConfig, name: &str, reports: &[CheckReport]) -> anyhow::Result<()> {
    let dir = start_run(cfg)?;
    for r in reports {
        log::info!(
            "{} {}: {} cases, {} failed, max error {:.3e} (tol {:.0e}), {:.1}s",
            if r.passed() { "PASS" } else { "FAIL" },
            r.name,
            r.cases,
            r.failures,
            r.max_error,
            r.tolerance,
            r.seconds
        );
    }
    // timings vary run to run and stay out of the written summary
    let stable: Vec<_> = reports
        .iter()
        .map(|r| json!({ "name": r.name, "cases": r.cases, "failures": r.failures, "max_error": r.max_error, "tolerance": r.tolerance, "passed": r.passed() }))
        .collect();
    let failed = reports.iter().filter(|r| !r.passed()).count();
    write_json(&dir, SUMMARY_FILE, &json!({ "command": name, "passed": failed == 0, "suites": stable }))?;
    if failed > 0 {
        return Err(CheckFailed(failed).into());
    }
    Ok(())
}

pub fn gradcheck(cfg: RunConfig, seeds: usize) -> anyhow::Result<()> {
    cfg.validate()?;
    let reports = gradcheck_all(seeds)?;
    finish_checks(&cfg, "gradcheck", &reports)
}

pub fn oracle_check(cfg: RunConfig, instances: usize) -> anyhow::Result<()> {
    cfg.validate()?;
    let reports = oracle_check_all(instances)?;
    finish_checks(&cfg, "oracle-check", &reports)
}
