use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vg4d::align::*;
use vg4d::data::*;
use vg4d::infer::*;
use vg4d::model::*;

fn tiny_config(k: usize, dim: usize) -> ImPstNetConfig {
    ImPstNetConfig {
        stages: vec![
            StageConfig { subsample_rate: 2, radius: 0.3, k_nbr: 4, mlp_widths: vec![8] },
            StageConfig { subsample_rate: 2, radius: 0.2, k_nbr: 2, mlp_widths: vec![8] },
        ],
        temporal_radius: 1,
        num_classes: k,
        embed_dim: dim,
        video_dim: dim,
        normalize_offsets: true,
        include_center_feature: true,
        encode_time_offset: true,
    }
}

fn samples(per_class: usize) -> Vec<Sample> {
    generate_synthetic(&SynthSpec {
        samples_per_class: per_class,
        frames_per_video: 4,
        points_per_frame: 16,
        ..Default::default()
    })
    .unwrap()
}

fn store_for(videos: &[PointCloudVideo], k: usize, dim: usize) -> EmbeddingStore {
    let names: Vec<String> = (0..k).map(|i| format!("c{i}")).collect();
    let pairs: Vec<(String, usize)> = videos.iter().map(|v| (v.sample_id.clone(), v.label)).collect();
    synth_embeddings(&EmbedSpec { dim, sigma_emb: 0.1 }, &names, &pairs, 1).unwrap()
}

const SAMPLING: FrameSampling = FrameSampling::Segment { segments: 4 };

fn softmax_oracle(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::MIN, f64::max);
    let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
    z.iter().map(|v| (v - m).exp() / s).collect()
}

#[test]
fn identical_class_texts_give_uniform_text_scores() {
    let videos: Vec<_> = samples(1).into_iter().map(|s| s.video).take(2).collect();
    let row = vec![0.6f32, 0.8, 0.0, 0.0];
    let text = EmbeddingTable::new(vec!["a".into(), "b".into()], 4, [row.clone(), row].concat()).unwrap();
    let vids = EmbeddingTable::new(vec![videos[0].sample_id.clone()], 4, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
    let store = EmbeddingStore::new(text, vids).unwrap();
    let net = ImPstNet::<f32>::new(tiny_config(2, 4), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let frames = prepare_video(&videos[0], &SAMPLING, SampleMode::Test, 16, &mut rng).unwrap();
    let b = score_sample(&net, &frames, &videos[0].sample_id, &store, false).unwrap();
    assert_eq!(b.pc_text, vec![0.5, 0.5]);
    assert_eq!(b.rgb_text, Some(vec![0.5, 0.5]));
    for v in [&b.pc, &b.pc_text, b.rgb.as_ref().unwrap(), b.rgb_text.as_ref().unwrap()] {
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(v.iter().all(|&p| p >= 0.0));
    }
    // second sample has no video embedding
    assert!(score_sample(&net, &frames, &videos[1].sample_id, &store, false).is_err());
    let skipped = score_sample(&net, &frames, &videos[1].sample_id, &store, true).unwrap();
    assert!(skipped.rgb.is_none() && skipped.rgb_text.is_none());
}

#[test]
fn pc_channel_is_softmax_of_forward_logits() {
    let videos: Vec<_> = samples(1).into_iter().map(|s| s.video).collect();
    let sample = &videos[..1];
    let store = store_for(&videos, 8, 8);
    let mut net = ImPstNet::<f32>::new(tiny_config(8, 8), 3).unwrap();
    let opts = TrainOptions {
        schedule: TrainSchedule { epochs: 2, ..TrainSchedule::desk_pretrain() },
        sampling: SAMPLING,
        points_per_frame: 16,
        seed: 0,
        checkpoint_interval: 0,
        output_dir: None,
    };
    pretrain(&mut net, sample, &opts).unwrap();
    let scored = score_split(&net, sample, &store, &SAMPLING, 16, 5, false).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let frames = prepare_video(&sample[0], &SAMPLING, SampleMode::Test, 16, &mut rng).unwrap();
    let logits: Vec<f64> = net.forward(&frames).unwrap().logits.iter().map(|&v| v as f64).collect();
    let want = softmax_oracle(&logits);
    for (a, b) in scored[0].bundle.pc.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn pc_only_accuracy_matches_recount() {
    let all = samples(2);
    let videos: Vec<_> = all.iter().map(|s| s.video.clone()).collect();
    let store = store_for(&videos, 8, 8);
    let net = ImPstNet::<f32>::new(tiny_config(8, 8), 4).unwrap();
    let report = evaluate(&net, &videos, &store, &FusionWeights::default(), ChannelMask::PC, &SAMPLING, 16, 9).unwrap();
    let mut hits = 0;
    for (i, v) in videos.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(9 + i as u64);
        let frames = prepare_video(v, &SAMPLING, SampleMode::Test, 16, &mut rng).unwrap();
        let z = net.forward(&frames).unwrap().logits;
        let best = (0..z.len()).fold(0, |b, k| if z[k] > z[b] { k } else { b });
        hits += usize::from(best == v.label);
    }
    assert_eq!(report.accuracy, hits as f64 / videos.len() as f64);
    assert_eq!(report.confusion_matrix.iter().map(|r| r.iter().sum::<usize>()).sum::<usize>(), videos.len());
    for row in &report.confusion_matrix {
        assert_eq!(row.iter().sum::<usize>(), 2);
    }
    assert_eq!(
        pc_accuracy(&net, &videos, &SAMPLING, 16, 9).unwrap(),
        report.accuracy
    );
    let again = evaluate(&net, &videos, &store, &FusionWeights::default(), ChannelMask::PC, &SAMPLING, 16, 9).unwrap();
    assert_eq!(report, again);
}

#[test]
fn fusion_is_invariant_to_weight_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let k = rng.random_range(2..10);
        let mut chan = || softmax_oracle(&(0..k).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<_>>());
        let b = ScoreBundle { pc: chan(), pc_text: chan(), rgb: Some(chan()), rgb_text: Some(chan()) };
        let w = FusionWeights::new(
            rng.random_range(0.0..2.0),
            rng.random_range(0.0..2.0),
            rng.random_range(0.0..2.0),
            rng.random_range(0.1..2.0),
        );
        let c = rng.random_range(0.01..100.0);
        let scaled = FusionWeights::new(w.w_pc * c, w.w_pc_text * c, w.w_rgb * c, w.w_rgb_text * c);
        let (v1, p1) = fuse(&b, &w, ChannelMask::ALL).unwrap();
        let (v2, p2) = fuse(&b, &scaled, ChannelMask::ALL).unwrap();
        assert_eq!(p1, p2);
        for (x, y) in v1.iter().zip(&v2) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((v1.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

fn ablation_base() -> AblationBase {
    AblationBase {
        model: tiny_config(8, 8),
        schedule: TrainSchedule { epochs: 1, ..TrainSchedule::desk_pretrain() },
        clip_len: 4,
        points_per_frame: 16,
        seed: 0,
    }
}

#[test]
fn ablation_rows_add_one_toggle_each() {
    let all = samples(2);
    let train: Vec<_> = all.iter().filter(|s| s.split == Split::Train).map(|s| s.video.clone()).collect();
    let test: Vec<_> = all.iter().filter(|s| s.split == Split::Test).map(|s| s.video.clone()).collect();
    let test = if test.is_empty() { train.clone() } else { test };
    let toggles: Vec<String> = ABLATION_TOGGLES.iter().map(|s| s.to_string()).collect();
    let rows = ablation_run(&ablation_base(), &toggles, &train, &test).unwrap();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[0].added, "baseline");
    let flags = |r: &AblationRow| [r.random_frame_sampling, r.cosine_decay, r.normalize_offsets, r.include_center_feature];
    assert_eq!(flags(&rows[0]), [false; 4]);
    for w in rows.windows(2) {
        let diff = flags(&w[0]).iter().zip(flags(&w[1])).filter(|(a, b)| *a != b).count();
        assert_eq!(diff, 1);
        assert_ne!(w[0].config_hash, w[1].config_hash);
        assert!((w[1].delta - (w[1].accuracy - w[0].accuracy)).abs() < 1e-15);
    }
    assert_eq!(flags(&rows[4]), [true; 4]);
    let csv = ablation_csv(&rows);
    assert_eq!(csv.lines().count(), 6);

    let single = ablation_run(&ablation_base(), &[], &train, &test).unwrap();
    assert_eq!(single.len(), 1);
    assert!(ablation_run(&ablation_base(), &["dropout".to_string()], &train, &test).is_err());
}
