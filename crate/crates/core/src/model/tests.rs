use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geom::Point;
use crate::tensor::{Graph, ParamStore, Parameter};
use crate::verify::{tube_conv_oracle, ConvToggles};

fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
    (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0f32..1.0))).collect()
}

/// Points on a 1/64 grid so that shifts by small integers and power-of-two
/// scalings are exact in `f32`.
fn grid_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
    (0..n)
        .map(|_| std::array::from_fn(|_| rng.random_range(-64i32..64) as f32 / 64.0))
        .collect()
}

fn video(seed: u64, frames: usize, n: usize) -> Vec<Vec<Point>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..frames).map(|_| cloud(&mut rng, n)).collect()
}

fn small_config(num_classes: usize) -> ImPstNetConfig {
    ImPstNetConfig {
        stages: vec![
            StageConfig { subsample_rate: 2, radius: 0.5, k_nbr: 4, mlp_widths: vec![6] },
            StageConfig { subsample_rate: 2, radius: 0.9, k_nbr: 4, mlp_widths: vec![8, 8] },
        ],
        temporal_radius: 1,
        num_classes,
        embed_dim: 5,
        video_dim: 5,
        normalize_offsets: true,
        include_center_feature: true,
        encode_time_offset: true,
    }
}

/// Gives every bias a random value so no ReLU unit sits on a kink at zero.
fn randomize_biases(net: &mut ImPstNet<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in net.params.iter_mut().filter(|p| p.name.ends_with(".bias")) {
        p.values.iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
    }
}

fn stage_features(frames: &[Vec<Point>], stage: StageConfig, seed: u64) -> (Vec<Vec<Point>>, Vec<f64>) {
    let cfg = ImPstNetConfig { stages: vec![stage.clone()], ..small_config(2) };
    let net = ImPstNet::<f64>::new(cfg, seed).unwrap();
    let mut g = Graph::new();
    let vars = net.params.bind(&mut g).unwrap();
    let (coords, f) = spatial_extract(&mut g, &vars, net.stage_layers(0), frames, &stage, true).unwrap();
    (coords, g.value(f).to_vec())
}

#[test]
fn unit_subsample_keeps_every_point() {
    let frames = video(1, 2, 10);
    let stage = StageConfig { subsample_rate: 1, radius: 0.5, k_nbr: 3, mlp_widths: vec![4] };
    let (coords, f) = stage_features(&frames, stage, 0);
    assert_eq!(coords[0].len(), 10);
    let mut sorted = coords[1].clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut want = frames[1].clone();
    want.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(sorted, want);
    assert_eq!(f.len(), 2 * 10 * 4);
}

#[test]
fn subsample_rate_sets_centroid_count() {
    let frames = video(2, 1, 64);
    let stage = StageConfig { subsample_rate: 4, radius: 0.3, k_nbr: 5, mlp_widths: vec![3] };
    let (coords, f) = stage_features(&frames, stage, 0);
    assert_eq!(coords[0].len(), 16);
    assert_eq!(f.len(), 16 * 3);
}

#[test]
fn duplicate_neighbors_leave_features_unchanged() {
    // every ball holds all 8 points; k beyond 8 pads with repeats
    let frames = video(3, 1, 8);
    let base = StageConfig { subsample_rate: 2, radius: 10.0, k_nbr: 8, mlp_widths: vec![5] };
    let (_, a) = stage_features(&frames, base.clone(), 7);
    let (_, b) = stage_features(&frames, StageConfig { k_nbr: 13, ..base }, 7);
    assert_eq!(a, b);
}

#[test]
fn identity_fixture_returns_zero_offset_concat() {
    let frames = vec![vec![[0.3f32, -0.2, 0.7]]];
    let plan = StagePlan::build(&frames, vec![vec![0]], 0.5, 1, 0, true, false).unwrap();
    let width = 2 + 2 + 3;
    let mut eye = vec![0.0; width * width];
    (0..width).for_each(|i| eye[i * width + i] = 1.0);
    let mut store = ParamStore::<f64>::new();
    let weight = store.insert(Parameter::new("w", vec![width, width], eye)).unwrap();
    let bias = store.insert(Parameter::new("b", vec![width], vec![0.0; width])).unwrap();
    let mut g = Graph::new();
    let vars = store.bind(&mut g).unwrap();
    let f = g.constant(&[1, 2], vec![0.0, 0.0]).unwrap();
    let y = im_pstconv(&mut g, &vars, &[Linear { weight, bias }], Some(f), &plan, true).unwrap();
    assert_eq!(g.value(y), vec![0.0; width].as_slice());
}

#[test]
fn translation_gives_bit_identical_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let frames: Vec<Vec<Point>> = (0..3).map(|_| grid_cloud(&mut rng, 16)).collect();
    let moved: Vec<Vec<Point>> = frames
        .iter()
        .map(|f| f.iter().map(|p| [p[0] + 5.0, p[1] - 3.0, p[2] + 2.0]).collect())
        .collect();
    let net = ImPstNet::<f32>::new(small_config(4), 1).unwrap();
    assert_eq!(net.forward(&frames).unwrap(), net.forward(&moved).unwrap());
}

#[test]
fn scaling_with_radii_gives_bit_identical_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let frames: Vec<Vec<Point>> = (0..3).map(|_| grid_cloud(&mut rng, 16)).collect();
    let cfg = small_config(4);
    let net = ImPstNet::<f32>::new(cfg.clone(), 2).unwrap();
    for lambda in [0.25f32, 2.0, 8.0] {
        let scaled: Vec<Vec<Point>> = frames
            .iter()
            .map(|f| f.iter().map(|p| p.map(|v| v * lambda)).collect())
            .collect();
        let mut cfg2 = cfg.clone();
        cfg2.stages.iter_mut().for_each(|s| s.radius *= lambda as f64);
        let net2 = ImPstNet::from_params(cfg2, net.params.clone()).unwrap();
        assert_eq!(net.forward(&frames).unwrap(), net2.forward(&scaled).unwrap());
    }
}

#[test]
fn permuting_points_with_pinned_centroids() {
    let cfg = ImPstNetConfig {
        stages: vec![
            StageConfig { subsample_rate: 2, radius: 10.0, k_nbr: 16, mlp_widths: vec![6] },
            StageConfig { subsample_rate: 2, radius: 10.0, k_nbr: 8, mlp_widths: vec![8] },
        ],
        ..small_config(3)
    };
    let frames = video(6, 3, 16);
    let net = ImPstNet::<f32>::new(cfg.clone(), 3).unwrap();
    let plan = VideoPlan::new(&frames, &cfg).unwrap();
    let pinned: Vec<Vec<Vec<usize>>> = plan.stages.iter().map(|s| s.neighborhood.centroid_indices.clone()).collect();
    let base = net.forward_planned(&plan).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let mut perm: Vec<usize> = (0..16).collect();
    for i in (1..16).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    // new position of old point i is inv[i]
    let mut inv = [0; 16];
    perm.iter().enumerate().for_each(|(new, &old)| inv[old] = new);
    let permuted: Vec<Vec<Point>> = frames.iter().map(|f| perm.iter().map(|&i| f[i]).collect()).collect();
    let mut moved = pinned.clone();
    moved[0].iter_mut().for_each(|c| c.iter_mut().for_each(|i| *i = inv[*i]));
    let plan2 = VideoPlan::with_centroids(&permuted, &cfg, moved).unwrap();
    let out = net.forward_planned(&plan2).unwrap();
    for (a, b) in base.logits.iter().zip(&out.logits) {
        assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    }
}

#[test]
fn global_pool_ignores_centroid_order() {
    let cfg = small_config(3);
    let frames = video(7, 3, 16);
    let net = ImPstNet::<f64>::new(cfg.clone(), 4).unwrap();
    let plan = VideoPlan::new(&frames, &cfg).unwrap();
    let mut pinned: Vec<Vec<Vec<usize>>> = plan.stages.iter().map(|s| s.neighborhood.centroid_indices.clone()).collect();
    pinned[1].iter_mut().for_each(|c| c.reverse());
    let plan2 = VideoPlan::with_centroids(&frames, &cfg, pinned).unwrap();
    assert_eq!(net.forward_planned(&plan).unwrap(), net.forward_planned(&plan2).unwrap());
}

#[test]
fn embedding_has_unit_norm() {
    let net = ImPstNet::<f32>::new(small_config(5), 5).unwrap();
    for seed in 0..10 {
        let e = net.forward(&video(100 + seed, 4, 12)).unwrap().embedding;
        let n: f64 = e.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6, "norm {n}");
    }
}

#[test]
fn logits_have_one_entry_per_class() {
    for k in [2, 8, 60] {
        let net = ImPstNet::<f32>::new(small_config(k), 6).unwrap();
        let p = net.forward(&video(8, 2, 12)).unwrap();
        assert_eq!(p.logits.len(), k);
        assert_eq!(p.embedding.len(), 5);
    }
}

#[test]
fn config_errors() {
    let mut cfg = small_config(3);
    cfg.stages[0].subsample_rate = 0;
    assert!(ImPstNet::<f32>::new(cfg, 0).is_err());
    let mut cfg = small_config(3);
    cfg.stages[1].mlp_widths.clear();
    assert!(ImPstNet::<f32>::new(cfg, 0).is_err());
    let net = ImPstNet::<f32>::new(small_config(3), 0).unwrap();
    assert!(net.forward(&[vec![[0.0; 3]; 3], vec![]]).is_err());
    let other = small_config(4);
    assert!(ImPstNet::from_params(other, net.params.clone()).is_err());
}

fn weights(net: &ImPstNet<f64>, name: &str) -> (Vec<f64>, Vec<f64>) {
    let w = net.params.get(&format!("{name}.weight")).unwrap().values.clone();
    let b = net.params.get(&format!("{name}.bias")).unwrap().values.clone();
    (w, b)
}

fn linear_oracle(layer: &(Vec<f64>, Vec<f64>), x: &[f64]) -> Vec<f64> {
    let out = layer.1.len();
    (0..out)
        .map(|o| layer.1[o] + x.iter().enumerate().map(|(i, v)| v * layer.0[i * out + o]).sum::<f64>())
        .collect()
}

#[test]
fn forward_matches_straight_line_evaluation() {
    let cfg = small_config(4);
    for seed in 0..5 {
        let frames = video(200 + seed, 3, 12);
        let mut net = ImPstNet::<f64>::new(cfg.clone(), seed).unwrap();
        randomize_biases(&mut net, seed);
        let got = net.forward(&frames).unwrap();

        let tg = ConvToggles { normalize_offsets: true, include_center_feature: false, encode_time_offset: false };
        let s0 = &cfg.stages[0];
        let c0: Vec<Vec<usize>> = frames.iter().map(|f| crate::geom::fps(f, f.len() / 2).unwrap()).collect();
        let empty: Vec<Vec<Vec<f64>>> = frames.iter().map(|f| vec![vec![]; f.len()]).collect();
        let l0 = vec![weights(&net, "stage0.mlp0")];
        let f0 = tube_conv_oracle(&frames, &empty, &c0, s0.radius, 0, s0.k_nbr, &l0, tg);
        let m0 = c0[0].len();
        let level1: Vec<Vec<Point>> = frames.iter().zip(&c0).map(|(f, c)| c.iter().map(|&i| f[i]).collect()).collect();
        let feats1: Vec<Vec<Vec<f64>>> = f0.chunks(m0).map(|c| c.to_vec()).collect();
        let s1 = &cfg.stages[1];
        let c1: Vec<Vec<usize>> = level1.iter().map(|f| crate::geom::fps(f, f.len() / 2).unwrap()).collect();
        let l1 = vec![weights(&net, "stage1.mlp0"), weights(&net, "stage1.mlp1")];
        let tg1 = ConvToggles { include_center_feature: true, encode_time_offset: true, ..tg };
        let f1 = tube_conv_oracle(&level1, &feats1, &c1, s1.radius, 1, s1.k_nbr, &l1, tg1);
        let pooled: Vec<f64> = (0..f1[0].len())
            .map(|d| f1.iter().map(|r| r[d]).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let logits = linear_oracle(&weights(&net, "cls_head"), &pooled);
        let proj = linear_oracle(&weights(&net, "proj_head"), &pooled);
        let norm = proj.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (a, b) in got.logits.iter().zip(&logits) {
            assert!((a - b).abs() < 1e-10, "logit {a} vs {b}");
        }
        for (a, b) in got.embedding.iter().zip(&proj) {
            assert!((a - b / norm).abs() < 1e-10);
        }
    }
}
