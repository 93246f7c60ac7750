//! Self-verification suites: brute-force geometry oracles, a nested-loop
//! reference for tube aggregation, and finite-difference gradient checks.
//! Shared by the `gradcheck` / `oracle-check` commands and the test suites.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::{batch_loss_and_grads, cross_entropy, loss_pc_text, loss_pc_video, synth_embeddings, EmbedSpec, LossWeights, Objective, PreparedSample};
use crate::error::Result;
use crate::geom::{clamp_frame, fps, radius_neighbors, tube_neighbors, Point};
use crate::model::{im_pstconv, ImPstNet, ImPstNetConfig, Linear, StageConfig, StagePlan};
use crate::tensor::gradcheck::{check_op, relative_error, FD_STEP};
use crate::tensor::{Graph, ParamStore, Parameter, Var};

pub const OP_TOLERANCE: f64 = 1e-5;
pub const END_TO_END_TOLERANCE: f64 = 1e-4;
pub const CONV_TOLERANCE: f64 = 1e-6;

/// Outcome of one named check run over many random cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    /// Largest error seen (0 for exact-match checks).
    pub max_error: f64,
    pub tolerance: f64,
    pub seconds: f64,
    /// Random instances replaced because the loss was not differentiable
    /// within one finite-difference step of them.
    #[serde(default)]
    pub redrawn: usize,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

fn run_check(name: &str, cases: usize, tolerance: f64, mut case: impl FnMut(u64) -> Result<f64>) -> Result<CheckReport> {
    let start = Instant::now();
    let mut failures = 0;
    let mut max_error = 0.0f64;
    for seed in 0..cases as u64 {
        let e = case(seed)?;
        if !(e <= tolerance) {
            failures += 1;
        }
        max_error = max_error.max(if e.is_nan() { f64::INFINITY } else { e });
    }
    Ok(CheckReport {
        name: name.to_string(),
        cases,
        failures,
        max_error,
        tolerance,
        seconds: start.elapsed().as_secs_f64(),
        redrawn: 0,
    })
}

fn sq(a: &Point, b: &Point) -> f64 {
    (0..3).map(|d| (a[d] as f64 - b[d] as f64).powi(2)).sum()
}

/// Greedy max-min selection recomputing every distance from scratch.
pub fn fps_oracle(coords: &[Point], m: usize) -> Vec<usize> {
    let mut sel = vec![0];
    while sel.len() < m {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for j in 0..coords.len() {
            if sel.contains(&j) {
                continue;
            }
            let d = sel.iter().map(|&s| sq(&coords[j], &coords[s])).fold(f64::INFINITY, f64::min);
            if d > best.0 {
                best = (d, j);
            }
        }
        sel.push(best.1);
    }
    sel
}

/// Full scan, stable sort by distance, truncate, pad.
pub fn radius_oracle(centroid: Point, cloud: &[Point], r: f64, k: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = cloud.iter().enumerate().map(|(j, p)| (sq(p, &centroid), j)).collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite"));
    let inside: Vec<usize> = all.iter().filter(|(d, _)| *d <= r * r).map(|&(_, j)| j).take(k).collect();
    match inside.first() {
        None => vec![all[0].1; k],
        Some(&first) => {
            let mut out = inside.clone();
            while out.len() < k {
                out.push(first);
            }
            out
        }
    }
}

/// Per-frame scans over the clamped window, one list per offset.
pub fn tube_oracle(centroid: Point, t: usize, frames: &[Vec<Point>], r: f64, r_t: usize, k: usize) -> Vec<Vec<usize>> {
    let last = frames.len() as i64 - 1;
    (-(r_t as i64)..=r_t as i64)
        .map(|o| {
            let f = (t as i64 + o).max(0).min(last) as usize;
            radius_oracle(centroid, &frames[f], r, k)
        })
        .collect()
}

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
    // a coarse grid on some instances forces distance ties
    let grid = rng.random_bool(0.3);
    (0..n)
        .map(|_| {
            std::array::from_fn(|_| {
                if grid {
                    rng.random_range(0..4) as f32 * 0.25
                } else {
                    rng.random::<f32>()
                }
            })
        })
        .collect()
}

/// FPS, radius and tube kernels against the brute-force oracles.
pub fn geometry_suite(instances: usize) -> Result<Vec<CheckReport>> {
    let fps_r = run_check("fps", instances, 0.0, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=64);
        let m = rng.random_range(1..=n);
        let pts = random_points(&mut rng, n);
        Ok(if fps(&pts, m)? == fps_oracle(&pts, m) { 0.0 } else { 1.0 })
    })?;
    let ball_r = run_check("radius_neighbors", instances, 0.0, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 10_000);
        let n = rng.random_range(1..=64);
        let k = rng.random_range(1..=9);
        let r = rng.random_range(0.05..0.6);
        let pts = random_points(&mut rng, n);
        let c = if rng.random_bool(0.5) { pts[rng.random_range(0..n)] } else { random_points(&mut rng, 1)[0] };
        Ok(if radius_neighbors(c, &pts, r, k)? == radius_oracle(c, &pts, r, k) { 0.0 } else { 1.0 })
    })?;
    let tube_r = run_check("tube_neighbors", instances, 0.0, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 20_000);
        let nf = rng.random_range(1..=5);
        let frames: Vec<Vec<Point>> = (0..nf)
            .map(|_| {
                let n = rng.random_range(1..=64);
                random_points(&mut rng, n)
            })
            .collect();
        let t = rng.random_range(0..nf);
        let (k, r_t) = (rng.random_range(1..=9), rng.random_range(0..=2));
        let r = rng.random_range(0.05..0.6);
        let c = random_points(&mut rng, 1)[0];
        let got: Vec<Vec<usize>> = tube_neighbors(c, t, &frames, r, r_t, k)?.into_iter().map(|s| s.indices).collect();
        Ok(if got == tube_oracle(c, t, &frames, r, r_t, k) { 0.0 } else { 1.0 })
    })?;
    Ok(vec![fps_r, ball_r, tube_r])
}

/// Dense `[linear → relu]` stack evaluated with plain loops; `layers[l]` is
/// `(weight in×out row-major, bias)`.
fn mlp_oracle(layers: &[(Vec<f64>, Vec<f64>)], x: &[f64]) -> Vec<f64> {
    let mut cur = x.to_vec();
    for (w, b) in layers {
        let out = b.len();
        cur = (0..out)
            .map(|o| {
                let s: f64 = b[o] + cur.iter().enumerate().map(|(i, v)| v * w[i * out + o]).sum::<f64>();
                s.max(0.0)
            })
            .collect();
    }
    cur
}

/// Switches of the tube aggregation reference.
#[derive(Debug, Clone, Copy)]
pub struct ConvToggles {
    pub normalize_offsets: bool,
    pub include_center_feature: bool,
    pub encode_time_offset: bool,
}

/// Nested-loop tube aggregation: for every frame `t` and centroid `i`, the
/// max over the tube of `ζ(f_j, [f_i], Δx [/ r], [Δt / r_t])`.
#[allow(clippy::too_many_arguments)]
pub fn tube_conv_oracle(
    frames: &[Vec<Point>],
    feats: &[Vec<Vec<f64>>],
    centroids: &[Vec<usize>],
    r: f64,
    r_t: usize,
    k: usize,
    layers: &[(Vec<f64>, Vec<f64>)],
    tg: ConvToggles,
) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for t in 0..frames.len() {
        for &c in &centroids[t] {
            let x = frames[t][c];
            let mut best: Option<Vec<f64>> = None;
            for (o, list) in tube_oracle(x, t, frames, r, r_t, k).into_iter().enumerate() {
                let tf = clamp_frame(t, o as i32 - r_t as i32, frames.len());
                for j in list {
                    let y = frames[tf][j];
                    let mut v = feats[tf][j].clone();
                    if tg.include_center_feature {
                        v.extend(&feats[t][c]);
                    }
                    for d in 0..3 {
                        let dx = y[d] as f64 - x[d] as f64;
                        v.push(if tg.normalize_offsets { dx / r } else { dx });
                    }
                    if tg.encode_time_offset && r_t > 0 {
                        v.push((tf as f64 - t as f64) / r_t as f64);
                    }
                    let h = mlp_oracle(layers, &v);
                    best = Some(match best {
                        None => h,
                        Some(b) => b.iter().zip(&h).map(|(p, q)| p.max(*q)).collect(),
                    });
                }
            }
            out.push(best.expect("tube is never empty"));
        }
    }
    out
}

/// The original form: `max ζ(f_j, Δx)` with raw displacements and no centre
/// feature.
pub fn pstconv_oracle(
    frames: &[Vec<Point>],
    feats: &[Vec<Vec<f64>>],
    centroids: &[Vec<usize>],
    r: f64,
    r_t: usize,
    k: usize,
    layers: &[(Vec<f64>, Vec<f64>)],
) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for t in 0..frames.len() {
        for &c in &centroids[t] {
            let x = frames[t][c];
            let mut h = vec![f64::NEG_INFINITY; layers.last().map_or(0, |l| l.1.len())];
            for (o, list) in tube_oracle(x, t, frames, r, r_t, k).into_iter().enumerate() {
                let tf = clamp_frame(t, o as i32 - r_t as i32, frames.len());
                for j in list {
                    let y = frames[tf][j];
                    let mut v = feats[tf][j].clone();
                    v.extend((0..3).map(|d| y[d] as f64 - x[d] as f64));
                    for (a, b) in h.iter_mut().zip(mlp_oracle(layers, &v)) {
                        *a = a.max(b);
                    }
                }
            }
            out.push(h);
        }
    }
    out
}

/// One random aggregation instance evaluated by the graph kernel and the
/// reference. Returns the max absolute difference.
fn conv_case(seed: u64, tg: ConvToggles, original: bool) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nf = rng.random_range(2..=3);
    let n = rng.random_range(4..=8);
    let (k, r_t) = (rng.random_range(1..=3), rng.random_range(0..=1));
    let r = rng.random_range(0.3..0.9);
    let (fin, widths) = (rng.random_range(1..=3), [rng.random_range(2..=4), rng.random_range(2..=4)]);
    let depth = rng.random_range(1..=2);
    let frames: Vec<Vec<Point>> = (0..nf).map(|_| random_points(&mut rng, n)).collect();
    let feats: Vec<Vec<Vec<f64>>> = (0..nf)
        .map(|_| (0..n).map(|_| (0..fin).map(|_| rng.random_range(-1.0..1.0)).collect()).collect())
        .collect();
    let m = rng.random_range(1..=n);
    let centroids: Vec<Vec<usize>> = frames.iter().map(|f| fps(f, m)).collect::<Result<_>>()?;
    let geo = 3 + usize::from(tg.encode_time_offset && r_t > 0);
    let mut in_dim = fin + if tg.include_center_feature { fin } else { 0 } + geo;
    let mut layers = Vec::new();
    let mut store = ParamStore::<f64>::new();
    let mut lin = Vec::new();
    for (l, &w) in widths.iter().take(depth).enumerate() {
        let wv: Vec<f64> = (0..in_dim * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bv: Vec<f64> = (0..w).map(|_| rng.random_range(-0.5..0.5)).collect();
        let weight = store.insert(Parameter::new(format!("l{l}.weight"), vec![in_dim, w], wv.clone()))?;
        let bias = store.insert(Parameter::new(format!("l{l}.bias"), vec![w], bv.clone()))?;
        lin.push(Linear { weight, bias });
        layers.push((wv, bv));
        in_dim = w;
    }
    let plan = StagePlan::build(&frames, centroids.clone(), r, k, r_t, tg.normalize_offsets, tg.encode_time_offset)?;
    let mut g = Graph::new();
    let vars = store.bind(&mut g)?;
    let input: Vec<f64> = feats.iter().flatten().flatten().copied().collect();
    let x = g.constant(&[nf * n, fin], input)?;
    let y = im_pstconv(&mut g, &vars, &lin, Some(x), &plan, tg.include_center_feature)?;
    let expect = if original {
        pstconv_oracle(&frames, &feats, &centroids, r, r_t, k, &layers)
    } else {
        tube_conv_oracle(&frames, &feats, &centroids, r, r_t, k, &layers, tg)
    };
    let flat: Vec<f64> = expect.into_iter().flatten().collect();
    Ok(g.value(y).iter().zip(&flat).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// The graph aggregation kernel against the nested-loop references, with
/// all toggles on and with all toggles off (original form).
pub fn conv_suite(instances: usize) -> Result<Vec<CheckReport>> {
    let on = ConvToggles {
        normalize_offsets: true,
        include_center_feature: true,
        encode_time_offset: true,
    };
    let off = ConvToggles {
        normalize_offsets: false,
        include_center_feature: false,
        encode_time_offset: false,
    };
    let mixed = |seed: u64| ConvToggles {
        normalize_offsets: seed & 1 == 1,
        include_center_feature: seed & 2 == 2,
        encode_time_offset: seed & 4 == 4,
    };
    Ok(vec![
        run_check("im_pstconv", instances, CONV_TOLERANCE, |s| conv_case(s, on, false))?,
        run_check("im_pstconv_toggles", instances, CONV_TOLERANCE, |s| conv_case(s + 50_000, mixed(s), false))?,
        run_check("pstconv_original", instances, CONV_TOLERANCE, |s| conv_case(s + 90_000, off, true))?,
    ])
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

type OpCase = Box<dyn Fn(&mut ChaCha8Rng) -> Result<f64>>;

fn op_case<F>(inputs: Vec<(Vec<usize>, Vec<f64>)>, rng: &mut ChaCha8Rng, build: F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let proj = rand_vec(rng, 4096, -1.0, 1.0);
    Ok(check_op(build, &inputs, &proj)?.into_iter().fold(0.0, f64::max))
}

fn unit_rows(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Vec<f64> {
    let mut v = rand_vec(rng, n * c, -1.0, 1.0);
    for row in v.chunks_mut(c) {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

fn op_cases() -> Vec<(&'static str, OpCase)> {
    fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
        (rng.random_range(1..=4), rng.random_range(1..=5), rng.random_range(1..=4))
    }
    vec![
        ("matmul", Box::new(|rng: &mut ChaCha8Rng| {
            let (m, k, n) = dims(rng);
            let ins = vec![(vec![m, k], rand_vec(rng, m * k, -1.0, 1.0)), (vec![k, n], rand_vec(rng, k * n, -1.0, 1.0))];
            op_case(ins, rng, |g, v| g.matmul(v[0], v[1]))
        })),
        ("transpose", Box::new(|rng: &mut ChaCha8Rng| {
            let (m, k, _) = dims(rng);
            op_case(vec![(vec![m, k], rand_vec(rng, m * k, -1.0, 1.0))], rng, |g, v| g.transpose(v[0]))
        })),
        ("linear", Box::new(|rng: &mut ChaCha8Rng| {
            let (m, k, n) = dims(rng);
            let ins = vec![
                (vec![m, k], rand_vec(rng, m * k, -1.0, 1.0)),
                (vec![k, n], rand_vec(rng, k * n, -1.0, 1.0)),
                (vec![n], rand_vec(rng, n, -1.0, 1.0)),
            ];
            op_case(ins, rng, |g, v| g.linear(v[0], v[1], v[2]))
        })),
        ("add_sub_mul", Box::new(|rng: &mut ChaCha8Rng| {
            let (m, k, _) = dims(rng);
            let ins = vec![(vec![m, k], rand_vec(rng, m * k, -1.0, 1.0)), (vec![m, k], rand_vec(rng, m * k, -1.0, 1.0))];
            op_case(ins, rng, |g, v| {
                let a = g.add(v[0], v[1])?;
                let s = g.sub(v[0], v[1])?;
                let p = g.mul(a, s)?;
                let q = g.mul(p, v[0])?;
                Ok(g.scale(q, -1.7))
            })
        })),
        ("relu", Box::new(|rng: &mut ChaCha8Rng| {
            let (m, k, _) = dims(rng);
            op_case(vec![(vec![m, k], rand_vec(rng, m * k, -1.0, 1.0))], rng, |g, v| Ok(g.relu(v[0])))
        })),
        ("exp_log", Box::new(|rng: &mut ChaCha8Rng| {
            let (m, k, _) = dims(rng);
            let ins = vec![(vec![m, k], rand_vec(rng, m * k, -1.0, 1.0)), (vec![m, k], rand_vec(rng, m * k, 0.5, 2.0))];
            op_case(ins, rng, |g, v| {
                let e = g.exp(v[0]);
                let l = g.log(v[1])?;
                g.add(e, l)
            })
        })),
        ("softmax", Box::new(|rng: &mut ChaCha8Rng| {
            let (m, k, _) = dims(rng);
            let axis = rng.random_range(0..2);
            op_case(vec![(vec![m, k], rand_vec(rng, m * k, -2.0, 2.0))], rng, move |g, v| g.softmax(v[0], axis))
        })),
        ("log_softmax", Box::new(|rng: &mut ChaCha8Rng| {
            let (m, k, _) = dims(rng);
            let axis = rng.random_range(0..2);
            op_case(vec![(vec![m, k], rand_vec(rng, m * k, -2.0, 2.0))], rng, move |g, v| g.log_softmax(v[0], axis))
        })),
        ("max_reduce", Box::new(|rng: &mut ChaCha8Rng| {
            let (a, b, c) = dims(rng);
            let axis = rng.random_range(0..3);
            op_case(vec![(vec![a, b, c], rand_vec(rng, a * b * c, -1.0, 1.0))], rng, move |g, v| {
                Ok(g.max_reduce(v[0], axis)?.0)
            })
        })),
        ("concat", Box::new(|rng: &mut ChaCha8Rng| {
            let (m, k, n) = dims(rng);
            let ins = vec![(vec![m, k], rand_vec(rng, m * k, -1.0, 1.0)), (vec![m, n], rand_vec(rng, m * n, -1.0, 1.0))];
            op_case(ins, rng, |g, v| g.concat(&[v[0], v[1], v[0]], 1))
        })),
        ("reshape", Box::new(|rng: &mut ChaCha8Rng| {
            let (m, k, _) = dims(rng);
            op_case(vec![(vec![m, k], rand_vec(rng, m * k, -1.0, 1.0))], rng, move |g, v| g.reshape(v[0], &[k, m]))
        })),
        ("l2_normalize", Box::new(|rng: &mut ChaCha8Rng| {
            let (m, k, _) = dims(rng);
            op_case(vec![(vec![m, k + 1], rand_vec(rng, m * (k + 1), -1.0, 1.0))], rng, |g, v| g.l2_normalize(v[0]))
        })),
        ("gather_rows_pick", Box::new(|rng: &mut ChaCha8Rng| {
            let (m, k, _) = dims(rng);
            let rows: Vec<usize> = (0..m + 2).map(|_| rng.random_range(0..m)).collect();
            let cols: Vec<usize> = (0..m + 2).map(|_| rng.random_range(0..k)).collect();
            op_case(vec![(vec![m, k], rand_vec(rng, m * k, -1.0, 1.0))], rng, move |g, v| {
                let r = g.gather_rows(v[0], &rows)?;
                g.pick(r, &cols)
            })
        })),
        ("sum_mean_add_bias", Box::new(|rng: &mut ChaCha8Rng| {
            let (m, k, _) = dims(rng);
            let ins = vec![(vec![m, k], rand_vec(rng, m * k, -1.0, 1.0)), (vec![k], rand_vec(rng, k, -1.0, 1.0))];
            op_case(ins, rng, |g, v| {
                let b = g.add_bias(v[0], v[1])?;
                let s = g.sum(b);
                let q = g.mul(b, b)?;
                let mq = g.mean(q);
                g.add(s, mq)
            })
        })),
        ("cross_entropy", Box::new(|rng: &mut ChaCha8Rng| {
            let (n, k, _) = dims(rng);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            op_case(vec![(vec![n, k], rand_vec(rng, n * k, -2.0, 2.0))], rng, move |g, v| cross_entropy(g, v[0], &labels))
        })),
        ("loss_pc_text", Box::new(|rng: &mut ChaCha8Rng| {
            let (n, k, c) = (rng.random_range(1..=4), rng.random_range(2..=5), rng.random_range(2..=6));
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let text = unit_rows(rng, k, c);
            op_case(vec![(vec![n, c], rand_vec(rng, n * c, -1.0, 1.0))], rng, move |g, v| {
                let e = g.l2_normalize(v[0])?;
                let t = g.constant(&[k, c], text.clone())?;
                loss_pc_text(g, e, &labels, t, 1.0)
            })
        })),
        ("loss_pc_video", Box::new(|rng: &mut ChaCha8Rng| {
            let (n, c) = (rng.random_range(1..=5), rng.random_range(2..=6));
            let video = unit_rows(rng, n, c);
            op_case(vec![(vec![n, c], rand_vec(rng, n * c, -1.0, 1.0))], rng, move |g, v| {
                let e = g.l2_normalize(v[0])?;
                let vv = g.constant(&[n, c], video.clone())?;
                loss_pc_video(g, e, vv, 1.0)
            })
        })),
    ]
}

/// Every differentiable op (and the loss building blocks) against central
/// differences, `seeds` random instances each.
pub fn op_gradcheck_suite(seeds: usize) -> Result<Vec<CheckReport>> {
    op_cases()
        .into_iter()
        .enumerate()
        .map(|(i, (name, case))| {
            run_check(name, seeds, OP_TOLERANCE, |s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s * 1000 + i as u64);
                case(&mut rng)
            })
        })
        .collect()
}

/// A two-stage network small enough for full finite-difference sweeps.
pub fn gradcheck_model_config() -> ImPstNetConfig {
    ImPstNetConfig {
        stages: vec![
            StageConfig {
                subsample_rate: 2,
                radius: 0.5,
                k_nbr: 3,
                mlp_widths: vec![6],
            },
            StageConfig {
                subsample_rate: 2,
                radius: 0.8,
                k_nbr: 3,
                mlp_widths: vec![8, 8],
            },
        ],
        temporal_radius: 1,
        num_classes: 3,
        embed_dim: 4,
        video_dim: 4,
        normalize_offsets: true,
        include_center_feature: true,
        encode_time_offset: true,
    }
}

/// Analytic and central-difference gradients of the full weighted objective
/// with respect to every parameter of a random micro-model and batch.
/// `smooth` is false when one-sided differences disagree for some parameter,
/// i.e. a ReLU or max-pool switch lies within one step of the instance.
#[derive(Debug, Clone)]
pub struct ModelGradInstance {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub smooth: bool,
}

pub fn model_grad_instance(seed: u64) -> Result<ModelGradInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = gradcheck_model_config();
    let mut net = ImPstNet::<f64>::new(cfg.clone(), seed)?;
    // zero biases put ReLU kinks exactly at zero-offset inputs
    for p in net.params.iter_mut().filter(|p| p.name.ends_with(".bias")) {
        p.values.iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
    }
    let classes: Vec<String> = (0..cfg.num_classes).map(|k| format!("class{k}")).collect();
    let batch: Vec<PreparedSample> = (0..3)
        .map(|i| PreparedSample {
            frames: (0..3)
                .map(|_| (0..8).map(|_| std::array::from_fn(|_| rng.random::<f32>())).collect())
                .collect(),
            label: rng.random_range(0..cfg.num_classes),
            sample_id: format!("s{i}"),
        })
        .collect();
    let ids: Vec<(String, usize)> = batch.iter().map(|s| (s.sample_id.clone(), s.label)).collect();
    let store = synth_embeddings(&EmbedSpec { dim: cfg.embed_dim, sigma_emb: 0.3 }, &classes, &ids, seed)?;
    let weights = LossWeights {
        alpha: rng.random_range(0.1..1.0),
        beta: rng.random_range(0.1..1.0),
        theta: rng.random_range(0.1..1.0),
        gamma: rng.random_range(0.1..1.0),
    };
    let obj = Objective::CrossModal { weights, logit_scale: 1.0 };
    let res = batch_loss_and_grads(&net, &batch, &obj, Some(&store))?;
    let mut analytic = Vec::new();
    for id in 0..net.params.len() {
        match res.grads.get(id) {
            Some(g) => analytic.extend_from_slice(g),
            None => analytic.extend(std::iter::repeat_n(0.0, net.params.by_id(id).values.len())),
        }
    }
    let base = res.losses.total;
    let mut probe = net.clone();
    let mut eval = |id: usize, i: usize, v: f64| -> Result<f64> {
        let orig = probe.params.by_id(id).values[i];
        probe.params.by_id_mut(id).values[i] = v;
        let l = batch_loss_and_grads(&probe, &batch, &obj, Some(&store))?.losses.total;
        probe.params.by_id_mut(id).values[i] = orig;
        Ok(l)
    };
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut smooth = true;
    for id in 0..net.params.len() {
        for (i, &x) in net.params.by_id(id).values.iter().enumerate() {
            let up = eval(id, i, x + FD_STEP)?;
            let down = eval(id, i, x - FD_STEP)?;
            let (fwd, bwd) = ((up - base) / FD_STEP, (base - down) / FD_STEP);
            if (fwd - bwd).abs() > 1e-3 * (fwd.abs() + bwd.abs()) + 1e-4 {
                smooth = false;
            }
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
    }
    Ok(ModelGradInstance { analytic, numeric, smooth })
}

/// Redraws allowed per seed before a non-smooth instance is scored as is.
pub const MAX_REDRAWS: u64 = 8;

/// Relative error of the first smooth instance drawn for `seed`, and the
/// number of non-smooth instances skipped on the way.
pub fn model_gradcheck_case(seed: u64) -> Result<(f64, usize)> {
    let stream = seed * (MAX_REDRAWS + 1);
    let mut inst = model_grad_instance(stream)?;
    let mut redrawn = 0;
    while !inst.smooth && (redrawn as u64) < MAX_REDRAWS {
        redrawn += 1;
        inst = model_grad_instance(stream + redrawn as u64)?;
    }
    Ok((relative_error(&inst.analytic, &inst.numeric), redrawn))
}

pub fn model_gradcheck_suite(seeds: usize) -> Result<CheckReport> {
    let mut redrawn = 0;
    let mut report = run_check("end_to_end_loss", seeds, END_TO_END_TOLERANCE, |s| {
        let (e, r) = model_gradcheck_case(s)?;
        redrawn += r;
        Ok(e)
    })?;
    report.redrawn = redrawn;
    Ok(report)
}

/// All finite-difference suites.
pub fn gradcheck_all(seeds: usize) -> Result<Vec<CheckReport>> {
    let mut out = op_gradcheck_suite(seeds)?;
    out.push(model_gradcheck_suite(seeds)?);
    Ok(out)
}

/// All brute-force equivalence suites.
pub fn oracle_check_all(instances: usize) -> Result<Vec<CheckReport>> {
    let mut out = geometry_suite(instances)?;
    out.extend(conv_suite(instances)?);
    Ok(out)
}
