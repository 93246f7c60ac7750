//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero when
//! any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vg4d::align::{loss_pc_text, loss_pc_video, pc_text_lower_bound};
use vg4d::infer::{fuse, ChannelMask, FusionWeights, ScoreBundle};
use vg4d::verify::{conv_suite, geometry_suite, gradcheck_all, CheckReport};
use vg4d::Graph;

type Outcome = Result<String, String>;

fn vg4d(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_vg4d"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "`vg4d {}` exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn read_json(path: &Path) -> Result<serde_json::Value, String> {
    let s = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&s).map_err(|e| e.to_string())
}

fn suites(reports: &[CheckReport], budget_s: f64, seconds: f64) -> Outcome {
    let detail: Vec<String> = reports
        .iter()
        .map(|r| format!("{} {}/{} max {:.1e}", r.name, r.cases - r.failures, r.cases, r.max_error))
        .collect();
    let msg = format!("{} ({seconds:.1}s, budget {budget_s:.0}s)", detail.join("; "));
    if reports.iter().all(CheckReport::passed) && seconds < budget_s {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn gradient_suite() -> Outcome {
    let t = Instant::now();
    let reports = gradcheck_all(100).map_err(|e| e.to_string())?;
    let redrawn: usize = reports.iter().map(|r| r.redrawn).sum();
    suites(&reports, 120.0, t.elapsed().as_secs_f64()).map(|m| format!("{m}; {redrawn} kink instances redrawn"))
}

fn geometry_oracles() -> Outcome {
    let t = Instant::now();
    let reports = geometry_suite(200).map_err(|e| e.to_string())?;
    suites(&reports, 60.0, t.elapsed().as_secs_f64())
}

fn aggregation_oracle() -> Outcome {
    let t = Instant::now();
    let reports = conv_suite(200).map_err(|e| e.to_string())?;
    suites(&reports, 600.0, t.elapsed().as_secs_f64())
}

fn unit_rows(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * c);
    for _ in 0..n {
        let v: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        out.extend(v.iter().map(|x| x / norm));
    }
    out
}

fn loss_identities() -> Outcome {
    let eval = |f: &dyn Fn(&mut Graph<f64>) -> vg4d::Result<vg4d::Var>| -> Result<f64, String> {
        let mut g = Graph::new();
        let v = f(&mut g).map_err(|e| e.to_string())?;
        Ok(g.scalar(v))
    };
    // a single pair is its own only candidate
    let single = eval(&|g| {
        let p = g.constant(&[1, 3], vec![0.6, 0.0, 0.8])?;
        let v = g.constant(&[1, 3], vec![0.0, 1.0, 0.0])?;
        loss_pc_video(g, p, v, 1.0)
    })?;
    if single != 0.0 {
        return Err(format!("pc-video loss at N=1 is {single}"));
    }
    // embeddings orthogonal to every candidate give uniform logits
    let (k, n) = (7usize, 5usize);
    let uniform_text = eval(&|g| {
        let mut text = vec![0.0; k * (k + 1)];
        (0..k).for_each(|i| text[i * (k + 1) + i] = 1.0);
        let mut pc = vec![0.0; k + 1];
        pc[k] = 1.0;
        let t = g.constant(&[k, k + 1], text.clone())?;
        let p = g.constant(&[1, k + 1], pc)?;
        loss_pc_text(g, p, &[2], t, 1.0)
    })?;
    let uniform_video = eval(&|g| {
        let mut pc = vec![0.0; n * (n + 1)];
        (0..n).for_each(|i| pc[i * (n + 1)] = 1.0);
        let mut vid = vec![0.0; n * (n + 1)];
        (0..n).for_each(|i| vid[i * (n + 1) + 1 + i] = 1.0);
        let p = g.constant(&[n, n + 1], pc)?;
        let v = g.constant(&[n, n + 1], vid)?;
        loss_pc_video(g, p, v, 1.0)
    })?;
    let (ek, en) = ((uniform_text - (k as f64).ln()).abs(), (uniform_video - (n as f64).ln()).abs());
    if ek > 1e-12 || en > 1e-12 {
        return Err(format!("uniform logits gave {uniform_text} (ln K err {ek:.1e}) and {uniform_video} (ln N err {en:.1e})"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut min_gap = f64::INFINITY;
    for _ in 0..1000 {
        let (k, c, b) = (rng.random_range(2..12), rng.random_range(2..16), rng.random_range(1..8));
        let text = unit_rows(&mut rng, k, c);
        let pc = unit_rows(&mut rng, b, c);
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
        let l = eval(&|g| {
            let t = g.constant(&[k, c], text.clone())?;
            let p = g.constant(&[b, c], pc.clone())?;
            loss_pc_text(g, p, &labels, t, 1.0)
        })?;
        min_gap = min_gap.min(l - pc_text_lower_bound(k));
    }
    if min_gap < 0.0 {
        return Err(format!("lower bound violated by {:.3e}", -min_gap));
    }
    Ok(format!(
        "N=1 gives 0; ln K, ln N within {:.1e}; bound held on 1000 batches (min slack {min_gap:.3e})",
        ek.max(en)
    ))
}

fn parse_table(path: &Path) -> Result<Vec<(String, f64)>, String> {
    let s = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    s.lines()
        .skip(1)
        .map(|l| {
            let (name, acc) = l.split_once(',').ok_or("bad table row")?;
            Ok((name.to_string(), acc.parse::<f64>().map_err(|e| e.to_string())?))
        })
        .collect()
}

struct Pipeline {
    end_to_end: Outcome,
    alignment: Outcome,
}

/// Pretrains the micro model on the synthetic dataset, then fine-tunes it
/// against a synthetic embedding store and evaluates every channel mix.
fn pipeline(root: &Path) -> Pipeline {
    let s = |p: &Path| p.to_str().expect("utf-8 temp path").to_string();
    let (data, emb, pre, fine, eval) =
        (root.join("data"), root.join("emb"), root.join("pre"), root.join("fine"), root.join("eval"));
    let t = Instant::now();
    let end_to_end = (|| {
        vg4d(&["--deterministic", "synth-data", "-o", &s(&data)])?;
        vg4d(&["--deterministic", "pretrain", "--data", &s(&data), "-o", &s(&pre)])?;
        let secs = t.elapsed().as_secs_f64();
        let summary = read_json(&pre.join("summary.json"))?;
        let epochs = summary["epochs"].as_u64().unwrap_or(0);
        let acc = summary["test_accuracy"].as_f64().ok_or("no test accuracy")?;
        let msg = format!("test top-1 {acc:.4} after {epochs} epochs on one thread, {secs:.0}s");
        if acc >= 0.90 && epochs >= 30 && secs < 600.0 {
            Ok(msg)
        } else {
            Err(msg)
        }
    })();
    let alignment = (|| {
        if end_to_end.is_err() && !pre.join("model.vg4dckpt").exists() {
            return Err("no pretrained model".to_string());
        }
        vg4d(&["synth-embed", "--data", &s(&data), "--sigma-emb", "0.1", "-o", &s(&emb)])?;
        vg4d(&["finetune", "--data", &s(&data), "--embeddings", &s(&emb), "--model", &s(&pre), "-o", &s(&fine)])?;
        vg4d(&["eval", "--data", &s(&data), "--embeddings", &s(&emb), "--model", &s(&fine), "-o", &s(&eval)])?;
        let table = parse_table(&eval.join("fusion_table.csv"))?;
        let get = |name: &str| table.iter().find(|(n, _)| n == name).map(|r| r.1).ok_or(format!("missing row {name}"));
        let (pc, pc_text, all) = (get("pc")?, get("pc_text")?, get("pc+pc_text+rgb+rgb_text")?);
        let msg = format!("pc_text {pc_text:.4}, pc {pc:.4}, all channels {all:.4}");
        if pc_text >= 0.85 && all >= pc {
            Ok(msg)
        } else {
            Err(msg)
        }
    })();
    Pipeline { end_to_end, alignment }
}

fn ablation(root: &Path) -> Outcome {
    let out = root.join("ablate");
    vg4d(&["ablate", "--epochs", "3", "-o", out.to_str().unwrap()])?;
    let csv = std::fs::read_to_string(out.join("ablation.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    let added: Vec<&str> = rows.iter().filter_map(|r| r.split(',').nth(1)).collect();
    let msg = format!("{} rows: {}", rows.len(), added.join(" -> "));
    if rows.len() == 5 && added[0] == "baseline" {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn determinism(root: &Path) -> Outcome {
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = root.join(format!("det_{run}"));
        vg4d(&["--deterministic", "--seed", "5", "pretrain", "--epochs", "3", "-o", out.to_str().unwrap()])?;
        let read = |f: &str| std::fs::read(out.join(f)).map_err(|e| e.to_string());
        outputs.push((read("metrics.json")?, read("summary.json")?, read("model.vg4dckpt")?));
    }
    if outputs[0] == outputs[1] {
        Ok(format!("metrics.json ({} bytes), summary and checkpoint byte-identical", outputs[0].0.len()))
    } else {
        Err("repeated run differs".into())
    }
}

fn fusion_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let k = rng.random_range(2..12);
        let mut chan = || {
            let v: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        let b = ScoreBundle { pc: chan(), pc_text: chan(), rgb: Some(chan()), rgb_text: Some(chan()) };
        let channels = [&b.pc, &b.pc_text, b.rgb.as_ref().unwrap(), b.rgb_text.as_ref().unwrap()];
        for (i, want) in channels.iter().enumerate() {
            let mut w = [0.0; 4];
            w[i] = 1.0;
            let (v, _) = fuse(&b, &FusionWeights::new(w[0], w[1], w[2], w[3]), ChannelMask::ALL).map_err(|e| e.to_string())?;
            if &v != *want {
                return Err(format!("one-hot weight {i} did not reproduce its channel"));
            }
        }
        let w: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.05..3.0));
        let c = rng.random_range(1e-3..1e3);
        let (v1, p1) = fuse(&b, &FusionWeights::new(w[0], w[1], w[2], w[3]), ChannelMask::ALL).map_err(|e| e.to_string())?;
        let (v2, p2) =
            fuse(&b, &FusionWeights::new(c * w[0], c * w[1], c * w[2], c * w[3]), ChannelMask::ALL).map_err(|e| e.to_string())?;
        if p1 != p2 {
            return Err("argmax changed under weight scaling".into());
        }
        worst = v1.iter().zip(&v2).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    if worst <= 1e-12 {
        Ok(format!("one-hot exact on 4000 cases; scaling max deviation {worst:.1e}"))
    } else {
        Err(format!("scaling deviation {worst:.1e}"))
    }
}

fn main() {
    let root = tempfile::tempdir().expect("temp dir");
    let mut results: Vec<(&str, Outcome)> = vec![
        ("gradient suite", gradient_suite()),
        ("geometry oracles", geometry_oracles()),
        ("tube aggregation oracle", aggregation_oracle()),
        ("loss identities", loss_identities()),
    ];
    let p = pipeline(root.path());
    results.push(("end-to-end synthetic", p.end_to_end));
    results.push(("alignment efficacy", p.alignment));
    results.push(("ablation harness", ablation(root.path())));
    results.push(("determinism", determinism(root.path())));
    results.push(("fusion identities", fusion_identities()));

    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(m) => println!("PASS  {name}: {m}"),
            Err(m) => {
                failed += 1;
                println!("FAIL  {name}: {m}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
