use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ImPstNetConfig, StageConfig, StagePlan, VideoPlan};
use crate::error::{Error, Result};
use crate::geom::{fps, Point};
use crate::tensor::{Graph, ParamStore, Parameter, Scalar, Var};

/// Parameter ids of one affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
}

impl Linear {
    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<Var> {
        g.linear(x, vars[self.weight], vars[self.bias])
    }
}

/// `[linear → ReLU]` for every layer.
pub fn mlp<T: Scalar>(g: &mut Graph<T>, vars: &[Var], layers: &[Linear], mut x: Var) -> Result<Var> {
    for l in layers {
        let y = l.apply(g, vars, x)?;
        x = g.relu(y);
    }
    Ok(x)
}

/// Point-tube aggregation: for each centroid, the max over its tube of
/// `ζ(f_j, [f_i], Δx)` where `Δx` comes precomputed (normalized or raw, with
/// optional time offset) from `plan`. With `input = None` only the geometry
/// enters `ζ`, which is the per-frame spatial extractor.
///
/// Returns a `(frames · centroids) × width` feature matrix.
pub fn im_pstconv<T: Scalar>(
    g: &mut Graph<T>,
    vars: &[Var],
    layers: &[Linear],
    input: Option<Var>,
    plan: &StagePlan,
    include_center_feature: bool,
) -> Result<Var> {
    let rows = plan.rows();
    let geo = g.constant(
        &[rows, plan.geo_dim],
        plan.geometry.iter().map(|&v| T::from_f64(v)).collect(),
    )?;
    let x = match input {
        None => geo,
        Some(f) => {
            let expect = plan.num_frames * plan.points_in;
            if g.shape(f).first() != Some(&expect) {
                return Err(Error::Dimension(format!(
                    "stage input has shape {:?}, plan expects {expect} rows",
                    g.shape(f)
                )));
            }
            let mut parts = vec![g.gather_rows(f, &plan.neighbor_rows)?];
            if include_center_feature {
                parts.push(g.gather_rows(f, &plan.center_rows)?);
            }
            parts.push(geo);
            g.concat(&parts, 1)?
        }
    };
    let h = mlp(g, vars, layers, x)?;
    let width = g.shape(h)[1];
    let grouped = g.reshape(h, &[plan.num_centroids(), plan.tube_len, width])?;
    Ok(g.max_reduce(grouped, 1)?.0)
}

/// FPS to `⌊N / S_s⌋` centroids per frame, ball grouping, shared MLP and
/// max-pool. Returns centroid coordinates and their features.
pub fn spatial_extract<T: Scalar>(
    g: &mut Graph<T>,
    vars: &[Var],
    layers: &[Linear],
    frames: &[Vec<Point>],
    stage: &StageConfig,
    normalize_offsets: bool,
) -> Result<(Vec<Vec<Point>>, Var)> {
    if frames.iter().any(|f| f.is_empty()) {
        return Err(Error::Argument("spatial extractor got an empty frame".into()));
    }
    let cents = frames
        .iter()
        .map(|f| fps(f, f.len() / stage.subsample_rate))
        .collect::<Result<Vec<_>>>()?;
    let plan = StagePlan::build(frames, cents, stage.radius, stage.k_nbr, 0, normalize_offsets, false)?;
    let feats = im_pstconv(g, vars, layers, None, &plan, false)?;
    Ok((plan.centroid_coords(frames), feats))
}

/// Graph handles produced by [`ImPstNet::forward_graph`].
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// `1 × num_classes`.
    pub logits: Var,
    /// `1 × embed_dim`, unit norm.
    pub embedding: Var,
    /// `1 × feature_dim` global feature.
    pub pooled: Var,
}

/// Plain-value output of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub logits: Vec<T>,
    pub embedding: Vec<T>,
}

/// The point cloud video encoder with classification, projection and RGB
/// heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ImPstNet<T: Scalar> {
    pub config: ImPstNetConfig,
    pub params: ParamStore<T>,
    stage_layers: Vec<Vec<Linear>>,
    cls_head: Linear,
    proj_head: Linear,
    rgb_head: Linear,
}

pub const RGB_HEAD_PREFIX: &str = "rgb_head.";
pub const PROJ_HEAD_PREFIX: &str = "proj_head.";

struct Slot {
    name: String,
    fan_in: usize,
    fan_out: usize,
    relu: bool,
    decay: bool,
}

fn layout(cfg: &ImPstNetConfig) -> Vec<Slot> {
    let mut out = Vec::new();
    for (s, st) in cfg.stages.iter().enumerate() {
        let mut fan_in = cfg.stage_input_dim(s);
        for (l, &w) in st.mlp_widths.iter().enumerate() {
            out.push(Slot {
                name: format!("stage{s}.mlp{l}"),
                fan_in,
                fan_out: w,
                relu: true,
                decay: true,
            });
            fan_in = w;
        }
    }
    let feat = cfg.feature_dim();
    out.push(Slot { name: "cls_head".into(), fan_in: feat, fan_out: cfg.num_classes, relu: false, decay: true });
    out.push(Slot { name: "proj_head".into(), fan_in: feat, fan_out: cfg.embed_dim, relu: false, decay: true });
    out.push(Slot { name: "rgb_head".into(), fan_in: cfg.video_dim, fan_out: cfg.num_classes, relu: false, decay: false });
    out
}

impl<T: Scalar> ImPstNet<T> {
    /// Freshly initialized network: He-uniform weights for ReLU layers,
    /// `U(±1/√fan_in)` for heads, zero biases.
    pub fn new(config: ImPstNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for slot in layout(&config) {
            let bound = if slot.relu {
                (6.0 / slot.fan_in as f64).sqrt()
            } else {
                1.0 / (slot.fan_in as f64).sqrt()
            };
            let w = (0..slot.fan_in * slot.fan_out)
                .map(|_| T::from_f64(rng.random_range(-bound..bound)))
                .collect();
            params.insert(Parameter {
                name: format!("{}.weight", slot.name),
                shape: vec![slot.fan_in, slot.fan_out],
                values: w,
                trainable: true,
                decay: slot.decay,
            })?;
            params.insert(Parameter {
                name: format!("{}.bias", slot.name),
                shape: vec![slot.fan_out],
                values: vec![T::zero(); slot.fan_out],
                trainable: true,
                decay: false,
            })?;
        }
        Self::from_params(config, params)
    }

    /// Wraps an existing parameter store, checking names and shapes.
    pub fn from_params(config: ImPstNetConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let lin = |name: &str, fan_in: usize, fan_out: usize| -> Result<Linear> {
            let find = |n: String, shape: Vec<usize>| -> Result<usize> {
                let id = params
                    .id(&n)
                    .ok_or_else(|| Error::Data(format!("missing parameter {n}")))?;
                if params.by_id(id).shape != shape {
                    return Err(Error::Dimension(format!(
                        "parameter {n} has shape {:?}, config implies {shape:?}",
                        params.by_id(id).shape
                    )));
                }
                Ok(id)
            };
            Ok(Linear {
                weight: find(format!("{name}.weight"), vec![fan_in, fan_out])?,
                bias: find(format!("{name}.bias"), vec![fan_out])?,
            })
        };
        let slots = layout(&config);
        let mut it = slots.iter();
        let mut stage_layers = Vec::with_capacity(config.stages.len());
        for st in &config.stages {
            let mut layers = Vec::with_capacity(st.mlp_widths.len());
            for _ in &st.mlp_widths {
                let s = it.next().expect("layout covers every layer");
                layers.push(lin(&s.name, s.fan_in, s.fan_out)?);
            }
            stage_layers.push(layers);
        }
        let mut head = || {
            let s = it.next().expect("layout covers heads");
            lin(&s.name, s.fan_in, s.fan_out)
        };
        let (cls_head, proj_head, rgb_head) = (head()?, head()?, head()?);
        if params.len() != 2 * slots.len() {
            return Err(Error::Data(format!(
                "parameter store has {} entries, config implies {}",
                params.len(),
                2 * slots.len()
            )));
        }
        Ok(Self {
            config,
            params,
            stage_layers,
            cls_head,
            proj_head,
            rgb_head,
        })
    }

    pub fn cast<U: Scalar>(&self) -> ImPstNet<U> {
        ImPstNet {
            config: self.config.clone(),
            params: self.params.cast(),
            stage_layers: self.stage_layers.clone(),
            cls_head: self.cls_head,
            proj_head: self.proj_head,
            rgb_head: self.rgb_head,
        }
    }

    pub fn stage_layers(&self, s: usize) -> &[Linear] {
        &self.stage_layers[s]
    }

    pub fn plan(&self, frames: &[Vec<Point>]) -> Result<VideoPlan> {
        VideoPlan::new(frames, &self.config)
    }

    /// Builds the full forward pass for one video on `g`. `vars` are the
    /// parameters bound with [`ParamStore::bind`].
    pub fn forward_graph(&self, g: &mut Graph<T>, vars: &[Var], plan: &VideoPlan) -> Result<ForwardOutput> {
        if plan.stages.len() != self.stage_layers.len() {
            return Err(Error::Dimension(format!(
                "plan has {} stages, model has {}",
                plan.stages.len(),
                self.stage_layers.len()
            )));
        }
        let mut feats: Option<Var> = None;
        for (sp, layers) in plan.stages.iter().zip(&self.stage_layers) {
            let include = feats.is_some() && self.config.include_center_feature;
            feats = Some(im_pstconv(g, vars, layers, feats, sp, include)?);
        }
        let feats = feats.expect("at least one stage");
        let (pooled, _) = g.max_reduce(feats, 0)?;
        let width = g.value(pooled).len();
        let pooled = g.reshape(pooled, &[1, width])?;
        let logits = self.cls_head.apply(g, vars, pooled)?;
        let proj = self.proj_head.apply(g, vars, pooled)?;
        let embedding = g.l2_normalize(proj)?;
        Ok(ForwardOutput {
            logits,
            embedding,
            pooled,
        })
    }

    /// RGB head over a `n × video_dim` matrix of frozen video embeddings.
    pub fn rgb_logits_graph(&self, g: &mut Graph<T>, vars: &[Var], video: Var) -> Result<Var> {
        self.rgb_head.apply(g, vars, video)
    }

    pub fn forward_planned(&self, plan: &VideoPlan) -> Result<Prediction<T>> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g)?;
        let out = self.forward_graph(&mut g, &vars, plan)?;
        Ok(Prediction {
            logits: g.value(out.logits).to_vec(),
            embedding: g.value(out.embedding).to_vec(),
        })
    }

    pub fn forward(&self, frames: &[Vec<Point>]) -> Result<Prediction<T>> {
        self.forward_planned(&self.plan(frames)?)
    }

    pub fn rgb_logits(&self, video_embedding: &[T]) -> Result<Vec<T>> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g)?;
        let v = g.constant(&[1, video_embedding.len()], video_embedding.to_vec())?;
        let y = self.rgb_logits_graph(&mut g, &vars, v)?;
        Ok(g.value(y).to_vec())
    }

    /// Writes `<stem>.vg4dckpt` and `<stem>.json` (config sidecar).
    pub fn save(&self, checkpoint: &Path, config: &Path) -> Result<()> {
        self.params.save(checkpoint)?;
        let json = serde_json::to_string_pretty(&self.config).expect("config serializes");
        crate::io::write_file(config, json.as_bytes())
    }

    pub fn load(checkpoint: &Path, config: &Path) -> Result<Self> {
        let bytes = crate::io::read_file(config)?;
        let cfg: ImPstNetConfig = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Config(format!("{}: {e}", config.display())))?;
        let mut net = Self::new(cfg, 0)?;
        net.params.load(checkpoint)?;
        Ok(net)
    }
}
