use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One grouping stage: FPS by `subsample_rate`, ball query of `k_nbr` points
/// within `radius`, shared MLP of `mlp_widths`, max-pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub subsample_rate: usize,
    pub radius: f64,
    pub k_nbr: usize,
    pub mlp_widths: Vec<usize>,
}

/// Encoder hyper-parameters. `stages[0]` is the per-frame spatial extractor,
/// every later stage is an im-PSTConv layer over point tubes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImPstNetConfig {
    pub stages: Vec<StageConfig>,
    pub temporal_radius: usize,
    pub num_classes: usize,
    /// Width of the projected, unit-norm embedding.
    pub embed_dim: usize,
    /// Width of the frozen video embeddings fed to the RGB head.
    pub video_dim: usize,
    /// Divide neighbour displacements by the search radius.
    pub normalize_offsets: bool,
    /// Feed the centre point's own feature to the tube MLP.
    pub include_center_feature: bool,
    /// Append the neighbour's frame displacement (in units of the temporal
    /// radius) to the tube MLP input.
    pub encode_time_offset: bool,
}

impl Default for ImPstNetConfig {
    /// Full-size settings: 9 neighbours in a 0.1 m ball at the first stage.
    fn default() -> Self {
        Self {
            stages: vec![
                StageConfig {
                    subsample_rate: 2,
                    radius: 0.1,
                    k_nbr: 9,
                    mlp_widths: vec![32, 64],
                },
                StageConfig {
                    subsample_rate: 2,
                    radius: 0.2,
                    k_nbr: 9,
                    mlp_widths: vec![128, 256],
                },
            ],
            temporal_radius: 1,
            num_classes: 60,
            embed_dim: 512,
            video_dim: 512,
            normalize_offsets: true,
            include_center_feature: true,
            encode_time_offset: true,
        }
    }
}

impl ImPstNetConfig {
    /// Small two-stage network for desk-scale runs on the synthetic data.
    pub fn micro(num_classes: usize, embed_dim: usize) -> Self {
        Self {
            stages: vec![
                // every point kept so stage-1 tubes see point correspondences
                StageConfig {
                    subsample_rate: 1,
                    radius: 0.25,
                    k_nbr: 9,
                    mlp_widths: vec![16],
                },
                StageConfig {
                    subsample_rate: 2,
                    radius: 0.15,
                    k_nbr: 2,
                    mlp_widths: vec![32, 32],
                },
            ],
            temporal_radius: 2,
            num_classes,
            embed_dim,
            video_dim: embed_dim,
            normalize_offsets: true,
            include_center_feature: true,
            encode_time_offset: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.stages.is_empty() {
            return bad("model needs at least one stage".into());
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.subsample_rate == 0 {
                return bad(format!("stages[{i}].subsample_rate must be >= 1"));
            }
            if !(s.radius > 0.0 && s.radius.is_finite()) {
                return bad(format!("stages[{i}].radius must be > 0"));
            }
            if s.k_nbr == 0 {
                return bad(format!("stages[{i}].k_nbr must be >= 1"));
            }
            if s.mlp_widths.is_empty() || s.mlp_widths.contains(&0) {
                return bad(format!("stages[{i}].mlp_widths must be non-empty and positive"));
            }
        }
        if self.num_classes == 0 {
            return bad("num_classes must be >= 1".into());
        }
        if self.embed_dim == 0 || self.video_dim == 0 {
            return bad("embed_dim and video_dim must be >= 1".into());
        }
        Ok(())
    }

    /// Points per frame left after every stage for `n` input points.
    pub fn points_after_stages(&self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.stages.len());
        let mut cur = n;
        for s in &self.stages {
            cur /= s.subsample_rate;
            out.push(cur);
        }
        out
    }

    pub fn stage_temporal_radius(&self, stage: usize) -> usize {
        if stage == 0 {
            0
        } else {
            self.temporal_radius
        }
    }

    /// Width of the final stage's features.
    pub fn feature_dim(&self) -> usize {
        *self.stages.last().and_then(|s| s.mlp_widths.last()).unwrap_or(&0)
    }

    /// Input width of stage `s`'s MLP.
    pub fn stage_input_dim(&self, s: usize) -> usize {
        let geo = 3 + usize::from(s > 0 && self.encode_time_offset && self.temporal_radius > 0);
        if s == 0 {
            return geo;
        }
        let prev = *self.stages[s - 1].mlp_widths.last().expect("validated");
        prev + if self.include_center_feature { prev } else { 0 } + geo
    }
}
