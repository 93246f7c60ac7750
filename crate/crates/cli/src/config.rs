use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vg4d::align::{Decay, EmbedSpec, LossWeights, TrainSchedule};
use vg4d::data::{FrameSampling, SynthSpec};
use vg4d::infer::{FusionWeights, ABLATION_TOGGLES};
use vg4d::model::ImPstNetConfig;
use vg4d::{Error, Result};

/// File name of the resolved configuration written into every run directory.
pub const RESOLVED_CONFIG: &str = "config.toml";

/// Frame selection and per-frame point budget applied before the encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub sampling: FrameSampling,
    pub points_per_frame: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignmentConfig {
    pub weights: LossWeights,
    /// Multiplier on every similarity inside the contrastive losses.
    pub logit_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    /// Switched on one after another, in this order.
    pub toggles: Vec<String>,
}

/// Everything a subcommand needs. Loaded from an optional TOML file laid
/// over [`RunConfig::default`], then overridden by command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Save a checkpoint every this many epochs (0 = only the final model).
    pub checkpoint_interval: usize,
    pub synth: SynthSpec,
    pub embed: EmbedSpec,
    pub model: ImPstNetConfig,
    pub input: InputConfig,
    pub pretrain: TrainSchedule,
    pub finetune: TrainSchedule,
    pub alignment: AlignmentConfig,
    pub fusion: FusionWeights,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    /// Desk-scale settings for the synthetic motion dataset.
    fn default() -> Self {
        let synth = SynthSpec::default();
        let embed = EmbedSpec::default();
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            checkpoint_interval: 0,
            model: ImPstNetConfig::micro(synth.num_classes, embed.dim),
            input: InputConfig {
                sampling: FrameSampling::StridedThenSegment {
                    clip_len: synth.frames_per_video,
                    stride: 1,
                    segments: synth.frames_per_video,
                },
                points_per_frame: synth.points_per_frame,
            },
            pretrain: TrainSchedule::desk_pretrain(),
            finetune: TrainSchedule::desk_finetune(),
            alignment: AlignmentConfig {
                weights: LossWeights::default(),
                logit_scale: vg4d::align::DEFAULT_LOGIT_SCALE,
            },
            fusion: FusionWeights::default(),
            ablation: AblationConfig {
                toggles: ABLATION_TOGGLES.iter().map(|s| s.to_string()).collect(),
            },
            synth,
            embed,
        }
    }
}

/// Lays `over` onto `base`. Tables merge key by key, except tables carrying a
/// `mode` tag (enum variants), which replace the base wholesale, as do
/// arrays and scalars.
fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) if !o.contains_key("mode") => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// 1-based line of the first assignment or table header naming `key`.
fn find_key_line(src: &str, key: &str) -> Option<usize> {
    src.lines().position(|l| {
        let l = l.trim_start();
        let bare = l.trim_start_matches('[').trim_start();
        let name = bare.split(['=', ']', '.', ' ']).next().unwrap_or("");
        name == key && (l.contains('=') || l.starts_with('['))
    })
    .map(|i| i + 1)
}

fn last_key(path: &str) -> &str {
    path.rsplit('.').next().unwrap_or(path).split('[').next().unwrap_or(path)
}

impl RunConfig {
    /// Parses `src` (TOML) over the defaults. Errors name the offending key
    /// path and, when it can be located, its line.
    pub fn from_toml_str(src: &str, origin: &str) -> Result<Self> {
        let user: toml::Value = src
            .parse::<toml::Table>()
            .map(toml::Value::Table)
            .map_err(|e| Error::Config(format!("{origin}: {e}")))?;
        let mut merged = toml::Value::try_from(Self::default()).expect("default config serializes");
        merge(&mut merged, user);
        let cfg: Self = serde_path_to_error::deserialize(merged).map_err(|e| {
            let path = e.path().to_string();
            let key = last_key(&path).to_string();
            let inner = e.into_inner();
            // unknown keys are reported by serde with the parent path only
            let key = match inner.to_string().split('`').nth(1) {
                Some(k) if inner.to_string().starts_with("unknown field") => k.to_string(),
                _ => key,
            };
            match find_key_line(src, &key) {
                Some(line) => Error::Config(format!("{origin}: key `{path}` (line {line}): {inner}")),
                None => Error::Config(format!("{origin}: key `{path}`: {inner}")),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&src, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        self.alignment.weights.validate()?;
        self.fusion.validate()?;
        if !(self.alignment.logit_scale > 0.0 && self.alignment.logit_scale.is_finite()) {
            return Err(Error::Config(format!(
                "alignment.logit_scale must be positive, got {}",
                self.alignment.logit_scale
            )));
        }
        if self.input.points_per_frame == 0 {
            return Err(Error::Config("input.points_per_frame must be >= 1".into()));
        }
        if self.embed.dim != self.model.embed_dim || self.model.video_dim != self.embed.dim {
            return Err(Error::Config(format!(
                "embed.dim {} must equal model.embed_dim {} and model.video_dim {}",
                self.embed.dim, self.model.embed_dim, self.model.video_dim
            )));
        }
        if self.model.num_classes != self.synth.num_classes {
            return Err(Error::Config(format!(
                "model.num_classes {} differs from synth.num_classes {}",
                self.model.num_classes, self.synth.num_classes
            )));
        }
        for t in &self.ablation.toggles {
            if !ABLATION_TOGGLES.contains(&t.as_str()) {
                return Err(Error::Config(format!(
                    "ablation.toggles: unknown toggle {t:?}; expected one of {ABLATION_TOGGLES:?}"
                )));
            }
        }
        if self.pretrain.decay == Decay::Step && self.pretrain.step_size == Some(0) {
            return Err(Error::Config("pretrain.step_size must be >= 1".into()));
        }
        Ok(())
    }
}
