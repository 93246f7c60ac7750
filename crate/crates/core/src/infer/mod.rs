//! Test-time scoring, four-channel score fusion, evaluation reports and the
//! additive ablation harness.

mod ablation;
mod fusion;
mod score;

pub use ablation::{ablation_csv, ablation_run, pc_accuracy, AblationBase, AblationRow, ABLATION_TOGGLES};
pub use fusion::{fuse, ChannelMask, FusionWeights, TABLE_MASKS};
pub use score::{evaluate, evaluate_scores, score_sample, score_split, softmax, EvalReport, ScoreBundle, ScoredSample};
