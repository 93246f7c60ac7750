//! The im-PSTNet encoder: a per-frame spatial extractor followed by stacked
//! point-tube convolutions, global max-pooling, a classification head and a
//! projection head onto the unit hypersphere.

mod config;
mod net;
mod plan;

pub use config::{ImPstNetConfig, StageConfig};
pub use net::{
    im_pstconv, mlp, spatial_extract, ForwardOutput, ImPstNet, Linear, Prediction, PROJ_HEAD_PREFIX,
    RGB_HEAD_PREFIX,
};
pub use plan::{StagePlan, VideoPlan};

#[cfg(test)]
mod tests;
