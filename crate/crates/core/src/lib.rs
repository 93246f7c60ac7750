//! Point-cloud-video action recognition with an im-PSTNet encoder, contrastive
//! alignment against frozen vision-language embeddings, and four-score
//! ensemble inference.

// `!(x >= 0.0)` style checks are kept so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod data;
pub mod error;
pub mod geom;
pub mod infer;
mod io;
pub mod model;
pub mod tensor;
pub mod verify;

pub use error::{Error, ErrorCategory, Result};
pub use geom::{FrameCloud, Point};
pub use tensor::{Graph, ParamStore, Scalar, Var};
