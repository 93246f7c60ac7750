//! Cross-modal alignment: frozen embedding stores, contrastive objectives,
//! learning-rate schedules and the training loops.

mod embed;
mod loss;
mod schedule;
mod train;

pub use embed::*;
pub use loss::*;
pub use schedule::*;
pub use train::*;
