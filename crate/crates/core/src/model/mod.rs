//! Network assembly and static analysis.

mod analyze;
mod blocks;
mod config;
mod net;

pub use analyze::{analyze, AnalysisReport, RfState, StageRow};
pub use config::{CdcConfig, InceptionBlockConfig, ModelConfig};
pub use net::{predict_image, AvNet};
