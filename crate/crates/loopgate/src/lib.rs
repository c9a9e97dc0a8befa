//! File formats, configuration, dataset loading and stage composition for the
//! `loopgate` command-line tool.

pub mod config;
pub mod dataset;
pub mod formats;
pub mod pipeline;

pub use config::PipelineConfig;
pub use dataset::{load_kitti_style, load_manifest, write_dataset, Dataset};
pub use pipeline::Mode;
