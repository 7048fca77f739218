pub mod config;
pub mod error;
pub mod estimate;
pub mod geometry;
pub mod image;
pub mod ingest;
pub mod mesh;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod render;
pub mod smoothing;
pub mod synth;
pub mod tps;
pub mod trajectory;

pub use error::{Error, Result};

/// Zero-padded output file name of frame `t`.
pub fn frame_name(t: usize) -> String {
    format!("{t:06}.png")
}
