//! Training-free visual token budgeting and early dropping for tiled
//! high-resolution vision-language inputs.
//!
//! The pipeline for one image: [`scoring`] rates each tile by visual
//! saliency and textual relevance, [`budgeting`] turns a retention ratio into
//! a thumbnail quota plus per-tile quotas, [`selection`] keeps the patches
//! with the highest layer-averaged CLS attention, and [`efficiency`] prices
//! the result in prefill FLOPs and KV-cache bytes. [`analysis`] reproduces
//! the layerwise attention studies, [`synth`] generates planted test traces.

pub mod analysis;
pub mod budgeting;
pub mod cli;
pub mod container;
pub mod efficiency;
pub mod error;
pub mod math;
pub mod pipeline;
pub mod scoring;
pub mod selection;
pub mod synth;
pub mod tensor;
pub mod tiling;
pub mod trace;

pub use error::{Error, Result};
pub use tensor::Tensor;
pub use trace::{ImageTrace, RegionTrace};
