//! Desk-scale synthetic benchmark: clip generation, the toy extractor and
//! the training loop.

pub mod data;
pub mod extractor;
pub mod train;

pub use data::{generate_clip, ClipVariation, SynthConfig, TextureSpec};
pub use extractor::{extract_features, extractor_backward, ForwardCache, ToyExtractorParams};
pub use train::{
    benchmark_data, chain_check_fixture, evaluate, run_data, step_objective, train_toy, BenchmarkConfig,
    ChainObjective, Dataset, Evaluation, FrameGroup, ToyConfig, TrainHyper, TrainingReport,
};
