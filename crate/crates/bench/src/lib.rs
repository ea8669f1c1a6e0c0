//! Benchmark harness: stratified splits, correlation reports per subset,
//! cross-dataset evaluation of the learned scorer, and synthetic study
//! corpora for end-to-end runs.

pub mod cross;
pub mod error;
pub mod evaluate;
pub mod pipeline;
pub mod render;
pub mod scorer;
pub mod split;
pub mod synth;

pub use error::{BenchError, Result};
pub use evaluate::{correlate, evaluate, EvalOptions, SubsetFilter};
pub use render::{render_markdown, render_report};
pub use split::{split_dataset, SplitOptions, SplitSpec};
