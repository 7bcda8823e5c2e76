//! Force-myography armband modeling and sensor placement optimization.
//!
//! The armband is a graph of pressure sensors. Windowed multi-channel
//! signals are classified with a two-layer graph-convolutional network, and
//! sensor subsets are chosen by greedy backward elimination against a
//! recognition-accuracy quantifier.
//!
//! Modules follow the data flow: [`synth`] or CSV input → [`signal`] →
//! [`dataset`] → [`models`] / [`trainer`] → [`spo`].

pub mod dataset;
pub mod error;
pub mod exec;
pub mod graph;
pub mod io;
pub mod models;
pub mod seed;
pub mod selection;
pub mod signal;
pub mod spo;
pub mod synth;
pub mod trainer;

pub use dataset::{assemble_dataset, holdout_split, split_folds, FoldPlan, WindowedDataset};
pub use error::{Error, Result};
pub use exec::Exec;
pub use graph::{ArmbandTopology, BinaryAdjacency, NormalizedAdjacency, SensorId};
pub use models::{ClassDistribution, GamNetParams, MlpParams, Model, ModelKind, ModelShape};
pub use selection::SelectionVector;
pub use signal::{PipelineConfig, RawRecording};
pub use synth::SynthConfig;
pub use trainer::{CvReport, EvalReport, TrainConfig};
