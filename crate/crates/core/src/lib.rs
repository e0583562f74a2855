//! No-reference video quality assessment on pre-extracted frame features.
//!
//! Frame-level mean and standard-deviation features pass through a
//! temporal-variance attention and a GRU into two heads. The first pools the
//! hidden states over a temporal pyramid and regresses a score. The second
//! scores the averaged hidden state under a learnable Gaussian prior, and a
//! small discriminator pushes that feature distribution toward the prior. Everything runs on a small reverse-mode autodiff tape
//! over `f64` matrices.

pub mod adam;
pub mod attention;
pub mod autograd;
pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod features;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod params;
pub mod pyramid;
pub mod regularizer;
pub mod synthetic;
pub mod trainer;

pub use autograd::{Graph, Matrix, Var};
pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use features::{DatasetManifest, FeatureSequence, MosScaler};
pub use harness::{EvalReport, RunConfig};
pub use metrics::{LogisticFit, krocc, logistic_fit, plcc_rmse, srocc};
pub use params::{Layout, ModelParams};
pub use synthetic::SyntheticSpec;
pub use trainer::{Ablation, TrainConfig, TrainLog, Trainer, train};
