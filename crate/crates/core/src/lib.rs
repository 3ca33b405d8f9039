//! Binary choice modeling laboratory: logit models and deep ReLU networks
//! trained on synthetic data with a known choice probability function, with
//! prediction and interpretation losses, generalization bounds and economic
//! read-outs of the fitted models.

pub mod bounds;
pub mod dgp;
pub mod error;
pub mod experiment;
pub mod interpret;
pub mod metrics;
pub mod models;
pub mod numerics;
pub mod training;

pub use dgp::{sample_dataset, Dataset, DgpSpec, Scenario};
pub use error::{Error, Result};
pub use models::{ChoiceModel, MlpArch, MlpParams};
pub use numerics::{Estimate, Matrix, Rng};
pub use training::{train_erm, TrainConfig};
