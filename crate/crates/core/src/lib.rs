//! Mean plus robust standard deviation: joint minimisation of a smooth robust
//! risk criterion over model weights, a threshold and a scale.

pub mod criteria;
pub mod data;
pub mod error;
pub mod harness;
pub mod model;
pub mod optimizer;
pub mod rho;
pub mod verify;

pub use criteria::{CriterionKind, CriterionParams, JointState, ObjectiveEval};
pub use data::{Dataset, Split};
pub use error::{Error, Result};
pub use model::{LinearModel, LossBatch};
pub use optimizer::{OptConfig, OptMode, RunResult};
