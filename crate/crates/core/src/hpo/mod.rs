//! Hyperparameter search: sampling, study execution, MDI importance and marginal reports.

mod forest;
mod report;
mod sampler;
mod space;
mod study;

pub use forest::{mdi_importance, ForestConfig, ImportanceReport};
pub use report::{study_two_report, Marginal, StudyTwoReport, TOP_K};
pub use sampler::{sample_random, sample_tpe, TpeConfig};
pub use space::{ParamKind, ParamSpec, ParamValue, Sample, SearchSpace};
pub use study::{run_study, RunOutcome, SamplerKind, StudyConfig, TrialRecord};
