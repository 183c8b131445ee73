//! Inductive-bias learning: prompt an LLM with tabular training data,
//! get back code that maps a feature row to a probability, then validate,
//! select and benchmark those code models.

pub mod baselines;
pub mod codemodel;
pub mod dataset;
pub mod evaluation;
pub mod experiment;
pub mod gateway;
pub mod numfmt;
pub mod prompting;

pub use baselines::{LinearKind, LinearModel};
pub use codemodel::expr::{parse_expression_model, ExprProgram};
pub use codemodel::{CodeModel, Dialect, ModelMeta, PredictionVector, ValidationReport, ValidationStatus};
pub use dataset::{Dataset, FeatureKind, DEFAULT_SEEDS};
pub use evaluation::{auc, CellKey, Method, Outcome, ResultRecord};
pub use experiment::{run_suite, DatasetSpec, ExperimentConfig, Selection};
pub use gateway::{AttemptTag, BackendConfig, BackendKind, CompletionBackend, CompletionRequest};
pub use prompting::{PromptTemplate, RenderedPrompt};
