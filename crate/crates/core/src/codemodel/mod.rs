//! Code models: extraction from raw LLM replies, the failure taxonomy, and
//! execution through either the in-process expression dialect or the
//! external guest runner.

pub mod expr;
pub mod guest;

use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
pub use expr::{parse_expression_model, DivisionGuard, EvalFault, ExprError, ExprProgram};
pub use guest::{GuestRunner, RunnerCommand, RunnerPool, RunnerResponse, RunnerStatus};

/// Default per-request limit handed to the guest runner.
pub const DEFAULT_TIME_LIMIT_MS: u64 = 5_000;

/// Top-level modules guest code may import.
pub const GUEST_IMPORT_ALLOWLIST: &[&str] = &[
    "numpy",
    "pandas",
    "math",
    "statistics",
    "typing",
    "functools",
    "itertools",
    "collections",
    "decimal",
    "fractions",
    "operator",
];

/// Per-row probability that the label is 1.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PredictionVector(Vec<f64>);

impl PredictionVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn row_count(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for PredictionVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for PredictionVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dialect {
    /// A Python `predict(x)` function run by the guest runner.
    #[default]
    Guest,
    /// The built-in expression dialect, evaluated in process.
    Expression,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub dataset_id: String,
    pub seed: u64,
    pub n_train: usize,
    pub generation_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeModel {
    pub raw_response: String,
    /// `None` when nothing survived extraction.
    pub source: Option<String>,
    pub dialect: Dialect,
    pub meta: ModelMeta,
}

impl CodeModel {
    /// Wraps a reply, keeping only the largest fenced code block if any.
    pub fn from_response(raw: impl Into<String>, dialect: Dialect, meta: ModelMeta) -> Self {
        let raw_response = raw.into();
        let source = extract_source(&raw_response).ok();
        Self { raw_response, source, dialect, meta }
    }

    /// Uses the reply as-is, with no fence stripping.
    pub fn verbatim(raw: impl Into<String>, dialect: Dialect, meta: ModelMeta) -> Self {
        let raw_response = raw.into();
        let source = (!raw_response.trim().is_empty()).then(|| raw_response.clone());
        Self { raw_response, source, dialect, meta }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("reply contains no code")]
pub struct EmptySource;

/// Returns the interior of the largest fenced code block (first one wins
/// on equal length), or the whole reply trimmed when there is no fence.
pub fn extract_source(raw: &str) -> Result<String, EmptySource> {
    let mut blocks: Vec<String> = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in raw.lines() {
        let is_fence = line.trim_start().starts_with("```");
        match (&mut current, is_fence) {
            (None, true) => current = Some(Vec::new()),
            (Some(lines), true) => {
                blocks.push(lines.join("\n"));
                current = None;
            }
            (Some(lines), false) => lines.push(line),
            (None, false) => {}
        }
    }
    if let Some(unclosed) = current {
        blocks.push(unclosed.join("\n"));
    }
    let picked = if blocks.is_empty() {
        raw.trim().to_string()
    } else {
        let longest = blocks.iter().map(|b| b.trim().len()).max().unwrap_or(0);
        blocks
            .into_iter()
            .find(|b| b.trim().len() == longest)
            .map(|b| b.trim().to_string())
            .unwrap_or_default()
    };
    if picked.is_empty() {
        Err(EmptySource)
    } else {
        Ok(picked)
    }
}

/// Finds the first import of a module outside [`GUEST_IMPORT_ALLOWLIST`].
/// Dynamic import hooks count as forbidden.
pub fn forbidden_import(source: &str) -> Option<String> {
    for line in source.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        let modules: Vec<&str> = if let Some(rest) = line.strip_prefix("import ") {
            rest.split(',').filter_map(|part| part.split_whitespace().next()).collect()
        } else if let Some(rest) = line.strip_prefix("from ") {
            rest.split_whitespace().next().into_iter().collect()
        } else {
            Vec::new()
        };
        for module in modules {
            let top = module.split('.').next().unwrap_or(module);
            if top.is_empty() || !GUEST_IMPORT_ALLOWLIST.contains(&top) {
                return Some(module.to_string());
            }
        }
        for hook in ["__import__", "importlib"] {
            if line.contains(hook) {
                return Some(hook.to_string());
            }
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationStatus {
    Ok,
    /// Nothing usable could be extracted, parsed or imported.
    ParseFailure,
    /// The model raised, faulted, or returned the wrong number or kind of values.
    RuntimeFailure,
    /// Numeric output that is non-finite or outside [0, 1].
    InvalidOutput,
}

impl fmt::Display for ValidationStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValidationStatus::Ok => "ok",
            ValidationStatus::ParseFailure => "parse_failure",
            ValidationStatus::RuntimeFailure => "runtime_failure",
            ValidationStatus::InvalidOutput => "invalid_output",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub status: ValidationStatus,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offending_rows: Option<Vec<usize>>,
}

impl ValidationReport {
    fn new(status: ValidationStatus, detail: impl Into<String>) -> Self {
        Self { status, detail: detail.into(), offending_rows: None }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ValidationStatus::Ok
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExecError {
    #[error("guest dialect needs a runner")]
    RunnerUnavailable,
    #[error("cannot load model: {0}")]
    Parse(String),
    #[error("model failed: {detail}")]
    Runtime { detail: String, rows: Vec<usize> },
}

impl ExecError {
    fn into_report(self) -> ValidationReport {
        match self {
            ExecError::RunnerUnavailable => {
                ValidationReport::new(ValidationStatus::RuntimeFailure, "guest runner unavailable")
            }
            ExecError::Parse(detail) => ValidationReport::new(ValidationStatus::ParseFailure, detail),
            ExecError::Runtime { detail, rows } => ValidationReport {
                status: ValidationStatus::RuntimeFailure,
                detail,
                offending_rows: (!rows.is_empty()).then_some(rows),
            },
        }
    }
}

/// A code model ready to score datasets that share its feature names.
pub enum LoadedModel<'r> {
    Expression(ExprProgram),
    Guest { runner: &'r mut GuestRunner, feature_names: Vec<String>, time_limit_ms: u64 },
}

impl fmt::Debug for LoadedModel<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LoadedModel::Expression(p) => f.debug_tuple("Expression").field(p).finish(),
            LoadedModel::Guest { feature_names, .. } => f.debug_struct("Guest").field("feature_names", feature_names).finish(),
        }
    }
}

/// Parses (expression) or imports (guest) the model's source.
pub fn load<'r>(
    cm: &CodeModel,
    feature_names: &[String],
    runner: Option<&'r mut GuestRunner>,
    time_limit_ms: u64,
) -> Result<LoadedModel<'r>, ExecError> {
    let source = cm.source.as_deref().ok_or_else(|| ExecError::Parse(EmptySource.to_string()))?;
    match cm.dialect {
        Dialect::Expression => parse_expression_model(source, feature_names)
            .map(LoadedModel::Expression)
            .map_err(|e| ExecError::Parse(e.to_string())),
        Dialect::Guest => {
            if let Some(module) = forbidden_import(source) {
                return Err(ExecError::Parse(format!("forbidden import: {module}")));
            }
            let runner = runner.ok_or(ExecError::RunnerUnavailable)?;
            let reply = runner.load(source);
            match reply.status {
                RunnerStatus::Ok => Ok(LoadedModel::Guest {
                    runner,
                    feature_names: feature_names.to_vec(),
                    time_limit_ms,
                }),
                RunnerStatus::ParseFailure => Err(ExecError::Parse(reply.detail)),
                RunnerStatus::RuntimeFailure => Err(ExecError::Runtime { detail: reply.detail, rows: Vec::new() }),
            }
        }
    }
}

impl LoadedModel<'_> {
    /// One value per row, in dataset order. Values are not range-checked.
    pub fn predict(&mut self, ds: &Dataset) -> Result<PredictionVector, ExecError> {
        match self {
            LoadedModel::Expression(program) => {
                let mut values = Vec::with_capacity(ds.n_rows());
                let mut faults = Vec::new();
                let mut first_fault = None;
                for (i, row) in ds.rows().enumerate() {
                    match program.try_eval(row) {
                        Ok(v) => values.push(v),
                        Err(fault) => {
                            first_fault.get_or_insert(fault);
                            faults.push(i);
                            values.push(f64::NAN);
                        }
                    }
                }
                match first_fault {
                    None => Ok(PredictionVector(values)),
                    Some(fault) => Err(ExecError::Runtime {
                        detail: format!("{fault} on {} of {} rows", faults.len(), ds.n_rows()),
                        rows: faults,
                    }),
                }
            }
            LoadedModel::Guest { runner, feature_names, time_limit_ms } => {
                if ds.feature_names() != feature_names.as_slice() {
                    return Err(ExecError::Runtime {
                        detail: "dataset features differ from the loaded model's".into(),
                        rows: Vec::new(),
                    });
                }
                let rows: Vec<&[f64]> = ds.rows().collect();
                let reply = runner.predict(feature_names, &rows, *time_limit_ms);
                match reply.status {
                    RunnerStatus::Ok if reply.values.len() == ds.n_rows() => Ok(PredictionVector(reply.values)),
                    RunnerStatus::Ok => Err(ExecError::Runtime {
                        detail: format!("model returned {} values for {} rows", reply.values.len(), ds.n_rows()),
                        rows: Vec::new(),
                    }),
                    RunnerStatus::ParseFailure => Err(ExecError::Parse(reply.detail)),
                    RunnerStatus::RuntimeFailure => Err(ExecError::Runtime { detail: reply.detail, rows: Vec::new() }),
                }
            }
        }
    }
}

/// Loads and runs `cm` on every row of `ds`.
pub fn execute(cm: &CodeModel, ds: &Dataset, runner: Option<&mut GuestRunner>) -> Result<PredictionVector, ExecError> {
    load(cm, ds.feature_names(), runner, DEFAULT_TIME_LIMIT_MS)?.predict(ds)
}

/// Classifies already-computed predictions: `ok` iff every value is a
/// finite probability.
pub fn check_predictions(values: &[f64]) -> ValidationReport {
    let bad: Vec<usize> = values
        .iter()
        .enumerate()
        .filter(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        .map(|(i, _)| i)
        .collect();
    if bad.is_empty() {
        return ValidationReport::new(ValidationStatus::Ok, format!("{} rows in [0, 1]", values.len()));
    }
    let non_finite = bad.iter().filter(|&&i| !values[i].is_finite()).count();
    let detail = format!(
        "{} of {} predictions are not probabilities ({} non-finite, {} out of range)",
        bad.len(),
        values.len(),
        non_finite,
        bad.len() - non_finite
    );
    ValidationReport { status: ValidationStatus::InvalidOutput, detail, offending_rows: Some(bad) }
}

/// Runs `cm` on `probe` and classifies the outcome.
pub fn validate(cm: &CodeModel, probe: &Dataset, runner: Option<&mut GuestRunner>) -> ValidationReport {
    validate_with_limit(cm, probe, runner, DEFAULT_TIME_LIMIT_MS)
}

pub fn validate_with_limit(
    cm: &CodeModel,
    probe: &Dataset,
    runner: Option<&mut GuestRunner>,
    time_limit_ms: u64,
) -> ValidationReport {
    let outcome = load(cm, probe.feature_names(), runner, time_limit_ms).and_then(|mut m| m.predict(probe));
    match outcome {
        Ok(values) => check_predictions(&values),
        Err(e) => e.into_report(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FeatureKind;

    fn meta() -> ModelMeta {
        ModelMeta { dataset_id: "moons".into(), seed: 3655, n_train: 10, generation_index: 0 }
    }

    fn moons_rows(rows: Vec<Vec<f64>>) -> Dataset {
        let n = rows.len();
        Dataset::new(
            "moons",
            vec!["Feature_1".into(), "Feature_2".into()],
            vec![FeatureKind::Continuous; 2],
            rows,
            (0..n).map(|i| (i % 2) as u8).collect(),
        )
        .unwrap()
    }

    #[test]
    fn extracts_fenced_interior() {
        let raw = "Here is the code:\n```python\nimport numpy as np\nx = 1\n```\nHope it helps.";
        assert_eq!(extract_source(raw).unwrap(), "import numpy as np\nx = 1");
    }

    #[test]
    fn bare_code_is_unchanged() {
        let raw = "sigmoid(0.4 * Feature_1 - 0.6 * Feature_2)";
        assert_eq!(extract_source(raw).unwrap(), raw);
    }

    #[test]
    fn picks_longest_block() {
        let raw = "```\nshort\n```\ntext\n```py\nmuch longer block\n```\n```\nmuch longer bloc2\n```";
        assert_eq!(extract_source(raw).unwrap(), "much longer block");
    }

    #[test]
    fn empty_extraction_fails() {
        assert_eq!(extract_source("   \n"), Err(EmptySource));
        assert_eq!(extract_source("```\n```"), Err(EmptySource));
        assert!(CodeModel::from_response("``` \n\n```", Dialect::Expression, meta()).source.is_none());
    }

    #[test]
    fn extraction_is_idempotent_on_examples() {
        for raw in ["a\n```\nb\n```\nc", "  x + 1 \n", "```\nunclosed\nblock"] {
            let once = extract_source(raw).unwrap();
            assert_eq!(extract_source(&once).unwrap(), once);
        }
    }

    #[test]
    fn import_allowlist() {
        assert_eq!(forbidden_import("import numpy as np\nimport pandas as pd\n"), None);
        assert_eq!(forbidden_import("from math import exp"), None);
        assert_eq!(forbidden_import("import numpy as np, sklearn"), Some("sklearn".into()));
        assert_eq!(
            forbidden_import("from sklearn.linear_model import LogisticRegression"),
            Some("sklearn.linear_model".into())
        );
        assert_eq!(forbidden_import("    import torch"), Some("torch".into()));
        assert_eq!(forbidden_import("m = __import__('os')"), Some("__import__".into()));
        assert_eq!(forbidden_import("# import sklearn is not allowed"), None);
    }

    #[test]
    fn expression_execution_shape_and_values() {
        let ds = moons_rows(vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![-1.0, 1.0]]);
        let cm = CodeModel::from_response("clamp(0.5 + 0.3*Feature_1 - 0.2*Feature_2)", Dialect::Expression, meta());
        let p = execute(&cm, &ds, None).unwrap();
        assert_eq!(p.row_count(), 3);
        assert_eq!(p[0], 0.5);
        assert_eq!(p[1], 1.0);
        assert!((p[2] - 0.0).abs() < 1e-12);
    }

    #[test]
    fn guest_without_runner() {
        let ds = moons_rows(vec![vec![0.0, 0.0]]);
        let cm = CodeModel::from_response("def predict(x):\n    return x", Dialect::Guest, meta());
        assert_eq!(execute(&cm, &ds, None), Err(ExecError::RunnerUnavailable));
        assert_eq!(validate(&cm, &ds, None).status, ValidationStatus::RuntimeFailure);
        let banned = CodeModel::from_response("import sklearn\ndef predict(x): pass", Dialect::Guest, meta());
        let report = validate(&banned, &ds, None);
        assert_eq!(report.status, ValidationStatus::ParseFailure);
        assert!(report.detail.contains("sklearn"));
    }

    #[test]
    fn validation_taxonomy() {
        let ds = moons_rows(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![3.0, 0.0]]);
        let check = |src: &str| validate(&CodeModel::from_response(src, Dialect::Expression, meta()), &ds, None);
        assert!(check("sigmoid(Feature_1)").is_ok());
        assert_eq!(check("def predict(x):").status, ValidationStatus::ParseFailure);
        assert_eq!(check("Feature_3").status, ValidationStatus::ParseFailure);
        assert_eq!(check("").status, ValidationStatus::ParseFailure);

        let div = check("1 / Feature_2");
        assert_eq!(div.status, ValidationStatus::RuntimeFailure);
        assert_eq!(div.offending_rows, Some(vec![0, 1, 2]));

        let over = check("Feature_1 / 2");
        assert_eq!(over.status, ValidationStatus::InvalidOutput);
        assert_eq!(over.offending_rows, Some(vec![2]));

        let inf = check("exp(1000 * Feature_1)");
        assert_eq!(inf.status, ValidationStatus::InvalidOutput);
    }

    #[test]
    fn nan_is_invalid_output() {
        let report = check_predictions(&[0.5, f64::NAN, 1.2, -0.1]);
        assert_eq!(report.status, ValidationStatus::InvalidOutput);
        assert_eq!(report.offending_rows, Some(vec![1, 2, 3]));
        assert!(check_predictions(&[0.0, 1.0]).is_ok());
    }
}
