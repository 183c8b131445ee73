//! Prompt rendering for code-model generation and per-row in-context
//! prediction.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetError, TARGET_COLUMN};
use crate::numfmt::format_decimal;

pub const DATA_PLACEHOLDER: &str = "{{DATA}}";
pub const SKELETON_MARKER: &str = "{{SKELETON}}";

pub const SENTINEL_BEFORE: &str = "# Do not change the code before this point.";
pub const BODY_MARKER: &str = "# Please describe the process required to make the prediction below.";
pub const SENTINEL_AFTER: &str = "# Do not change the code after this point.";

/// Decimal places used when rows are written into a prompt.
pub const PROMPT_DECIMALS: u32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("template instruction must contain {DATA_PLACEHOLDER} exactly once (found {0})")]
    Placeholder(usize),
    #[error("template skeleton must contain `{sentinel}` exactly once (found {count})")]
    Sentinel { sentinel: &'static str, count: usize },
    #[error("cannot serialize an empty dataset")]
    EmptyDataset,
    #[error("query features {query:?} do not match training features {train:?}")]
    FeatureMismatch { train: Vec<String>, query: Vec<String> },
    #[error("query row {row} out of range ({n_rows} rows)")]
    QueryRow { row: usize, n_rows: usize },
    #[error("reading template: {0}")]
    Io(#[from] std::io::Error),
}

const SYSTEM_TEXT: &str = "You are a careful data scientist who writes small, self-contained \
prediction code from tabular data.";

const GUEST_INSTRUCTION: &str = "The table below is a training set for binary classification. \
Each line is one sample; the last column, `target`, is the label (0 or 1).

{{DATA}}

Complete the Python function that follows so that, for every row of the input data frame, \
it appends the probability that `target` is 1 for that row. The probability must be a \
number between 0 and 1.
Derive the rule yourself from the data above. Do not use existing machine learning model \
libraries such as scikit-learn, LightGBM, XGBoost, statsmodels, PyTorch or TensorFlow; \
numpy, pandas and math are fine.
Only edit the region between the marked comments. Reply with the completed function only, \
with no explanation before or after it.";

const GUEST_SKELETON: &str = "import numpy as np
import pandas as pd

def predict(x):
    df = x.copy()
    output = []
    for index, row in df.iterrows():
        # Do not change the code before this point.
        # Please describe the process required to make the prediction below.

        # Do not change the code after this point.
        output.append(y)
    return np.array(output)
";

const EXPRESSION_INSTRUCTION: &str = "The table below is a training set for binary classification. \
Each line is one sample; the last column, `target`, is the label (0 or 1).

{{DATA}}

Write a single prediction formula that gives the probability that `target` is 1 for one row. \
The result must be a number between 0 and 1.
Use only this language: numbers; feature names (or row['name']); + - * /; parentheses; \
abs, exp, sigmoid, clamp (which limits a value to [0, 1]), min and max; \
`if a < b then x else y` with <, <=, >, >=, == or !=; and `let name = expression;` \
for intermediate values. Lines starting with # are comments.
Derive the formula yourself from the data above. Do not use or imitate a call to an existing \
machine learning model library.
Only write between the marked comments. Reply with the completed block only, with no \
explanation before or after it.";

const EXPRESSION_SKELETON: &str = "# Do not change the code before this point.
# Please describe the process required to make the prediction below.

# Do not change the code after this point.
";

/// Instruction text with a data slot, plus the scaffold the model fills in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    system_text: String,
    instruction_text: String,
    skeleton: String,
}

impl PromptTemplate {
    pub fn new(
        system_text: impl Into<String>,
        instruction_text: impl Into<String>,
        skeleton: impl Into<String>,
    ) -> Result<Self, PromptError> {
        let tmpl = Self {
            system_text: system_text.into(),
            instruction_text: instruction_text.into(),
            skeleton: skeleton.into(),
        };
        let placeholders = tmpl.instruction_text.matches(DATA_PLACEHOLDER).count();
        if placeholders != 1 {
            return Err(PromptError::Placeholder(placeholders));
        }
        for sentinel in [SENTINEL_BEFORE, SENTINEL_AFTER] {
            let count = tmpl.skeleton.matches(sentinel).count();
            if count != 1 {
                return Err(PromptError::Sentinel { sentinel, count });
            }
        }
        Ok(tmpl)
    }

    /// Asks for a guest-language `predict` function.
    pub fn guest() -> Self {
        Self::new(SYSTEM_TEXT, GUEST_INSTRUCTION, GUEST_SKELETON).expect("built-in template is valid")
    }

    /// Asks for a program in the expression dialect.
    pub fn expression() -> Self {
        Self::new(SYSTEM_TEXT, EXPRESSION_INSTRUCTION, EXPRESSION_SKELETON).expect("built-in template is valid")
    }

    /// Parses the template file format: instruction text containing
    /// `{{DATA}}`, then a line holding only `{{SKELETON}}`, then the
    /// skeleton. The system text is the built-in one.
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let mut instruction = String::new();
        let mut skeleton = String::new();
        let mut in_skeleton = false;
        for line in text.split_inclusive('\n') {
            if !in_skeleton && line.trim() == SKELETON_MARKER {
                in_skeleton = true;
                continue;
            }
            if in_skeleton {
                skeleton.push_str(line);
            } else {
                instruction.push_str(line);
            }
        }
        Self::new(SYSTEM_TEXT, instruction.trim_end(), skeleton)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PromptError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn system_text(&self) -> &str {
        &self.system_text
    }

    pub fn instruction_text(&self) -> &str {
        &self.instruction_text
    }

    pub fn skeleton(&self) -> &str {
        &self.skeleton
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub system_text: String,
    pub user_text: String,
    pub token_estimate: usize,
}

impl RenderedPrompt {
    fn new(system_text: String, user_text: String) -> Self {
        let chars = system_text.chars().count() + user_text.chars().count();
        Self { system_text, user_text, token_estimate: token_estimate(chars) }
    }
}

/// Rough token count: one token per four characters, rounded up. Only used
/// for budget warnings.
pub fn token_estimate(chars: usize) -> usize {
    chars.div_ceil(4)
}

/// Header of feature names plus `target`, then one line per row. Values
/// are written with at most three decimals and never in exponent form.
pub fn serialize_rows(ds: &Dataset) -> Result<String, PromptError> {
    if ds.is_empty() {
        return Err(PromptError::EmptyDataset);
    }
    let mut out = header_line(ds.feature_names());
    out.push(',');
    out.push_str(TARGET_COLUMN);
    for (row, label) in ds.rows().zip(ds.labels()) {
        out.push('\n');
        out.push_str(&value_line(row));
        write!(out, ",{label}").unwrap();
    }
    Ok(out)
}

/// Inverse of [`serialize_rows`]; all features come back as continuous.
pub fn parse_serialized_rows(id: &str, text: &str) -> Result<Dataset, DatasetError> {
    Dataset::read_csv(id, text.as_bytes())
}

fn header_line(names: &[String]) -> String {
    names.join(",")
}

fn value_line(values: &[f64]) -> String {
    values
        .iter()
        .map(|&v| format_decimal(v, PROMPT_DECIMALS))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn render_ibl_prompt(train: &Dataset, tmpl: &PromptTemplate) -> Result<RenderedPrompt, PromptError> {
    let data = serialize_rows(train)?;
    let mut user = tmpl.instruction_text.replacen(DATA_PLACEHOLDER, &data, 1);
    user.push_str("\n\n");
    user.push_str(&tmpl.skeleton);
    Ok(RenderedPrompt::new(tmpl.system_text.clone(), user))
}

/// What the in-context prompt asks the model to answer with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IclAnswer {
    #[default]
    Probability,
    Label,
}

/// Training rows with labels, then row `row` of `queries` with its label
/// left out.
pub fn render_icl_prompt(
    train: &Dataset,
    queries: &Dataset,
    row: usize,
    answer: IclAnswer,
) -> Result<RenderedPrompt, PromptError> {
    if queries.feature_names() != train.feature_names() {
        return Err(PromptError::FeatureMismatch {
            train: train.feature_names().to_vec(),
            query: queries.feature_names().to_vec(),
        });
    }
    if row >= queries.n_rows() {
        return Err(PromptError::QueryRow { row, n_rows: queries.n_rows() });
    }
    let data = serialize_rows(train)?;
    let ask = match answer {
        IclAnswer::Probability => {
            "Reply with the probability that `target` is 1 for this sample, as a bare number between 0 and 1."
        }
        IclAnswer::Label => "Reply with the predicted `target` for this sample, as a bare 0 or 1.",
    };
    let user = format!(
        "The table below is a training set for binary classification. Each line is one sample; \
the last column, `target`, is the label (0 or 1).\n\n{data}\n\n\
Here is a new sample with the same columns except `target`:\n\n{}\n{}\n\n{ask}",
        header_line(queries.feature_names()),
        value_line(queries.row(row)),
    );
    Ok(RenderedPrompt::new(SYSTEM_TEXT.to_string(), user))
}
