//! Ranking metrics and the result records every experiment cell produces.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("labels contain a single class")]
    SingleClass,
    #[error("score at row {0} is not finite")]
    NonFiniteScore(usize),
    #[error("label {value} at row {row} is not 0 or 1")]
    InvalidLabel { row: usize, value: u8 },
}

/// Area under the ROC curve as the Mann-Whitney statistic: the fraction of
/// (positive, negative) pairs where the positive scores higher, ties
/// counting one half. Runs in O(n log n) via midranks.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricError::NonFiniteScore(i));
    }
    if let Some(row) = labels.iter().position(|&y| y > 1) {
        return Err(MetricError::InvalidLabel { row, value: labels[row] });
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of 1-based midranks over positives.
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let midrank = (start + 1 + end) as f64 / 2.0;
        let tied_pos = order[start..end].iter().filter(|&&i| labels[i] == 1).count();
        rank_sum += midrank * tied_pos as f64;
        start = end;
    }
    let n_pos_f = n_pos as f64;
    let u = rank_sum - n_pos_f * (n_pos_f + 1.0) / 2.0;
    Ok(u / (n_pos_f * n_neg as f64))
}

/// Fraction of rows where `score >= threshold` agrees with the label.
pub fn accuracy(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    if scores.is_empty() {
        return Ok(0.0);
    }
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &y)| (s >= threshold) == (y == 1))
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ibl,
    Icl,
    Logistic,
    Knn,
    Svm,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Ibl, Method::Icl, Method::Logistic, Method::Knn, Method::Svm];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ibl => "ibl",
            Method::Icl => "icl",
            Method::Logistic => "logistic",
            Method::Knn => "knn",
            Method::Svm => "svm",
        }
    }

    pub fn is_baseline(self) -> bool {
        matches!(self, Method::Logistic | Method::Knn | Method::Svm)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

/// How a cell ended. Only `Aborted` cells are re-run on resume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    /// IBL produced no usable code model; the AUC is absent.
    NoValidModels,
    /// The split or fit could not be scored (e.g. a single-class split).
    Invalid,
    /// Stopped early (request budget, backend outage); retried on resume.
    Aborted,
}

/// One scored experiment cell: (dataset, seed, training size, method).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub dataset_id: String,
    pub seed: u64,
    pub n_train: usize,
    pub method: Method,
    pub auc: Option<f64>,
    pub n_attempts: usize,
    pub n_valid: usize,
    pub selected_attempt: Option<String>,
    pub outcome: Outcome,
    pub detail: String,
}

impl ResultRecord {
    pub fn new(dataset_id: impl Into<String>, seed: u64, n_train: usize, method: Method) -> Self {
        Self {
            dataset_id: dataset_id.into(),
            seed,
            n_train,
            method,
            auc: None,
            n_attempts: 0,
            n_valid: 0,
            selected_attempt: None,
            outcome: Outcome::Ok,
            detail: String::new(),
        }
    }

    pub fn cell(&self) -> CellKey {
        CellKey {
            dataset_id: self.dataset_id.clone(),
            seed: self.seed,
            n_train: self.n_train,
            method: self.method,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub dataset_id: String,
    pub seed: u64,
    pub n_train: usize,
    pub method: Method,
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}.{}", self.dataset_id, self.seed, self.n_train, self.method)
    }
}

pub fn write_results_csv<W: Write>(records: &[ResultRecord], out: W) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for record in records {
        writer.serialize(record)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_results_csv<R: Read>(input: R) -> csv::Result<Vec<ResultRecord>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

/// Long-format rows for plotting AUC against training size, one series per
/// method. Cells without an AUC are omitted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotRow {
    pub n_train: usize,
    pub method: Method,
    pub auc: f64,
}

pub fn plot_rows(records: &[ResultRecord], dataset_id: &str, seed: u64) -> Vec<PlotRow> {
    records
        .iter()
        .filter(|r| r.dataset_id == dataset_id && r.seed == seed)
        .filter_map(|r| r.auc.map(|auc| PlotRow { n_train: r.n_train, method: r.method, auc }))
        .collect()
}
