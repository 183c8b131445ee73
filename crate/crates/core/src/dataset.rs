//! Binary-classification datasets: CSV loading with imputation and one-hot
//! expansion, synthetic generators, rounding, and seeded class-balanced
//! train/test splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::numfmt;

/// Train/test seeds used throughout the reference experiments.
pub const DEFAULT_SEEDS: [u64; 3] = [3655, 3656, 3657];

/// Name of the label column in exported CSV files and serialized prompts.
pub const TARGET_COLUMN: &str = "target";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("failed to read dataset: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("target column `{0}` not found")]
    MissingTarget(String),
    #[error("target column `{column}` has non-binary value `{value}` at row {row}")]
    NonBinaryTarget { column: String, row: usize, value: String },
    #[error("dataset has no rows")]
    Empty,
    #[error("row {row} has {got} values, expected {expected}")]
    RaggedRow { row: usize, got: usize, expected: usize },
    #[error("{rows} rows but {labels} labels")]
    LabelCountMismatch { rows: usize, labels: usize },
    #[error("label {value} at row {row} is not 0 or 1")]
    InvalidLabel { row: usize, value: u8 },
    #[error("non-finite value in feature `{feature}` at row {row}")]
    NonFinite { feature: String, row: usize },
    #[error("one-hot feature `{feature}` has value {value} at row {row}")]
    BadIndicator { feature: String, row: usize, value: f64 },
    #[error("one-hot group `{group}` sums to {sum} at row {row}")]
    BadIndicatorGroup { group: String, row: usize, sum: f64 },
    #[error("{0}")]
    InvalidParameter(String),
    #[error("need {needed} rows of class {class} but only {available} available")]
    InsufficientClass { class: u8, needed: usize, available: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    /// Indicator produced by one-hot expanding the categorical column `group`.
    Onehot { group: String },
}

/// Feature matrix plus binary labels. Immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    id: String,
    feature_names: Vec<String>,
    feature_kinds: Vec<FeatureKind>,
    values: Vec<f64>,
    labels: Vec<u8>,
}

impl Dataset {
    /// Builds a dataset from row-major data, checking every structural
    /// invariant (shape, finiteness, binary labels, one-hot groups).
    pub fn new(
        id: impl Into<String>,
        feature_names: Vec<String>,
        feature_kinds: Vec<FeatureKind>,
        rows: Vec<Vec<f64>>,
        labels: Vec<u8>,
    ) -> Result<Self, DatasetError> {
        let width = feature_names.len();
        if feature_kinds.len() != width {
            return Err(DatasetError::InvalidParameter(format!(
                "{} feature kinds for {} features",
                feature_kinds.len(),
                width
            )));
        }
        if rows.len() != labels.len() {
            return Err(DatasetError::LabelCountMismatch { rows: rows.len(), labels: labels.len() });
        }
        let mut values = Vec::with_capacity(rows.len() * width);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != width {
                return Err(DatasetError::RaggedRow { row: i, got: row.len(), expected: width });
            }
            values.extend(row);
        }
        let ds = Self { id: id.into(), feature_names, feature_kinds, values, labels };
        ds.check()?;
        Ok(ds)
    }

    fn check(&self) -> Result<(), DatasetError> {
        for (row, &label) in self.labels.iter().enumerate() {
            if label > 1 {
                return Err(DatasetError::InvalidLabel { row, value: label });
            }
        }
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (j, kind) in self.feature_kinds.iter().enumerate() {
            if let FeatureKind::Onehot { group } = kind {
                groups.entry(group.as_str()).or_default().push(j);
            }
        }
        for row in 0..self.n_rows() {
            let values = self.row(row);
            for (j, &v) in values.iter().enumerate() {
                if !v.is_finite() {
                    return Err(DatasetError::NonFinite { feature: self.feature_names[j].clone(), row });
                }
                if matches!(self.feature_kinds[j], FeatureKind::Onehot { .. }) && v != 0.0 && v != 1.0 {
                    return Err(DatasetError::BadIndicator {
                        feature: self.feature_names[j].clone(),
                        row,
                        value: v,
                    });
                }
            }
            for (group, members) in &groups {
                let sum: f64 = members.iter().map(|&j| values[j]).sum();
                if sum != 1.0 {
                    return Err(DatasetError::BadIndicatorGroup { group: group.to_string(), row, sum });
                }
            }
        }
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn feature_kinds(&self) -> &[FeatureKind] {
        &self.feature_kinds
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.n_features();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.n_rows()).map(move |i| self.row(i))
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// (negatives, positives)
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&y| y == 1).count();
        (self.labels.len() - pos, pos)
    }

    pub fn has_both_classes(&self) -> bool {
        let (neg, pos) = self.class_counts();
        neg > 0 && pos > 0
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    /// New dataset holding the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let w = self.n_features();
        let mut values = Vec::with_capacity(indices.len() * w);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            values.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            id: self.id.clone(),
            feature_names: self.feature_names.clone(),
            feature_kinds: self.feature_kinds.clone(),
            values,
            labels,
        }
    }

    /// Writes features followed by a final `target` column of 0/1.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DatasetError> {
        let mut writer = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(TARGET_COLUMN);
        writer.write_record(&header)?;
        for (row, label) in self.rows().zip(&self.labels) {
            let mut record: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            record.push(label.to_string());
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Reads the export format written by [`Dataset::write_csv`]: numeric
    /// features followed by a binary `target` column. All features are
    /// treated as continuous.
    pub fn read_csv<R: Read>(id: impl Into<String>, input: R) -> Result<Dataset, DatasetError> {
        let table = RawTable::read(input)?;
        let target = table
            .column_index(TARGET_COLUMN)
            .ok_or_else(|| DatasetError::MissingTarget(TARGET_COLUMN.into()))?;
        let labels = table.binary_column(target)?;
        let mut names = Vec::new();
        let mut columns = Vec::new();
        for (j, name) in table.header.iter().enumerate() {
            if j == target {
                continue;
            }
            let mut column = Vec::with_capacity(table.records.len());
            for (row, record) in table.records.iter().enumerate() {
                let cell = record[j].trim();
                let v: f64 = cell.parse().map_err(|_| {
                    DatasetError::InvalidParameter(format!("non-numeric value `{cell}` in `{name}` at row {row}"))
                })?;
                column.push(v);
            }
            names.push(name.clone());
            columns.push(column);
        }
        let kinds = vec![FeatureKind::Continuous; names.len()];
        Dataset::new(id, names, kinds, transpose(&columns, labels.len()), labels)
    }
}

fn transpose(columns: &[Vec<f64>], n_rows: usize) -> Vec<Vec<f64>> {
    (0..n_rows).map(|i| columns.iter().map(|c| c[i]).collect()).collect()
}

struct RawTable {
    header: Vec<String>,
    records: Vec<Vec<String>>,
}

impl RawTable {
    fn read<R: Read>(input: R) -> Result<Self, DatasetError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut records = Vec::new();
        for record in reader.records() {
            let record = record?;
            records.push(record.iter().map(str::to_string).collect());
        }
        if records.is_empty() {
            return Err(DatasetError::Empty);
        }
        Ok(Self { header, records })
    }

    fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn binary_column(&self, j: usize) -> Result<Vec<u8>, DatasetError> {
        self.records
            .iter()
            .enumerate()
            .map(|(row, record)| {
                let cell = record[j].trim();
                match cell.parse::<f64>() {
                    Ok(0.0) => Ok(0),
                    Ok(1.0) => Ok(1),
                    _ => Err(DatasetError::NonBinaryTarget {
                        column: self.header[j].clone(),
                        row,
                        value: cell.to_string(),
                    }),
                }
            })
            .collect()
    }
}

/// Options for [`load_tabular_csv`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TabularCsvOptions {
    /// Target column; when absent the first of `survived`, `Survived`,
    /// `target` present in the header is used.
    pub target: Option<String>,
    /// Remove columns that are a deterministic function of the target.
    pub drop_leaky: bool,
    /// Columns dropped before any processing (identifiers, free text).
    pub exclude: Vec<String>,
}

impl Default for TabularCsvOptions {
    fn default() -> Self {
        Self { target: None, drop_leaky: true, exclude: Vec::new() }
    }
}

/// Loads the Titanic table (or any similar CSV) with mean imputation for
/// numeric columns, mode imputation plus one-hot expansion for categorical
/// ones, and optional removal of target-leaking columns.
pub fn load_titanic_csv(path: impl AsRef<Path>, drop_leaky: bool) -> Result<Dataset, DatasetError> {
    let options = TabularCsvOptions { drop_leaky, ..TabularCsvOptions::default() };
    load_tabular_csv(path, &options)
}

pub fn load_tabular_csv(path: impl AsRef<Path>, options: &TabularCsvOptions) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset").to_string();
    parse_tabular_csv(id, File::open(path)?, options)
}

pub fn parse_tabular_csv<R: Read>(
    id: impl Into<String>,
    input: R,
    options: &TabularCsvOptions,
) -> Result<Dataset, DatasetError> {
    let table = RawTable::read(input)?;
    let target = match &options.target {
        Some(name) => table.column_index(name).ok_or_else(|| DatasetError::MissingTarget(name.clone()))?,
        None => ["survived", "Survived", TARGET_COLUMN]
            .iter()
            .find_map(|name| table.column_index(name))
            .ok_or_else(|| DatasetError::MissingTarget("survived".into()))?,
    };
    let labels = table.binary_column(target)?;
    let n = labels.len();

    let mut names = Vec::new();
    let mut kinds = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (j, name) in table.header.iter().enumerate() {
        if j == target || options.exclude.contains(name) {
            continue;
        }
        let cells: Vec<Option<&str>> = table
            .records
            .iter()
            .map(|r| {
                let cell = r[j].trim();
                (!cell.is_empty()).then_some(cell)
            })
            .collect();
        if options.drop_leaky && is_leaky(&cells, &labels) {
            log::info!("dropping column `{name}`: determined by the target");
            continue;
        }
        let present: Vec<&str> = cells.iter().flatten().copied().collect();
        if present.is_empty() {
            log::warn!("dropping column `{name}`: every value is missing");
            continue;
        }
        let numeric: Option<Vec<f64>> = present.iter().map(|c| c.parse::<f64>().ok().filter(|v| v.is_finite())).collect();
        match numeric {
            Some(parsed) => {
                let mean = parsed.iter().sum::<f64>() / parsed.len() as f64;
                let column = cells
                    .iter()
                    .map(|c| c.map_or(mean, |c| c.parse().expect("checked numeric")))
                    .collect();
                names.push(name.clone());
                kinds.push(FeatureKind::Continuous);
                columns.push(column);
            }
            None => {
                let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                for c in &present {
                    *counts.entry(c).or_default() += 1;
                }
                // most frequent; BTreeMap order makes ties pick the smallest value
                let mode = counts
                    .iter()
                    .fold(("", 0usize), |best, (v, &k)| if k > best.1 { (v, k) } else { best })
                    .0;
                for category in counts.keys() {
                    let column = cells
                        .iter()
                        .map(|c| if c.unwrap_or(mode) == *category { 1.0 } else { 0.0 })
                        .collect();
                    names.push(format!("{name}_{category}"));
                    kinds.push(FeatureKind::Onehot { group: name.clone() });
                    columns.push(column);
                }
            }
        }
    }
    Dataset::new(id, names, kinds, transpose(&columns, n), labels)
}

/// True when every row of each class carries the same (present) value, i.e.
/// the column can be recovered from the target alone.
fn is_leaky(cells: &[Option<&str>], labels: &[u8]) -> bool {
    let mut by_class: [Option<&str>; 2] = [None, None];
    for (cell, &y) in cells.iter().zip(labels) {
        let Some(cell) = cell else { return false };
        match by_class[y as usize] {
            None => by_class[y as usize] = Some(cell),
            Some(seen) if seen == *cell => {}
            Some(_) => return false,
        }
    }
    true
}

/// Two interleaving half circles: class 0 on the upper unit semicircle,
/// class 1 on the lower one shifted to (1, 0.5). Class 0 gets `n / 2`
/// points and class 1 the rest; rows are ordered class 0 first.
pub fn generate_moons(n: usize, noise_sd: f64, seed: u64) -> Result<Dataset, DatasetError> {
    if n < 2 {
        return Err(DatasetError::InvalidParameter(format!("moons needs n >= 2, got {n}")));
    }
    if !(noise_sd >= 0.0) || !noise_sd.is_finite() {
        return Err(DatasetError::InvalidParameter(format!("noise_sd must be nonnegative, got {noise_sd}")));
    }
    let n_outer = n / 2;
    let n_inner = n - n_outer;
    let angles = |count: usize| -> Vec<f64> {
        if count == 1 {
            vec![0.0]
        } else {
            (0..count).map(|i| std::f64::consts::PI * i as f64 / (count - 1) as f64).collect()
        }
    };
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for t in angles(n_outer) {
        rows.push(vec![t.cos(), t.sin()]);
        labels.push(0);
    }
    for t in angles(n_inner) {
        rows.push(vec![1.0 - t.cos(), 1.0 - t.sin() - 0.5]);
        labels.push(1);
    }
    if noise_sd > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, noise_sd).expect("validated sd");
        for row in &mut rows {
            for v in row.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
    }
    Dataset::new(
        "moons",
        vec!["Feature_1".into(), "Feature_2".into()],
        vec![FeatureKind::Continuous; 2],
        rows,
        labels,
    )
}

/// Unit direction along which the pseudo dataset's class means differ.
pub const PSEUDO_DIRECTION: [f64; 4] = [0.5, -0.5, 0.5, -0.5];
/// Distance between the pseudo dataset's class means.
pub const PSEUDO_MEAN_SHIFT: f64 = 2.0;

/// Four-feature Gaussian classes with identity covariance; class means sit
/// at `±PSEUDO_MEAN_SHIFT / 2` along [`PSEUDO_DIRECTION`]. Class 1 gets
/// `n / 2` rows, class 0 the rest, interleaved 0,1,0,1...
pub fn generate_pseudo(n: usize, seed: u64) -> Result<Dataset, DatasetError> {
    if n < 2 {
        return Err(DatasetError::InvalidParameter(format!("pseudo needs n >= 2, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let n_pos = n / 2;
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label: u8 = if i % 2 == 1 && i / 2 < n_pos { 1 } else { 0 };
        let sign = if label == 1 { 1.0 } else { -1.0 };
        let row = PSEUDO_DIRECTION
            .iter()
            .map(|d| unit.sample(&mut rng) + sign * 0.5 * PSEUDO_MEAN_SHIFT * d)
            .collect();
        rows.push(row);
        labels.push(label);
    }
    Dataset::new(
        "pseudo",
        ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect(),
        vec![FeatureKind::Continuous; 4],
        rows,
        labels,
    )
}

/// Rounds every feature value half-away-from-zero to `places` decimals.
pub fn round_features(ds: &Dataset, places: u32) -> Dataset {
    let mut out = ds.clone();
    for v in &mut out.values {
        *v = numfmt::round_half_away(*v, places);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub n_train: usize,
    /// Draw `n_train / 2` rows from each class.
    pub balance: bool,
}

impl SplitSpec {
    pub fn balanced(seed: u64, n_train: usize) -> Self {
        Self { seed, n_train, balance: true }
    }
}

/// Samples a training set without replacement; every remaining row becomes
/// test data. Both halves keep the source row order.
pub fn balanced_sample(ds: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset), DatasetError> {
    if spec.n_train == 0 {
        return Err(DatasetError::InvalidParameter("n_train must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut chosen: Vec<usize> = if spec.balance {
        if spec.n_train % 2 != 0 {
            return Err(DatasetError::InvalidParameter(format!(
                "balanced split needs an even n_train, got {}",
                spec.n_train
            )));
        }
        let per_class = spec.n_train / 2;
        let mut picked = Vec::with_capacity(spec.n_train);
        for class in [0u8, 1] {
            let mut pool: Vec<usize> = (0..ds.n_rows()).filter(|&i| ds.labels[i] == class).collect();
            if pool.len() < per_class {
                return Err(DatasetError::InsufficientClass { class, needed: per_class, available: pool.len() });
            }
            pool.shuffle(&mut rng);
            picked.extend_from_slice(&pool[..per_class]);
        }
        picked
    } else {
        if ds.n_rows() < spec.n_train {
            return Err(DatasetError::InvalidParameter(format!(
                "n_train {} exceeds {} rows",
                spec.n_train,
                ds.n_rows()
            )));
        }
        let mut pool: Vec<usize> = (0..ds.n_rows()).collect();
        pool.shuffle(&mut rng);
        pool.truncate(spec.n_train);
        pool
    };
    chosen.sort_unstable();
    let in_train: BTreeSet<usize> = chosen.iter().copied().collect();
    let rest: Vec<usize> = (0..ds.n_rows()).filter(|i| !in_train.contains(i)).collect();
    Ok((ds.select(&chosen), ds.select(&rest)))
}

/// Splits off a stratified third of `train` (at least one row per class
/// when the class has two or more rows) as a selection holdout.
pub fn carve_holdout(train: &Dataset, seed: u64) -> (Dataset, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0068_6f6c_646f_7574);
    let mut holdout = Vec::new();
    for class in [0u8, 1] {
        let mut pool: Vec<usize> = (0..train.n_rows()).filter(|&i| train.labels[i] == class).collect();
        pool.shuffle(&mut rng);
        let take = if pool.len() >= 2 { (pool.len() / 3).max(1) } else { 0 };
        holdout.extend_from_slice(&pool[..take]);
    }
    holdout.sort_unstable();
    let held: BTreeSet<usize> = holdout.iter().copied().collect();
    let fit: Vec<usize> = (0..train.n_rows()).filter(|i| !held.contains(i)).collect();
    (train.select(&fit), train.select(&holdout))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
survived,pclass,sex,age,embarked,alive
0,3,male,22,S,no
1,1,female,,C,yes
1,3,female,26,,yes
0,1,female,35,S,no
";

    fn sample(drop_leaky: bool) -> Dataset {
        let options = TabularCsvOptions { drop_leaky, ..Default::default() };
        parse_tabular_csv("titanic", SAMPLE.as_bytes(), &options).unwrap()
    }

    #[test]
    fn categorical_columns_expand_to_indicators() {
        let ds = sample(true);
        assert_eq!(
            ds.feature_names(),
            ["pclass", "sex_female", "sex_male", "age", "embarked_C", "embarked_S"]
        );
        assert_eq!(ds.labels(), [0, 1, 1, 0]);
        assert_eq!(ds.row(0), [3.0, 0.0, 1.0, 22.0, 0.0, 1.0]);
        assert_eq!(
            ds.feature_kinds()[1],
            FeatureKind::Onehot { group: "sex".into() }
        );
    }

    #[test]
    fn numeric_missing_is_mean_imputed() {
        let csv = "target,x\n0,1.0\n1,\n1,3.0\n";
        let ds = parse_tabular_csv("t", csv.as_bytes(), &TabularCsvOptions::default()).unwrap();
        let column: Vec<f64> = ds.rows().map(|r| r[0]).collect();
        assert_eq!(column, [1.0, 2.0, 3.0]);
    }

    #[test]
    fn categorical_missing_takes_mode() {
        // embarked: S appears twice, C once; the blank becomes S
        let ds = sample(true);
        assert_eq!(ds.row(2)[4..], [0.0, 1.0]);
    }

    #[test]
    fn leaky_columns_follow_flag() {
        assert!(sample(true).feature_index("alive_yes").is_none());
        let kept = sample(false);
        assert!(kept.feature_index("alive_no").is_some());
        assert!(kept.feature_index("alive_yes").is_some());
    }

    #[test]
    fn csv_errors() {
        let opts = TabularCsvOptions::default();
        assert!(matches!(
            parse_tabular_csv("t", "a,b\n1,2\n".as_bytes(), &opts),
            Err(DatasetError::MissingTarget(_))
        ));
        assert!(matches!(
            parse_tabular_csv("t", "survived,b\n2,2\n".as_bytes(), &opts),
            Err(DatasetError::NonBinaryTarget { .. })
        ));
        assert!(matches!(
            parse_tabular_csv("t", "survived,b\n".as_bytes(), &opts),
            Err(DatasetError::Empty)
        ));
        assert!(matches!(
            load_titanic_csv("/nonexistent/titanic.csv", true),
            Err(DatasetError::Io(_))
        ));
    }

    #[test]
    fn constructor_rejects_broken_indicator_groups() {
        let kinds = vec![
            FeatureKind::Onehot { group: "g".into() },
            FeatureKind::Onehot { group: "g".into() },
        ];
        let err = Dataset::new("x", vec!["g_a".into(), "g_b".into()], kinds, vec![vec![1.0, 1.0]], vec![0]);
        assert!(matches!(err, Err(DatasetError::BadIndicatorGroup { .. })));
        let err = Dataset::new("x", vec!["a".into()], vec![FeatureKind::Continuous], vec![vec![1.0]], vec![2]);
        assert!(matches!(err, Err(DatasetError::InvalidLabel { .. })));
        let err = Dataset::new("x", vec!["a".into()], vec![FeatureKind::Continuous], vec![vec![f64::NAN]], vec![0]);
        assert!(matches!(err, Err(DatasetError::NonFinite { .. })));
    }

    #[test]
    fn moons_two_points() {
        let ds = generate_moons(2, 0.0, 0).unwrap();
        assert_eq!(ds.labels(), [0, 1]);
        assert_eq!(ds.row(0), [1.0, 0.0]);
        assert!((ds.row(1)[0] - 0.0).abs() < 1e-12);
        assert!((ds.row(1)[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn moons_noiseless_geometry() {
        let ds = generate_moons(200, 0.0, 7).unwrap();
        for (row, &y) in ds.rows().zip(ds.labels()) {
            if y == 0 {
                assert!((row[0].powi(2) + row[1].powi(2) - 1.0).abs() < 1e-9);
                assert!(row[1] >= -1e-12);
            } else {
                let (dx, dy) = (row[0] - 1.0, row[1] - 0.5);
                assert!((dx * dx + dy * dy - 1.0).abs() < 1e-9);
                assert!(dy <= 1e-12);
            }
        }
    }

    #[test]
    fn moons_odd_count_balanced_up_to_one() {
        let (neg, pos) = generate_moons(201, 0.1, 1).unwrap().class_counts();
        assert_eq!(neg + pos, 201);
        assert!(neg.abs_diff(pos) <= 1);
        assert!(matches!(generate_moons(10, -0.1, 1), Err(DatasetError::InvalidParameter(_))));
        assert!(generate_moons(1, 0.1, 1).is_err());
    }

    #[test]
    fn pseudo_layout_and_determinism() {
        let ds = generate_pseudo(100, 3655).unwrap();
        assert_eq!(ds.feature_names(), ["a", "b", "c", "d"]);
        assert_eq!(ds, generate_pseudo(100, 3655).unwrap());
        assert_ne!(ds, generate_pseudo(100, 3656).unwrap());
        assert_eq!(ds.class_counts(), (50, 50));
        assert!(generate_pseudo(1, 0).is_err());
    }

    #[test]
    fn pseudo_classes_separate_along_informative_direction() {
        let ds = generate_pseudo(1000, 11).unwrap();
        let project = |r: &[f64]| r.iter().zip(PSEUDO_DIRECTION).map(|(x, d)| x * d).sum::<f64>();
        let mean_of = |class: u8| {
            let vals: Vec<f64> = ds
                .rows()
                .zip(ds.labels())
                .filter(|(_, &y)| y == class)
                .map(|(r, _)| project(r))
                .collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        let gap = mean_of(1) - mean_of(0);
        // expected gap is PSEUDO_MEAN_SHIFT with sampling sd ~ 0.063
        assert!(gap > 0.0);
        assert!((gap - PSEUDO_MEAN_SHIFT).abs() < 0.3, "gap {gap}");
    }

    #[test]
    fn rounding_features() {
        let ds = Dataset::new(
            "r",
            vec!["a".into(), "b".into()],
            vec![FeatureKind::Continuous; 2],
            vec![vec![0.12345, 1.0005]],
            vec![1],
        )
        .unwrap();
        let once = round_features(&ds, 3);
        assert_eq!(once.row(0), [0.123, 1.001]);
        assert_eq!(once.labels(), ds.labels());
        assert_eq!(round_features(&once, 3), once);
    }

    #[test]
    fn balanced_split_counts() {
        let ds = generate_moons(100, 0.1, 3).unwrap();
        let spec = SplitSpec::balanced(3655, 20);
        let (train, test) = balanced_sample(&ds, spec).unwrap();
        assert_eq!(train.class_counts(), (10, 10));
        assert_eq!(train.n_rows() + test.n_rows(), ds.n_rows());
        assert_eq!(balanced_sample(&ds, spec).unwrap(), (train, test));
    }

    #[test]
    fn split_errors() {
        let ds = generate_moons(10, 0.0, 3).unwrap();
        assert!(matches!(
            balanced_sample(&ds, SplitSpec::balanced(1, 12)),
            Err(DatasetError::InsufficientClass { .. })
        ));
        assert!(balanced_sample(&ds, SplitSpec::balanced(1, 3)).is_err());
        let (train, test) = balanced_sample(&ds, SplitSpec { seed: 1, n_train: 3, balance: false }).unwrap();
        assert_eq!((train.n_rows(), test.n_rows()), (3, 7));
    }

    #[test]
    fn holdout_is_stratified_third() {
        let ds = generate_moons(200, 0.1, 3).unwrap();
        let (train, _) = balanced_sample(&ds, SplitSpec::balanced(5, 30)).unwrap();
        let (fit, hold) = carve_holdout(&train, 5);
        assert_eq!(hold.class_counts(), (5, 5));
        assert_eq!(fit.class_counts(), (10, 10));
    }

    #[test]
    fn export_round_trips() {
        let ds = round_features(&generate_pseudo(12, 4).unwrap(), 3);
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("a,b,c,d,target\n"));
        let back = Dataset::read_csv("pseudo", buf.as_slice()).unwrap();
        assert_eq!(back, ds);
    }
}
