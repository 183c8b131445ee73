//! The experiment grid: best-of-N code-model generation, per-row in-context
//! prediction and the classical baselines, over seeds and training sizes.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, OnceLock};
use std::thread;

use log::{info, warn};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_linear_svm, fit_logistic, knn_scores, LogisticParams, SvmParams};
use crate::codemodel::guest::{RunnerCommand, RunnerPool};
use crate::codemodel::{self, check_predictions, CodeModel, Dialect, ExecError, ModelMeta, ValidationStatus};
use crate::dataset::{
    balanced_sample, carve_holdout, generate_moons, generate_pseudo, load_tabular_csv, round_features, Dataset,
    DatasetError, SplitSpec, TabularCsvOptions, DEFAULT_SEEDS,
};
use crate::evaluation::{auc, plot_rows, write_results_csv, CellKey, Method, Outcome, ResultRecord};
use crate::gateway::{
    record_fixture, AttemptTag, BackendConfig, CompletionBackend, CompletionRequest, GatewayError,
    DEFAULT_MAX_OUTPUT_TOKENS, DEFAULT_MODEL_ID,
};
use crate::prompting::{render_ibl_prompt, render_icl_prompt, IclAnswer, PromptError, PromptTemplate};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Where the data comes from. Synthetic sets are regenerated for every seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    Titanic {
        path: PathBuf,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        target: Option<String>,
    },
    Moons {
        #[serde(default = "default_synthetic_n")]
        n: usize,
        #[serde(default = "default_moons_noise")]
        noise: f64,
    },
    Pseudo {
        #[serde(default = "default_synthetic_n")]
        n: usize,
    },
}

fn default_synthetic_n() -> usize {
    1000
}

fn default_moons_noise() -> f64 {
    0.2
}

impl DatasetSpec {
    pub fn id(&self) -> String {
        match self {
            DatasetSpec::Titanic { .. } => "titanic".into(),
            DatasetSpec::Csv { path, .. } => {
                path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset").to_string()
            }
            DatasetSpec::Moons { .. } => "moons".into(),
            DatasetSpec::Pseudo { .. } => "pseudo".into(),
        }
    }

    fn depends_on_seed(&self) -> bool {
        matches!(self, DatasetSpec::Moons { .. } | DatasetSpec::Pseudo { .. })
    }

    /// Loads or generates the data for `seed`, relative paths resolved
    /// against `base`.
    pub fn load(&self, base: &Path, seed: u64, drop_leaky: bool) -> Result<Dataset, DatasetError> {
        let ds = match self {
            DatasetSpec::Titanic { path } => {
                let options = TabularCsvOptions { drop_leaky, ..TabularCsvOptions::default() };
                load_tabular_csv(base.join(path), &options)?
            }
            DatasetSpec::Csv { path, target } => {
                let options = TabularCsvOptions { target: target.clone(), drop_leaky, ..TabularCsvOptions::default() };
                load_tabular_csv(base.join(path), &options)?
            }
            DatasetSpec::Moons { n, noise } => generate_moons(*n, *noise, seed)?,
            DatasetSpec::Pseudo { n } => generate_pseudo(*n, seed)?,
        };
        Ok(ds.with_id(self.id()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Pick the candidate with the best test AUC.
    #[default]
    TestAuc,
    /// Pick on a stratified third held out of the training rows, which are
    /// then not shown in the prompt.
    HoldoutAuc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub model_id: String,
    pub ibl_temperature: f64,
    pub icl_temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            model_id: DEFAULT_MODEL_ID.into(),
            ibl_temperature: 1.0,
            icl_temperature: 0.0,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub logistic: LogisticParams,
    pub svm: SvmParams,
    pub knn_k: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { logistic: LogisticParams::default(), svm: SvmParams::default(), knn_k: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub drop_leaky: bool,
    /// Decimal places features are rounded to before splitting.
    pub round_decimals: Option<u32>,
    pub seeds: Vec<u64>,
    pub train_sizes: Vec<usize>,
    pub balance: bool,
    pub n_generations: usize,
    pub methods: Vec<Method>,
    pub selection: Selection,
    pub backend: BackendConfig,
    pub generation: GenerationConfig,
    pub dialect: Dialect,
    /// Template file overriding the built-in one for `dialect`.
    pub template_path: Option<PathBuf>,
    /// Hand the raw reply to the loader without stripping prose or fences.
    pub raw_import: bool,
    pub icl_answer: IclAnswer,
    pub baselines: BaselineConfig,
    /// Guest runner command; guest-dialect models fail validation without it.
    pub runner: Option<RunnerCommand>,
    pub time_limit_ms: u64,
    /// Maximum completion requests for the whole suite.
    pub request_budget: Option<usize>,
    pub parallel_cells: bool,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::Moons { n: default_synthetic_n(), noise: default_moons_noise() },
            drop_leaky: true,
            round_decimals: Some(3),
            seeds: DEFAULT_SEEDS.to_vec(),
            train_sizes: vec![10, 20, 30, 50],
            balance: true,
            n_generations: 30,
            methods: Method::ALL.to_vec(),
            selection: Selection::TestAuc,
            backend: BackendConfig::default(),
            generation: GenerationConfig::default(),
            dialect: Dialect::Guest,
            template_path: None,
            raw_import: false,
            icl_answer: IclAnswer::Probability,
            baselines: BaselineConfig::default(),
            runner: None,
            time_limit_ms: codemodel::DEFAULT_TIME_LIMIT_MS,
            request_budget: None,
            parallel_cells: false,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative paths inside it stay relative to the
    /// working directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn check(&self) -> Result<(), ExperimentError> {
        if self.n_generations == 0 {
            return Err(ExperimentError::Config("n_generations must be at least 1".into()));
        }
        if self.seeds.is_empty() || self.train_sizes.is_empty() || self.methods.is_empty() {
            return Err(ExperimentError::Config("seeds, train_sizes and methods must be non-empty".into()));
        }
        if self.balance {
            if let Some(n) = self.train_sizes.iter().find(|&&n| n % 2 != 0) {
                return Err(ExperimentError::Config(format!("train size {n} is odd but balance is on")));
            }
        }
        if self.baselines.knn_k == 0 {
            return Err(ExperimentError::Config("knn_k must be positive".into()));
        }
        Ok(())
    }

    pub fn template(&self) -> Result<PromptTemplate, ExperimentError> {
        Ok(match (&self.template_path, self.dialect) {
            (Some(path), _) => PromptTemplate::from_file(path)?,
            (None, Dialect::Guest) => PromptTemplate::guest(),
            (None, Dialect::Expression) => PromptTemplate::expression(),
        })
    }

    /// Cells in run order: seed, then training size, then method.
    pub fn cells(&self) -> Vec<CellKey> {
        let id = self.dataset.id();
        let mut cells = Vec::new();
        for &seed in &self.seeds {
            for &n_train in &self.train_sizes {
                for method in Method::ALL.into_iter().filter(|m| self.methods.contains(m)) {
                    cells.push(CellKey { dataset_id: id.clone(), seed, n_train, method });
                }
            }
        }
        cells
    }
}

/// Caps the number of completion requests across a run.
#[derive(Debug, Default)]
pub struct RequestBudget {
    limit: Option<usize>,
    used: AtomicUsize,
}

impl RequestBudget {
    pub fn new(limit: Option<usize>) -> Self {
        Self { limit, used: AtomicUsize::new(0) }
    }

    pub fn used(&self) -> usize {
        self.used.load(Ordering::SeqCst)
    }

    fn try_take(&self) -> bool {
        let Some(limit) = self.limit else {
            self.used.fetch_add(1, Ordering::SeqCst);
            return true;
        };
        self.used
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |u| (u < limit).then_some(u + 1))
            .is_ok()
    }
}

#[derive(Debug, thiserror::Error)]
enum FetchError {
    #[error("request budget exhausted")]
    Budget,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Shared state for running cells.
pub struct Harness<'a> {
    pub cfg: &'a ExperimentConfig,
    pub backend: &'a dyn CompletionBackend,
    pub template: PromptTemplate,
    pub budget: RequestBudget,
    pool: Option<RunnerPool>,
}

/// A raw reply kept for the `attempts/` directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Attempt {
    pub tag: AttemptTag,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateReport {
    pub tag: AttemptTag,
    pub status: ValidationStatus,
    pub detail: String,
    /// AUC on the selection set, for valid candidates.
    pub selection_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutput {
    pub record: ResultRecord,
    pub attempts: Vec<Attempt>,
    pub candidates: Vec<CandidateReport>,
    pub selected: Option<CodeModel>,
}

impl CellOutput {
    fn new(record: ResultRecord) -> Self {
        Self { record, attempts: Vec::new(), candidates: Vec::new(), selected: None }
    }

    fn failed(mut record: ResultRecord, outcome: Outcome, detail: impl Into<String>) -> Self {
        record.outcome = outcome;
        record.detail = detail.into();
        Self::new(record)
    }
}

pub fn attempt_tag(dataset_id: &str, seed: u64, n_train: usize, method: Method, index: usize) -> AttemptTag {
    AttemptTag::new(format!("{dataset_id}.{seed}.{n_train}.{method}.{index}")).expect("tag parts are tag-safe")
}

/// First number in the reply that lies in [0, 1].
pub fn parse_icl_score(reply: &str) -> Option<f64> {
    static NUMBER: OnceLock<Regex> = OnceLock::new();
    let re = NUMBER.get_or_init(|| Regex::new(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?").expect("valid regex"));
    re.find_iter(reply)
        .filter_map(|m| m.as_str().parse::<f64>().ok())
        .find(|v| (0.0..=1.0).contains(v))
        .map(|v| v + 0.0)
}

impl<'a> Harness<'a> {
    pub fn new(cfg: &'a ExperimentConfig, backend: &'a dyn CompletionBackend) -> Result<Self, ExperimentError> {
        cfg.check()?;
        Ok(Self {
            cfg,
            backend,
            template: cfg.template()?,
            budget: RequestBudget::new(cfg.request_budget),
            pool: cfg.runner.clone().map(RunnerPool::new),
        })
    }

    fn split(&self, ds: &Dataset, seed: u64, n_train: usize) -> Result<(Dataset, Dataset), DatasetError> {
        let spec = SplitSpec { seed, n_train, balance: self.cfg.balance };
        balanced_sample(ds, spec)
    }

    fn request(&self, tag: AttemptTag, system_text: &str, user_text: &str, temperature: f64) -> CompletionRequest {
        CompletionRequest {
            model_id: self.cfg.generation.model_id.clone(),
            system_text: system_text.to_string(),
            user_text: user_text.to_string(),
            temperature,
            max_output_tokens: self.cfg.generation.max_output_tokens,
            attempt_tag: tag,
        }
    }

    /// Sends every request, up to the backend's concurrency at a time.
    /// Results come back in request order.
    fn fetch_all(&self, requests: &[CompletionRequest]) -> Vec<Result<String, FetchError>> {
        let fetch = |req: &CompletionRequest| -> Result<String, FetchError> {
            if !self.budget.try_take() {
                return Err(FetchError::Budget);
            }
            Ok(self.backend.complete(req)?)
        };
        let workers = self.backend.max_concurrency().min(requests.len());
        if workers <= 1 {
            return requests.iter().map(fetch).collect();
        }
        let next = AtomicUsize::new(0);
        let mut slots: Vec<Option<Result<String, FetchError>>> = (0..requests.len()).map(|_| None).collect();
        thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|_| {
                    scope.spawn(|| {
                        let mut done = Vec::new();
                        loop {
                            let i = next.fetch_add(1, Ordering::SeqCst);
                            if i >= requests.len() {
                                break done;
                            }
                            done.push((i, fetch(&requests[i])));
                        }
                    })
                })
                .collect();
            for handle in handles {
                for (i, result) in handle.join().expect("fetch worker panicked") {
                    slots[i] = Some(result);
                }
            }
        });
        slots.into_iter().map(|r| r.expect("every request answered")).collect()
    }

    /// Best-of-N code-model generation for one cell.
    pub fn run_ibl(&self, ds: &Dataset, seed: u64, n_train: usize) -> CellOutput {
        let id = ds.id().to_string();
        let record = ResultRecord::new(&id, seed, n_train, Method::Ibl);
        let (train, test) = match self.split(ds, seed, n_train) {
            Ok(split) => split,
            Err(e) => return CellOutput::failed(record, Outcome::Invalid, e.to_string()),
        };
        let (shown, holdout) = match self.cfg.selection {
            Selection::TestAuc => (train, None),
            Selection::HoldoutAuc => {
                let (fit, holdout) = carve_holdout(&train, seed);
                (fit, Some(holdout))
            }
        };
        let selection_set = holdout.as_ref().unwrap_or(&test);
        let prompt = match render_ibl_prompt(&shown, &self.template) {
            Ok(p) => p,
            Err(e) => return CellOutput::failed(record, Outcome::Invalid, e.to_string()),
        };
        let requests: Vec<CompletionRequest> = (0..self.cfg.n_generations)
            .map(|i| {
                let tag = attempt_tag(&id, seed, n_train, Method::Ibl, i);
                self.request(tag, &prompt.system_text, &prompt.user_text, self.cfg.generation.ibl_temperature)
            })
            .collect();
        let replies = self.fetch_all(&requests);

        let mut out = CellOutput::new(record);
        out.record.n_attempts = requests.len();
        let mut best: Option<(f64, usize, CodeModel)> = None;
        let mut tally: BTreeMap<ValidationStatus, usize> = BTreeMap::new();
        for (i, (req, reply)) in requests.iter().zip(replies).enumerate() {
            let raw = match reply {
                Ok(raw) => raw,
                Err(e) => {
                    out.record.outcome = Outcome::Aborted;
                    out.record.detail = format!("{}: {e}", req.attempt_tag);
                    return out;
                }
            };
            out.attempts.push(Attempt { tag: req.attempt_tag.clone(), response: raw.clone() });
            let meta = ModelMeta { dataset_id: id.clone(), seed, n_train, generation_index: i };
            let cm = if self.cfg.raw_import {
                CodeModel::verbatim(raw, self.cfg.dialect, meta)
            } else {
                CodeModel::from_response(raw, self.cfg.dialect, meta)
            };
            let report = self.score_candidate(&cm, &shown, selection_set);
            *tally.entry(report.status).or_default() += 1;
            if let Some(score) = report.selection_auc {
                out.record.n_valid += 1;
                if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                    best = Some((score, i, cm));
                }
            }
            out.candidates.push(CandidateReport { tag: req.attempt_tag.clone(), ..report });
        }
        out.record.detail = tally.iter().map(|(s, n)| format!("{s}={n}")).collect::<Vec<_>>().join(" ");

        let Some((selection_auc, index, cm)) = best else {
            out.record.outcome = Outcome::NoValidModels;
            return out;
        };
        let test_auc = if holdout.is_none() {
            Some(selection_auc)
        } else {
            self.model_auc(&cm, &test).ok()
        };
        match test_auc {
            Some(v) => out.record.auc = Some(v),
            None => {
                out.record.outcome = Outcome::Invalid;
                out.record.detail.push_str("; selected model failed on the test set");
            }
        }
        out.record.selected_attempt = Some(requests[index].attempt_tag.to_string());
        out.selected = Some(cm);
        out
    }

    /// Validates on the rows shown in the prompt, then scores on the
    /// selection set. Only candidates that pass both get an AUC.
    fn score_candidate(&self, cm: &CodeModel, probe: &Dataset, selection: &Dataset) -> CandidateReport {
        let report = |status, detail: String| CandidateReport {
            tag: AttemptTag::new("pending").expect("valid tag"),
            status,
            detail,
            selection_auc: None,
        };
        let mut guard = match (cm.dialect, &self.pool) {
            (Dialect::Guest, Some(pool)) => match pool.checkout() {
                Ok(runner) => Some(runner),
                Err(e) => return report(ValidationStatus::RuntimeFailure, e.to_string()),
            },
            _ => None,
        };
        let runner = guard.as_deref_mut();
        let loaded = codemodel::load(cm, probe.feature_names(), runner, self.cfg.time_limit_ms);
        let mut model = match loaded {
            Ok(m) => m,
            Err(e) => return exec_report(e, report),
        };
        for (set, what) in [(probe, "probe"), (selection, "selection set")] {
            let values = match model.predict(set) {
                Ok(v) => v,
                Err(e) => return exec_report(e, report),
            };
            let check = check_predictions(&values);
            if !check.is_ok() {
                return report(check.status, format!("{what}: {}", check.detail));
            }
            if what == "selection set" {
                return match auc(&values, set.labels()) {
                    Ok(score) => CandidateReport { selection_auc: Some(score), ..report(ValidationStatus::Ok, check.detail) },
                    Err(e) => report(ValidationStatus::Ok, format!("selection AUC undefined: {e}")),
                };
            }
        }
        unreachable!("loop returns on the selection set")
    }

    fn model_auc(&self, cm: &CodeModel, ds: &Dataset) -> Result<f64, String> {
        let mut guard = match (cm.dialect, &self.pool) {
            (Dialect::Guest, Some(pool)) => Some(pool.checkout().map_err(|e| e.to_string())?),
            _ => None,
        };
        let values = codemodel::load(cm, ds.feature_names(), guard.as_deref_mut(), self.cfg.time_limit_ms)
            .and_then(|mut m| m.predict(ds))
            .map_err(|e| e.to_string())?;
        let check = check_predictions(&values);
        if !check.is_ok() {
            return Err(check.detail);
        }
        auc(&values, ds.labels()).map_err(|e| e.to_string())
    }

    /// One prompt per test row; the parsed answers are the scores.
    pub fn run_icl(&self, ds: &Dataset, seed: u64, n_train: usize) -> CellOutput {
        let id = ds.id().to_string();
        let record = ResultRecord::new(&id, seed, n_train, Method::Icl);
        let (train, test) = match self.split(ds, seed, n_train) {
            Ok(split) => split,
            Err(e) => return CellOutput::failed(record, Outcome::Invalid, e.to_string()),
        };
        let mut requests = Vec::with_capacity(test.n_rows());
        for row in 0..test.n_rows() {
            let prompt = match render_icl_prompt(&train, &test, row, self.cfg.icl_answer) {
                Ok(p) => p,
                Err(e) => return CellOutput::failed(record, Outcome::Invalid, e.to_string()),
            };
            let tag = attempt_tag(&id, seed, n_train, Method::Icl, row);
            requests.push(self.request(tag, &prompt.system_text, &prompt.user_text, self.cfg.generation.icl_temperature));
        }
        let replies = self.fetch_all(&requests);

        let mut out = CellOutput::new(record);
        out.record.n_attempts = requests.len();
        let mut scores = Vec::with_capacity(requests.len());
        let (mut unparsed, mut failed) = (0, 0);
        for (req, reply) in requests.iter().zip(replies) {
            match reply {
                Ok(raw) => {
                    match parse_icl_score(&raw) {
                        Some(v) => {
                            out.record.n_valid += 1;
                            scores.push(v);
                        }
                        None => {
                            unparsed += 1;
                            scores.push(0.5);
                        }
                    }
                    out.attempts.push(Attempt { tag: req.attempt_tag.clone(), response: raw });
                }
                Err(FetchError::Budget) => {
                    out.record.outcome = Outcome::Aborted;
                    out.record.detail = format!("{}: request budget exhausted", req.attempt_tag);
                    return out;
                }
                Err(FetchError::Gateway(e)) => {
                    warn!("{}: {e}; scoring 0.5", req.attempt_tag);
                    failed += 1;
                    scores.push(0.5);
                }
            }
        }
        out.record.detail = format!("unparsed={unparsed} failed={failed}");
        match auc(&scores, test.labels()) {
            Ok(v) => out.record.auc = Some(v),
            Err(e) => {
                out.record.outcome = Outcome::Invalid;
                out.record.detail = format!("{}; {e}", out.record.detail);
            }
        }
        out
    }

    /// Fits one baseline on the training split and scores the test split.
    pub fn run_baseline(&self, ds: &Dataset, seed: u64, n_train: usize, method: Method) -> CellOutput {
        let mut record = ResultRecord::new(ds.id(), seed, n_train, method);
        let (train, test) = match self.split(ds, seed, n_train) {
            Ok(split) => split,
            Err(e) => return CellOutput::failed(record, Outcome::Invalid, e.to_string()),
        };
        let b = &self.cfg.baselines;
        let scores = match method {
            Method::Logistic => fit_logistic(&train, b.logistic.l2, b.logistic.max_iters, b.logistic.tol)
                .and_then(|m| m.score(&test)),
            Method::Svm => fit_linear_svm(&train, b.svm.c, b.svm.epochs, seed).and_then(|m| m.score(&test)),
            Method::Knn => knn_scores(&train, b.knn_k.min(train.n_rows()), &test),
            Method::Ibl | Method::Icl => panic!("{method} is not a baseline"),
        };
        record.n_attempts = 1;
        let scored = scores.map_err(|e| e.to_string()).and_then(|s| auc(&s, test.labels()).map_err(|e| e.to_string()));
        match scored {
            Ok(v) => {
                record.n_valid = 1;
                record.auc = Some(v);
                CellOutput::new(record)
            }
            Err(e) => CellOutput::failed(record, Outcome::Invalid, e),
        }
    }

    /// Every configured baseline for one (seed, size).
    pub fn run_baselines(&self, ds: &Dataset, seed: u64, n_train: usize) -> Vec<ResultRecord> {
        Method::ALL
            .into_iter()
            .filter(|m| m.is_baseline() && self.cfg.methods.contains(m))
            .map(|m| self.run_baseline(ds, seed, n_train, m).record)
            .collect()
    }

    pub fn run_cell(&self, ds: &Dataset, cell: &CellKey) -> CellOutput {
        match cell.method {
            Method::Ibl => self.run_ibl(ds, cell.seed, cell.n_train),
            Method::Icl => self.run_icl(ds, cell.seed, cell.n_train),
            m => self.run_baseline(ds, cell.seed, cell.n_train, m),
        }
    }
}

fn exec_report<F>(e: ExecError, report: F) -> CandidateReport
where
    F: Fn(ValidationStatus, String) -> CandidateReport,
{
    let status = match e {
        ExecError::Parse(_) => ValidationStatus::ParseFailure,
        ExecError::RunnerUnavailable | ExecError::Runtime { .. } => ValidationStatus::RuntimeFailure,
    };
    report(status, e.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SuiteSummary {
    pub cells: usize,
    pub skipped: usize,
    pub ran: usize,
    pub aborted: usize,
    pub requests: usize,
}

pub const RESULTS_CSV: &str = "results.csv";
pub const RESULTS_JSON: &str = "results.json";

/// Runs every cell of the grid and writes the artifacts under
/// `cfg.output_dir`. With `resume`, cells already in `results.csv` (other
/// than aborted ones) are kept and not re-run. Relative dataset paths are
/// resolved against `base`.
pub fn run_suite(
    cfg: &ExperimentConfig,
    backend: &dyn CompletionBackend,
    base: &Path,
    resume: bool,
) -> Result<SuiteSummary, ExperimentError> {
    let harness = Harness::new(cfg, backend)?;
    let out_dir = base.join(&cfg.output_dir);
    fs::create_dir_all(&out_dir)?;
    let results_path = out_dir.join(RESULTS_CSV);

    let mut done: BTreeMap<CellKey, ResultRecord> = BTreeMap::new();
    if resume && results_path.exists() {
        for record in crate::evaluation::read_results_csv(fs::File::open(&results_path)?)? {
            if record.outcome != Outcome::Aborted {
                done.insert(record.cell(), record);
            }
        }
    }
    let cells = cfg.cells();
    let pending: Vec<CellKey> = cells.iter().filter(|c| !done.contains_key(c)).cloned().collect();
    let mut summary = SuiteSummary { cells: cells.len(), skipped: cells.len() - pending.len(), ..Default::default() };
    info!("{} cells, {} already done", cells.len(), summary.skipped);

    let mut datasets: BTreeMap<u64, Dataset> = BTreeMap::new();
    for &seed in &cfg.seeds {
        if datasets.contains_key(&seed) {
            continue;
        }
        let ds = if !cfg.dataset.depends_on_seed() && !datasets.is_empty() {
            datasets.values().next().expect("non-empty").clone()
        } else {
            let ds = cfg.dataset.load(base, seed, cfg.drop_leaky)?;
            match cfg.round_decimals {
                Some(places) => round_features(&ds, places),
                None => ds,
            }
        };
        datasets.insert(seed, ds);
    }

    // Cells run on workers; this thread is the only writer.
    let workers = if cfg.parallel_cells { thread::available_parallelism().map_or(1, |n| n.get()) } else { 1 };
    let workers = workers.min(pending.len()).max(1);
    let next = AtomicUsize::new(0);
    let mut write_error = None;
    thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<CellOutput>();
        for _ in 0..workers {
            let tx = tx.clone();
            let (harness, pending, datasets, next) = (&harness, &pending, &datasets, &next);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(cell) = pending.get(i) else { break };
                let out = harness.run_cell(&datasets[&cell.seed], cell);
                if tx.send(out).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for out in rx {
            info!("{} -> {:?} auc={:?}", out.record.cell(), out.record.outcome, out.record.auc);
            summary.ran += 1;
            if out.record.outcome == Outcome::Aborted {
                summary.aborted += 1;
            }
            let written = write_cell_artifacts(&out_dir, &out).and_then(|()| {
                done.insert(out.record.cell(), out.record);
                write_results(&results_path, &cells, &done)
            });
            if let Err(e) = written {
                write_error.get_or_insert(e);
            }
        }
    });
    if let Some(e) = write_error {
        return Err(e);
    }

    let records = ordered(&cells, &done);
    fs::write(out_dir.join(RESULTS_JSON), serde_json::to_string_pretty(&records)? + "\n")?;
    let plots = out_dir.join("plots");
    fs::create_dir_all(&plots)?;
    let dataset_id = cfg.dataset.id();
    for &seed in &cfg.seeds {
        let mut writer = csv::Writer::from_path(plots.join(format!("{dataset_id}.{seed}.csv")))?;
        for row in plot_rows(&records, &dataset_id, seed) {
            writer.serialize(row)?;
        }
        writer.flush()?;
    }
    summary.requests = harness.budget.used();
    Ok(summary)
}

fn ordered(cells: &[CellKey], done: &BTreeMap<CellKey, ResultRecord>) -> Vec<ResultRecord> {
    cells.iter().filter_map(|c| done.get(c).cloned()).collect()
}

fn write_results(path: &Path, cells: &[CellKey], done: &BTreeMap<CellKey, ResultRecord>) -> Result<(), ExperimentError> {
    let tmp = path.with_extension("csv.tmp");
    write_results_csv(&ordered(cells, done), fs::File::create(&tmp)?)?;
    fs::rename(tmp, path)?;
    Ok(())
}

fn write_cell_artifacts(out_dir: &Path, out: &CellOutput) -> Result<(), ExperimentError> {
    let attempts = out_dir.join("attempts");
    for attempt in &out.attempts {
        record_fixture(&attempts, &attempt.tag, &attempt.response, true)?;
    }
    if let Some(cm) = &out.selected {
        let selected = out_dir.join("selected");
        fs::create_dir_all(&selected)?;
        let source = cm.source.as_deref().unwrap_or(&cm.raw_response);
        fs::write(selected.join(format!("{}.src", out.record.cell())), source)?;
    }
    Ok(())
}
