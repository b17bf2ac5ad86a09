//! End-to-end audits, ablation sweeps and report files.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::{filter_by_length, truncate, Cohort, CorpusError, Document, Normalization, TokenizedDocument};
use crate::gateway::{Gateway, GatewayError, GenerationParams};
use crate::matching::{frequency_array_with_mode, maximal_common_substrings, sum_arrays, CountMode, FrequencyArray};
use crate::prompt::{build_transcript, segment, validate_shots, PromptError, Transcript, DEFAULT_SHOTS, DEFAULT_SYSTEM_PROMPT};
use crate::stats::{compare_arrays, compare_cohorts, CohortComparison, StatsError};

pub const DEFAULT_L_MIN: usize = 5;
pub const DEFAULT_L_MAX: usize = 12;
pub const DEFAULT_MIN_WORDS: usize = 1000;
pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const SWEEP_SHOTS: [usize; 4] = [2, 4, 6, 8];
pub const SWEEP_TEMPERATURES: [f64; 2] = [0.1, 0.7];
pub const SWEEP_LENGTHS: [usize; 5] = [75, 125, 250, 500, 1000];

#[derive(Debug, thiserror::Error)]
pub enum AuditError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("document \"{doc}\": {source}")]
    Prompt {
        doc: String,
        #[source]
        source: PromptError,
    },
    #[error("{0} cohort is empty after filtering")]
    EmptyCohort(Cohort),
    #[error("empty cohort results: every generation for the {cohort} cohort failed ({failures} failures)")]
    EmptyCohortResults { cohort: Cohort, failures: usize },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Upper length threshold: a fixed value or derived from the truncation
/// length as `floor(L / shots)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum LMax {
    Fixed(usize),
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub shots: usize,
    pub l_min: usize,
    pub l_max: LMax,
    pub temperature: f64,
    pub model: String,
    pub truncate: Option<usize>,
    pub min_words: usize,
    pub max_in_flight: usize,
    pub cache_path: Option<PathBuf>,
    pub seed: u64,
    pub system_prompt: String,
    pub count_mode: CountMode,
    pub normalization: Normalization,
    pub max_tokens: Option<u32>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            shots: DEFAULT_SHOTS,
            l_min: DEFAULT_L_MIN,
            l_max: LMax::Fixed(DEFAULT_L_MAX),
            temperature: DEFAULT_TEMPERATURE,
            model: "gpt-3.5-turbo-1106".into(),
            truncate: None,
            min_words: DEFAULT_MIN_WORDS,
            max_in_flight: 4,
            cache_path: None,
            seed: 0,
            system_prompt: DEFAULT_SYSTEM_PROMPT.into(),
            count_mode: CountMode::Threshold,
            normalization: Normalization::None,
            max_tokens: None,
        }
    }
}

impl ExperimentConfig {
    /// Upper threshold after applying the truncation cap.
    pub fn effective_l_max(&self) -> usize {
        let cap = self.truncate.map(|l| l / self.shots.max(1));
        match (self.l_max, cap) {
            (LMax::Fixed(k), Some(c)) => k.min(c),
            (LMax::Fixed(k), None) => k,
            (LMax::Auto, Some(c)) => c,
            (LMax::Auto, None) => DEFAULT_L_MAX,
        }
    }

    pub fn validate(&self) -> Result<(), AuditError> {
        validate_shots(self.shots).map_err(|e| AuditError::Config(e.to_string()))?;
        if self.l_min < 1 {
            return Err(AuditError::Config("l_min must be at least 1".into()));
        }
        if let LMax::Fixed(k) = self.l_max {
            if k < self.l_min {
                return Err(AuditError::Config(format!("l_max {k} is below l_min {}", self.l_min)));
            }
        }
        if let Some(l) = self.truncate {
            if l < self.shots {
                return Err(AuditError::Config(format!(
                    "truncation length {l} is shorter than the {} segments",
                    self.shots
                )));
            }
        }
        let l_max = self.effective_l_max();
        if l_max < self.l_min {
            return Err(AuditError::Config(format!(
                "effective l_max {l_max} (truncation {:?}, {} shots) is below l_min {}",
                self.truncate, self.shots, self.l_min
            )));
        }
        if self.temperature < 0.0 || !self.temperature.is_finite() {
            return Err(AuditError::Config(format!("temperature must be non-negative, got {}", self.temperature)));
        }
        if self.max_in_flight < 1 {
            return Err(AuditError::Config("max_in_flight must be at least 1".into()));
        }
        Ok(())
    }

    pub fn generation_params(&self) -> GenerationParams {
        GenerationParams {
            model: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            seed: Some(self.seed),
        }
    }
}

/// Which gateway serves each cohort. Live audits use one gateway for both;
/// offline demonstrations may pair different mock backends.
#[derive(Debug, Clone, Copy)]
pub struct CohortGateways<'a> {
    pub pre: &'a Gateway,
    pub post: &'a Gateway,
}

impl<'a> CohortGateways<'a> {
    pub fn uniform(gateway: &'a Gateway) -> Self {
        Self { pre: gateway, post: gateway }
    }

    pub fn split(pre: &'a Gateway, post: &'a Gateway) -> Self {
        Self { pre, post }
    }

    fn for_cohort(&self, cohort: Cohort) -> &'a Gateway {
        match cohort {
            Cohort::Pre => self.pre,
            Cohort::Post => self.post,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocumentStatus {
    Ok,
    Empty,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentSummary {
    pub id: String,
    pub cohort: Cohort,
    pub status: DocumentStatus,
    pub reference_tokens: usize,
    pub completion_tokens: usize,
    pub longest_match: usize,
    pub counts: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub backend: String,
    pub documents: usize,
    pub completed: usize,
    pub empty_completions: usize,
    pub failures: usize,
    pub frequencies: FrequencyArray,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub config: ExperimentConfig,
    pub l_min: usize,
    pub l_max: usize,
    pub pre: CohortSummary,
    pub post: CohortSummary,
    pub comparison: CohortComparison,
    pub failures: usize,
    pub documents: Vec<DocumentSummary>,
    pub generated_at: DateTime<Utc>,
}

impl AuditReport {
    pub fn frequencies(&self, cohort: Cohort) -> &FrequencyArray {
        match cohort {
            Cohort::Pre => &self.pre.frequencies,
            Cohort::Post => &self.post.frequencies,
        }
    }

    /// Recomputes the comparison from the report's own aggregated arrays.
    pub fn recompute_comparison(&self) -> Result<CohortComparison, StatsError> {
        compare_cohorts(&self.pre.frequencies, &self.post.frequencies)
    }
}

/// Tokenizes, filters and truncates the corpus, then builds one transcript
/// per surviving document.
pub fn prepare_transcripts(corpus: &[Document], config: &ExperimentConfig) -> Result<Vec<(Cohort, Transcript)>, AuditError> {
    config.validate()?;
    let mut seen = HashSet::new();
    for doc in corpus {
        if !seen.insert(doc.id.as_str()) {
            return Err(CorpusError::DuplicateId(doc.id.clone()).into());
        }
    }
    let tokenized = corpus
        .iter()
        .map(TokenizedDocument::new)
        .collect::<Result<Vec<_>, _>>()?;
    let mut kept = filter_by_length(tokenized, config.min_words);
    if let Some(l) = config.truncate {
        kept = kept.iter().map(|d| truncate(d, l)).collect();
    }
    for cohort in [Cohort::Pre, Cohort::Post] {
        if !kept.iter().any(|d| d.cohort == cohort) {
            return Err(AuditError::EmptyCohort(cohort));
        }
    }
    kept.iter()
        .map(|doc| {
            let prompt_err = |source| AuditError::Prompt { doc: doc.id.clone(), source };
            let seg = segment(doc, config.shots).map_err(prompt_err)?;
            let tr = build_transcript(doc, &seg, &config.system_prompt).map_err(prompt_err)?;
            Ok((doc.cohort, tr))
        })
        .collect()
}

fn summarize(
    cohort: Cohort,
    transcript: &Transcript,
    outcome: Result<crate::gateway::GenerationRecord, GatewayError>,
    config: &ExperimentConfig,
    l_max: usize,
) -> Result<(DocumentSummary, Option<FrequencyArray>), AuditError> {
    let zeros = FrequencyArray::zeros(config.l_min, l_max, config.count_mode).map_err(StatsError::from)?;
    let mut summary = DocumentSummary {
        id: transcript.doc_id.clone(),
        cohort,
        status: DocumentStatus::Ok,
        reference_tokens: transcript.reference_tokens.len(),
        completion_tokens: 0,
        longest_match: 0,
        counts: zeros.counts.clone(),
        error: None,
    };
    match outcome {
        Ok(record) => {
            let completion = record.completion();
            let reference = config.normalization.apply(transcript.reference_tokens.iter().map(String::as_str));
            let generated = config.normalization.apply(completion.token_strings());
            let matches = maximal_common_substrings(&reference, &generated);
            let freq = frequency_array_with_mode(&matches, config.l_min, l_max, config.count_mode)
                .map_err(StatsError::from)?;
            summary.completion_tokens = generated.len();
            summary.longest_match = matches.iter().map(|m| m.length).max().unwrap_or(0);
            summary.counts = freq.counts.clone();
            Ok((summary, Some(freq)))
        }
        Err(GatewayError::EmptyCompletion) => {
            summary.status = DocumentStatus::Empty;
            summary.error = Some(GatewayError::EmptyCompletion.to_string());
            Ok((summary, Some(zeros)))
        }
        Err(e) => {
            log::warn!("{}: generation failed: {e}", transcript.doc_id);
            summary.status = DocumentStatus::Failed;
            summary.error = Some(e.to_string());
            Ok((summary, None))
        }
    }
}

/// Runs the full pipeline on `corpus` and compares the two cohorts.
pub fn run_audit(corpus: &[Document], config: &ExperimentConfig, gateways: CohortGateways<'_>) -> Result<AuditReport, AuditError> {
    let transcripts = prepare_transcripts(corpus, config)?;
    let l_max = config.effective_l_max();
    let params = config.generation_params();
    params.validate()?;

    let mut documents = Vec::with_capacity(transcripts.len());
    let mut cohorts = Vec::with_capacity(2);
    for cohort in [Cohort::Pre, Cohort::Post] {
        let gateway = gateways.for_cohort(cohort);
        let batch: Vec<Transcript> = transcripts
            .iter()
            .filter(|(c, _)| *c == cohort)
            .map(|(_, t)| t.clone())
            .collect();
        let outcomes = gateway.generate_batch(&batch, &params, config.max_in_flight);

        let mut arrays = Vec::new();
        let (mut empty, mut failures) = (0, 0);
        for (tr, outcome) in batch.iter().zip(outcomes) {
            let (summary, freq) = summarize(cohort, tr, outcome, config, l_max)?;
            match summary.status {
                DocumentStatus::Empty => empty += 1,
                DocumentStatus::Failed => failures += 1,
                DocumentStatus::Ok => {}
            }
            arrays.extend(freq);
            documents.push(summary);
        }
        if arrays.is_empty() {
            return Err(AuditError::EmptyCohortResults { cohort, failures });
        }
        let frequencies = sum_arrays(&arrays).map_err(StatsError::from)?;
        cohorts.push(CohortSummary {
            backend: gateway.backend_name(),
            documents: batch.len(),
            completed: arrays.len(),
            empty_completions: empty,
            failures,
            frequencies,
        });
    }
    let post = cohorts.pop().expect("post cohort");
    let pre = cohorts.pop().expect("pre cohort");
    let comparison = compare_cohorts(&pre.frequencies, &post.frequencies)?;
    documents.sort_by(|a, b| (a.cohort, &a.id).cmp(&(b.cohort, &b.id)));

    Ok(AuditReport {
        config: config.clone(),
        l_min: config.l_min,
        l_max,
        failures: pre.failures + post.failures,
        pre,
        post,
        comparison,
        documents,
        generated_at: Utc::now(),
    })
}

/// One audit per shot count, everything else fixed.
pub fn sweep_shots(
    corpus: &[Document],
    config: &ExperimentConfig,
    shot_values: &[usize],
    gateways: CohortGateways<'_>,
) -> Result<Vec<(usize, AuditReport)>, AuditError> {
    for &n in shot_values {
        validate_shots(n).map_err(|e| AuditError::Config(e.to_string()))?;
    }
    shot_values
        .iter()
        .map(|&n| {
            let cfg = ExperimentConfig { shots: n, ..config.clone() };
            Ok((n, run_audit(corpus, &cfg, gateways)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureComparison {
    pub low: f64,
    pub high: f64,
    /// `delta` is positive when the low-temperature pre-cohort counts are
    /// larger.
    pub comparison: CohortComparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSweep {
    pub reports: Vec<(f64, AuditReport)>,
    pub comparison: Option<TemperatureComparison>,
}

/// One audit per temperature. With exactly two temperatures the pre-cohort
/// arrays are also compared, low temperature first.
pub fn sweep_temperature(
    corpus: &[Document],
    config: &ExperimentConfig,
    temps: &[f64],
    gateways: CohortGateways<'_>,
) -> Result<TemperatureSweep, AuditError> {
    if temps.is_empty() {
        return Err(AuditError::Config("no temperatures given".into()));
    }
    if let Some(t) = temps.iter().find(|t| **t < 0.0 || !t.is_finite()) {
        return Err(AuditError::Config(format!("temperature must be non-negative, got {t}")));
    }
    let reports = temps
        .iter()
        .map(|&t| {
            let cfg = ExperimentConfig { temperature: t, ..config.clone() };
            Ok((t, run_audit(corpus, &cfg, gateways)?))
        })
        .collect::<Result<Vec<_>, AuditError>>()?;
    let comparison = match reports.as_slice() {
        [(ta, ra), (tb, rb)] if ta != tb => {
            let ((low, lr), (high, hr)) = if ta < tb { ((*ta, ra), (*tb, rb)) } else { ((*tb, rb), (*ta, ra)) };
            Some(TemperatureComparison {
                low,
                high,
                comparison: compare_arrays(&lr.pre.frequencies, &hr.pre.frequencies)?,
            })
        }
        _ => None,
    };
    Ok(TemperatureSweep { reports, comparison })
}

/// One audit per truncation length `L`, with `l_max` capped at
/// `floor(L / shots)`.
pub fn sweep_length(
    corpus: &[Document],
    config: &ExperimentConfig,
    lengths: &[usize],
    gateways: CohortGateways<'_>,
) -> Result<Vec<(usize, AuditReport)>, AuditError> {
    for &l in lengths {
        ExperimentConfig { truncate: Some(l), ..config.clone() }.validate()?;
    }
    lengths
        .iter()
        .map(|&l| {
            let cfg = ExperimentConfig { truncate: Some(l), ..config.clone() };
            Ok((l, run_audit(corpus, &cfg, gateways)?))
        })
        .collect()
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), AuditError> {
    fs::write(path, contents).map_err(|source| AuditError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// `k,count_pre,count_post` rows.
pub fn frequencies_csv(report: &AuditReport) -> Result<Vec<u8>, AuditError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| AuditError::Write {
        path: PathBuf::from("frequencies.csv"),
        source: std::io::Error::other(e),
    };
    w.write_record(["k", "count_pre", "count_post"]).map_err(io)?;
    for ((k, pre), (_, post)) in report.pre.frequencies.iter().zip(report.post.frequencies.iter()) {
        w.write_record([k.to_string(), pre.to_string(), post.to_string()]).map_err(io)?;
    }
    w.into_inner().map_err(|e| io(e.into_error().into()))
}

/// Writes `summary.json` and `frequencies.csv` into `out_dir`.
pub fn emit_report(report: &AuditReport, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, AuditError> {
    for (cohort, summary) in [(Cohort::Pre, &report.pre), (Cohort::Post, &report.post)] {
        if summary.completed == 0 {
            return Err(AuditError::EmptyCohort(cohort));
        }
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|source| AuditError::Write {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let summary_path = out_dir.join("summary.json");
    let mut json = serde_json::to_vec_pretty(report).expect("report serializes");
    json.push(b'\n');
    write_file(&summary_path, &json)?;
    let csv_path = out_dir.join("frequencies.csv");
    write_file(&csv_path, &frequencies_csv(report)?)?;
    Ok(vec![summary_path, csv_path])
}

#[derive(Debug, Clone, Serialize)]
struct SweepRow {
    value: String,
    l_min: usize,
    l_max: usize,
    delta: f64,
    ks: f64,
    h_statistic: f64,
    p_value: f64,
    failures: usize,
}

/// Writes one report directory per swept value plus `sweep.csv`.
pub fn emit_sweep<'a, I>(kind: &str, reports: I, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, AuditError>
where
    I: IntoIterator<Item = (String, &'a AuditReport)>,
{
    let out_dir = out_dir.as_ref();
    let mut written = Vec::new();
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| AuditError::Write {
        path: out_dir.join("sweep.csv"),
        source: std::io::Error::other(e),
    };
    for (value, report) in reports {
        written.extend(emit_report(report, out_dir.join(format!("{kind}-{value}")))?);
        w.serialize(SweepRow {
            value,
            l_min: report.l_min,
            l_max: report.l_max,
            delta: report.comparison.delta,
            ks: report.comparison.ks,
            h_statistic: report.comparison.h_statistic,
            p_value: report.comparison.p_value,
            failures: report.failures,
        })
        .map_err(io)?;
    }
    let path = out_dir.join("sweep.csv");
    write_file(&path, &w.into_inner().map_err(|e| io(e.into_error().into()))?)?;
    written.push(path);
    Ok(written)
}
