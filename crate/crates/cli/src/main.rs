use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use msr_core::corpus::{load_corpus, Cohort, CorpusError, Document, Normalization, TokenizedDocument};
use msr_core::gateway::{BackendSpec, Gateway, GatewayError, ResponseCache, BASE_URL_ENV};
use msr_core::matching::{frequency_array_with_mode, maximal_common_substrings, CountMode};
use msr_core::prompt::{build_transcript, segment};
use msr_core::runner::{
    emit_report, emit_sweep, run_audit, sweep_length, sweep_shots, sweep_temperature, AuditError, CohortGateways,
    ExperimentConfig, LMax, DEFAULT_L_MAX, DEFAULT_L_MIN, DEFAULT_MIN_WORDS,
};
use msr_core::stats::compare_cohorts;
use msr_core::{synthetic, tokenize, FrequencyArray};

mod counts;

const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Backend(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Backend(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Data(e) | Failure::Backend(e) => e,
        }
    }
}

impl From<AuditError> for Failure {
    fn from(e: AuditError) -> Self {
        match e {
            AuditError::Config(_) => Failure::Usage(e.into()),
            AuditError::EmptyCohortResults { .. } | AuditError::Gateway(_) => Failure::Backend(e.into()),
            _ => Failure::Data(e.into()),
        }
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        Failure::Data(e.into())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

#[derive(Parser, Debug)]
#[command(name = "msr", version, about = "Many-shot regurgitation audits for chat language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one audit comparing the pre and post cohorts.
    Audit(AuditArgs),
    /// Run an audit per value of one parameter.
    Sweep {
        kind: SweepKind,
        /// Values to sweep, comma separated.
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        values: Vec<String>,
        #[command(flatten)]
        audit: AuditArgs,
    },
    /// Print maximal verbatim matches between two text files and their frequency array.
    Match {
        reference: PathBuf,
        generated: PathBuf,
        #[arg(long, default_value_t = DEFAULT_L_MIN)]
        lmin: usize,
        #[arg(long, default_value_t = DEFAULT_L_MAX)]
        lmax: usize,
        /// Count matches of exactly length k instead of at least k.
        #[arg(long)]
        exact: bool,
        #[arg(long)]
        lowercase: bool,
        /// Only print the k,f_k table.
        #[arg(long)]
        no_matches: bool,
    },
    /// Compare two count arrays and print delta, KS, H and p as JSON.
    Stats { pre: PathBuf, post: PathBuf },
    /// Print the faux-conversation transcript built for one document.
    Transcript {
        #[arg(long)]
        doc: String,
        #[arg(long)]
        pre: Option<PathBuf>,
        #[arg(long)]
        post: Option<PathBuf>,
        /// Corpus file whose records carry their own cohort.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 6)]
        shots: usize,
        #[arg(long, default_value = msr_core::prompt::DEFAULT_SYSTEM_PROMPT)]
        system_prompt: String,
        #[arg(long)]
        truncate: Option<usize>,
    },
    /// Write seeded synthetic pre/post corpora for offline runs.
    Synth {
        #[arg(long)]
        pre_out: PathBuf,
        #[arg(long)]
        post_out: PathBuf,
        #[arg(long, default_value_t = 100)]
        docs: usize,
        #[arg(long, default_value_t = 1200)]
        words: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SweepKind {
    Shots,
    Temperature,
    Length,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum CountModeArg {
    Threshold,
    Exact,
}

#[derive(Args, Debug, Clone)]
struct AuditArgs {
    #[arg(long)]
    pre: PathBuf,
    #[arg(long)]
    post: PathBuf,
    /// live, verbatim, oblivious, partial:P or partial:P:CHUNKS
    #[arg(long, default_value = "live")]
    backend: BackendSpec,
    /// Separate backend for the post cohort (offline demonstrations).
    #[arg(long)]
    post_backend: Option<BackendSpec>,
    #[arg(long, default_value = "gpt-3.5-turbo-1106")]
    model: String,
    #[arg(long, default_value_t = 6)]
    shots: usize,
    #[arg(long, default_value_t = DEFAULT_L_MIN)]
    lmin: usize,
    /// A word count, or "auto" for floor(truncate / shots).
    #[arg(long, default_value = "12")]
    lmax: String,
    #[arg(long, default_value_t = 0.1)]
    temperature: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_WORDS)]
    min_words: usize,
    #[arg(long)]
    truncate: Option<usize>,
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "msr-out")]
    out: PathBuf,
    #[arg(long, env = BASE_URL_ENV, default_value = DEFAULT_BASE_URL)]
    base_url: String,
    #[arg(long, default_value = msr_core::prompt::DEFAULT_SYSTEM_PROMPT)]
    system_prompt: String,
    #[arg(long, value_enum, default_value_t = CountModeArg::Threshold)]
    count_mode: CountModeArg,
    /// Lowercase tokens before matching.
    #[arg(long)]
    lowercase: bool,
    #[arg(long)]
    max_tokens: Option<u32>,
    /// Per-request timeout in seconds for the live backend.
    #[arg(long, default_value_t = 60)]
    timeout: u64,
}

impl AuditArgs {
    fn config(&self) -> CliResult<ExperimentConfig> {
        let l_max = match self.lmax.as_str() {
            "auto" => LMax::Auto,
            raw => LMax::Fixed(
                raw.parse()
                    .map_err(|_| Failure::Usage(anyhow!("--lmax must be a word count or \"auto\", got \"{raw}\"")))?,
            ),
        };
        Ok(ExperimentConfig {
            shots: self.shots,
            l_min: self.lmin,
            l_max,
            temperature: self.temperature,
            model: self.model.clone(),
            truncate: self.truncate,
            min_words: self.min_words,
            max_in_flight: self.concurrency,
            cache_path: self.cache.clone(),
            seed: self.seed,
            system_prompt: self.system_prompt.clone(),
            count_mode: match self.count_mode {
                CountModeArg::Threshold => CountMode::Threshold,
                CountModeArg::Exact => CountMode::Exact,
            },
            normalization: if self.lowercase { Normalization::Lowercase } else { Normalization::None },
            max_tokens: self.max_tokens,
        })
    }

    fn corpus(&self) -> CliResult<Vec<Document>> {
        let mut docs = load_corpus(&self.pre, Some(Cohort::Pre))?;
        docs.extend(load_corpus(&self.post, Some(Cohort::Post))?);
        Ok(docs)
    }

    fn gateways(&self) -> CliResult<(Gateway, Option<Gateway>)> {
        let cache = Arc::new(match &self.cache {
            Some(path) => ResponseCache::open(path)
                .with_context(|| format!("opening cache {}", path.display()))
                .map_err(Failure::Data)?,
            None => ResponseCache::in_memory(),
        });
        let timeout = Duration::from_secs(self.timeout);
        let build = |spec: &BackendSpec| -> CliResult<Gateway> {
            let backend = spec
                .build(&self.base_url, timeout)
                .map_err(|e: GatewayError| Failure::Backend(e.into()))?;
            Ok(Gateway::new(backend, cache.clone()))
        };
        let main = build(&self.backend)?;
        let post = self.post_backend.as_ref().map(build).transpose()?;
        Ok((main, post))
    }
}

fn print_comparison_line(label: &str, report: &msr_core::AuditReport) {
    let c = &report.comparison;
    println!(
        "{label}: k={}..{} delta={:.4} ks={:.4} H={:.4} p={:.6} failures={}",
        report.l_min, report.l_max, c.delta, c.ks, c.h_statistic, c.p_value, report.failures
    );
}

fn audit(args: &AuditArgs) -> CliResult {
    let config = args.config()?;
    let corpus = args.corpus()?;
    let (main, post) = args.gateways()?;
    let gateways = CohortGateways::split(&main, post.as_ref().unwrap_or(&main));
    let report = run_audit(&corpus, &config, gateways)?;
    emit_report(&report, &args.out)?;
    print_comparison_line("audit", &report);
    println!("wrote {}", args.out.display());
    Ok(())
}

fn parse_values<T: std::str::FromStr>(values: &[String], what: &str) -> CliResult<Vec<T>> {
    values
        .iter()
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Failure::Usage(anyhow!("invalid {what} value \"{v}\"")))
        })
        .collect()
}

fn sweep(kind: SweepKind, values: &[String], args: &AuditArgs) -> CliResult {
    let config = args.config()?;
    let corpus = args.corpus()?;
    let (main, post) = args.gateways()?;
    let gateways = CohortGateways::split(&main, post.as_ref().unwrap_or(&main));
    match kind {
        SweepKind::Shots => {
            let shots: Vec<usize> = parse_values(values, "shot")?;
            let reports = sweep_shots(&corpus, &config, &shots, gateways)?;
            emit_sweep("shots", reports.iter().map(|(n, r)| (n.to_string(), r)), &args.out)?;
            for (n, r) in &reports {
                print_comparison_line(&format!("shots={n}"), r);
            }
        }
        SweepKind::Length => {
            let lengths: Vec<usize> = parse_values(values, "length")?;
            let reports = sweep_length(&corpus, &config, &lengths, gateways)?;
            emit_sweep("length", reports.iter().map(|(l, r)| (l.to_string(), r)), &args.out)?;
            for (l, r) in &reports {
                print_comparison_line(&format!("length={l}"), r);
            }
        }
        SweepKind::Temperature => {
            let temps: Vec<f64> = parse_values(values, "temperature")?;
            let result = sweep_temperature(&corpus, &config, &temps, gateways)?;
            emit_sweep("temperature", result.reports.iter().map(|(t, r)| (t.to_string(), r)), &args.out)?;
            for (t, r) in &result.reports {
                print_comparison_line(&format!("temperature={t}"), r);
            }
            if let Some(cmp) = &result.comparison {
                let path = args.out.join("temperature_comparison.json");
                let json = serde_json::to_string_pretty(cmp).expect("comparison serializes");
                fs::write(&path, json + "\n")
                    .with_context(|| format!("writing {}", path.display()))
                    .map_err(Failure::Data)?;
                println!(
                    "temperature {} vs {}: delta={:.4} ks={:.4} H={:.4} p={:.6}",
                    cmp.low, cmp.high, cmp.comparison.delta, cmp.comparison.ks, cmp.comparison.h_statistic, cmp.comparison.p_value
                );
            }
        }
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Data)
}

fn match_files(reference: &Path, generated: &Path, lmin: usize, lmax: usize, exact: bool, lowercase: bool, no_matches: bool) -> CliResult {
    let norm = if lowercase { Normalization::Lowercase } else { Normalization::None };
    let r_text = read_text(reference)?;
    let g_text = read_text(generated)?;
    let r = norm.apply(tokenize(&r_text).iter().map(|t| t.text.as_str()));
    let g = norm.apply(tokenize(&g_text).iter().map(|t| t.text.as_str()));
    let matches = maximal_common_substrings(&r, &g);
    let mode = if exact { CountMode::Exact } else { CountMode::Threshold };
    let freq = frequency_array_with_mode(&matches, lmin, lmax, mode).map_err(|e| Failure::Usage(e.into()))?;

    let mut out = csv::Writer::from_writer(std::io::stdout());
    let io = |e: csv::Error| Failure::Data(e.into());
    if !no_matches {
        out.write_record(["length", "pos_ref", "pos_gen", "text"]).map_err(io)?;
        let mut sorted = matches.clone();
        sorted.sort_by(|a, b| b.length.cmp(&a.length).then(a.cmp(b)));
        for m in &sorted {
            let text = r[m.pos_ref..m.pos_ref + m.length].join(" ");
            out.write_record([m.length.to_string(), m.pos_ref.to_string(), m.pos_gen.to_string(), text])
                .map_err(io)?;
        }
        out.flush().map_err(|e| Failure::Data(e.into()))?;
        println!();
    }
    let mut out = csv::Writer::from_writer(std::io::stdout());
    out.write_record(["k", "f_k"]).map_err(io)?;
    for (k, f) in freq.iter() {
        out.write_record([k.to_string(), f.to_string()]).map_err(io)?;
    }
    out.flush().map_err(|e| Failure::Data(e.into()))?;
    Ok(())
}

fn stats(pre: &Path, post: &Path) -> CliResult {
    let pre_counts = counts::read_counts(&read_text(pre)?).map_err(|e| Failure::Data(e.context(pre.display().to_string())))?;
    let post_counts =
        counts::read_counts(&read_text(post)?).map_err(|e| Failure::Data(e.context(post.display().to_string())))?;
    let as_array = |counts: Vec<u64>| FrequencyArray {
        l_min: 1,
        l_max: counts.len().max(1),
        mode: CountMode::Threshold,
        counts,
    };
    let cmp = compare_cohorts(&as_array(pre_counts), &as_array(post_counts)).map_err(|e| Failure::Data(e.into()))?;
    println!(
        "{}",
        serde_json::json!({
            "delta": cmp.delta,
            "ks": cmp.ks,
            "h_statistic": cmp.h_statistic,
            "p_value": cmp.p_value,
            "n_pre": cmp.n_second,
            "n_post": cmp.n_first,
        })
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn transcript(
    doc_id: &str,
    pre: Option<&Path>,
    post: Option<&Path>,
    corpus: Option<&Path>,
    shots: usize,
    system_prompt: &str,
    truncate: Option<usize>,
) -> CliResult {
    let mut docs = Vec::new();
    if let Some(p) = pre {
        docs.extend(load_corpus(p, Some(Cohort::Pre))?);
    }
    if let Some(p) = post {
        docs.extend(load_corpus(p, Some(Cohort::Post))?);
    }
    if let Some(p) = corpus {
        docs.extend(load_corpus(p, None)?);
    }
    if docs.is_empty() && pre.is_none() && post.is_none() && corpus.is_none() {
        return Err(Failure::Usage(anyhow!("give at least one of --pre, --post or --corpus")));
    }
    let doc = docs
        .iter()
        .find(|d| d.id == doc_id)
        .ok_or_else(|| Failure::Data(anyhow!("no document with id \"{doc_id}\"")))?;
    let mut tokenized = TokenizedDocument::new(doc)?;
    if let Some(l) = truncate {
        if l == 0 {
            return Err(Failure::Usage(anyhow!("--truncate must be at least 1")));
        }
        tokenized = msr_core::corpus::truncate(&tokenized, l);
    }
    let seg = segment(&tokenized, shots).map_err(|e| match e {
        msr_core::prompt::PromptError::DocumentTooShort { .. } => Failure::Data(e.into()),
        _ => Failure::Usage(e.into()),
    })?;
    let tr = build_transcript(&tokenized, &seg, system_prompt).map_err(|e| Failure::Data(e.into()))?;
    println!("# {} ({}, {} tokens, segment lengths {:?})", doc.id, doc.cohort, tokenized.len(), seg.lengths());
    print!("{}", tr.render());
    Ok(())
}

fn synth(pre_out: &Path, post_out: &Path, docs: usize, words: usize, seed: u64) -> CliResult {
    for (cohort, path) in [(Cohort::Pre, pre_out), (Cohort::Post, post_out)] {
        let mut lines = String::new();
        for doc in synthetic::cohort(cohort, docs, words, seed) {
            lines.push_str(&serde_json::to_string(&doc).expect("document serializes"));
            lines.push('\n');
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Failure::Data(e.into()))?;
        }
        fs::write(path, lines)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(Failure::Data)?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Audit(args) => audit(&args),
        Command::Sweep { kind, values, audit } => sweep(kind, &values, &audit),
        Command::Match { reference, generated, lmin, lmax, exact, lowercase, no_matches } => {
            match_files(&reference, &generated, lmin, lmax, exact, lowercase, no_matches)
        }
        Command::Stats { pre, post } => stats(&pre, &post),
        Command::Transcript { doc, pre, post, corpus, shots, system_prompt, truncate } => transcript(
            &doc,
            pre.as_deref(),
            post.as_deref(),
            corpus.as_deref(),
            shots,
            &system_prompt,
            truncate,
        ),
        Command::Synth { pre_out, post_out, docs, words, seed } => synth(&pre_out, &post_out, docs, words, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            log::debug!("{failure:?}");
            eprintln!("error: {:#}", failure.error());
            ExitCode::from(failure.code())
        }
    }
}
