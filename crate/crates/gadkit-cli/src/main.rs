//! Command-line front end: reproducible decoding runs, exact oracle dumps,
//! and post-hoc convergence reports over recorded traces.
//!
//! Exit codes are part of the contract: 0 success, 2 usage or
//! instance/configuration mismatch, 3 file I/O, 4 model or remote failure,
//! 5 internal invariant violation.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use gadkit::decode::{
    self, DecodeConfig, DecodeError, SampleTrace, TraceRecord, DEFAULT_REJECTION_BUDGET,
};
use gadkit::exact::{self, ExactError};
use gadkit::grammar::{Grammar, GrammarError};
use gadkit::lm::{ModelError, NGramModel, RemoteModel, TableModel, TokenModel};
use gadkit::metrics::{self, MetricsError, Predicate};
use gadkit::trie::{SamplerTrie, TrieError};

const EXIT_USAGE: i32 = 2;
const EXIT_IO: i32 = 3;
const EXIT_MODEL: i32 = 4;
const EXIT_INVARIANT: i32 = 5;

#[derive(Debug)]
struct CliError {
    code: i32,
    err: anyhow::Error,
}

impl CliError {
    fn new(code: i32, err: impl Into<anyhow::Error>) -> CliError {
        CliError {
            code,
            err: err.into(),
        }
    }

    fn usage(msg: impl std::fmt::Display) -> CliError {
        CliError {
            code: EXIT_USAGE,
            err: anyhow!("{msg}"),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

trait Classify<T> {
    fn code(self, code: i32) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn code(self, code: i32) -> CliResult<T> {
        self.map_err(|e| CliError::new(code, e))
    }
}

fn classify_decode(err: DecodeError) -> CliError {
    let code = match &err {
        DecodeError::Model(m) => classify_model_code(m),
        DecodeError::Trie(t) => classify_trie_code(t),
        DecodeError::Io(_) => EXIT_IO,
        DecodeError::BadConfig(_) => EXIT_USAGE,
        DecodeError::BudgetDeadEnd { .. } => EXIT_USAGE,
        DecodeError::Exhausted { .. } => EXIT_USAGE,
        DecodeError::ZeroMass(_) => EXIT_INVARIANT,
        DecodeError::BadTrace { .. } => EXIT_USAGE,
    };
    CliError::new(code, err)
}

fn classify_model_code(err: &ModelError) -> i32 {
    match err {
        ModelError::Io(_) => EXIT_IO,
        ModelError::Transport { .. } => EXIT_MODEL,
        _ => EXIT_USAGE,
    }
}

fn classify_trie_code(err: &TrieError) -> i32 {
    match err {
        TrieError::Io(_) => EXIT_IO,
        TrieError::Model(m) => classify_model_code(m),
        TrieError::PathNotFound { .. } | TrieError::Unexpanded => EXIT_INVARIANT,
        _ => EXIT_USAGE,
    }
}

#[derive(Parser)]
#[command(
    name = "gadkit",
    version,
    about = "Grammar-aligned decoding runs, oracles, and convergence reports"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode with a chosen sampler and write JSON-lines traces.
    Run(RunArgs),
    /// Exhaustively enumerate the grammar-conditioned target distribution.
    Exact(ExactArgs),
    /// Turn trace files into windowed-KL / expectation / TV reports.
    Report(ReportArgs),
    /// Compare two decoders' expectations against the oracle value.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Decoder {
    Gcd,
    Asap,
    Rejection,
}

impl std::fmt::Display for Decoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Decoder::Gcd => write!(f, "gcd"),
            Decoder::Asap => write!(f, "asap"),
            Decoder::Rejection => write!(f, "rejection"),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// BNF grammar file.
    #[arg(long)]
    grammar: PathBuf,
    /// Model spec: `table:<path>` | `ngram:<path>:<n>:<alpha>` | `remote:<url>`.
    #[arg(long)]
    lm: String,
    #[arg(long, value_enum)]
    decoder: Decoder,
    #[arg(long, default_value_t = 2000)]
    iterations: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum tokens per sequence, EOS included.
    #[arg(long, default_value_t = 64)]
    max_len: usize,
    /// Output JSONL trace file.
    #[arg(long)]
    out: PathBuf,
    /// Resume an adaptive run from this trie snapshot.
    #[arg(long)]
    trie_in: Option<PathBuf>,
    /// Write the final trie snapshot here (adaptive decoder only).
    #[arg(long)]
    trie_out: Option<PathBuf>,
    /// Rejection-sampler attempts per emitted sample.
    #[arg(long, default_value_t = DEFAULT_REJECTION_BUDGET)]
    rejection_budget: usize,
    /// Retry count for the remote model backend.
    #[arg(long, default_value_t = 2)]
    remote_retries: u32,
}

#[derive(Args)]
struct ExactArgs {
    #[arg(long)]
    grammar: PathBuf,
    #[arg(long)]
    lm: String,
    /// Maximum tokens per sequence, EOS included.
    #[arg(long, default_value_t = 64)]
    len_bound: usize,
    /// Probability mass allowed beyond the bound.
    #[arg(long, default_value_t = exact::DEFAULT_TAIL_TOLERANCE)]
    tail_tolerance: f64,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    remote_retries: u32,
}

#[derive(Args)]
struct ReportArgs {
    /// One or more JSONL trace files.
    #[arg(long, required = true, num_args = 1..)]
    traces: Vec<PathBuf>,
    #[arg(long, default_value_t = 500)]
    window: usize,
    /// Predicate: grammatical | ends_with:S | contains:S | equals:S.
    #[arg(long, default_value = "grammatical")]
    predicate: String,
    /// Oracle dump from `gadkit exact`, enables the TV column.
    #[arg(long)]
    exact: Option<PathBuf>,
    /// Output directory (defaults to each trace file's directory).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Process trace files with this many threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct CompareArgs {
    /// Baseline decoder traces (greedy masked).
    #[arg(long)]
    gcd: PathBuf,
    /// Adaptive decoder traces.
    #[arg(long)]
    asap: PathBuf,
    /// Oracle dump from `gadkit exact`.
    #[arg(long)]
    exact: PathBuf,
    #[arg(long, default_value = "grammatical")]
    predicate: String,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Exact(args) => cmd_exact(args),
        Command::Report(args) => cmd_report(args),
        Command::Compare(args) => cmd_compare(args),
    };
    if let Err(e) = result {
        eprintln!("error: {:#}", e.err);
        std::process::exit(e.code);
    }
}

// ------------------------------------------------------------------ loading

fn load_grammar(path: &Path) -> CliResult<Grammar> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading grammar {}", path.display()))
        .code(EXIT_IO)?;
    Grammar::parse_bnf(&text)
        .map_err(|e: GrammarError| CliError::usage(format!("grammar {}: {e}", path.display())))
}

fn remote_timeout() -> Duration {
    let ms = std::env::var("GADKIT_REMOTE_TIMEOUT_MS")
        .ok()
        .and_then(|v| v.parse::<u64>().ok())
        .unwrap_or(5000);
    Duration::from_millis(ms)
}

fn load_model(spec: &str, remote_retries: u32) -> CliResult<Box<dyn TokenModel>> {
    let (kind, rest) = spec
        .split_once(':')
        .ok_or_else(|| CliError::usage(format!("bad model spec {spec:?}")))?;
    match kind {
        "table" => {
            let model =
                TableModel::load(rest).map_err(|e| CliError::new(classify_model_code(&e), e))?;
            Ok(Box::new(model))
        }
        "ngram" => {
            // ngram:<path>:<n>:<alpha> — split the two numerics off the right.
            let (rest2, alpha) = rest
                .rsplit_once(':')
                .ok_or_else(|| CliError::usage("ngram spec needs ngram:<path>:<n>:<alpha>"))?;
            let (path, order) = rest2
                .rsplit_once(':')
                .ok_or_else(|| CliError::usage("ngram spec needs ngram:<path>:<n>:<alpha>"))?;
            let order: usize = order
                .parse()
                .map_err(|_| CliError::usage("ngram order must be an integer"))?;
            let alpha: f64 = alpha
                .parse()
                .map_err(|_| CliError::usage("ngram alpha must be a number"))?;
            let model = NGramModel::load(path, order, alpha)
                .map_err(|e| CliError::new(classify_model_code(&e), e))?;
            Ok(Box::new(model))
        }
        "remote" => {
            let model = RemoteModel::connect(rest, remote_timeout(), remote_retries)
                .map_err(|e| CliError::new(EXIT_MODEL, e))?;
            Ok(Box::new(model))
        }
        other => Err(CliError::usage(format!("unknown model backend {other:?}"))),
    }
}

// ---------------------------------------------------------------------- run

#[derive(Serialize)]
struct RunMeta<'a> {
    created_unix_ms: u128,
    tool_version: &'a str,
    command: &'a str,
    grammar: String,
    lm: &'a str,
    decoder: String,
    iterations: u64,
    seed: u64,
    max_len: usize,
    vocab_fingerprint: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    resumed_at: Option<u64>,
}

fn cmd_run(args: RunArgs) -> CliResult<()> {
    if args.decoder != Decoder::Asap && (args.trie_in.is_some() || args.trie_out.is_some()) {
        return Err(CliError::usage(
            "--trie-in/--trie-out require --decoder asap",
        ));
    }
    let grammar = load_grammar(&args.grammar)?;
    let model = load_model(&args.lm, args.remote_retries)?;
    let config = DecodeConfig {
        max_len: args.max_len,
        seed: args.seed,
        iterations: args.iterations,
    };

    let mut resumed_at = None;
    let traces: Vec<SampleTrace> = match args.decoder {
        Decoder::Gcd => {
            decode::run_gcd(model.as_ref(), &grammar, config).map_err(classify_decode)?
        }
        Decoder::Rejection => {
            decode::run_rejection(model.as_ref(), &grammar, config, args.rejection_budget)
                .map_err(classify_decode)?
        }
        Decoder::Asap => {
            let trie = match &args.trie_in {
                Some(path) => {
                    let t = SamplerTrie::load(path, model.vocabulary())
                        .map_err(|e| CliError::new(classify_trie_code(&e), e))?;
                    resumed_at = Some(t.sample_count());
                    t
                }
                None => SamplerTrie::new(model.vocabulary()),
            };
            let (traces, trie) = decode::run_asap(model.as_ref(), &grammar, config, trie)
                .map_err(classify_decode)?;
            if let Some(path) = &args.trie_out {
                trie.save(path)
                    .map_err(|e| CliError::new(classify_trie_code(&e), e))?;
            }
            traces
        }
    };

    // The masked samplers guarantee grammaticality; a violation here means
    // the recognizer and the sampler disagree.
    if let Some(bad) = traces.iter().find(|t| !t.grammatical) {
        return Err(CliError::new(
            EXIT_INVARIANT,
            anyhow!("ungrammatical sample {:?} escaped the sampler", bad.text),
        ));
    }

    let meta = RunMeta {
        created_unix_ms: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0),
        tool_version: env!("CARGO_PKG_VERSION"),
        command: "run",
        grammar: args.grammar.display().to_string(),
        lm: &args.lm,
        decoder: args.decoder.to_string(),
        iterations: args.iterations,
        seed: args.seed,
        max_len: args.max_len,
        vocab_fingerprint: model.vocabulary().fingerprint().to_string(),
        resumed_at,
    };

    let mut out = std::fs::File::create(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .code(EXIT_IO)?;
    let meta_line = serde_json::json!({ "meta": meta });
    writeln!(out, "{meta_line}").code(EXIT_IO)?;
    let records: Vec<TraceRecord> = traces.iter().map(|t| t.record()).collect();
    decode::write_jsonl(&mut out, &records).code(EXIT_IO)?;
    Ok(())
}

// -------------------------------------------------------------------- exact

fn classify_exact(err: ExactError) -> CliError {
    let code = match &err {
        ExactError::Model(m) => classify_model_code(m),
        _ => EXIT_USAGE,
    };
    CliError::new(code, err)
}

fn cmd_exact(args: ExactArgs) -> CliResult<()> {
    let grammar = load_grammar(&args.grammar)?;
    let model = load_model(&args.lm, args.remote_retries)?;
    let dist = exact::enumerate_q(
        model.as_ref(),
        &grammar,
        args.len_bound,
        args.tail_tolerance,
    )
    .map_err(classify_exact)?;
    let json = dist.to_json(model.vocabulary()).map_err(classify_exact)?;
    match &args.out {
        Some(path) => std::fs::write(path, json + "\n").code(EXIT_IO)?,
        None => println!("{json}"),
    }
    Ok(())
}

// ------------------------------------------------------------------- report

/// Text-keyed form of an `exact` dump, as read back from disk.
#[derive(Deserialize)]
struct ExactDump {
    #[serde(rename = "C")]
    #[allow(dead_code)]
    c: f64,
    vocab_fingerprint: String,
    support: BTreeMap<String, f64>,
}

impl ExactDump {
    fn load(path: &Path) -> CliResult<ExactDump> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading oracle dump {}", path.display()))
            .code(EXIT_IO)?;
        serde_json::from_str(&text)
            .with_context(|| format!("parsing oracle dump {}", path.display()))
            .code(EXIT_USAGE)
    }

    fn expectation(&self, predicate: &Predicate) -> f64 {
        self.support
            .iter()
            .map(|(text, &q)| if predicate.eval(text, true) { q } else { 0.0 })
            .sum()
    }

    /// Total variation between a window's text histogram and the dump.
    fn tv(&self, window: &[TraceRecord]) -> CliResult<f64> {
        let mut hist: BTreeMap<&str, f64> = BTreeMap::new();
        let share = 1.0 / window.len() as f64;
        for t in window {
            if !self.support.contains_key(&t.text) {
                return Err(CliError::new(
                    EXIT_INVARIANT,
                    anyhow!("trace {:?} lies outside the oracle support", t.text),
                ));
            }
            *hist.entry(t.text.as_str()).or_default() += share;
        }
        let sum: f64 = self
            .support
            .iter()
            .map(|(text, &q)| (hist.get(text.as_str()).copied().unwrap_or(0.0) - q).abs())
            .sum();
        Ok(sum / 2.0)
    }
}

/// Meta header of a trace file, if present.
fn read_meta(path: &Path) -> CliResult<Option<serde_json::Value>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading traces {}", path.display()))
        .code(EXIT_IO)?;
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(trimmed)
            .with_context(|| format!("parsing {}", path.display()))
            .code(EXIT_USAGE)?;
        return Ok(value.get("meta").cloned());
    }
    Ok(None)
}

fn read_traces(path: &Path) -> CliResult<Vec<TraceRecord>> {
    let file = std::fs::File::open(path)
        .with_context(|| format!("reading traces {}", path.display()))
        .code(EXIT_IO)?;
    decode::read_jsonl(std::io::BufReader::new(file)).map_err(classify_decode)
}

fn check_fingerprints(
    meta: &Option<serde_json::Value>,
    dump: &ExactDump,
    what: &str,
) -> CliResult<()> {
    if let Some(meta) = meta {
        if let Some(fp) = meta.get("vocab_fingerprint").and_then(|v| v.as_str()) {
            if fp != dump.vocab_fingerprint {
                return Err(CliError::usage(format!(
                    "vocabulary fingerprint of {what} does not match the oracle dump"
                )));
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ReportSummary {
    traces: String,
    count: usize,
    window: usize,
    predicate: String,
    first_window_kl: f64,
    final_window_kl: f64,
    final_expectation: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    first_window_tv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_window_tv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle_expectation: Option<f64>,
}

fn classify_metrics(err: MetricsError) -> CliError {
    let code = match &err {
        MetricsError::OutsideSupport { .. } => EXIT_INVARIANT,
        _ => EXIT_USAGE,
    };
    CliError::new(code, err)
}

fn report_one(
    path: &Path,
    window: usize,
    predicate: &Predicate,
    dump: Option<&ExactDump>,
    out_dir: Option<&Path>,
) -> CliResult<()> {
    let meta = read_meta(path)?;
    if let Some(dump) = dump {
        check_fingerprints(&meta, dump, &path.display().to_string())?;
    }
    let traces = read_traces(path)?;
    let kl = metrics::kl_series(&traces, window).map_err(classify_metrics)?;
    let expectation = metrics::expectation_series(&traces, predicate);
    let tv = match dump {
        Some(dump) => {
            let mut series = Vec::with_capacity(kl.len());
            for k in 0..=traces.len() - window {
                series.push(dump.tv(&traces[k..k + window])?);
            }
            Some(series)
        }
        None => None,
    };

    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("traces");
    let dir = out_dir
        .map(Path::to_path_buf)
        .or_else(|| path.parent().map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).code(EXIT_IO)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.summary.json"));

    let mut w = csv::Writer::from_path(&csv_path)
        .with_context(|| format!("creating {}", csv_path.display()))
        .code(EXIT_IO)?;
    w.write_record(["index", "kl_window", "expectation", "tv_window"])
        .code(EXIT_IO)?;
    for (i, exp_val) in expectation.iter().enumerate() {
        let kl_cell = kl.get(i).map(|v| v.to_string()).unwrap_or_default();
        let tv_cell = tv
            .as_ref()
            .and_then(|s| s.get(i))
            .map(|v| v.to_string())
            .unwrap_or_default();
        w.write_record([i.to_string(), kl_cell, exp_val.to_string(), tv_cell])
            .code(EXIT_IO)?;
    }
    w.flush().code(EXIT_IO)?;

    let summary = ReportSummary {
        traces: path.display().to_string(),
        count: traces.len(),
        window,
        predicate: predicate.to_string(),
        first_window_kl: *kl.first().unwrap(),
        final_window_kl: *kl.last().unwrap(),
        final_expectation: *expectation.last().unwrap(),
        first_window_tv: tv.as_ref().map(|s| *s.first().unwrap()),
        final_window_tv: tv.as_ref().map(|s| *s.last().unwrap()),
        oracle_expectation: dump.map(|d| d.expectation(predicate)),
    };
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(&summary).expect("serialization cannot fail") + "\n",
    )
    .code(EXIT_IO)?;
    Ok(())
}

fn cmd_report(args: ReportArgs) -> CliResult<()> {
    let predicate = Predicate::parse(&args.predicate).map_err(classify_metrics)?;
    let dump = match &args.exact {
        Some(path) => Some(ExactDump::load(path)?),
        None => None,
    };
    if args.jobs <= 1 || args.traces.len() <= 1 {
        for path in &args.traces {
            report_one(
                path,
                args.window,
                &predicate,
                dump.as_ref(),
                args.out_dir.as_deref(),
            )?;
        }
        return Ok(());
    }
    let jobs = args.jobs.min(args.traces.len());
    let queue = std::sync::Mutex::new(args.traces.clone().into_iter());
    let failures: std::sync::Mutex<Vec<CliError>> = std::sync::Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let Some(path) = queue.lock().unwrap().next() else {
                    break;
                };
                if let Err(e) = report_one(
                    &path,
                    args.window,
                    &predicate,
                    dump.as_ref(),
                    args.out_dir.as_deref(),
                ) {
                    failures.lock().unwrap().push(e);
                    break;
                }
            });
        }
    });
    match failures.into_inner().unwrap().into_iter().next() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

// ------------------------------------------------------------------ compare

#[derive(Serialize)]
struct CompareOutput {
    predicate: String,
    oracle_expectation: f64,
    gcd_expectation: f64,
    asap_expectation: f64,
    gcd_abs_error: f64,
    asap_abs_error: f64,
    closer: &'static str,
}

fn cmd_compare(args: CompareArgs) -> CliResult<()> {
    let predicate = Predicate::parse(&args.predicate).map_err(classify_metrics)?;
    let dump = ExactDump::load(&args.exact)?;
    check_fingerprints(&read_meta(&args.gcd)?, &dump, "the gcd traces")?;
    check_fingerprints(&read_meta(&args.asap)?, &dump, "the asap traces")?;

    let final_expectation = |path: &Path| -> CliResult<f64> {
        let traces = read_traces(path)?;
        if traces.is_empty() {
            return Err(CliError::usage(format!(
                "{} holds no traces",
                path.display()
            )));
        }
        Ok(*metrics::expectation_series(&traces, &predicate)
            .last()
            .unwrap())
    };
    let gcd_expectation = final_expectation(&args.gcd)?;
    let asap_expectation = final_expectation(&args.asap)?;
    let oracle = dump.expectation(&predicate);

    let output = CompareOutput {
        predicate: predicate.to_string(),
        oracle_expectation: oracle,
        gcd_expectation,
        asap_expectation,
        gcd_abs_error: (gcd_expectation - oracle).abs(),
        asap_abs_error: (asap_expectation - oracle).abs(),
        closer: if (asap_expectation - oracle).abs() <= (gcd_expectation - oracle).abs() {
            "asap"
        } else {
            "gcd"
        },
    };
    let json = serde_json::to_string_pretty(&output).expect("serialization cannot fail");
    match &args.out {
        Some(path) => std::fs::write(path, json + "\n").code(EXIT_IO)?,
        None => println!("{json}"),
    }
    Ok(())
}
