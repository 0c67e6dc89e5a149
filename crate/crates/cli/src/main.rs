//! brandlens: two-phase LLM-backed phishing webpage detection.
//!
//! Every subcommand prints a single-line JSON error to stderr on failure and
//! exits with a documented code. `detect` encodes its verdict in the exit
//! code so shell pipelines can branch without parsing JSON.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde_json::json;

use brandlens::config::{RunConfig, TransportKind};
use brandlens::domain::PslList;
use brandlens::eval::{build_report, collect_labels, token_stats, BrandAliases};
use brandlens::filter::{calibrate_thresholds, classify_validity, CheckOutcome};
use brandlens::gateway::{Gateway, LiveTransport, RecorderTransport, ReplayTransport, Transport};
use brandlens::html::{extract_key_info, truncate_for_budget};
use brandlens::pipeline::{
    detect, detect_batch, read_completed, PhishingVerdict, VerdictOutcome, Verifier,
};
use brandlens::prompt::InputMode;
use brandlens::snapshot::{load_snapshot, scan_dataset};

/// Success, and the `detect` verdict Genuine.
const EXIT_OK: u8 = 0;
/// Generic failure (bad input, IO, config).
const EXIT_ERROR: u8 = 1;
/// Unreadable dataset root.
const EXIT_UNREADABLE: u8 = 2;
/// `detect` verdicts.
const EXIT_PHISHING: u8 = 3;
const EXIT_UNKNOWN: u8 = 4;
const EXIT_INVALID: u8 = 5;
const EXIT_DETECT_ERROR: u8 = 6;

const EXIT_CODE_HELP: &str = "\
Exit codes:
  0  success; for `detect`: verdict Genuine
  1  error (bad input, unreadable files, configuration)
  2  unreadable dataset root (`scan`)
  3  `detect` verdict: Phishing
  4  `detect` verdict: Unknown (no brand identified; manual review)
  5  `detect` verdict: Invalid (sample failed validity filters)
  6  `detect` verdict: Error (gateway or parse failure)

Credentials are read from BRANDLENS_API_KEY_<PROVIDER> environment
variables (e.g. BRANDLENS_API_KEY_OPENAI), never from flags.";

#[derive(Parser)]
#[command(
    name = "brandlens",
    version,
    about = "Two-phase LLM-backed phishing webpage detection",
    after_long_help = EXIT_CODE_HELP
)]
struct Cli {
    /// TOML or JSON config file; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan a dataset: manifest JSON on stdout, duplicate pairs to a JSONL report.
    Scan {
        /// Dataset root holding one directory per sample.
        root: PathBuf,
        /// Where to write the dedup report (JSONL, one retained/dropped pair per line).
        #[arg(long, value_name = "PATH", default_value = "dedup_report.jsonl")]
        dedup_report: PathBuf,
    },
    /// Run the validity filters; one ValidityReport JSONL line per sample.
    Filter {
        root: PathBuf,
        /// JSON file of labeled blank/non-blank samples used to calibrate
        /// thresholds before filtering: [{"sample": "id", "blank": true}, ...]
        #[arg(long, value_name = "PATH")]
        calibrate: Option<PathBuf>,
        /// Output path for the report JSONL (default: stdout).
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
    },
    /// Extract HTML key information from one sample as JSON.
    Extract {
        /// Sample directory.
        sample: PathBuf,
        /// Apply the character budget before printing.
        #[arg(long, value_name = "CHARS")]
        budget: Option<usize>,
    },
    /// Detect one sample; the verdict JSON goes to stdout, the outcome to the exit code.
    Detect {
        sample: PathBuf,
        /// Input mode: screenshot|html|both.
        #[arg(long)]
        mode: String,
        /// Model id, e.g. openai/gpt-4-turbo.
        #[arg(long)]
        model: String,
        /// Phase-2 verifier: llm|baseline.
        #[arg(long)]
        verifier: Option<String>,
        /// Gateway backend: live|record|replay.
        #[arg(long)]
        transport: Option<String>,
        /// Fixture file for record/replay transports.
        #[arg(long, value_name = "PATH")]
        fixtures: Option<PathBuf>,
    },
    /// Detect every (sample, mode, model) cell of a dataset into a results JSONL file.
    Batch {
        root: PathBuf,
        /// Input mode (repeatable): screenshot|html|both.
        #[arg(long = "mode")]
        modes: Vec<String>,
        /// Model id (repeatable).
        #[arg(long = "model")]
        models: Vec<String>,
        #[arg(long)]
        verifier: Option<String>,
        #[arg(long)]
        transport: Option<String>,
        #[arg(long, value_name = "PATH")]
        fixtures: Option<PathBuf>,
        /// Results file (JSONL).
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
        /// Skip cells already present in the output file and append.
        #[arg(long)]
        resume: bool,
        /// Worker threads (default from config, 4).
        #[arg(long, value_name = "N")]
        max_in_flight: Option<usize>,
    },
    /// Compute the evaluation report from a results file and dataset labels.
    Eval {
        /// Results JSONL produced by `batch`.
        #[arg(long, value_name = "PATH")]
        results: PathBuf,
        /// Dataset root carrying ground-truth labels in metadata.json.
        #[arg(long, value_name = "PATH")]
        labels: PathBuf,
        /// Report destination (default: stdout).
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
        /// Also write one CSV table per report section into this directory.
        #[arg(long, value_name = "DIR")]
        csv_dir: Option<PathBuf>,
    },
    /// Token-consumption statistics per (model, mode) from a results file.
    Cost {
        #[arg(long, value_name = "PATH")]
        results: PathBuf,
    },
}

struct CliError {
    kind: String,
    detail: String,
    exit: u8,
}

impl CliError {
    fn new(kind: &str, detail: impl ToString) -> Self {
        Self {
            kind: kind.into(),
            detail: detail.to_string(),
            exit: EXIT_ERROR,
        }
    }

    fn with_exit(mut self, exit: u8) -> Self {
        self.exit = exit;
        self
    }
}

type CliResult<T> = Result<T, CliError>;

fn parse_mode(s: &str) -> CliResult<InputMode> {
    InputMode::from_str(s).map_err(|e| CliError::new("bad_flag", e))
}

fn parse_verifier(s: &str) -> CliResult<Verifier> {
    Verifier::from_str(s).map_err(|e| CliError::new("bad_flag", e))
}

fn parse_transport(s: &str) -> CliResult<TransportKind> {
    TransportKind::from_str(s).map_err(|e| CliError::new("bad_flag", e))
}

fn load_config(path: &Option<PathBuf>) -> CliResult<RunConfig> {
    match path {
        Some(path) => RunConfig::load(path).map_err(|e| CliError::new("config", e)),
        None => Ok(RunConfig::default()),
    }
}

/// Builds the gateway for the configured transport. The recorder handle is
/// returned so batch can report how many new fixture entries a run produced.
fn build_gateway(config: &RunConfig) -> CliResult<(Gateway, Option<Arc<RecorderTransport>>)> {
    config.validate().map_err(|e| CliError::new("config", e))?;
    let mut recorder = None;
    let transport: Arc<dyn Transport> = match config.transport {
        TransportKind::Replay => Arc::new(
            ReplayTransport::open(&config.fixture_path).map_err(|e| CliError::new("fixture", e))?,
        ),
        TransportKind::Live => Arc::new(
            LiveTransport::from_env(config.providers.clone())
                .map_err(|e| CliError::new("credentials", e))?,
        ),
        TransportKind::Record => {
            let live = LiveTransport::from_env(config.providers.clone())
                .map_err(|e| CliError::new("credentials", e))?;
            let rec = Arc::new(
                RecorderTransport::create(&config.fixture_path, Arc::new(live))
                    .map_err(|e| CliError::new("fixture", e))?,
            );
            recorder = Some(rec.clone());
            rec
        }
    };
    let mut gateway = Gateway::new(transport);
    if let Some(per_sec) = config.rate_limit_per_sec {
        gateway = gateway.with_rate_limit(per_sec);
    }
    Ok((gateway, recorder))
}

fn open_output(path: &Path, append: bool) -> CliResult<BufWriter<File>> {
    let file = if append {
        OpenOptions::new().create(true).append(true).open(path)
    } else {
        File::create(path)
    }
    .map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
    Ok(BufWriter::new(file))
}

fn read_results(path: &Path) -> CliResult<Vec<PhishingVerdict>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
    let mut verdicts = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let verdict: PhishingVerdict = serde_json::from_str(line).map_err(|e| {
            CliError::new("results", format!("{}:{}: {e}", path.display(), idx + 1))
        })?;
        verdicts.push(verdict);
    }
    Ok(verdicts)
}

fn sorted_sample_dirs(root: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = fs::read_dir(root).map_err(|e| {
        CliError::new("io", format!("{}: {e}", root.display())).with_exit(EXIT_UNREADABLE)
    })?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn cmd_scan(root: &Path, dedup_report: &Path) -> CliResult<u8> {
    let (snapshots, report) =
        scan_dataset(root).map_err(|e| CliError::new("scan", e).with_exit(EXIT_UNREADABLE))?;
    let file = File::create(dedup_report)
        .map_err(|e| CliError::new("io", format!("{}: {e}", dedup_report.display())))?;
    report
        .write_jsonl(BufWriter::new(file))
        .map_err(|e| CliError::new("io", e))?;
    let manifest = json!({
        "root": root.display().to_string(),
        "samples": snapshots.iter().map(|s| s.sample_id.as_str()).collect::<Vec<_>>(),
        "duplicates": report.duplicates.len(),
        "errors": report.errors,
    });
    println!("{}", serde_json::to_string_pretty(&manifest).unwrap());
    Ok(EXIT_OK)
}

#[derive(serde::Deserialize)]
struct CalibrationLabel {
    sample: String,
    blank: bool,
}

fn cmd_filter(
    config: &RunConfig,
    root: &Path,
    calibrate: &Option<PathBuf>,
    output: &Option<PathBuf>,
) -> CliResult<u8> {
    let mut thresholds = config.thresholds.clone();
    if let Some(labels_path) = calibrate {
        let text = fs::read_to_string(labels_path)
            .map_err(|e| CliError::new("io", format!("{}: {e}", labels_path.display())))?;
        let labels: Vec<CalibrationLabel> =
            serde_json::from_str(&text).map_err(|e| CliError::new("calibrate", e))?;
        let mut examples = Vec::new();
        for label in &labels {
            let snapshot = load_snapshot(&root.join(&label.sample))
                .map_err(|e| CliError::new("calibrate", format!("{}: {e}", label.sample)))?;
            examples.push((snapshot, label.blank));
        }
        let calibration =
            calibrate_thresholds(&examples, None).map_err(|e| CliError::new("calibrate", e))?;
        thresholds = calibration.thresholds;
        eprintln!(
            "{}",
            json!({"calibrated_thresholds": thresholds, "warnings": calibration.warnings})
        );
    }

    let mut out: Box<dyn Write> = match output {
        Some(path) => Box::new(open_output(path, false)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut counts: HashMap<String, [u64; 3]> = HashMap::new();
    for dir in sorted_sample_dirs(root)? {
        let snapshot = match load_snapshot(&dir) {
            Ok(s) => s,
            Err(err) => {
                eprintln!(
                    "{}",
                    json!({
                        "skipped": dir.file_name().map(|n| n.to_string_lossy().into_owned()),
                        "error": err.to_string(),
                    })
                );
                continue;
            }
        };
        let report = classify_validity(&snapshot, &thresholds, None, &config.verification_keywords);
        for (check, outcome) in &report.outcomes {
            let key = serde_json::to_value(check).unwrap();
            let slot = counts.entry(key.as_str().unwrap().to_string()).or_default();
            match outcome {
                CheckOutcome::Pass => slot[0] += 1,
                CheckOutcome::Fail(_) => slot[1] += 1,
                CheckOutcome::Skipped(_) => slot[2] += 1,
            }
        }
        let line = serde_json::to_string(&report).unwrap();
        writeln!(out, "{line}").map_err(|e| CliError::new("io", e))?;
    }
    out.flush().map_err(|e| CliError::new("io", e))?;
    let summary: serde_json::Map<String, serde_json::Value> = counts
        .into_iter()
        .map(|(check, [pass, fail, skipped])| {
            (
                check,
                json!({"pass": pass, "fail": fail, "skipped": skipped}),
            )
        })
        .collect();
    eprintln!("{}", serde_json::Value::Object(summary));
    Ok(EXIT_OK)
}

fn cmd_extract(sample: &Path, budget: Option<usize>) -> CliResult<u8> {
    let snapshot = load_snapshot(sample).map_err(|e| CliError::new("load", e))?;
    let mut info = extract_key_info(&snapshot.html);
    if let Some(budget) = budget {
        info = truncate_for_budget(&info, budget);
    }
    println!("{}", serde_json::to_string_pretty(&info).unwrap());
    Ok(EXIT_OK)
}

fn verdict_exit(outcome: VerdictOutcome) -> u8 {
    match outcome {
        VerdictOutcome::Genuine => EXIT_OK,
        VerdictOutcome::Phishing => EXIT_PHISHING,
        VerdictOutcome::Unknown => EXIT_UNKNOWN,
        VerdictOutcome::Invalid => EXIT_INVALID,
        VerdictOutcome::Error => EXIT_DETECT_ERROR,
    }
}

fn cmd_detect(
    mut config: RunConfig,
    sample: &Path,
    mode: &str,
    model: &str,
    verifier: &Option<String>,
    transport: &Option<String>,
    fixtures: &Option<PathBuf>,
) -> CliResult<u8> {
    let mode = parse_mode(mode)?;
    if let Some(v) = verifier {
        config.verifier = parse_verifier(v)?;
    }
    if let Some(t) = transport {
        config.transport = parse_transport(t)?;
    }
    if let Some(f) = fixtures {
        config.fixture_path = f.clone();
    }
    config.models = vec![model.to_string()];

    let snapshot = load_snapshot(sample).map_err(|e| CliError::new("load", e))?;
    let (gateway, _recorder) = build_gateway(&config)?;
    let verdict = detect(
        &snapshot,
        mode,
        model,
        &gateway,
        &config.detect_settings(),
        PslList::bundled(),
        None,
    );
    println!("{}", serde_json::to_string_pretty(&verdict).unwrap());
    Ok(verdict_exit(verdict.outcome))
}

#[allow(clippy::too_many_arguments)]
fn cmd_batch(
    mut config: RunConfig,
    root: &Path,
    modes: &[String],
    models: &[String],
    verifier: &Option<String>,
    transport: &Option<String>,
    fixtures: &Option<PathBuf>,
    output: &Option<PathBuf>,
    resume: bool,
    max_in_flight: Option<usize>,
) -> CliResult<u8> {
    if !modes.is_empty() {
        config.modes = modes
            .iter()
            .map(|m| parse_mode(m))
            .collect::<CliResult<_>>()?;
    }
    if !models.is_empty() {
        config.models = models.to_vec();
    }
    if let Some(v) = verifier {
        config.verifier = parse_verifier(v)?;
    }
    if let Some(t) = transport {
        config.transport = parse_transport(t)?;
    }
    if let Some(f) = fixtures {
        config.fixture_path = f.clone();
    }
    if let Some(o) = output {
        config.output_path = o.clone();
    }
    if let Some(n) = max_in_flight {
        config.max_in_flight = n;
    }
    if config.models.is_empty() {
        return Err(CliError::new("usage", "at least one --model is required"));
    }
    if config.modes.is_empty() {
        return Err(CliError::new("usage", "at least one --mode is required"));
    }

    let completed = if resume {
        read_completed(&config.output_path).map_err(|e| CliError::new("resume", e))?
    } else {
        Default::default()
    };
    let (gateway, recorder) = build_gateway(&config)?;
    let mut out = open_output(&config.output_path, resume)?;
    let summary = detect_batch(
        root,
        &config.modes,
        &config.models,
        &gateway,
        &config.detect_settings(),
        PslList::bundled(),
        None,
        &completed,
        &mut out,
        config.max_in_flight,
    )
    .map_err(|e| CliError::new("batch", e))?;
    let mut summary_json = serde_json::to_value(&summary).unwrap();
    if let Some(recorder) = recorder {
        summary_json["recorder_new_entries"] = json!(recorder.written());
    }
    eprintln!("{summary_json}");
    Ok(EXIT_OK)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|f| f.to_string()).unwrap_or_default()
}

/// One CSV table per report section, for plotting.
fn write_csvs(report: &brandlens::EvalReport, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::new("io", format!("{}: {e}", dir.display())))?;
    let write = |name: &str, content: String| -> CliResult<()> {
        let path = dir.join(name);
        fs::write(&path, content)
            .map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
    };

    let mut metrics = String::from(
        "model,mode,precision,recall,f1,true_positives,false_positives,false_negatives,true_negatives\n",
    );
    for (model, modes) in &report.metrics {
        for (mode, m) in modes {
            metrics.push_str(&format!(
                "{model},{mode},{},{},{},{},{},{},{}\n",
                fmt_opt(m.precision),
                fmt_opt(m.recall),
                fmt_opt(m.f1),
                m.counts.true_positives,
                m.counts.false_positives,
                m.counts.false_negatives,
                m.counts.true_negatives,
            ));
        }
    }
    write("metrics.csv", metrics)?;

    let mut wins = String::from("model,benign_pct,phishing_pct\n");
    if let Some(exclusive) = &report.exclusive_wins {
        for (model, w) in exclusive {
            wins.push_str(&format!(
                "{model},{},{}\n",
                fmt_opt(w.benign_pct),
                fmt_opt(w.phishing_pct)
            ));
        }
    }
    write("exclusive_wins.csv", wins)?;

    let mut categories = String::from("model,category,count\n");
    for (model, counts) in &report.effect_categories {
        for (category, count) in counts {
            let name = serde_json::to_value(category).unwrap();
            categories.push_str(&format!("{model},{},{count}\n", name.as_str().unwrap()));
        }
    }
    write("effect_categories.csv", categories)?;

    let mut tokens = String::from("model,mode,min,q1,median,q3,max,mean,outliers\n");
    for (model, modes) in &report.token_stats {
        for (mode, s) in modes {
            let outliers = s
                .outliers
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(";");
            tokens.push_str(&format!(
                "{model},{mode},{},{},{},{},{},{},{outliers}\n",
                s.min, s.q1, s.median, s.q3, s.max, s.mean
            ));
        }
    }
    write("token_stats.csv", tokens)
}

fn cmd_eval(
    config: &RunConfig,
    results: &Path,
    labels_root: &Path,
    output: &Option<PathBuf>,
    csv_dir: &Option<PathBuf>,
) -> CliResult<u8> {
    let verdicts = read_results(results)?;
    let labels = collect_labels(labels_root)
        .map_err(|e| CliError::new("labels", format!("{}: {e}", labels_root.display())))?;
    let aliases = BrandAliases::new(&config.brand_aliases);
    let report =
        build_report(&verdicts, &labels, &aliases).map_err(|e| CliError::new("eval", e))?;
    if let Some(dir) = csv_dir {
        write_csvs(&report, dir)?;
    }
    let text = serde_json::to_string_pretty(&report).unwrap();
    match output {
        Some(path) => fs::write(path, text.as_bytes())
            .map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?,
        None => println!("{text}"),
    }
    Ok(EXIT_OK)
}

fn cmd_cost(results: &Path) -> CliResult<u8> {
    let verdicts = read_results(results)?;
    let mut grouped: std::collections::BTreeMap<
        String,
        std::collections::BTreeMap<String, Vec<u64>>,
    > = Default::default();
    for verdict in &verdicts {
        if verdict.usage.total() == 0 {
            continue;
        }
        grouped
            .entry(verdict.model.clone())
            .or_default()
            .entry(verdict.mode.as_str().to_string())
            .or_default()
            .push(verdict.usage.total());
    }
    let mut out = serde_json::Map::new();
    for (model, modes) in grouped {
        let mut per_mode = serde_json::Map::new();
        for (mode, totals) in modes {
            let stats = token_stats(&totals).map_err(|e| CliError::new("cost", e))?;
            per_mode.insert(mode, serde_json::to_value(stats).unwrap());
        }
        out.insert(model, serde_json::Value::Object(per_mode));
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::Value::Object(out)).unwrap()
    );
    Ok(EXIT_OK)
}

fn run(cli: Cli) -> CliResult<u8> {
    let config = load_config(&cli.config)?;
    match &cli.command {
        Command::Scan { root, dedup_report } => cmd_scan(root, dedup_report),
        Command::Filter {
            root,
            calibrate,
            output,
        } => cmd_filter(&config, root, calibrate, output),
        Command::Extract { sample, budget } => cmd_extract(sample, *budget),
        Command::Detect {
            sample,
            mode,
            model,
            verifier,
            transport,
            fixtures,
        } => cmd_detect(config, sample, mode, model, verifier, transport, fixtures),
        Command::Batch {
            root,
            modes,
            models,
            verifier,
            transport,
            fixtures,
            output,
            resume,
            max_in_flight,
        } => cmd_batch(
            config,
            root,
            modes,
            models,
            verifier,
            transport,
            fixtures,
            output,
            *resume,
            *max_in_flight,
        ),
        Command::Eval {
            results,
            labels,
            output,
            csv_dir,
        } => cmd_eval(&config, results, labels, output, csv_dir),
        Command::Cost { results } => cmd_cost(results),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err)
            if matches!(
                err.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            let _ = err.print();
            return ExitCode::from(EXIT_OK);
        }
        Err(err) => {
            // Usage failures follow the same single-line JSON contract as
            // runtime errors.
            eprintln!(
                "{}",
                json!({"error": {"kind": "usage", "detail": err.to_string(), "exit": EXIT_ERROR}})
            );
            return ExitCode::from(EXIT_ERROR);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!(
                "{}",
                json!({"error": {"kind": err.kind, "detail": err.detail, "exit": err.exit}})
            );
            ExitCode::from(err.exit)
        }
    }
}
