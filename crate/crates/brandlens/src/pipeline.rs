//! End-to-end detection: validity filtering, phase-1 brand identification,
//! phase-2 domain verification (LLM-backed or the string-match baseline), and
//! batch orchestration over a dataset.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{registrable_domain, DomainError, PslList};
use crate::eval::normalize_brand;
use crate::filter::{classify_validity, FilterThresholds, TextRecognizer};
use crate::gateway::{
    ErrorKind, Gateway, GatewayError, LlmRequest, TokenUsage, DEFAULT_MAX_OUTPUT_TOKENS,
};
use crate::html::{extract_key_info, truncate_for_budget, DEFAULT_CHAR_BUDGET};
use crate::prompt::{
    build_phase1_prompt_with, build_phase2_prompt, parse_phase1_response, parse_phase2_response,
    BrandIdentification, Classification, DomainVerdict, InputMode, PromptError,
};
use crate::snapshot::{scan_dataset, SnapshotError, WebpageSnapshot};

/// How phase-2 verification runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verifier {
    /// Second-phase LLM compares brand and domain (default).
    Llm,
    /// String comparison of the normalized brand against the registrable
    /// domain's label; the weaker comparison the LLM phase is measured
    /// against.
    Baseline,
}

impl std::str::FromStr for Verifier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "llm" => Ok(Verifier::Llm),
            "baseline" => Ok(Verifier::Baseline),
            other => Err(format!(
                "unknown verifier {other:?} (expected llm|baseline)"
            )),
        }
    }
}

/// Final outcome for one (sample, mode, model) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictOutcome {
    Phishing,
    Genuine,
    /// Phase 1 could not identify a brand; routed to manual review rather
    /// than silently treated as benign.
    Unknown,
    /// The sample failed validity filtering; no LLM was consulted.
    Invalid,
    Error,
}

/// One detection result record, serialized as a JSONL line in batch output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhishingVerdict {
    pub sample_id: String,
    pub url: String,
    pub model: String,
    pub mode: InputMode,
    pub outcome: VerdictOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identified_brand: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase1_evidence: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase2_evidence: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genuine_url: Option<String>,
    pub usage: TokenUsage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<GatewayError>,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("phase-{phase} response unparseable: {source}")]
    UnparseableResponse {
        phase: u8,
        source: PromptError,
        raw_text: String,
    },
}

impl PipelineError {
    /// Collapses any failure into the gateway error embedded in verdicts.
    fn into_gateway_error(self) -> GatewayError {
        match self {
            PipelineError::Gateway(err) => err,
            PipelineError::UnparseableResponse {
                phase,
                source,
                raw_text,
            } => {
                let excerpt: String = raw_text.chars().take(200).collect();
                GatewayError::new(
                    ErrorKind::Malformed,
                    format!("phase-{phase} parse: {source}; raw: {excerpt:?}"),
                )
            }
            other => GatewayError::new(ErrorKind::Malformed, other.to_string()),
        }
    }
}

/// Per-run knobs shared by single and batch detection.
#[derive(Debug, Clone)]
pub struct DetectSettings {
    pub verifier: Verifier,
    pub html_char_budget: usize,
    pub chain_of_thought: bool,
    pub thresholds: FilterThresholds,
    pub verification_keywords: Vec<String>,
    /// Phase-1 heuristic hook mapping identified names to canonical brands
    /// (normalized key to replacement). Ships empty.
    pub brand_alias_map: BTreeMap<String, String>,
    pub max_output_tokens: u32,
    pub temperature: f64,
}

impl Default for DetectSettings {
    fn default() -> Self {
        Self {
            verifier: Verifier::Llm,
            html_char_budget: DEFAULT_CHAR_BUDGET,
            chain_of_thought: false,
            thresholds: FilterThresholds::default(),
            verification_keywords: crate::filter::DEFAULT_VERIFICATION_KEYWORDS
                .iter()
                .map(|s| s.to_string())
                .collect(),
            brand_alias_map: BTreeMap::new(),
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            temperature: 0.0,
        }
    }
}

struct PhaseFailure {
    error: PipelineError,
    usage: TokenUsage,
}

fn phase1(
    snapshot: &WebpageSnapshot,
    mode: InputMode,
    model_id: &str,
    gateway: &Gateway,
    settings: &DetectSettings,
) -> Result<(BrandIdentification, TokenUsage), PhaseFailure> {
    let fail = |error: PipelineError| PhaseFailure {
        error,
        usage: TokenUsage::default(),
    };
    let key_info = (mode != InputMode::ScreenshotOnly)
        .then(|| truncate_for_budget(&extract_key_info(&snapshot.html), settings.html_char_budget));
    let bundle = build_phase1_prompt_with(
        mode,
        key_info.as_ref(),
        snapshot.screenshot.as_ref(),
        settings.chain_of_thought,
    )
    .map_err(|e| fail(e.into()))?;

    let mut request = LlmRequest::new(model_id, bundle.system_text, bundle.user_text);
    request.image = bundle.image_attachment;
    request.max_output_tokens = settings.max_output_tokens;
    request.temperature = settings.temperature;

    let (text, usage) = gateway.complete(&request).map_err(|e| fail(e.into()))?;
    let mut identification = parse_phase1_response(&text, mode).map_err(|e| PhaseFailure {
        error: PipelineError::UnparseableResponse {
            phase: 1,
            source: e,
            raw_text: text,
        },
        usage,
    })?;

    if let Some(brand) = &identification.brand {
        if let Some(canonical) = settings.brand_alias_map.get(&normalize_brand(brand)) {
            identification
                .warnings
                .push(format!("brand alias: {brand} mapped to {canonical}"));
            identification.brand = Some(canonical.clone());
        }
    }
    Ok((identification, usage))
}

/// Phase 1: builds the prompt for the mode, calls the gateway, parses the
/// response. Returns the identification and the tokens it cost.
pub fn identify_brand(
    snapshot: &WebpageSnapshot,
    mode: InputMode,
    model_id: &str,
    gateway: &Gateway,
    settings: &DetectSettings,
) -> Result<(BrandIdentification, TokenUsage), PipelineError> {
    phase1(snapshot, mode, model_id, gateway, settings).map_err(|f| f.error)
}

/// Phase-2 baseline: Genuine iff the normalized brand is a substring of the
/// registrable domain's label part. No LLM call, zero tokens.
pub fn verify_domain_baseline(
    url: &str,
    identified: &BrandIdentification,
    list: &PslList,
) -> Result<DomainVerdict, PipelineError> {
    let brand = identified
        .brand
        .as_deref()
        .ok_or(PromptError::MissingBrand)?;
    let registrable = registrable_domain(url, list)?;
    let label = registrable.split('.').next().unwrap_or(&registrable);
    let brand_norm = normalize_brand(brand);
    let genuine = !brand_norm.is_empty() && normalize_brand(label).contains(&brand_norm);
    Ok(DomainVerdict {
        classification: if genuine {
            Classification::Genuine
        } else {
            Classification::Phishing
        },
        evidence: format!("string-match: {brand} vs {registrable}"),
        genuine_url: None,
    })
}

fn phase2_llm(
    url: &str,
    identified: &BrandIdentification,
    model_id: &str,
    gateway: &Gateway,
    settings: &DetectSettings,
) -> Result<(DomainVerdict, TokenUsage), PhaseFailure> {
    let fail = |error: PipelineError| PhaseFailure {
        error,
        usage: TokenUsage::default(),
    };
    let bundle = build_phase2_prompt(url, identified).map_err(|e| fail(e.into()))?;
    let mut request = LlmRequest::new(model_id, bundle.system_text, bundle.user_text);
    request.max_output_tokens = settings.max_output_tokens;
    request.temperature = settings.temperature;
    let (text, usage) = gateway.complete(&request).map_err(|e| fail(e.into()))?;
    let verdict = parse_phase2_response(&text).map_err(|e| PhaseFailure {
        error: PipelineError::UnparseableResponse {
            phase: 2,
            source: e,
            raw_text: text,
        },
        usage,
    })?;
    Ok((verdict, usage))
}

/// Phase 2 via the second LLM. Returns the verdict and the tokens it cost.
pub fn verify_domain_llm(
    url: &str,
    identified: &BrandIdentification,
    model_id: &str,
    gateway: &Gateway,
    settings: &DetectSettings,
) -> Result<(DomainVerdict, TokenUsage), PipelineError> {
    phase2_llm(url, identified, model_id, gateway, settings).map_err(|f| f.error)
}

/// Runs the full pipeline for one sample. Never fails: every failure path is
/// encoded in the verdict's outcome.
///
/// Invalid samples consult no LLM. An absent (NA) brand short-circuits to
/// `Unknown` and phase 2 never executes. With the baseline verifier phase 2
/// is a pure string comparison and consumes zero tokens.
pub fn detect(
    snapshot: &WebpageSnapshot,
    mode: InputMode,
    model_id: &str,
    gateway: &Gateway,
    settings: &DetectSettings,
    list: &PslList,
    ocr: Option<&dyn TextRecognizer>,
) -> PhishingVerdict {
    let mut verdict = PhishingVerdict {
        sample_id: snapshot.sample_id.clone(),
        url: snapshot.url.clone(),
        model: model_id.to_string(),
        mode,
        outcome: VerdictOutcome::Error,
        identified_brand: None,
        confidence: None,
        phase1_evidence: None,
        phase2_evidence: None,
        genuine_url: None,
        usage: TokenUsage::default(),
        error: None,
    };

    let report = classify_validity(
        snapshot,
        &settings.thresholds,
        ocr,
        &settings.verification_keywords,
    );
    if !report.valid {
        verdict.outcome = VerdictOutcome::Invalid;
        return verdict;
    }

    let (identification, usage1) = match phase1(snapshot, mode, model_id, gateway, settings) {
        Ok(ok) => ok,
        Err(failure) => {
            verdict.usage = failure.usage;
            verdict.error = Some(failure.error.into_gateway_error());
            return verdict;
        }
    };
    verdict.usage = usage1;
    verdict.confidence = Some(identification.confidence.as_f64());
    if !identification.supporting_evidence.is_empty() {
        verdict.phase1_evidence = Some(identification.supporting_evidence.clone());
    }

    if identification.brand.is_none() {
        verdict.outcome = VerdictOutcome::Unknown;
        return verdict;
    }
    verdict.identified_brand = identification.brand.clone();

    let domain_verdict = match settings.verifier {
        Verifier::Baseline => match verify_domain_baseline(&snapshot.url, &identification, list) {
            Ok(v) => v,
            Err(err) => {
                verdict.error = Some(err.into_gateway_error());
                return verdict;
            }
        },
        Verifier::Llm => {
            match phase2_llm(&snapshot.url, &identification, model_id, gateway, settings) {
                Ok((v, usage2)) => {
                    verdict.usage += usage2;
                    v
                }
                Err(failure) => {
                    verdict.usage += failure.usage;
                    verdict.error = Some(failure.error.into_gateway_error());
                    return verdict;
                }
            }
        }
    };

    verdict.outcome = match domain_verdict.classification {
        Classification::Phishing => VerdictOutcome::Phishing,
        Classification::Genuine => VerdictOutcome::Genuine,
    };
    verdict.phase2_evidence = Some(domain_verdict.evidence);
    verdict.genuine_url = domain_verdict.genuine_url;
    verdict
}

/// Resume key: one completed (sample, mode, model) cell.
pub type CompletionKey = (String, String, String);

/// Reads the completion keys already present in a batch output file.
pub fn read_completed(path: &Path) -> std::io::Result<HashSet<CompletionKey>> {
    #[derive(Deserialize)]
    struct Slim {
        sample_id: String,
        mode: InputMode,
        model: String,
    }
    let mut done = HashSet::new();
    if !path.exists() {
        return Ok(done);
    }
    let content = std::fs::read_to_string(path)?;
    for line in content.lines() {
        if line.trim().is_empty() {
            continue;
        }
        if let Ok(slim) = serde_json::from_str::<Slim>(line) {
            done.insert((slim.sample_id, slim.mode.as_str().to_string(), slim.model));
        }
    }
    Ok(done)
}

/// Batch run totals.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BatchSummary {
    pub written: usize,
    pub skipped: usize,
    pub outcomes: BTreeMap<VerdictOutcome, usize>,
    pub duplicates_dropped: usize,
    pub load_errors: usize,
}

/// Runs the cartesian product of valid samples, modes and models with
/// bounded parallelism, writing one JSONL verdict per line in deterministic
/// order (sample id, then mode, then model). Cells listed in `resume` are
/// skipped. Per-cell failures are embedded in verdicts, never fatal.
#[allow(clippy::too_many_arguments)]
pub fn detect_batch(
    root: &Path,
    modes: &[InputMode],
    models: &[String],
    gateway: &Gateway,
    settings: &DetectSettings,
    list: &PslList,
    ocr: Option<&dyn TextRecognizer>,
    resume: &HashSet<CompletionKey>,
    out: &mut dyn Write,
    max_in_flight: usize,
) -> Result<BatchSummary, SnapshotError> {
    let (snapshots, report) = scan_dataset(root)?;

    let mut modes: Vec<InputMode> = modes.to_vec();
    modes.sort_by_key(|m| m.as_str());
    modes.dedup();
    let mut models: Vec<String> = models.to_vec();
    models.sort();
    models.dedup();

    let mut summary = BatchSummary {
        duplicates_dropped: report.duplicates.len(),
        load_errors: report.errors.len(),
        ..BatchSummary::default()
    };

    let mut tasks: Vec<(usize, InputMode, &str)> = Vec::new();
    for (idx, snapshot) in snapshots.iter().enumerate() {
        for mode in &modes {
            for model in &models {
                let key = (
                    snapshot.sample_id.clone(),
                    mode.as_str().to_string(),
                    model.clone(),
                );
                if resume.contains(&key) {
                    summary.skipped += 1;
                } else {
                    tasks.push((idx, *mode, model.as_str()));
                }
            }
        }
    }

    let workers = max_in_flight.max(1).min(tasks.len().max(1));
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, PhishingVerdict)>();

    // Workers race through the task list; the writer emits each record as
    // soon as its turn comes, flushing per line so completed work survives
    // an interrupted run.
    let write_result: std::io::Result<()> = std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let tasks = &tasks;
            let snapshots = &snapshots;
            let next = &next;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(snapshot_idx, mode, model)) = tasks.get(i) else {
                    break;
                };
                let verdict = detect(
                    &snapshots[snapshot_idx],
                    mode,
                    model,
                    gateway,
                    settings,
                    list,
                    ocr,
                );
                if tx.send((i, verdict)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut buffer: BTreeMap<usize, PhishingVerdict> = BTreeMap::new();
        let mut next_write = 0usize;
        for (i, verdict) in rx {
            buffer.insert(i, verdict);
            while let Some(verdict) = buffer.remove(&next_write) {
                *summary.outcomes.entry(verdict.outcome).or_default() += 1;
                let mut line = serde_json::to_string(&verdict).expect("verdict serializes");
                line.push('\n');
                out.write_all(line.as_bytes())?;
                out.flush()?;
                summary.written += 1;
                next_write += 1;
            }
        }
        Ok(())
    });
    write_result.map_err(|e| SnapshotError::Io {
        path: root.to_path_buf(),
        source: e,
    })?;
    Ok(summary)
}
