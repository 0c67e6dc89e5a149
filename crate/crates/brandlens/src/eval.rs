//! Analytics over detection results: precision/recall/F1, input-effect
//! categories, exclusive wins across models, and token-consumption
//! statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::{PhishingVerdict, VerdictOutcome};
use crate::prompt::InputMode;
use crate::snapshot::{GroundTruth, LabelClass};

/// Lowercases and strips everything but letters and digits.
pub fn normalize_brand(brand: &str) -> String {
    brand
        .chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Optional alias table for brand matching: each group lists names that
/// count as the same brand (e.g. a rename pair).
#[derive(Debug, Clone, Default)]
pub struct BrandAliases {
    groups: Vec<BTreeSet<String>>,
}

impl BrandAliases {
    pub fn new(groups: &[Vec<String>]) -> Self {
        Self {
            groups: groups
                .iter()
                .map(|g| g.iter().map(|s| normalize_brand(s)).collect())
                .collect(),
        }
    }

    fn same(&self, a: &str, b: &str) -> bool {
        self.groups.iter().any(|g| g.contains(a) && g.contains(b))
    }
}

/// Case-insensitive, punctuation/whitespace-stripped brand equality, with
/// alias-group lookups. Empty inputs never match.
pub fn brand_match(identified: &str, truth_brand: &str, aliases: &BrandAliases) -> bool {
    let a = normalize_brand(identified);
    let b = normalize_brand(truth_brand);
    if a.is_empty() || b.is_empty() {
        return false;
    }
    a == b || aliases.same(&a, &b)
}

/// One per-sample, per-model, per-mode evaluation outcome.
///
/// `brand_correct` is present exactly when the prediction reached brand
/// identification (not `Invalid`/`Error`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample_id: String,
    pub truth: LabelClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_brand: Option<String>,
    pub model: String,
    pub mode: InputMode,
    pub predicted: VerdictOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brand_correct: Option<bool>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("empty input")]
    EmptyInput,
    #[error("models cover different (sample, mode) key sets: {0}")]
    KeyMismatch(String),
    #[error("exclusive wins need at least two models, got {0}")]
    InsufficientModels(usize),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub true_negatives: u64,
}

/// Precision/recall/F1 with explicit undefined markers: a zero denominator
/// yields `None`, never a conventional zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub counts: ConfusionCounts,
}

/// Computes detection metrics with Phishing as the positive class.
///
/// `Unknown`, `Invalid` and `Error` predictions count as negative (the page
/// was not flagged), so they can only cost recall, never precision.
pub fn confusion_metrics(records: &[EvalRecord]) -> Result<ConfusionMetrics, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut counts = ConfusionCounts::default();
    for record in records {
        let predicted_phishing = record.predicted == VerdictOutcome::Phishing;
        match (record.truth, predicted_phishing) {
            (LabelClass::Phishing, true) => counts.true_positives += 1,
            (LabelClass::Phishing, false) => counts.false_negatives += 1,
            (LabelClass::Benign, true) => counts.false_positives += 1,
            (LabelClass::Benign, false) => counts.true_negatives += 1,
        }
    }
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    let precision = ratio(
        counts.true_positives,
        counts.true_positives + counts.false_positives,
    );
    let recall = ratio(
        counts.true_positives,
        counts.true_positives + counts.false_negatives,
    );
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    Ok(ConfusionMetrics {
        precision,
        recall,
        f1,
        counts,
    })
}

/// The eight input-effect categories over (screenshot, HTML, both)
/// correctness triples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum EffectCategory {
    NegativeSs,
    NegativeHtml,
    RelyingOnSs,
    RelyingOnHtml,
    Conflict,
    Synergy,
    AllCorrect,
    AllWrong,
}

/// Maps one correctness triple to its category. Total bijection over the
/// eight triples.
pub fn categorize_input_effect(
    ss_correct: bool,
    html_correct: bool,
    both_correct: bool,
) -> EffectCategory {
    match (ss_correct, html_correct, both_correct) {
        (false, true, false) => EffectCategory::NegativeSs,
        (true, false, false) => EffectCategory::NegativeHtml,
        (true, false, true) => EffectCategory::RelyingOnSs,
        (false, true, true) => EffectCategory::RelyingOnHtml,
        (true, true, false) => EffectCategory::Conflict,
        (false, false, true) => EffectCategory::Synergy,
        (true, true, true) => EffectCategory::AllCorrect,
        (false, false, false) => EffectCategory::AllWrong,
    }
}

/// Exclusive-win percentages for one model, split by truth class. `None`
/// when the class has no keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusiveWins {
    pub benign_pct: Option<f64>,
    pub phishing_pct: Option<f64>,
}

/// For each model, the percentage of (sample, mode) keys where only that
/// model identified the brand correctly, per truth class.
///
/// All models must cover the same key set; records with `brand_correct`
/// absent count as incorrect.
pub fn exclusive_wins(
    records: &[EvalRecord],
) -> Result<BTreeMap<String, ExclusiveWins>, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    type Key = (String, InputMode);
    let mut by_model: BTreeMap<&str, HashMap<Key, &EvalRecord>> = BTreeMap::new();
    for record in records {
        by_model
            .entry(&record.model)
            .or_default()
            .insert((record.sample_id.clone(), record.mode), record);
    }
    if by_model.len() < 2 {
        return Err(EvalError::InsufficientModels(by_model.len()));
    }
    let models: Vec<&str> = by_model.keys().copied().collect();
    let reference: BTreeSet<&Key> = by_model[models[0]].keys().collect();
    for model in &models[1..] {
        let keys: BTreeSet<&Key> = by_model[model].keys().collect();
        if keys != reference {
            return Err(EvalError::KeyMismatch(format!(
                "{} covers {} keys, {} covers {}",
                models[0],
                reference.len(),
                model,
                keys.len()
            )));
        }
    }

    let correct = |model: &str, key: &Key| {
        by_model[model]
            .get(key)
            .and_then(|r| r.brand_correct)
            .unwrap_or(false)
    };

    let mut wins: BTreeMap<String, (u64, u64)> =
        models.iter().map(|m| (m.to_string(), (0, 0))).collect();
    let mut class_totals = (0u64, 0u64);
    for key in &reference {
        let truth = by_model[models[0]][*key].truth;
        match truth {
            LabelClass::Benign => class_totals.0 += 1,
            LabelClass::Phishing => class_totals.1 += 1,
        }
        for model in &models {
            let exclusive = correct(model, key)
                && models
                    .iter()
                    .filter(|m| *m != model)
                    .all(|m| !correct(m, key));
            if exclusive {
                let entry = wins.get_mut(*model).unwrap();
                match truth {
                    LabelClass::Benign => entry.0 += 1,
                    LabelClass::Phishing => entry.1 += 1,
                }
            }
        }
    }

    let pct = |count: u64, total: u64| (total > 0).then(|| 100.0 * count as f64 / total as f64);
    Ok(wins
        .into_iter()
        .map(|(model, (benign, phishing))| {
            (
                model,
                ExclusiveWins {
                    benign_pct: pct(benign, class_totals.0),
                    phishing_pct: pct(phishing, class_totals.1),
                },
            )
        })
        .collect())
}

/// Box-plot style summary of token totals. Quartiles use linear
/// interpolation; outliers are the values above `q3 + 1.5 * IQR`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenStats {
    pub min: u64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: u64,
    pub mean: f64,
    pub outliers: Vec<u64>,
}

fn quantile_sorted(sorted: &[u64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0] as f64;
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < n {
        sorted[lo] as f64 + frac * (sorted[lo + 1] as f64 - sorted[lo] as f64)
    } else {
        sorted[lo] as f64
    }
}

pub fn token_stats(totals: &[u64]) -> Result<TokenStats, EvalError> {
    if totals.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut sorted = totals.to_vec();
    sorted.sort_unstable();
    let q1 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.5);
    let q3 = quantile_sorted(&sorted, 0.75);
    let fence = q3 + 1.5 * (q3 - q1);
    let outliers = sorted
        .iter()
        .copied()
        .filter(|&v| (v as f64) > fence)
        .collect();
    Ok(TokenStats {
        min: sorted[0],
        q1,
        median,
        q3,
        max: *sorted.last().unwrap(),
        mean: sorted.iter().map(|&v| v as f64).sum::<f64>() / sorted.len() as f64,
        outliers,
    })
}

/// Reads per-sample ground truth from a dataset root's `metadata.json` files
/// without decoding screenshots.
pub fn collect_labels(root: &Path) -> std::io::Result<HashMap<String, GroundTruth>> {
    #[derive(Deserialize)]
    struct Slim {
        label: Option<GroundTruth>,
    }
    let mut labels = HashMap::new();
    for entry in std::fs::read_dir(root)? {
        let entry = entry?;
        let meta_path = entry.path().join("metadata.json");
        if !meta_path.is_file() {
            continue;
        }
        let Ok(bytes) = std::fs::read(&meta_path) else {
            continue;
        };
        if let Ok(slim) = serde_json::from_slice::<Slim>(&bytes) {
            if let Some(label) = slim.label {
                labels.insert(entry.file_name().to_string_lossy().into_owned(), label);
            }
        }
    }
    Ok(labels)
}

/// Joins verdicts with ground truth into evaluation records. Verdicts
/// without a label are skipped.
pub fn build_eval_records(
    verdicts: &[PhishingVerdict],
    labels: &HashMap<String, GroundTruth>,
    aliases: &BrandAliases,
) -> Vec<EvalRecord> {
    verdicts
        .iter()
        .filter_map(|verdict| {
            let label = labels.get(&verdict.sample_id)?;
            let brand_correct = match verdict.outcome {
                VerdictOutcome::Invalid | VerdictOutcome::Error => None,
                _ => Some(match (&verdict.identified_brand, &label.brand) {
                    (Some(identified), Some(truth)) => brand_match(identified, truth, aliases),
                    _ => false,
                }),
            };
            Some(EvalRecord {
                sample_id: verdict.sample_id.clone(),
                truth: label.class,
                truth_brand: label.brand.clone(),
                model: verdict.model.clone(),
                mode: verdict.mode,
                predicted: verdict.outcome,
                brand_correct,
            })
        })
        .collect()
}

/// The full analytics report over one results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// model -> mode -> detection metrics.
    pub metrics: BTreeMap<String, BTreeMap<String, ConfusionMetrics>>,
    /// Absent when fewer than two models share a key set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exclusive_wins: Option<BTreeMap<String, ExclusiveWins>>,
    /// model -> category -> count, over samples evaluated in all three modes.
    pub effect_categories: BTreeMap<String, BTreeMap<EffectCategory, u64>>,
    /// model -> mode -> token statistics over requests that consumed tokens.
    pub token_stats: BTreeMap<String, BTreeMap<String, TokenStats>>,
}

/// Computes every analytic over a set of verdicts joined with labels.
pub fn build_report(
    verdicts: &[PhishingVerdict],
    labels: &HashMap<String, GroundTruth>,
    aliases: &BrandAliases,
) -> Result<EvalReport, EvalError> {
    let records = build_eval_records(verdicts, labels, aliases);
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }

    let mut by_model_mode: BTreeMap<String, BTreeMap<String, Vec<EvalRecord>>> = BTreeMap::new();
    for record in &records {
        by_model_mode
            .entry(record.model.clone())
            .or_default()
            .entry(record.mode.as_str().to_string())
            .or_default()
            .push(record.clone());
    }
    let mut metrics = BTreeMap::new();
    for (model, modes) in &by_model_mode {
        let mut per_mode = BTreeMap::new();
        for (mode, records) in modes {
            per_mode.insert(mode.clone(), confusion_metrics(records)?);
        }
        metrics.insert(model.clone(), per_mode);
    }

    let exclusive = exclusive_wins(&records).ok();

    let mut effect_categories: BTreeMap<String, BTreeMap<EffectCategory, u64>> = BTreeMap::new();
    let mut by_model_sample: BTreeMap<(String, String), BTreeMap<InputMode, bool>> =
        BTreeMap::new();
    for record in &records {
        if let Some(correct) = record.brand_correct {
            by_model_sample
                .entry((record.model.clone(), record.sample_id.clone()))
                .or_default()
                .insert(record.mode, correct);
        }
    }
    for ((model, _sample), modes) in by_model_sample {
        let (Some(&ss), Some(&html), Some(&both)) = (
            modes.get(&InputMode::ScreenshotOnly),
            modes.get(&InputMode::HtmlOnly),
            modes.get(&InputMode::Both),
        ) else {
            continue;
        };
        *effect_categories
            .entry(model)
            .or_default()
            .entry(categorize_input_effect(ss, html, both))
            .or_default() += 1;
    }

    let mut usage_by_model_mode: BTreeMap<String, BTreeMap<String, Vec<u64>>> = BTreeMap::new();
    for verdict in verdicts {
        if verdict.usage.total() == 0 {
            continue;
        }
        usage_by_model_mode
            .entry(verdict.model.clone())
            .or_default()
            .entry(verdict.mode.as_str().to_string())
            .or_default()
            .push(verdict.usage.total());
    }
    let mut stats = BTreeMap::new();
    for (model, modes) in usage_by_model_mode {
        let mut per_mode = BTreeMap::new();
        for (mode, totals) in modes {
            per_mode.insert(mode, token_stats(&totals)?);
        }
        stats.insert(model, per_mode);
    }

    Ok(EvalReport {
        metrics,
        exclusive_wins: exclusive,
        effect_categories,
        token_stats: stats,
    })
}
