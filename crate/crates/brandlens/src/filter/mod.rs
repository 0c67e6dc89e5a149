//! Invalid-sample filtering over snapshots: completeness, HTTP status,
//! semantic blank, screenshot pixel statistics, edge count, OCR text length,
//! and verification/warning-page flagging.

mod edges;

pub use edges::{edge_count, grayscale_stddev, BLUR_SIGMA, CANNY_HIGH, CANNY_LOW};

use std::collections::BTreeMap;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::html;
use crate::snapshot::WebpageSnapshot;

/// Keywords that flag security/human-verification interstitials.
pub const DEFAULT_VERIFICATION_KEYWORDS: [&str; 5] = [
    "verify you are human",
    "checking your browser",
    "captcha",
    "cloudflare",
    "attention required",
];

/// Visible-text length below which a page counts as semantically blank.
const SEMANTIC_BLANK_MIN_CHARS: usize = 10;

/// Thresholds for the screenshot-derived filters.
///
/// The defaults are uncalibrated placeholders; run [`calibrate_thresholds`]
/// over labeled blank/non-blank examples before relying on filter outcomes.
/// Reports carry the calibration state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterThresholds {
    /// Minimum grayscale standard deviation (0-255 luma units).
    pub min_gray_stddev: f64,
    /// Minimum Canny edge pixel count.
    pub min_edge_count: u64,
    /// Minimum characters of OCR-recognized text.
    pub min_ocr_chars: usize,
    /// True once `calibrate_thresholds` has produced these values.
    pub calibrated: bool,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            min_gray_stddev: 5.0,
            min_edge_count: 500,
            min_ocr_chars: 20,
            calibrated: false,
        }
    }
}

/// Outcome of one validity check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "lowercase")]
pub enum CheckOutcome {
    Pass,
    Fail(String),
    Skipped(String),
}

impl CheckOutcome {
    pub fn is_fail(&self) -> bool {
        matches!(self, CheckOutcome::Fail(_))
    }
}

/// The seven validity checks, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckName {
    Completeness,
    HttpStatus,
    SemanticBlank,
    PixelStddev,
    EdgeCount,
    OcrLength,
    VerificationPage,
}

pub const ALL_CHECKS: [CheckName; 7] = [
    CheckName::Completeness,
    CheckName::HttpStatus,
    CheckName::SemanticBlank,
    CheckName::PixelStddev,
    CheckName::EdgeCount,
    CheckName::OcrLength,
    CheckName::VerificationPage,
];

/// Per-sample validity report. `valid` is true iff no check failed; every
/// check appears exactly once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub sample_id: String,
    pub outcomes: BTreeMap<CheckName, CheckOutcome>,
    pub valid: bool,
    pub thresholds_calibrated: bool,
}

#[derive(Debug, Error)]
#[error("ocr backend: {0}")]
pub struct OcrError(pub String);

/// Pluggable text recognition over screenshot rasters.
///
/// Implementations must be safe for concurrent invocation or be wrapped in a
/// serializing adapter by the caller.
pub trait TextRecognizer: Send + Sync {
    fn recognize(&self, image: &RgbImage) -> Result<String, OcrError>;
}

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("insufficient examples: need at least 2 blank and 2 non-blank, got {blank} blank / {non_blank} non-blank")]
    InsufficientExamples { blank: usize, non_blank: usize },
}

/// Pass iff the snapshot recorded a 200 response.
pub fn check_http_status(snapshot: &WebpageSnapshot) -> CheckOutcome {
    if snapshot.http_status == 200 {
        CheckOutcome::Pass
    } else {
        CheckOutcome::Fail(format!("status {}", snapshot.http_status))
    }
}

/// Characters of recognized text after whitespace collapse.
pub fn ocr_text_length(image: &RgbImage, ocr: &dyn TextRecognizer) -> Result<usize, OcrError> {
    let text = ocr.recognize(image)?;
    Ok(html::normalize_ws(&text).chars().count())
}

/// Fail iff key-info extraction finds nothing and the visible body text is
/// shorter than 10 characters.
pub fn check_semantic_blank(html_text: &str) -> CheckOutcome {
    let info = html::extract_key_info(html_text);
    if !info.is_empty() {
        return CheckOutcome::Pass;
    }
    let visible = html::visible_text(html_text);
    if visible.chars().count() < SEMANTIC_BLANK_MIN_CHARS {
        CheckOutcome::Fail("no key info and visible text under 10 chars".into())
    } else {
        CheckOutcome::Pass
    }
}

/// Fail iff one of the verification keywords appears in the page's visible
/// text or in OCR text from the screenshot. Matching is case-insensitive.
pub fn check_verification_page(
    html_text: &str,
    screenshot_ocr_text: Option<&str>,
    keywords: &[String],
) -> CheckOutcome {
    let mut haystack = html::visible_text(html_text).to_lowercase();
    if let Some(ocr) = screenshot_ocr_text {
        haystack.push(' ');
        haystack.push_str(&ocr.to_lowercase());
    }
    for keyword in keywords {
        if haystack.contains(&keyword.to_lowercase()) {
            return CheckOutcome::Fail(format!("matched keyword {keyword:?}"));
        }
    }
    CheckOutcome::Pass
}

/// Runs all seven checks over a snapshot and aggregates them.
///
/// Checks that need a missing input (no screenshot, no OCR provider) are
/// `Skipped`, never failed; completeness itself fails on a missing
/// screenshot. The filters never mutate the snapshot and the report is a
/// pure function of its inputs.
pub fn classify_validity(
    snapshot: &WebpageSnapshot,
    thresholds: &FilterThresholds,
    ocr: Option<&dyn TextRecognizer>,
    keywords: &[String],
) -> ValidityReport {
    let mut outcomes = BTreeMap::new();

    let mut missing = Vec::new();
    if snapshot.html.is_empty() {
        missing.push("html");
    }
    if snapshot.screenshot.is_none() {
        missing.push("screenshot");
    }
    if snapshot.url.is_empty() {
        missing.push("url");
    }
    let completeness = if missing.is_empty() {
        CheckOutcome::Pass
    } else {
        CheckOutcome::Fail(format!("missing {}", missing.join(", ")))
    };
    outcomes.insert(CheckName::Completeness, completeness);

    outcomes.insert(CheckName::HttpStatus, check_http_status(snapshot));
    outcomes.insert(
        CheckName::SemanticBlank,
        check_semantic_blank(&snapshot.html),
    );

    let pixel = match &snapshot.screenshot {
        Some(img) => {
            let stddev = grayscale_stddev(img);
            if stddev >= thresholds.min_gray_stddev {
                CheckOutcome::Pass
            } else {
                CheckOutcome::Fail(format!(
                    "stddev {stddev:.3} below {}",
                    thresholds.min_gray_stddev
                ))
            }
        }
        None => CheckOutcome::Skipped("no screenshot".into()),
    };
    outcomes.insert(CheckName::PixelStddev, pixel);

    let edges = match &snapshot.screenshot {
        Some(img) if img.width() >= 2 && img.height() >= 2 => {
            let count = edge_count(img);
            if count >= thresholds.min_edge_count {
                CheckOutcome::Pass
            } else {
                CheckOutcome::Fail(format!(
                    "edge count {count} below {}",
                    thresholds.min_edge_count
                ))
            }
        }
        Some(_) => CheckOutcome::Skipped("image too small".into()),
        None => CheckOutcome::Skipped("no screenshot".into()),
    };
    outcomes.insert(CheckName::EdgeCount, edges);

    let mut ocr_text: Option<String> = None;
    let ocr_outcome = match (&snapshot.screenshot, ocr) {
        (Some(img), Some(provider)) => match provider.recognize(img) {
            Ok(text) => {
                let normalized = html::normalize_ws(&text);
                let len = normalized.chars().count();
                ocr_text = Some(normalized);
                if len >= thresholds.min_ocr_chars {
                    CheckOutcome::Pass
                } else {
                    CheckOutcome::Fail(format!(
                        "ocr text {len} chars below {}",
                        thresholds.min_ocr_chars
                    ))
                }
            }
            Err(err) => CheckOutcome::Skipped(err.to_string()),
        },
        (None, Some(_)) => CheckOutcome::Skipped("no screenshot".into()),
        (_, None) => CheckOutcome::Skipped("no ocr".into()),
    };
    outcomes.insert(CheckName::OcrLength, ocr_outcome);

    outcomes.insert(
        CheckName::VerificationPage,
        check_verification_page(&snapshot.html, ocr_text.as_deref(), keywords),
    );

    let valid = !outcomes.values().any(CheckOutcome::is_fail);
    ValidityReport {
        sample_id: snapshot.sample_id.clone(),
        outcomes,
        valid,
        thresholds_calibrated: thresholds.calibrated,
    }
}

/// Thresholds produced by calibration, plus warnings for metrics that could
/// not be separated and kept their defaults.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub thresholds: FilterThresholds,
    pub warnings: Vec<String>,
}

fn midpoint_f64(
    blank: &[f64],
    non_blank: &[f64],
    name: &str,
    warnings: &mut Vec<String>,
) -> Option<f64> {
    if blank.is_empty() || non_blank.is_empty() {
        warnings.push(format!("{name}: no data in one class, default kept"));
        return None;
    }
    let max_blank = blank.iter().cloned().fold(f64::MIN, f64::max);
    let min_non_blank = non_blank.iter().cloned().fold(f64::MAX, f64::min);
    if max_blank < min_non_blank {
        Some((max_blank + min_non_blank) / 2.0)
    } else {
        warnings.push(format!(
            "{name}: classes not separable (max blank {max_blank} >= min non-blank {min_non_blank}), default kept"
        ));
        None
    }
}

/// Derives thresholds from labeled `(snapshot, is_blank)` examples.
///
/// For each metric the threshold becomes the midpoint between the largest
/// blank value and the smallest non-blank value when the classes separate;
/// otherwise the default is kept and a warning recorded. Requires at least
/// two examples of each class. Without an OCR provider the OCR metric keeps
/// its default.
pub fn calibrate_thresholds(
    examples: &[(WebpageSnapshot, bool)],
    ocr: Option<&dyn TextRecognizer>,
) -> Result<Calibration, FilterError> {
    let blank_count = examples.iter().filter(|(_, b)| *b).count();
    let non_blank_count = examples.len() - blank_count;
    if blank_count < 2 || non_blank_count < 2 {
        return Err(FilterError::InsufficientExamples {
            blank: blank_count,
            non_blank: non_blank_count,
        });
    }

    let mut stddev = (Vec::new(), Vec::new());
    let mut edges = (Vec::new(), Vec::new());
    let mut ocr_chars = (Vec::new(), Vec::new());
    for (snapshot, is_blank) in examples {
        let Some(img) = &snapshot.screenshot else {
            continue;
        };
        let bucket = |pair: &mut (Vec<f64>, Vec<f64>), v: f64| {
            if *is_blank {
                pair.0.push(v)
            } else {
                pair.1.push(v)
            }
        };
        bucket(&mut stddev, grayscale_stddev(img));
        bucket(&mut edges, edge_count(img) as f64);
        if let Some(provider) = ocr {
            if let Ok(len) = ocr_text_length(img, provider) {
                bucket(&mut ocr_chars, len as f64);
            }
        }
    }

    let mut warnings = Vec::new();
    let mut thresholds = FilterThresholds {
        calibrated: true,
        ..FilterThresholds::default()
    };
    if let Some(t) = midpoint_f64(&stddev.0, &stddev.1, "pixel_stddev", &mut warnings) {
        thresholds.min_gray_stddev = t;
    }
    if let Some(t) = midpoint_f64(&edges.0, &edges.1, "edge_count", &mut warnings) {
        thresholds.min_edge_count = t.ceil() as u64;
    }
    if ocr.is_none() {
        warnings.push("ocr_length: no provider, default kept".into());
    } else if let Some(t) = midpoint_f64(&ocr_chars.0, &ocr_chars.1, "ocr_length", &mut warnings) {
        thresholds.min_ocr_chars = t.ceil() as usize;
    }

    Ok(Calibration {
        thresholds,
        warnings,
    })
}
