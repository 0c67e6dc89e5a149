//! Prompt construction for both detection phases and structured parsing of
//! the LLM responses.
//!
//! Phase-1 prompts and response formats are fixed templates, one per input
//! mode, always followed by the common rules block. Response parsing is
//! deliberately lenient: models drift on numbering, markdown decoration,
//! field-name separators and field order, so strictness lives in the
//! canonical rendered form used for fixtures, tolerance in the parser.

use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::ImagePayload;
use crate::html::HtmlKeyInfo;

/// Which evidence the phase-1 model receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InputMode {
    #[serde(rename = "screenshot")]
    ScreenshotOnly,
    #[serde(rename = "html")]
    HtmlOnly,
    #[serde(rename = "both")]
    Both,
}

impl InputMode {
    pub const ALL: [InputMode; 3] = [
        InputMode::ScreenshotOnly,
        InputMode::HtmlOnly,
        InputMode::Both,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InputMode::ScreenshotOnly => "screenshot",
            InputMode::HtmlOnly => "html",
            InputMode::Both => "both",
        }
    }
}

impl fmt::Display for InputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InputMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "screenshot" | "ss" => Ok(InputMode::ScreenshotOnly),
            "html" => Ok(InputMode::HtmlOnly),
            "both" => Ok(InputMode::Both),
            other => Err(format!(
                "unknown input mode {other:?} (expected screenshot|html|both)"
            )),
        }
    }
}

const SCREENSHOT_INSTRUCTION: &str = "\
I want you to act as a webpage brand identifier.
Given a screenshot of a webpage. I want you to identify the brand of the webpage from the screenshot alone.
Additionally, also note whether fields are asking for sensitive user credentials as well as any call-to-action buttons / links.
Examples of sensitive user credentials: email, username, password, phone number, etc.
Examples of call-to-action elements: buttons or links that lead to asking for user credentials.";

const HTML_INSTRUCTION: &str = "\
I want you to act as a webpage brand identifier.
Given the key information from the HTML content of a webpage, I want you to identify the brand of the webpage from this information alone. The key information is extracted from the actual HTML script of the webpage, and this information includes the title of the webpage, the metadata, the favicon, the logo attribute, the footer and header text, and the nav bar. These areas are where the brand information can typically be found. Make good use of this information to identify the brand related to each webpage.";

const BOTH_INSTRUCTION: &str = "\
I want you to act as a webpage brand identifier.
Given a screenshot and key information from the HTML script of a webpage. I want you to identify the brand of the webpage from these two sources alone.
Additionally, also note whether there are fields asking for sensitive user credentials as well as any call-to-action buttons/links.
Examples of sensitive user credentials: email, username, password, phone number, etc.
Examples of call-to-action elements: buttons or links that lead to asking for user credentials.";

const RESPONSE_FORMAT_FULL: &str = "\
Return your response in the following format, and replace everything in [] with your answer:
1. Brand: [response]
2. Has Credentials: [Yes/No]
3. Has Call_To_Action: [Yes/No]
4. List of credentials: [response if Yes for (2), otherwise NA. Keep within the top 10 fields.]
5. List of call_to_action: [response if Yes for (3), otherwise NA. Keep within the top 10 fields.]
6. Confidence Score: [How confident are you when identifying the brand on a scale of 0.00 to 10.00 (in 2 decimal places), 10.00 being absolutely confident, 0.00 being not confident]
7. Supporting Evidence: [response, keep it within 300 words]";

const RESPONSE_FORMAT_HTML: &str = "\
Return your response in the following format, and replace everything in [] with your answer::
1. Brand: [response]
2. Confidence Score: [How confident are you when identifying the brand on a scale of 0.00 to 10.00 (in 2 decimal places), 10.00 being absolutely confident, 0.00 being not confident]
3. Supporting Evidence: [response, keep it within 300 words]";

const COMMON_RULES: &str = "\
Please adhere strictly to the following rules for your analysis:
1. Do not interact with the webpage in a live environment or use browser functionalities.
2. Avoid inspecting the webpage's source code, the website's address bar, SSL certificates, URLs, or any interactive features.
3. Your analysis should be grounded solely on the given input data.
4. No additional resources or external validations should be used.

Note that some pages may include information / logos of other brands, especially pages that use single sign-on features or pages created by website builders.";

/// Optional step-by-step block, off by default.
const CHAIN_OF_THOUGHT: &str = "\
Analyze the webpage screenshot by following these steps:
1. Identify the webpage brand based on information available from the html script.
2. The brand can be obtained from any part of the information (i.e., title, meta_description, favicon, logo, footer, header, nav_bar_content, paragraph, text)
3. Most of the time you will be able to identify it from the title or footer information.
4. If you cannot find or identify the brand, return NA for 'brand' in your response.
5. Provide a comprehensive evaluation of the html script. Include a detailed explanation for your analysis.
6. Take note of how confident you are in identifying the brand.";

const PHASE2_SYSTEM: &str = "\
I want you to act as a webpage domain verifier.
Given a URL and the brand identified for the webpage it serves, decide whether the URL legitimately belongs to that brand. Compare the domain name in the URL with the domain names known to be operated by the brand, accounting for brand renames, aliases, sub-brands and regional domains. If the identified brand contains an obvious typo, correct it before comparing.

Please adhere strictly to the following rules for your analysis:
1. Do not visit the URL or interact with the webpage in a live environment.
2. Base your decision only on the URL string and the brand information given below.
3. Decide Genuine if the domain legitimately belongs to the brand, and Phishing otherwise.

Return your response in the following format, and replace everything in [] with your answer:
- Genuine/Phishing: [Genuine or Phishing]
- Evidence: [reasoning for the decision]
- Genuine URL: [the official URL of the brand, or NA if unknown]";

/// A prompt ready for the gateway: system text, user text, and the optional
/// image attachment (present iff the mode uses the screenshot).
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub image_attachment: Option<ImagePayload>,
}

/// Brand-identification confidence score in hundredths, 0.00 to 10.00.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Confidence(u16);

impl Confidence {
    pub const MIN: Confidence = Confidence(0);
    pub const MAX: Confidence = Confidence(1000);

    /// Builds from hundredths (950 means 9.50). `None` above 1000.
    pub fn from_hundredths(h: u16) -> Option<Self> {
        (h <= 1000).then_some(Self(h))
    }

    /// Clamps an arbitrary value into range; the flag reports whether
    /// clamping changed it.
    pub fn clamping_from_f64(v: f64) -> (Self, bool) {
        if v.is_nan() {
            return (Self(0), true);
        }
        let clamped = v.clamp(0.0, 10.0);
        (Self((clamped * 100.0).round() as u16), clamped != v)
    }

    pub fn hundredths(self) -> u16 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

impl fmt::Display for Confidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

/// Structured phase-1 result.
///
/// `brand: None` encodes an explicit "NA" from the model. In `HtmlOnly` mode
/// the 3-field response format carries no credential or call-to-action
/// information, so both flags are false and both lists empty.
#[derive(Debug, Clone, PartialEq)]
pub struct BrandIdentification {
    pub brand: Option<String>,
    pub has_credentials: bool,
    pub has_call_to_action: bool,
    pub credential_fields: Vec<String>,
    pub call_to_action_fields: Vec<String>,
    pub confidence: Confidence,
    pub supporting_evidence: String,
    pub mode: InputMode,
    pub warnings: Vec<String>,
}

/// Phase-2 classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Genuine,
    Phishing,
}

/// Phase-2 result: the verdict, its reasoning, and a suggested genuine URL
/// when the model offered one.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainVerdict {
    pub classification: Classification,
    pub evidence: String,
    pub genuine_url: Option<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("mode/input mismatch: {0}")]
    ModeInputMismatch(String),
    #[error("identified brand is absent")]
    MissingBrand,
    #[error("response is missing required fields: {}", missing.join(", "))]
    MissingFields { missing: Vec<String> },
    #[error("no Genuine/Phishing classification found in response")]
    NoClassification,
}

fn encode_png(image: &RgbImage) -> ImagePayload {
    let mut bytes = Vec::new();
    image
        .write_to(
            &mut std::io::Cursor::new(&mut bytes),
            image::ImageFormat::Png,
        )
        .expect("png encoding of an in-memory image");
    ImagePayload {
        bytes,
        media_type: "image/png".into(),
    }
}

/// Builds the phase-1 prompt for a mode.
///
/// `key_info` must be present iff the mode uses HTML; `screenshot` iff the
/// mode uses the screenshot. The system text is the mode's template followed
/// by its response format and always ends with the common rules block.
pub fn build_phase1_prompt(
    mode: InputMode,
    key_info: Option<&HtmlKeyInfo>,
    screenshot: Option<&RgbImage>,
) -> Result<PromptBundle, PromptError> {
    build_phase1_prompt_with(mode, key_info, screenshot, false)
}

/// [`build_phase1_prompt`] with the optional chain-of-thought block enabled.
pub fn build_phase1_prompt_with(
    mode: InputMode,
    key_info: Option<&HtmlKeyInfo>,
    screenshot: Option<&RgbImage>,
    chain_of_thought: bool,
) -> Result<PromptBundle, PromptError> {
    let wants_html = mode != InputMode::ScreenshotOnly;
    let wants_shot = mode != InputMode::HtmlOnly;
    if wants_html != key_info.is_some() {
        return Err(PromptError::ModeInputMismatch(format!(
            "mode {mode} {} HTML key info",
            if wants_html {
                "requires"
            } else {
                "must not receive"
            }
        )));
    }
    if wants_shot != screenshot.is_some() {
        return Err(PromptError::ModeInputMismatch(format!(
            "mode {mode} {} a screenshot",
            if wants_shot {
                "requires"
            } else {
                "must not receive"
            }
        )));
    }

    let (instruction, format) = match mode {
        InputMode::ScreenshotOnly => (SCREENSHOT_INSTRUCTION, RESPONSE_FORMAT_FULL),
        InputMode::HtmlOnly => (HTML_INSTRUCTION, RESPONSE_FORMAT_HTML),
        InputMode::Both => (BOTH_INSTRUCTION, RESPONSE_FORMAT_FULL),
    };
    let mut system_text = String::from(instruction);
    if chain_of_thought {
        system_text.push_str("\n\n");
        system_text.push_str(CHAIN_OF_THOUGHT);
    }
    system_text.push_str("\n\n");
    system_text.push_str(format);
    system_text.push_str("\n\n");
    system_text.push_str(COMMON_RULES);

    let user_text = match key_info {
        Some(info) => format!(
            "KEY INFORMATION:\n{}",
            serde_json::to_string_pretty(info).expect("key info serializes")
        ),
        None => String::new(),
    };

    Ok(PromptBundle {
        system_text,
        user_text,
        image_attachment: screenshot.map(encode_png),
    })
}

/// Builds the phase-2 domain-verification prompt.
///
/// The user text carries the URL and identified brand on the exact
/// `- URL:` / `- Identified Brand:` lines, plus the phase-1 confidence and
/// supporting evidence so the verifier can resolve typos.
pub fn build_phase2_prompt(
    url: &str,
    identified: &BrandIdentification,
) -> Result<PromptBundle, PromptError> {
    let brand = identified
        .brand
        .as_deref()
        .ok_or(PromptError::MissingBrand)?;
    let mut user_text = format!("- URL: {url}\n- Identified Brand: {brand}");
    user_text.push_str(&format!("\n- Confidence Score: {}", identified.confidence));
    if !identified.supporting_evidence.is_empty() {
        user_text.push_str(&format!(
            "\n- Supporting Evidence: {}",
            identified.supporting_evidence
        ));
    }
    Ok(PromptBundle {
        system_text: PHASE2_SYSTEM.into(),
        user_text,
        image_attachment: None,
    })
}

/// The response fields the parsers understand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Brand,
    HasCredentials,
    HasCallToAction,
    CredentialList,
    CallToActionList,
    Confidence,
    Evidence,
    GenuinePhishing,
    GenuineUrl,
}

/// Strips bullets, numbering and bold markers from a line.
fn clean_line(line: &str) -> String {
    let mut s = line.trim();
    while let Some(rest) = s.strip_prefix(['-', '*', '>', '•']) {
        s = rest.trim_start();
    }
    // Leading "1." / "2)" numbering.
    let digits = s.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 && digits <= 2 {
        let rest = &s[digits..];
        if let Some(rest) = rest.strip_prefix(['.', ')']) {
            s = rest.trim_start();
        }
    }
    s.replace("**", "").replace("__", "")
}

/// Normalizes a candidate field name to lowercase alphanumerics.
fn normalize_key(key: &str) -> String {
    key.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_lowercase()
}

fn field_for_key(key: &str) -> Option<Field> {
    let k = normalize_key(key);
    if k.is_empty() {
        return None;
    }
    if k == "brand" {
        Some(Field::Brand)
    } else if k.starts_with("hascredential") {
        Some(Field::HasCredentials)
    } else if k.starts_with("hascalltoaction") {
        Some(Field::HasCallToAction)
    } else if k.starts_with("genuinephishing") || k == "classification" || k == "verdict" {
        Some(Field::GenuinePhishing)
    } else if k.starts_with("genuineurl") || k == "officialurl" {
        Some(Field::GenuineUrl)
    } else if k.contains("credential") {
        Some(Field::CredentialList)
    } else if k.contains("calltoaction") {
        Some(Field::CallToActionList)
    } else if k.starts_with("confidence") {
        Some(Field::Confidence)
    } else if k.contains("evidence") {
        Some(Field::Evidence)
    } else {
        None
    }
}

/// Splits a response into `(field, value)` pairs; lines that do not start a
/// known field continue the previous one.
fn split_fields(text: &str) -> Vec<(Field, String)> {
    let mut fields: Vec<(Field, String)> = Vec::new();
    for raw_line in text.lines() {
        let line = clean_line(raw_line);
        if line.is_empty() {
            continue;
        }
        let parsed = line.split_once(':').and_then(|(key, value)| {
            if key.len() > 40 {
                return None;
            }
            field_for_key(key).map(|f| (f, value.trim().to_string()))
        });
        match parsed {
            Some((field, value)) => fields.push((field, value)),
            None => {
                if let Some((_, value)) = fields.last_mut() {
                    if !value.is_empty() {
                        value.push(' ');
                    }
                    value.push_str(&line);
                }
            }
        }
    }
    fields
}

fn strip_value(value: &str) -> &str {
    value
        .trim()
        .trim_end_matches([',', ';'])
        .trim()
        .trim_matches(['"', '\'', '“', '”'])
        .trim()
}

fn is_na(value: &str) -> bool {
    matches!(
        value.to_ascii_lowercase().as_str(),
        "na" | "n/a" | "n.a." | "none" | "unknown" | ""
    )
}

fn parse_yes_no(value: &str, field: &str, warnings: &mut Vec<String>) -> bool {
    let v = strip_value(value).to_ascii_lowercase();
    if v.starts_with("yes") {
        true
    } else if v.starts_with("no") || is_na(&v) {
        false
    } else {
        warnings.push(format!(
            "unrecognized {field} value {value:?}, treated as No"
        ));
        false
    }
}

fn parse_list(value: &str, field: &str, warnings: &mut Vec<String>) -> Vec<String> {
    if is_na(strip_value(value)) {
        return Vec::new();
    }
    let mut items: Vec<String> = value
        .split([',', '\n', ';'])
        .map(|s| strip_value(s).to_string())
        .filter(|s| !s.is_empty() && !is_na(s))
        .collect();
    if items.len() > 10 {
        warnings.push(format!(
            "{field} listed {} entries, keeping the first 10",
            items.len()
        ));
        items.truncate(10);
    }
    items
}

/// Extracts the first decimal number from a string.
fn first_number(value: &str) -> Option<f64> {
    let bytes = value.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i < bytes.len()
                && bytes[i] == b'.'
                && i + 1 < bytes.len()
                && bytes[i + 1].is_ascii_digit()
            {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            return value[start..i].parse().ok();
        }
        i += 1;
    }
    None
}

/// Parses a phase-1 response into a [`BrandIdentification`].
///
/// Tolerates missing numbering, markdown decoration, reordered fields and
/// underscore/space/hyphen variation in field names. "NA"-like brands map to
/// an absent brand. List entries beyond 10 are dropped with a warning;
/// out-of-range confidence is clamped with a warning; over-long evidence is
/// kept with a warning. Fails only when Brand or Confidence cannot be
/// located.
pub fn parse_phase1_response(
    text: &str,
    mode: InputMode,
) -> Result<BrandIdentification, PromptError> {
    let fields = split_fields(text);
    let mut warnings = Vec::new();

    let mut brand_raw = None;
    let mut has_cred_raw = None;
    let mut has_cta_raw = None;
    let mut cred_list_raw = None;
    let mut cta_list_raw = None;
    let mut confidence_raw = None;
    let mut evidence_raw = None;
    for (field, value) in fields {
        let slot = match field {
            Field::Brand => &mut brand_raw,
            Field::HasCredentials => &mut has_cred_raw,
            Field::HasCallToAction => &mut has_cta_raw,
            Field::CredentialList => &mut cred_list_raw,
            Field::CallToActionList => &mut cta_list_raw,
            Field::Confidence => &mut confidence_raw,
            Field::Evidence => &mut evidence_raw,
            Field::GenuinePhishing | Field::GenuineUrl => continue,
        };
        if slot.is_none() {
            *slot = Some(value);
        }
    }

    let mut missing = Vec::new();
    if brand_raw.is_none() {
        missing.push("Brand".to_string());
    }
    let confidence_value = confidence_raw.as_deref().and_then(first_number);
    if confidence_value.is_none() {
        missing.push("Confidence Score".to_string());
    }
    if !missing.is_empty() {
        return Err(PromptError::MissingFields { missing });
    }

    let brand = {
        let raw = strip_value(brand_raw.as_deref().unwrap_or_default()).to_string();
        if is_na(&raw) {
            None
        } else {
            Some(raw)
        }
    };

    let (confidence, clamped) = Confidence::clamping_from_f64(confidence_value.unwrap());
    if clamped {
        warnings.push(format!(
            "confidence {} out of range, clamped to {confidence}",
            confidence_value.unwrap()
        ));
    }

    let (has_credentials, has_call_to_action, credential_fields, call_to_action_fields) = if mode
        == InputMode::HtmlOnly
    {
        if has_cred_raw.is_some()
            || has_cta_raw.is_some()
            || cred_list_raw.is_some()
            || cta_list_raw.is_some()
        {
            warnings.push(
                "html-only responses carry no credential/call-to-action fields; ignored".into(),
            );
        }
        (false, false, Vec::new(), Vec::new())
    } else {
        let mut has_cred = has_cred_raw
            .as_deref()
            .map(|v| parse_yes_no(v, "Has Credentials", &mut warnings))
            .unwrap_or(false);
        let mut has_cta = has_cta_raw
            .as_deref()
            .map(|v| parse_yes_no(v, "Has Call_To_Action", &mut warnings))
            .unwrap_or(false);
        let creds = cred_list_raw
            .as_deref()
            .map(|v| parse_list(v, "List of credentials", &mut warnings))
            .unwrap_or_default();
        let ctas = cta_list_raw
            .as_deref()
            .map(|v| parse_list(v, "List of call_to_action", &mut warnings))
            .unwrap_or_default();
        if !creds.is_empty() && !has_cred {
            warnings.push("credential fields listed, forcing Has Credentials to Yes".into());
            has_cred = true;
        }
        if !ctas.is_empty() && !has_cta {
            warnings.push("call-to-action fields listed, forcing Has Call_To_Action to Yes".into());
            has_cta = true;
        }
        (has_cred, has_cta, creds, ctas)
    };

    let supporting_evidence = evidence_raw
        .map(|v| v.trim().to_string())
        .unwrap_or_default();
    if supporting_evidence.split_whitespace().count() > 300 {
        warnings.push("supporting evidence exceeds 300 words, kept intact".into());
    }

    Ok(BrandIdentification {
        brand,
        has_credentials,
        has_call_to_action,
        credential_fields,
        call_to_action_fields,
        confidence,
        supporting_evidence,
        mode,
        warnings,
    })
}

/// Renders a [`BrandIdentification`] in the canonical numbered response
/// format, the inverse of [`parse_phase1_response`] on well-formed values.
pub fn render_phase1_response(identification: &BrandIdentification) -> String {
    let brand = identification.brand.as_deref().unwrap_or("NA");
    let yes_no = |b: bool| if b { "Yes" } else { "No" };
    let list = |items: &[String]| {
        if items.is_empty() {
            "NA".to_string()
        } else {
            items.join(", ")
        }
    };
    match identification.mode {
        InputMode::HtmlOnly => format!(
            "1. Brand: {brand}\n2. Confidence Score: {}\n3. Supporting Evidence: {}",
            identification.confidence, identification.supporting_evidence
        ),
        _ => format!(
            "1. Brand: {brand}\n\
             2. Has Credentials: {}\n\
             3. Has Call_To_Action: {}\n\
             4. List of credentials: {}\n\
             5. List of call_to_action: {}\n\
             6. Confidence Score: {}\n\
             7. Supporting Evidence: {}",
            yes_no(identification.has_credentials),
            yes_no(identification.has_call_to_action),
            list(&identification.credential_fields),
            list(&identification.call_to_action_fields),
            identification.confidence,
            identification.supporting_evidence
        ),
    }
}

/// Renders a [`DomainVerdict`] in the canonical phase-2 format.
pub fn render_phase2_response(verdict: &DomainVerdict) -> String {
    let class = match verdict.classification {
        Classification::Genuine => "Genuine",
        Classification::Phishing => "Phishing",
    };
    format!(
        "- Genuine/Phishing: {class}\n- Evidence: {}\n- Genuine URL: {}",
        verdict.evidence,
        verdict.genuine_url.as_deref().unwrap_or("NA")
    )
}

fn absolute_url(value: &str) -> Option<String> {
    let cleaned = strip_value(value).trim_end_matches(['.', ')']).trim();
    if is_na(cleaned) {
        return None;
    }
    match url::Url::parse(cleaned) {
        Ok(u) if u.host_str().is_some() => Some(cleaned.to_string()),
        _ => None,
    }
}

/// Parses a phase-2 response into a [`DomainVerdict`].
///
/// The classification line is located tolerantly (leading bullets, bold,
/// case). Evidence falls back to the remaining response text so it is never
/// empty; a malformed or "NA" genuine URL becomes absent.
pub fn parse_phase2_response(text: &str) -> Result<DomainVerdict, PromptError> {
    let fields = split_fields(text);
    let mut classification = None;
    let mut evidence = None;
    let mut genuine_url = None;
    for (field, value) in &fields {
        match field {
            Field::GenuinePhishing if classification.is_none() => {
                let v = value.to_ascii_lowercase();
                if v.contains("phishing") {
                    classification = Some(Classification::Phishing);
                } else if v.contains("genuine") || v.contains("legitimate") {
                    classification = Some(Classification::Genuine);
                }
            }
            Field::Evidence if evidence.is_none() => {
                let v = value.trim().to_string();
                if !v.is_empty() {
                    evidence = Some(v);
                }
            }
            Field::GenuineUrl if genuine_url.is_none() => {
                genuine_url = absolute_url(value);
            }
            _ => {}
        }
    }

    // Fallback: a bare "Phishing" / "Genuine" line.
    if classification.is_none() {
        for line in text.lines() {
            let cleaned = clean_line(line);
            let token = cleaned
                .trim_end_matches(['.', '!'])
                .trim()
                .to_ascii_lowercase();
            if token == "phishing" {
                classification = Some(Classification::Phishing);
                break;
            }
            if token == "genuine" {
                classification = Some(Classification::Genuine);
                break;
            }
        }
    }
    let classification = classification.ok_or(PromptError::NoClassification)?;

    let evidence = evidence.unwrap_or_else(|| {
        let rest: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| {
                !l.is_empty() && {
                    let cleaned = clean_line(l);
                    cleaned
                        .split_once(':')
                        .map(|(k, _)| {
                            !matches!(
                                field_for_key(k),
                                Some(Field::GenuinePhishing) | Some(Field::GenuineUrl)
                            )
                        })
                        .unwrap_or(true)
                }
            })
            .collect();
        let joined = rest.join(" ").trim().to_string();
        if joined.is_empty() {
            text.trim().to_string()
        } else {
            joined
        }
    });

    Ok(DomainVerdict {
        classification,
        evidence,
        genuine_url,
    })
}
