//! Live provider adapters and provider-error classification.
//!
//! Endpoints, safety/too-large markers and image-token formulas are all
//! configuration; nothing provider-specific is hardcoded beyond the request
//! and response shapes of the three supported API families.

use std::collections::HashMap;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{ErrorKind, GatewayError, LlmRequest, LlmResponse, TokenUsage, Transport};

/// Environment variable carrying the API key for a provider.
pub fn api_key_env_var(provider: &str) -> String {
    format!("BRANDLENS_API_KEY_{}", provider.to_ascii_uppercase())
}

/// Case-insensitive substrings that mark safety blocks and oversized inputs
/// in provider error payloads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErrorMarkers {
    pub safety: Vec<String>,
    pub too_large: Vec<String>,
}

impl Default for ErrorMarkers {
    fn default() -> Self {
        Self {
            safety: [
                "safety",
                "blocked",
                "content_filter",
                "content management policy",
                "harm_category",
            ]
            .map(String::from)
            .to_vec(),
            too_large: [
                "context_length_exceeded",
                "maximum context length",
                "request too large",
                "request_too_large",
                "input is too long",
                "exceeds the maximum",
            ]
            .map(String::from)
            .to_vec(),
        }
    }
}

/// Maps a provider error payload and HTTP status onto the error taxonomy.
///
/// 429 is a rate limit; marker matches classify safety blocks and oversized
/// inputs; remaining 5xx are server errors; anything else, including
/// unparseable payloads, is malformed.
pub fn classify_error(payload: &str, http_status: u16, markers: &ErrorMarkers) -> GatewayError {
    let snippet: String = payload.chars().take(300).collect();
    if http_status == 429 {
        return GatewayError::new(ErrorKind::RateLimited, format!("status 429: {snippet}"));
    }
    let lowered = payload.to_lowercase();
    if markers
        .safety
        .iter()
        .any(|m| lowered.contains(&m.to_lowercase()))
    {
        return GatewayError::new(
            ErrorKind::SafetyFilter,
            format!("status {http_status}: {snippet}"),
        );
    }
    if markers
        .too_large
        .iter()
        .any(|m| lowered.contains(&m.to_lowercase()))
    {
        return GatewayError::new(
            ErrorKind::InputTooLarge,
            format!("status {http_status}: {snippet}"),
        );
    }
    if (500..600).contains(&http_status) {
        return GatewayError::new(
            ErrorKind::ServerError,
            format!("status {http_status}: {snippet}"),
        );
    }
    GatewayError::new(
        ErrorKind::Malformed,
        format!("status {http_status}: {snippet}"),
    )
}

/// Tile-based image token estimate: `base + per_tile * ceil(w/tile) * ceil(h/tile)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageTokenFormula {
    pub base: u64,
    pub per_tile: u64,
    pub tile: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("no image token formula registered for model {0}")]
pub struct UnknownModelFormula(pub String);

/// Estimates image tokens from the formula registered for `model_id`, with a
/// fallback on the provider prefix.
pub fn estimate_image_tokens(
    width: u32,
    height: u32,
    model_id: &str,
    formulas: &HashMap<String, ImageTokenFormula>,
) -> Result<u64, UnknownModelFormula> {
    let formula = formulas
        .get(model_id)
        .or_else(|| formulas.get(split_model_id(model_id).0))
        .ok_or_else(|| UnknownModelFormula(model_id.to_string()))?;
    let tile = formula.tile.max(1) as u64;
    let tiles_w = (width as u64).div_ceil(tile);
    let tiles_h = (height as u64).div_ceil(tile);
    Ok(formula.base + formula.per_tile * tiles_w * tiles_h)
}

/// API families with distinct request/response shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    OpenAi,
    Anthropic,
    Gemini,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: String,
    #[serde(default)]
    pub markers: ErrorMarkers,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_tokens: Option<ImageTokenFormula>,
}

#[derive(Debug, Error)]
#[error("missing credentials: set {}", vars.join(", "))]
pub struct MissingCredentials {
    pub vars: Vec<String>,
}

/// `provider/model` -> (`provider`, `model`). A bare model id maps to itself
/// with an empty provider.
pub fn split_model_id(model_id: &str) -> (&str, &str) {
    match model_id.split_once('/') {
        Some((provider, model)) => (provider, model),
        None => ("", model_id),
    }
}

/// HTTP transport over the configured providers. The provider is chosen by
/// the `provider/` prefix of the request's model id.
pub struct LiveTransport {
    providers: HashMap<String, ProviderConfig>,
    keys: HashMap<String, String>,
    client: reqwest::blocking::Client,
}

impl LiveTransport {
    pub fn new(providers: HashMap<String, ProviderConfig>, keys: HashMap<String, String>) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(180))
            .build()
            .expect("http client");
        Self {
            providers,
            keys,
            client,
        }
    }

    /// Reads one API key per configured provider from the environment. All
    /// missing variable names are reported together.
    pub fn from_env(
        providers: HashMap<String, ProviderConfig>,
    ) -> Result<Self, MissingCredentials> {
        let mut keys = HashMap::new();
        let mut missing = Vec::new();
        for name in providers.keys() {
            let var = api_key_env_var(name);
            match std::env::var(&var) {
                Ok(value) if !value.is_empty() => {
                    keys.insert(name.clone(), value);
                }
                _ => missing.push(var),
            }
        }
        if !missing.is_empty() {
            missing.sort();
            return Err(MissingCredentials { vars: missing });
        }
        Ok(Self::new(providers, keys))
    }

    fn provider_for<'a>(
        &'a self,
        model_id: &'a str,
    ) -> Result<(&'a str, &'a ProviderConfig, &'a str), GatewayError> {
        let (provider, model) = split_model_id(model_id);
        let config = self.providers.get(provider).ok_or_else(|| {
            GatewayError::new(
                ErrorKind::Malformed,
                format!("no provider configured for model id {model_id:?}"),
            )
        })?;
        Ok((provider, config, model))
    }

    fn key_for(&self, provider: &str) -> Result<&str, GatewayError> {
        self.keys.get(provider).map(String::as_str).ok_or_else(|| {
            GatewayError::new(
                ErrorKind::Malformed,
                format!("no API key loaded for provider {provider:?}"),
            )
        })
    }
}

fn b64(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

fn openai_body(model: &str, request: &LlmRequest) -> Value {
    let mut content = vec![json!({"type": "text", "text": request.user_text})];
    if let Some(image) = &request.image {
        content.push(json!({
            "type": "image_url",
            "image_url": {"url": format!("data:{};base64,{}", image.media_type, b64(&image.bytes))}
        }));
    }
    json!({
        "model": model,
        "messages": [
            {"role": "system", "content": request.system_text},
            {"role": "user", "content": content},
        ],
        "max_tokens": request.max_output_tokens,
        "temperature": request.temperature,
    })
}

fn anthropic_body(model: &str, request: &LlmRequest) -> Value {
    let mut content = Vec::new();
    if let Some(image) = &request.image {
        content.push(json!({
            "type": "image",
            "source": {"type": "base64", "media_type": image.media_type, "data": b64(&image.bytes)}
        }));
    }
    content.push(json!({"type": "text", "text": request.user_text}));
    json!({
        "model": model,
        "system": request.system_text,
        "messages": [{"role": "user", "content": content}],
        "max_tokens": request.max_output_tokens,
        "temperature": request.temperature,
    })
}

fn gemini_body(request: &LlmRequest) -> Value {
    let mut parts =
        vec![json!({"text": format!("{}\n\n{}", request.system_text, request.user_text)})];
    if let Some(image) = &request.image {
        parts.push(json!({
            "inline_data": {"mime_type": image.media_type, "data": b64(&image.bytes)}
        }));
    }
    json!({
        "contents": [{"parts": parts}],
        "generationConfig": {
            "temperature": request.temperature,
            "maxOutputTokens": request.max_output_tokens,
        },
    })
}

fn parse_openai(value: &Value) -> Option<LlmResponse> {
    let text = value["choices"][0]["message"]["content"]
        .as_str()?
        .to_string();
    let usage = TokenUsage::new(
        value["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
        value["usage"]["completion_tokens"].as_u64().unwrap_or(0),
    );
    Some(LlmResponse { text, usage })
}

fn parse_anthropic(value: &Value) -> Option<LlmResponse> {
    let parts = value["content"].as_array()?;
    let text: String = parts
        .iter()
        .filter_map(|p| p["text"].as_str())
        .collect::<Vec<_>>()
        .join("");
    if text.is_empty() && parts.is_empty() {
        return None;
    }
    let usage = TokenUsage::new(
        value["usage"]["input_tokens"].as_u64().unwrap_or(0),
        value["usage"]["output_tokens"].as_u64().unwrap_or(0),
    );
    Some(LlmResponse { text, usage })
}

fn parse_gemini(value: &Value) -> Option<LlmResponse> {
    let parts = value["candidates"][0]["content"]["parts"].as_array()?;
    let text: String = parts
        .iter()
        .filter_map(|p| p["text"].as_str())
        .collect::<Vec<_>>()
        .join("");
    let usage = TokenUsage::new(
        value["usageMetadata"]["promptTokenCount"]
            .as_u64()
            .unwrap_or(0),
        value["usageMetadata"]["candidatesTokenCount"]
            .as_u64()
            .unwrap_or(0),
    );
    Some(LlmResponse { text, usage })
}

/// Turns a raw provider HTTP outcome into a response or a classified error.
fn handle_provider_response(
    kind: ProviderKind,
    status: u16,
    body: &str,
    markers: &ErrorMarkers,
) -> Result<LlmResponse, GatewayError> {
    if !(200..300).contains(&status) {
        return Err(classify_error(body, status, markers));
    }
    let value: Value =
        serde_json::from_str(body).map_err(|_| classify_error(body, status, markers))?;

    // Gemini reports safety blocks inside 200 responses.
    if let Some(reason) = value["promptFeedback"]["blockReason"].as_str() {
        return Err(GatewayError::new(
            ErrorKind::SafetyFilter,
            format!("blocked: {reason}"),
        ));
    }

    let parsed = match kind {
        ProviderKind::OpenAi => parse_openai(&value),
        ProviderKind::Anthropic => parse_anthropic(&value),
        ProviderKind::Gemini => parse_gemini(&value),
    };
    parsed.ok_or_else(|| classify_error(body, status, markers))
}

impl Transport for LiveTransport {
    fn send(&self, request: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        let (provider, config, model) = self.provider_for(&request.model_id)?;
        let key = self.key_for(provider)?;

        let http_request = match config.kind {
            ProviderKind::OpenAi => self
                .client
                .post(&config.endpoint)
                .bearer_auth(key)
                .json(&openai_body(model, request)),
            ProviderKind::Anthropic => self
                .client
                .post(&config.endpoint)
                .header("x-api-key", key)
                .header("anthropic-version", "2023-06-01")
                .json(&anthropic_body(model, request)),
            ProviderKind::Gemini => {
                let endpoint = config.endpoint.replace("{model}", model);
                self.client
                    .post(&endpoint)
                    .header("x-goog-api-key", key)
                    .json(&gemini_body(request))
            }
        };

        let response = http_request
            .send()
            .map_err(|e| GatewayError::new(ErrorKind::Transport, e.to_string()))?;
        let status = response.status().as_u16();
        let body = response
            .text()
            .map_err(|e| GatewayError::new(ErrorKind::Transport, e.to_string()))?;
        handle_provider_response(config.kind, status, &body, &config.markers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_429_is_rate_limited() {
        let err = classify_error("whatever", 429, &ErrorMarkers::default());
        assert_eq!(err.kind, ErrorKind::RateLimited);
    }

    #[test]
    fn safety_marker_wins_on_client_errors() {
        let err = classify_error(
            r#"{"error": {"message": "request blocked by safety system"}}"#,
            400,
            &ErrorMarkers::default(),
        );
        assert_eq!(err.kind, ErrorKind::SafetyFilter);
    }

    #[test]
    fn too_large_marker_is_detected() {
        let err = classify_error(
            r#"{"error": {"code": "context_length_exceeded"}}"#,
            400,
            &ErrorMarkers::default(),
        );
        assert_eq!(err.kind, ErrorKind::InputTooLarge);
    }

    #[test]
    fn bare_5xx_is_server_error() {
        let err = classify_error("internal error", 503, &ErrorMarkers::default());
        assert_eq!(err.kind, ErrorKind::ServerError);
    }

    #[test]
    fn garbage_payload_is_malformed() {
        let err = classify_error("{garbage", 200, &ErrorMarkers::default());
        assert_eq!(err.kind, ErrorKind::Malformed);
    }

    #[test]
    fn image_token_formula_matches_tile_arithmetic() {
        let mut formulas = HashMap::new();
        formulas.insert(
            "test/vision".to_string(),
            ImageTokenFormula {
                base: 85,
                per_tile: 170,
                tile: 512,
            },
        );
        assert_eq!(
            estimate_image_tokens(512, 512, "test/vision", &formulas).unwrap(),
            255
        );
        assert_eq!(
            estimate_image_tokens(1024, 1024, "test/vision", &formulas).unwrap(),
            765
        );
        assert_eq!(
            estimate_image_tokens(100, 100, "unseen/model", &formulas),
            Err(UnknownModelFormula("unseen/model".into()))
        );
    }

    #[test]
    fn provider_fallback_applies_to_model_ids() {
        let mut formulas = HashMap::new();
        formulas.insert(
            "test".to_string(),
            ImageTokenFormula {
                base: 10,
                per_tile: 1,
                tile: 512,
            },
        );
        assert_eq!(
            estimate_image_tokens(512, 512, "test/any-model", &formulas).unwrap(),
            11
        );
    }

    #[test]
    fn missing_env_credentials_name_all_variables() {
        let mut providers = HashMap::new();
        providers.insert(
            "nosuchprovider".to_string(),
            ProviderConfig {
                kind: ProviderKind::OpenAi,
                endpoint: "https://example.invalid/v1".into(),
                markers: ErrorMarkers::default(),
                image_tokens: None,
            },
        );
        let err = match LiveTransport::from_env(providers) {
            Err(err) => err,
            Ok(_) => panic!("expected missing credentials"),
        };
        assert_eq!(err.vars, vec!["BRANDLENS_API_KEY_NOSUCHPROVIDER"]);
    }

    #[test]
    fn model_id_splits_on_first_slash() {
        assert_eq!(
            split_model_id("openai/gpt-4-turbo"),
            ("openai", "gpt-4-turbo")
        );
        assert_eq!(split_model_id("bare-model"), ("", "bare-model"));
    }

    fn request_with_image() -> LlmRequest {
        LlmRequest::new("p/m", "sys text", "user text").with_image(super::super::ImagePayload {
            bytes: vec![1, 2, 3],
            media_type: "image/png".into(),
        })
    }

    #[test]
    fn openai_body_carries_system_user_and_image() {
        let body = openai_body("gpt-4-turbo", &request_with_image());
        assert_eq!(body["model"], "gpt-4-turbo");
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][0]["content"], "sys text");
        assert_eq!(body["messages"][1]["content"][0]["text"], "user text");
        let url = body["messages"][1]["content"][1]["image_url"]["url"]
            .as_str()
            .unwrap();
        assert!(url.starts_with("data:image/png;base64,"));
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["max_tokens"], 1024);
    }

    #[test]
    fn anthropic_body_puts_image_before_text() {
        let body = anthropic_body("claude-3-opus", &request_with_image());
        assert_eq!(body["system"], "sys text");
        assert_eq!(body["messages"][0]["content"][0]["type"], "image");
        assert_eq!(
            body["messages"][0]["content"][0]["source"]["media_type"],
            "image/png"
        );
        assert_eq!(body["messages"][0]["content"][1]["text"], "user text");
    }

    #[test]
    fn gemini_body_folds_system_into_the_text_part() {
        let body = gemini_body(&request_with_image());
        let text = body["contents"][0]["parts"][0]["text"].as_str().unwrap();
        assert!(text.starts_with("sys text"));
        assert!(text.ends_with("user text"));
        assert_eq!(
            body["contents"][0]["parts"][1]["inline_data"]["mime_type"],
            "image/png"
        );
        assert_eq!(body["generationConfig"]["maxOutputTokens"], 1024);
    }

    #[test]
    fn provider_responses_parse_text_and_usage() {
        let markers = ErrorMarkers::default();
        let openai = r#"{"choices":[{"message":{"content":"Brand: X"}}],
                         "usage":{"prompt_tokens":120,"completion_tokens":30}}"#;
        let parsed =
            handle_provider_response(ProviderKind::OpenAi, 200, openai, &markers).unwrap();
        assert_eq!(parsed.text, "Brand: X");
        assert_eq!(parsed.usage, TokenUsage::new(120, 30));

        let anthropic = r#"{"content":[{"type":"text","text":"Brand: Y"}],
                            "usage":{"input_tokens":80,"output_tokens":22}}"#;
        let parsed =
            handle_provider_response(ProviderKind::Anthropic, 200, anthropic, &markers).unwrap();
        assert_eq!(parsed.text, "Brand: Y");
        assert_eq!(parsed.usage, TokenUsage::new(80, 22));

        let gemini = r#"{"candidates":[{"content":{"parts":[{"text":"Brand: Z"}]}}],
                         "usageMetadata":{"promptTokenCount":55,"candidatesTokenCount":11}}"#;
        let parsed =
            handle_provider_response(ProviderKind::Gemini, 200, gemini, &markers).unwrap();
        assert_eq!(parsed.text, "Brand: Z");
        assert_eq!(parsed.usage, TokenUsage::new(55, 11));
    }

    #[test]
    fn gemini_block_reason_in_200_is_a_safety_filter() {
        let body = r#"{"promptFeedback":{"blockReason":"SAFETY"}}"#;
        let err = handle_provider_response(ProviderKind::Gemini, 200, body, &ErrorMarkers::default())
            .unwrap_err();
        assert_eq!(err.kind, ErrorKind::SafetyFilter);
        assert!(err.detail.contains("SAFETY"));
    }

    #[test]
    fn provider_5xx_maps_to_server_error_through_the_handler() {
        let err = handle_provider_response(
            ProviderKind::OpenAi,
            500,
            r#"{"error": {"message": "upstream exploded"}}"#,
            &ErrorMarkers::default(),
        )
        .unwrap_err();
        assert_eq!(err.kind, ErrorKind::ServerError);
    }

    #[test]
    fn unexpected_200_shape_is_malformed() {
        let err = handle_provider_response(
            ProviderKind::OpenAi,
            200,
            r#"{"totally": "unexpected"}"#,
            &ErrorMarkers::default(),
        )
        .unwrap_err();
        assert_eq!(err.kind, ErrorKind::Malformed);
    }
}
