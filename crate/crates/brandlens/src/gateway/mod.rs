//! Uniform client over multiple LLM providers: typed errors, token
//! accounting, bounded retry with jittered backoff, rate limiting, and
//! record/replay transports for deterministic runs.

mod limiter;
mod provider;
mod transport;

pub use limiter::{Clock, RateLimiter, SystemClock, VirtualClock};
pub use provider::{
    api_key_env_var, classify_error, estimate_image_tokens, split_model_id, ErrorMarkers,
    ImageTokenFormula, LiveTransport, MissingCredentials, ProviderConfig, ProviderKind,
    UnknownModelFormula,
};
pub use transport::{
    FixtureError, FnTransport, LlmResponse, RecorderTransport, ReplayTransport, Transport,
};

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Default cap on generated tokens.
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 1024;

/// An image sent alongside a prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImagePayload {
    pub bytes: Vec<u8>,
    pub media_type: String,
}

/// One completion request. Temperature defaults to 0.0 for determinism.
#[derive(Debug, Clone, PartialEq)]
pub struct LlmRequest {
    /// `provider/model`, e.g. `openai/gpt-4-turbo`.
    pub model_id: String,
    pub system_text: String,
    pub user_text: String,
    pub image: Option<ImagePayload>,
    pub max_output_tokens: u32,
    pub temperature: f64,
}

impl LlmRequest {
    pub fn new(
        model_id: impl Into<String>,
        system_text: impl Into<String>,
        user_text: impl Into<String>,
    ) -> Self {
        Self {
            model_id: model_id.into(),
            system_text: system_text.into(),
            user_text: user_text.into(),
            image: None,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            temperature: 0.0,
        }
    }

    pub fn with_image(mut self, image: ImagePayload) -> Self {
        self.image = Some(image);
        self
    }
}

/// Token counts as reported by a provider. `total` is always
/// `input_tokens + output_tokens`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl TokenUsage {
    pub fn new(input_tokens: u64, output_tokens: u64) -> Self {
        Self {
            input_tokens,
            output_tokens,
        }
    }

    pub fn total(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

impl std::ops::Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage::new(
            self.input_tokens + rhs.input_tokens,
            self.output_tokens + rhs.output_tokens,
        )
    }
}

impl std::ops::AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: TokenUsage) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for TokenUsage {
    fn sum<I: Iterator<Item = TokenUsage>>(iter: I) -> TokenUsage {
        iter.fold(TokenUsage::default(), |acc, u| acc + u)
    }
}

impl Serialize for TokenUsage {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut s = serializer.serialize_struct("TokenUsage", 3)?;
        s.serialize_field("input_tokens", &self.input_tokens)?;
        s.serialize_field("output_tokens", &self.output_tokens)?;
        s.serialize_field("total", &self.total())?;
        s.end()
    }
}

impl<'de> Deserialize<'de> for TokenUsage {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            input_tokens: u64,
            output_tokens: u64,
            #[serde(default)]
            total: Option<u64>,
        }
        let raw = Raw::deserialize(deserializer)?;
        let usage = TokenUsage::new(raw.input_tokens, raw.output_tokens);
        if let Some(total) = raw.total {
            if total != usage.total() {
                return Err(serde::de::Error::custom(format!(
                    "total {total} does not equal input {} + output {}",
                    raw.input_tokens, raw.output_tokens
                )));
            }
        }
        Ok(usage)
    }
}

/// Error taxonomy for provider responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// The provider's safety filter blocked the request or response.
    SafetyFilter,
    RateLimited,
    ServerError,
    InputTooLarge,
    /// Network-level failure, or a replay/record backend failure.
    Transport,
    /// Response or error payload that fits no known shape.
    Malformed,
}

impl ErrorKind {
    /// Retryable exactly for rate limits, server errors and transport
    /// failures.
    pub fn retryable(self) -> bool {
        matches!(
            self,
            ErrorKind::RateLimited | ErrorKind::ServerError | ErrorKind::Transport
        )
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ErrorKind::SafetyFilter => "safety_filter",
            ErrorKind::RateLimited => "rate_limited",
            ErrorKind::ServerError => "server_error",
            ErrorKind::InputTooLarge => "input_too_large",
            ErrorKind::Transport => "transport",
            ErrorKind::Malformed => "malformed",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{kind}: {detail}")]
pub struct GatewayError {
    pub kind: ErrorKind,
    pub detail: String,
}

impl GatewayError {
    pub fn new(kind: ErrorKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
        }
    }

    pub fn retryable(&self) -> bool {
        self.kind.retryable()
    }
}

#[derive(Serialize)]
struct CanonicalRequest<'a> {
    model_id: &'a str,
    system_text: &'a str,
    user_text: &'a str,
    image_sha256: Option<String>,
    image_media_type: Option<&'a str>,
    max_output_tokens: u32,
    temperature: f64,
}

/// SHA-256 over the canonical serialization of a request, hex-encoded.
/// Images enter by the digest of their bytes. Everything that changes the
/// model output is covered, including temperature and the output cap.
pub fn request_hash(request: &LlmRequest) -> String {
    let canonical = CanonicalRequest {
        model_id: &request.model_id,
        system_text: &request.system_text,
        user_text: &request.user_text,
        image_sha256: request
            .image
            .as_ref()
            .map(|i| hex::encode(Sha256::digest(&i.bytes))),
        image_media_type: request.image.as_ref().map(|i| i.media_type.as_str()),
        max_output_tokens: request.max_output_tokens,
        temperature: request.temperature,
    };
    let bytes = serde_json::to_vec(&canonical).expect("canonical request serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// Retry schedule: exponential backoff with full jitter.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base: Duration,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base: Duration::from_secs(1),
            factor: 2.0,
        }
    }
}

/// The gateway: a transport plus retry, rate limiting and a clock.
///
/// Safe for concurrent use; the limiter and any recorder serialize
/// internally.
pub struct Gateway {
    transport: Arc<dyn Transport>,
    limiter: Option<RateLimiter>,
    clock: Arc<dyn Clock>,
    policy: RetryPolicy,
    retry_safety_once: bool,
}

impl Gateway {
    pub fn new(transport: Arc<dyn Transport>) -> Self {
        Self {
            transport,
            limiter: None,
            clock: Arc::new(SystemClock::new()),
            policy: RetryPolicy::default(),
            retry_safety_once: false,
        }
    }

    /// Limits dispatches to at most `per_sec` in any one-second window.
    pub fn with_rate_limit(mut self, per_sec: u32) -> Self {
        self.limiter = Some(RateLimiter::new(per_sec));
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_policy(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    /// Allows a single retry after a safety-filter block. Off by default:
    /// safety outcomes are results, not faults.
    pub fn with_safety_retry(mut self) -> Self {
        self.retry_safety_once = true;
        self
    }

    pub fn transport(&self) -> &Arc<dyn Transport> {
        &self.transport
    }

    /// Sends a request, retrying retryable errors with exponential backoff
    /// (base 1s, doubling, at most 5 attempts, full jitter). Safety-filter
    /// and input-too-large errors surface immediately. Deterministic
    /// transports (replay) are never retried: the outcome cannot change.
    pub fn complete(&self, request: &LlmRequest) -> Result<(String, TokenUsage), GatewayError> {
        let mut attempt = 0;
        let mut safety_retried = false;
        loop {
            attempt += 1;
            if let Some(limiter) = &self.limiter {
                limiter.acquire(self.clock.as_ref());
            }
            let err = match self.transport.send(request) {
                Ok(response) => return Ok((response.text, response.usage)),
                Err(err) => err,
            };
            let retry = if err.kind == ErrorKind::SafetyFilter {
                self.retry_safety_once && !std::mem::replace(&mut safety_retried, true)
            } else {
                err.retryable()
            };
            if !retry || self.transport.deterministic() || attempt >= self.policy.max_attempts {
                return Err(err);
            }
            let exp = self.policy.base.as_secs_f64() * self.policy.factor.powi(attempt as i32 - 1);
            let jittered = exp * rand::random::<f64>();
            self.clock.sleep(Duration::from_secs_f64(jittered));
        }
    }
}
