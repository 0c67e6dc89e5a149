//! Two-phase phishing webpage detection backed by multimodal LLMs.
//!
//! Phase 1 identifies the brand a captured webpage renders, from its
//! screenshot, from key information extracted out of its HTML, or from both.
//! Phase 2 verifies whether the URL's registrable domain legitimately belongs
//! to the identified brand and returns an interpretable verdict.
//!
//! The crate also ships the surrounding machinery a detection study needs:
//! dataset loading with SHA-256 deduplication ([`snapshot`]), invalid-sample
//! filtering over screenshots and markup ([`filter`]), prompt construction and
//! structured response parsing ([`prompt`]), a provider-agnostic LLM gateway
//! with retry, rate limiting and record/replay transports ([`gateway`]), the
//! detection pipeline itself ([`pipeline`]), and evaluation analytics
//! ([`eval`]).

pub mod config;
pub mod domain;
pub mod eval;
pub mod filter;
pub mod gateway;
pub mod html;
pub mod pipeline;
pub mod prompt;
pub mod snapshot;

pub use config::RunConfig;
pub use eval::{EvalRecord, EvalReport};
pub use gateway::{Gateway, GatewayError, LlmRequest, TokenUsage};
pub use html::HtmlKeyInfo;
pub use pipeline::{PhishingVerdict, VerdictOutcome};
pub use prompt::{BrandIdentification, DomainVerdict, InputMode};
pub use snapshot::WebpageSnapshot;
