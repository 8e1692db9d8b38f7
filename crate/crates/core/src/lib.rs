//! Detection and removal of WAF bypasses that stem from HTTP body-parsing
//! discrepancies.
//!
//! The crate pairs a differential harness (strict WAF model versus lenient
//! framework models, driven by a grammar-based mutation engine) with a
//! normalize-or-reject engine that rewrites requests into a canonical form.

pub mod harness;
pub mod http;
pub mod json;
pub mod media_type;
pub mod minimize;
pub mod mutation;
pub mod multipart;
pub mod normalizer;
pub mod reject;
pub mod report;
pub mod rules;
pub mod xml;

pub use http::{parse_raw_request, HeaderField, LineEnding, RawRequest, StructuralError};
pub use media_type::{parse_media_type, MediaParam, MediaType, MediaTypeError};
pub use reject::{LenientError, RejectCategory, RejectReason};
pub use harness::{
    framework_preset, framework_presets, run_differential, run_matrix, waf_preset, waf_presets, DiffResult,
    FrameworkModel, MatrixRow, Outcome, WafModel,
};
pub use minimize::{classify, dedupe, find_bypasses, minimize, BypassRecord};
pub use mutation::{
    apply_mutation, apply_stack, exemplar, generate_corpus, generate_seed, CorpusEntry, CorpusOptions, MutationClass,
    MutationSpec, SeedSpec,
};
pub use normalizer::{normalize, NormalizationOutcome, NormalizerPolicy};
pub use report::{OutcomeRecord, ReportSummary};
pub use rules::{default_signatures, evaluate, parse_rules, Rule, Verdict};
