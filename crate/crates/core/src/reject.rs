//! Typed rejection reasons shared by the strict codecs and the normalizer.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Closed set of reasons a strict parser (or the normalizer) refuses input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RejectCategory {
    DeprecatedFeature,
    MalformedFraming,
    MalformedPartHeader,
    InvalidBoundary,
    ControlBytes,
    BareLineEnding,
    MissingFinalDelimiter,
    MalformedBody,
    MalformedHeader,
    AmbiguousHeader,
    MissingContentType,
    UnparseableContentType,
    UnsupportedContentType,
    NonCanonical,
    BodyTooLarge,
}

impl RejectCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::DeprecatedFeature => "DeprecatedFeature",
            Self::MalformedFraming => "MalformedFraming",
            Self::MalformedPartHeader => "MalformedPartHeader",
            Self::InvalidBoundary => "InvalidBoundary",
            Self::ControlBytes => "ControlBytes",
            Self::BareLineEnding => "BareLineEnding",
            Self::MissingFinalDelimiter => "MissingFinalDelimiter",
            Self::MalformedBody => "MalformedBody",
            Self::MalformedHeader => "MalformedHeader",
            Self::AmbiguousHeader => "AmbiguousHeader",
            Self::MissingContentType => "MissingContentType",
            Self::UnparseableContentType => "UnparseableContentType",
            Self::UnsupportedContentType => "UnsupportedContentType",
            Self::NonCanonical => "NonCanonical",
            Self::BodyTooLarge => "BodyTooLarge",
        }
    }
}

impl fmt::Display for RejectCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{category}: {detail}{}", offset.map(|o| format!(" (offset {o})")).unwrap_or_default())]
pub struct RejectReason {
    pub category: RejectCategory,
    pub detail: String,
    pub offset: Option<usize>,
}

impl RejectReason {
    pub fn new(category: RejectCategory, detail: impl Into<String>) -> Self {
        Self {
            category,
            detail: detail.into(),
            offset: None,
        }
    }

    pub fn at(category: RejectCategory, detail: impl Into<String>, offset: usize) -> Self {
        Self {
            category,
            detail: detail.into(),
            offset: Some(offset),
        }
    }

    pub(crate) fn shifted(mut self, base: usize) -> Self {
        self.offset = self.offset.map(|o| o + base);
        self
    }
}

/// Error returned by lenient (framework-model) parsers when nothing usable
/// could be recovered.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("lenient parse failed: {0}")]
pub struct LenientError(pub String);

impl From<RejectReason> for LenientError {
    fn from(r: RejectReason) -> Self {
        LenientError(r.to_string())
    }
}
