//! Normalize-or-reject: rewrite a request into the canonical form of its
//! body codec, or refuse it with a typed reason. Output never fails to
//! re-parse under the strict codec.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::http::{parse_raw_request, HeaderField, LineEnding, RawRequest, MAX_REQUEST_BYTES};
use crate::json::{parse_json_strict, serialize_json_canonical};
use crate::media_type::{parse_media_type, MediaType};
use crate::multipart::{
    canonical_part_headers, parse_multipart_detailed, parse_multipart_strict, serialize_canonical,
};
use crate::reject::{RejectCategory as C, RejectReason};
use crate::xml::{parse_xml_strict, serialize_xml_canonical};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizerMode {
    Normalize,
    /// Refuse anything not already canonical instead of rewriting it.
    RejectOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnknownTypeAction {
    PassThrough,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct NormalizerPolicy {
    pub mode: NormalizerMode,
    pub multipart: bool,
    pub json: bool,
    pub xml: bool,
    pub unknown_content_type: UnknownTypeAction,
    pub recompute_length: bool,
    pub inject_client_headers: bool,
    pub max_body_bytes: usize,
}

impl Default for NormalizerPolicy {
    fn default() -> Self {
        normalize_policy_default()
    }
}

pub fn normalize_policy_default() -> NormalizerPolicy {
    NormalizerPolicy {
        mode: NormalizerMode::Normalize,
        multipart: true,
        json: true,
        xml: true,
        unknown_content_type: UnknownTypeAction::PassThrough,
        recompute_length: true,
        inject_client_headers: false,
        max_body_bytes: MAX_REQUEST_BYTES,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("policy file: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("policy: max-body-bytes must be between 1 and {MAX_REQUEST_BYTES}")]
    BodyLimit,
    #[error("policy: inject-client-headers is not supported; the normalizer never fabricates client headers")]
    ClientHeaders,
}

impl NormalizerPolicy {
    /// Loads a key-value policy file (TOML syntax). Missing keys keep their
    /// defaults.
    pub fn from_toml(text: &str) -> Result<Self, PolicyError> {
        let p: NormalizerPolicy = toml::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.max_body_bytes == 0 || self.max_body_bytes > MAX_REQUEST_BYTES {
            return Err(PolicyError::BodyLimit);
        }
        if self.inject_client_headers {
            return Err(PolicyError::ClientHeaders);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChangeKind {
    CaseFolded,
    WhitespaceCanonicalized,
    QuoteNormalized,
    LineEndingFixed,
    PartContentTypeInserted,
    LengthRecomputed,
    TrailingBytesDropped,
    /// Structural rewrite not captured by the finer kinds: a reserialized
    /// JSON or XML body, a dropped part header, reordered part headers.
    Reserialized,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChangeNote {
    pub kind: ChangeKind,
    pub location: String,
}

impl ChangeNote {
    fn new(kind: ChangeKind, location: impl Into<String>) -> Self {
        Self {
            kind,
            location: location.into(),
        }
    }
}

impl fmt::Display for ChangeNote {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at {}", self.kind, self.location)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NormalizationOutcome {
    Normalized { request: RawRequest, changes: Vec<ChangeNote> },
    Rejected(RejectReason),
    PassedThrough(String),
}

impl NormalizationOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Normalized { .. } => "normalized",
            Self::Rejected(_) => "rejected",
            Self::PassedThrough(_) => "passed-through",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BodyKind {
    Multipart,
    Json,
    Xml,
}

fn body_kind(mt: &MediaType, policy: &NormalizerPolicy) -> Option<BodyKind> {
    if mt.is("multipart", "form-data") && policy.multipart {
        return Some(BodyKind::Multipart);
    }
    let json = mt.is("application", "json") || (mt.type_ == "application" && mt.subtype.ends_with("+json"));
    if json && policy.json {
        return Some(BodyKind::Json);
    }
    let xml = mt.is("application", "xml")
        || mt.is("text", "xml")
        || (mt.type_ == "application" && mt.subtype.ends_with("+xml"));
    if xml && policy.xml {
        return Some(BodyKind::Xml);
    }
    None
}

fn strip(v: &[u8], pred: impl Fn(u8) -> bool) -> Vec<u8> {
    v.iter().copied().filter(|&b| !pred(b)).collect()
}

fn no_ws(v: &[u8]) -> Vec<u8> {
    strip(v, |b| matches!(b, b' ' | b'\t' | b'\r' | b'\n'))
}

fn no_quotes(v: &[u8]) -> Vec<u8> {
    strip(v, |b| b == b'"')
}

/// Notes explaining why `raw` became `canon`, one per kind of difference.
fn classify(raw: &[u8], canon: &[u8], location: &str, out: &mut Vec<ChangeNote>) {
    if raw == canon {
        return;
    }
    let lower = |v: &[u8]| v.to_ascii_lowercase();
    let before = out.len();
    let wq = (no_ws(&no_quotes(raw)), no_ws(&no_quotes(canon)));
    let wl = (no_ws(&lower(raw)), no_ws(&lower(canon)));
    let ql = (no_quotes(&lower(raw)), no_quotes(&lower(canon)));
    let wql_equal = lower(&wq.0) == lower(&wq.1);
    if wql_equal {
        if wq.0 != wq.1 {
            out.push(ChangeNote::new(ChangeKind::CaseFolded, location));
        }
        if wl.0 != wl.1 {
            out.push(ChangeNote::new(ChangeKind::QuoteNormalized, location));
        }
        if ql.0 != ql.1 {
            out.push(ChangeNote::new(ChangeKind::WhitespaceCanonicalized, location));
        }
    }
    if out.len() == before {
        out.push(ChangeNote::new(ChangeKind::Reserialized, location));
    }
}

fn header_bytes(h: &HeaderField) -> Vec<u8> {
    let mut v = h.name.clone();
    v.extend_from_slice(&h.separator);
    v.extend_from_slice(&h.value);
    v
}

/// Request-level checks shared by every content type. Fixes bare-LF line
/// endings in the head and reports them.
fn check_head(req: &mut RawRequest, changes: &mut Vec<ChangeNote>) -> Result<(), RejectReason> {
    let mut fixed = false;
    if req.request_line_ending == LineEnding::Lf {
        req.request_line_ending = LineEnding::Crlf;
        fixed = true;
    }
    if req.head_terminator == LineEnding::Lf {
        req.head_terminator = LineEnding::Crlf;
        fixed = true;
    }
    for (k, h) in req.headers.iter_mut().enumerate() {
        if h.line_ending == LineEnding::Lf {
            h.line_ending = LineEnding::Crlf;
            fixed = true;
        }
        if !h.is_well_formed() {
            let what = if h.separator.is_empty() {
                "header line without colon"
            } else if h.value.contains(&b'\r') {
                "bare CR in header value"
            } else {
                "malformed header field"
            };
            return Err(RejectReason::new(C::MalformedHeader, format!("{what} (header #{})", k + 1)));
        }
    }
    if fixed {
        changes.push(ChangeNote::new(ChangeKind::LineEndingFixed, "head"));
    }
    if req.header("transfer-encoding").is_some() {
        return Err(RejectReason::new(C::MalformedHeader, "Transfer-Encoding is not supported"));
    }
    if req.headers_named("content-type").count() > 1 {
        return Err(RejectReason::new(C::AmbiguousHeader, "multiple Content-Type headers"));
    }
    let lengths: Vec<_> = req.headers_named("content-length").collect();
    if lengths.len() > 1 {
        return Err(RejectReason::new(C::AmbiguousHeader, "multiple Content-Length headers"));
    }
    if let Some(cl) = lengths.first() {
        let v = trim(&cl.value);
        if v.is_empty() || !v.iter().all(u8::is_ascii_digit) {
            return Err(RejectReason::new(C::MalformedHeader, "Content-Length is not a decimal number"));
        }
    }
    Ok(())
}

fn trim(v: &[u8]) -> &[u8] {
    let s = v.iter().position(|b| !matches!(b, b' ' | b'\t')).unwrap_or(v.len());
    let e = v.iter().rposition(|b| !matches!(b, b' ' | b'\t')).map_or(s, |e| e + 1);
    &v[s..e]
}

/// Canonical Content-Type value and body for the given codec, plus notes
/// for body-level differences.
fn canonical_body(
    kind: BodyKind,
    mt: &MediaType,
    body: &[u8],
    changes: &mut Vec<ChangeNote>,
) -> Result<(String, Vec<u8>), RejectReason> {
    match kind {
        BodyKind::Multipart => {
            let (mp, trace) = parse_multipart_detailed(body, mt)?;
            if !trace.preamble.is_empty() {
                changes.push(ChangeNote::new(ChangeKind::TrailingBytesDropped, "body preamble"));
            }
            if !trace.epilogue.is_empty() {
                changes.push(ChangeNote::new(ChangeKind::TrailingBytesDropped, "body epilogue"));
            }
            if trace.padded_delimiters {
                changes.push(ChangeNote::new(ChangeKind::WhitespaceCanonicalized, "delimiter lines"));
            }
            for (k, (part, range)) in mp.parts().iter().zip(&trace.part_headers).enumerate() {
                let location = format!("part {} headers", k + 1);
                let mut canon = canonical_part_headers(part);
                if part.filename().is_some() && part.content_type().is_none() {
                    changes.push(ChangeNote::new(ChangeKind::PartContentTypeInserted, location.clone()));
                    let inserted = b"Content-Type: text/plain\r\n";
                    canon.truncate(canon.len() - inserted.len());
                }
                classify(&body[range.clone()], &canon, &location, changes);
            }
            Ok((mp.content_type(), serialize_canonical(&mp)))
        }
        BodyKind::Json => {
            let v = parse_json_strict(body)?;
            let out = serialize_json_canonical(&v);
            if out != body {
                changes.push(ChangeNote::new(ChangeKind::Reserialized, "body"));
            }
            Ok((mt.canonical(), out))
        }
        BodyKind::Xml => {
            let d = parse_xml_strict(body)?;
            let out = serialize_xml_canonical(&d);
            if out != body {
                changes.push(ChangeNote::new(ChangeKind::Reserialized, "body"));
            }
            Ok((mt.canonical(), out))
        }
    }
}

fn strict_reparse(kind: BodyKind, mt: &MediaType, body: &[u8]) -> Result<Vec<u8>, RejectReason> {
    Ok(match kind {
        BodyKind::Multipart => serialize_canonical(&parse_multipart_strict(body, mt)?),
        BodyKind::Json => serialize_json_canonical(&parse_json_strict(body)?),
        BodyKind::Xml => serialize_xml_canonical(&parse_xml_strict(body)?),
    })
}

pub fn normalize(req: &RawRequest, policy: &NormalizerPolicy) -> NormalizationOutcome {
    match normalize_inner(req, policy) {
        Ok(outcome) => outcome,
        Err(reason) => NormalizationOutcome::Rejected(reason),
    }
}

fn normalize_inner(input: &RawRequest, policy: &NormalizerPolicy) -> Result<NormalizationOutcome, RejectReason> {
    if input.body.len() > policy.max_body_bytes {
        return Err(RejectReason::new(
            C::BodyTooLarge,
            format!("body of {} octets exceeds {}", input.body.len(), policy.max_body_bytes),
        ));
    }
    let mut req = input.clone();
    let mut changes = Vec::new();
    check_head(&mut req, &mut changes)?;

    let Some(ct_index) = req.headers.iter().position(|h| h.is_named("content-type")) else {
        if req.body.is_empty() {
            return Ok(NormalizationOutcome::PassedThrough("no Content-Type and no body".into()));
        }
        return Err(RejectReason::new(C::MissingContentType, "request body without Content-Type"));
    };
    let raw_ct = trim(&req.headers[ct_index].value).to_vec();
    let mt = parse_media_type(&raw_ct).map_err(|e| {
        RejectReason::at(C::UnparseableContentType, format!("Content-Type: {}", e.message), e.offset)
    })?;
    let Some(kind) = body_kind(&mt, policy) else {
        return match policy.unknown_content_type {
            UnknownTypeAction::PassThrough => Ok(NormalizationOutcome::PassedThrough(format!(
                "{} is not normalized",
                mt.essence()
            ))),
            UnknownTypeAction::Reject => Err(RejectReason::new(
                C::UnsupportedContentType,
                format!("{} is not accepted", mt.essence()),
            )),
        };
    };

    let (ct_value, body) = canonical_body(kind, &mt, &req.body, &mut changes)?;
    let ct_header = HeaderField::new("Content-Type", &ct_value);
    classify(&header_bytes(&req.headers[ct_index]), &header_bytes(&ct_header), "header Content-Type", &mut changes);
    req.headers[ct_index] = ct_header;
    req.body = body;

    if policy.recompute_length {
        let len = req.body.len().to_string();
        match req.headers.iter().position(|h| h.is_named("content-length")) {
            Some(k) => {
                let canon = HeaderField::new("Content-Length", &len);
                let old = &req.headers[k];
                if old.value != canon.value {
                    changes.push(ChangeNote::new(ChangeKind::LengthRecomputed, "header Content-Length"));
                }
                let mut old_with_new_value = old.name.clone();
                old_with_new_value.extend_from_slice(&old.separator);
                old_with_new_value.extend_from_slice(len.as_bytes());
                classify(&old_with_new_value, &header_bytes(&canon), "header Content-Length", &mut changes);
                req.headers[k] = canon;
            }
            None if !req.body.is_empty() => {
                req.headers.push(HeaderField::new("Content-Length", &len));
                changes.push(ChangeNote::new(ChangeKind::LengthRecomputed, "header Content-Length"));
            }
            None => {}
        }
    }

    if policy.mode == NormalizerMode::RejectOnly && !changes.is_empty() {
        let kinds: Vec<String> = changes.iter().map(|c| format!("{:?}", c.kind)).collect();
        return Err(RejectReason::new(
            C::NonCanonical,
            format!("request is not canonical ({})", kinds.join(", ")),
        ));
    }

    self_check(&req, kind)?;
    changes.sort();
    changes.dedup();
    Ok(NormalizationOutcome::Normalized { request: req, changes })
}

/// Re-parses the emitted request from its wire bytes and confirms the strict
/// codec yields the same canonical body.
fn self_check(req: &RawRequest, kind: BodyKind) -> Result<(), RejectReason> {
    let fail = |what: &str| RejectReason::new(C::NonCanonical, format!("normalized output failed re-parse: {what}"));
    let wire = req.serialize(false);
    let again = parse_raw_request(&wire).map_err(|e| fail(&e.message))?;
    let ct = again.content_type().ok_or_else(|| fail("Content-Type lost"))?;
    let mt = parse_media_type(ct).map_err(|e| fail(e.message))?;
    let canon = strict_reparse(kind, &mt, &again.body).map_err(|e| fail(&e.to_string()))?;
    if canon != again.body {
        return Err(fail("body is not a fixed point"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MESSY_UPLOAD: &[u8] = b"POST / HTTP/1.1\r\nHost: target.com\r\nContent-Type: multipart/FoRm-dAtA; boundary=\"1234\"\r\nContent-Length: 90\r\n\r\n--1234\r\nContent-DISPOSITION:\tform-data;name=\"files\";\t filename=\"ab.txt\"\r\n\r\nFoo\r\n--1234--\r\n";

    const CANONICAL_UPLOAD: &[u8] = b"POST / HTTP/1.1\r\nHost: target.com\r\nContent-Type: multipart/form-data; boundary=1234\r\nContent-Length: 114\r\n\r\n--1234\r\nContent-Disposition: form-data; name=\"files\"; filename=\"ab.txt\"\r\nContent-Type: text/plain\r\n\r\nFoo\r\n--1234--";

    fn kinds(changes: &[ChangeNote]) -> Vec<ChangeKind> {
        let mut k: Vec<_> = changes.iter().map(|c| c.kind).collect();
        k.dedup();
        k
    }

    #[test]
    fn messy_upload_becomes_canonical() {
        let req = parse_raw_request(MESSY_UPLOAD).unwrap();
        assert_eq!(req.body.len(), 90);
        let NormalizationOutcome::Normalized { request, changes } = normalize(&req, &normalize_policy_default()) else {
            panic!("expected normalization");
        };
        assert_eq!(request.serialize(false), CANONICAL_UPLOAD);
        let k = kinds(&changes);
        for want in [
            ChangeKind::CaseFolded,
            ChangeKind::WhitespaceCanonicalized,
            ChangeKind::QuoteNormalized,
            ChangeKind::PartContentTypeInserted,
            ChangeKind::LengthRecomputed,
            ChangeKind::TrailingBytesDropped,
        ] {
            assert!(k.contains(&want), "missing {want:?} in {changes:?}");
        }
    }

    #[test]
    fn canonical_request_is_fixed_point() {
        let req = parse_raw_request(CANONICAL_UPLOAD).unwrap();
        let NormalizationOutcome::Normalized { request, changes } = normalize(&req, &normalize_policy_default()) else {
            panic!()
        };
        assert!(changes.is_empty(), "{changes:?}");
        assert_eq!(request, req);
    }

    #[test]
    fn reject_only_refuses_messy_upload() {
        let policy = NormalizerPolicy {
            mode: NormalizerMode::RejectOnly,
            ..normalize_policy_default()
        };
        let out = normalize(&parse_raw_request(MESSY_UPLOAD).unwrap(), &policy);
        assert!(matches!(out, NormalizationOutcome::Rejected(r) if r.category == C::NonCanonical));
        let out = normalize(&parse_raw_request(CANONICAL_UPLOAD).unwrap(), &policy);
        assert!(matches!(out, NormalizationOutcome::Normalized { .. }));
    }

    #[test]
    fn continuation_rejected() {
        let req = RawRequest::new("POST", "/")
            .with_header("Host", "target.com")
            .with_header(
                "Content-Type",
                "multipart/form-data; boundary=fake-boundary;boundary*0=real-;boundary*1=boundary",
            )
            .with_body(b"--real-boundary\r\nContent-Disposition: form-data; name=\"id\"\r\n\r\nx\r\n--real-boundary--".to_vec());
        let out = normalize(&req, &normalize_policy_default());
        assert!(matches!(out, NormalizationOutcome::Rejected(r) if r.category == C::DeprecatedFeature));
    }

    #[test]
    fn unknown_types_follow_policy() {
        let req = RawRequest::new("POST", "/").with_header("Content-Type", "text/plain").with_body("hi");
        assert!(matches!(
            normalize(&req, &normalize_policy_default()),
            NormalizationOutcome::PassedThrough(_)
        ));
        let policy = NormalizerPolicy {
            unknown_content_type: UnknownTypeAction::Reject,
            ..normalize_policy_default()
        };
        assert!(matches!(
            normalize(&req, &policy),
            NormalizationOutcome::Rejected(r) if r.category == C::UnsupportedContentType
        ));
    }

    #[test]
    fn header_level_rejections() {
        let body_req = |ct: &[&str]| {
            let mut r = RawRequest::new("POST", "/").with_body("{}");
            for c in ct {
                r = r.with_header("Content-Type", c);
            }
            r
        };
        let cat = |r: &RawRequest| match normalize(r, &normalize_policy_default()) {
            NormalizationOutcome::Rejected(reason) => Some(reason.category),
            _ => None,
        };
        assert_eq!(cat(&body_req(&[])), Some(C::MissingContentType));
        assert_eq!(cat(&body_req(&["application/json", "application/json"])), Some(C::AmbiguousHeader));
        assert_eq!(cat(&body_req(&["application json"])), Some(C::UnparseableContentType));
        assert_eq!(
            cat(&body_req(&["application/json"]).with_header("Transfer-Encoding", "chunked")),
            Some(C::MalformedHeader)
        );
        assert_eq!(
            cat(&body_req(&["application/json"]).with_header("Content-Length", "1").with_header("Content-Length", "2")),
            Some(C::AmbiguousHeader)
        );
        let empty = RawRequest::new("GET", "/");
        assert!(matches!(normalize(&empty, &normalize_policy_default()), NormalizationOutcome::PassedThrough(_)));
    }

    #[test]
    fn json_and_xml_reserialized() {
        let req = RawRequest::new("POST", "/")
            .with_header("Content-Type", "Application/JSON")
            .with_header("Content-Length", "20")
            .with_body(br#"{ "field1" : "v" }"#.to_vec());
        let NormalizationOutcome::Normalized { request, changes } = normalize(&req, &normalize_policy_default()) else {
            panic!()
        };
        assert_eq!(request.body, br#"{"field1":"v"}"#);
        assert_eq!(request.content_type(), Some(&b"application/json"[..]));
        assert!(kinds(&changes).contains(&ChangeKind::Reserialized));

        let req = RawRequest::new("POST", "/")
            .with_header("Content-Type", "application/xml")
            .with_body(b"<?xml version=\"1.0\"?><a> <f>x</f> </a>".to_vec());
        let NormalizationOutcome::Normalized { request, .. } = normalize(&req, &normalize_policy_default()) else {
            panic!()
        };
        assert_eq!(request.body, b"<a><f>x</f></a>");
        assert_eq!(request.header("content-length").unwrap().value, b"15");
    }

    #[test]
    fn bare_lf_head_is_fixed() {
        let raw = b"POST / HTTP/1.1\nContent-Type: application/json\nContent-Length: 2\n\n{}";
        let NormalizationOutcome::Normalized { request, changes } =
            normalize(&parse_raw_request(raw).unwrap(), &normalize_policy_default())
        else {
            panic!()
        };
        assert_eq!(request.serialize(false), b"POST / HTTP/1.1\r\nContent-Type: application/json\r\nContent-Length: 2\r\n\r\n{}");
        assert_eq!(kinds(&changes), vec![ChangeKind::LineEndingFixed]);
    }

    #[test]
    fn policy_file() {
        let p = NormalizerPolicy::from_toml("mode = \"reject-only\"\njson = false\nmax-body-bytes = 1024\n").unwrap();
        assert_eq!(p.mode, NormalizerMode::RejectOnly);
        assert!(!p.json && p.xml);
        assert!(NormalizerPolicy::from_toml("inject-client-headers = true").is_err());
        assert!(NormalizerPolicy::from_toml("max-body-bytes = 0").is_err());
        assert!(NormalizerPolicy::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn oversized_body_rejected() {
        let policy = NormalizerPolicy {
            max_body_bytes: 4,
            ..normalize_policy_default()
        };
        let req = RawRequest::new("POST", "/").with_header("Content-Type", "application/json").with_body("[1,2,3]");
        assert!(matches!(normalize(&req, &policy), NormalizationOutcome::Rejected(r) if r.category == C::BodyTooLarge));
    }
}
