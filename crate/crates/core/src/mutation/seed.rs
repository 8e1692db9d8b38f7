//! Seed requests: canonical, well-formed carriers of one attack payload.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::ContentKind;
use crate::http::RawRequest;
use crate::media_type::parse_media_type;
use crate::multipart::{canonical_part_headers, parse_multipart_strict, validate_boundary};

pub const XSS_PAYLOAD: &[u8] = b"<script>alert(document.cookie)</script>";
pub const SQLI_PAYLOAD: &[u8] = b"DROP TABLE users";

/// Even corpus indices carry the script payload, odd ones the SQL one.
pub fn payload_for_index(i: usize) -> &'static [u8] {
    if i.is_multiple_of(2) {
        XSS_PAYLOAD
    } else {
        SQLI_PAYLOAD
    }
}

/// Presentation details of a seed that some mutation classes depend on.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct SeedLayout {
    pub host: String,
    pub target: String,
    pub boundary: String,
    pub disposition_header: String,
    pub part_content_type: Option<String>,
    /// Split the boundary into `boundary*0`/`boundary*1` at this index.
    pub continuation_split: Option<usize>,
    /// Wrapping element; `None` makes the payload field the root.
    pub xml_root: Option<String>,
    pub doctype: bool,
    /// `{ "a": "b" }` instead of `{"a":"b"}`.
    pub json_spaced: bool,
}

impl Default for SeedLayout {
    fn default() -> Self {
        Self {
            host: "victim.com".into(),
            target: "/".into(),
            boundary: "1234".into(),
            disposition_header: "Content-Disposition".into(),
            part_content_type: None,
            continuation_split: None,
            xml_root: Some("root".into()),
            doctype: false,
            json_spaced: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SeedSpec {
    pub content_kind: ContentKind,
    #[serde(with = "super::hex_bytes")]
    pub payload: Vec<u8>,
    pub field_name: String,
    pub extra_benign_fields: usize,
    #[serde(default)]
    pub layout: SeedLayout,
}

impl SeedSpec {
    pub fn new(content_kind: ContentKind, payload: &[u8]) -> Self {
        Self {
            content_kind,
            payload: payload.to_vec(),
            field_name: "field1".into(),
            extra_benign_fields: 0,
            layout: SeedLayout::default(),
        }
    }

    pub fn with_layout(mut self, layout: SeedLayout) -> Self {
        self.layout = layout;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SeedError {
    #[error("payload is empty")]
    EmptyPayload,
    #[error("payload cannot be embedded verbatim: {0}")]
    PayloadNotEmbeddable(&'static str),
    #[error("payload occurs {0} times in the seed instead of once")]
    PayloadNotUnique(usize),
    #[error("invalid seed layout: {0}")]
    Layout(String),
    #[error("request is not a well-formed multipart seed: {0}")]
    NotMultipart(String),
}

fn count(haystack: &[u8], needle: &[u8]) -> usize {
    haystack.windows(needle.len()).filter(|w| *w == needle).count()
}

fn multipart_part(layout: &SeedLayout, dash: &str, name: &str, part_type: Option<&str>, value: &[u8]) -> Vec<u8> {
    let mut out = format!("{dash}\r\n{}: form-data; name=\"{name}\"\r\n", layout.disposition_header).into_bytes();
    if let Some(t) = part_type {
        out.extend_from_slice(format!("Content-Type: {t}\r\n").as_bytes());
    }
    out.extend_from_slice(b"\r\n");
    out.extend_from_slice(value);
    out.extend_from_slice(b"\r\n");
    out
}

fn multipart_content_type(layout: &SeedLayout) -> Result<String, SeedError> {
    let b = &layout.boundary;
    validate_boundary(b.as_bytes()).map_err(|e| SeedError::Layout(e.to_string()))?;
    match layout.continuation_split {
        None => Ok(format!("multipart/form-data; boundary={b}")),
        Some(k) if k > 0 && k < b.len() && b.is_char_boundary(k) => Ok(format!(
            "multipart/form-data; boundary*0={};boundary*1={}",
            &b[..k],
            &b[k..]
        )),
        Some(k) => Err(SeedError::Layout(format!("cannot split boundary `{b}` at {k}"))),
    }
}

fn multipart_body(spec: &SeedSpec) -> Result<Vec<u8>, SeedError> {
    let layout = &spec.layout;
    let dash = format!("--{}", layout.boundary);
    let mut delimiter = b"\r\n".to_vec();
    delimiter.extend_from_slice(dash.as_bytes());
    let mut probe = b"\r\n".to_vec();
    probe.extend_from_slice(&spec.payload);
    if probe.windows(delimiter.len()).any(|w| w == delimiter) {
        return Err(SeedError::PayloadNotEmbeddable("contains the multipart delimiter"));
    }
    let mut body = Vec::new();
    for k in 1..=spec.extra_benign_fields {
        body.extend(multipart_part(layout, &dash, &format!("extra{k}"), None, format!("value{k}").as_bytes()));
    }
    body.extend(multipart_part(
        layout,
        &dash,
        &spec.field_name,
        layout.part_content_type.as_deref(),
        &spec.payload,
    ));
    body.extend_from_slice(dash.as_bytes());
    body.extend_from_slice(b"--");
    Ok(body)
}

fn json_body(spec: &SeedSpec) -> Result<Vec<u8>, SeedError> {
    if spec.payload.iter().any(|&b| b == b'"' || b == b'\\' || b < 0x20) {
        return Err(SeedError::PayloadNotEmbeddable("needs JSON escaping"));
    }
    let (open, sep, comma, close) = if spec.layout.json_spaced {
        ("{ ", "\": \"", ", ", " }")
    } else {
        ("{", "\":\"", ",", "}")
    };
    let mut body = open.as_bytes().to_vec();
    for k in 1..=spec.extra_benign_fields {
        body.extend_from_slice(format!("\"extra{k}{sep}value{k}\"{comma}").as_bytes());
    }
    body.extend_from_slice(format!("\"{}{sep}", spec.field_name).as_bytes());
    body.extend_from_slice(&spec.payload);
    body.push(b'"');
    body.extend_from_slice(close.as_bytes());
    Ok(body)
}

fn xml_body(spec: &SeedSpec) -> Result<Vec<u8>, SeedError> {
    if std::str::from_utf8(&spec.payload).is_err() {
        return Err(SeedError::PayloadNotEmbeddable("not UTF-8"));
    }
    let layout = &spec.layout;
    let field = &spec.field_name;
    let mut text = Vec::new();
    if spec.payload.contains(&b'<') || spec.payload.contains(&b'&') {
        if spec.payload.windows(3).any(|w| w == b"]]>") {
            return Err(SeedError::PayloadNotEmbeddable("contains a CDATA terminator"));
        }
        text.extend_from_slice(b"<![CDATA[");
        text.extend_from_slice(&spec.payload);
        text.extend_from_slice(b"]]>");
    } else {
        text.extend_from_slice(&spec.payload);
    }
    let mut field_xml = format!("<{field}>").into_bytes();
    field_xml.extend(text);
    field_xml.extend_from_slice(format!("</{field}>").as_bytes());

    let root = layout.xml_root.clone();
    let mut body = Vec::new();
    if layout.doctype {
        let name = root.as_deref().unwrap_or(field);
        body.extend_from_slice(format!("<!DOCTYPE {name} [<!ELEMENT {name} ANY>]>").as_bytes());
    }
    match root {
        Some(root) => {
            body.extend_from_slice(format!("<{root}>").as_bytes());
            for k in 1..=spec.extra_benign_fields {
                body.extend_from_slice(format!("<extra{k}>value{k}</extra{k}>").as_bytes());
            }
            body.extend(field_xml);
            body.extend_from_slice(format!("</{root}>").as_bytes());
        }
        None if spec.extra_benign_fields > 0 => {
            return Err(SeedError::Layout("extra fields need a wrapping root element".into()));
        }
        None => body.extend(field_xml),
    }
    Ok(body)
}

pub fn generate_seed(spec: &SeedSpec) -> Result<RawRequest, SeedError> {
    if spec.payload.is_empty() {
        return Err(SeedError::EmptyPayload);
    }
    let (content_type, body) = match spec.content_kind {
        ContentKind::Multipart => (multipart_content_type(&spec.layout)?, multipart_body(spec)?),
        ContentKind::Json => (ContentKind::Json.media_type().to_string(), json_body(spec)?),
        ContentKind::Xml => (ContentKind::Xml.media_type().to_string(), xml_body(spec)?),
    };
    let req = RawRequest::new("POST", &spec.layout.target)
        .with_header("Host", &spec.layout.host)
        .with_header("Content-Length", body.len().to_string())
        .with_header("Content-Type", content_type)
        .with_body(body);
    let n = count(&req.serialize(false), &spec.payload);
    if n != 1 {
        return Err(SeedError::PayloadNotUnique(n));
    }
    Ok(req)
}

/// Wraps a multipart seed in a decoy form framed by `fake`, declared through
/// a plain `boundary=fake` parameter, and moves the original parts under
/// `real` declared only through `boundary*0`/`boundary*1`.
pub fn rewrite_to_continuation(req: &RawRequest, real: &str, fake: &str) -> Result<RawRequest, SeedError> {
    let ct = req
        .content_type()
        .ok_or_else(|| SeedError::NotMultipart("no Content-Type".into()))?;
    let mt = parse_media_type(ct).map_err(|e| SeedError::NotMultipart(e.to_string()))?;
    let original = parse_multipart_strict(&req.body, &mt).map_err(|e| SeedError::NotMultipart(e.to_string()))?;
    for b in [real, fake] {
        validate_boundary(b.as_bytes()).map_err(|e| SeedError::Layout(e.to_string()))?;
    }
    if real == fake || real.len() < 2 {
        return Err(SeedError::Layout("real boundary must differ from the decoy and span two segments".into()));
    }
    let split = real.find('-').map(|k| k + 1).filter(|&k| k < real.len()).unwrap_or(real.len() / 2);

    let mut body = format!(
        "--{fake}\r\nContent-Disposition: form-data; name=\"field1\"\r\n\r\nvalue1\r\n--{fake}--\r\n"
    )
    .into_bytes();
    let new_dash = format!("--{real}");
    for part in original.parts() {
        body.extend_from_slice(new_dash.as_bytes());
        body.extend_from_slice(b"\r\n");
        body.extend_from_slice(&canonical_part_headers(part));
        body.extend_from_slice(b"\r\n");
        body.extend_from_slice(part.body());
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(new_dash.as_bytes());
    body.extend_from_slice(b"--");

    let mut out = req.clone();
    for h in out.headers.iter_mut().filter(|h| h.is_named("content-type")) {
        h.value = format!(
            "multipart/form-data; boundary={fake};boundary*0={};boundary*1={}",
            &real[..split],
            &real[split..]
        )
        .into_bytes();
    }
    out.body = body;
    out.recompute_content_length();
    Ok(out)
}

/// Hex SHA-256 of the serialized seed.
pub fn seed_hash(req: &RawRequest) -> String {
    hex::encode(Sha256::digest(req.serialize(false)))
}

#[cfg(test)]
mod tests {
    use super::*;

    const XSS_FORM: &[u8] = b"POST / HTTP/1.1\r\nHost: victim.com\r\nContent-Length: 106\r\nContent-Type: multipart/form-data; boundary=1234\r\n\r\n--1234\r\nContent-Disposition: form-data; name=\"field1\"\r\n\r\n<script>alert(document.cookie)</script>\r\n--1234--";

    #[test]
    fn default_multipart_seed_is_the_reference_request() {
        let seed = generate_seed(&SeedSpec::new(ContentKind::Multipart, XSS_PAYLOAD)).unwrap();
        assert_eq!(seed.serialize(false), XSS_FORM);
    }

    #[test]
    fn json_and_xml_seeds() {
        let json = generate_seed(&SeedSpec::new(ContentKind::Json, XSS_PAYLOAD)).unwrap();
        assert_eq!(json.body, b"{\"field1\":\"<script>alert(document.cookie)</script>\"}");
        let xml = generate_seed(&SeedSpec::new(ContentKind::Xml, SQLI_PAYLOAD)).unwrap();
        assert_eq!(xml.body, b"<root><field1>DROP TABLE users</field1></root>");
        let xml = generate_seed(&SeedSpec::new(ContentKind::Xml, XSS_PAYLOAD)).unwrap();
        assert_eq!(
            xml.body,
            b"<root><field1><![CDATA[<script>alert(document.cookie)</script>]]></field1></root>"
        );
    }

    #[test]
    fn seeds_parse_strictly() {
        use crate::json::parse_json_strict;
        use crate::xml::parse_xml_strict;
        for payload in [XSS_PAYLOAD, SQLI_PAYLOAD] {
            for extra in 0..3 {
                let mut spec = SeedSpec::new(ContentKind::Multipart, payload);
                spec.extra_benign_fields = extra;
                let mp = generate_seed(&spec).unwrap();
                let mt = parse_media_type(mp.content_type().unwrap()).unwrap();
                assert_eq!(parse_multipart_strict(&mp.body, &mt).unwrap().parts().len(), extra + 1);
                spec.content_kind = ContentKind::Json;
                parse_json_strict(&generate_seed(&spec).unwrap().body).unwrap();
                spec.content_kind = ContentKind::Xml;
                parse_xml_strict(&generate_seed(&spec).unwrap().body).unwrap();
            }
        }
    }

    #[test]
    fn continuation_layout() {
        let mut spec = SeedSpec::new(ContentKind::Multipart, XSS_PAYLOAD);
        spec.layout.boundary = "real".into();
        spec.layout.continuation_split = Some(2);
        let seed = generate_seed(&spec).unwrap();
        assert_eq!(seed.content_type().unwrap(), b"multipart/form-data; boundary*0=re;boundary*1=al");
        spec.layout.continuation_split = Some(4);
        assert!(matches!(generate_seed(&spec), Err(SeedError::Layout(_))));
    }

    #[test]
    fn unembeddable_payloads() {
        assert_eq!(
            generate_seed(&SeedSpec::new(ContentKind::Json, b"")),
            Err(SeedError::EmptyPayload)
        );
        assert!(matches!(
            generate_seed(&SeedSpec::new(ContentKind::Json, b"a\"b")),
            Err(SeedError::PayloadNotEmbeddable(_))
        ));
        assert!(matches!(
            generate_seed(&SeedSpec::new(ContentKind::Multipart, b"1234")),
            Err(SeedError::PayloadNotUnique(_))
        ));
    }

    #[test]
    fn continuation_rewrite_hides_the_payload_part() {
        let seed = generate_seed(&SeedSpec::new(ContentKind::Multipart, XSS_PAYLOAD)).unwrap();
        let rewritten = rewrite_to_continuation(&seed, "real-boundary", "fake-boundary").unwrap();
        assert_eq!(
            rewritten.content_type().unwrap(),
            b"multipart/form-data; boundary=fake-boundary;boundary*0=real-;boundary*1=boundary"
        );
        assert!(rewritten.body.starts_with(b"--fake-boundary\r\n"));
        assert!(rewritten.body.ends_with(b"--real-boundary--"));
        assert_eq!(
            rewritten.header("content-length").unwrap().value,
            rewritten.body.len().to_string().into_bytes()
        );
        let mt = parse_media_type(rewritten.content_type().unwrap()).unwrap();
        assert!(parse_multipart_strict(&rewritten.body, &mt).is_err());
    }
}
