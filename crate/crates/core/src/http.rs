//! Byte-faithful HTTP/1.1 request model.
//!
//! Every octet of a parsed request lands in exactly one field, so
//! `serialize(parse(x), false) == x` for anything that parses. Malformed
//! header lines (no colon, control bytes in the name, a stray CR before the
//! line ending) are kept verbatim because the mutation engine produces them.

use std::fmt;

use thiserror::Error;

pub const MAX_REQUEST_BYTES: usize = 16 * 1024 * 1024;
pub const MAX_HEADERS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LineEnding {
    Crlf,
    Lf,
}

impl LineEnding {
    pub fn as_bytes(self) -> &'static [u8] {
        match self {
            LineEnding::Crlf => b"\r\n",
            LineEnding::Lf => b"\n",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HttpVersion {
    Http11,
}

impl HttpVersion {
    pub fn as_bytes(self) -> &'static [u8] {
        b"HTTP/1.1"
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HeaderField {
    pub name: Vec<u8>,
    /// Bytes between name and value: `:` plus any SP/HTAB. Empty when the
    /// line carries no colon at all.
    pub separator: Vec<u8>,
    pub value: Vec<u8>,
    pub line_ending: LineEnding,
}

impl HeaderField {
    pub fn new(name: impl AsRef<[u8]>, value: impl AsRef<[u8]>) -> Self {
        Self {
            name: name.as_ref().to_vec(),
            separator: b": ".to_vec(),
            value: value.as_ref().to_vec(),
            line_ending: LineEnding::Crlf,
        }
    }

    pub fn is_named(&self, name: &str) -> bool {
        self.name.eq_ignore_ascii_case(name.as_bytes())
    }

    /// True when the line is a syntactically valid `token ":" OWS value`.
    pub fn is_well_formed(&self) -> bool {
        !self.name.is_empty()
            && self.name.iter().all(|&b| is_tchar(b))
            && self.separator.first() == Some(&b':')
            && self.line_ending == LineEnding::Crlf
            && self
                .value
                .iter()
                .all(|&b| b == b'\t' || (b >= 0x20 && b != 0x7f))
    }

    fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.name);
        out.extend_from_slice(&self.separator);
        out.extend_from_slice(&self.value);
        out.extend_from_slice(self.line_ending.as_bytes());
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawRequest {
    pub method: Vec<u8>,
    pub target: Vec<u8>,
    pub version: HttpVersion,
    pub request_line_ending: LineEnding,
    pub headers: Vec<HeaderField>,
    /// Ending of the empty line that closes the header block.
    pub head_terminator: LineEnding,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("structural error at offset {offset}: {message}")]
pub struct StructuralError {
    pub offset: usize,
    pub message: String,
}

impl StructuralError {
    fn new(offset: usize, message: impl Into<String>) -> Self {
        Self {
            offset,
            message: message.into(),
        }
    }
}

pub fn is_tchar(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b"!#$%&'*+-.^_`|~".contains(&b)
}

/// Returns `(line_without_ending, ending, index_after_line)` for the line
/// starting at `start`, or `None` when no LF follows.
fn next_line(input: &[u8], start: usize) -> Option<(&[u8], LineEnding, usize)> {
    let lf = input[start..].iter().position(|&b| b == b'\n')? + start;
    if lf > start && input[lf - 1] == b'\r' {
        Some((&input[start..lf - 1], LineEnding::Crlf, lf + 1))
    } else {
        Some((&input[start..lf], LineEnding::Lf, lf + 1))
    }
}

/// Index just past the empty line terminating the header block, if present.
pub fn find_head_end(input: &[u8]) -> Option<usize> {
    let mut pos = 0;
    let mut first = true;
    loop {
        let (line, _, next) = next_line(input, pos)?;
        if line.is_empty() && !first {
            return Some(next);
        }
        first = false;
        pos = next;
    }
}

fn parse_header_line(line: &[u8], ending: LineEnding) -> HeaderField {
    match line.iter().position(|&b| b == b':') {
        Some(colon) => {
            let mut sep_end = colon + 1;
            while sep_end < line.len() && matches!(line[sep_end], b' ' | b'\t') {
                sep_end += 1;
            }
            HeaderField {
                name: line[..colon].to_vec(),
                separator: line[colon..sep_end].to_vec(),
                value: line[sep_end..].to_vec(),
                line_ending: ending,
            }
        }
        None => HeaderField {
            name: line.to_vec(),
            separator: Vec::new(),
            value: Vec::new(),
            line_ending: ending,
        },
    }
}

pub fn parse_raw_request(input: &[u8]) -> Result<RawRequest, StructuralError> {
    if input.is_empty() {
        return Err(StructuralError::new(0, "empty input"));
    }
    if input.len() > MAX_REQUEST_BYTES {
        return Err(StructuralError::new(MAX_REQUEST_BYTES, "request exceeds 16 MiB"));
    }
    let (line, request_line_ending, mut pos) =
        next_line(input, 0).ok_or_else(|| StructuralError::new(0, "no request line"))?;
    let mut parts = line.split(|&b| b == b' ');
    let (method, target, version) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
        (Some(m), Some(t), Some(v), None) => (m, t, v),
        _ => return Err(StructuralError::new(0, "request line is not `method SP target SP version`")),
    };
    if method.is_empty() || !method.iter().all(|&b| is_tchar(b)) {
        return Err(StructuralError::new(0, "method is not a token"));
    }
    if target.is_empty() {
        return Err(StructuralError::new(method.len() + 1, "empty request target"));
    }
    if version != b"HTTP/1.1" {
        return Err(StructuralError::new(
            method.len() + target.len() + 2,
            "unsupported HTTP version",
        ));
    }

    let mut headers = Vec::new();
    loop {
        let (line, ending, next) = next_line(input, pos)
            .ok_or_else(|| StructuralError::new(pos, "no header/body separator"))?;
        if line.is_empty() {
            return Ok(RawRequest {
                method: method.to_vec(),
                target: target.to_vec(),
                version: HttpVersion::Http11,
                request_line_ending,
                headers,
                head_terminator: ending,
                body: input[next..].to_vec(),
            });
        }
        if headers.len() == MAX_HEADERS {
            return Err(StructuralError::new(pos, "more than 256 header fields"));
        }
        headers.push(parse_header_line(line, ending));
        pos = next;
    }
}

/// Head-reading quirks a receiving server may exhibit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct HeadTolerance {
    /// A CR not followed by LF ends a header line.
    pub bare_cr_line_ending: bool,
    /// An empty line followed by something shaped like `token ":"` does not
    /// end the header block.
    pub blank_line_before_header: bool,
}

/// Header block as seen by a tolerant reader. Names and values are trimmed
/// of surrounding whitespace; lines without a colon are dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TolerantHead {
    pub headers: Vec<(Vec<u8>, Vec<u8>)>,
    pub body: Vec<u8>,
}

impl TolerantHead {
    pub fn header(&self, name: &str) -> Option<&[u8]> {
        self.headers
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name.as_bytes()))
            .map(|(_, v)| v.as_slice())
    }
}

fn tolerant_line(input: &[u8], start: usize, bare_cr: bool) -> Option<(&[u8], usize)> {
    let mut i = start;
    while i < input.len() {
        match input[i] {
            b'\n' => {
                let end = if i > start && input[i - 1] == b'\r' { i - 1 } else { i };
                return Some((&input[start..end], i + 1));
            }
            b'\r' if bare_cr && input.get(i + 1) != Some(&b'\n') => {
                return Some((&input[start..i], i + 1));
            }
            _ => i += 1,
        }
    }
    None
}

fn looks_like_header(line: &[u8]) -> bool {
    match line.iter().position(|&b| b == b':') {
        Some(colon) => colon > 0 && line[..colon].iter().all(|&b| is_tchar(b)),
        None => false,
    }
}

/// Reads the request head with the given tolerances, skipping the request
/// line. The body is everything after the terminating empty line.
pub fn read_head_tolerant(input: &[u8], tolerance: HeadTolerance) -> Result<TolerantHead, StructuralError> {
    let bare_cr = tolerance.bare_cr_line_ending;
    let (_, mut pos) =
        tolerant_line(input, 0, bare_cr).ok_or_else(|| StructuralError::new(0, "no request line"))?;
    let mut headers = Vec::new();
    loop {
        let (line, next) = tolerant_line(input, pos, bare_cr)
            .ok_or_else(|| StructuralError::new(pos, "no header/body separator"))?;
        if line.is_empty() {
            let resumes = tolerance.blank_line_before_header
                && !headers.is_empty()
                && tolerant_line(input, next, bare_cr).is_some_and(|(l, _)| looks_like_header(l));
            if !resumes {
                return Ok(TolerantHead {
                    headers,
                    body: input[next..].to_vec(),
                });
            }
        } else if let Some(colon) = line.iter().position(|&b| b == b':') {
            if headers.len() == MAX_HEADERS {
                return Err(StructuralError::new(pos, "more than 256 header fields"));
            }
            headers.push((line[..colon].trim_ascii().to_vec(), line[colon + 1..].trim_ascii().to_vec()));
        }
        pos = next;
    }
}

impl RawRequest {
    pub fn new(method: &str, target: &str) -> Self {
        Self {
            method: method.as_bytes().to_vec(),
            target: target.as_bytes().to_vec(),
            version: HttpVersion::Http11,
            request_line_ending: LineEnding::Crlf,
            headers: Vec::new(),
            head_terminator: LineEnding::Crlf,
            body: Vec::new(),
        }
    }

    pub fn with_header(mut self, name: &str, value: impl AsRef<[u8]>) -> Self {
        self.headers.push(HeaderField::new(name, value));
        self
    }

    pub fn with_body(mut self, body: impl Into<Vec<u8>>) -> Self {
        self.body = body.into();
        self
    }

    /// First header whose name matches case-insensitively.
    pub fn header(&self, name: &str) -> Option<&HeaderField> {
        self.headers.iter().find(|h| h.is_named(name))
    }

    pub fn headers_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a HeaderField> + 'a {
        self.headers.iter().filter(move |h| h.is_named(name))
    }

    pub fn content_type(&self) -> Option<&[u8]> {
        self.header("content-type").map(|h| h.value.as_slice())
    }

    /// Rewrites every Content-Length header to the stored body length.
    /// Returns true when any byte changed.
    pub fn recompute_content_length(&mut self) -> bool {
        let len = self.body.len().to_string().into_bytes();
        let mut changed = false;
        for h in self.headers.iter_mut().filter(|h| h.is_named("content-length")) {
            if h.value != len {
                h.value = len.clone();
                changed = true;
            }
        }
        changed
    }

    pub fn serialize(&self, recompute_length: bool) -> Vec<u8> {
        if recompute_length {
            let mut copy = self.clone();
            copy.recompute_content_length();
            return copy.serialize(false);
        }
        let mut out = Vec::with_capacity(self.body.len() + 256);
        out.extend_from_slice(&self.method);
        out.push(b' ');
        out.extend_from_slice(&self.target);
        out.push(b' ');
        out.extend_from_slice(self.version.as_bytes());
        out.extend_from_slice(self.request_line_ending.as_bytes());
        for h in &self.headers {
            h.write_to(&mut out);
        }
        out.extend_from_slice(self.head_terminator.as_bytes());
        out.extend_from_slice(&self.body);
        out
    }

    /// Length of the serialized request line plus header block.
    pub fn head_len(&self) -> usize {
        self.serialize(false).len() - self.body.len()
    }

    /// Query-string parameters of the request target, percent-decoded.
    pub fn url_parameters(&self) -> Vec<(Vec<u8>, Vec<u8>)> {
        let Some(q) = self.target.iter().position(|&b| b == b'?') else {
            return Vec::new();
        };
        self.target[q + 1..]
            .split(|&b| b == b'&')
            .filter(|p| !p.is_empty())
            .map(|pair| match pair.iter().position(|&b| b == b'=') {
                Some(eq) => (percent_decode(&pair[..eq]), percent_decode(&pair[eq + 1..])),
                None => (percent_decode(pair), Vec::new()),
            })
            .collect()
    }
}

impl fmt::Display for RawRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&String::from_utf8_lossy(&self.serialize(false)))
    }
}

fn percent_decode(input: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(input.len());
    let mut i = 0;
    while i < input.len() {
        match input[i] {
            b'+' => out.push(b' '),
            b'%' if i + 2 < input.len() => {
                match (hex_val(input[i + 1]), hex_val(input[i + 2])) {
                    (Some(h), Some(l)) => {
                        out.push(h << 4 | l);
                        i += 3;
                        continue;
                    }
                    _ => out.push(b'%'),
                }
            }
            b => out.push(b),
        }
        i += 1;
    }
    out
}

fn hex_val(b: u8) -> Option<u8> {
    (b as char).to_digit(16).map(|d| d as u8)
}
