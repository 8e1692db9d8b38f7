//! multipart/form-data: strict RFC 2046 / RFC 7578 parsing into a canonical
//! structure, canonical serialization, and lenient profiles that model how
//! permissive framework parsers read the same bytes.
//!
//! Both the strict and the lenient entry points run the same framing engine;
//! the strict one runs it with every tolerance switched off. That keeps the
//! lenient language a superset of the strict one by construction.

use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::http::is_tchar;
use crate::media_type::{parse_media_type, parse_media_type_lenient, MediaType};
use crate::reject::{LenientError, RejectCategory as C, RejectReason};

const MAX_BOUNDARY: usize = 70;

pub fn is_bchar(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b"'()+_,-./:=? ".contains(&b)
}

pub fn validate_boundary(b: &[u8]) -> Result<(), RejectReason> {
    if b.is_empty() || b.len() > MAX_BOUNDARY {
        return Err(RejectReason::new(C::InvalidBoundary, "boundary must be 1-70 octets"));
    }
    if let Some(i) = b.iter().position(|&c| !is_bchar(c)) {
        return Err(RejectReason::new(
            C::InvalidBoundary,
            format!("octet 0x{:02x} at boundary index {i} is not a bchar", b[i]),
        ));
    }
    if b.last() == Some(&b' ') {
        return Err(RejectReason::new(C::InvalidBoundary, "boundary ends in space"));
    }
    Ok(())
}

fn is_ctl(b: u8) -> bool {
    b < 0x20 || b == 0x7f
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Part {
    name: Vec<u8>,
    filename: Option<Vec<u8>>,
    content_type: Option<MediaType>,
    body: Vec<u8>,
}

impl Part {
    pub fn new(
        name: impl Into<Vec<u8>>,
        filename: Option<Vec<u8>>,
        content_type: Option<MediaType>,
        body: impl Into<Vec<u8>>,
    ) -> Result<Self, RejectReason> {
        let name = name.into();
        if name.is_empty() {
            return Err(RejectReason::new(C::MalformedPartHeader, "empty part name"));
        }
        if name.iter().any(|&b| is_ctl(b)) {
            return Err(RejectReason::new(C::ControlBytes, "control octet in part name"));
        }
        if filename.as_ref().is_some_and(|f| f.iter().any(|&b| is_ctl(b))) {
            return Err(RejectReason::new(C::ControlBytes, "control octet in filename"));
        }
        if let Some(ct) = &content_type {
            if ct.params.iter().any(|p| p.is_rfc2231()) {
                return Err(RejectReason::new(C::DeprecatedFeature, "RFC 2231 parameter in part Content-Type"));
            }
        }
        Ok(Self {
            name,
            filename,
            content_type,
            body: body.into(),
        })
    }

    pub fn name(&self) -> &[u8] {
        &self.name
    }

    pub fn filename(&self) -> Option<&[u8]> {
        self.filename.as_deref()
    }

    pub fn content_type(&self) -> Option<&MediaType> {
        self.content_type.as_ref()
    }

    pub fn body(&self) -> &[u8] {
        &self.body
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultipartBody {
    boundary: Vec<u8>,
    parts: Vec<Part>,
}

fn contains(hay: &[u8], needle: &[u8]) -> bool {
    find(hay, needle, 0).is_some()
}

fn find(hay: &[u8], needle: &[u8], from: usize) -> Option<usize> {
    if needle.is_empty() || from > hay.len() || hay.len() - from < needle.len() {
        return None;
    }
    hay[from..].windows(needle.len()).position(|w| w == needle).map(|p| p + from)
}

impl MultipartBody {
    pub fn new(boundary: impl Into<Vec<u8>>, parts: Vec<Part>) -> Result<Self, RejectReason> {
        let boundary = boundary.into();
        validate_boundary(&boundary)?;
        if parts.is_empty() {
            return Err(RejectReason::new(C::MalformedFraming, "no body parts"));
        }
        let mut delim = b"\r\n--".to_vec();
        delim.extend_from_slice(&boundary);
        for p in &parts {
            let mut framed = b"\r\n".to_vec();
            framed.extend_from_slice(&p.body);
            if contains(&framed, &delim) {
                return Err(RejectReason::new(C::MalformedFraming, "part body contains the delimiter"));
            }
        }
        Ok(Self { boundary, parts })
    }

    pub fn boundary(&self) -> &[u8] {
        &self.boundary
    }

    pub fn parts(&self) -> &[Part] {
        &self.parts
    }

    /// Canonical Content-Type header value for this body.
    pub fn content_type(&self) -> String {
        MediaType::new("multipart", "form-data")
            .with_param("boundary", &String::from_utf8_lossy(&self.boundary))
            .canonical()
    }
}

fn quote_bytes(out: &mut Vec<u8>, v: &[u8]) {
    out.push(b'"');
    for &b in v {
        if b == b'"' || b == b'\\' {
            out.push(b'\\');
        }
        out.push(b);
    }
    out.push(b'"');
}

/// Canonical part header block (without the terminating empty line).
pub fn canonical_part_headers(part: &Part) -> Vec<u8> {
    let mut out = b"Content-Disposition: form-data; name=".to_vec();
    quote_bytes(&mut out, &part.name);
    if let Some(f) = &part.filename {
        out.extend_from_slice(b"; filename=");
        quote_bytes(&mut out, f);
    }
    out.extend_from_slice(b"\r\n");
    let ct = match (&part.content_type, &part.filename) {
        (Some(ct), _) => Some(ct.canonical()),
        (None, Some(_)) => Some("text/plain".to_string()),
        (None, None) => None,
    };
    if let Some(ct) = ct {
        out.extend_from_slice(b"Content-Type: ");
        out.extend_from_slice(ct.as_bytes());
        out.extend_from_slice(b"\r\n");
    }
    out
}

pub fn serialize_canonical(mp: &MultipartBody) -> Vec<u8> {
    let mut out = Vec::new();
    for part in &mp.parts {
        out.extend_from_slice(b"--");
        out.extend_from_slice(&mp.boundary);
        out.extend_from_slice(b"\r\n");
        out.extend_from_slice(&canonical_part_headers(part));
        out.extend_from_slice(b"\r\n");
        out.extend_from_slice(&part.body);
        out.extend_from_slice(b"\r\n");
    }
    out.extend_from_slice(b"--");
    out.extend_from_slice(&mp.boundary);
    out.extend_from_slice(b"--");
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryPick {
    First,
    Last,
    Joined,
}

/// Tolerances a framework-style multipart reader applies.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct LeniencyProfile {
    pub join_continuation_params: bool,
    /// `None` rejects ambiguous boundaries (duplicates, continuation
    /// segments) just like the strict parser.
    pub boundary_pick: Option<BoundaryPick>,
    pub tolerate_control_in_headers: bool,
    pub tolerate_missing_final_delimiter: bool,
    /// Accept bare LF or bare CR wherever CRLF is required.
    pub tolerate_bare_lf: bool,
    /// Octets treated as additional line terminators inside part headers.
    /// HTAB, CR and LF are ignored here.
    pub header_separator_chars: BTreeSet<u8>,
    /// Skip arbitrary bytes before the first and after the last delimiter.
    pub ignore_preamble_epilogue: bool,
}

impl Default for LeniencyProfile {
    fn default() -> Self {
        Self::strictest()
    }
}

impl LeniencyProfile {
    pub fn strictest() -> Self {
        Self {
            join_continuation_params: false,
            boundary_pick: None,
            tolerate_control_in_headers: false,
            tolerate_missing_final_delimiter: false,
            tolerate_bare_lf: false,
            header_separator_chars: BTreeSet::new(),
            ignore_preamble_epilogue: false,
        }
    }

    pub fn permissive() -> Self {
        Self {
            join_continuation_params: true,
            boundary_pick: Some(BoundaryPick::Joined),
            tolerate_control_in_headers: true,
            tolerate_missing_final_delimiter: true,
            tolerate_bare_lf: true,
            header_separator_chars: [0x00, 0x01, 0x02, 0x0b].into_iter().collect(),
            ignore_preamble_epilogue: true,
        }
    }

    fn separators(&self) -> Vec<u8> {
        self.header_separator_chars
            .iter()
            .copied()
            .filter(|b| !matches!(b, b'\t' | b'\r' | b'\n'))
            .collect()
    }
}

/// Picks the effective boundary from the Content-Type parameters.
pub fn resolve_boundary(
    ct: &MediaType,
    pick: Option<BoundaryPick>,
    join: bool,
) -> Result<Vec<u8>, RejectReason> {
    let is_boundary = |name: &str| name == "boundary";
    let Some(pick) = pick else {
        if ct.params.iter().any(|p| is_boundary(&p.name) && p.is_rfc2231()) {
            return Err(RejectReason::new(
                C::DeprecatedFeature,
                "RFC 2231 parameter continuation on boundary",
            ));
        }
        let mut plain = ct.plain_params("boundary");
        let first = plain
            .next()
            .ok_or_else(|| RejectReason::new(C::InvalidBoundary, "missing boundary parameter"))?;
        if plain.next().is_some() {
            return Err(RejectReason::new(C::InvalidBoundary, "duplicate boundary parameter"));
        }
        return Ok(first.value.as_bytes().to_vec());
    };
    let joined = if join { ct.joined_continuation("boundary") } else { None };
    let first_plain = ct.param("boundary").map(str::to_string);
    let chosen = match pick {
        BoundaryPick::First => first_plain.or(joined),
        BoundaryPick::Joined => joined.or(first_plain),
        BoundaryPick::Last => {
            let mut last = None;
            let mut joined_emitted = false;
            for p in ct.params.iter().filter(|p| is_boundary(&p.name)) {
                if !p.is_rfc2231() {
                    last = Some(p.value.clone());
                } else if p.continuation.is_some() && !joined_emitted {
                    if let Some(j) = &joined {
                        last = Some(j.clone());
                        joined_emitted = true;
                    }
                }
            }
            last
        }
    };
    chosen
        .map(String::into_bytes)
        .ok_or_else(|| RejectReason::new(C::InvalidBoundary, "no usable boundary parameter"))
}

// ---------------------------------------------------------------------------
// Framing engine
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Clone)]
struct Tolerances {
    bare_line_endings: bool,
    loose_headers: bool,
    separators: Vec<u8>,
    missing_final: bool,
    foreign_preamble: bool,
}

impl Tolerances {
    fn from_profile(p: &LeniencyProfile) -> Self {
        Self {
            bare_line_endings: p.tolerate_bare_lf,
            loose_headers: p.tolerate_control_in_headers,
            separators: p.separators(),
            missing_final: p.tolerate_missing_final_delimiter,
            foreign_preamble: p.ignore_preamble_epilogue,
        }
    }
}

#[derive(Debug, Clone)]
enum PartType {
    Parsed(MediaType),
    Unparsed(Vec<u8>),
}

#[derive(Debug, Clone)]
struct RawPart {
    headers: Range<usize>,
    name: Vec<u8>,
    filename: Option<Vec<u8>>,
    content_type: Option<PartType>,
    content: Range<usize>,
}

/// Byte ranges of a strictly parsed body that the canonical form drops or
/// rewrites; the normalizer turns these into change notes.
#[derive(Debug, Clone, Default)]
pub struct FramingTrace {
    pub preamble: Range<usize>,
    pub epilogue: Range<usize>,
    /// Raw part header block of each part, including line endings but not
    /// the empty line.
    pub part_headers: Vec<Range<usize>>,
    /// Any delimiter line carrying transport padding.
    pub padded_delimiters: bool,
}

/// Length of a line ending at `i`, if any. Strict mode only accepts CRLF.
fn line_ending_at(body: &[u8], i: usize, bare_ok: bool) -> Option<usize> {
    match body.get(i) {
        Some(b'\r') if body.get(i + 1) == Some(&b'\n') => Some(2),
        Some(b'\r') | Some(b'\n') if bare_ok => Some(1),
        _ => None,
    }
}

enum DelimKind {
    Open,
    Close,
}

struct Engine<'a> {
    body: &'a [u8],
    dash: Vec<u8>,
    tol: Tolerances,
}

impl<'a> Engine<'a> {
    /// Checks whether a delimiter line starts at `at` (which must sit at a
    /// line start). Returns the kind and the index after the delimiter line
    /// (after the line ending for Open, after `--` plus padding for Close).
    fn delimiter_at(&self, at: usize) -> Result<Option<(DelimKind, usize, bool)>, RejectReason> {
        let body = self.body;
        if !body[at..].starts_with(&self.dash) {
            return Ok(None);
        }
        let mut i = at + self.dash.len();
        let close = body[i..].starts_with(b"--");
        if close {
            i += 2;
        }
        let pad_start = i;
        while matches!(body.get(i), Some(b' ' | b'\t')) {
            i += 1;
        }
        let padded = i > pad_start;
        if close {
            return Ok(Some((DelimKind::Close, i, padded)));
        }
        if let Some(n) = line_ending_at(body, i, self.tol.bare_line_endings) {
            return Ok(Some((DelimKind::Open, i + n, padded)));
        }
        if !self.tol.bare_line_endings && matches!(body.get(i), Some(b'\r' | b'\n')) {
            return Err(RejectReason::at(C::BareLineEnding, "delimiter line not ended by CRLF", i));
        }
        if i == body.len() {
            return Err(RejectReason::at(C::MissingFinalDelimiter, "body ends inside a delimiter", at));
        }
        Ok(None)
    }

    fn run(&self, trace: &mut FramingTrace) -> Result<Vec<RawPart>, RejectReason> {
        let body = self.body;
        // Opening delimiter.
        let mut line_start = 0usize;
        let first = loop {
            if line_start >= body.len() {
                return Err(RejectReason::at(C::MalformedFraming, "no opening delimiter", 0));
            }
            match self.delimiter_at(line_start) {
                Ok(Some(d)) => break (line_start, d),
                Ok(None) => {}
                Err(e) if self.tol.foreign_preamble => {
                    let _ = e;
                }
                Err(e) => return Err(e),
            }
            if !self.tol.foreign_preamble && body[line_start..].starts_with(&self.dash) {
                return Err(RejectReason::at(
                    C::MalformedFraming,
                    "line begins with the boundary but is not a delimiter",
                    line_start,
                ));
            }
            match self.next_line_start(line_start) {
                Some(n) => line_start = n,
                None => return Err(RejectReason::at(C::MalformedFraming, "no opening delimiter", 0)),
            }
        };
        let (open_at, (kind, mut pos, padded)) = first;
        trace.preamble = 0..open_at;
        trace.padded_delimiters |= padded;
        if !self.tol.foreign_preamble {
            self.check_padding_region(0..open_at)?;
        }
        if let DelimKind::Close = kind {
            return Err(RejectReason::at(C::MalformedFraming, "no body parts before close delimiter", open_at));
        }

        let mut parts = Vec::new();
        loop {
            let (raw, next) = self.part(pos)?;
            parts.push(raw);
            match next {
                None => {
                    trace.epilogue = body.len()..body.len();
                    return Ok(parts);
                }
                Some((DelimKind::Open, after, padded)) => {
                    trace.padded_delimiters |= padded;
                    pos = after;
                }
                Some((DelimKind::Close, after, padded)) => {
                    trace.padded_delimiters |= padded;
                    trace.epilogue = after..body.len();
                    if !self.tol.foreign_preamble && after < body.len() {
                        if line_ending_at(body, after, false).is_none() {
                            return Err(RejectReason::at(
                                C::MalformedFraming,
                                "bytes after close delimiter",
                                after,
                            ));
                        }
                        self.check_padding_region(after..body.len())?;
                    }
                    return Ok(parts);
                }
            }
        }
    }

    fn next_line_start(&self, from: usize) -> Option<usize> {
        let body = self.body;
        let mut i = from;
        while i < body.len() {
            if body[i] == b'\n' {
                return Some(i + 1);
            }
            if body[i] == b'\r' && body.get(i + 1) != Some(&b'\n') && self.tol.bare_line_endings {
                return Some(i + 1);
            }
            i += 1;
        }
        None
    }

    /// Preamble and epilogue are discard-text: any octets, in CRLF-terminated
    /// lines.
    fn check_padding_region(&self, r: Range<usize>) -> Result<(), RejectReason> {
        let body = self.body;
        let mut i = r.start;
        while i < r.end {
            match body[i] {
                b'\r' if body.get(i + 1) == Some(&b'\n') => i += 2,
                b'\r' | b'\n' => return Err(RejectReason::at(C::BareLineEnding, "bare line ending outside parts", i)),
                _ => i += 1,
            }
        }
        Ok(())
    }

    /// Parses one part starting at `pos` (just after an opening delimiter
    /// line). Returns the part and the delimiter that ended it (or `None`
    /// when a tolerated missing close delimiter ran to end of input).
    #[allow(clippy::type_complexity)]
    fn part(&self, pos: usize) -> Result<(RawPart, Option<(DelimKind, usize, bool)>), RejectReason> {
        let body = self.body;
        let (lines, headers_end, content_start) = self.header_lines(pos)?;
        let mut raw = RawPart {
            headers: pos..headers_end,
            name: Vec::new(),
            filename: None,
            content_type: None,
            content: 0..0,
        };
        self.interpret_headers(&lines, &mut raw)?;

        // Find the delimiter that ends this part.
        let mut search = content_start;
        loop {
            let candidate = self.find_delimiter_candidate(search);
            let Some((le_start, dash_at)) = candidate else {
                if self.tol.missing_final {
                    raw.content = content_start..body.len();
                    return Ok((raw, None));
                }
                return Err(RejectReason::at(
                    C::MissingFinalDelimiter,
                    "no delimiter after part content",
                    content_start,
                ));
            };
            match self.delimiter_at(dash_at) {
                Ok(Some(d)) => {
                    raw.content = content_start..le_start;
                    return Ok((raw, Some(d)));
                }
                Ok(None) | Err(_) if self.tol.missing_final || self.tol.foreign_preamble => {
                    search = dash_at;
                }
                Ok(None) => {
                    return Err(RejectReason::at(
                        C::MalformedFraming,
                        "boundary appears inside part content",
                        dash_at,
                    ))
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Next `<line ending> --boundary` at or after `from`. Returns the start
    /// of the line ending and the start of the dashes.
    fn find_delimiter_candidate(&self, from: usize) -> Option<(usize, usize)> {
        let body = self.body;
        let mut i = from;
        loop {
            let at = find(body, &self.dash, i)?;
            if at >= from + 2 && body[at - 2] == b'\r' && body[at - 1] == b'\n' {
                return Some((at - 2, at));
            }
            if at > from && at >= 1 && self.tol.bare_line_endings && matches!(body[at - 1], b'\n' | b'\r') {
                return Some((at - 1, at));
            }
            i = at + 1;
        }
    }

    /// Splits the part header block into lines. Returns the lines (as
    /// ranges), the end of the header block and the start of the content.
    fn header_lines(&self, pos: usize) -> Result<(Vec<Range<usize>>, usize, usize), RejectReason> {
        let body = self.body;
        let mut lines = Vec::new();
        let mut start = pos;
        let mut i = pos;
        let mut after_separator = false;
        loop {
            if i >= body.len() {
                return Err(RejectReason::at(C::MalformedFraming, "part headers not terminated", pos));
            }
            let b = body[i];
            let ending = match b {
                b'\r' if body.get(i + 1) == Some(&b'\n') => Some(2),
                b'\r' | b'\n' if self.tol.bare_line_endings => Some(1),
                b'\r' | b'\n' => {
                    return Err(RejectReason::at(C::BareLineEnding, "bare line ending in part headers", i))
                }
                _ if self.tol.separators.contains(&b) => {
                    if i > start {
                        lines.push(start..i);
                    }
                    i += 1;
                    start = i;
                    after_separator = true;
                    continue;
                }
                _ => None,
            };
            match ending {
                Some(n) if i == start && after_separator => {
                    i += n;
                    start = i;
                    after_separator = false;
                }
                Some(n) => {
                    if i == start {
                        // empty line closes the header block
                        return Ok((lines, start, i + n));
                    }
                    lines.push(start..i);
                    i += n;
                    start = i;
                }
                None => {
                    after_separator = false;
                    i += 1;
                }
            }
        }
    }

    fn interpret_headers(&self, lines: &[Range<usize>], raw: &mut RawPart) -> Result<(), RejectReason> {
        let body = self.body;
        let loose = self.tol.loose_headers;
        let mut seen_disposition = false;
        for r in lines {
            let line = &body[r.clone()];
            if matches!(line[0], b' ' | b'\t') {
                if loose {
                    continue;
                }
                return Err(RejectReason::at(C::DeprecatedFeature, "obsolete header line folding", r.start));
            }
            let Some(colon) = line.iter().position(|&b| b == b':') else {
                if loose {
                    continue;
                }
                return Err(RejectReason::at(C::MalformedPartHeader, "part header line without colon", r.start));
            };
            let name = &line[..colon];
            if !loose {
                if name.is_empty() {
                    return Err(RejectReason::at(C::MalformedPartHeader, "empty header name", r.start));
                }
                if let Some(i) = name.iter().position(|&b| is_ctl(b)) {
                    return Err(RejectReason::at(C::ControlBytes, "control octet in header name", r.start + i));
                }
                if let Some(i) = name.iter().position(|&b| !is_tchar(b)) {
                    return Err(RejectReason::at(C::MalformedPartHeader, "header name is not a token", r.start + i));
                }
            }
            let rest = &line[colon + 1..];
            let value = trim_ows(rest);
            let value_at = r.start + colon + 1 + rest.iter().take_while(|b| matches!(b, b' ' | b'\t')).count();
            let lname = name.to_ascii_lowercase();
            match lname.as_slice() {
                b"content-disposition" => {
                    if seen_disposition {
                        if loose {
                            continue;
                        }
                        return Err(RejectReason::at(C::MalformedPartHeader, "duplicate Content-Disposition", r.start));
                    }
                    seen_disposition = true;
                    let d = if loose {
                        parse_disposition_loose(value)
                    } else {
                        parse_disposition_strict(value).map_err(|e| e.shifted(value_at))?
                    };
                    raw.name = d.name;
                    raw.filename = d.filename;
                }
                b"content-type" => {
                    if raw.content_type.is_some() {
                        if loose {
                            continue;
                        }
                        return Err(RejectReason::at(C::MalformedPartHeader, "duplicate Content-Type", r.start));
                    }
                    match parse_media_type(value) {
                        Ok(mt) => {
                            if mt.params.iter().any(|p| p.is_rfc2231()) && !loose {
                                return Err(RejectReason::at(
                                    C::DeprecatedFeature,
                                    "RFC 2231 parameter in part Content-Type",
                                    value_at,
                                ));
                            }
                            raw.content_type = Some(PartType::Parsed(mt));
                        }
                        Err(e) if !loose => {
                            return Err(RejectReason::at(
                                C::MalformedPartHeader,
                                format!("part Content-Type: {}", e.message),
                                value_at + e.offset,
                            ))
                        }
                        Err(_) => {
                            raw.content_type = Some(match parse_media_type_lenient(value) {
                                Some(mt) => PartType::Parsed(mt),
                                None => PartType::Unparsed(value.to_vec()),
                            })
                        }
                    }
                }
                b"content-transfer-encoding" if !loose => {
                    return Err(RejectReason::at(
                        C::DeprecatedFeature,
                        "Content-Transfer-Encoding in form-data part",
                        r.start,
                    ))
                }
                _ => {
                    if !loose {
                        if let Some(i) = value.iter().position(|&b| b != b'\t' && is_ctl(b)) {
                            return Err(RejectReason::at(C::ControlBytes, "control octet in header value", value_at + i));
                        }
                    }
                }
            }
        }
        if !seen_disposition || raw.name.is_empty() {
            return Err(RejectReason::new(
                C::MalformedPartHeader,
                "part lacks a Content-Disposition name",
            ));
        }
        Ok(())
    }
}

fn trim_ows(v: &[u8]) -> &[u8] {
    let start = v.iter().position(|b| !matches!(b, b' ' | b'\t')).unwrap_or(v.len());
    let end = v.iter().rposition(|b| !matches!(b, b' ' | b'\t')).map_or(start, |e| e + 1);
    &v[start..end]
}

struct Disposition {
    name: Vec<u8>,
    filename: Option<Vec<u8>>,
}

fn parse_disposition_strict(v: &[u8]) -> Result<Disposition, RejectReason> {
    let mut i = 0;
    while i < v.len() && is_tchar(v[i]) {
        i += 1;
    }
    if !v[..i].eq_ignore_ascii_case(b"form-data") || (i < v.len() && !matches!(v[i], b';' | b' ' | b'\t')) {
        return Err(RejectReason::at(C::MalformedPartHeader, "disposition type is not form-data", i.min(v.len())));
    }
    let mut name = None;
    let mut filename = None;
    loop {
        while i < v.len() && matches!(v[i], b' ' | b'\t') {
            i += 1;
        }
        if i == v.len() {
            break;
        }
        if v[i] != b';' {
            return Err(RejectReason::at(C::MalformedPartHeader, "unexpected octet in Content-Disposition", i));
        }
        i += 1;
        while i < v.len() && matches!(v[i], b' ' | b'\t') {
            i += 1;
        }
        let ps = i;
        while i < v.len() && is_tchar(v[i]) {
            i += 1;
        }
        let pname = v[ps..i].to_ascii_lowercase();
        if pname.is_empty() || v.get(i) != Some(&b'=') {
            return Err(RejectReason::at(C::MalformedPartHeader, "malformed disposition parameter", i));
        }
        i += 1;
        let value = if v.get(i) == Some(&b'"') {
            let open = i;
            i += 1;
            let mut out = Vec::new();
            loop {
                match v.get(i) {
                    None => return Err(RejectReason::at(C::MalformedPartHeader, "unterminated quoted string", open)),
                    Some(b'"') => {
                        i += 1;
                        break;
                    }
                    Some(b'\\') => match v.get(i + 1) {
                        Some(&e) if e == b'\t' || !is_ctl(e) => {
                            out.push(e);
                            i += 2;
                        }
                        Some(_) => return Err(RejectReason::at(C::ControlBytes, "control octet in quoted-pair", i + 1)),
                        None => return Err(RejectReason::at(C::MalformedPartHeader, "unterminated quoted string", open)),
                    },
                    Some(&b) if b != b'\t' && is_ctl(b) => {
                        return Err(RejectReason::at(C::ControlBytes, "control octet in quoted string", i))
                    }
                    Some(&b) => {
                        out.push(b);
                        i += 1;
                    }
                }
            }
            out
        } else {
            let vs = i;
            while i < v.len() && is_tchar(v[i]) {
                i += 1;
            }
            if vs == i {
                return Err(RejectReason::at(C::MalformedPartHeader, "empty disposition parameter value", i));
            }
            v[vs..i].to_vec()
        };
        match pname.as_slice() {
            b"name" => {
                if name.replace(value).is_some() {
                    return Err(RejectReason::at(C::MalformedPartHeader, "duplicate name parameter", ps));
                }
            }
            b"filename" => {
                if filename.replace(value).is_some() {
                    return Err(RejectReason::at(C::MalformedPartHeader, "duplicate filename parameter", ps));
                }
            }
            p if p.contains(&b'*') => {
                return Err(RejectReason::at(C::DeprecatedFeature, "RFC 2231 disposition parameter", ps))
            }
            _ => {}
        }
    }
    match name {
        Some(n) if !n.is_empty() => Ok(Disposition { name: n, filename }),
        _ => Err(RejectReason::new(C::MalformedPartHeader, "missing or empty name parameter")),
    }
}

/// Framework-style reading: the disposition type is not checked, each
/// `;`-separated segment is scanned for `name=` / `filename=`, and control
/// octets are kept as ordinary data.
fn parse_disposition_loose(v: &[u8]) -> Disposition {
    let mut name = None;
    let mut filename = None;
    for seg in split_outside_quotes(v, b';') {
        let seg = trim_ows(seg);
        let Some(eq) = seg.iter().position(|&b| b == b'=') else {
            continue;
        };
        let key = trim_ows(&seg[..eq]).to_ascii_lowercase();
        let raw = trim_ows(&seg[eq + 1..]);
        let value = if raw.first() == Some(&b'"') {
            let mut out = Vec::new();
            let mut i = 1;
            while i < raw.len() {
                match raw[i] {
                    b'"' => break,
                    b'\\' if i + 1 < raw.len() => {
                        out.push(raw[i + 1]);
                        i += 2;
                        continue;
                    }
                    b => out.push(b),
                }
                i += 1;
            }
            out
        } else {
            raw.to_vec()
        };
        match key.as_slice() {
            b"name" if name.is_none() => name = Some(value),
            b"filename" if filename.is_none() => filename = Some(value),
            _ => {}
        }
    }
    Disposition {
        name: name.unwrap_or_default(),
        filename,
    }
}

fn split_outside_quotes(v: &[u8], sep: u8) -> Vec<&[u8]> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut quoted = false;
    let mut i = 0;
    while i < v.len() {
        match v[i] {
            b'\\' if quoted => i += 1,
            b'"' => quoted = !quoted,
            b if b == sep && !quoted => {
                out.push(&v[start..i]);
                start = i + 1;
            }
            _ => {}
        }
        i += 1;
    }
    out.push(&v[start..]);
    out
}

// ---------------------------------------------------------------------------
// Public entry points
// ---------------------------------------------------------------------------

/// Strict parse that also reports the framing details the canonical form
/// discards.
pub fn parse_multipart_detailed(
    body: &[u8],
    ct: &MediaType,
) -> Result<(MultipartBody, FramingTrace), RejectReason> {
    if !ct.is("multipart", "form-data") {
        return Err(RejectReason::new(
            C::UnsupportedContentType,
            format!("{} is not multipart/form-data", ct.essence()),
        ));
    }
    if let Some(p) = ct.params.iter().find(|p| p.is_rfc2231()) {
        return Err(RejectReason::new(
            C::DeprecatedFeature,
            format!("RFC 2231 parameter `{}` in Content-Type", p.name),
        ));
    }
    let boundary = resolve_boundary(ct, None, false)?;
    validate_boundary(&boundary)?;
    let mut dash = b"--".to_vec();
    dash.extend_from_slice(&boundary);
    let engine = Engine {
        body,
        dash,
        tol: Tolerances::default(),
    };
    let mut trace = FramingTrace::default();
    let raw_parts = engine.run(&mut trace)?;
    let mut parts = Vec::with_capacity(raw_parts.len());
    for rp in raw_parts {
        trace.part_headers.push(rp.headers.clone());
        let ct = match rp.content_type {
            Some(PartType::Parsed(mt)) => Some(mt),
            Some(PartType::Unparsed(_)) => unreachable!("strict mode never keeps unparsed part types"),
            None => None,
        };
        let start = rp.headers.start;
        parts.push(
            Part::new(rp.name, rp.filename, ct, body[rp.content.clone()].to_vec())
                .map_err(|mut e| {
                    e.offset.get_or_insert(start);
                    e
                })?,
        );
    }
    let mp = MultipartBody::new(boundary, parts)?;
    Ok((mp, trace))
}

pub fn parse_multipart_strict(body: &[u8], ct: &MediaType) -> Result<MultipartBody, RejectReason> {
    parse_multipart_detailed(body, ct).map(|(mp, _)| mp)
}

/// A part as read by a lenient profile. Unlike [`Part`] it may carry control
/// octets in its name or an unparseable Content-Type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LenientPart {
    pub name: Vec<u8>,
    pub filename: Option<Vec<u8>>,
    pub content_type: Option<Vec<u8>>,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LenientMultipart {
    pub boundary: Vec<u8>,
    pub parts: Vec<LenientPart>,
}

pub fn parse_multipart_lenient(
    body: &[u8],
    ct: &MediaType,
    profile: &LeniencyProfile,
) -> Result<LenientMultipart, LenientError> {
    if ct.type_ != "multipart" {
        return Err(LenientError(format!("{} is not multipart", ct.essence())));
    }
    if *profile == LeniencyProfile::strictest() {
        let mp = parse_multipart_strict(body, ct)?;
        return Ok(LenientMultipart::from(&mp));
    }
    let boundary = resolve_boundary(ct, profile.boundary_pick, profile.join_continuation_params)?;
    if boundary.is_empty() {
        return Err(LenientError("empty boundary".into()));
    }
    let mut dash = b"--".to_vec();
    dash.extend_from_slice(&boundary);
    let engine = Engine {
        body,
        dash,
        tol: Tolerances::from_profile(profile),
    };
    let raw_parts = engine.run(&mut FramingTrace::default())?;
    let parts: Vec<LenientPart> = raw_parts
        .into_iter()
        .map(|rp| LenientPart {
            name: rp.name,
            filename: rp.filename,
            content_type: rp.content_type.map(|t| match t {
                PartType::Parsed(mt) => mt.canonical().into_bytes(),
                PartType::Unparsed(v) => v,
            }),
            body: body[rp.content].to_vec(),
        })
        .collect();
    if parts.is_empty() {
        return Err(LenientError("no part recovered".into()));
    }
    Ok(LenientMultipart { boundary, parts })
}

impl From<&MultipartBody> for LenientMultipart {
    fn from(mp: &MultipartBody) -> Self {
        Self {
            boundary: mp.boundary.clone(),
            parts: mp
                .parts
                .iter()
                .map(|p| LenientPart {
                    name: p.name.clone(),
                    filename: p.filename.clone(),
                    content_type: p.content_type.as_ref().map(|c| c.canonical().into_bytes()),
                    body: p.body.clone(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PAYLOAD: &[u8] = b"<script>alert(document.cookie)</script>";

    fn ct(s: &str) -> MediaType {
        parse_media_type(s.as_bytes()).unwrap()
    }

    fn xss_form_body() -> Vec<u8> {
        b"--1234\r\nContent-Disposition: form-data; name=\"field1\"\r\n\r\n<script>alert(document.cookie)</script>\r\n--1234--".to_vec()
    }

    const CONTINUATION_CT: &str =
        "multipart/form-data; boundary=fake-boundary;boundary*0=real-;boundary*1=boundary";

    fn continuation_body() -> Vec<u8> {
        b"--fake-boundary\r\nContent-Disposition: form-data; name=\"field1\"\r\n\r\nvalue1\r\n--fake-boundary--\r\n--real-boundary\r\nContent-Disposition: form-data; name=\"id\"\r\n\r\n<script>alert(document.cookie)</script>\r\n--real-boundary--".to_vec()
    }

    #[test]
    fn strict_xss_form() {
        let mp = parse_multipart_strict(&xss_form_body(), &ct("multipart/form-data; boundary=1234")).unwrap();
        assert_eq!(mp.parts().len(), 1);
        assert_eq!(mp.parts()[0].name(), b"field1");
        assert_eq!(mp.parts()[0].body(), PAYLOAD);
        assert_eq!(serialize_canonical(&mp), xss_form_body());
    }

    #[test]
    fn strict_rejects_continuation() {
        let e = parse_multipart_strict(&continuation_body(), &ct(CONTINUATION_CT)).unwrap_err();
        assert_eq!(e.category, C::DeprecatedFeature);
    }

    #[test]
    fn strict_rejects_disposition_disruption() {
        let body = b"--B\r\ncontent-disposition: form-da\x00a; name=\"field1\"\r\n\r\nv\r\n--B--";
        let e = parse_multipart_strict(body, &ct("multipart/form-data; boundary=B")).unwrap_err();
        assert_eq!(e.category, C::MalformedPartHeader);
    }

    #[test]
    fn strict_categories() {
        let mt = ct("multipart/form-data; boundary=B");
        let cases: &[(&[u8], C)] = &[
            (b"--B\r\nContent-Disposition: form-data; name=\"a\"\r\n\r\nv\r\n", C::MissingFinalDelimiter),
            (b"--B\nContent-Disposition: form-data; name=\"a\"\r\n\r\nv\r\n--B--", C::BareLineEnding),
            (b"--B\r\nContent-Disposition: form-data; name=\"a\"\n\r\nv\r\n--B--", C::BareLineEnding),
            (b"--B\r\nconten\x00-extra: something\r\nContent-Disposition: form-data; name=\"a\"\r\n\r\nv\r\n--B--", C::ControlBytes),
            (b"--B\r\nContent-Disposition: form-data; name=\"a\x00\"\r\n\r\nv\r\n--B--", C::ControlBytes),
            (b"--B\r\nContent-Disposition: form-data; name=\"a\"\x00\r\n\r\nv\r\n--B--", C::MalformedPartHeader),
            (b"--B\r\nContent-Disposition: form-data; name=\"a\"\r\nContent-Type: text/plain\x00; charset=UTF-8\r\n\r\nv\r\n--B--", C::MalformedPartHeader),
            (b"--B\r\nContent-Disposition: form-data; name=\"a\"\r\nContent-Type: text/plain; charset=\x00UTF-8\r\n\r\nv\r\n--B--", C::MalformedPartHeader),
            (b"--B--", C::MalformedFraming),
            (b"junk\n--B\r\nContent-Disposition: form-data; name=\"a\"\r\n\r\nv\r\n--B--", C::BareLineEnding),
            (b"--B\r\nContent-Disposition: form-data; name=\"a\"\r\n\r\nv\r\n--B--epilogue", C::MalformedFraming),
            (b"--B\r\nContent-Disposition: form-data; name=\"a\"\r\n\r\nv\r\n--B--\r\nepi\nlogue", C::BareLineEnding),
            (b"--Bx\r\n--B\r\nContent-Disposition: form-data; name=\"a\"\r\n\r\nv\r\n--B--", C::MalformedFraming),
            (b"--B\r\nContent-Disposition: form-data\r\n\r\nv\r\n--B--", C::MalformedPartHeader),
            (b"--B\r\nContent-Disposition: form-data; filename*=utf-8''x; name=a\r\n\r\nv\r\n--B--", C::DeprecatedFeature),
            (b"--B\r\nContent-Disposition: form-data; name=a\r\n folded\r\n\r\nv\r\n--B--", C::DeprecatedFeature),
        ];
        for (body, cat) in cases {
            let e = parse_multipart_strict(body, &mt).unwrap_err();
            assert_eq!(e.category, *cat, "{:?}: {e}", String::from_utf8_lossy(body));
        }
    }

    #[test]
    fn discard_text_around_parts() {
        let body = b"preamble text\r\n--B\r\nContent-Disposition: form-data; name=\"a\"\r\n\r\nv\r\n--B--\r\nepilogue text";
        let (mp, trace) = parse_multipart_detailed(body, &ct("multipart/form-data; boundary=B")).unwrap();
        assert_eq!(mp.parts()[0].body(), b"v");
        assert_eq!(&body[trace.preamble.clone()], b"preamble text\r\n");
        assert_eq!(&body[trace.epilogue.clone()], b"\r\nepilogue text");
    }

    #[test]
    fn boundary_checks() {
        let body = xss_form_body();
        assert_eq!(
            parse_multipart_strict(&body, &ct("multipart/form-data")).unwrap_err().category,
            C::InvalidBoundary
        );
        assert_eq!(
            parse_multipart_strict(&body, &ct("multipart/form-data; boundary=1234; boundary=1234"))
                .unwrap_err()
                .category,
            C::InvalidBoundary
        );
        assert!(validate_boundary(&[b'a'; 71]).is_err());
        assert!(validate_boundary(b"ab ").is_err());
        assert!(validate_boundary(b"a b").is_ok());
    }

    #[test]
    fn canonical_minimal_part() {
        let mp = MultipartBody::new("B", vec![Part::new("a", None, None, "").unwrap()]).unwrap();
        assert_eq!(
            serialize_canonical(&mp),
            b"--B\r\nContent-Disposition: form-data; name=\"a\"\r\n\r\n\r\n--B--"
        );
    }

    #[test]
    fn canonicalizes_messy_upload_body() {
        let body = b"--1234\r\nContent-DISPOSITION:\tform-data;name=\"files\";\t filename=\"ab.txt\"\r\n\r\nFoo\r\n--1234--\r\n";
        let (mp, trace) = parse_multipart_detailed(body, &ct("multipart/FoRm-dAtA; boundary=\"1234\"")).unwrap();
        assert_eq!(trace.epilogue.len(), 2);
        assert_eq!(
            serialize_canonical(&mp),
            b"--1234\r\nContent-Disposition: form-data; name=\"files\"; filename=\"ab.txt\"\r\nContent-Type: text/plain\r\n\r\nFoo\r\n--1234--"
        );
        assert_eq!(mp.content_type(), "multipart/form-data; boundary=1234");
    }

    #[test]
    fn lenient_joined_boundary_recovers_continuation_payload() {
        let profile = LeniencyProfile {
            join_continuation_params: true,
            boundary_pick: Some(BoundaryPick::Joined),
            ignore_preamble_epilogue: true,
            ..LeniencyProfile::strictest()
        };
        let lm = parse_multipart_lenient(&continuation_body(), &ct(CONTINUATION_CT), &profile).unwrap();
        assert_eq!(lm.boundary, b"real-boundary");
        assert_eq!(lm.parts.len(), 1);
        assert_eq!(lm.parts[0].name, b"id");
        assert_eq!(lm.parts[0].body, PAYLOAD);
    }

    #[test]
    fn lenient_first_pick_sees_only_decoy() {
        let profile = LeniencyProfile {
            boundary_pick: Some(BoundaryPick::First),
            ignore_preamble_epilogue: true,
            ..LeniencyProfile::strictest()
        };
        let lm = parse_multipart_lenient(&continuation_body(), &ct(CONTINUATION_CT), &profile).unwrap();
        assert_eq!(lm.parts.len(), 1);
        assert_eq!(lm.parts[0].name, b"field1");
        assert_eq!(lm.parts[0].body, b"value1");
    }

    #[test]
    fn strictest_profile_rejects_continuation_attack() {
        assert!(parse_multipart_lenient(&continuation_body(), &ct(CONTINUATION_CT), &LeniencyProfile::strictest()).is_err());
    }

    #[test]
    fn missing_final_delimiter_tolerated() {
        let body = b"--B\r\nContent-Disposition: form-data; name=\"a\"\r\n\r\nfirst\r\n--B\r\nContent-Disposition: form-data; name=\"b\"\r\n\r\nsecond";
        let mt = ct("multipart/form-data; boundary=B");
        assert_eq!(parse_multipart_strict(body, &mt).unwrap_err().category, C::MissingFinalDelimiter);
        let profile = LeniencyProfile {
            tolerate_missing_final_delimiter: true,
            ..LeniencyProfile::strictest()
        };
        let lm = parse_multipart_lenient(body, &mt, &profile).unwrap();
        assert_eq!(lm.parts.len(), 2);
        assert_eq!(lm.parts[1].body, b"second");
    }

    #[test]
    fn control_tolerant_profile_reads_disrupted_headers() {
        let mt = ct("multipart/form-data; boundary=B");
        let profile = LeniencyProfile {
            tolerate_control_in_headers: true,
            ..LeniencyProfile::strictest()
        };
        let body = b"--B\r\ncontent-disposition: form-da\x00a; name=\"field1\"\r\n\r\nv\r\n--B--";
        let lm = parse_multipart_lenient(body, &mt, &profile).unwrap();
        assert_eq!(lm.parts[0].name, b"field1");
        let body = b"--B\r\nContent-Disposition: form-data; name=\"field1\x00\"\r\n\r\nv\r\n--B--";
        let lm = parse_multipart_lenient(body, &mt, &profile).unwrap();
        assert_eq!(lm.parts[0].name, b"field1\x00");
    }

    #[test]
    fn separator_chars_split_header_lines() {
        let mt = ct("multipart/form-data; boundary=B");
        let profile = LeniencyProfile {
            header_separator_chars: [0u8].into_iter().collect(),
            ..LeniencyProfile::strictest()
        };
        let body = b"--B\r\nContent-Disposition: form-data; name=\"f1\"\x00\r\n\r\nv\r\n--B--";
        let lm = parse_multipart_lenient(body, &mt, &profile).unwrap();
        assert_eq!(lm.parts[0].name, b"f1");
        assert_eq!(lm.parts[0].body, b"v");
    }

    #[test]
    fn bare_line_endings_tolerated() {
        let mt = ct("multipart/form-data; boundary=B");
        let profile = LeniencyProfile {
            tolerate_bare_lf: true,
            ..LeniencyProfile::strictest()
        };
        let body = b"--B\nContent-Disposition: form-data; name=\"a\"\n\nv\r--B--";
        let lm = parse_multipart_lenient(body, &mt, &profile).unwrap();
        assert_eq!(lm.parts[0].body, b"v");
    }

    #[test]
    fn multipart_body_rejects_embedded_delimiter() {
        let part = Part::new("a", None, None, "x\r\n--B\r\ny").unwrap();
        assert!(MultipartBody::new("B", vec![part]).is_err());
        let part = Part::new("a", None, None, "--B").unwrap();
        assert!(MultipartBody::new("B", vec![part]).is_err());
    }

    #[test]
    fn duplicate_names_kept_in_order() {
        let body = b"--B\r\nContent-Disposition: form-data; name=a\r\n\r\n1\r\n--B\r\nContent-Disposition: form-data; name=a\r\n\r\n2\r\n--B--";
        let mp = parse_multipart_strict(body, &ct("multipart/form-data; boundary=B")).unwrap();
        let bodies: Vec<_> = mp.parts().iter().map(|p| p.body().to_vec()).collect();
        assert_eq!(bodies, vec![b"1".to_vec(), b"2".to_vec()]);
    }
}
