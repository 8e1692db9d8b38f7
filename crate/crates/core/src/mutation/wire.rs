//! Byte offsets of the structural landmarks mutators splice at.

use crate::http::RawRequest;
use crate::media_type::parse_media_type_lenient;
use crate::multipart::{resolve_boundary, BoundaryPick};

/// One header line of the request head, as absolute offsets into the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadLine {
    pub start: usize,
    pub name_end: usize,
    pub separator_end: usize,
    pub value_end: usize,
    /// Index just past the line terminator.
    pub end: usize,
}

/// Serialized request plus the offsets of its head lines.
#[derive(Debug, Clone)]
pub struct WireView {
    pub wire: Vec<u8>,
    pub lines: Vec<HeadLine>,
    pub body_start: usize,
    content_type: Option<(usize, Vec<u8>)>,
}

impl WireView {
    pub fn new(req: &RawRequest) -> Self {
        let wire = req.serialize(false);
        let mut pos = req.method.len() + req.target.len() + 2 + req.version.as_bytes().len()
            + req.request_line_ending.as_bytes().len();
        let mut lines = Vec::with_capacity(req.headers.len());
        let mut content_type = None;
        for (k, h) in req.headers.iter().enumerate() {
            let name_end = pos + h.name.len();
            let separator_end = name_end + h.separator.len();
            let value_end = separator_end + h.value.len();
            let end = value_end + h.line_ending.as_bytes().len();
            lines.push(HeadLine {
                start: pos,
                name_end,
                separator_end,
                value_end,
                end,
            });
            if content_type.is_none() && h.is_named("content-type") {
                content_type = Some((k, h.value.clone()));
            }
            pos = end;
        }
        let body_start = pos + req.head_terminator.as_bytes().len();
        debug_assert_eq!(wire.len() - body_start, req.body.len());
        Self {
            wire,
            lines,
            body_start,
            content_type,
        }
    }

    pub fn body(&self) -> &[u8] {
        &self.wire[self.body_start..]
    }

    /// The first header line named Content-Type.
    pub fn content_type_line(&self) -> Option<HeadLine> {
        self.content_type.as_ref().map(|(k, _)| self.lines[*k])
    }

    pub fn content_type_value(&self) -> Option<&[u8]> {
        self.content_type.as_ref().map(|(_, v)| v.as_slice())
    }

    /// Boundary a continuation-joining reader would use.
    pub fn boundary(&self) -> Option<Vec<u8>> {
        let mt = parse_media_type_lenient(self.content_type_value()?)?;
        resolve_boundary(&mt, Some(BoundaryPick::Joined), true)
            .ok()
            .filter(|b| !b.is_empty())
    }

    /// Absolute offsets of every dash-boundary that starts a line of the body.
    pub fn delimiters(&self) -> Vec<usize> {
        let Some(boundary) = self.boundary() else {
            return Vec::new();
        };
        let mut dash = b"--".to_vec();
        dash.extend_from_slice(&boundary);
        let body = self.body();
        (0..body.len())
            .filter(|&p| body[p..].starts_with(&dash) && (p == 0 || body[p - 1] == b'\n'))
            .map(|p| p + self.body_start)
            .collect()
    }

    pub fn dash_boundary_len(&self) -> usize {
        self.boundary().map_or(0, |b| b.len() + 2)
    }

    /// Part header lines (without their CRLF) for every opening delimiter,
    /// grouped by part.
    pub fn part_header_lines(&self) -> Vec<Vec<(usize, usize)>> {
        let dash_len = self.dash_boundary_len();
        let mut parts = Vec::new();
        for d in self.delimiters() {
            let after = d + dash_len;
            if self.wire[after..].starts_with(b"--") {
                continue;
            }
            let Some(eol) = find(&self.wire, b"\r\n", after) else {
                continue;
            };
            let mut lines = Vec::new();
            let mut pos = eol + 2;
            while let Some(end) = find(&self.wire, b"\r\n", pos) {
                if end == pos {
                    break;
                }
                lines.push((pos, end));
                pos = end + 2;
            }
            parts.push(lines);
        }
        parts
    }

    /// Part header lines whose name matches case-insensitively, as
    /// `(line_start, value_start, line_end)`.
    pub fn part_headers_named(&self, name: &str) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for (start, end) in self.part_header_lines().into_iter().flatten() {
            let line = &self.wire[start..end];
            let Some(colon) = line.iter().position(|&b| b == b':') else {
                continue;
            };
            if !line[..colon].eq_ignore_ascii_case(name.as_bytes()) {
                continue;
            }
            let mut v = start + colon + 1;
            while v < end && matches!(self.wire[v], b' ' | b'\t') {
                v += 1;
            }
            out.push((start, v, end));
        }
        out
    }
}

pub fn find(haystack: &[u8], needle: &[u8], from: usize) -> Option<usize> {
    if from > haystack.len() {
        return None;
    }
    haystack[from..]
        .windows(needle.len())
        .position(|w| w == needle)
        .map(|k| k + from)
}

pub fn find_ignore_case(haystack: &[u8], needle: &[u8], from: usize) -> Option<usize> {
    if from > haystack.len() {
        return None;
    }
    haystack[from..]
        .windows(needle.len())
        .position(|w| w.eq_ignore_ascii_case(needle))
        .map(|k| k + from)
}

/// Member names of a JSON text as `(open_quote, close_quote)` body offsets.
pub fn json_member_names(body: &[u8]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < body.len() {
        if body[i] != b'"' {
            i += 1;
            continue;
        }
        let open = i;
        i += 1;
        while i < body.len() && body[i] != b'"' {
            i += if body[i] == b'\\' { 2 } else { 1 };
        }
        if i >= body.len() {
            break;
        }
        let close = i;
        i += 1;
        let mut j = i;
        while j < body.len() && matches!(body[j], b' ' | b'\t' | b'\r' | b'\n') {
            j += 1;
        }
        if body.get(j) == Some(&b':') {
            out.push((open, close));
        }
    }
    out
}

/// Landmarks of an XML body, as body offsets.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct XmlLandmarks {
    pub root_start: Option<usize>,
    /// Index just past the root's end tag.
    pub root_end: Option<usize>,
    /// Start of the root's end tag.
    pub root_close: Option<usize>,
    /// Starts of end tags whose element had element children.
    pub parent_closes: Vec<usize>,
    /// Character data runs inside the root: CDATA sections (including their
    /// markers) and non-blank text.
    pub text_runs: Vec<(usize, usize)>,
}

pub fn xml_landmarks(body: &[u8]) -> XmlLandmarks {
    let mut lm = XmlLandmarks::default();
    let mut stack: Vec<(Vec<u8>, bool)> = Vec::new();
    let mut i = 0;
    while i < body.len() {
        if body[i] != b'<' {
            let end = body[i..].iter().position(|&b| b == b'<').map_or(body.len(), |k| k + i);
            if !stack.is_empty() && !body[i..end].iter().all(u8::is_ascii_whitespace) {
                lm.text_runs.push((i, end));
            }
            i = end;
            continue;
        }
        let rest = &body[i..];
        let skip_to = |end: &[u8]| find(body, end, i).map(|k| k + end.len());
        if rest.starts_with(b"<![CDATA[") {
            let Some(end) = skip_to(b"]]>") else { break };
            if !stack.is_empty() {
                lm.text_runs.push((i, end));
            }
            i = end;
        } else if rest.starts_with(b"<!--") {
            let Some(end) = skip_to(b"-->") else { break };
            i = end;
        } else if rest.starts_with(b"<?") {
            let Some(end) = skip_to(b"?>") else { break };
            i = end;
        } else if rest.starts_with(b"<!") {
            let gt = find(body, b">", i);
            let bracket = find(body, b"[", i);
            let end = match (bracket, gt) {
                (Some(b), Some(g)) if b < g => skip_to(b"]>"),
                (_, Some(g)) => Some(g + 1),
                _ => None,
            };
            let Some(end) = end else { break };
            i = end;
        } else if rest.starts_with(b"</") {
            let Some(gt) = find(body, b">", i) else { break };
            if let Some((_, had_children)) = stack.pop() {
                if had_children {
                    lm.parent_closes.push(i);
                }
                if stack.is_empty() && lm.root_end.is_none() {
                    lm.root_close = Some(i);
                    lm.root_end = Some(gt + 1);
                }
            }
            i = gt + 1;
        } else {
            let Some(gt) = find(body, b">", i) else { break };
            let name_end = body[i + 1..gt]
                .iter()
                .position(|b| b.is_ascii_whitespace() || *b == b'/')
                .map_or(gt, |k| k + i + 1);
            if let Some(parent) = stack.last_mut() {
                parent.1 = true;
            }
            if stack.is_empty() && lm.root_start.is_none() {
                lm.root_start = Some(i);
            }
            if body[gt - 1] == b'/' {
                if stack.is_empty() && lm.root_end.is_none() {
                    lm.root_end = Some(gt + 1);
                }
            } else {
                stack.push((body[i + 1..name_end].to_vec(), false));
            }
            i = gt + 1;
        }
    }
    lm
}
