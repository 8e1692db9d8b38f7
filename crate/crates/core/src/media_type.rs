//! Content-Type values: strict parsing, canonical form, and the tolerant
//! reading that framework models use.

use thiserror::Error;

use crate::http::is_tchar;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MediaParam {
    /// Lowercased parameter name with any `*N` / `*` suffix removed.
    pub name: String,
    pub value: String,
    pub quoted: bool,
    /// Segment number when the raw name was `name*N` (or `name*N*`).
    pub continuation: Option<u32>,
    /// Raw name ended in `*` (extended-value notation).
    pub extended: bool,
}

impl MediaParam {
    pub fn plain(name: &str, value: &str) -> Self {
        Self {
            name: name.to_ascii_lowercase(),
            value: value.to_string(),
            quoted: false,
            continuation: None,
            extended: false,
        }
    }

    pub fn is_rfc2231(&self) -> bool {
        self.continuation.is_some() || self.extended
    }

    fn raw_name(&self) -> String {
        let mut s = self.name.clone();
        if let Some(n) = self.continuation {
            s.push('*');
            s.push_str(&n.to_string());
        }
        if self.extended {
            s.push('*');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MediaType {
    pub type_: String,
    pub subtype: String,
    pub params: Vec<MediaParam>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid media type at offset {offset}: {message}")]
pub struct MediaTypeError {
    pub offset: usize,
    pub message: &'static str,
}

fn err(offset: usize, message: &'static str) -> MediaTypeError {
    MediaTypeError { offset, message }
}

pub fn is_token(s: &[u8]) -> bool {
    !s.is_empty() && s.iter().all(|&b| is_tchar(b))
}

fn is_qdtext(b: u8) -> bool {
    b == b'\t' || b == b' ' || b == 0x21 || (0x23..=0x5b).contains(&b) || (0x5d..=0x7e).contains(&b) || b >= 0x80
}

/// Splits `boundary*0` into `("boundary", Some(0), false)`.
fn split_param_name(raw: &str) -> (String, Option<u32>, bool) {
    let lower = raw.to_ascii_lowercase();
    let Some(star) = lower.find('*') else {
        return (lower, None, false);
    };
    let (base, rest) = lower.split_at(star);
    let rest = &rest[1..];
    if base.is_empty() {
        return (lower, None, false);
    }
    if rest.is_empty() {
        return (base.to_string(), None, true);
    }
    let (digits, extended) = match rest.strip_suffix('*') {
        Some(d) => (d, true),
        None => (rest, false),
    };
    match digits.parse::<u32>() {
        Ok(n) if digits.bytes().all(|b| b.is_ascii_digit()) => (base.to_string(), Some(n), extended),
        _ => (lower, None, false),
    }
}

struct Cursor<'a> {
    input: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<u8> {
        self.input.get(self.pos).copied()
    }

    fn skip_ows(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t')) {
            self.pos += 1;
        }
    }

    fn token(&mut self) -> &'a [u8] {
        let start = self.pos;
        while self.peek().is_some_and(is_tchar) {
            self.pos += 1;
        }
        &self.input[start..self.pos]
    }

    fn quoted_string(&mut self) -> Result<Vec<u8>, MediaTypeError> {
        let open = self.pos;
        self.pos += 1;
        let mut out = Vec::new();
        loop {
            match self.peek() {
                None => return Err(err(open, "unterminated quoted string")),
                Some(b'"') => {
                    self.pos += 1;
                    return Ok(out);
                }
                Some(b'\\') => {
                    let escaped = self
                        .input
                        .get(self.pos + 1)
                        .copied()
                        .ok_or(err(open, "unterminated quoted string"))?;
                    if escaped != b'\t' && (escaped < 0x20 || escaped == 0x7f) {
                        return Err(err(self.pos + 1, "control byte in quoted-pair"));
                    }
                    out.push(escaped);
                    self.pos += 2;
                }
                Some(b) if is_qdtext(b) => {
                    out.push(b);
                    self.pos += 1;
                }
                Some(_) => return Err(err(self.pos, "control byte in quoted string")),
            }
        }
    }
}

fn utf8(bytes: Vec<u8>, offset: usize) -> Result<String, MediaTypeError> {
    String::from_utf8(bytes).map_err(|_| err(offset, "parameter value is not UTF-8"))
}

/// Strict parse of a Content-Type field value. Continuation segments are
/// annotated but never joined.
pub fn parse_media_type(raw: &[u8]) -> Result<MediaType, MediaTypeError> {
    let mut c = Cursor { input: raw, pos: 0 };
    c.skip_ows();
    let type_ = c.token();
    if type_.is_empty() {
        return Err(if raw.contains(&b'/') {
            err(c.pos, "empty type")
        } else {
            err(c.pos, "no slash")
        });
    }
    if c.peek() != Some(b'/') {
        return Err(err(c.pos, "no slash"));
    }
    c.pos += 1;
    let subtype = c.token();
    if subtype.is_empty() {
        return Err(err(c.pos, "empty subtype"));
    }
    let mut mt = MediaType {
        type_: String::from_utf8_lossy(type_).to_ascii_lowercase(),
        subtype: String::from_utf8_lossy(subtype).to_ascii_lowercase(),
        params: Vec::new(),
    };
    loop {
        c.skip_ows();
        match c.peek() {
            None => return Ok(mt),
            Some(b';') => c.pos += 1,
            Some(_) => return Err(err(c.pos, "unexpected byte after media type")),
        }
        c.skip_ows();
        let name_at = c.pos;
        let name = c.token();
        if name.is_empty() {
            return Err(err(name_at, "empty parameter"));
        }
        if c.peek() != Some(b'=') {
            return Err(err(c.pos, "parameter without `=`"));
        }
        c.pos += 1;
        let value_at = c.pos;
        let (value, quoted) = if c.peek() == Some(b'"') {
            (c.quoted_string()?, true)
        } else {
            let v = c.token();
            if v.is_empty() {
                return Err(err(value_at, "empty parameter value"));
            }
            (v.to_vec(), false)
        };
        let (pname, continuation, extended) = split_param_name(&String::from_utf8_lossy(name));
        mt.params.push(MediaParam {
            name: pname,
            value: utf8(value, value_at)?,
            quoted,
            continuation,
            extended,
        });
    }
}

/// Permissive reading in the style of common framework helpers: surrounding
/// whitespace and control octets are trimmed, empty `;` segments skipped,
/// unterminated quotes tolerated.
pub fn parse_media_type_lenient(raw: &[u8]) -> Option<MediaType> {
    let trim = |s: &[u8]| -> Vec<u8> {
        let is_junk = |b: &u8| b.is_ascii_whitespace() || b.is_ascii_control();
        let start = s.iter().position(|b| !is_junk(b)).unwrap_or(s.len());
        let end = s.iter().rposition(|b| !is_junk(b)).map_or(start, |e| e + 1);
        s[start..end].to_vec()
    };
    let text = String::from_utf8_lossy(&trim(raw)).into_owned();
    let mut segments = text.split(';');
    let essence = segments.next()?.trim().to_ascii_lowercase();
    let (t, s) = essence.split_once('/')?;
    let (t, s) = (t.trim(), s.trim());
    if t.is_empty() || s.is_empty() {
        return None;
    }
    let mut params = Vec::new();
    for seg in segments {
        let seg = String::from_utf8_lossy(&trim(seg.as_bytes())).into_owned();
        let Some((name, value)) = seg.split_once('=') else {
            continue;
        };
        let name = name.trim();
        if name.is_empty() {
            continue;
        }
        let value = value.trim();
        let (value, quoted) = match value.strip_prefix('"') {
            Some(rest) => (rest.strip_suffix('"').unwrap_or(rest).replace("\\\"", "\""), true),
            None => (value.to_string(), false),
        };
        let (pname, continuation, extended) = split_param_name(name);
        params.push(MediaParam {
            name: pname,
            value,
            quoted,
            continuation,
            extended,
        });
    }
    Some(MediaType {
        type_: t.to_string(),
        subtype: s.to_string(),
        params,
    })
}

pub fn quote_if_needed(value: &str) -> String {
    if is_token(value.as_bytes()) {
        value.to_string()
    } else {
        let mut s = String::with_capacity(value.len() + 2);
        s.push('"');
        for ch in value.chars() {
            if ch == '"' || ch == '\\' {
                s.push('\\');
            }
            s.push(ch);
        }
        s.push('"');
        s
    }
}

impl MediaType {
    pub fn new(type_: &str, subtype: &str) -> Self {
        Self {
            type_: type_.to_ascii_lowercase(),
            subtype: subtype.to_ascii_lowercase(),
            params: Vec::new(),
        }
    }

    pub fn with_param(mut self, name: &str, value: &str) -> Self {
        self.params.push(MediaParam::plain(name, value));
        self
    }

    pub fn is(&self, type_: &str, subtype: &str) -> bool {
        self.type_ == type_ && self.subtype == subtype
    }

    pub fn essence(&self) -> String {
        format!("{}/{}", self.type_, self.subtype)
    }

    /// Plain (non-RFC 2231) parameters with this name, in order.
    pub fn plain_params<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a MediaParam> + 'a {
        self.params.iter().filter(move |p| p.name == name && !p.is_rfc2231())
    }

    pub fn param(&self, name: &str) -> Option<&str> {
        self.params
            .iter()
            .find(|p| p.name == name && !p.is_rfc2231())
            .map(|p| p.value.as_str())
    }

    /// Continuation segments for `name`, sorted by segment number and joined.
    pub fn joined_continuation(&self, name: &str) -> Option<String> {
        let mut segs: Vec<_> = self
            .params
            .iter()
            .filter(|p| p.name == name && p.continuation.is_some())
            .collect();
        if segs.is_empty() {
            return None;
        }
        segs.sort_by_key(|p| p.continuation);
        Some(segs.iter().map(|p| p.value.as_str()).collect())
    }

    /// `type/subtype; name=value` with one space after each semicolon and
    /// quotes only where the value is not a token.
    pub fn canonical(&self) -> String {
        let mut s = self.essence();
        for p in &self.params {
            s.push_str("; ");
            s.push_str(&p.raw_name());
            s.push('=');
            s.push_str(&quote_if_needed(&p.value));
        }
        s
    }
}
