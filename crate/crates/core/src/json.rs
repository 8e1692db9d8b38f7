//! RFC 8259 JSON: strict parsing, compact canonical serialization and
//! lenient profiles modeling framework parsers.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::reject::{LenientError, RejectCategory, RejectReason};

const MAX_DEPTH: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub enum JsonValue {
    Object(Vec<(String, JsonValue)>),
    Array(Vec<JsonValue>),
    String(String),
    Number(JsonNumber),
    Bool(bool),
    Null,
}

/// A number kept as its exact source text alongside the parsed value.
#[derive(Debug, Clone)]
pub struct JsonNumber {
    source: String,
    value: f64,
}

impl PartialEq for JsonNumber {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
    }
}

impl JsonNumber {
    /// Accepts only RFC 8259 number syntax.
    pub fn parse(source: &str) -> Option<Self> {
        let b = source.as_bytes();
        let end = scan_number(b, 0).ok()?;
        if end != b.len() {
            return None;
        }
        Some(Self {
            source: source.to_string(),
            value: source.parse().ok()?,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn value(&self) -> f64 {
        self.value
    }
}

/// Returns the end of the number starting at `i`, or the offset of the first
/// octet violating the number grammar.
fn scan_number(b: &[u8], mut i: usize) -> Result<usize, usize> {
    if b.get(i) == Some(&b'-') {
        i += 1;
    }
    match b.get(i) {
        Some(b'0') => i += 1,
        Some(b'1'..=b'9') => {
            while matches!(b.get(i), Some(b'0'..=b'9')) {
                i += 1;
            }
        }
        _ => return Err(i),
    }
    if b.get(i) == Some(&b'.') {
        i += 1;
        if !matches!(b.get(i), Some(b'0'..=b'9')) {
            return Err(i);
        }
        while matches!(b.get(i), Some(b'0'..=b'9')) {
            i += 1;
        }
    }
    if matches!(b.get(i), Some(b'e' | b'E')) {
        i += 1;
        if matches!(b.get(i), Some(b'+' | b'-')) {
            i += 1;
        }
        if !matches!(b.get(i), Some(b'0'..=b'9')) {
            return Err(i);
        }
        while matches!(b.get(i), Some(b'0'..=b'9')) {
            i += 1;
        }
    }
    Ok(i)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct JsonLeniency {
    pub allow_unescaped_control: bool,
    /// A member name may end at a control octet that is followed by `:`
    /// instead of at a closing quote.
    pub allow_missing_closing_quote: bool,
    pub allow_bytes_between_name_and_colon: BTreeSet<u8>,
}

impl JsonLeniency {
    pub fn strict() -> Self {
        Self::default()
    }

    pub fn permissive() -> Self {
        Self {
            allow_unescaped_control: true,
            allow_missing_closing_quote: true,
            allow_bytes_between_name_and_colon: (0x00..0x20).collect(),
        }
    }
}

struct Parser<'a> {
    b: &'a [u8],
    i: usize,
    lax: &'a JsonLeniency,
    lossy_utf8: bool,
}

fn err(offset: usize, detail: impl Into<String>) -> RejectReason {
    RejectReason::at(RejectCategory::MalformedBody, detail, offset)
}

impl<'a> Parser<'a> {
    fn ws(&mut self) {
        while matches!(self.b.get(self.i), Some(b' ' | b'\t' | b'\n' | b'\r')) {
            self.i += 1;
        }
    }

    fn value(&mut self, depth: usize) -> Result<JsonValue, RejectReason> {
        if depth > MAX_DEPTH {
            return Err(err(self.i, "nesting too deep"));
        }
        self.ws();
        match self.b.get(self.i) {
            None => Err(err(self.i, "unexpected end of input")),
            Some(b'{') => self.object(depth),
            Some(b'[') => self.array(depth),
            Some(b'"') => Ok(JsonValue::String(self.string(false)?)),
            Some(b't') => self.literal(b"true", JsonValue::Bool(true)),
            Some(b'f') => self.literal(b"false", JsonValue::Bool(false)),
            Some(b'n') => self.literal(b"null", JsonValue::Null),
            Some(b'-' | b'0'..=b'9') => {
                let start = self.i;
                let end = scan_number(self.b, start).map_err(|at| err(at, "invalid number"))?;
                self.i = end;
                let text = std::str::from_utf8(&self.b[start..end]).expect("ascii digits");
                Ok(JsonValue::Number(JsonNumber {
                    source: text.to_string(),
                    value: text.parse().unwrap_or(f64::NAN),
                }))
            }
            Some(_) => Err(err(self.i, "unexpected octet")),
        }
    }

    fn literal(&mut self, word: &[u8], v: JsonValue) -> Result<JsonValue, RejectReason> {
        for (k, &w) in word.iter().enumerate() {
            if self.b.get(self.i + k) != Some(&w) {
                return Err(err(self.i + k, "invalid literal"));
            }
        }
        self.i += word.len();
        Ok(v)
    }

    fn object(&mut self, depth: usize) -> Result<JsonValue, RejectReason> {
        self.i += 1;
        let mut members = Vec::new();
        self.ws();
        if self.b.get(self.i) == Some(&b'}') {
            self.i += 1;
            return Ok(JsonValue::Object(members));
        }
        loop {
            self.ws();
            if self.b.get(self.i) != Some(&b'"') {
                return Err(err(self.i, "expected member name"));
            }
            let name = self.string(true)?;
            loop {
                match self.b.get(self.i) {
                    Some(b' ' | b'\t' | b'\n' | b'\r') => self.i += 1,
                    Some(c) if self.lax.allow_bytes_between_name_and_colon.contains(c) => self.i += 1,
                    _ => break,
                }
            }
            if self.b.get(self.i) != Some(&b':') {
                return Err(err(self.i, "expected `:` after member name"));
            }
            self.i += 1;
            let v = self.value(depth + 1)?;
            members.push((name, v));
            self.ws();
            match self.b.get(self.i) {
                Some(b',') => self.i += 1,
                Some(b'}') => {
                    self.i += 1;
                    return Ok(JsonValue::Object(members));
                }
                _ => return Err(err(self.i, "expected `,` or `}`")),
            }
        }
    }

    fn array(&mut self, depth: usize) -> Result<JsonValue, RejectReason> {
        self.i += 1;
        let mut items = Vec::new();
        self.ws();
        if self.b.get(self.i) == Some(&b']') {
            self.i += 1;
            return Ok(JsonValue::Array(items));
        }
        loop {
            items.push(self.value(depth + 1)?);
            self.ws();
            match self.b.get(self.i) {
                Some(b',') => self.i += 1,
                Some(b']') => {
                    self.i += 1;
                    return Ok(JsonValue::Array(items));
                }
                _ => return Err(err(self.i, "expected `,` or `]`")),
            }
        }
    }

    /// True when the octet at `at` is a control octet followed by optional
    /// whitespace and a colon, i.e. it stands in for a name's closing quote.
    fn closes_name_without_quote(&self, at: usize) -> bool {
        let mut j = at + 1;
        while matches!(self.b.get(j), Some(b' ' | b'\t' | b'\n' | b'\r')) {
            j += 1;
        }
        self.b.get(j) == Some(&b':')
    }

    fn string(&mut self, is_name: bool) -> Result<String, RejectReason> {
        let open = self.i;
        self.i += 1;
        let mut out: Vec<u8> = Vec::new();
        loop {
            let at = self.i;
            let Some(&c) = self.b.get(at) else {
                return Err(err(open, "unterminated string"));
            };
            match c {
                b'"' => {
                    self.i += 1;
                    break;
                }
                b'\\' => {
                    self.i += 1;
                    self.escape(&mut out)?;
                }
                c if c < 0x20 => {
                    if is_name && self.lax.allow_missing_closing_quote && self.closes_name_without_quote(at) {
                        self.i += 1;
                        break;
                    }
                    if !self.lax.allow_unescaped_control {
                        return Err(err(at, "unescaped control octet in string"));
                    }
                    out.push(c);
                    self.i += 1;
                }
                c => {
                    out.push(c);
                    self.i += 1;
                }
            }
        }
        match String::from_utf8(out) {
            Ok(s) => Ok(s),
            Err(e) if self.lossy_utf8 => Ok(String::from_utf8_lossy(e.as_bytes()).into_owned()),
            Err(e) => Err(err(open + 1 + e.utf8_error().valid_up_to(), "invalid UTF-8 in string")),
        }
    }

    fn hex4(&mut self) -> Result<u16, RejectReason> {
        let mut v = 0u16;
        for k in 0..4 {
            let d = self
                .b
                .get(self.i + k)
                .and_then(|c| (*c as char).to_digit(16))
                .ok_or_else(|| err(self.i + k, "invalid \\u escape"))?;
            v = v * 16 + d as u16;
        }
        self.i += 4;
        Ok(v)
    }

    fn escape(&mut self, out: &mut Vec<u8>) -> Result<(), RejectReason> {
        let at = self.i;
        let c = *self.b.get(at).ok_or_else(|| err(at, "unterminated escape"))?;
        self.i += 1;
        let simple = match c {
            b'"' => Some(b'"'),
            b'\\' => Some(b'\\'),
            b'/' => Some(b'/'),
            b'b' => Some(0x08),
            b'f' => Some(0x0c),
            b'n' => Some(b'\n'),
            b'r' => Some(b'\r'),
            b't' => Some(b'\t'),
            b'u' => None,
            _ => return Err(err(at, "invalid escape")),
        };
        if let Some(s) = simple {
            out.push(s);
            return Ok(());
        }
        let hi = self.hex4()?;
        let ch = match hi {
            0xd800..=0xdbff => {
                let pair_at = self.i;
                if self.b.get(pair_at) == Some(&b'\\') && self.b.get(pair_at + 1) == Some(&b'u') {
                    self.i += 2;
                    let lo = self.hex4()?;
                    if (0xdc00..=0xdfff).contains(&lo) {
                        char::from_u32(0x10000 + (((hi as u32) - 0xd800) << 10) + (lo as u32 - 0xdc00))
                    } else {
                        None
                    }
                } else {
                    None
                }
            }
            0xdc00..=0xdfff => None,
            v => char::from_u32(v as u32),
        };
        let ch = match ch {
            Some(ch) => ch,
            None if self.lossy_utf8 => char::REPLACEMENT_CHARACTER,
            None => return Err(err(at - 1, "unpaired surrogate escape")),
        };
        let mut buf = [0u8; 4];
        out.extend_from_slice(ch.encode_utf8(&mut buf).as_bytes());
        Ok(())
    }
}

fn parse_with(body: &[u8], lax: &JsonLeniency, lossy_utf8: bool) -> Result<JsonValue, RejectReason> {
    let mut p = Parser {
        b: body,
        i: 0,
        lax,
        lossy_utf8,
    };
    let v = p.value(0)?;
    p.ws();
    if p.i != body.len() {
        return Err(err(p.i, "trailing octets after JSON text"));
    }
    Ok(v)
}

pub fn parse_json_strict(body: &[u8]) -> Result<JsonValue, RejectReason> {
    parse_with(body, &JsonLeniency::strict(), false)
}

pub fn parse_json_lenient(body: &[u8], profile: &JsonLeniency) -> Result<JsonValue, LenientError> {
    let lossy = *profile != JsonLeniency::strict();
    Ok(parse_with(body, profile, lossy)?)
}

fn write_string(out: &mut Vec<u8>, s: &str) {
    out.push(b'"');
    for &c in s.as_bytes() {
        match c {
            b'"' => out.extend_from_slice(b"\\\""),
            b'\\' => out.extend_from_slice(b"\\\\"),
            c if c < 0x20 => out.extend_from_slice(format!("\\u{:04x}", c).as_bytes()),
            c => out.push(c),
        }
    }
    out.push(b'"');
}

fn write_value(out: &mut Vec<u8>, v: &JsonValue) {
    match v {
        JsonValue::Object(members) => {
            out.push(b'{');
            for (k, (name, value)) in members.iter().enumerate() {
                if k > 0 {
                    out.push(b',');
                }
                write_string(out, name);
                out.push(b':');
                write_value(out, value);
            }
            out.push(b'}');
        }
        JsonValue::Array(items) => {
            out.push(b'[');
            for (k, item) in items.iter().enumerate() {
                if k > 0 {
                    out.push(b',');
                }
                write_value(out, item);
            }
            out.push(b']');
        }
        JsonValue::String(s) => write_string(out, s),
        JsonValue::Number(n) => out.extend_from_slice(n.source.as_bytes()),
        JsonValue::Bool(true) => out.extend_from_slice(b"true"),
        JsonValue::Bool(false) => out.extend_from_slice(b"false"),
        JsonValue::Null => out.extend_from_slice(b"null"),
    }
}

pub fn serialize_json_canonical(v: &JsonValue) -> Vec<u8> {
    let mut out = Vec::new();
    write_value(&mut out, v);
    out
}

/// A member name or string value, addressed by a JSON-pointer-like path.
/// Member names carry a `#name` suffix on the path of the member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JsonField {
    pub path: String,
    pub text: String,
}

impl JsonValue {
    /// Every member name and string value in document order.
    pub fn string_fields(&self) -> Vec<JsonField> {
        let mut out = Vec::new();
        collect(self, String::new(), &mut out);
        out
    }
}

fn collect(v: &JsonValue, path: String, out: &mut Vec<JsonField>) {
    match v {
        JsonValue::Object(members) => {
            for (name, value) in members {
                let child = format!("{path}/{}", name.replace('~', "~0").replace('/', "~1"));
                out.push(JsonField {
                    path: format!("{child}#name"),
                    text: name.clone(),
                });
                collect(value, child, out);
            }
        }
        JsonValue::Array(items) => {
            for (k, item) in items.iter().enumerate() {
                collect(item, format!("{path}/{k}"), out);
            }
        }
        JsonValue::String(s) => out.push(JsonField {
            path: if path.is_empty() { "/".into() } else { path },
            text: s.clone(),
        }),
        _ => {}
    }
}
