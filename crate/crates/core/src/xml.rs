//! Well-formedness checking for a pragmatic XML subset, element-tree
//! extraction and lenient profiles.
//!
//! Supported: XML declaration, comments, a DOCTYPE whose internal subset is
//! skipped without interpretation, elements, attributes, character data,
//! CDATA sections and the predefined and numeric character references.
//! Namespaces are lexical; prefixes stay in names.

use serde::{Deserialize, Serialize};

use crate::reject::{LenientError, RejectCategory, RejectReason};

const MAX_DEPTH: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum XmlNode {
    Element(XmlElement),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XmlElement {
    pub name: String,
    pub attributes: Vec<(String, String)>,
    pub children: Vec<XmlNode>,
}

impl XmlElement {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            attributes: Vec::new(),
            children: Vec::new(),
        }
    }

    pub fn with_attribute(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.attributes.push((name.into(), value.into()));
        self
    }

    pub fn with_child(mut self, child: XmlNode) -> Self {
        self.children.push(child);
        self
    }

    pub fn with_text(self, text: impl Into<String>) -> Self {
        self.with_child(XmlNode::Text(text.into()))
    }

    pub fn has_element_children(&self) -> bool {
        self.children.iter().any(|c| matches!(c, XmlNode::Element(_)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XmlDocument {
    pub root: XmlElement,
    pub has_doctype: bool,
    /// Nodes found outside the root element. Only lenient parsing keeps any.
    pub outside: Vec<XmlNode>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct XmlLeniency {
    /// Keep text and extra elements before or after the root element.
    pub tolerate_text_outside_root: bool,
    /// Drop text made only of `]` inside an element when a DOCTYPE is present.
    pub tolerate_stray_bracket_after_doctype: bool,
    /// Keep text that follows the last child element of a parent.
    pub tolerate_junk_before_close_tag: bool,
    pub tolerate_duplicate_siblings: bool,
}

impl XmlLeniency {
    pub fn strict() -> Self {
        Self::default()
    }

    pub fn permissive() -> Self {
        Self {
            tolerate_text_outside_root: true,
            tolerate_stray_bracket_after_doctype: true,
            tolerate_junk_before_close_tag: true,
            tolerate_duplicate_siblings: true,
        }
    }
}

fn err(offset: usize, detail: impl Into<String>) -> RejectReason {
    RejectReason::at(RejectCategory::MalformedBody, detail, offset)
}

fn is_xml_char(c: char) -> bool {
    matches!(c, '\t' | '\n' | '\r' | '\u{20}'..='\u{D7FF}' | '\u{E000}'..='\u{FFFD}' | '\u{10000}'..='\u{10FFFF}')
}

fn is_name_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == ':' || (c as u32) >= 0x80
}

fn is_name_char(c: char) -> bool {
    is_name_start(c) || c.is_ascii_digit() || c == '-' || c == '.'
}

fn is_ws(c: char) -> bool {
    matches!(c, ' ' | '\t' | '\n' | '\r')
}

struct Parser<'a> {
    s: &'a str,
    i: usize,
    lax: &'a XmlLeniency,
    has_doctype: bool,
}

impl<'a> Parser<'a> {
    fn rest(&self) -> &'a str {
        &self.s[self.i..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn starts(&self, p: &str) -> bool {
        self.rest().starts_with(p)
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if !is_ws(c) {
                break;
            }
            self.i += 1;
        }
    }

    fn expect(&mut self, p: &str, what: &str) -> Result<(), RejectReason> {
        if self.starts(p) {
            self.i += p.len();
            Ok(())
        } else {
            Err(err(self.i, format!("expected {what}")))
        }
    }

    fn skip_until(&mut self, end: &str, what: &str) -> Result<&'a str, RejectReason> {
        let start = self.i;
        match self.rest().find(end) {
            Some(k) => {
                self.i += k + end.len();
                Ok(&self.s[start..start + k])
            }
            None => Err(err(start, format!("unterminated {what}"))),
        }
    }

    fn name(&mut self) -> Result<String, RejectReason> {
        let start = self.i;
        match self.peek() {
            Some(c) if is_name_start(c) => self.i += c.len_utf8(),
            _ => return Err(err(start, "expected a name")),
        }
        while let Some(c) = self.peek() {
            if !is_name_char(c) {
                break;
            }
            self.i += c.len_utf8();
        }
        Ok(self.s[start..self.i].to_string())
    }

    fn comment(&mut self) -> Result<(), RejectReason> {
        let start = self.i;
        self.i += 4;
        let body = self.skip_until("-->", "comment")?;
        if body.contains("--") || body.ends_with('-') {
            return Err(err(start, "`--` inside comment"));
        }
        Ok(())
    }

    fn declaration(&mut self) -> Result<(), RejectReason> {
        if self.starts("<?xml") && self.s[self.i + 5..].starts_with(|c: char| is_ws(c) || c == '?') {
            self.i += 5;
            self.skip_until("?>", "XML declaration")?;
        }
        Ok(())
    }

    fn doctype(&mut self) -> Result<(), RejectReason> {
        let start = self.i;
        self.i += "<!DOCTYPE".len();
        if !self.peek().is_some_and(is_ws) {
            return Err(err(self.i, "expected whitespace after DOCTYPE"));
        }
        self.skip_ws();
        self.name()?;
        let mut quote: Option<char> = None;
        loop {
            let Some(c) = self.peek() else {
                return Err(err(start, "unterminated DOCTYPE"));
            };
            self.i += c.len_utf8();
            match (quote, c) {
                (Some(q), c) if c == q => quote = None,
                (Some(_), _) => {}
                (None, '"' | '\'') => quote = Some(c),
                (None, '[') => self.internal_subset(start)?,
                (None, '>') => break,
                _ => {}
            }
        }
        self.has_doctype = true;
        Ok(())
    }

    /// Skips an internal subset up to its closing `]`, honoring quoted
    /// literals and comments.
    fn internal_subset(&mut self, start: usize) -> Result<(), RejectReason> {
        let mut quote: Option<char> = None;
        loop {
            if quote.is_none() && self.starts("<!--") {
                self.comment()?;
                continue;
            }
            let Some(c) = self.peek() else {
                return Err(err(start, "unterminated DOCTYPE internal subset"));
            };
            self.i += c.len_utf8();
            match (quote, c) {
                (Some(q), c) if c == q => quote = None,
                (Some(_), _) => {}
                (None, '"' | '\'') => quote = Some(c),
                (None, ']') => return Ok(()),
                _ => {}
            }
        }
    }

    fn reference(&mut self, out: &mut String) -> Result<(), RejectReason> {
        let start = self.i;
        self.i += 1;
        let body = match self.rest().find(';') {
            Some(k) if k <= 12 => &self.s[self.i..self.i + k],
            _ => return Err(err(start, "unterminated reference")),
        };
        let ch = match body {
            "lt" => Some('<'),
            "gt" => Some('>'),
            "amp" => Some('&'),
            "apos" => Some('\''),
            "quot" => Some('"'),
            _ if body.starts_with("#x") => u32::from_str_radix(&body[2..], 16).ok().and_then(char::from_u32),
            _ if body.starts_with('#') => body[1..].parse::<u32>().ok().and_then(char::from_u32),
            _ => return Err(err(start, format!("unsupported entity reference `&{body};`"))),
        };
        match ch {
            Some(c) if is_xml_char(c) && !body.contains('+') => {
                out.push(c);
                self.i += body.len() + 1;
                Ok(())
            }
            _ => Err(err(start, "invalid character reference")),
        }
    }

    fn attribute_value(&mut self) -> Result<String, RejectReason> {
        let q = match self.peek() {
            Some(c @ ('"' | '\'')) => c,
            _ => return Err(err(self.i, "expected quoted attribute value")),
        };
        let open = self.i;
        self.i += 1;
        let mut out = String::new();
        loop {
            match self.peek() {
                None => return Err(err(open, "unterminated attribute value")),
                Some(c) if c == q => {
                    self.i += 1;
                    return Ok(out);
                }
                Some('<') => return Err(err(self.i, "`<` in attribute value")),
                Some('&') => self.reference(&mut out)?,
                Some('\r') if self.s[self.i + 1..].starts_with('\n') => {
                    out.push(' ');
                    self.i += 2;
                }
                Some(c) if is_ws(c) => {
                    out.push(' ');
                    self.i += 1;
                }
                Some(c) if !is_xml_char(c) => return Err(err(self.i, "invalid character")),
                Some(c) => {
                    out.push(c);
                    self.i += c.len_utf8();
                }
            }
        }
    }

    fn element(&mut self, depth: usize) -> Result<XmlElement, RejectReason> {
        if depth > MAX_DEPTH {
            return Err(err(self.i, "nesting too deep"));
        }
        self.i += 1;
        let mut el = XmlElement::new(self.name()?);
        loop {
            let before_ws = self.i;
            self.skip_ws();
            if self.starts("/>") {
                self.i += 2;
                return Ok(el);
            }
            if self.starts(">") {
                self.i += 1;
                break;
            }
            if self.i == before_ws {
                return Err(err(self.i, "expected whitespace, `>` or `/>`"));
            }
            let at = self.i;
            let name = self.name()?;
            self.skip_ws();
            self.expect("=", "`=` in attribute")?;
            self.skip_ws();
            let value = self.attribute_value()?;
            if el.attributes.iter().any(|(n, _)| *n == name) {
                return Err(err(at, format!("duplicate attribute `{name}`")));
            }
            el.attributes.push((name, value));
        }
        let children = self.content(depth, &el.name)?;
        el.children = children;
        Ok(el)
    }

    /// Parses content up to and including the end tag of `name`.
    fn content(&mut self, depth: usize, name: &str) -> Result<Vec<XmlNode>, RejectReason> {
        let mut nodes: Vec<(XmlNode, usize)> = Vec::new();
        let mut text = String::new();
        let mut text_at = self.i;
        let flush = |text: &mut String, at: usize, nodes: &mut Vec<(XmlNode, usize)>| {
            if !text.is_empty() {
                nodes.push((XmlNode::Text(std::mem::take(text)), at));
            }
        };
        loop {
            if text.is_empty() {
                text_at = self.i;
            }
            let Some(c) = self.peek() else {
                return Err(err(self.i, format!("unclosed element `{name}`")));
            };
            match c {
                '<' if self.starts("</") => {
                    flush(&mut text, text_at, &mut nodes);
                    let at = self.i;
                    self.i += 2;
                    let close = self.name()?;
                    if close != name {
                        return Err(err(at, format!("end tag `{close}` does not match `{name}`")));
                    }
                    self.skip_ws();
                    self.expect(">", "`>` closing end tag")?;
                    break;
                }
                '<' if self.starts("<![CDATA[") => {
                    self.i += 9;
                    let data = self.skip_until("]]>", "CDATA section")?;
                    if let Some(bad) = data.chars().position(|c| !is_xml_char(c)) {
                        return Err(err(self.i, format!("invalid character in CDATA at {bad}")));
                    }
                    text.push_str(&data.replace("\r\n", "\n").replace('\r', "\n"));
                }
                '<' if self.starts("<!--") => self.comment()?,
                '<' if self.starts("<?") => return Err(err(self.i, "processing instructions are not supported")),
                '<' => {
                    flush(&mut text, text_at, &mut nodes);
                    let at = self.i;
                    let child = self.element(depth + 1)?;
                    nodes.push((XmlNode::Element(child), at));
                }
                '&' => self.reference(&mut text)?,
                ']' if self.starts("]]>") => return Err(err(self.i, "`]]>` in character data")),
                '\r' => {
                    text.push('\n');
                    self.i += if self.s[self.i + 1..].starts_with('\n') { 2 } else { 1 };
                }
                c if !is_xml_char(c) => return Err(err(self.i, "invalid character")),
                c => {
                    text.push(c);
                    self.i += c.len_utf8();
                }
            }
        }
        self.check_structure(nodes)
    }

    fn check_structure(&self, nodes: Vec<(XmlNode, usize)>) -> Result<Vec<XmlNode>, RejectReason> {
        let has_elements = nodes.iter().any(|(n, _)| matches!(n, XmlNode::Element(_)));
        if !has_elements {
            return Ok(nodes.into_iter().map(|(n, _)| n).collect());
        }
        let last_element = nodes
            .iter()
            .rposition(|(n, _)| matches!(n, XmlNode::Element(_)))
            .expect("has elements");
        let mut out = Vec::with_capacity(nodes.len());
        let mut seen: Vec<&str> = Vec::new();
        for (k, (node, at)) in nodes.iter().enumerate() {
            match node {
                XmlNode::Text(t) if t.chars().all(is_ws) => {}
                XmlNode::Text(t) => {
                    if self.lax.tolerate_stray_bracket_after_doctype
                        && self.has_doctype
                        && t.trim_matches(is_ws).chars().all(|c| c == ']')
                    {
                        continue;
                    }
                    if self.lax.tolerate_junk_before_close_tag && k > last_element {
                        out.push(node.clone());
                        continue;
                    }
                    return Err(err(*at, "text mixed with child elements"));
                }
                XmlNode::Element(e) => {
                    if seen.contains(&e.name.as_str()) && !self.lax.tolerate_duplicate_siblings {
                        return Err(err(*at, format!("duplicate sibling element `{}`", e.name)));
                    }
                    seen.push(&e.name);
                    out.push(node.clone());
                }
            }
        }
        Ok(out)
    }

    /// Comments, whitespace, and (when tolerated) stray text or elements
    /// outside the root.
    fn misc(&mut self, outside: &mut Vec<XmlNode>, allow_doctype: bool) -> Result<(), RejectReason> {
        loop {
            self.skip_ws();
            if self.starts("<!--") {
                self.comment()?;
            } else if allow_doctype && self.starts("<!DOCTYPE") {
                if self.has_doctype {
                    return Err(err(self.i, "second DOCTYPE"));
                }
                self.doctype()?;
            } else if self.starts("<?") {
                return Err(err(self.i, "processing instructions are not supported"));
            } else if self.lax.tolerate_text_outside_root && self.starts("<![CDATA[") {
                self.i += "<![CDATA[".len();
                let text = self.skip_until("]]>", "CDATA section")?.to_string();
                outside.push(XmlNode::Text(text));
            } else if self.i >= self.s.len() || self.starts("<") {
                return Ok(());
            } else if self.lax.tolerate_text_outside_root {
                let start = self.i;
                let end = self.rest().find('<').map_or(self.s.len(), |k| start + k);
                let text = self.s[start..end].trim_end_matches(is_ws).to_string();
                self.i = end;
                outside.push(XmlNode::Text(text));
            } else {
                return Err(err(self.i, "text outside the root element"));
            }
        }
    }

    fn document(&mut self) -> Result<XmlDocument, RejectReason> {
        if self.starts("\u{FEFF}") {
            self.i += 3;
        }
        self.declaration()?;
        let mut outside = Vec::new();
        self.misc(&mut outside, true)?;
        if self.i >= self.s.len() {
            return Err(err(self.i, "no root element"));
        }
        let root = self.element(0)?;
        loop {
            self.misc(&mut outside, false)?;
            if self.i >= self.s.len() {
                break;
            }
            if !self.lax.tolerate_text_outside_root {
                return Err(err(self.i, "content after the root element"));
            }
            if self.starts("<!") || self.starts("</") {
                return Err(err(self.i, "unexpected markup after the root element"));
            }
            let extra = self.element(0)?;
            outside.push(XmlNode::Element(extra));
        }
        Ok(XmlDocument {
            root,
            has_doctype: self.has_doctype,
            outside,
        })
    }
}

fn parse_with(s: &str, lax: &XmlLeniency) -> Result<XmlDocument, RejectReason> {
    Parser {
        s,
        i: 0,
        lax,
        has_doctype: false,
    }
    .document()
}

pub fn parse_xml_strict(body: &[u8]) -> Result<XmlDocument, RejectReason> {
    let s = std::str::from_utf8(body).map_err(|e| err(e.valid_up_to(), "invalid UTF-8"))?;
    parse_with(s, &XmlLeniency::strict())
}

pub fn parse_xml_lenient(body: &[u8], profile: &XmlLeniency) -> Result<XmlDocument, LenientError> {
    let s = String::from_utf8_lossy(body);
    Ok(parse_with(&s, profile)?)
}

/// Attribute values and text content in depth-first document order, with
/// `/`-joined element paths and `@name` segments for attributes. Text
/// outside the root is reported under `#outside`.
pub fn collect_text_fields(doc: &XmlDocument) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for node in &doc.outside {
        if let XmlNode::Text(t) = node {
            if !t.is_empty() {
                out.push(("#outside".to_string(), t.clone()));
            }
        }
    }
    walk(&doc.root, "", &mut out);
    for node in &doc.outside {
        if let XmlNode::Element(e) = node {
            walk(e, "#outside", &mut out);
        }
    }
    out
}

fn walk(el: &XmlElement, parent: &str, out: &mut Vec<(String, String)>) {
    let path = if parent.is_empty() {
        el.name.clone()
    } else {
        format!("{parent}/{}", el.name)
    };
    for (name, value) in &el.attributes {
        out.push((format!("{path}/@{name}"), value.clone()));
    }
    for child in &el.children {
        match child {
            XmlNode::Text(t) if !t.is_empty() => out.push((path.clone(), t.clone())),
            XmlNode::Text(_) => {}
            XmlNode::Element(e) => walk(e, &path, out),
        }
    }
}

fn escape_into(out: &mut String, s: &str, attribute: bool) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' if attribute => out.push_str("&quot;"),
            '\t' if attribute => out.push_str("&#9;"),
            '\n' if attribute => out.push_str("&#10;"),
            '\r' => out.push_str("&#13;"),
            c => out.push(c),
        }
    }
}

fn serialize_element(out: &mut String, el: &XmlElement) {
    out.push('<');
    out.push_str(&el.name);
    for (n, v) in &el.attributes {
        out.push(' ');
        out.push_str(n);
        out.push_str("=\"");
        escape_into(out, v, true);
        out.push('"');
    }
    if el.children.is_empty() {
        out.push_str("/>");
        return;
    }
    out.push('>');
    for child in &el.children {
        match child {
            XmlNode::Element(e) => serialize_element(out, e),
            XmlNode::Text(t) => {
                if (t.contains('<') || t.contains('&')) && !t.contains("]]>") && !t.contains('\r') {
                    out.push_str("<![CDATA[");
                    out.push_str(t);
                    out.push_str("]]>");
                } else {
                    escape_into(out, t, false);
                }
            }
        }
    }
    out.push_str("</");
    out.push_str(&el.name);
    out.push('>');
}

/// Canonical form of the root element: no declaration, no DOCTYPE, no
/// comments, text with markup characters as CDATA.
pub fn serialize_xml_canonical(doc: &XmlDocument) -> Vec<u8> {
    let mut out = String::new();
    serialize_element(&mut out, &doc.root);
    out.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    const PAYLOAD: &str = "<script>alert(document.cookie)</script>";

    #[test]
    fn simple_tree() {
        let d = parse_xml_strict(b"<a><field1>value1</field1></a>").unwrap();
        assert_eq!(collect_text_fields(&d), vec![("a/field1".into(), "value1".into())]);
        assert!(!d.has_doctype);
    }

    #[test]
    fn attribute_fields_come_first() {
        let d = parse_xml_strict(b"<f attr=\"history\">hi</f>").unwrap();
        assert_eq!(
            collect_text_fields(&d),
            vec![("f/@attr".into(), "history".into()), ("f".into(), "hi".into())]
        );
        assert!(collect_text_fields(&parse_xml_strict(b"<e/>").unwrap()).is_empty());
    }

    #[test]
    fn stray_bracket_after_doctype() {
        let body = b"<!DOCTYPE BOOK [<!ELEMENT BOOK ANY>]><BOOK><field1>value1</field1>]</BOOK>";
        assert!(parse_xml_strict(body).is_err());
        let p = XmlLeniency {
            tolerate_stray_bracket_after_doctype: true,
            ..XmlLeniency::strict()
        };
        let d = parse_xml_lenient(body, &p).unwrap();
        assert!(d.has_doctype);
        assert_eq!(collect_text_fields(&d), vec![("BOOK/field1".into(), "value1".into())]);
    }

    #[test]
    fn junk_before_close_tag() {
        let body = format!("<genre:schema><field1><![CDATA[{PAYLOAD}]]></field1>j</genre:schema>");
        assert!(parse_xml_strict(body.as_bytes()).is_err());
        let p = XmlLeniency {
            tolerate_junk_before_close_tag: true,
            ..XmlLeniency::strict()
        };
        let d = parse_xml_lenient(body.as_bytes(), &p).unwrap();
        let f = collect_text_fields(&d);
        assert_eq!(f[0], ("genre:schema/field1".into(), PAYLOAD.into()));
    }

    #[test]
    fn misplaced_field() {
        let body = b"value1<a><field1>value1</field1></a>";
        assert!(parse_xml_strict(body).is_err());
        let p = XmlLeniency {
            tolerate_text_outside_root: true,
            ..XmlLeniency::strict()
        };
        let d = parse_xml_lenient(body, &p).unwrap();
        assert_eq!(d.outside, vec![XmlNode::Text("value1".into())]);
        assert_eq!(collect_text_fields(&d)[0], ("#outside".into(), "value1".into()));
    }

    #[test]
    fn extra_field_after_root() {
        let body = b"<a><field1>value1</field1></a><field2 attr=\"history\">hi</field2>";
        assert!(parse_xml_strict(body).is_err());
        let p = XmlLeniency {
            tolerate_text_outside_root: true,
            ..XmlLeniency::strict()
        };
        let d = parse_xml_lenient(body, &p).unwrap();
        assert_eq!(
            collect_text_fields(&d)[1..],
            [
                ("#outside/field2/@attr".to_string(), "history".to_string()),
                ("#outside/field2".into(), "hi".into())
            ]
        );
    }

    #[test]
    fn duplicate_siblings() {
        let body = b"<a><f>1</f><f>2</f></a>";
        assert!(parse_xml_strict(body).is_err());
        let p = XmlLeniency {
            tolerate_duplicate_siblings: true,
            ..XmlLeniency::strict()
        };
        assert_eq!(collect_text_fields(&parse_xml_lenient(body, &p).unwrap()).len(), 2);
    }

    #[test]
    fn strict_rejections() {
        for bad in [
            &b""[..],
            b"<a>",
            b"<a></b>",
            b"<a x='1' x='2'/>",
            b"<a>&foo;</a>",
            b"<a>\x00</a>",
            b"<a>]]></a>",
            b"<?pi x?><a/>",
            b"<a/>tail",
            b"<a><!-- a -- b --></a>",
            b"<a>\xff</a>",
            b"<a b=1/>",
        ] {
            assert!(parse_xml_strict(bad).is_err(), "{:?}", String::from_utf8_lossy(bad));
        }
    }

    #[test]
    fn references_and_normalization() {
        let d = parse_xml_strict(b"<?xml version=\"1.0\"?>\n<!-- c --><a t=\"x\ty\">&lt;&#65;&#x42;\r\nz</a>\n").unwrap();
        assert_eq!(d.root.attributes[0].1, "x y");
        assert_eq!(d.root.children, vec![XmlNode::Text("<AB\nz".into())]);
    }

    #[test]
    fn canonical_form_round_trips() {
        let body = format!("<?xml version=\"1.0\"?>\n<root>\n  <field1><![CDATA[{PAYLOAD}]]></field1>\n  <e a=\"&quot;\"/>\n</root>");
        let d = parse_xml_strict(body.as_bytes()).unwrap();
        let c = serialize_xml_canonical(&d);
        assert_eq!(
            String::from_utf8(c.clone()).unwrap(),
            format!("<root><field1><![CDATA[{PAYLOAD}]]></field1><e a=\"&quot;\"/></root>")
        );
        let again = parse_xml_strict(&c).unwrap();
        assert_eq!(again.root, d.root);
    }
}
