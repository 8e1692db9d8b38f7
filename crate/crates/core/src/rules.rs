//! Rule-based detection in the `if <field> <operator> <value> then <action>`
//! shape, evaluated first-match-wins over the fields a parser extracted.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "name")]
pub enum FieldSelector {
    UrlParameter(String),
    Header(String),
    /// URL parameters plus every field extracted from the body.
    AnyParsedField,
    RawBody,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Operator {
    Equals,
    Contains,
    NotEqual,
    MatchesPattern,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleAction {
    Block,
    /// Stop evaluating and let the request through.
    Skip,
    Challenge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    Allow,
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldSource {
    Url,
    Header,
    Body,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InspectedField {
    pub source: FieldSource,
    pub name: Vec<u8>,
    pub value: Vec<u8>,
}

/// What a WAF model extracted from one request.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InspectionView {
    pub fields: Vec<InspectedField>,
    pub raw_body: Vec<u8>,
}

impl InspectionView {
    pub fn push(&mut self, source: FieldSource, name: impl Into<Vec<u8>>, value: impl Into<Vec<u8>>) {
        self.fields.push(InspectedField {
            source,
            name: name.into(),
            value: value.into(),
        });
    }

    pub fn body_fields(&self) -> impl Iterator<Item = &InspectedField> {
        self.fields.iter().filter(|f| f.source == FieldSource::Body)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PatternError {
    #[error("unterminated character class at {0}")]
    UnterminatedClass(usize),
    #[error("dangling escape at end of pattern")]
    DanglingEscape,
    #[error("empty pattern")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Atom {
    Byte(u8),
    Any,
    Class { negated: bool, ranges: Vec<(u8, u8)> },
}

/// A restricted pattern: literal octets, `.`, `[...]` classes with ranges
/// and negation, `\` escapes and a leading `(?i)` for ASCII
/// case-insensitivity. Matches anywhere in the subject.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    source: String,
    case_insensitive: bool,
    atoms: Vec<Atom>,
}

impl Pattern {
    pub fn compile(source: &str) -> Result<Self, PatternError> {
        let (case_insensitive, body) = match source.strip_prefix("(?i)") {
            Some(rest) => (true, rest),
            None => (false, source),
        };
        let b = body.as_bytes();
        let mut atoms = Vec::new();
        let mut i = 0;
        while i < b.len() {
            match b[i] {
                b'\\' => {
                    let c = *b.get(i + 1).ok_or(PatternError::DanglingEscape)?;
                    atoms.push(Atom::Byte(c));
                    i += 2;
                }
                b'.' => {
                    atoms.push(Atom::Any);
                    i += 1;
                }
                b'[' => {
                    let open = i;
                    i += 1;
                    let negated = b.get(i) == Some(&b'^');
                    if negated {
                        i += 1;
                    }
                    let mut ranges = Vec::new();
                    loop {
                        let lo = match b.get(i) {
                            None => return Err(PatternError::UnterminatedClass(open)),
                            Some(b']') if !ranges.is_empty() => {
                                i += 1;
                                break;
                            }
                            Some(b'\\') => {
                                i += 1;
                                *b.get(i).ok_or(PatternError::DanglingEscape)?
                            }
                            Some(&c) => c,
                        };
                        i += 1;
                        if b.get(i) == Some(&b'-') && b.get(i + 1).is_some_and(|&c| c != b']') {
                            let hi = b[i + 1];
                            ranges.push((lo.min(hi), lo.max(hi)));
                            i += 2;
                        } else {
                            ranges.push((lo, lo));
                        }
                    }
                    atoms.push(Atom::Class { negated, ranges });
                }
                c => {
                    atoms.push(Atom::Byte(c));
                    i += 1;
                }
            }
        }
        if atoms.is_empty() {
            return Err(PatternError::Empty);
        }
        Ok(Self {
            source: source.to_string(),
            case_insensitive,
            atoms,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    fn atom_matches(&self, atom: &Atom, c: u8) -> bool {
        let fold = |x: u8| if self.case_insensitive { x.to_ascii_lowercase() } else { x };
        match atom {
            Atom::Any => true,
            Atom::Byte(b) => fold(*b) == fold(c),
            Atom::Class { negated, ranges } => {
                let hit = ranges.iter().any(|&(lo, hi)| {
                    (lo..=hi).contains(&c)
                        || (self.case_insensitive
                            && ((lo..=hi).contains(&c.to_ascii_lowercase())
                                || (lo..=hi).contains(&c.to_ascii_uppercase())))
                });
                hit != *negated
            }
        }
    }

    pub fn is_match(&self, subject: &[u8]) -> bool {
        let n = self.atoms.len();
        if subject.len() < n {
            return false;
        }
        (0..=subject.len() - n).any(|s| {
            self.atoms
                .iter()
                .zip(&subject[s..s + n])
                .all(|(a, &c)| self.atom_matches(a, c))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Matcher {
    Equals(Vec<u8>),
    Contains(Vec<u8>),
    NotEqual(Vec<u8>),
    Pattern(Pattern),
}

impl Matcher {
    pub fn operator(&self) -> Operator {
        match self {
            Matcher::Equals(_) => Operator::Equals,
            Matcher::Contains(_) => Operator::Contains,
            Matcher::NotEqual(_) => Operator::NotEqual,
            Matcher::Pattern(_) => Operator::MatchesPattern,
        }
    }

    pub fn value(&self) -> &[u8] {
        match self {
            Matcher::Equals(v) | Matcher::Contains(v) | Matcher::NotEqual(v) => v,
            Matcher::Pattern(p) => p.source().as_bytes(),
        }
    }

    fn matches(&self, subject: &[u8]) -> bool {
        match self {
            Matcher::Equals(v) => subject == v.as_slice(),
            Matcher::Contains(v) => v.is_empty() || subject.windows(v.len()).any(|w| w == v.as_slice()),
            Matcher::NotEqual(v) => subject != v.as_slice(),
            Matcher::Pattern(p) => p.is_match(subject),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub id: String,
    pub selector: FieldSelector,
    pub matcher: Matcher,
    pub action: RuleAction,
}

impl Rule {
    pub fn new(id: impl Into<String>, selector: FieldSelector, matcher: Matcher, action: RuleAction) -> Self {
        Self {
            id: id.into(),
            selector,
            matcher,
            action,
        }
    }

    /// Values this rule looks at.
    fn subjects<'v>(&self, view: &'v InspectionView) -> Vec<&'v [u8]> {
        let named = |src: FieldSource, name: &str, ci: bool| {
            view.fields
                .iter()
                .filter(move |f| {
                    f.source == src
                        && if ci {
                            f.name.eq_ignore_ascii_case(name.as_bytes())
                        } else {
                            f.name == name.as_bytes()
                        }
                })
                .map(|f| f.value.as_slice())
                .collect::<Vec<_>>()
        };
        match &self.selector {
            FieldSelector::UrlParameter(n) => named(FieldSource::Url, n, false),
            FieldSelector::Header(n) => named(FieldSource::Header, n, true),
            FieldSelector::AnyParsedField => view
                .fields
                .iter()
                .filter(|f| f.source != FieldSource::Header)
                .flat_map(|f| [f.name.as_slice(), f.value.as_slice()])
                .collect(),
            FieldSelector::RawBody => vec![view.raw_body.as_slice()],
        }
    }

    pub fn matches(&self, view: &InspectionView) -> bool {
        self.subjects(view).into_iter().any(|s| self.matcher.matches(s))
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("if ")?;
        match &self.selector {
            FieldSelector::UrlParameter(n) => write!(f, "url_parameter \"{}\"", escape(n.as_bytes()))?,
            FieldSelector::Header(n) => write!(f, "header \"{}\"", escape(n.as_bytes()))?,
            FieldSelector::AnyParsedField => f.write_str("any_field")?,
            FieldSelector::RawBody => f.write_str("raw_body")?,
        }
        let op = match self.matcher.operator() {
            Operator::Equals => "equals",
            Operator::Contains => "contains",
            Operator::NotEqual => "not_equal",
            Operator::MatchesPattern => "matches",
        };
        let action = match self.action {
            RuleAction::Block => "block",
            RuleAction::Skip => "skip",
            RuleAction::Challenge => "challenge",
        };
        write!(f, " {op} \"{}\" then {action}", escape(self.matcher.value()))
    }
}

fn escape(v: &[u8]) -> String {
    let mut s = String::new();
    for &b in v {
        match b {
            b'"' => s.push_str("\\\""),
            b'\\' => s.push_str("\\\\"),
            0x20..=0x7e => s.push(b as char),
            _ => s.push_str(&format!("\\x{b:02x}")),
        }
    }
    s
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Verdict {
    pub decision: Decision,
    pub matched_rule: Option<String>,
    pub rule_action: Option<RuleAction>,
    pub inspected_fields: usize,
}

impl Verdict {
    pub fn allow(inspected_fields: usize) -> Self {
        Self {
            decision: Decision::Allow,
            matched_rule: None,
            rule_action: None,
            inspected_fields,
        }
    }

    pub fn blocked_by(rule_id: impl Into<String>, inspected_fields: usize) -> Self {
        Self {
            decision: Decision::Block,
            matched_rule: Some(rule_id.into()),
            rule_action: Some(RuleAction::Block),
            inspected_fields,
        }
    }

    pub fn is_block(&self) -> bool {
        self.decision == Decision::Block
    }
}

pub fn evaluate(rules: &[Rule], view: &InspectionView) -> Verdict {
    let inspected = view.fields.len();
    for rule in rules {
        if rule.matches(view) {
            let decision = match rule.action {
                RuleAction::Skip => Decision::Allow,
                RuleAction::Block | RuleAction::Challenge => Decision::Block,
            };
            return Verdict {
                decision,
                matched_rule: Some(rule.id.clone()),
                rule_action: Some(rule.action),
                inspected_fields: inspected,
            };
        }
    }
    Verdict::allow(inspected)
}

fn compiled(p: &str) -> Pattern {
    Pattern::compile(p).expect("built-in pattern compiles")
}

/// Stand-in signatures for the two attack payloads: a script tag and a
/// `DROP TABLE` statement, on parsed fields and on the raw body.
pub fn default_signatures() -> Vec<Rule> {
    let mut rules = field_signatures();
    rules.push(Rule::new(
        "raw-script-tag",
        FieldSelector::RawBody,
        Matcher::Contains(b"<script".to_vec()),
        RuleAction::Block,
    ));
    rules.push(Rule::new(
        "raw-drop-table",
        FieldSelector::RawBody,
        Matcher::Pattern(compiled("(?i)drop table")),
        RuleAction::Block,
    ));
    rules
}

/// The parsed-field subset of [`default_signatures`]: a WAF that only
/// inspects what its parser extracted.
pub fn field_signatures() -> Vec<Rule> {
    vec![
        Rule::new(
            "xss-script-tag",
            FieldSelector::AnyParsedField,
            Matcher::Contains(b"<script".to_vec()),
            RuleAction::Block,
        ),
        Rule::new(
            "sqli-drop-table",
            FieldSelector::AnyParsedField,
            Matcher::Pattern(compiled("(?i)drop table")),
            RuleAction::Block,
        ),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct RuleParseError {
    pub line: usize,
    pub message: String,
}

struct Lexer<'a> {
    s: &'a [u8],
    i: usize,
}

impl<'a> Lexer<'a> {
    fn ws(&mut self) {
        while self.s.get(self.i).is_some_and(|b| b.is_ascii_whitespace()) {
            self.i += 1;
        }
    }

    fn word(&mut self) -> Option<String> {
        self.ws();
        let start = self.i;
        while self
            .s
            .get(self.i)
            .is_some_and(|b| b.is_ascii_alphanumeric() || *b == b'_' || *b == b'-')
        {
            self.i += 1;
        }
        (self.i > start).then(|| String::from_utf8_lossy(&self.s[start..self.i]).to_ascii_lowercase())
    }

    fn peek_quote(&mut self) -> bool {
        self.ws();
        self.s.get(self.i) == Some(&b'"')
    }

    fn quoted(&mut self) -> Result<Vec<u8>, String> {
        if !self.peek_quote() {
            return Err("expected a quoted string".into());
        }
        self.i += 1;
        let mut out = Vec::new();
        loop {
            match self.s.get(self.i) {
                None => return Err("unterminated quoted string".into()),
                Some(b'"') => {
                    self.i += 1;
                    return Ok(out);
                }
                Some(b'\\') => {
                    match self.s.get(self.i + 1) {
                        Some(b'x') => {
                            let hex = self
                                .s
                                .get(self.i + 2..self.i + 4)
                                .and_then(|h| std::str::from_utf8(h).ok())
                                .and_then(|h| u8::from_str_radix(h, 16).ok())
                                .ok_or("invalid \\x escape")?;
                            out.push(hex);
                            self.i += 4;
                            continue;
                        }
                        Some(&c) => out.push(c),
                        None => return Err("dangling escape".into()),
                    }
                    self.i += 2;
                }
                Some(&c) => {
                    out.push(c);
                    self.i += 1;
                }
            }
        }
    }
}

fn parse_rule_line(text: &str, line: usize) -> Result<Rule, String> {
    let mut lx = Lexer { s: text.as_bytes(), i: 0 };
    if lx.word().as_deref() != Some("if") {
        return Err("rule must start with `if`".into());
    }
    let sel = lx.word().ok_or("missing field selector")?;
    let selector = match sel.replace('-', "_").as_str() {
        "url_parameter" | "url_param" => FieldSelector::UrlParameter(String::from_utf8(lx.quoted()?).map_err(|_| "non-UTF-8 name")?),
        "header" => FieldSelector::Header(String::from_utf8(lx.quoted()?).map_err(|_| "non-UTF-8 name")?),
        "any_field" | "any_parsed_field" => FieldSelector::AnyParsedField,
        "raw_body" => FieldSelector::RawBody,
        other => return Err(format!("unknown field selector `{other}`")),
    };
    let op = lx.word().ok_or("missing operator")?;
    let value = lx.quoted()?;
    let matcher = match op.replace('-', "_").as_str() {
        "equals" => Matcher::Equals(value),
        "contains" => Matcher::Contains(value),
        "not_equal" | "not_equals" => Matcher::NotEqual(value),
        "matches" | "matches_pattern" => {
            let src = String::from_utf8(value).map_err(|_| "non-UTF-8 pattern")?;
            Matcher::Pattern(Pattern::compile(&src).map_err(|e| e.to_string())?)
        }
        other => return Err(format!("unknown operator `{other}`")),
    };
    if lx.word().as_deref() != Some("then") {
        return Err("expected `then`".into());
    }
    let action = match lx.word().as_deref() {
        Some("block") => RuleAction::Block,
        Some("skip") => RuleAction::Skip,
        Some("challenge") => RuleAction::Challenge,
        _ => return Err("expected block, skip or challenge".into()),
    };
    lx.ws();
    if lx.i != lx.s.len() {
        return Err("trailing text after action".into());
    }
    Ok(Rule::new(format!("rule-{line}"), selector, matcher, action))
}

/// Parses a rule file: one rule per line, `#` starts a comment line.
pub fn parse_rules(text: &str) -> Result<Vec<Rule>, RuleParseError> {
    let mut rules = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        rules.push(parse_rule_line(line, k + 1).map_err(|message| RuleParseError { line: k + 1, message })?);
    }
    Ok(rules)
}

impl FromStr for Rule {
    type Err = RuleParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_rule_line(s.trim(), 1).map_err(|message| RuleParseError { line: 1, message })
    }
}
