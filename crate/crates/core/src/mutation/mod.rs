//! Grammar-aware mutation of seed requests.
//!
//! Each mutation class rewrites one site of the serialized request with a
//! single splice. Mutants are re-read structurally and get their
//! Content-Length recomputed so the splice is the only divergence a body
//! parser sees.

mod corpus;
mod exemplar;
mod json;
mod multipart;
mod seed;
pub mod wire;
mod xml;

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{parse_raw_request, RawRequest, StructuralError};
use wire::WireView;

pub use corpus::{
    generate_corpus, read_corpus, write_corpus, CorpusEntry, CorpusError, CorpusOptions, ManifestRecord,
};
pub use exemplar::exemplar;
pub use seed::{
    generate_seed, payload_for_index, rewrite_to_continuation, seed_hash, SeedError, SeedLayout, SeedSpec,
    SQLI_PAYLOAD, XSS_PAYLOAD,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContentKind {
    Multipart,
    Xml,
    Json,
}

impl ContentKind {
    pub fn media_type(self) -> &'static str {
        match self {
            ContentKind::Multipart => "multipart/form-data",
            ContentKind::Xml => "application/xml",
            ContentKind::Json => "application/json",
        }
    }
}

impl fmt::Display for ContentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContentKind::Multipart => "multipart",
            ContentKind::Xml => "xml",
            ContentKind::Json => "json",
        })
    }
}

macro_rules! mutation_classes {
    ($($variant:ident => $name:literal, $kind:ident;)*) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "kebab-case")]
        pub enum MutationClass {
            $($variant,)*
        }

        impl MutationClass {
            pub const ALL: &'static [MutationClass] = &[$(MutationClass::$variant,)*];

            pub fn name(self) -> &'static str {
                match self {
                    $(MutationClass::$variant => $name,)*
                }
            }

            pub fn content_kind(self) -> ContentKind {
                match self {
                    $(MutationClass::$variant => ContentKind::$kind,)*
                }
            }
        }
    };
}

mutation_classes! {
    BoundaryDelimiterManipulation => "boundary-delimiter-manipulation", Multipart;
    ContentDispositionDisruption => "content-disposition-disruption", Multipart;
    DistortedHeaderInjectionToBody => "distorted-header-injection-to-body", Multipart;
    ContentTypeTweakInBody => "content-type-tweak-in-body", Multipart;
    CharsetValueAlterationInBody => "charset-value-alteration-in-body", Multipart;
    HeaderSeparatorManipulationInBody => "header-separator-manipulation-in-body", Multipart;
    ContentTypeParameterTweak => "content-type-parameter-tweak", Multipart;
    BoundaryDelimiterRemoval => "boundary-delimiter-removal", Multipart;
    LinefeedRemoval => "linefeed-removal", Multipart;
    WhitespaceAlteration => "whitespace-alteration", Multipart;
    DisruptedBodyField => "disrupted-body-field", Multipart;
    BoundaryHeaderTampering => "boundary-header-tampering", Multipart;
    ExtraFieldAddition => "extra-field-addition", Xml;
    DoctypeClosureConfusion => "doctype-closure-confusion", Xml;
    SchemaClosureManipulation => "schema-closure-manipulation", Xml;
    NewlineAbuse => "newline-abuse", Xml;
    ContentTypeHeaderParameterRemoval => "content-type-header-parameter-removal", Xml;
    ContentTypeHeaderReplacement => "content-type-header-replacement", Xml;
    MisplacedField => "misplaced-field", Xml;
    ContentTypeRemoval => "content-type-removal", Json;
    FieldWrapperManipulation => "field-wrapper-manipulation", Json;
    DoubleQuoteReplacement => "double-quote-replacement", Json;
    FieldNameHack => "field-name-hack", Json;
    ContentTypeParameterManipulation => "content-type-parameter-manipulation", Json;
}

/// Control octets the corpus splices in where a class takes one.
pub const CONTROL_CHOICES: [u8; 5] = [0x00, 0x01, 0x02, 0x09, 0x0b];

fn controls() -> Vec<Vec<u8>> {
    CONTROL_CHOICES.iter().map(|&b| vec![b]).collect()
}

impl MutationClass {
    /// Only effective against a seed whose boundary uses parameter
    /// continuation.
    pub fn requires_continuation(self) -> bool {
        matches!(self, MutationClass::WhitespaceAlteration | MutationClass::DisruptedBodyField)
    }

    /// Byte choices the corpus draws from. An empty choice selects the
    /// class's deleting or fixed-text form.
    pub fn byte_choices(self) -> Vec<Vec<u8>> {
        use MutationClass::*;
        let mut with_empty = vec![Vec::new()];
        match self {
            BoundaryDelimiterManipulation | ContentTypeParameterTweak => {
                with_empty.extend(controls());
                with_empty
            }
            CharsetValueAlterationInBody => {
                let mut c = controls();
                c.push(b"U".to_vec());
                c
            }
            BoundaryHeaderTampering => {
                let mut c = vec![b";".to_vec()];
                c.extend(controls());
                c
            }
            WhitespaceAlteration => vec![b"\t".to_vec(), vec![0x0b]],
            ExtraFieldAddition => vec![b"<field2 attr=\"history\">hi</field2>".to_vec()],
            DoctypeClosureConfusion => vec![b"]".to_vec()],
            SchemaClosureManipulation => vec![b"j".to_vec(), b"<field1>value1</field1>".to_vec()],
            NewlineAbuse => vec![b"\r\n".to_vec()],
            ContentTypeParameterManipulation => vec![Vec::new(), b" ".to_vec()],
            BoundaryDelimiterRemoval
            | LinefeedRemoval
            | ContentTypeHeaderParameterRemoval
            | ContentTypeHeaderReplacement
            | MisplacedField
            | ContentTypeRemoval => with_empty,
            ContentDispositionDisruption
            | DistortedHeaderInjectionToBody
            | ContentTypeTweakInBody
            | HeaderSeparatorManipulationInBody
            | DisruptedBodyField
            | FieldWrapperManipulation
            | DoubleQuoteReplacement
            | FieldNameHack => controls(),
        }
    }

    /// Seed shape the corpus mutates for this class.
    pub fn seed_layout(self) -> SeedLayout {
        use MutationClass::*;
        let mut layout = SeedLayout::default();
        match self {
            ContentTypeTweakInBody | CharsetValueAlterationInBody => {
                layout.part_content_type = Some("text/plain; charset=UTF-8".into());
            }
            WhitespaceAlteration | DisruptedBodyField => {
                layout.boundary = "real-boundary".into();
                layout.continuation_split = Some(5);
            }
            DoctypeClosureConfusion => {
                layout.xml_root = Some("BOOK".into());
                layout.doctype = true;
            }
            _ => {}
        }
        layout
    }

    /// The edit relocates the payload instead of leaving it in place.
    pub fn moves_payload(self) -> bool {
        self == MutationClass::MisplacedField
    }
}

impl fmt::Display for MutationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown mutation class `{0}`")]
pub struct UnknownClass(pub String);

impl FromStr for MutationClass {
    type Err = UnknownClass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MutationClass::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| UnknownClass(s.to_string()))
    }
}

pub(crate) mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        hex::decode(text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MutationSpec {
    pub class: MutationClass,
    pub site_index: usize,
    #[serde(with = "hex_bytes")]
    pub byte_choice: Vec<u8>,
}

impl MutationSpec {
    pub fn new(class: MutationClass, site_index: usize, byte_choice: impl Into<Vec<u8>>) -> Self {
        Self {
            class,
            site_index,
            byte_choice: byte_choice.into(),
        }
    }

    pub fn requires_continuation(&self) -> bool {
        self.class.requires_continuation()
    }
}

impl fmt::Display for MutationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.class, self.site_index)?;
        if !self.byte_choice.is_empty() {
            write!(f, "[{}]", hex::encode(&self.byte_choice))?;
        }
        Ok(())
    }
}

/// Replace `removed` at `offset` with `inserted`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edit {
    pub offset: usize,
    #[serde(with = "hex_bytes")]
    pub removed: Vec<u8>,
    #[serde(with = "hex_bytes")]
    pub inserted: Vec<u8>,
}

impl Edit {
    pub fn insert(offset: usize, inserted: impl Into<Vec<u8>>) -> Self {
        Self {
            offset,
            removed: Vec::new(),
            inserted: inserted.into(),
        }
    }

    pub fn replace(wire: &[u8], range: std::ops::Range<usize>, inserted: impl Into<Vec<u8>>) -> Self {
        Self {
            offset: range.start,
            removed: wire[range].to_vec(),
            inserted: inserted.into(),
        }
    }

    pub fn delete(wire: &[u8], range: std::ops::Range<usize>) -> Self {
        Self::replace(wire, range, Vec::new())
    }

    pub fn apply(&self, wire: &[u8]) -> Vec<u8> {
        debug_assert_eq!(&wire[self.offset..self.offset + self.removed.len()], &self.removed[..]);
        let mut out = Vec::with_capacity(wire.len() + self.inserted.len());
        out.extend_from_slice(&wire[..self.offset]);
        out.extend_from_slice(&self.inserted);
        out.extend_from_slice(&wire[self.offset + self.removed.len()..]);
        out
    }

    pub fn revert(&self, mutated: &[u8]) -> Vec<u8> {
        Edit {
            offset: self.offset,
            removed: self.inserted.clone(),
            inserted: self.removed.clone(),
        }
        .apply(mutated)
    }

    pub fn removed_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.removed.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MutationError {
    #[error("{class} has {available} site(s) for this byte choice; index {site_index} is out of range")]
    Inapplicable {
        class: MutationClass,
        site_index: usize,
        available: usize,
    },
    #[error("{class} expects a {expected} seed, not {found}")]
    WrongContentKind {
        class: MutationClass,
        expected: ContentKind,
        found: String,
    },
    #[error("mutant no longer parses as a request: {0}")]
    Unparseable(#[from] StructuralError),
}

/// One mutation class as a splice strategy.
pub trait Mutator: Send + Sync {
    fn class(&self) -> MutationClass;

    /// Every applicable splice for `choice`, ordered by offset.
    fn candidate_edits(&self, view: &WireView, choice: &[u8]) -> Vec<Edit>;
}

fn registry() -> &'static [Box<dyn Mutator>] {
    static REGISTRY: OnceLock<Vec<Box<dyn Mutator>>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut all = multipart::mutators();
        all.extend(xml::mutators());
        all.extend(json::mutators());
        all.sort_by_key(|m| m.class());
        all
    })
}

pub fn mutator_for(class: MutationClass) -> &'static dyn Mutator {
    let all = registry();
    let idx = all
        .binary_search_by_key(&class, |m| m.class())
        .expect("every class has a registered mutator");
    all[idx].as_ref()
}

fn effective_edits(view: &WireView, class: MutationClass, choice: &[u8]) -> Vec<Edit> {
    let mut edits = mutator_for(class).candidate_edits(view, choice);
    edits.retain(|e| e.removed != e.inserted);
    edits
}

/// Applicable splices for `class` and `choice`; a spec's site index points
/// into this list.
pub fn candidate_edits(req: &RawRequest, class: MutationClass, choice: &[u8]) -> Vec<Edit> {
    effective_edits(&WireView::new(req), class, choice)
}

/// Where in the request a splice lands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SiteKind {
    GlobalHeader,
    PartHeader,
    BodyFraming,
    BodyContent,
}

impl fmt::Display for SiteKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SiteKind::GlobalHeader => "global-header",
            SiteKind::PartHeader => "part-header",
            SiteKind::BodyFraming => "body-framing",
            SiteKind::BodyContent => "body-content",
        })
    }
}

impl MutationClass {
    fn body_site_kind(self) -> SiteKind {
        use MutationClass::*;
        match self {
            BoundaryDelimiterManipulation | BoundaryDelimiterRemoval | LinefeedRemoval => SiteKind::BodyFraming,
            ContentDispositionDisruption
            | DistortedHeaderInjectionToBody
            | ContentTypeTweakInBody
            | CharsetValueAlterationInBody
            | HeaderSeparatorManipulationInBody
            | DisruptedBodyField => SiteKind::PartHeader,
            _ => SiteKind::BodyContent,
        }
    }
}

/// Kind of location `spec` touches in `req`, or `None` when it does not
/// apply.
pub fn site_kind(req: &RawRequest, spec: &MutationSpec) -> Option<SiteKind> {
    let view = WireView::new(req);
    let edit = effective_edits(&view, spec.class, &spec.byte_choice)
        .into_iter()
        .nth(spec.site_index)?;
    Some(if edit.offset < view.body_start {
        SiteKind::GlobalHeader
    } else {
        spec.class.body_site_kind()
    })
}

/// A mutant plus the splice that produced it, with offsets into the
/// pre-mutation serialization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mutant {
    pub request: RawRequest,
    pub edit: Edit,
}

fn declared_kind(req: &RawRequest) -> Option<ContentKind> {
    let ct = String::from_utf8_lossy(req.content_type()?).to_ascii_lowercase();
    let essence = ct.split(';').next().unwrap_or("").trim().to_string();
    if essence.starts_with("multipart/") {
        Some(ContentKind::Multipart)
    } else if essence.ends_with("json") {
        Some(ContentKind::Json)
    } else if essence.ends_with("xml") {
        Some(ContentKind::Xml)
    } else {
        None
    }
}

pub fn apply_mutation(req: &RawRequest, spec: &MutationSpec) -> Result<Mutant, MutationError> {
    if let Some(kind) = declared_kind(req) {
        if kind != spec.class.content_kind() {
            return Err(MutationError::WrongContentKind {
                class: spec.class,
                expected: spec.class.content_kind(),
                found: kind.to_string(),
            });
        }
    }
    let view = WireView::new(req);
    let edits = effective_edits(&view, spec.class, &spec.byte_choice);
    let edit = edits
        .get(spec.site_index)
        .cloned()
        .ok_or(MutationError::Inapplicable {
            class: spec.class,
            site_index: spec.site_index,
            available: edits.len(),
        })?;
    let mut request = parse_raw_request(&edit.apply(&view.wire))?;
    request.recompute_content_length();
    Ok(Mutant { request, edit })
}

/// Applies `specs` in order, each to the previous mutant.
pub fn apply_stack(req: &RawRequest, specs: &[MutationSpec]) -> Result<RawRequest, MutationError> {
    let mut current = req.clone();
    for spec in specs {
        current = apply_mutation(&current, spec)?.request;
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_table_is_complete() {
        assert_eq!(MutationClass::ALL.len(), 24);
        let count = |k| MutationClass::ALL.iter().filter(|c| c.content_kind() == k).count();
        assert_eq!(count(ContentKind::Multipart), 12);
        assert_eq!(count(ContentKind::Xml), 7);
        assert_eq!(count(ContentKind::Json), 5);
        for &c in MutationClass::ALL {
            assert_eq!(c.name().parse::<MutationClass>(), Ok(c));
            assert_eq!(mutator_for(c).class(), c);
            assert!(!c.byte_choices().is_empty());
        }
    }

    #[test]
    fn continuation_flags() {
        let flagged: Vec<_> = MutationClass::ALL
            .iter()
            .filter(|c| c.requires_continuation())
            .collect();
        assert_eq!(
            flagged,
            vec![&MutationClass::WhitespaceAlteration, &MutationClass::DisruptedBodyField]
        );
    }

    #[test]
    fn edit_round_trip() {
        let wire = b"abcdef";
        let e = Edit::replace(wire, 2..4, b"XYZ".to_vec());
        let m = e.apply(wire);
        assert_eq!(m, b"abXYZef");
        assert_eq!(e.revert(&m), wire);
    }

    #[test]
    fn spec_serde_uses_hex() {
        let spec = MutationSpec::new(MutationClass::FieldNameHack, 0, vec![0x00]);
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(json, r#"{"class":"field-name-hack","site_index":0,"byte_choice":"00"}"#);
        assert_eq!(serde_json::from_str::<MutationSpec>(&json).unwrap(), spec);
    }

    #[test]
    fn out_of_range_site_is_inapplicable() {
        let seed = generate_seed(&SeedSpec::new(ContentKind::Json, XSS_PAYLOAD)).unwrap();
        let err = apply_mutation(&seed, &MutationSpec::new(MutationClass::FieldNameHack, 9, vec![0])).unwrap_err();
        assert!(matches!(err, MutationError::Inapplicable { available: 1, .. }));
    }

    #[test]
    fn kind_mismatch_is_reported() {
        let seed = generate_seed(&SeedSpec::new(ContentKind::Json, XSS_PAYLOAD)).unwrap();
        let err = apply_mutation(&seed, &MutationSpec::new(MutationClass::MisplacedField, 0, vec![])).unwrap_err();
        assert!(matches!(err, MutationError::WrongContentKind { .. }));
    }

    #[test]
    fn exemplars_apply_and_keep_the_payload() {
        for &class in MutationClass::ALL {
            let (seed, spec) = exemplar(class);
            let req = generate_seed(&seed).unwrap();
            let mutant = apply_mutation(&req, &spec).unwrap_or_else(|e| panic!("{class}: {e}"));
            let wire = mutant.request.serialize(false);
            let hits = wire.windows(seed.payload.len()).filter(|w| *w == seed.payload).count();
            assert_eq!(hits, 1, "{class}");
        }
    }

    #[test]
    fn site_kinds_follow_the_edit_offset() {
        let kind_of = |class| {
            let (seed, spec) = exemplar(class);
            site_kind(&generate_seed(&seed).unwrap(), &spec).unwrap()
        };
        assert_eq!(kind_of(MutationClass::LinefeedRemoval), SiteKind::GlobalHeader);
        assert_eq!(kind_of(MutationClass::ContentTypeTweakInBody), SiteKind::PartHeader);
        assert_eq!(kind_of(MutationClass::BoundaryDelimiterRemoval), SiteKind::BodyFraming);
        assert_eq!(kind_of(MutationClass::FieldNameHack), SiteKind::BodyContent);
        let (seed, _) = exemplar(MutationClass::LinefeedRemoval);
        let body_lf = MutationSpec::new(MutationClass::LinefeedRemoval, 1, b"");
        assert_eq!(site_kind(&generate_seed(&seed).unwrap(), &body_lf), Some(SiteKind::BodyFraming));
    }
}
