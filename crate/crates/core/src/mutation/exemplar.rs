//! One reference mutant per class, on the seed shape that class is usually
//! shown against.

use super::seed::{SeedSpec, SQLI_PAYLOAD, XSS_PAYLOAD};
use super::{MutationClass, MutationSpec};

/// Seed and spec of the reference mutant for `class`.
pub fn exemplar(class: MutationClass) -> (SeedSpec, MutationSpec) {
    use MutationClass::*;
    let mut seed = SeedSpec::new(class.content_kind(), XSS_PAYLOAD);
    let layout = &mut seed.layout;
    let spec = |site: usize, choice: &[u8]| MutationSpec::new(class, site, choice);
    let spec = match class {
        BoundaryDelimiterManipulation => {
            layout.boundary = "-boundary".into();
            spec(0, b"")
        }
        ContentDispositionDisruption | DistortedHeaderInjectionToBody => {
            layout.disposition_header = "content-disposition".into();
            spec(0, b"\x00")
        }
        ContentTypeTweakInBody | CharsetValueAlterationInBody => {
            layout.part_content_type = Some("text/plain; charset=UTF-8".into());
            spec(0, b"\x00")
        }
        HeaderSeparatorManipulationInBody => {
            layout.disposition_header = "content-disposition".into();
            seed.field_name = "f1".into();
            spec(0, b"\x00")
        }
        ContentTypeParameterTweak => spec(1, b""),
        BoundaryDelimiterRemoval => {
            layout.boundary = "-boundary".into();
            spec(1, b"")
        }
        LinefeedRemoval => {
            layout.boundary = "real".into();
            spec(0, b"")
        }
        WhitespaceAlteration => {
            layout.boundary = "real".into();
            layout.continuation_split = Some(2);
            spec(0, b"\t")
        }
        DisruptedBodyField => {
            layout.disposition_header = "content-disposition".into();
            layout.boundary = "real".into();
            layout.continuation_split = Some(2);
            spec(0, b"\x00")
        }
        BoundaryHeaderTampering => {
            layout.boundary = "value".into();
            spec(0, b";")
        }
        ExtraFieldAddition => {
            layout.xml_root = None;
            spec(0, b"")
        }
        DoctypeClosureConfusion => {
            layout.xml_root = Some("BOOK".into());
            layout.doctype = true;
            spec(0, b"")
        }
        SchemaClosureManipulation => {
            layout.xml_root = Some("genre:schema".into());
            spec(0, b"j")
        }
        NewlineAbuse | ContentTypeHeaderParameterRemoval | ContentTypeHeaderReplacement => spec(0, b""),
        MisplacedField => {
            seed.payload = SQLI_PAYLOAD.to_vec();
            seed.layout.xml_root = None;
            spec(0, b"")
        }
        ContentTypeRemoval | ContentTypeParameterManipulation => spec(0, b""),
        FieldWrapperManipulation => {
            layout.json_spaced = true;
            spec(0, b" \x00")
        }
        DoubleQuoteReplacement | FieldNameHack => {
            layout.json_spaced = true;
            spec(0, b"\x00")
        }
    };
    (seed, spec)
}
