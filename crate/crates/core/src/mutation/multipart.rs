use super::wire::{find_ignore_case, WireView};
use super::{Edit, MutationClass, Mutator};
use crate::http::is_tchar;

pub(super) fn mutators() -> Vec<Box<dyn Mutator>> {
    vec![
        Box::new(BoundaryDelimiterManipulation),
        Box::new(ContentDispositionDisruption),
        Box::new(DistortedHeaderInjectionToBody),
        Box::new(ContentTypeTweakInBody),
        Box::new(CharsetValueAlterationInBody),
        Box::new(HeaderSeparatorManipulationInBody),
        Box::new(ContentTypeParameterTweak),
        Box::new(BoundaryDelimiterRemoval),
        Box::new(LinefeedRemoval),
        Box::new(WhitespaceAlteration),
        Box::new(DisruptedBodyField),
        Box::new(BoundaryHeaderTampering),
    ]
}

/// Without a choice: drop the CRLF in front of a delimiter. With one:
/// insert it right after the delimiter's leading `--`.
struct BoundaryDelimiterManipulation;

impl Mutator for BoundaryDelimiterManipulation {
    fn class(&self) -> MutationClass {
        MutationClass::BoundaryDelimiterManipulation
    }

    fn candidate_edits(&self, view: &WireView, choice: &[u8]) -> Vec<Edit> {
        let delimiters = view.delimiters();
        if choice.is_empty() {
            delimiters
                .into_iter()
                .filter(|&d| d >= view.body_start + 2 && &view.wire[d - 2..d] == b"\r\n")
                .map(|d| Edit::delete(&view.wire, d - 2..d))
                .collect()
        } else {
            delimiters.into_iter().map(|d| Edit::insert(d + 2, choice)).collect()
        }
    }
}

/// Overwrites the `t` of `form-data` in a part's Content-Disposition.
struct ContentDispositionDisruption;

impl Mutator for ContentDispositionDisruption {
    fn class(&self) -> MutationClass {
        MutationClass::ContentDispositionDisruption
    }

    fn candidate_edits(&self, view: &WireView, choice: &[u8]) -> Vec<Edit> {
        view.part_headers_named("content-disposition")
            .into_iter()
            .filter_map(|(_, value, end)| {
                let at = find_ignore_case(&view.wire[..end], b"form-data", value)? + 7;
                Some(Edit::replace(&view.wire, at..at + 1, choice))
            })
            .collect()
    }
}

/// Prepends a garbled header line to a part's header block.
struct DistortedHeaderInjectionToBody;

impl Mutator for DistortedHeaderInjectionToBody {
    fn class(&self) -> MutationClass {
        MutationClass::DistortedHeaderInjectionToBody
    }

    fn candidate_edits(&self, view: &WireView, choice: &[u8]) -> Vec<Edit> {
        let mut line = b"conten".to_vec();
        line.extend_from_slice(choice);
        line.extend_from_slice(b"-extra: something\r\n");
        view.part_header_lines()
            .into_iter()
            .filter_map(|lines| lines.first().map(|&(start, _)| Edit::insert(start, line.clone())))
            .collect()
    }
}

/// Inserts the choice right after the media type of a part's Content-Type.
struct ContentTypeTweakInBody;

impl Mutator for ContentTypeTweakInBody {
    fn class(&self) -> MutationClass {
        MutationClass::ContentTypeTweakInBody
    }

    fn candidate_edits(&self, view: &WireView, choice: &[u8]) -> Vec<Edit> {
        if choice.is_empty() {
            return Vec::new();
        }
        view.part_headers_named("content-type")
            .into_iter()
            .map(|(_, value, end)| {
                let mut at = value;
                while at < end && (is_tchar(view.wire[at]) || view.wire[at] == b'/') {
                    at += 1;
                }
                Edit::insert(at, choice)
            })
            .collect()
    }
}

/// Touches the first character of a part's charset value: a letter replaces
/// it, a control octet goes in front of it, no choice deletes it.
struct CharsetValueAlterationInBody;

impl Mutator for CharsetValueAlterationInBody {
    fn class(&self) -> MutationClass {
        MutationClass::CharsetValueAlterationInBody
    }

    fn candidate_edits(&self, view: &WireView, choice: &[u8]) -> Vec<Edit> {
        view.part_headers_named("content-type")
            .into_iter()
            .filter_map(|(_, value, end)| {
                let at = find_ignore_case(&view.wire[..end], b"charset=", value)? + 8;
                (at < end).then(|| match choice {
                    [] => Edit::delete(&view.wire, at..at + 1),
                    [c] if c.is_ascii_alphabetic() => Edit::replace(&view.wire, at..at + 1, choice),
                    _ => Edit::insert(at, choice),
                })
            })
            .collect()
    }
}

/// Inserts the choice at the end of a part header line, before its CRLF.
struct HeaderSeparatorManipulationInBody;

impl Mutator for HeaderSeparatorManipulationInBody {
    fn class(&self) -> MutationClass {
        MutationClass::HeaderSeparatorManipulationInBody
    }

    fn candidate_edits(&self, view: &WireView, choice: &[u8]) -> Vec<Edit> {
        if choice.is_empty() {
            return Vec::new();
        }
        view.part_header_lines()
            .into_iter()
            .flatten()
            .map(|(_, end)| Edit::insert(end, choice))
            .collect()
    }
}

/// Deletes one character of the `Content-Type` header name, or inserts the
/// choice in front of it.
struct ContentTypeParameterTweak;

impl Mutator for ContentTypeParameterTweak {
    fn class(&self) -> MutationClass {
        MutationClass::ContentTypeParameterTweak
    }

    fn candidate_edits(&self, view: &WireView, choice: &[u8]) -> Vec<Edit> {
        let Some(line) = view.content_type_line() else {
            return Vec::new();
        };
        (line.start..line.name_end)
            .map(|at| {
                if choice.is_empty() {
                    Edit::delete(&view.wire, at..at + 1)
                } else {
                    Edit::insert(at, choice)
                }
            })
            .collect()
    }
}

/// Deletes the dash-boundary of one delimiter.
struct BoundaryDelimiterRemoval;

impl Mutator for BoundaryDelimiterRemoval {
    fn class(&self) -> MutationClass {
        MutationClass::BoundaryDelimiterRemoval
    }

    fn candidate_edits(&self, view: &WireView, _choice: &[u8]) -> Vec<Edit> {
        let len = view.dash_boundary_len();
        view.delimiters()
            .into_iter()
            .map(|d| Edit::delete(&view.wire, d..d + len))
            .collect()
    }
}

/// Deletes the LF of a CRLF: first the Content-Type header line's, then
/// each one in the body.
struct LinefeedRemoval;

impl Mutator for LinefeedRemoval {
    fn class(&self) -> MutationClass {
        MutationClass::LinefeedRemoval
    }

    fn candidate_edits(&self, view: &WireView, _choice: &[u8]) -> Vec<Edit> {
        let mut edits = Vec::new();
        if let Some(line) = view.content_type_line() {
            if line.end - line.value_end == 2 {
                edits.push(Edit::delete(&view.wire, line.end - 1..line.end));
            }
        }
        let wire = &view.wire;
        edits.extend(
            (view.body_start + 1..wire.len())
                .filter(|&i| wire[i] == b'\n' && wire[i - 1] == b'\r')
                .map(|i| Edit::delete(wire, i..i + 1)),
        );
        edits
    }
}

/// Replaces one space of the Content-Type header line.
struct WhitespaceAlteration;

impl Mutator for WhitespaceAlteration {
    fn class(&self) -> MutationClass {
        MutationClass::WhitespaceAlteration
    }

    fn candidate_edits(&self, view: &WireView, choice: &[u8]) -> Vec<Edit> {
        let Some(line) = view.content_type_line() else {
            return Vec::new();
        };
        (line.start..line.value_end)
            .filter(|&i| view.wire[i] == b' ')
            .map(|i| Edit::replace(&view.wire, i..i + 1, choice))
            .collect()
    }
}

/// Inserts the choice before the closing quote of a part's `name` value.
struct DisruptedBodyField;

impl Mutator for DisruptedBodyField {
    fn class(&self) -> MutationClass {
        MutationClass::DisruptedBodyField
    }

    fn candidate_edits(&self, view: &WireView, choice: &[u8]) -> Vec<Edit> {
        if choice.is_empty() {
            return Vec::new();
        }
        let wire = &view.wire;
        let mut edits = Vec::new();
        for (_, value, end) in view.part_headers_named("content-disposition") {
            let mut from = value;
            while let Some(at) = find_ignore_case(&wire[..end], b"name=\"", from) {
                from = at + 6;
                if wire[at - 1].is_ascii_alphabetic() {
                    continue;
                }
                if let Some(close) = wire[from..end].iter().position(|&b| b == b'"') {
                    edits.push(Edit::insert(from + close, choice));
                }
            }
        }
        edits
    }
}

/// Inserts the choice right after a boundary parameter value in the
/// request's Content-Type.
struct BoundaryHeaderTampering;

impl Mutator for BoundaryHeaderTampering {
    fn class(&self) -> MutationClass {
        MutationClass::BoundaryHeaderTampering
    }

    fn candidate_edits(&self, view: &WireView, choice: &[u8]) -> Vec<Edit> {
        let Some(line) = view.content_type_line() else {
            return Vec::new();
        };
        if choice.is_empty() {
            return Vec::new();
        }
        let wire = &view.wire[..line.value_end];
        let mut edits = Vec::new();
        let mut from = line.separator_end;
        while let Some(at) = find_ignore_case(wire, b"boundary", from) {
            from = at + 8;
            let mut eq = from;
            if wire.get(eq) == Some(&b'*') {
                eq += 1;
                while eq < wire.len() && (wire[eq].is_ascii_digit() || wire[eq] == b'*') {
                    eq += 1;
                }
            }
            if wire.get(eq) != Some(&b'=') {
                continue;
            }
            let mut end = eq + 1;
            if wire.get(end) == Some(&b'"') {
                end += 1;
                while end < wire.len() && wire[end] != b'"' {
                    end += if wire[end] == b'\\' { 2 } else { 1 };
                }
                end = (end + 1).min(wire.len());
            } else {
                while end < wire.len() && wire[end] != b';' && wire[end] != b' ' {
                    end += 1;
                }
            }
            edits.push(Edit::insert(end, choice));
            from = end;
        }
        edits
    }
}
