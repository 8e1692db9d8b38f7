use super::wire::{xml_landmarks, WireView};
use super::{Edit, MutationClass, Mutator};

pub(super) fn mutators() -> Vec<Box<dyn Mutator>> {
    vec![
        Box::new(ExtraFieldAddition),
        Box::new(DoctypeClosureConfusion),
        Box::new(SchemaClosureManipulation),
        Box::new(NewlineAbuse),
        Box::new(ContentTypeHeaderParameterRemoval),
        Box::new(ContentTypeHeaderReplacement),
        Box::new(MisplacedField),
    ]
}

fn or_default<'a>(choice: &'a [u8], default: &'a [u8]) -> &'a [u8] {
    if choice.is_empty() {
        default
    } else {
        choice
    }
}

/// Appends an element after the root element's end tag.
struct ExtraFieldAddition;

impl Mutator for ExtraFieldAddition {
    fn class(&self) -> MutationClass {
        MutationClass::ExtraFieldAddition
    }

    fn candidate_edits(&self, view: &WireView, choice: &[u8]) -> Vec<Edit> {
        let text = or_default(choice, b"<field2 attr=\"history\">hi</field2>");
        xml_landmarks(view.body())
            .root_end
            .map(|end| Edit::insert(view.body_start + end, text))
            .into_iter()
            .collect()
    }
}

/// Puts a stray `]` in front of the root element's end tag.
struct DoctypeClosureConfusion;

impl Mutator for DoctypeClosureConfusion {
    fn class(&self) -> MutationClass {
        MutationClass::DoctypeClosureConfusion
    }

    fn candidate_edits(&self, view: &WireView, choice: &[u8]) -> Vec<Edit> {
        let text = or_default(choice, b"]");
        xml_landmarks(view.body())
            .root_close
            .map(|at| Edit::insert(view.body_start + at, text))
            .into_iter()
            .collect()
    }
}

/// Inserts the choice in front of the end tag of an element that has
/// element children.
struct SchemaClosureManipulation;

impl Mutator for SchemaClosureManipulation {
    fn class(&self) -> MutationClass {
        MutationClass::SchemaClosureManipulation
    }

    fn candidate_edits(&self, view: &WireView, choice: &[u8]) -> Vec<Edit> {
        let text = or_default(choice, b"j");
        xml_landmarks(view.body())
            .parent_closes
            .into_iter()
            .map(|at| Edit::insert(view.body_start + at, text))
            .collect()
    }
}

/// Inserts an empty line in front of the Content-Type header.
struct NewlineAbuse;

impl Mutator for NewlineAbuse {
    fn class(&self) -> MutationClass {
        MutationClass::NewlineAbuse
    }

    fn candidate_edits(&self, view: &WireView, choice: &[u8]) -> Vec<Edit> {
        let text = or_default(choice, b"\r\n");
        view.content_type_line()
            .map(|line| Edit::insert(line.start, text))
            .into_iter()
            .collect()
    }
}

/// Deletes `Content-Type: ` and leaves the bare media type on the line.
struct ContentTypeHeaderParameterRemoval;

impl Mutator for ContentTypeHeaderParameterRemoval {
    fn class(&self) -> MutationClass {
        MutationClass::ContentTypeHeaderParameterRemoval
    }

    fn candidate_edits(&self, view: &WireView, _choice: &[u8]) -> Vec<Edit> {
        view.content_type_line()
            .map(|line| Edit::delete(&view.wire, line.start..line.separator_end))
            .into_iter()
            .collect()
    }
}

/// Overwrites `Content-Type: ` with the media type itself.
struct ContentTypeHeaderReplacement;

impl Mutator for ContentTypeHeaderReplacement {
    fn class(&self) -> MutationClass {
        MutationClass::ContentTypeHeaderReplacement
    }

    fn candidate_edits(&self, view: &WireView, choice: &[u8]) -> Vec<Edit> {
        view.content_type_line()
            .map(|line| {
                let value = &view.wire[line.separator_end..line.value_end];
                Edit::replace(&view.wire, line.start..line.separator_end, or_default(choice, value))
            })
            .into_iter()
            .collect()
    }
}

/// Moves one run of character data in front of the root element.
struct MisplacedField;

impl Mutator for MisplacedField {
    fn class(&self) -> MutationClass {
        MutationClass::MisplacedField
    }

    fn candidate_edits(&self, view: &WireView, _choice: &[u8]) -> Vec<Edit> {
        let lm = xml_landmarks(view.body());
        let Some(root) = lm.root_start else {
            return Vec::new();
        };
        let base = view.body_start;
        let body = view.body();
        lm.text_runs
            .into_iter()
            .filter(|&(start, _)| start > root)
            .map(|(start, end)| {
                let mut inserted = body[start..end].to_vec();
                inserted.extend_from_slice(&body[root..start]);
                Edit::replace(&view.wire, base + root..base + end, inserted)
            })
            .collect()
    }
}
