use super::wire::{json_member_names, WireView};
use super::{Edit, MutationClass, Mutator};

pub(super) fn mutators() -> Vec<Box<dyn Mutator>> {
    vec![
        Box::new(ContentTypeRemoval),
        Box::new(FieldWrapperManipulation),
        Box::new(DoubleQuoteReplacement),
        Box::new(FieldNameHack),
        Box::new(ContentTypeParameterManipulation),
    ]
}

/// Deletes the whole Content-Type header line.
struct ContentTypeRemoval;

impl Mutator for ContentTypeRemoval {
    fn class(&self) -> MutationClass {
        MutationClass::ContentTypeRemoval
    }

    fn candidate_edits(&self, view: &WireView, _choice: &[u8]) -> Vec<Edit> {
        view.content_type_line()
            .map(|line| Edit::delete(&view.wire, line.start..line.end))
            .into_iter()
            .collect()
    }
}

fn names(view: &WireView) -> impl Iterator<Item = (usize, usize)> + '_ {
    json_member_names(view.body())
        .into_iter()
        .map(|(open, close)| (view.body_start + open, view.body_start + close))
}

/// Inserts the choice between a member name and its colon.
struct FieldWrapperManipulation;

impl Mutator for FieldWrapperManipulation {
    fn class(&self) -> MutationClass {
        MutationClass::FieldWrapperManipulation
    }

    fn candidate_edits(&self, view: &WireView, choice: &[u8]) -> Vec<Edit> {
        if choice.is_empty() {
            return Vec::new();
        }
        names(view).map(|(_, close)| Edit::insert(close + 1, choice)).collect()
    }
}

/// Overwrites the closing quote of a member name.
struct DoubleQuoteReplacement;

impl Mutator for DoubleQuoteReplacement {
    fn class(&self) -> MutationClass {
        MutationClass::DoubleQuoteReplacement
    }

    fn candidate_edits(&self, view: &WireView, choice: &[u8]) -> Vec<Edit> {
        names(view)
            .map(|(_, close)| Edit::replace(&view.wire, close..close + 1, choice))
            .collect()
    }
}

/// Overwrites the second character of a member name.
struct FieldNameHack;

impl Mutator for FieldNameHack {
    fn class(&self) -> MutationClass {
        MutationClass::FieldNameHack
    }

    fn candidate_edits(&self, view: &WireView, choice: &[u8]) -> Vec<Edit> {
        names(view)
            .filter(|&(open, close)| close > open + 2)
            .map(|(open, _)| Edit::replace(&view.wire, open + 2..open + 3, choice))
            .collect()
    }
}

/// Deletes or overwrites the hyphen of the `Content-Type` header name.
struct ContentTypeParameterManipulation;

impl Mutator for ContentTypeParameterManipulation {
    fn class(&self) -> MutationClass {
        MutationClass::ContentTypeParameterManipulation
    }

    fn candidate_edits(&self, view: &WireView, choice: &[u8]) -> Vec<Edit> {
        let Some(line) = view.content_type_line() else {
            return Vec::new();
        };
        (line.start..line.name_end)
            .filter(|&i| view.wire[i] == b'-')
            .map(|i| Edit::replace(&view.wire, i..i + 1, choice))
            .collect()
    }
}
