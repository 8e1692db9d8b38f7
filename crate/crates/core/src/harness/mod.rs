//! Differential execution: one request through a WAF model and a framework
//! model, classified by what each side saw.

mod framework;
mod waf;

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::http::RawRequest;
use crate::mutation::{CorpusEntry, MutationClass};
use crate::reject::RejectReason;
use crate::rules::Verdict;

pub use framework::{
    framework_preset, framework_presets, FrameworkModel, PayloadPolicy, RecoveredField, FRAMEWORK_PRESET_NAMES,
};
pub use waf::{
    waf_preset, waf_presets, FailureMode, WafDecision, WafInspection, WafModel, FAIL_CLOSED_RULE, WAF_PRESET_NAMES,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Blocked,
    /// The WAF let the request through and the framework handed the payload
    /// to the application.
    Bypass,
    /// The WAF let the request through but the framework could not read it,
    /// or the WAF could not read it either and the payload never surfaced.
    Malformed,
    /// Both sides read the request and neither found the payload.
    BenignPass,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Blocked => "blocked",
            Outcome::Bypass => "bypass",
            Outcome::Malformed => "malformed",
            Outcome::BenignPass => "benign-pass",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffResult {
    pub outcome: Outcome,
    pub verdict: Verdict,
    pub waf_parse_failure: Option<RejectReason>,
    pub framework_error: Option<String>,
    /// Field in which the framework surfaced the payload.
    pub payload_field: Option<String>,
}

impl DiffResult {
    /// The WAF allowed the request because it could not parse the body.
    pub fn allowed_on_parse_failure(&self) -> bool {
        !self.verdict.is_block() && self.waf_parse_failure.is_some()
    }
}

pub fn run_differential(req: &RawRequest, payload: &[u8], waf: &WafModel, fw: &FrameworkModel) -> DiffResult {
    let WafDecision {
        verdict,
        parse_failure,
    } = waf.decide(req);
    let parsed = fw.parse(req);
    let payload_field = parsed
        .as_ref()
        .ok()
        .and_then(|fields| fw.find_payload(fields, payload))
        .map(|f| f.path.clone());
    let outcome = if verdict.is_block() {
        Outcome::Blocked
    } else if payload_field.is_some() {
        Outcome::Bypass
    } else if parsed.is_ok() && parse_failure.is_none() {
        Outcome::BenignPass
    } else {
        Outcome::Malformed
    };
    DiffResult {
        outcome,
        verdict,
        waf_parse_failure: parse_failure,
        framework_error: parsed.err().map(|e| e.0),
        payload_field,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatrixRow {
    pub entry_id: String,
    pub class: MutationClass,
    pub waf: String,
    pub framework: String,
    pub result: DiffResult,
}

/// Every entry against every WAF and framework model, in entry, WAF,
/// framework order regardless of how the work was scheduled.
pub fn run_matrix(entries: &[CorpusEntry], wafs: &[WafModel], frameworks: &[FrameworkModel]) -> Vec<MatrixRow> {
    let cells: Vec<(&CorpusEntry, &WafModel, &FrameworkModel)> = entries
        .iter()
        .flat_map(|e| wafs.iter().flat_map(move |w| frameworks.iter().map(move |f| (e, w, f))))
        .collect();
    cells
        .par_iter()
        .map(|&(entry, waf, fw)| MatrixRow {
            entry_id: entry.id.clone(),
            class: entry.class(),
            waf: waf.name.clone(),
            framework: fw.name.clone(),
            result: run_differential(&entry.request, entry.payload(), waf, fw),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mutation::{apply_mutation, exemplar, generate_seed, ContentKind, SeedSpec, XSS_PAYLOAD};

    fn exemplar_mutant(class: MutationClass) -> (RawRequest, Vec<u8>) {
        let (seed, spec) = exemplar(class);
        let req = apply_mutation(&generate_seed(&seed).unwrap(), &spec).unwrap().request;
        (req, seed.payload)
    }

    #[test]
    fn seed_is_blocked() {
        let seed = generate_seed(&SeedSpec::new(ContentKind::Multipart, XSS_PAYLOAD)).unwrap();
        let waf = waf_preset("strict-fail-open").unwrap();
        let fw = framework_preset("permissive").unwrap();
        assert_eq!(run_differential(&seed, XSS_PAYLOAD, &waf, &fw).outcome, Outcome::Blocked);
    }

    #[test]
    fn every_exemplar_bypasses_some_framework() {
        let waf = waf_preset("strict-fail-open").unwrap();
        for &class in MutationClass::ALL {
            let (req, payload) = exemplar_mutant(class);
            let hits: Vec<String> = framework_presets()
                .iter()
                .filter(|fw| run_differential(&req, &payload, &waf, fw).outcome == Outcome::Bypass)
                .map(|fw| fw.name.clone())
                .collect();
            assert!(!hits.is_empty(), "{class} bypasses nothing");
        }
    }

    #[test]
    fn fail_closed_never_bypasses() {
        let waf = waf_preset("strict-fail-closed").unwrap();
        for &class in MutationClass::ALL {
            let (req, payload) = exemplar_mutant(class);
            for fw in framework_presets() {
                let r = run_differential(&req, &payload, &waf, &fw);
                assert_ne!(r.outcome, Outcome::Bypass, "{class} {}", fw.name);
            }
        }
    }

    #[test]
    fn benign_pass_when_payload_is_gone() {
        let seed = generate_seed(&SeedSpec::new(ContentKind::Json, b"harmless")).unwrap();
        let waf = waf_preset("strict-fail-open").unwrap();
        let fw = framework_preset("strict-equivalent").unwrap();
        assert_eq!(run_differential(&seed, XSS_PAYLOAD, &waf, &fw).outcome, Outcome::BenignPass);
    }

    #[test]
    fn matrix_order_is_canonical() {
        let corpus = crate::mutation::generate_corpus(&crate::mutation::CorpusOptions {
            per_class: 1,
            ..Default::default()
        });
        let wafs = waf_presets();
        let fws = framework_presets();
        let rows = run_matrix(&corpus, &wafs, &fws);
        assert_eq!(rows.len(), corpus.len() * wafs.len() * fws.len());
        assert_eq!(rows[0].entry_id, corpus[0].id);
        assert_eq!(rows[1].framework, fws[1].name);
        assert_eq!(rows[fws.len()].waf, wafs[1].name);
        assert_eq!(rows, run_matrix(&corpus, &wafs, &fws));
    }
}
