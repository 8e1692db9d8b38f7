//! Reduction of bypassing mutation stacks to their minimal causes, and
//! grouping of the results into unique bypasses.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::{run_differential, run_matrix, FrameworkModel, Outcome, WafModel};
use crate::http::RawRequest;
use crate::mutation::{apply_stack, seed_hash, site_kind, CorpusEntry, MutationClass, MutationSpec, SiteKind};

/// Largest stack searched exhaustively; longer stacks use greedy ablation.
pub const EXHAUSTIVE_LIMIT: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MinimizeError {
    #[error("the full mutation set does not bypass")]
    NotABypass,
    #[error("the unmutated seed already bypasses")]
    SeedBypasses,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClassifyError {
    #[error("empty mutation set")]
    Empty,
    #[error("minimal set spans several classes: {0:?}")]
    AmbiguousClass(Vec<MutationClass>),
}

fn bypasses(seed: &RawRequest, specs: &[MutationSpec], payload: &[u8], waf: &WafModel, fw: &FrameworkModel) -> bool {
    apply_stack(seed, specs)
        .map(|req| run_differential(&req, payload, waf, fw).outcome == Outcome::Bypass)
        .unwrap_or(false)
}

fn subset(specs: &[MutationSpec], mask: usize) -> Vec<MutationSpec> {
    specs
        .iter()
        .enumerate()
        .filter(|(i, _)| mask & (1 << i) != 0)
        .map(|(_, s)| s.clone())
        .collect()
}

/// Minimal subsets of `specs` (kept in their original order) that still
/// bypass when applied to `seed`.
pub fn minimize(
    seed: &RawRequest,
    specs: &[MutationSpec],
    payload: &[u8],
    waf: &WafModel,
    fw: &FrameworkModel,
) -> Result<Vec<Vec<MutationSpec>>, MinimizeError> {
    if bypasses(seed, &[], payload, waf, fw) {
        return Err(MinimizeError::SeedBypasses);
    }
    if !bypasses(seed, specs, payload, waf, fw) {
        return Err(MinimizeError::NotABypass);
    }
    if specs.len() > EXHAUSTIVE_LIMIT {
        let mut kept = specs.to_vec();
        let mut i = 0;
        while i < kept.len() {
            let mut trial = kept.clone();
            trial.remove(i);
            if !trial.is_empty() && bypasses(seed, &trial, payload, waf, fw) {
                kept = trial;
            } else {
                i += 1;
            }
        }
        return Ok(vec![kept]);
    }
    let full = (1usize << specs.len()) - 1;
    let bypassing: Vec<usize> = (1..=full)
        .into_par_iter()
        .filter(|&mask| bypasses(seed, &subset(specs, mask), payload, waf, fw))
        .collect();
    let mut minimal: Vec<usize> = bypassing
        .iter()
        .copied()
        .filter(|&m| !bypassing.iter().any(|&o| o != m && o & m == o))
        .collect();
    minimal.sort_by_key(|&m| (m.count_ones(), m));
    Ok(minimal.into_iter().map(|m| subset(specs, m)).collect())
}

/// Class of a minimal set. Byte choices do not matter; mixed classes are
/// reported instead of guessed.
pub fn classify(set: &[MutationSpec]) -> Result<MutationClass, ClassifyError> {
    let classes: BTreeSet<MutationClass> = set.iter().map(|s| s.class).collect();
    match classes.len() {
        0 => Err(ClassifyError::Empty),
        1 => Ok(*classes.iter().next().expect("one class")),
        _ => Err(ClassifyError::AmbiguousClass(classes.into_iter().collect())),
    }
}

/// One minimal cause of a bypass on one WAF and framework pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BypassRecord {
    pub entry_id: String,
    pub request_hash: String,
    pub mutation_set: Vec<MutationSpec>,
    pub minimal_set: Vec<MutationSpec>,
    /// One class, or every class of an ambiguous minimal set.
    pub classes: Vec<MutationClass>,
    pub site_kind: Option<SiteKind>,
    pub waf: String,
    pub framework: String,
    pub field_path: Option<String>,
    pub allowed_on_parse_failure: bool,
    pub unique: bool,
}

impl BypassRecord {
    pub fn class(&self) -> Option<MutationClass> {
        match self.classes.as_slice() {
            [c] => Some(*c),
            _ => None,
        }
    }

    pub fn unique_key(&self) -> (Vec<MutationClass>, Option<SiteKind>, String, String) {
        (self.classes.clone(), self.site_kind, self.waf.clone(), self.framework.clone())
    }
}

/// Site kind of the first spec of `minimal`, located on the request the
/// preceding specs of that set produce.
fn minimal_site_kind(seed: &RawRequest, minimal: &[MutationSpec]) -> Option<SiteKind> {
    let first = minimal.first()?;
    site_kind(seed, first)
}

/// Runs the matrix and turns every bypass into one record per minimal set.
/// Stacks whose seed already bypasses are attributed to the seed and
/// skipped.
pub fn find_bypasses(entries: &[CorpusEntry], wafs: &[WafModel], frameworks: &[FrameworkModel]) -> Vec<BypassRecord> {
    let rows = run_matrix(entries, wafs, frameworks);
    let by_id = |id: &str| entries.iter().find(|e| e.id == id);
    let bypass_rows: Vec<_> = rows.iter().filter(|r| r.result.outcome == Outcome::Bypass).collect();
    bypass_rows
        .par_iter()
        .flat_map_iter(|row| {
            let entry = by_id(&row.entry_id).expect("rows come from these entries");
            let waf = wafs.iter().find(|w| w.name == row.waf).expect("known waf");
            let fw = frameworks.iter().find(|f| f.name == row.framework).expect("known framework");
            let seed = entry.seed_request().ok();
            let minimal_sets = seed
                .as_ref()
                .and_then(|s| minimize(s, &entry.specs, entry.payload(), waf, fw).ok())
                .unwrap_or_default();
            minimal_sets
                .into_iter()
                .map(|minimal| {
                    let classes = match classify(&minimal) {
                        Ok(c) => vec![c],
                        Err(ClassifyError::AmbiguousClass(cs)) => cs,
                        Err(ClassifyError::Empty) => Vec::new(),
                    };
                    BypassRecord {
                        entry_id: entry.id.clone(),
                        request_hash: seed_hash(&entry.request),
                        mutation_set: entry.specs.clone(),
                        site_kind: seed.as_ref().and_then(|s| minimal_site_kind(s, &minimal)),
                        minimal_set: minimal,
                        classes,
                        waf: waf.name.clone(),
                        framework: fw.name.clone(),
                        field_path: row.result.payload_field.clone(),
                        allowed_on_parse_failure: row.result.allowed_on_parse_failure(),
                        unique: false,
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// First record per (class, site kind, WAF, framework), flagged unique.
pub fn dedupe(records: &[BypassRecord]) -> Vec<BypassRecord> {
    let mut seen = BTreeSet::new();
    records
        .iter()
        .filter(|r| seen.insert(r.unique_key()))
        .map(|r| BypassRecord {
            unique: true,
            ..r.clone()
        })
        .collect()
}
