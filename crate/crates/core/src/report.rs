//! Outcome records, per-class unique counts and normalizer tallies, in a
//! line-delimited machine form and an aligned text table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::harness::{MatrixRow, Outcome};
use crate::minimize::BypassRecord;
use crate::mutation::MutationClass;
use crate::normalizer::NormalizationOutcome;

/// One line of the outcome report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub request_file: String,
    pub class: MutationClass,
    pub waf: String,
    pub framework: String,
    pub outcome: Outcome,
    pub field_path: Option<String>,
    pub rule_id: Option<String>,
    pub waf_parse_failure: Option<String>,
}

impl From<&MatrixRow> for OutcomeRecord {
    fn from(row: &MatrixRow) -> Self {
        Self {
            request_file: format!("{}.http", row.entry_id),
            class: row.class,
            waf: row.waf.clone(),
            framework: row.framework.clone(),
            outcome: row.result.outcome,
            field_path: row.result.payload_field.clone(),
            rule_id: row.result.verdict.matched_rule.clone(),
            waf_parse_failure: row.result.waf_parse_failure.as_ref().map(|r| r.category.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizerTally {
    pub normalized: usize,
    pub rejected: usize,
    pub passed_through: usize,
}

impl NormalizerTally {
    pub fn record(&mut self, outcome: &NormalizationOutcome) {
        match outcome {
            NormalizationOutcome::Normalized { .. } => self.normalized += 1,
            NormalizationOutcome::Rejected(_) => self.rejected += 1,
            NormalizationOutcome::PassedThrough(_) => self.passed_through += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.normalized + self.rejected + self.passed_through
    }
}

impl<'a> FromIterator<&'a NormalizationOutcome> for NormalizerTally {
    fn from_iter<I: IntoIterator<Item = &'a NormalizationOutcome>>(iter: I) -> Self {
        let mut tally = Self::default();
        for o in iter {
            tally.record(o);
        }
        tally
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub outcome_totals: BTreeMap<Outcome, usize>,
    /// Bypasses the WAF let through only because its body parse failed.
    pub bypasses_on_parse_failure: usize,
    pub unique_per_class: BTreeMap<MutationClass, usize>,
    /// Unique bypasses whose minimal set mixes classes.
    pub unique_ambiguous: usize,
    pub normalizer: NormalizerTally,
}

impl ReportSummary {
    pub fn from_results(outcomes: &[OutcomeRecord], unique: &[BypassRecord], normalizer: NormalizerTally) -> Self {
        let mut summary = ReportSummary {
            normalizer,
            ..ReportSummary::default()
        };
        for o in outcomes {
            *summary.outcome_totals.entry(o.outcome).or_default() += 1;
            if o.outcome == Outcome::Bypass && o.waf_parse_failure.is_some() {
                summary.bypasses_on_parse_failure += 1;
            }
        }
        for r in unique.iter().filter(|r| r.unique) {
            match r.class() {
                Some(c) => *summary.unique_per_class.entry(c).or_default() += 1,
                None => summary.unique_ambiguous += 1,
            }
        }
        summary
    }

    pub fn total(&self, outcome: Outcome) -> usize {
        self.outcome_totals.get(&outcome).copied().unwrap_or_default()
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("summary serializes")
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<44} {:>8}", "outcome", "count");
        for outcome in [Outcome::Blocked, Outcome::Bypass, Outcome::Malformed, Outcome::BenignPass] {
            let _ = writeln!(out, "{:<44} {:>8}", outcome.to_string(), self.total(outcome));
        }
        let _ = writeln!(out, "{:<44} {:>8}", "bypass on WAF parse failure", self.bypasses_on_parse_failure);
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<44} {:>8}", "class", "unique");
        for (class, n) in &self.unique_per_class {
            let _ = writeln!(out, "{:<44} {:>8}", class.name(), n);
        }
        if self.unique_ambiguous > 0 {
            let _ = writeln!(out, "{:<44} {:>8}", "(mixed classes)", self.unique_ambiguous);
        }
        let _ = writeln!(out);
        let tally = &self.normalizer;
        let _ = writeln!(out, "{:<44} {:>8}", "normalized", tally.normalized);
        let _ = writeln!(out, "{:<44} {:>8}", "rejected", tally.rejected);
        let _ = writeln!(out, "{:<44} {:>8}", "passed through", tally.passed_through);
        out
    }
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{framework_presets, run_matrix, waf_presets};
    use crate::minimize::{dedupe, find_bypasses};
    use crate::mutation::{generate_corpus, CorpusOptions};
    use crate::normalizer::{normalize, normalize_policy_default};

    fn pipeline(seed: u64) -> (String, String) {
        let corpus = generate_corpus(&CorpusOptions {
            per_class: 2,
            rng_seed: seed,
            ..CorpusOptions::default()
        });
        let wafs = waf_presets();
        let fws = framework_presets();
        let outcomes: Vec<OutcomeRecord> = run_matrix(&corpus, &wafs, &fws).iter().map(Into::into).collect();
        let unique = dedupe(&find_bypasses(&corpus, &wafs, &fws));
        let policy = normalize_policy_default();
        let tally: NormalizerTally = corpus
            .iter()
            .map(|e| normalize(&e.request, &policy))
            .collect::<Vec<_>>()
            .iter()
            .collect();
        let summary = ReportSummary::from_results(&outcomes, &unique, tally);
        assert_eq!(summary.normalizer.total(), corpus.len());
        assert_eq!(summary.outcome_totals.values().sum::<usize>(), outcomes.len());
        (to_jsonl(&outcomes) + &summary.to_json_line(), summary.render_table())
    }

    #[test]
    fn report_is_reproducible() {
        let a = pipeline(3);
        assert_eq!(a, pipeline(3));
        assert!(a.1.contains("bypass"));
    }

    #[test]
    fn empty_inputs() {
        let s = ReportSummary::from_results(&[], &[], NormalizerTally::default());
        assert_eq!(s.total(Outcome::Bypass), 0);
        assert_eq!(to_jsonl::<OutcomeRecord>(&[]), "");
    }
}
