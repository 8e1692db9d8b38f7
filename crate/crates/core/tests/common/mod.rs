#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use parsegap::harness::{framework_presets, run_differential, run_matrix, waf_preset, Outcome};
use parsegap::json::{parse_json_lenient, parse_json_strict, JsonLeniency};
use parsegap::media_type::parse_media_type;
use parsegap::minimize::{dedupe, find_bypasses};
use parsegap::multipart::{parse_multipart_lenient, parse_multipart_strict, LeniencyProfile};
use parsegap::mutation::{apply_mutation, generate_corpus, generate_seed, CorpusEntry, CorpusOptions};
use parsegap::normalizer::{normalize, normalize_policy_default, NormalizationOutcome};
use parsegap::report::{to_jsonl, NormalizerTally, OutcomeRecord, ReportSummary};
use parsegap::xml::{parse_xml_lenient, parse_xml_strict, XmlLeniency};
use parsegap::{parse_raw_request, RawRequest};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn fixture(name: &str) -> Vec<u8> {
    fs::read(fixture_dir().join(name)).unwrap_or_else(|e| panic!("fixture {name}: {e}"))
}

pub fn valid_multipart_fixtures() -> Vec<(String, RawRequest)> {
    let mut files: Vec<PathBuf> = fs::read_dir(fixture_dir().join("valid-multipart"))
        .expect("valid-multipart fixtures")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "http"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            let req = parse_raw_request(&fs::read(&p).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
            (name, req)
        })
        .collect()
}

/// Single-mutation corpus plus a stacked one, both at fixed seeds.
pub fn full_corpus() -> Vec<CorpusEntry> {
    let mut entries = generate_corpus(&CorpusOptions::default());
    entries.extend(generate_corpus(&CorpusOptions {
        per_class: 10,
        rng_seed: 99,
        stack_depth: 2,
        ..CorpusOptions::default()
    }));
    entries
}

/// Every request the corpus-wide properties range over: mutants, their
/// seeds and the valid fixtures.
pub fn corpus_requests() -> Vec<RawRequest> {
    let entries = full_corpus();
    let mut out: Vec<RawRequest> = entries.iter().map(|e| e.request.clone()).collect();
    out.extend(entries.iter().filter_map(|e| e.seed_request().ok()));
    out.extend(valid_multipart_fixtures().into_iter().map(|(_, r)| r));
    out
}

fn token() -> impl Strategy<Value = String> {
    "[A-Za-z0-9!#$%&'*+.^_`|~-]{1,12}"
}

fn line_ending() -> impl Strategy<Value = &'static str> {
    prop_oneof![Just("\r\n"), Just("\n")]
}

fn header_line() -> impl Strategy<Value = String> {
    (token(), prop_oneof![Just(":"), Just(": "), Just(":\t"), Just(":  ")], "([!-~][ -~]{0,30})?", line_ending())
        .prop_map(|(n, sep, v, le)| format!("{n}{sep}{v}{le}"))
}

/// Wire bytes of a syntactically valid request with arbitrary body octets.
pub fn valid_request_bytes() -> impl Strategy<Value = Vec<u8>> {
    (
        "[A-Z]{1,7}",
        "/[!-~]{0,40}",
        line_ending(),
        prop::collection::vec(header_line(), 0..12),
        line_ending(),
        prop::collection::vec(any::<u8>(), 0..200),
    )
        .prop_map(|(m, t, rle, headers, term, body)| {
            let mut wire = format!("{m} {t} HTTP/1.1{rle}").into_bytes();
            for h in headers {
                wire.extend_from_slice(h.as_bytes());
            }
            wire.extend_from_slice(term.as_bytes());
            wire.extend_from_slice(&body);
            wire
        })
}

pub fn check_http_round_trip(cases: u32) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&valid_request_bytes(), |wire| {
            let req = parse_raw_request(&wire).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(req.serialize(false), wire.clone());
            let again = parse_raw_request(&req.serialize(false)).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(again, req);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn multipart_profiles() -> Vec<LeniencyProfile> {
    let mut profiles = vec![LeniencyProfile::strictest(), LeniencyProfile::permissive()];
    profiles.extend(framework_presets().into_iter().map(|f| f.multipart));
    profiles
}

/// Counts of strict acceptances per codec: (multipart, json, xml).
pub fn check_strict_subset_of_lenient(requests: &[RawRequest]) -> Result<(usize, usize, usize), String> {
    let mut accepted = (0, 0, 0);
    let mp_profiles = multipart_profiles();
    let json_profiles = [JsonLeniency::strict(), JsonLeniency::permissive()];
    let xml_profiles = [XmlLeniency::strict(), XmlLeniency::permissive()];
    for (k, req) in requests.iter().enumerate() {
        if let Some(mt) = req.content_type().and_then(|ct| parse_media_type(ct).ok()) {
            if let Ok(strict) = parse_multipart_strict(&req.body, &mt) {
                accepted.0 += 1;
                for profile in &mp_profiles {
                    let lenient = parse_multipart_lenient(&req.body, &mt, profile)
                        .map_err(|e| format!("request {k}: lenient multipart refused a strict body: {}", e.0))?;
                    let a: Vec<_> = strict.parts().iter().map(|p| (p.name().to_vec(), p.body().to_vec())).collect();
                    let b: Vec<_> = lenient.parts.iter().map(|p| (p.name.clone(), p.body.clone())).collect();
                    if a != b {
                        return Err(format!("request {k}: lenient multipart read different parts"));
                    }
                }
            }
        }
        if let Ok(strict) = parse_json_strict(&req.body) {
            accepted.1 += 1;
            for profile in &json_profiles {
                let lenient = parse_json_lenient(&req.body, profile)
                    .map_err(|e| format!("request {k}: lenient JSON refused a strict body: {}", e.0))?;
                if lenient != strict {
                    return Err(format!("request {k}: lenient JSON read a different value"));
                }
            }
        }
        if let Ok(strict) = parse_xml_strict(&req.body) {
            accepted.2 += 1;
            for profile in &xml_profiles {
                let lenient = parse_xml_lenient(&req.body, profile)
                    .map_err(|e| format!("request {k}: lenient XML refused a strict body: {}", e.0))?;
                if lenient != strict {
                    return Err(format!("request {k}: lenient XML read a different document"));
                }
            }
        }
    }
    Ok(accepted)
}

/// Number of requests that normalized; each must be a fixed point.
pub fn check_normalize_idempotent(requests: &[RawRequest]) -> Result<usize, String> {
    let policy = normalize_policy_default();
    let mut normalized = 0;
    for (k, req) in requests.iter().enumerate() {
        if let NormalizationOutcome::Normalized { request, .. } = normalize(req, &policy) {
            normalized += 1;
            match normalize(&request, &policy) {
                NormalizationOutcome::Normalized { request: again, changes } => {
                    if again != request || !changes.is_empty() {
                        return Err(format!("request {k}: second pass changed {changes:?}"));
                    }
                }
                other => return Err(format!("request {k}: second pass gave {}", other.label())),
            }
        }
    }
    Ok(normalized)
}

/// Bypass counts under (fail-open, fail-closed).
pub fn check_fail_closed_dominance(entries: &[CorpusEntry]) -> Result<(usize, usize), String> {
    let open = waf_preset("strict-fail-open").unwrap();
    let closed = waf_preset("strict-fail-closed").unwrap();
    let rows = run_matrix(entries, &[open.clone(), closed.clone()], &framework_presets());
    let count = |name: &str| {
        rows.iter()
            .filter(|r| r.waf == name && r.result.outcome == Outcome::Bypass)
            .count()
    };
    let (n_open, n_closed) = (count(&open.name), count(&closed.name));
    let closed_on_failure = rows
        .iter()
        .filter(|r| r.waf == closed.name && r.result.outcome == Outcome::Bypass && r.result.allowed_on_parse_failure())
        .count();
    if closed_on_failure != 0 {
        return Err(format!("{closed_on_failure} fail-closed bypasses on a parse failure"));
    }
    if n_closed > n_open {
        return Err(format!("fail-closed bypasses {n_closed} exceed fail-open {n_open}"));
    }
    Ok((n_open, n_closed))
}

/// Outcome lines, unique bypasses and summary for one seeded run.
pub fn pipeline_bytes(rng_seed: u64) -> Vec<u8> {
    let entries = generate_corpus(&CorpusOptions {
        per_class: 3,
        rng_seed,
        stack_depth: 2,
        ..CorpusOptions::default()
    });
    let wafs = parsegap::harness::waf_presets();
    let fws = framework_presets();
    let outcomes: Vec<OutcomeRecord> = run_matrix(&entries, &wafs, &fws).iter().map(OutcomeRecord::from).collect();
    let unique = dedupe(&find_bypasses(&entries, &wafs, &fws));
    let policy = normalize_policy_default();
    let tally: NormalizerTally = entries
        .iter()
        .map(|e| normalize(&e.request, &policy))
        .collect::<Vec<_>>()
        .iter()
        .collect();
    let summary = ReportSummary::from_results(&outcomes, &unique, tally);
    let mut out = to_jsonl(&outcomes).into_bytes();
    out.extend(to_jsonl(&unique).into_bytes());
    out.extend(summary.to_json_line().into_bytes());
    out
}

pub fn check_report_determinism() -> Result<(), String> {
    let first = pipeline_bytes(7);
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| e.to_string())?
        .install(|| pipeline_bytes(7));
    if first != single || first != pipeline_bytes(7) {
        return Err("report bytes differ between runs".into());
    }
    Ok(())
}

/// Number of normalized mutants checked against every WAF and framework
/// pair.
pub fn check_normalizer_shield(entries: &[CorpusEntry]) -> Result<usize, String> {
    let policy = normalize_policy_default();
    let wafs = parsegap::harness::waf_presets();
    let fws = framework_presets();
    let mut checked = 0;
    for e in entries {
        if let NormalizationOutcome::Normalized { request, .. } = normalize(&e.request, &policy) {
            checked += 1;
            for waf in &wafs {
                for fw in &fws {
                    let r = run_differential(&request, e.payload(), waf, fw);
                    if r.outcome == Outcome::Bypass {
                        return Err(format!("{} bypasses {} / {} after normalization", e.id, waf.name, fw.name));
                    }
                }
            }
        }
    }
    Ok(checked)
}

/// Number of bypass rows verified.
pub fn check_no_false_bypasses(entries: &[CorpusEntry]) -> Result<usize, String> {
    let wafs = parsegap::harness::waf_presets();
    let fws = framework_presets();
    for e in entries.iter().filter(|e| e.seed.layout.continuation_split.is_none()) {
        let seed = e.seed_request().map_err(|err| err.to_string())?;
        for waf in &wafs {
            for fw in &fws {
                let r = run_differential(&seed, e.payload(), waf, fw);
                if r.outcome != Outcome::Blocked {
                    return Err(format!("seed of {} is {} on {} / {}", e.id, r.outcome, waf.name, fw.name));
                }
            }
        }
    }
    let rows = run_matrix(entries, &wafs, &fws);
    let mut verified = 0;
    let per_entry = wafs.len() * fws.len();
    for (k, row) in rows.iter().enumerate().filter(|(_, r)| r.result.outcome == Outcome::Bypass) {
        let e = &entries[k / per_entry];
        let waf = wafs.iter().find(|w| w.name == row.waf).unwrap();
        let fw = fws.iter().find(|f| f.name == row.framework).unwrap();
        if waf.decide(&e.request).verdict.is_block() {
            return Err(format!("{}: bypass reported although {} blocks", e.id, waf.name));
        }
        let fields = fw.parse(&e.request).map_err(|err| format!("{}: {}", e.id, err.0))?;
        let path = row.result.payload_field.as_deref().unwrap_or_default();
        let carries = fields
            .iter()
            .any(|f| f.path == path && f.value.windows(e.payload().len()).any(|w| w == e.payload()));
        if !carries {
            return Err(format!("{}: field {path:?} does not carry the payload", e.id));
        }
        verified += 1;
    }
    Ok(verified)
}

/// Number of single-mutation entries whose edit was undone.
pub fn check_class_fidelity(entries: &[CorpusEntry]) -> Result<usize, String> {
    let mut checked = 0;
    for e in entries.iter().filter(|e| e.specs.len() == 1) {
        let seed = generate_seed(&e.seed).map_err(|err| err.to_string())?;
        let mutant = apply_mutation(&seed, &e.specs[0]).map_err(|err| format!("{}: {err}", e.id))?;
        let seed_wire = seed.serialize(false);
        let mutated = mutant.edit.apply(&seed_wire);
        if mutated == seed_wire {
            return Err(format!("{}: edit is a no-op", e.id));
        }
        if mutant.edit.revert(&mutated) != seed_wire {
            return Err(format!("{}: reverting the edit does not restore the seed", e.id));
        }
        let mut reparsed = parse_raw_request(&mutated).map_err(|err| err.to_string())?;
        reparsed.recompute_content_length();
        if reparsed != e.request || mutant.request != e.request {
            return Err(format!("{}: replayed mutant differs from the corpus entry", e.id));
        }
        checked += 1;
    }
    Ok(checked)
}
