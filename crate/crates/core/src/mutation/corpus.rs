//! Seeded, reproducible mutant corpora and their on-disk manifest.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::seed::{generate_seed, payload_for_index, seed_hash, SeedError, SeedSpec};
use super::{apply_mutation, candidate_edits, Edit, MutationClass, MutationSpec};
use crate::http::{parse_raw_request, RawRequest};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusOptions {
    pub classes: Vec<MutationClass>,
    pub per_class: usize,
    pub rng_seed: u64,
    /// Number of mutations applied to each seed, the first from the class
    /// being covered and the rest from other classes of the same content
    /// kind.
    pub stack_depth: usize,
    pub extra_benign_fields: usize,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            classes: MutationClass::ALL.to_vec(),
            per_class: 5,
            rng_seed: 0,
            stack_depth: 1,
            extra_benign_fields: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub id: String,
    pub seed: SeedSpec,
    pub seed_hash: String,
    pub specs: Vec<MutationSpec>,
    pub request: RawRequest,
}

impl CorpusEntry {
    pub fn class(&self) -> MutationClass {
        self.specs[0].class
    }

    pub fn payload(&self) -> &[u8] {
        &self.seed.payload
    }

    pub fn seed_request(&self) -> Result<RawRequest, SeedError> {
        generate_seed(&self.seed)
    }

    pub fn file_name(&self) -> String {
        format!("{}.http", self.id)
    }

    pub fn manifest_record(&self) -> ManifestRecord {
        ManifestRecord {
            file: self.file_name(),
            class: self.class(),
            site_index: self.specs[0].site_index,
            byte_choice: hex::encode(&self.specs[0].byte_choice),
            seed_hash: self.seed_hash.clone(),
            seed: self.seed.clone(),
            stack: self.specs.clone(),
        }
    }
}

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub file: String,
    pub class: MutationClass,
    pub site_index: usize,
    pub byte_choice: String,
    pub seed_hash: String,
    pub seed: SeedSpec,
    pub stack: Vec<MutationSpec>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("manifest line {line}: {source}")]
    Manifest {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{file}: {message}")]
    Entry { file: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn count(haystack: &[u8], needle: &[u8]) -> usize {
    haystack.windows(needle.len()).filter(|w| *w == needle).count()
}

/// The splice leaves exactly one intact copy of the payload.
fn keeps_payload(wire: &[u8], edit: &Edit, payload: &[u8], moves: bool) -> bool {
    if !moves {
        let Some(p) = wire.windows(payload.len()).position(|w| w == payload) else {
            return false;
        };
        let span = p..p + payload.len();
        let removed = edit.removed_range();
        let overlaps = removed.start < span.end && span.start < removed.end;
        let splits = edit.offset > span.start && edit.offset < span.end;
        if overlaps || splits {
            return false;
        }
    }
    count(&edit.apply(wire), payload) == 1
}

/// Draws a spec for `class` that applies to `req` without touching the
/// payload. Byte choices are tried from a random starting point so a class
/// whose favourite choice has no site still yields a mutant.
fn draw_spec(req: &RawRequest, class: MutationClass, payload: &[u8], rng: &mut ChaCha8Rng) -> Option<MutationSpec> {
    let choices = class.byte_choices();
    let start = rng.gen_range(0..choices.len());
    let wire = req.serialize(false);
    for k in 0..choices.len() {
        let choice = &choices[(start + k) % choices.len()];
        let valid: Vec<usize> = candidate_edits(req, class, choice)
            .iter()
            .enumerate()
            .filter(|(_, e)| keeps_payload(&wire, e, payload, class.moves_payload()))
            .map(|(i, _)| i)
            .filter(|&i| apply_mutation(req, &MutationSpec::new(class, i, choice.clone())).is_ok())
            .collect();
        if let Some(&site) = valid.choose(rng) {
            return Some(MutationSpec::new(class, site, choice.clone()));
        }
    }
    None
}

fn class_index(class: MutationClass) -> u64 {
    MutationClass::ALL.iter().position(|&c| c == class).unwrap_or_default() as u64
}

fn generate_entry(opts: &CorpusOptions, class: MutationClass, i: usize) -> Option<CorpusEntry> {
    let payload = payload_for_index(i);
    let mut seed = SeedSpec::new(class.content_kind(), payload).with_layout(class.seed_layout());
    seed.extra_benign_fields = opts.extra_benign_fields;
    let seed_req = generate_seed(&seed).ok()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.rng_seed);
    rng.set_stream(class_index(class) << 32 | i as u64);

    let first = draw_spec(&seed_req, class, payload, &mut rng)?;
    let mut current = apply_mutation(&seed_req, &first).ok()?.request;
    let mut specs = vec![first];
    let companions: Vec<MutationClass> = MutationClass::ALL
        .iter()
        .copied()
        .filter(|c| c.content_kind() == class.content_kind() && *c != class)
        .collect();
    for _ in 1..opts.stack_depth {
        let Some(&other) = companions.choose(&mut rng) else { break };
        if let Some(spec) = draw_spec(&current, other, payload, &mut rng) {
            current = apply_mutation(&current, &spec).ok()?.request;
            specs.push(spec);
        }
    }
    Some(CorpusEntry {
        id: format!("{}-{}-{i:04}", class.content_kind(), class.name()),
        seed_hash: seed_hash(&seed_req),
        seed,
        specs,
        request: current,
    })
}

/// Deterministic for a given `rng_seed`: each `(class, index)` pair draws
/// from its own RNG stream, so parallel generation cannot reorder draws.
pub fn generate_corpus(opts: &CorpusOptions) -> Vec<CorpusEntry> {
    let jobs: Vec<(MutationClass, usize)> = opts
        .classes
        .iter()
        .flat_map(|&c| (0..opts.per_class).map(move |i| (c, i)))
        .collect();
    jobs.par_iter()
        .filter_map(|&(class, i)| generate_entry(opts, class, i))
        .collect()
}

/// Writes one `.http` file per entry plus `manifest.jsonl`.
pub fn write_corpus(dir: &Path, entries: &[CorpusEntry]) -> Result<(), CorpusError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest_path = dir.join("manifest.jsonl");
    let mut manifest = io::BufWriter::new(fs::File::create(&manifest_path).map_err(io_err(&manifest_path))?);
    for entry in entries {
        let path = dir.join(entry.file_name());
        fs::write(&path, entry.request.serialize(false)).map_err(io_err(&path))?;
        let line = serde_json::to_string(&entry.manifest_record()).expect("manifest records serialize");
        writeln!(manifest, "{line}").map_err(io_err(&manifest_path))?;
    }
    manifest.flush().map_err(io_err(&manifest_path))
}

/// Reads a corpus written by [`write_corpus`], checking every seed hash.
pub fn read_corpus(dir: &Path) -> Result<Vec<CorpusEntry>, CorpusError> {
    let manifest_path = dir.join("manifest.jsonl");
    let file = fs::File::open(&manifest_path).map_err(io_err(&manifest_path))?;
    let mut entries = Vec::new();
    for (k, line) in io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(&manifest_path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord =
            serde_json::from_str(&line).map_err(|source| CorpusError::Manifest { line: k + 1, source })?;
        let entry_err = |message: String| CorpusError::Entry {
            file: record.file.clone(),
            message,
        };
        let seed = generate_seed(&record.seed).map_err(|e| entry_err(e.to_string()))?;
        if seed_hash(&seed) != record.seed_hash {
            return Err(entry_err("seed hash does not match the regenerated seed".into()));
        }
        let path = dir.join(&record.file);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let request = parse_raw_request(&bytes).map_err(|e| entry_err(e.to_string()))?;
        if record.stack.is_empty() {
            return Err(entry_err("empty mutation stack".into()));
        }
        let id = record
            .file
            .strip_suffix(".http")
            .unwrap_or(&record.file)
            .to_string();
        entries.push(CorpusEntry {
            id,
            seed: record.seed,
            seed_hash: record.seed_hash,
            specs: record.stack,
            request,
        });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mutation::apply_stack;

    #[test]
    fn every_class_yields_mutants() {
        let corpus = generate_corpus(&CorpusOptions::default());
        assert_eq!(corpus.len(), 24 * 5);
        for &class in MutationClass::ALL {
            assert_eq!(corpus.iter().filter(|e| e.class() == class).count(), 5, "{class}");
        }
    }

    #[test]
    fn entries_replay_from_their_specs() {
        let opts = CorpusOptions {
            stack_depth: 3,
            per_class: 2,
            ..CorpusOptions::default()
        };
        for entry in generate_corpus(&opts) {
            let seed = entry.seed_request().unwrap();
            assert_eq!(apply_stack(&seed, &entry.specs).unwrap(), entry.request, "{}", entry.id);
            assert_eq!(count(&entry.request.serialize(false), entry.payload()), 1, "{}", entry.id);
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let opts = CorpusOptions {
            rng_seed: 7,
            ..CorpusOptions::default()
        };
        assert_eq!(generate_corpus(&opts), generate_corpus(&opts));
    }

    #[test]
    fn disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate_corpus(&CorpusOptions {
            per_class: 1,
            ..CorpusOptions::default()
        });
        write_corpus(dir.path(), &corpus).unwrap();
        assert_eq!(read_corpus(dir.path()).unwrap(), corpus);
    }

    #[test]
    fn multipart_corpus_with_seed_42() {
        let opts = CorpusOptions {
            classes: MutationClass::ALL
                .iter()
                .copied()
                .filter(|c| c.content_kind() == crate::mutation::ContentKind::Multipart)
                .collect(),
            per_class: 5,
            rng_seed: 42,
            ..CorpusOptions::default()
        };
        let a = generate_corpus(&opts);
        assert_eq!(a.len(), 60);
        let wires = |c: &[CorpusEntry]| c.iter().map(|e| e.request.serialize(false)).collect::<Vec<_>>();
        assert_eq!(wires(&a), wires(&generate_corpus(&opts)));
    }

    #[test]
    fn single_content_type_removal() {
        let corpus = generate_corpus(&CorpusOptions {
            classes: vec![MutationClass::ContentTypeRemoval],
            per_class: 1,
            ..CorpusOptions::default()
        });
        assert_eq!(corpus.len(), 1);
        assert!(corpus[0].request.content_type().is_none());
        assert_eq!(corpus[0].request.body, corpus[0].seed_request().unwrap().body);
    }

    #[test]
    fn empty_class_set() {
        let corpus = generate_corpus(&CorpusOptions {
            classes: Vec::new(),
            ..CorpusOptions::default()
        });
        assert!(corpus.is_empty());
    }

    #[test]
    fn byte_choices_come_from_the_documented_sets() {
        for entry in generate_corpus(&CorpusOptions::default()) {
            for spec in &entry.specs {
                assert!(spec.class.byte_choices().contains(&spec.byte_choice), "{}", entry.id);
            }
        }
    }
}
