//! Synthetic gesture corpus: generation, optical flow and on-disk layout.
//!
//! A data directory holds `manifest.jsonl`, `vocab.json`, `corpus.sha256`
//! and one sample file per (sentence, repetition, input kind) under `rgb/`
//! and `flow/`.

pub mod corpus;
pub mod flow;
pub mod io;
pub mod render;
pub mod vocab;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::config::{CorpusConfig, InputKind};
use crate::error::{Error, Result};
use crate::rng::{rng_for, Stream};
use corpus::{assign_splits, select_sentences, vocabularies, Split};
use io::{load_sample, manifest_to_string, parse_manifest, ManifestEntry, SampleRecord};
use render::{render_frames, GestureSpec};
use vocab::Vocabularies;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const VOCAB_FILE: &str = "vocab.json";
pub const HASH_FILE: &str = "corpus.sha256";

/// One rendered repetition of a sentence in both input kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSample {
    pub sentence_id: usize,
    pub repetition: usize,
    pub split: Split,
    pub rgb: SampleRecord,
    pub flow: SampleRecord,
}

impl CorpusSample {
    pub fn record(&self, kind: InputKind) -> &SampleRecord {
        match kind {
            InputKind::Rgb => &self.rgb,
            InputKind::Flow => &self.flow,
        }
    }

    pub fn file_name(&self) -> String {
        format!("s{:03}_r{}.slts", self.sentence_id, self.repetition)
    }
}

fn to_f32(values: &[f64]) -> Vec<f32> {
    values.iter().map(|&v| v as f32).collect()
}

/// Renders the whole corpus in memory, deterministically from `config`.
pub fn build_corpus(config: &CorpusConfig, frame_size: usize) -> Result<Vec<CorpusSample>> {
    if frame_size == 0 || frame_size % config.flow_block != 0 {
        return Err(Error::config(format!("flow block {} must divide frame size {frame_size}", config.flow_block)));
    }
    let vocab = vocabularies();
    let sentences = select_sentences(config)?;
    let splits = assign_splits(config, sentences.len());
    let mut samples = Vec::with_capacity(sentences.len() * config.repetitions);
    for sentence in &sentences {
        let text_ids = vocab.text.encode_sentence(&sentence.words.join(" "));
        for rep in 0..config.repetitions {
            let mut rng = rng_for(config.seed, Stream::Jitter, (sentence.id * config.repetitions + rep) as u64);
            let specs = sentence
                .glosses
                .iter()
                .map(|&g| {
                    let factor = 1.0 + config.speed_jitter * rng.gen_range(-1.0..=1.0);
                    GestureSpec::new(g, config.speed * factor, config.frames_per_gesture)
                })
                .collect::<Result<Vec<_>>>()?;
            let rgb = render_frames(&specs, frame_size)?;
            let flow = flow::flow_sequence(&rgb, frame_size, config.flow_block, config.flow_radius);
            let t = specs.len() * config.frames_per_gesture;
            let record = |kind: InputKind, frames: &[f64]| SampleRecord {
                kind,
                shape: [t, kind.channels(), frame_size, frame_size],
                frames: to_f32(frames),
                gloss_ids: sentence.glosses.clone(),
                text_ids: text_ids.clone(),
            };
            samples.push(CorpusSample {
                sentence_id: sentence.id,
                repetition: rep,
                split: splits[sentence.id],
                rgb: record(InputKind::Rgb, &rgb),
                flow: record(InputKind::Flow, &flow),
            });
        }
    }
    Ok(samples)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSummary {
    pub sentences: usize,
    pub samples: usize,
    pub per_split: BTreeMap<Split, (usize, usize)>,
    pub hash: String,
}

/// Writes the corpus under `out_dir` (whose parent must exist). Refuses to
/// touch a directory that already holds a manifest unless `overwrite`.
pub fn generate_dataset(config: &CorpusConfig, frame_size: usize, out_dir: &Path, overwrite: bool) -> Result<CorpusSummary> {
    let manifest_path = out_dir.join(MANIFEST_FILE);
    if manifest_path.exists() && !overwrite {
        return Err(Error::config(format!(
            "{} already contains a corpus; pass the overwrite flag to replace it",
            out_dir.display()
        )));
    }
    let samples = build_corpus(config, frame_size)?;
    if !out_dir.is_dir() {
        std::fs::create_dir(out_dir).map_err(|e| Error::io(out_dir, e))?;
    }
    let vocab = vocabularies();
    let mut entries = Vec::with_capacity(2 * samples.len());
    let mut hasher = Sha256::new();
    for kind in [InputKind::Rgb, InputKind::Flow] {
        let sub = out_dir.join(kind.name());
        if !sub.is_dir() {
            std::fs::create_dir(&sub).map_err(|e| Error::io(&sub, e))?;
        }
        for s in &samples {
            let rel = PathBuf::from(kind.name()).join(s.file_name());
            let bytes = s.record(kind).to_bytes()?;
            let path = out_dir.join(&rel);
            std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
            hasher.update(&bytes);
            entries.push(ManifestEntry { path: rel, split: s.split, sentence_id: s.sentence_id, kind });
        }
    }
    let manifest = manifest_to_string(&entries);
    let vocab_json = vocab.to_json() + "\n";
    hasher.update(manifest.as_bytes());
    hasher.update(vocab_json.as_bytes());
    let hash = hex::encode(hasher.finalize());
    let vocab_path = out_dir.join(VOCAB_FILE);
    std::fs::write(&vocab_path, vocab_json).map_err(|e| Error::io(&vocab_path, e))?;
    let hash_path = out_dir.join(HASH_FILE);
    std::fs::write(&hash_path, format!("{hash}\n")).map_err(|e| Error::io(&hash_path, e))?;
    std::fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;

    let mut per_split = BTreeMap::new();
    for s in &samples {
        per_split.entry(s.split).or_insert((0, 0)).1 += 1;
        if s.repetition == 0 {
            per_split.entry(s.split).or_insert((0, 0)).0 += 1;
        }
    }
    Ok(CorpusSummary { sentences: config.sentences(), samples: samples.len(), per_split, hash })
}

/// An opened data directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub vocab: Vocabularies,
    pub entries: Vec<ManifestEntry>,
    pub hash: Option<String>,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let entries = parse_manifest(&text, &manifest_path)?;
        let vocab = Vocabularies::load(&dir.join(VOCAB_FILE))?;
        let hash = std::fs::read_to_string(dir.join(HASH_FILE)).ok().map(|h| h.trim().to_string());
        Ok(Dataset { dir: dir.to_path_buf(), vocab, entries, hash })
    }

    /// Samples of one kind and split, in manifest order, with ids checked
    /// against the vocabularies.
    pub fn load_split(&self, kind: InputKind, split: Split) -> Result<Vec<SampleRecord>> {
        self.entries
            .iter()
            .filter(|e| e.kind == kind && e.split == split)
            .map(|e| {
                let path = self.dir.join(&e.path);
                let record = load_sample(&path)?;
                if record.kind != kind {
                    return Err(Error::config(format!(
                        "{} holds {} frames but the manifest lists it as {}",
                        path.display(),
                        record.kind.name(),
                        kind.name()
                    )));
                }
                self.check_ids(&record)?;
                Ok(record)
            })
            .collect()
    }

    pub fn check_ids(&self, record: &SampleRecord) -> Result<()> {
        for (ids, size) in [(&record.gloss_ids, self.vocab.gloss.len()), (&record.text_ids, self.vocab.text.len())] {
            if let Some(&id) = ids.iter().find(|&&id| id >= size) {
                return Err(Error::Vocabulary { id, size });
            }
        }
        Ok(())
    }
}
