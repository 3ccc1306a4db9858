//! Fixed gloss lexicon, sentence grammar and sentence selection for the
//! synthetic gesture corpus.
//!
//! Glosses come in mirrored pairs (CARLOS/MARIA, VIAJAR/COMER, BOGOTA/CASA,
//! HOY/MANANA, NEG/PREGUNTA): both members share region, colour and size and
//! move along the same line in opposite directions, so a single still frame
//! of one also occurs in the other. YO and ESTUDIAR have no partner.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::CorpusConfig;
use crate::data::vocab::{Vocabularies, Vocabulary};
use crate::error::{Error, Result};
use crate::rng::{rng_for, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Subject,
    Verb,
    Object,
    Time,
    Marker,
}

/// How a gloss is drawn: blob centre (row, column), unit direction of
/// motion (row, column), colour and side length, in pixels of a 32×32 frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Appearance {
    pub center: (f64, f64),
    pub direction: (f64, f64),
    pub color: [f64; 3],
    pub size: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlossDef {
    pub name: &'static str,
    /// Text word the gloss turns into; markers have none.
    pub word: Option<&'static str>,
    pub category: Category,
    pub appearance: Appearance,
}

const D: f64 = std::f64::consts::FRAC_1_SQRT_2;

const fn look(center: (f64, f64), direction: (f64, f64), color: [f64; 3], size: f64) -> Appearance {
    Appearance { center, direction, color, size }
}

const SUBJECT: [f64; 3] = [1.0, 0.35, 0.35];
const VERB: [f64; 3] = [0.35, 0.55, 1.0];
const OBJECT: [f64; 3] = [0.85, 0.85, 0.85];
const TIME: [f64; 3] = [1.0, 0.65, 0.2];
const MARKER: [f64; 3] = [0.65, 0.3, 1.0];

/// Lexicon in gloss-id order (id = index + 1; 0 is the CTC blank).
pub const LEXICON: [GlossDef; 12] = [
    GlossDef { name: "CARLOS", word: Some("carlos"), category: Category::Subject, appearance: look((8.0, 8.0), (0.0, 1.0), SUBJECT, 6.0) },
    GlossDef { name: "MARIA", word: Some("maria"), category: Category::Subject, appearance: look((8.0, 8.0), (0.0, -1.0), SUBJECT, 6.0) },
    GlossDef { name: "YO", word: Some("yo"), category: Category::Subject, appearance: look((8.0, 8.0), (1.0, 0.0), [0.35, 1.0, 0.35], 6.0) },
    GlossDef { name: "VIAJAR", word: Some("viajar"), category: Category::Verb, appearance: look((8.0, 24.0), (1.0, 0.0), VERB, 5.0) },
    GlossDef { name: "COMER", word: Some("comer"), category: Category::Verb, appearance: look((8.0, 24.0), (-1.0, 0.0), VERB, 5.0) },
    GlossDef { name: "ESTUDIAR", word: Some("estudiar"), category: Category::Verb, appearance: look((8.0, 24.0), (0.0, 1.0), [1.0, 1.0, 0.35], 5.0) },
    GlossDef { name: "BOGOTA", word: Some("bogota"), category: Category::Object, appearance: look((24.0, 8.0), (D, D), OBJECT, 6.0) },
    GlossDef { name: "CASA", word: Some("casa"), category: Category::Object, appearance: look((24.0, 8.0), (-D, -D), OBJECT, 6.0) },
    GlossDef { name: "HOY", word: Some("hoy"), category: Category::Time, appearance: look((24.0, 24.0), (0.0, 1.0), TIME, 4.0) },
    GlossDef { name: "MANANA", word: Some("manana"), category: Category::Time, appearance: look((24.0, 24.0), (0.0, -1.0), TIME, 4.0) },
    GlossDef { name: "NEG", word: None, category: Category::Marker, appearance: look((16.0, 16.0), (1.0, 0.0), MARKER, 5.0) },
    GlossDef { name: "PREGUNTA", word: None, category: Category::Marker, appearance: look((16.0, 16.0), (-1.0, 0.0), MARKER, 5.0) },
];

/// Gloss-id pairs with identical appearance and reversed motion.
pub const MIRRORED_PAIRS: [(usize, usize); 5] = [(1, 2), (4, 5), (7, 8), (9, 10), (11, 12)];

pub const NEGATION_WORD: &str = "no";
pub const QUESTION_WORD: &str = "?";

pub fn gloss_def(id: usize) -> Result<&'static GlossDef> {
    id.checked_sub(1)
        .and_then(|i| LEXICON.get(i))
        .ok_or(Error::Vocabulary { id, size: LEXICON.len() + 1 })
}

fn gloss_id(name: &str) -> usize {
    LEXICON.iter().position(|g| g.name == name).expect("lexicon entry") + 1
}

fn ids_of(category: Category) -> Vec<usize> {
    (1..=LEXICON.len()).filter(|&id| LEXICON[id - 1].category == category).collect()
}

/// The corpus vocabularies: every content word plus "no" and "?".
pub fn vocabularies() -> Vocabularies {
    let mut words: Vec<&str> = LEXICON.iter().filter_map(|g| g.word).collect();
    words.extend([NEGATION_WORD, QUESTION_WORD]);
    let glosses: Vec<&str> = LEXICON.iter().map(|g| g.name).collect();
    Vocabularies {
        text: Vocabulary::text(&words).expect("distinct words"),
        gloss: Vocabulary::gloss(&glosses).expect("distinct glosses"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentenceKind {
    Affirmative,
    Negative,
    Interrogative,
}

impl SentenceKind {
    /// Recovers the kind from the trailing marker gloss.
    pub fn from_glosses(glosses: &[usize]) -> Self {
        match glosses.last() {
            Some(&id) if id == gloss_id("NEG") => SentenceKind::Negative,
            Some(&id) if id == gloss_id("PREGUNTA") => SentenceKind::Interrogative,
            _ => SentenceKind::Affirmative,
        }
    }
}

/// Content glosses (subject, verb, optional object, optional time).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Content {
    pub subject: usize,
    pub verb: usize,
    pub object: Option<usize>,
    pub time: Option<usize>,
}

impl Content {
    fn glosses(&self) -> Vec<usize> {
        [Some(self.subject), Some(self.verb), self.object, self.time].into_iter().flatten().collect()
    }

    /// Every subject × verb × (object or none) × (time or none).
    pub fn all() -> Vec<Content> {
        let with_none = |ids: Vec<usize>| std::iter::once(None).chain(ids.into_iter().map(Some)).collect::<Vec<_>>();
        let mut out = Vec::new();
        for &subject in &ids_of(Category::Subject) {
            for &verb in &ids_of(Category::Verb) {
                for &object in &with_none(ids_of(Category::Object)) {
                    for &time in &with_none(ids_of(Category::Time)) {
                        out.push(Content { subject, verb, object, time });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub id: usize,
    pub kind: SentenceKind,
    pub glosses: Vec<usize>,
    pub words: Vec<&'static str>,
}

/// Gloss sequence for `content` under `kind`: the marker gloss goes last.
pub fn gloss_sequence(content: &Content, kind: SentenceKind) -> Vec<usize> {
    let mut g = content.glosses();
    match kind {
        SentenceKind::Affirmative => {}
        SentenceKind::Negative => g.push(gloss_id("NEG")),
        SentenceKind::Interrogative => g.push(gloss_id("PREGUNTA")),
    }
    g
}

/// Text words from a gloss sequence: content words in order, "no" before
/// the verb when negative, "?" appended when interrogative.
pub fn words_for(glosses: &[usize], kind: SentenceKind) -> Result<Vec<&'static str>> {
    let mut words = Vec::new();
    for &id in glosses {
        let def = gloss_def(id)?;
        if kind == SentenceKind::Negative && def.category == Category::Verb {
            words.push(NEGATION_WORD);
        }
        if let Some(w) = def.word {
            words.push(w);
        }
    }
    if kind == SentenceKind::Interrogative {
        words.push(QUESTION_WORD);
    }
    Ok(words)
}

/// Draws distinct contents per kind from the corpus stream. Sentence ids
/// run affirmative first, then negative, then interrogative.
pub fn select_sentences(config: &CorpusConfig) -> Result<Vec<Sentence>> {
    let pool = Content::all();
    let mut sentences = Vec::with_capacity(config.sentences());
    let kinds = [
        (SentenceKind::Affirmative, config.affirmative),
        (SentenceKind::Negative, config.negative),
        (SentenceKind::Interrogative, config.interrogative),
    ];
    for (k, &(kind, count)) in kinds.iter().enumerate() {
        if count > pool.len() {
            return Err(Error::config(format!(
                "{count} {kind:?} sentences requested but only {} distinct contents exist",
                pool.len()
            )));
        }
        let mut rng = rng_for(config.seed, Stream::Corpus, k as u64);
        for content in pool.choose_multiple(&mut rng, count) {
            let glosses = gloss_sequence(content, kind);
            let words = words_for(&glosses, kind)?;
            sentences.push(Sentence { id: sentences.len(), kind, glosses, words });
        }
    }
    Ok(sentences)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(Error::config(format!("unknown split `{s}` (expected train, dev or test)"))),
        }
    }
}

/// Split of every sentence id, partitioned by a seeded shuffle.
pub fn assign_splits(config: &CorpusConfig, sentences: usize) -> Vec<Split> {
    let n_test = (sentences as f64 * config.test_fraction).round() as usize;
    let n_dev = (sentences as f64 * config.dev_fraction).round() as usize;
    let mut order: Vec<usize> = (0..sentences).collect();
    order.shuffle(&mut rng_for(config.seed, Stream::Split, 0));
    let mut splits = vec![Split::Train; sentences];
    for (rank, &id) in order.iter().enumerate() {
        if rank < n_test {
            splits[id] = Split::Test;
        } else if rank < n_test + n_dev {
            splits[id] = Split::Dev;
        }
    }
    splits
}
