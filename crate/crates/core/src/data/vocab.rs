//! Token ↔ id maps for text and glosses.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
/// CTC blank in the gloss vocabulary.
pub const BLANK: usize = 0;

pub const TEXT_RESERVED: [&str; 4] = ["<PAD>", "<BOS>", "<EOS>", "<UNK>"];
pub const GLOSS_RESERVED: [&str; 1] = ["<BLANK>"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn build(reserved: &[&str], entries: &[&str]) -> Result<Self> {
        let tokens: Vec<String> = reserved.iter().chain(entries).map(|s| s.to_string()).collect();
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, token) in tokens.iter().enumerate() {
            if index.insert(token.clone(), id).is_some() {
                return Err(Error::config(format!("duplicate vocabulary entry `{token}`")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    /// PAD, BOS, EOS, UNK followed by `words`.
    pub fn text(words: &[&str]) -> Result<Self> {
        Self::build(&TEXT_RESERVED, words)
    }

    /// BLANK followed by `glosses`.
    pub fn gloss(glosses: &[&str]) -> Result<Self> {
        Self::build(&GLOSS_RESERVED, glosses)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Text lookup falling back to UNK.
    pub fn id_or_unk(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or(Error::Vocabulary { id, size: self.tokens.len() })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// `BOS w… EOS` for a whitespace-separated sentence.
    pub fn encode_sentence(&self, sentence: &str) -> Vec<usize> {
        std::iter::once(BOS)
            .chain(sentence.split_whitespace().map(|w| self.id_or_unk(w)))
            .chain(std::iter::once(EOS))
            .collect()
    }

    /// Words of a text id sequence with BOS, EOS and PAD removed, stopping
    /// at the first EOS.
    pub fn content_words(&self, ids: &[usize]) -> Result<Vec<String>> {
        let mut words = Vec::new();
        for &id in ids {
            match id {
                EOS => break,
                BOS | PAD => {}
                _ => words.push(self.token(id)?.to_string()),
            }
        }
        Ok(words)
    }

    /// Renders ids as space-separated tokens, EOS shown as `<EOS>`.
    pub fn render(&self, ids: &[usize]) -> Result<String> {
        let mut out = Vec::new();
        for &id in ids {
            if id == BOS || id == PAD {
                continue;
            }
            out.push(self.token(id)?);
            if id == EOS {
                break;
            }
        }
        Ok(out.join(" "))
    }

    pub fn to_map(&self) -> BTreeMap<String, usize> {
        self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect()
    }

    /// Rebuilds from a token → id map; ids must be exactly `0..n`.
    pub fn from_map(map: &BTreeMap<String, usize>) -> Result<Self> {
        let mut tokens = vec![None; map.len()];
        for (token, &id) in map {
            match tokens.get_mut(id) {
                Some(slot @ None) => *slot = Some(token.clone()),
                _ => return Err(Error::config(format!("vocabulary ids are not a permutation of 0..{}", map.len()))),
            }
        }
        let tokens: Vec<String> = tokens.into_iter().map(|t| t.expect("every slot filled")).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Vocabulary { tokens, index })
    }
}

/// Both vocabularies as stored in `vocab.json`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabularies {
    pub text: Vocabulary,
    pub gloss: Vocabulary,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabFile {
    text: BTreeMap<String, usize>,
    gloss: BTreeMap<String, usize>,
}

impl Vocabularies {
    pub fn to_json(&self) -> String {
        let file = VocabFile { text: self.text.to_map(), gloss: self.gloss.to_map() };
        serde_json::to_string_pretty(&file).expect("vocabulary serialises")
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let file: VocabFile =
            serde_json::from_str(text).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
        Ok(Vocabularies { text: Vocabulary::from_map(&file.text)?, gloss: Vocabulary::from_map(&file.gloss)? })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}
