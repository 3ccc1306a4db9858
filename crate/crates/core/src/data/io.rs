//! Binary sample files and the JSONL manifest.
//!
//! Sample layout, all little-endian:
//!
//! ```text
//! "SLTS" | version u16 | kind u8 (0 rgb, 1 flow) | T C H W u32
//! | T·C·H·W f32 | gloss count u16 | gloss ids u16… | text count u16 | text ids u16…
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use slt_tensor::Tensor;

use crate::config::InputKind;
use crate::data::corpus::{SentenceKind, Split};
use crate::error::{Error, Result};

pub const SAMPLE_MAGIC: &[u8; 4] = b"SLTS";
pub const SAMPLE_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub kind: InputKind,
    /// `[T, C, H, W]`.
    pub shape: [usize; 4],
    pub frames: Vec<f32>,
    pub gloss_ids: Vec<usize>,
    /// `BOS … EOS`.
    pub text_ids: Vec<usize>,
}

impl SampleRecord {
    pub fn frames(&self) -> usize {
        self.shape[0]
    }

    pub fn sentence_kind(&self) -> SentenceKind {
        SentenceKind::from_glosses(&self.gloss_ids)
    }

    /// Frames as a constant `[T, C, H, W]` tensor.
    pub fn frames_tensor(&self) -> Result<Tensor> {
        Ok(Tensor::new(self.frames.iter().map(|&v| v as f64).collect(), &self.shape)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let count = self.shape.iter().product::<usize>();
        if count != self.frames.len() {
            return Err(Error::Contract(format!(
                "sample shape {:?} holds {count} values but {} were given",
                self.shape,
                self.frames.len()
            )));
        }
        let mut out = Vec::with_capacity(23 + 4 * count + 4 + 2 * (self.gloss_ids.len() + self.text_ids.len()));
        out.extend_from_slice(SAMPLE_MAGIC);
        out.extend_from_slice(&SAMPLE_VERSION.to_le_bytes());
        out.push(self.kind.code());
        for &d in &self.shape {
            let d = u32::try_from(d).map_err(|_| Error::Contract(format!("extent {d} exceeds u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in &self.frames {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for ids in [&self.gloss_ids, &self.text_ids] {
            let too_big = |what: usize| Error::Contract(format!("{what} does not fit in u16"));
            out.extend_from_slice(&u16::try_from(ids.len()).map_err(|_| too_big(ids.len()))?.to_le_bytes());
            for &id in ids.iter() {
                out.extend_from_slice(&u16::try_from(id).map_err(|_| too_big(id))?.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != SAMPLE_MAGIC {
            return Err(r.error_at(0, "bad magic, not a sample file"));
        }
        let version = r.u16()?;
        if version != SAMPLE_VERSION {
            return Err(r.error_at(4, &format!("unsupported version {version}")));
        }
        let code = r.u8()?;
        let kind = InputKind::from_code(code).ok_or_else(|| r.error_at(6, &format!("unknown input kind {code}")))?;
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = r.u32()? as usize;
        }
        let count = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let payload = count.and_then(|c| c.checked_mul(4));
        let remaining = bytes.len() - r.pos;
        let payload = match payload {
            Some(p) if p <= remaining => p,
            _ => {
                return Err(r.error_at(
                    r.pos as u64,
                    &format!("header shape {shape:?} needs more payload than the {remaining} bytes left"),
                ))
            }
        };
        let frames = r.take(payload)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let gloss_ids = r.ids()?;
        let text_ids = r.ids()?;
        if r.pos != bytes.len() {
            return Err(r.error_at(r.pos as u64, &format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(SampleRecord { kind, shape, frames, gloss_ids, text_ids })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn error_at(&self, offset: u64, msg: &str) -> Error {
        Error::Format { path: self.path.to_path_buf(), offset, msg: msg.to_string() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error_at(self.bytes.len() as u64, &format!("truncated: needed {n} more bytes")));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn ids(&mut self) -> Result<Vec<usize>> {
        let n = self.u16()? as usize;
        (0..n).map(|_| self.u16().map(usize::from)).collect()
    }
}

pub fn save_sample(record: &SampleRecord, path: &Path) -> Result<()> {
    let bytes = record.to_bytes()?;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_sample(path: &Path) -> Result<SampleRecord> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    SampleRecord::from_bytes(&bytes, path)
}

/// One manifest line. `path` is relative to the data directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub split: Split,
    pub sentence_id: usize,
    pub kind: InputKind,
}

pub fn manifest_to_string(entries: &[ManifestEntry]) -> String {
    entries
        .iter()
        .map(|e| serde_json::to_string(e).expect("manifest entry serialises") + "\n")
        .collect()
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut offset = 0u64;
    let mut out = Vec::new();
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if !trimmed.is_empty() {
            let entry = serde_json::from_str(trimmed).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                offset,
                msg: format!("bad manifest line: {e}"),
            })?;
            out.push(entry);
        }
        offset += line.len() as u64;
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}
