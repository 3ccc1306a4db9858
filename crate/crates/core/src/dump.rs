//! Writes attention matrices as CSV grids and 8-bit grayscale PGM images.
//!
//! One matrix per encoder frame (`encoder_frame000`, `[h·w, h·w]`), and one
//! per decoder head for self attention (`decoder_self_head0`, `[L, L]`) and
//! cross attention (`decoder_cross_head0`, `[L, T]`). Decoder rows are the
//! positions of the greedy output fed back as input, so row `i` is the step
//! that produced token `i + 1`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use slt_tensor::{no_grad, NormMode};

use crate::data::io::SampleRecord;
use crate::data::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::model::Model;

/// A row-major matrix plus its label.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrid {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl AttentionGrid {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    /// Full-precision CSV, one matrix row per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.rows {
            let cells: Vec<String> = self.row(r).iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", cells.join(",")).unwrap();
        }
        out
    }

    /// Binary PGM scaled so the largest weight is white.
    pub fn to_pgm(&self) -> Vec<u8> {
        let max = self.values.iter().copied().fold(0.0, f64::max);
        let mut out = format!("P5\n{} {}\n255\n", self.cols, self.rows).into_bytes();
        out.extend(self.values.iter().map(|&v| if max > 0.0 { (v / max * 255.0).round().clamp(0.0, 255.0) as u8 } else { 0 }));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionDump {
    pub encoder: Vec<AttentionGrid>,
    pub decoder_self: Vec<AttentionGrid>,
    pub decoder_cross: Vec<AttentionGrid>,
    /// Greedy output, starting with BOS.
    pub tokens: Vec<usize>,
}

impl AttentionDump {
    pub fn grids(&self) -> impl Iterator<Item = &AttentionGrid> {
        self.encoder.iter().chain(&self.decoder_self).chain(&self.decoder_cross)
    }
}

/// Collects every attention matrix for one sample.
pub fn collect_attention(model: &Model, record: &SampleRecord) -> Result<AttentionDump> {
    if record.kind != model.config.input_kind {
        return Err(Error::config(format!(
            "sample holds {} frames but the checkpoint expects {}",
            record.kind.name(),
            model.config.input_kind.name()
        )));
    }
    let frames = record.frames_tensor()?;
    no_grad(|| {
        let enc = model.encode(&frames, NormMode::Eval)?;
        let encoder = enc
            .attention
            .iter()
            .enumerate()
            .map(|(t, a)| AttentionGrid {
                name: format!("encoder_frame{t:03}"),
                rows: a.positions,
                cols: a.positions,
                values: a.weights.clone(),
            })
            .collect();
        let tokens = model.decoder.greedy_decode(&enc.memory, model.config.max_len)?;
        let prefix = &tokens[..tokens.len() - 1];
        let out = model.decoder.forward_cached(&model.decoder.cross_cache(&enc.memory)?, prefix)?;
        let (len, t) = (prefix.len(), record.frames());
        let heads = |kind: &str, maps: Vec<Vec<f64>>, cols: usize| -> Vec<AttentionGrid> {
            maps.into_iter()
                .enumerate()
                .map(|(h, values)| AttentionGrid { name: format!("decoder_{kind}_head{h}"), rows: len, cols, values })
                .collect()
        };
        Ok(AttentionDump {
            encoder,
            decoder_self: heads("self", out.self_attention, len),
            decoder_cross: heads("cross", out.cross_attention, t),
            tokens,
        })
    })
}

#[derive(Debug, Clone)]
pub struct DumpSummary {
    pub dump: AttentionDump,
    pub files: Vec<PathBuf>,
    pub translation: String,
}

impl DumpSummary {
    pub fn to_json(&self) -> Value {
        json!({
            "translation": self.translation,
            "encoder_maps": self.dump.encoder.len(),
            "decoder_self_heads": self.dump.decoder_self.len(),
            "decoder_cross_heads": self.dump.decoder_cross.len(),
            "files": self.files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        })
    }
}

/// Writes `<name>.csv` and `<name>.pgm` for every matrix into `out_dir`
/// (created if missing, parent must exist).
pub fn dump_attention(model: &Model, text_vocab: &Vocabulary, record: &SampleRecord, out_dir: &Path) -> Result<DumpSummary> {
    let dump = collect_attention(model, record)?;
    if !out_dir.is_dir() {
        std::fs::create_dir(out_dir).map_err(|e| Error::io(out_dir, e))?;
    }
    let mut files = Vec::new();
    for grid in dump.grids() {
        let csv = out_dir.join(format!("{}.csv", grid.name));
        std::fs::write(&csv, grid.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let pgm = out_dir.join(format!("{}.pgm", grid.name));
        std::fs::write(&pgm, grid.to_pgm()).map_err(|e| Error::io(&pgm, e))?;
        files.push(csv);
        files.push(pgm);
    }
    let translation = text_vocab.render(&dump.tokens)?;
    Ok(DumpSummary { dump, files, translation })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_and_pgm_layout() {
        let g = AttentionGrid { name: "m".into(), rows: 2, cols: 3, values: vec![0.5, 0.25, 0.25, 0.0, 0.0, 1.0] };
        let csv = g.to_csv();
        let parsed: Vec<Vec<f64>> =
            csv.lines().map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
        assert_eq!(parsed, vec![vec![0.5, 0.25, 0.25], vec![0.0, 0.0, 1.0]]);
        let pgm = g.to_pgm();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(&pgm[header.len()..], &[128, 64, 64, 0, 0, 255]);
    }
}
