//! Trains the six architecture variants on one corpus and seed and tabulates
//! dev and test BLEU.

use std::path::Path;

use serde_json::{json, Value};

use crate::checkpoint::Checkpoint;
use crate::config::ModelConfig;
use crate::data::corpus::Split;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::BleuReport;
use crate::train::{evaluate_model, prepare, run_training};

/// Row label, output directory name, and the switches it turns off.
pub struct Variant {
    pub label: &'static str,
    pub slug: &'static str,
    pub apply: fn(&mut ModelConfig),
}

pub const VARIANTS: [Variant; 6] = [
    Variant { label: "P.A.", slug: "full", apply: |_| {} },
    Variant { label: "P.A. - P.E 2D", slug: "no_pe2d", apply: |c| c.use_pe2d = false },
    Variant { label: "P.A. - ATTN 2D", slug: "no_attn2d", apply: |c| c.use_attn2d = false },
    Variant { label: "P.A. - FFN 2D", slug: "no_ffn2d", apply: |c| c.use_ffn2d = false },
    Variant {
        label: "P.A. - ATTN2D - FFN2D",
        slug: "no_attn2d_ffn2d",
        apply: |c| {
            c.use_attn2d = false;
            c.use_ffn2d = false;
        },
    },
    Variant { label: "P.A. - GLOSSES", slug: "no_glosses", apply: |c| c.use_glosses = false },
];

/// `base` with the variant's switches applied; everything else shared.
pub fn variant_config(base: &ModelConfig, variant: &Variant) -> ModelConfig {
    let mut c = base.clone();
    c.use_pe2d = true;
    c.use_attn2d = true;
    c.use_ffn2d = true;
    c.use_glosses = true;
    (variant.apply)(&mut c);
    c
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub label: String,
    pub dev: BleuReport,
    pub test: BleuReport,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub seed: u64,
    pub corpus_hash: Option<String>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_json(&self) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| json!({"row": r.label, "dev": r.dev.to_json(), "test": r.test.to_json()}))
            .collect();
        json!({"seed": self.seed, "corpus_hash": self.corpus_hash, "columns": ["BLEU1", "BLEU2", "BLEU3", "BLEU4"], "rows": rows})
    }

    /// Markdown table, one row per variant, test BLEU-1…4.
    pub fn to_table(&self) -> String {
        let mut out = String::from("| Model | BLEU1 | BLEU2 | BLEU3 | BLEU4 |\n|---|---|---|---|---|\n");
        for r in &self.rows {
            let cells: Vec<String> = r.test.bleu.iter().map(|b| format!("{b:.4}")).collect();
            out += &format!("| {} | {} |\n", r.label, cells.join(" | "));
        }
        out
    }
}

/// Trains every variant into `out_dir/<slug>/` and evaluates dev and test.
pub fn run_ablation(base: &ModelConfig, dataset: &Dataset, out_dir: &Path) -> Result<AblationReport> {
    base.validate()?;
    if !out_dir.is_dir() {
        std::fs::create_dir(out_dir).map_err(|e| Error::io(out_dir, e))?;
    }
    let dev = prepare(&dataset.load_split(base.input_kind, Split::Dev)?)?;
    let test = prepare(&dataset.load_split(base.input_kind, Split::Test)?)?;
    if dev.is_empty() || test.is_empty() {
        return Err(Error::config("ablation needs non-empty dev and test splits"));
    }
    let mut rows = Vec::with_capacity(VARIANTS.len());
    for variant in &VARIANTS {
        let config = variant_config(base, variant);
        log::info!("ablation row `{}`", variant.label);
        let summary = run_training(&config, dataset, &out_dir.join(variant.slug), None)?;
        let (model, _) = Checkpoint::load(&summary.checkpoint)?.restore()?;
        rows.push(AblationRow {
            label: variant.label.to_string(),
            dev: evaluate_model(&model, &dataset.vocab, &dev)?.report,
            test: evaluate_model(&model, &dataset.vocab, &test)?.report,
        });
    }
    Ok(AblationReport { seed: base.seed, corpus_hash: dataset.hash.clone(), rows })
}
