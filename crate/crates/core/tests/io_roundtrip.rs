//! Sample files, manifests, vocabularies, configs and checkpoints round-trip
//! bit-exactly; damaged files give format errors instead of panics.

use std::path::Path;

use proptest::prelude::*;
use slt_core::checkpoint::Checkpoint;
use slt_core::config::{InputKind, ModelConfig};
use slt_core::data::corpus::{vocabularies, Split};
use slt_core::data::io::{load_sample, manifest_to_string, parse_manifest, save_sample, ManifestEntry, SampleRecord};
use slt_core::data::vocab::Vocabularies;
use slt_core::train::{Prepared, Trainer};
use slt_core::Error;
use slt_tensor::Tensor;

fn record_strategy() -> impl Strategy<Value = SampleRecord> {
    (1usize..4, prop::bool::ANY, 1usize..5, prop::collection::vec(0usize..13, 0..6), prop::collection::vec(0usize..16, 0..8))
        .prop_flat_map(|(t, flow, side, glosses, text)| {
            let kind = if flow { InputKind::Flow } else { InputKind::Rgb };
            let n = t * kind.channels() * side * side;
            prop::collection::vec(any::<f32>(), n).prop_map(move |frames| SampleRecord {
                kind,
                shape: [t, kind.channels(), side, side],
                frames,
                gloss_ids: glosses.clone(),
                text_ids: text.clone(),
            })
        })
}

fn same_bits(a: &SampleRecord, b: &SampleRecord) -> bool {
    a.kind == b.kind
        && a.shape == b.shape
        && a.gloss_ids == b.gloss_ids
        && a.text_ids == b.text_ids
        && a.frames.iter().map(|v| v.to_bits()).eq(b.frames.iter().map(|v| v.to_bits()))
}

proptest! {
    #[test]
    fn sample_bytes_round_trip(record in record_strategy()) {
        let bytes = record.to_bytes().unwrap();
        let back = SampleRecord::from_bytes(&bytes, Path::new("mem")).unwrap();
        prop_assert!(same_bits(&record, &back));
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn damaged_samples_never_panic(record in record_strategy(), cut in 0usize..400, flip in 0usize..400, byte in any::<u8>()) {
        let bytes = record.to_bytes().unwrap();
        let truncated = &bytes[..cut.min(bytes.len().saturating_sub(1))];
        let short = SampleRecord::from_bytes(truncated, Path::new("t"));
        prop_assert!(matches!(short, Err(Error::Format { .. })), "truncated sample accepted");
        let mut flipped = bytes.clone();
        let i = flip % flipped.len();
        flipped[i] ^= byte | 1;
        // either a format error or a record that re-serialises to the damaged bytes
        match SampleRecord::from_bytes(&flipped, Path::new("f")) {
            Ok(r) => prop_assert_eq!(r.to_bytes().unwrap(), flipped),
            Err(e) => prop_assert!(matches!(e, Error::Format { .. }), "{}", e),
        }
    }

    #[test]
    fn manifest_round_trip(rows in prop::collection::vec((0usize..3, 0usize..100, prop::bool::ANY, "[a-z0-9_/]{1,12}"), 0..10)) {
        let entries: Vec<ManifestEntry> = rows
            .into_iter()
            .map(|(s, id, flow, path)| ManifestEntry {
                path: path.into(),
                split: [Split::Train, Split::Dev, Split::Test][s],
                sentence_id: id,
                kind: if flow { InputKind::Flow } else { InputKind::Rgb },
            })
            .collect();
        let text = manifest_to_string(&entries);
        prop_assert_eq!(parse_manifest(&text, Path::new("m")).unwrap(), entries);
    }

    #[test]
    fn config_round_trip(seed in any::<u64>(), epochs in 1usize..50, lambda in 0.0f64..5.0, lr in 1e-6f64..1e-1, flags in 0u8..16, flow in prop::bool::ANY) {
        let config = ModelConfig {
            seed,
            epochs,
            lambda_ctc: lambda,
            input_kind: if flow { InputKind::Flow } else { InputKind::Rgb },
            use_pe2d: flags & 1 != 0,
            use_attn2d: flags & 2 != 0,
            use_ffn2d: flags & 4 != 0,
            use_glosses: flags & 8 != 0,
            optimizer: slt_core::config::AdamConfig { lr, ..Default::default() },
            ..ModelConfig::default()
        };
        let text = config.to_json();
        let back = ModelConfig::from_json(&text).unwrap();
        prop_assert_eq!(&back, &config);
        prop_assert_eq!(back.to_json(), text);
    }
}

#[test]
fn sample_files_and_damage() {
    let dir = tempfile::tempdir().unwrap();
    let record = SampleRecord {
        kind: InputKind::Rgb,
        shape: [2, 3, 2, 2],
        frames: (0..24).map(|i| (i as f32).sin()).collect(),
        gloss_ids: vec![1, 5],
        text_ids: vec![1, 4, 8, 2],
    };
    let path = dir.path().join("a.slts");
    save_sample(&record, &path).unwrap();
    assert!(same_bits(&load_sample(&path).unwrap(), &record));

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    let err = SampleRecord::from_bytes(&bytes, &path).unwrap_err();
    assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");

    // header declares one more frame than the payload holds
    let mut bytes = record.to_bytes().unwrap();
    bytes[7] = 3;
    assert!(matches!(SampleRecord::from_bytes(&bytes, &path), Err(Error::Format { .. })));
    assert!(matches!(load_sample(&dir.path().join("missing.slts")), Err(Error::Io { .. })));
}

#[test]
fn manifest_errors_carry_offsets() {
    let text = "{\"path\":\"a\",\"split\":\"train\",\"sentence_id\":0,\"kind\":\"rgb\"}\nnot json\n";
    match parse_manifest(text, Path::new("m")) {
        Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, text.find("not").unwrap()),
        other => panic!("{other:?}"),
    }
}

#[test]
fn vocabularies_round_trip() {
    let v = vocabularies();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vocab.json");
    v.save(&path).unwrap();
    assert_eq!(Vocabularies::load(&path).unwrap(), v);
    std::fs::write(&path, "{\"text\": {\"<PAD>\": 1}}").unwrap();
    assert!(Vocabularies::load(&path).is_err());
}

#[test]
fn config_files_reject_unknown_keys_and_invalid_values() {
    let dir = tempfile::tempdir().unwrap();
    let load = |text: &str| {
        let path = dir.path().join("c.json");
        std::fs::write(&path, text).unwrap();
        ModelConfig::load(&path)
    };
    assert!(matches!(load("{\"schema_version\":1,\"colour\":3}"), Err(Error::Json { .. })));
    for bad in ["{\"schema_version\":2}", "{\"schema_version\":1,\"batch_size\":4}", "{\"schema_version\":1,\"heads\":3}", "{\"schema_version\":1,\"lambda_ctc\":-1}"] {
        assert!(matches!(load(bad), Err(Error::Config(_))), "{bad}");
    }
    assert_eq!(load("{\"schema_version\":1}").unwrap(), ModelConfig::default());
    let path = dir.path().join("saved.json");
    ModelConfig::default().save(&path).unwrap();
    assert_eq!(ModelConfig::load(&path).unwrap(), ModelConfig::default());
}

fn trained_checkpoint() -> Checkpoint {
    let config = ModelConfig { backbone: slt_core::gradsuite::toy_config(&ModelConfig::default()).backbone, ..ModelConfig::default() };
    let mut trainer = Trainer::new(&config, vocabularies(), Some("abc".into())).unwrap();
    let frames = Tensor::new((0..4 * 2 * 64).map(|i| (i as f64 * 0.7).sin()).collect(), &[4, 2, 8, 8]).unwrap();
    let sample = Prepared { frames, glosses: vec![1, 4], text: vec![1, 4, 8, 2] };
    trainer.step(&sample).unwrap();
    trainer.step(&sample).unwrap();
    trainer.epoch = 2;
    trainer.checkpoint()
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let ckpt = trained_checkpoint();
    let bytes = ckpt.to_bytes();
    let back = Checkpoint::from_bytes(&bytes, Path::new("c")).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.to_bytes(), bytes);
    let (model, optimizer) = back.restore().unwrap();
    assert_eq!(optimizer.step, 2);
    assert_eq!(Checkpoint::capture(&model, &optimizer, &back.vocab, 2, Some("abc".into())).to_bytes(), bytes);
    assert!(model.norm_stats().iter().all(|(_, s)| s.borrow().updates == 2));
}

#[test]
fn damaged_checkpoints_are_format_errors() {
    let bytes = trained_checkpoint().to_bytes();
    let p = Path::new("c");
    for cut in [0, 3, 9, 40, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(Checkpoint::from_bytes(&bytes[..cut], p), Err(Error::Format { .. })), "cut {cut}");
    }
    let mut wrong = bytes.clone();
    wrong[4] = 9;
    assert!(matches!(Checkpoint::from_bytes(&wrong, p), Err(Error::Format { offset: 4, .. })));
    let mut extra = bytes.clone();
    extra.extend_from_slice(&[0; 8]);
    assert!(matches!(Checkpoint::from_bytes(&extra, p), Err(Error::Format { .. })));
    let mut header = bytes;
    header[12] = b'#';
    assert!(matches!(Checkpoint::from_bytes(&header, p), Err(Error::Format { offset: 10, .. })));
}
