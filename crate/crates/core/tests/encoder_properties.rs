//! Encoder identities, ablation consistency and the spatial permutation
//! behaviour of 2-D attention with and without positional encoding.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slt_core::attention::Attn2d;
use slt_core::config::{InputKind, ModelConfig};
use slt_core::encoder::{flatten_maps, Encoder};
use slt_core::model::Model;
use slt_core::posenc2d::PosEnc2D;
use slt_core::Error;
use slt_tensor::{NormMode, Tensor};

fn random_tensor(seed: u64, shape: &[usize]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.gen_range(0.0..1.0)).collect(), shape).unwrap()
}

fn frames(config: &ModelConfig, t: usize, seed: u64) -> Tensor {
    let s = config.backbone.input_size;
    random_tensor(seed, &[t, config.input_kind.channels(), s, s])
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.to_vec().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn gated_attention_alone_is_the_identity_at_init() {
    for kind in [InputKind::Flow, InputKind::Rgb] {
        let config = ModelConfig { input_kind: kind, use_pe2d: false, use_attn2d: true, use_ffn2d: false, ..ModelConfig::default() };
        let encoder = Encoder::new(&config, 12).unwrap();
        assert_eq!(encoder.attn.as_ref().unwrap().gamma.to_vec(), vec![0.0]);
        let x = frames(&config, 5, 1);
        let memory = encoder.forward(&x, NormMode::Train).unwrap().memory;
        let backbone = flatten_maps(&encoder.backbone.forward(&x).unwrap()).unwrap();
        assert_eq!(bits(&memory), bits(&backbone));
    }
}

#[test]
fn default_shapes() {
    let config = ModelConfig::default();
    let encoder = Encoder::new(&config, 12).unwrap();
    let out = encoder.forward(&frames(&config, 3, 2), NormMode::Train).unwrap();
    assert_eq!(out.memory.shape(), &[3, 256]);
    assert_eq!(out.gloss_log_probs.unwrap().shape(), &[3, 13]);
    assert_eq!(out.attention.len(), 3);
    assert_eq!(encoder.backbone.forward(&frames(&config, 2, 3)).unwrap().shape(), &[2, 16, 4, 4]);
    for map in &out.attention {
        assert_eq!(map.positions, 16);
        for row in map.rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&a| a > 0.0 && a < 1.0));
        }
    }
    let rgb = ModelConfig { input_kind: InputKind::Rgb, ..config.clone() };
    assert!(matches!(encoder.forward(&frames(&rgb, 2, 4), NormMode::Train), Err(Error::Config(_))));
    let no_gloss = ModelConfig { use_glosses: false, ..config };
    assert!(Encoder::new(&no_gloss, 12).unwrap().gloss_head.is_none());
}

#[test]
fn minimal_row_matches_hand_built_pipeline() {
    let config = ModelConfig { use_attn2d: false, use_ffn2d: false, ..ModelConfig::default() };
    let encoder = Encoder::new(&config, 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for stage in &encoder.backbone.stages {
        let b = stage.bias.as_ref().unwrap();
        b.set_data(&(0..b.numel()).map(|_| rng.gen_range(-0.1..0.1)).collect::<Vec<_>>()).unwrap();
    }
    let x = frames(&config, 4, 6);

    let mut maps = x.clone();
    for stage in &encoder.backbone.stages {
        maps = maps.conv2d(&stage.weight, 2, 1).unwrap().add_channel_bias(stage.bias.as_ref().unwrap()).unwrap().relu();
    }
    let pe = PosEnc2D::new(16, 4, 4).unwrap();
    let table = Tensor::new(pe.table().to_vec(), &[16, 4, 4]).unwrap();
    let expected = maps.add_broadcast(&table).unwrap().reshape(&[4, 256]).unwrap();

    let got = encoder.forward(&x, NormMode::Train).unwrap().memory;
    assert_eq!(bits(&got), bits(&expected));
}

#[test]
fn disabling_a_component_equals_building_without_it() {
    // gamma = 0, so the attention block contributes nothing: the full model
    // and the model without it must agree bit for bit on every output
    let full = ModelConfig::default();
    let without = ModelConfig { use_attn2d: false, ..full.clone() };
    let (a, b) = (Model::new(&full, 16, 13).unwrap(), Model::new(&without, 16, 13).unwrap());
    let x = frames(&full, 4, 7);
    let text = [1, 5, 8, 11, 2];
    let la = a.decoder.forward(&a.encode(&x, NormMode::Train).unwrap().memory, &text).unwrap();
    let lb = b.decoder.forward(&b.encode(&x, NormMode::Train).unwrap().memory, &text).unwrap();
    assert_eq!(bits(&la), bits(&lb));
    assert_eq!(a.translate(&x).unwrap(), b.translate(&x).unwrap());

    // shared components draw identical initial weights whatever else is on
    let bare = ModelConfig { use_pe2d: false, use_attn2d: false, use_ffn2d: false, use_glosses: false, ..full.clone() };
    let c = Model::new(&bare, 16, 13).unwrap();
    let named = |m: &Model| m.params().into_iter().map(|(n, t)| (n, bits(&t))).collect::<std::collections::BTreeMap<_, _>>();
    let (pa, pc) = (named(&a), named(&c));
    for (name, value) in &pc {
        assert_eq!(Some(value), pa.get(name), "{name}");
    }
}

/// `out[:, :, p] = x[:, :, perm[p]]` over flattened spatial positions.
fn permute_positions(x: &Tensor, perm: &[usize]) -> Tensor {
    let &[t, c, h, w] = x.shape() else { panic!("expected 4-D") };
    let n = h * w;
    let data = x.to_vec();
    let mut out = vec![0.0; data.len()];
    for plane in 0..t * c {
        for p in 0..n {
            out[plane * n + p] = data[plane * n + perm[p]];
        }
    }
    Tensor::new(out, &[t, c, h, w]).unwrap()
}

fn relative_gap(a: &Tensor, b: &Tensor) -> f64 {
    let (a, b) = (a.to_vec(), b.to_vec());
    let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    diff / b.iter().map(|y| y * y).sum::<f64>().sqrt()
}

fn trained_like_block(seed: u64) -> Attn2d {
    let block = Attn2d::new(&mut ChaCha8Rng::seed_from_u64(seed), 16);
    block.gamma.set_data(&[0.8]).unwrap();
    block
}

#[test]
fn attention_is_permutation_equivariant_without_positional_encoding() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..20 {
        let block = trained_like_block(trial);
        let x = random_tensor(100 + trial, &[2, 16, 4, 4]);
        let mut perm: Vec<usize> = (0..16).collect();
        perm.shuffle(&mut rng);
        let (out, maps) = block.forward(&x).unwrap();
        let (out_p, maps_p) = block.forward(&permute_positions(&x, &perm)).unwrap();
        let expected = permute_positions(&out, &perm);
        let worst = out_p.to_vec().iter().zip(expected.to_vec()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-9, "trial {trial}: {worst:e}");
        // the attention map is conjugated by the same permutation
        for (m, mp) in maps.iter().zip(&maps_p) {
            for i in 0..16 {
                for j in 0..16 {
                    assert!((mp.row(i)[j] - m.row(perm[i])[perm[j]]).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn positional_encoding_breaks_equivariance() {
    let pe = PosEnc2D::new(16, 4, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let block = trained_like_block(3);
    let x = random_tensor(200, &[2, 16, 4, 4]);
    let run = |maps: &Tensor| block.forward(&pe.add_to(maps).unwrap()).unwrap().0;
    let out = run(&x);
    let mut largest: f64 = 0.0;
    for _ in 0..10 {
        let mut perm: Vec<usize> = (0..16).collect();
        perm.shuffle(&mut rng);
        let gap = relative_gap(&run(&permute_positions(&x, &perm)), &permute_positions(&out, &perm));
        largest = largest.max(gap);
    }
    assert!(largest > 1e-3, "largest relative change {largest:e}");
}
