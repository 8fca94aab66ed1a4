use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autograd::{grad_check_params, Graph, ParamId, ParamSet, Tensor, Var};

fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn set(ps: &mut ParamSet, id: ParamId, t: Tensor) {
    ps.get_mut(id).values_mut().copy_from_slice(t.values());
}

fn identity_attention(ps: &mut ParamSet, d: usize, heads: usize) -> AttentionParams {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = AttentionParams::new(ps, "attn", d, heads, &mut rng).unwrap();
    for id in [p.w_q, p.w_k, p.w_v, p.w_o] {
        set(ps, id, Tensor::eye(d));
    }
    p
}

#[test]
fn rejects_indivisible_heads() {
    let mut ps = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(AttentionParams::new(&mut ps, "a", 10, 3, &mut rng).is_err());
}

#[test]
fn single_key_returns_value_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ps = ParamSet::new();
    let p = AttentionParams::new(&mut ps, "a", 8, 2, &mut rng).unwrap();
    set(&mut ps, p.w_o, Tensor::eye(8));
    let xq = random(&[3, 8], &mut rng);
    let xkv = random(&[1, 8], &mut rng);
    let mut g = Graph::with_params(&ps);
    let q = g.constant(xq);
    let kv = g.constant(xkv.clone());
    let out = attention(&mut g, q, kv, &p, &[true]).unwrap();
    let wv = ps.get(p.w_v);
    let v_row: Vec<f64> = (0..8)
        .map(|j| (0..8).map(|k| xkv.values()[k] * wv.at(k, j)).sum())
        .collect();
    for r in 0..3 {
        for j in 0..8 {
            assert!((g.value(out)[r * 8 + j] - v_row[j]).abs() < 1e-12);
        }
    }
}

#[test]
fn identical_keys_give_uniform_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut ps = ParamSet::new();
    let p = AttentionParams::new(&mut ps, "a", 8, 4, &mut rng).unwrap();
    let row = random(&[1, 8], &mut rng);
    let xkv = Tensor::new(vec![5, 8], row.values().repeat(5)).unwrap();
    let mut g = Graph::with_params(&ps);
    let q = g.constant(random(&[2, 8], &mut rng));
    let kv = g.constant(xkv);
    let valid = [true, true, false, true, false];
    let att = attend(&mut g, q, kv, &p, AttnMask::Keys(&valid)).unwrap();
    for w in att.weights {
        for row in g.value(w).chunks(5) {
            for (x, ok) in row.iter().zip(valid) {
                let expect = if ok { 1.0 / 3.0 } else { 0.0 };
                assert!((x - expect).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn two_queries_three_keys_by_hand() {
    let mut ps = ParamSet::new();
    let p = identity_attention(&mut ps, 2, 1);
    let mut g = Graph::with_params(&ps);
    let q = g.constant(Tensor::from_rows(&[vec![1., 0.], vec![0., 1.]]).unwrap());
    let kv = g.constant(Tensor::from_rows(&[vec![1., 0.], vec![0., 1.], vec![1., 1.]]).unwrap());
    let att = attend(&mut g, q, kv, &p, AttnMask::Keys(&[true; 3])).unwrap();
    // softmax([1, 0, 1] / sqrt 2) and its mirror
    let w = [0.40111209, 0.19777581, 0.40111209, 0.19777581, 0.40111209, 0.40111209];
    let o = [0.80222419, 0.59888791, 0.59888791, 0.80222419];
    for (a, b) in g.value(att.weights[0]).iter().zip(w) {
        assert!((a - b).abs() < 1e-8);
    }
    for (a, b) in g.value(att.out).iter().zip(o) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn padded_keys_do_not_affect_output_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut ps = ParamSet::new();
    let p = AttentionParams::new(&mut ps, "a", 12, 3, &mut rng).unwrap();
    let xq = random(&[4, 12], &mut rng);
    let mut xkv = random(&[6, 12], &mut rng);
    let valid = [true, false, true, true, false, false];
    let run = |xkv: &Tensor| {
        let mut g = Graph::with_params(&ps);
        let q = g.constant(xq.clone());
        let kv = g.constant(xkv.clone());
        let out = attention(&mut g, q, kv, &p, &valid).unwrap();
        g.value(out).iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    let before = run(&xkv);
    for j in [1, 4, 5] {
        for c in 0..12 {
            xkv.values_mut()[j * 12 + c] = rng.random_range(-50.0..50.0);
        }
    }
    assert_eq!(before, run(&xkv));
}

#[test]
fn all_masked_row_is_a_contract_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut ps = ParamSet::new();
    let p = AttentionParams::new(&mut ps, "a", 4, 2, &mut rng).unwrap();
    let mut g = Graph::with_params(&ps);
    let q = g.constant(random(&[2, 4], &mut rng));
    assert!(attention(&mut g, q, q, &p, &[false, false]).is_err());
}

fn encoder(d: usize, heads: usize, seed: u64) -> (ParamSet, EncoderLayer) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    let layer = EncoderLayer::new(&mut ps, "enc", &LayerConfig::new(d, heads), &mut rng).unwrap();
    (ps, layer)
}

#[test]
fn encoder_preserves_shape() {
    let (ps, layer) = encoder(16, 4, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for l in [1, 7, 50] {
        let mut g = Graph::with_params(&ps);
        let x = g.constant(random(&[l, 16], &mut rng));
        let y = layer.forward(&mut g, x, &vec![true; l]).unwrap();
        assert_eq!(g.shape(y), &[l, 16]);
    }
}

#[test]
fn encoder_gradient_check() {
    let (mut ps, layer) = encoder(8, 2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&[2, 8], &mut rng);
    let w = random(&[2, 8], &mut rng);
    let report = grad_check_params(
        &mut ps,
        |g| {
            let xv = g.constant(x.clone());
            let y = layer.forward(g, xv, &[true, true])?;
            let wv = g.constant(w.clone());
            let p = g.mul(y, wv)?;
            Ok(g.sum(p))
        },
        1e-5,
        None,
    )
    .unwrap();
    assert!(report.passes(1e-4), "{report:?}");
}

#[test]
fn encoder_with_zero_weights_is_double_layer_norm() {
    let (mut ps, layer) = encoder(8, 2, 5);
    let zero: Vec<ParamId> = ps
        .iter()
        .filter(|(_, n, _)| n.contains("attn") || n.contains("ffn"))
        .map(|(id, _, _)| id)
        .collect();
    for id in zero {
        ps.get_mut(id).values_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&[3, 8], &mut rng);
    let mut g = Graph::with_params(&ps);
    let xv = g.constant(x);
    let y = layer.forward(&mut g, xv, &[true; 3]).unwrap();
    let ln_once = layer.ln1.forward(&mut g, xv).unwrap();
    let ln_twice = layer.ln2.forward(&mut g, ln_once).unwrap();
    for (a, b) in g.value(y).iter().zip(g.value(ln_twice)) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn reviser(d: usize, heads: usize, seed: u64) -> (ParamSet, ReviserLayer) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    let layer = ReviserLayer::new(&mut ps, "rev", &LayerConfig::new(d, heads), &mut rng).unwrap();
    (ps, layer)
}

#[test]
fn reviser_output_shape() {
    let (ps, layer) = reviser(64, 4, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut g = Graph::with_params(&ps);
    let slots = g.constant(random(&[7, 64], &mut rng));
    let z = g.constant(random(&[12, 64], &mut rng));
    let y = layer.forward(&mut g, slots, z, &[true; 12]).unwrap();
    assert_eq!(g.shape(y), &[7, 64]);
}

#[test]
fn single_slot_self_attention_is_the_value_path() {
    let (ps, layer) = reviser(8, 2, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random(&[1, 8], &mut rng);
    let mut g = Graph::with_params(&ps);
    let xv = g.constant(x);
    let out = attention(&mut g, xv, xv, &layer.self_attention, &[true]).unwrap();
    let wv = g.param(layer.self_attention.w_v);
    let wo = g.param(layer.self_attention.w_o);
    let v = g.matmul(xv, wv).unwrap();
    let direct = g.matmul(v, wo).unwrap();
    for (a, b) in g.value(out).iter().zip(g.value(direct)) {
        assert!((a - b).abs() < 1e-12);
    }
}

/// `|d out_i / d slot_j|` summed over coordinates, by central differences.
fn sensitivity(
    ps: &ParamSet,
    layer: &ReviserLayer,
    slots: &Tensor,
    z: &Tensor,
    causal: bool,
) -> Vec<Vec<f64>> {
    let m = slots.shape()[0];
    let d = slots.shape()[1];
    let mask = causal_mask(m);
    let run = |s: &Tensor| {
        let mut g = Graph::with_params(ps);
        let sv = g.constant(s.clone());
        let zv = g.constant(z.clone());
        let valid = vec![true; z.shape()[0]];
        let y: Var = if causal {
            layer
                .forward_with_slot_mask(&mut g, sv, zv, &valid, AttnMask::Pairs(&mask))
                .unwrap()
        } else {
            layer.forward(&mut g, sv, zv, &valid).unwrap()
        };
        g.value(y).to_vec()
    };
    let h = 1e-5;
    let mut out = vec![vec![0.0; m]; m];
    for j in 0..m {
        for c in 0..d {
            let mut plus = slots.clone();
            plus.values_mut()[j * d + c] += h;
            let mut minus = slots.clone();
            minus.values_mut()[j * d + c] -= h;
            let (yp, ym) = (run(&plus), run(&minus));
            for (i, row) in out.iter_mut().enumerate() {
                row[j] += (0..d)
                    .map(|k| ((yp[i * d + k] - ym[i * d + k]) / (2.0 * h)).abs())
                    .sum::<f64>();
            }
        }
    }
    out
}

#[test]
fn unmasked_reviser_couples_every_slot_pair() {
    let (ps, layer) = reviser(8, 2, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let slots = random(&[4, 8], &mut rng);
    let z = random(&[5, 8], &mut rng);
    let open = sensitivity(&ps, &layer, &slots, &z, false);
    let masked = sensitivity(&ps, &layer, &slots, &z, true);
    for i in 0..4 {
        for j in 0..4 {
            assert!(open[i][j] > 1e-6, "open[{i}][{j}] = {}", open[i][j]);
            if j > i {
                assert_eq!(masked[i][j], 0.0, "masked[{i}][{j}]");
            } else {
                assert!(masked[i][j] > 1e-6);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn attention_rows_sum_to_one_over_unmasked_keys(
        seed in 0u64..1000,
        lq in 1usize..6,
        lkv in 1usize..9,
        mask_bits in 0u32..512,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let p = AttentionParams::new(&mut ps, "a", 8, 2, &mut rng).unwrap();
        let mut valid: Vec<bool> = (0..lkv).map(|j| mask_bits >> j & 1 == 1).collect();
        valid[(seed as usize) % lkv] = true;
        let mut g = Graph::with_params(&ps);
        let q = g.constant(random(&[lq, 8], &mut rng));
        let kv = g.constant(random(&[lkv, 8], &mut rng));
        let att = attend(&mut g, q, kv, &p, AttnMask::Keys(&valid)).unwrap();
        prop_assert_eq!(g.shape(att.out), &[lq, 8]);
        for w in att.weights {
            for row in g.value(w).chunks(lkv) {
                let s: f64 = row.iter().zip(&valid).filter(|(_, ok)| **ok).map(|(x, _)| x).sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
                prop_assert!(row.iter().zip(&valid).all(|(x, ok)| *ok || *x == 0.0));
            }
        }
    }
}
