use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::diffcore::{check_gradients, CustomOp};

const NINF: f64 = f64::NEG_INFINITY;

fn num(n: usize) -> Vec<FeatureKind> {
    vec![FeatureKind::Numerical; n]
}

fn tiny(layers: usize) -> EncoderConfig {
    EncoderConfig {
        d_model: 4,
        n_heads: 2,
        n_layers: layers,
        ff_dim: 6,
        group: 1,
    }
}

fn setup(kinds: &[FeatureKind], cfg: EncoderConfig, seed: u64) -> (Encoder, ParamStore) {
    let enc = Encoder::new("enc.t.", kinds, cfg).unwrap();
    let mut store = ParamStore::new();
    enc.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(seed));
    (enc, store)
}

fn random_batch(rng: &mut ChaCha8Rng, kinds: &[FeatureKind], b: usize, p_obs: f64) -> (Tensor, Vec<bool>) {
    let d = kinds.len();
    let mut values = Vec::with_capacity(b * d);
    let mut observed = Vec::with_capacity(b * d);
    for _ in 0..b {
        for k in kinds {
            values.push(match k {
                FeatureKind::Categorical { cardinality } => rng.gen_range(0..*cardinality) as f64,
                _ => rng.gen_range(-2.0..2.0),
            });
            observed.push(rng.gen::<f64>() < p_obs);
        }
    }
    (Tensor::new([b, d], values).unwrap(), observed)
}

#[test]
fn numerical_token_scales_direction() {
    let (enc, mut store) = setup(&num(1), EncoderConfig { d_model: 2, n_heads: 1, ..tiny(0) }, 0);
    *store.value_mut("enc.t.bias").unwrap() = Tensor::zeros([1, 2]);
    *store.value_mut("enc.t.num.v_present").unwrap() = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
    let t = enc.embed_features(&store, &[3.0], &[true]).unwrap();
    assert_eq!(t.tokens.data(), &[3.0, 0.0]);
    assert_eq!(t.missing, vec![false]);
}

#[test]
fn missing_numerical_token_is_bias() {
    let (enc, mut store) = setup(&num(1), EncoderConfig { d_model: 2, n_heads: 1, ..tiny(0) }, 0);
    *store.value_mut("enc.t.bias").unwrap() = Tensor::from_rows(&[vec![0.2, -0.1]]).unwrap();
    let t = enc.embed_features(&store, &[123.0], &[false]).unwrap();
    assert_eq!(t.tokens.data(), &[0.2, -0.1]);
    assert_eq!(t.missing, vec![true]);
}

#[test]
fn categorical_token_is_table_lookup() {
    let kinds = [FeatureKind::Categorical { cardinality: 2 }];
    let (enc, mut store) = setup(&kinds, EncoderConfig { d_model: 2, n_heads: 1, ..tiny(0) }, 0);
    *store.value_mut("enc.t.bias").unwrap() = Tensor::zeros([1, 2]);
    *store.value_mut("enc.t.cat.0.table").unwrap() = Tensor::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
    let t = enc.embed_features(&store, &[1.0], &[true]).unwrap();
    assert_eq!(t.tokens.data(), &[2.0, 2.0]);
    assert!(enc.embed_features(&store, &[2.0], &[true]).is_err());
    let t = enc.embed_features(&store, &[5.0], &[false]).unwrap();
    assert_eq!(t.tokens.data(), &[0.0, 0.0]);
}

#[test]
fn attention_mask_examples() {
    assert_eq!(build_attention_mask(&[false, false]).data(), &[0.0; 4]);
    assert_eq!(build_attention_mask(&[true, false]).data(), &[NINF, NINF, NINF, 0.0]);
    assert!(build_attention_mask(&[true, true, true]).data().iter().all(|&m| m == NINF));
    let m = build_attention_mask(&[false, true, false, true]);
    assert_eq!(m, m.transposed().unwrap());
}

#[test]
fn attention_saturates_to_identity() {
    let q = Tensor::from_rows(&[vec![40.0, 0.0], vec![0.0, 40.0]]).unwrap();
    let v = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    let out = masked_attention(&q, &q, &v, &build_attention_mask(&[false, false])).unwrap();
    for (a, b) in out.data().iter().zip(v.data()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn one_missing_of_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let q = gaussian_tensor(&mut rng, &[2, 3], 1.0);
    let k = gaussian_tensor(&mut rng, &[2, 3], 1.0);
    let v = gaussian_tensor(&mut rng, &[2, 3], 1.0);
    let out = masked_attention(&q, &k, &v, &build_attention_mask(&[false, true])).unwrap();
    assert_eq!(out.row(0), v.row(0));
    assert_eq!(out.row(1), &[0.0; 3]);
    let all = masked_attention(&q, &k, &v, &build_attention_mask(&[true, true])).unwrap();
    assert!(all.data().iter().all(|&x| x == 0.0));
}

/// `ReLU(softmax(QK^T/sqrt(dh) + M) + M^T) V` assembled from graph primitives.
fn composed_attention(g: &mut Graph, q: NodeId, k: NodeId, v: NodeId, missing: &[bool]) -> NodeId {
    let dh = g.value(q).cols() as f64;
    let s = g.matmul_nt(q, k).unwrap();
    let s = g.scale(s, 1.0 / dh.sqrt()).unwrap();
    let m = build_attention_mask(missing);
    let mt = g.constant(m.transposed().unwrap());
    let m = g.constant(m);
    let p = g.masked_softmax(s, m).unwrap();
    let p = g.add(p, mt).unwrap();
    let p = g.relu(p).unwrap();
    g.matmul(p, v).unwrap()
}

#[test]
fn fused_attention_matches_composition_and_its_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..20 {
        let n = rng.gen_range(1..6);
        let dh = rng.gen_range(1..4);
        let missing: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        let mut g = Graph::new();
        let q = g.param("q", gaussian_tensor(&mut rng, &[n, dh], 1.0), true);
        let k = g.param("k", gaussian_tensor(&mut rng, &[n, dh], 1.0), true);
        let v = g.param("v", gaussian_tensor(&mut rng, &[n, dh], 1.0), true);
        let w = g.constant(gaussian_tensor(&mut rng, &[n, dh], 1.0));
        let fused = g
            .custom(
                Arc::new(MaskedAttention { batch: 1, n_tok: n, n_heads: 1, missing: Arc::new(missing.clone()) }),
                &[q, k, v],
            )
            .unwrap();
        let reference = composed_attention(&mut g, q, k, v, &missing);
        for (a, b) in g.value(fused).data().iter().zip(g.value(reference).data()) {
            assert!((a - b).abs() < 1e-12, "trial {trial}");
        }
        let lf = g.mul(fused, w).unwrap();
        let lf = g.sum(lf).unwrap();
        let lr = g.mul(reference, w).unwrap();
        let lr = g.sum(lr).unwrap();
        let (gf, gr) = (g.backward(lf).unwrap(), g.backward(lr).unwrap());
        for name in ["q", "k", "v"] {
            for (a, b) in gf.named()[name].data().iter().zip(gr.named()[name].data()) {
                assert!((a - b).abs() < 1e-12, "trial {trial} {name}");
            }
        }
    }
}

#[test]
fn multi_head_fused_attention_is_headwise_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (batch, n, heads, dh) = (3, 4, 2, 3);
    let d = heads * dh;
    let q = gaussian_tensor(&mut rng, &[batch * n, d], 1.0);
    let k = gaussian_tensor(&mut rng, &[batch * n, d], 1.0);
    let v = gaussian_tensor(&mut rng, &[batch * n, d], 1.0);
    let missing: Vec<bool> = (0..batch * n).map(|i| i % 3 == 1 || i >= 8).collect();
    let op = MaskedAttention { batch, n_tok: n, n_heads: heads, missing: Arc::new(missing.clone()) };
    let out = op.forward(&[&q, &k, &v]).unwrap();
    let slice = |t: &Tensor, b: usize, h: usize| {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| t.row(b * n + i)[h * dh..(h + 1) * dh].to_vec()).collect();
        Tensor::from_rows(&rows).unwrap()
    };
    for b in 0..batch {
        let mask = build_attention_mask(&missing[b * n..(b + 1) * n]);
        for h in 0..heads {
            let r = masked_attention(&slice(&q, b, h), &slice(&k, b, h), &slice(&v, b, h), &mask).unwrap();
            let o = slice(&out, b, h);
            for (a, c) in o.data().iter().zip(r.data()) {
                assert!((a - c).abs() < 1e-12);
            }
        }
    }
}

fn mixed_kinds() -> Vec<FeatureKind> {
    vec![
        FeatureKind::Numerical,
        FeatureKind::Categorical { cardinality: 3 },
        FeatureKind::Ordinal,
        FeatureKind::Numerical,
    ]
}

/// Weighted sum of the encoder output as a scalar loss.
fn encoder_loss(
    enc: &Encoder,
    store: &ParamStore,
    values: &Tensor,
    observed: &[bool],
    as_input: bool,
    seed: u64,
) -> (Graph, NodeId, NodeId) {
    let mut g = Graph::new();
    let mut p = Binder::new(store);
    let v = if as_input { g.input(values.clone()) } else { g.constant(values.clone()) };
    let h = enc.forward(&mut g, &mut p, v, observed).unwrap();
    let shape = g.value(h).shape().to_vec();
    let w = g.constant(gaussian_tensor(&mut ChaCha8Rng::seed_from_u64(seed), &shape, 1.0));
    let l = g.mul(h, w).unwrap();
    let l = g.sum(l).unwrap();
    (g, l, v)
}

#[test]
fn encoder_gradients_match_finite_differences() {
    let kinds = mixed_kinds();
    for seed in 0..5 {
        let (enc, store) = setup(&kinds, tiny(2), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (values, observed) = random_batch(&mut rng, &kinds, 3, 0.7);
        let (g, loss, _) = encoder_loss(&enc, &store, &values, &observed, false, seed);
        let report = check_gradients(&g, loss, 1e-4).unwrap();
        assert!(report.all_passed(), "seed {seed}: {:?}", report.failures().collect::<Vec<_>>());
        assert!(report.get("enc.t.num.v_missing").is_none());
    }
}

#[test]
fn grouped_tokens_have_gradients_too() {
    let kinds = num(5);
    let cfg = EncoderConfig { group: 2, ..tiny(1) };
    let (enc, store) = setup(&kinds, cfg, 4);
    assert_eq!(enc.n_tokens(), 3);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (values, observed) = random_batch(&mut rng, &kinds, 2, 0.6);
    let (g, loss, _) = encoder_loss(&enc, &store, &values, &observed, false, 1);
    assert!(check_gradients(&g, loss, 1e-4).unwrap().all_passed());
}

#[test]
fn zero_layers_flatten_tokens() {
    let kinds = mixed_kinds();
    let (enc, store) = setup(&kinds, tiny(0), 2);
    let values = [0.5, 2.0, -1.0, 3.0];
    let observed = [true, true, false, true];
    let t = enc.embed_features(&store, &values, &observed).unwrap();
    assert_eq!(enc.encode(&store, &values, &observed).unwrap(), t.tokens.data());
}

#[test]
fn masked_values_never_leak() {
    let kinds = mixed_kinds();
    let (enc, store) = setup(&kinds, tiny(2), 6);
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    for _ in 0..50 {
        let (values, observed) = random_batch(&mut rng, &kinds, 4, 0.5);
        let base = enc.encode_batch(&store, &values, &observed).unwrap();
        let mut perturbed = values.clone();
        for (k, v) in perturbed.data_mut().iter_mut().enumerate() {
            if !observed[k] {
                *v = rng.gen_range(-1e3..1e3);
            }
        }
        assert_eq!(enc.encode_batch(&store, &perturbed, &observed).unwrap(), base);
    }
}

#[test]
fn value_gradient_is_zero_where_masked_and_correct_elsewhere() {
    let kinds = num(4);
    let (enc, store) = setup(&kinds, tiny(2), 9);
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let (values, observed) = random_batch(&mut rng, &kinds, 3, 0.6);
    let (g, loss, v) = encoder_loss(&enc, &store, &values, &observed, true, 2);
    let grad = g.backward(loss).unwrap().get(v).unwrap().clone();
    let h = crate::diffcore::FD_STEP;
    for k in 0..values.numel() {
        if !observed[k] {
            assert_eq!(grad.data()[k], 0.0);
            continue;
        }
        let f = |delta: f64| {
            let mut x = values.clone();
            x.data_mut()[k] += delta;
            let (g2, l2, _) = encoder_loss(&enc, &store, &x, &observed, false, 2);
            g2.value(l2).item().unwrap()
        };
        let numeric = (f(h) - f(-h)) / (2.0 * h);
        assert!(crate::diffcore::relative_error(grad.data()[k], numeric) < 1e-4);
    }
}

#[test]
fn absent_modality_encodes_to_one_finite_constant() {
    let kinds = mixed_kinds();
    let (enc, store) = setup(&kinds, tiny(2), 12);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (values, _) = random_batch(&mut rng, &kinds, 3, 1.0);
    let out = enc.encode_batch(&store, &values, &[false; 12]).unwrap();
    assert!(out.is_finite());
    assert_eq!(out.row(0), out.row(1));
    assert_eq!(out.row(1), out.row(2));
}

#[test]
fn identical_patients_identical_outputs() {
    let kinds = mixed_kinds();
    let (enc, store) = setup(&kinds, tiny(2), 13);
    let row = [0.3, 1.0, 2.0, -0.7];
    let values = Tensor::new([2, 4], [row, row].concat()).unwrap();
    let obs = [true, true, false, true];
    let out = enc.encode_batch(&store, &values, &[obs, obs].concat()).unwrap();
    assert_eq!(out.row(0), out.row(1));
    assert_eq!(enc.encode(&store, &row, &obs).unwrap(), out.row(0));
}

#[test]
fn permuting_features_permutes_token_blocks() {
    let kinds = num(4);
    let cfg = tiny(2);
    let (enc, store) = setup(&kinds, cfg, 14);
    let perm = [2usize, 0, 3, 1];
    let mut permuted = store.clone();
    for name in ["enc.t.bias", "enc.t.num.v_present"] {
        let src = store.value(name).unwrap();
        let rows: Vec<Vec<f64>> = perm.iter().map(|&p| src.row(p).to_vec()).collect();
        *permuted.value_mut(name).unwrap() = Tensor::from_rows(&rows).unwrap();
    }
    let values = [0.4, -1.2, 0.9, 2.2];
    let observed = [true, false, true, true];
    let pv: Vec<f64> = perm.iter().map(|&p| values[p]).collect();
    let po: Vec<bool> = perm.iter().map(|&p| observed[p]).collect();
    let h = enc.encode(&store, &values, &observed).unwrap();
    let hp = enc.encode(&permuted, &pv, &po).unwrap();
    let d = cfg.d_model;
    for (t, &p) in perm.iter().enumerate() {
        for c in 0..d {
            assert!((hp[t * d + c] - h[p * d + c]).abs() < 1e-12);
        }
    }
}

#[test]
fn config_validation() {
    assert!(Encoder::new("e.", &num(2), EncoderConfig { d_model: 6, n_heads: 4, ..tiny(1) }).is_err());
    assert!(Encoder::new("e.", &[], tiny(1)).is_err());
    let enc = Encoder::new("e.", &mixed_kinds(), EncoderConfig::default()).unwrap();
    assert_eq!(enc.output_dim(), 4 * 32);
}
