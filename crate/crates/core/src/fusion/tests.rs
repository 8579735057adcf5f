use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::cohort::{Cohort, FeatureKind, ModalityBlock};
use crate::encoder::EncoderConfig;
use crate::metrics::harrell_c;
use crate::odst::OdstConfig;

fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        d_model: 2,
        n_heads: 1,
        n_layers: 1,
        ff_dim: 4,
        group: 1,
    }
}

fn block(name: &str, width: usize, n: usize, seed: u64) -> ModalityBlock {
    let values = (0..n * width).map(|k| ((k as u64 * 37 + seed * 11) % 17) as f64 / 4.0 - 2.0).collect();
    ModalityBlock::new(name, vec![FeatureKind::Numerical; width], values, vec![true; n * width], vec![true; n]).unwrap()
}

fn cohort(n: usize) -> Cohort {
    Cohort::new(
        (0..n).map(|i| format!("P{i}")).collect(),
        (0..n).map(|i| 1.0 + i as f64).collect(),
        (0..n).map(|i| i % 2 == 0).collect(),
        vec![block("b", 3, n, 2), block("a", 2, n, 1)],
    )
    .unwrap()
}

fn spec(mode: FusionMode, modalities: &[&str]) -> ModelSpec {
    let mut s = ModelSpec::new(mode, modalities.iter().copied());
    s.encoder = tiny_encoder();
    s.unimodal_head = OdstConfig { n_trees: 2, depth: 2, out_dim: 1 };
    s.fused_head = OdstConfig { n_trees: 3, depth: 2, out_dim: 1 };
    s
}

fn initialized(mode: FusionMode, modalities: &[&str], c: &Cohort) -> (FusionModel, ParamStore) {
    let model = FusionModel::new(spec(mode, modalities), c).unwrap();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    if mode == FusionMode::LinearCph {
        model.init_linear(&mut store, &mut rng).unwrap();
        return (model, store);
    }
    for m in model.modalities().to_vec() {
        model.init_unimodal(&m, &mut store, &mut rng).unwrap();
    }
    if matches!(mode, FusionMode::Early | FusionMode::Intermediate) {
        model.init_fused(&mut store, &mut rng).unwrap();
        // Nonzero selection and thresholds so the head is not trivially flat.
        for (name, p) in store.iter_mut() {
            if name.starts_with(FUSED_PREFIX) && (name.ends_with("select") || name.ends_with("thresh")) {
                for (k, v) in p.value.data_mut().iter_mut().enumerate() {
                    *v = ((k * 7) % 5) as f64 / 5.0 - 0.4;
                }
            }
        }
    }
    (model, store)
}

#[test]
fn concatenation_is_lexical_and_sized() {
    let c = cohort(3);
    let (model, store) = initialized(FusionMode::Early, &["b", "a"], &c);
    assert_eq!(model.modalities(), &["a".to_string(), "b".to_string()]);
    assert_eq!(model.encoder("a").unwrap().output_dim(), 4);
    assert_eq!(model.encoder("b").unwrap().output_dim(), 6);
    assert_eq!(model.fused_dim(), 10);
    let rows = [0, 1, 2];
    let h = model.encode_rows(&store, &c, &rows).unwrap();
    assert_eq!(h.shape(), &[3, 10]);
    for &i in &rows {
        let a = block_batch(c.block("a").unwrap(), &[i]).unwrap();
        let b = block_batch(c.block("b").unwrap(), &[i]).unwrap();
        let ha = model.encoder("a").unwrap().encode(&store, a.0.data(), &a.1).unwrap();
        let hb = model.encoder("b").unwrap().encode(&store, b.0.data(), &b.1).unwrap();
        let expect: Vec<f64> = ha.into_iter().chain(hb).collect();
        assert_eq!(h.row(i), expect.as_slice());
    }
}

#[test]
fn fully_masked_modality_ignores_stored_values() {
    let c = cohort(2);
    let (model, store) = initialized(FusionMode::Intermediate, &["a", "b"], &c);
    let run = |fill: f64| {
        let mut g = Graph::new();
        let mut p = Binder::new(&store);
        let (a, a_obs) = block_batch(c.block("a").unwrap(), &[0]).unwrap();
        let b = Tensor::full([1, 3], fill);
        let mut inputs = ModalityInputs::new();
        inputs.insert("a".into(), (g.constant(a), a_obs));
        inputs.insert("b".into(), (g.constant(b), vec![false; 3]));
        let y = model.forward_fused(&mut g, &mut p, &inputs).unwrap();
        g.value(y).item().unwrap()
    };
    let y0 = run(0.0);
    assert!(y0.is_finite());
    assert_eq!(y0, run(123.5));
    assert_eq!(y0, run(-7.0));
}

#[test]
fn omitted_modality_is_a_contract_error() {
    let c = cohort(2);
    let (model, store) = initialized(FusionMode::Early, &["a", "b"], &c);
    let mut g = Graph::new();
    let mut p = Binder::new(&store);
    let (a, a_obs) = block_batch(c.block("a").unwrap(), &[0]).unwrap();
    let mut inputs = ModalityInputs::new();
    inputs.insert("a".into(), (g.constant(a), a_obs));
    assert!(matches!(model.forward_fused(&mut g, &mut p, &inputs), Err(Error::Contract(_))));
}

#[test]
fn single_modality_intermediate_is_the_unimodal_pipeline() {
    let c = cohort(4);
    let mut sp = spec(FusionMode::Intermediate, &["a"]);
    sp.fused_head = sp.unimodal_head;
    let model = FusionModel::new(sp, &c).unwrap();
    let mut store = ParamStore::new();
    model.init_unimodal("a", &mut store, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let uni: Vec<(String, crate::params::Param)> = store
        .iter()
        .filter_map(|(n, p)| n.strip_prefix("uni.a.").map(|s| (format!("{FUSED_PREFIX}{s}"), p.clone())))
        .collect();
    for (n, p) in uni {
        store.insert(n, p.value, p.trainable);
    }
    let rows = [0, 1, 2, 3];
    let fused = model.score(&store, &c, &rows).unwrap();
    let uni = model.unimodal_scores(&store, "a", &c, &rows).unwrap();
    assert_eq!(fused, uni);
}

#[test]
fn forward_is_deterministic() {
    let c = cohort(5);
    let (model, store) = initialized(FusionMode::Early, &["a", "b"], &c);
    let rows: Vec<usize> = (0..5).collect();
    assert_eq!(model.score(&store, &c, &rows).unwrap(), model.score(&store, &c, &rows).unwrap());
}

#[test]
fn late_fusion_examples() {
    let s = |v: &[f64]| v.iter().map(|&x| Some(x)).collect::<Vec<_>>();
    assert_eq!(late_fuse(&[s(&[0.1, 0.9]), s(&[0.2, 0.8])]).unwrap(), vec![2.0, 4.0]);
    assert_eq!(late_fuse(&[s(&[0.1, 0.9]), s(&[0.8, 0.2])]).unwrap(), vec![3.0, 3.0]);
}

#[test]
fn late_fusion_ties_get_average_ranks() {
    assert_eq!(average_ranks(&[0.5, 0.1, 0.5, 0.9]), vec![2.5, 1.0, 2.5, 4.0]);
}

#[test]
fn late_fusion_length_mismatch() {
    let r = late_fuse(&[vec![Some(1.0), Some(2.0)], vec![Some(1.0)]]);
    assert!(matches!(r, Err(Error::Dimension { .. })));
    assert!(late_fuse(&[vec![Some(1.0)]]).is_err());
}

#[test]
fn absent_patient_gets_median_rank() {
    let a = vec![Some(0.1), Some(0.2), Some(0.3)];
    let b = vec![Some(5.0), None, Some(1.0)];
    let fused = late_fuse(&[a, b]).unwrap();
    // b ranks (2, -, 1) among two patients, stretched to (3, 2, 1).
    assert_eq!(fused, vec![1.0 + 3.0, 2.0 + 2.0, 3.0 + 1.0]);
}

#[test]
fn late_mode_scores_through_unimodal_models() {
    let c = cohort(6);
    let (model, store) = initialized(FusionMode::Late, &["a", "b"], &c);
    let rows: Vec<usize> = (0..6).collect();
    let fused = model.score(&store, &c, &rows).unwrap();
    let per: Vec<Vec<Option<f64>>> = ["a", "b"]
        .iter()
        .map(|m| model.unimodal_scores(&store, m, &c, &rows).unwrap().into_iter().map(Some).collect())
        .collect();
    assert_eq!(fused, late_fuse(&per).unwrap());
    assert!(model.fused_head().is_err());
}

proptest! {
    #[test]
    fn late_fusion_is_rank_invariant(
        a in prop::collection::vec(-5.0f64..5.0, 2..30),
        seed in 0u64..1000,
    ) {
        let n = a.len();
        let b: Vec<f64> = (0..n).map(|i| ((i as u64 * 31 + seed) % 13) as f64).collect();
        let wrap = |v: &[f64]| v.iter().map(|&x| Some(x)).collect::<Vec<_>>();
        let base = late_fuse(&[wrap(&a), wrap(&b)]).unwrap();
        let ta: Vec<f64> = a.iter().map(|x| (x * 0.7).exp() + 3.0).collect();
        let tb: Vec<f64> = b.iter().map(|x| x.powi(3) - 2.0).collect();
        prop_assert_eq!(base, late_fuse(&[wrap(&ta), wrap(&tb)]).unwrap());
    }
}

#[test]
fn linear_cph_zero_weights_tie_everyone() {
    let values = [[0.3, -1.0], [2.0, 0.5], [-0.7, 0.1]];
    let scores: Vec<f64> = values
        .iter()
        .map(|x| linear_cph_forward(x, &[true, true], &[0.0, 0.0], 0.2).unwrap())
        .collect();
    assert!(scores.iter().all(|&s| s == 0.2));
    let c = harrell_c(&scores, &[1.0, 2.0, 3.0], &[true, true, true]).unwrap();
    assert_eq!(c, 0.5);
}

#[test]
fn linear_cph_single_feature_keeps_order() {
    let xs = [0.4, -2.0, 1.5, 0.0];
    let scores: Vec<f64> = xs
        .iter()
        .map(|&x| linear_cph_forward(&[x, 9.0], &[true, false], &[2.0, 5.0], -1.0).unwrap())
        .collect();
    assert_eq!(scores, xs.iter().map(|x| 2.0 * x - 1.0).collect::<Vec<_>>());
    assert!(linear_cph_forward(&[1.0], &[true], &[1.0, 2.0], 0.0).is_err());
}

#[test]
fn linear_graph_matches_eager_forward() {
    let c = cohort(4);
    let (model, store) = initialized(FusionMode::LinearCph, &["b"], &c);
    let w = store.value("cph.b.w").unwrap().data().to_vec();
    let b = store.value("cph.b.b").unwrap().item().unwrap();
    let rows = [0, 1, 2, 3];
    let got = model.score(&store, &c, &rows).unwrap();
    let blk = c.block("b").unwrap();
    for (&i, y) in rows.iter().zip(got) {
        let e = linear_cph_forward(blk.row(i), blk.observed_row(i), &w, b).unwrap();
        assert!((e - y).abs() < 1e-12);
    }
}

#[test]
fn manifest_round_trip() {
    let mut s = spec(FusionMode::Intermediate, &["wsi", "ct", "tabular"]);
    s.groups.insert("wsi".into(), 4);
    let back = ModelSpec::from_kv(&s.to_kv()).unwrap();
    assert_eq!(back, s);
    assert_eq!(back.encoder_config("wsi").group, 4);
    assert_eq!(back.encoder_config("ct").group, 1);
    for m in FusionMode::ALL {
        assert_eq!(m.to_string().parse::<FusionMode>().unwrap(), m);
    }
    assert!("stacked".parse::<FusionMode>().is_err());
}

#[test]
fn manifest_arity_checks() {
    assert!(spec(FusionMode::Late, &["a"]).validate().is_err());
    assert!(spec(FusionMode::Unimodal, &["a", "b"]).validate().is_err());
    assert!(spec(FusionMode::LinearCph, &["a", "b"]).validate().is_err());
    assert!(spec(FusionMode::Early, &[]).validate().is_err());
    assert!(spec(FusionMode::Early, &["a", "b"]).validate().is_ok());
}

#[test]
fn transforms_survive_the_param_store() {
    let c = cohort(6);
    let s = spec(FusionMode::Early, &["a", "b"]);
    let prepared = PreparedCohort::fit(&c, &s, &[0, 1, 2, 3]).unwrap();
    let mut store = ParamStore::new();
    store_transforms(&prepared.transforms, &mut store);
    assert_eq!(store.num_trainable(), 0);
    let loaded = load_transforms(&store, &s.modalities).unwrap();
    let again = PreparedCohort::apply(&c, loaded).unwrap();
    assert_eq!(again.cohort.blocks(), prepared.cohort.blocks());
    let missing: BTreeMap<String, _> = BTreeMap::new();
    assert!(PreparedCohort::apply(&c, missing).is_ok());
    assert!(load_transforms(&store, &["nope".to_string()]).is_err());
}
