use super::*;
use crate::autograd::{grad_check_params, Graph, Tensor};
use crate::data::{
    build_default_schema, Condition, ConditionAssignment, ConditionSchema, CorruptionSpec,
    DialogueSample, SplitRatios, Synth,
};
use crate::error::Error;

fn samples(n: usize, seed: u64) -> Vec<DialogueSample> {
    let s = Synth::default_synth();
    (0..n as u64)
        .map(|i| s.generate_sample(i, &CorruptionSpec::default(), seed).unwrap())
        .collect()
}

fn micro(variant: Variant, data: &[DialogueSample], seed: u64) -> CarModel {
    let vocab = Vocab::build(data);
    let cfg = ModelConfig::micro(vocab.len(), 35);
    CarModel::new(cfg, variant, build_default_schema(), vocab, seed).unwrap()
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn toy_sample(history: &[&str], question: &str) -> DialogueSample {
    DialogueSample {
        id: 0,
        intent: None,
        history: history.iter().map(|h| words(h)).collect(),
        question: words(question),
        observed_conditions: ConditionAssignment(vec![0, 1, 0, 2, 0, 0, 0]),
        true_conditions: Some(ConditionAssignment(vec![0, 1, 0, 2, 0, 0, 0])),
        gold_label: Some(3),
        gold_text: None,
        corruption: vec![],
    }
}

#[test]
fn conditions_vector_sizes() {
    let data = samples(10, 0);
    let vocab = Vocab::build(&data);
    let m = CarModel::new(
        ModelConfig::desk(vocab.len(), 35),
        Variant::Car,
        build_default_schema(),
        vocab,
        0,
    )
    .unwrap();
    let mut g = m.graph();
    let a = ConditionAssignment(vec![0, 1, 2, 1, 0, 2, 1]);
    let c0 = m.conditions.embed(&mut g, &a).unwrap();
    assert_eq!(g.shape(c0), &[1, 224]);
    let c = m.conditions.project(&mut g, c0).unwrap();
    assert_eq!(g.shape(c), &[1, 64]);
}

#[test]
fn zero_dense_layer_gives_zero_conditions_vector() {
    let data = samples(10, 0);
    let mut m = micro(Variant::Car, &data, 1);
    for id in [m.conditions.w_c, m.conditions.b_c] {
        m.params.get_mut(id).values_mut().fill(0.0);
    }
    let mut g = m.graph();
    let c = m.conditions.encode(&mut g, &data[0].observed_conditions).unwrap();
    assert!(g.value(c).iter().all(|&x| x == 0.0));
}

#[test]
fn conditions_embedding_is_local_to_the_changed_slot() {
    let data = samples(10, 0);
    let m = micro(Variant::Car, &data, 2);
    let s = m.config.condition_embed_dim;
    let a = ConditionAssignment(vec![0, 1, 2, 1, 0, 2, 1]);
    let mut b = a.clone();
    b.0[3] = 2;
    let mut g = m.graph();
    let ca = m.conditions.embed(&mut g, &a).unwrap();
    let cb = m.conditions.embed(&mut g, &b).unwrap();
    let (va, vb) = (g.value(ca), g.value(cb));
    for k in 0..va.len() {
        if (3 * s..4 * s).contains(&k) {
            continue;
        }
        assert_eq!(va[k], vb[k]);
    }
    assert!((3 * s..4 * s).any(|k| va[k] != vb[k]));
}

#[test]
fn out_of_range_condition_is_a_schema_error() {
    let data = samples(10, 0);
    let m = micro(Variant::Car, &data, 2);
    let mut g = m.graph();
    let bad = ConditionAssignment(vec![0, 9, 0, 0, 0, 0, 0]);
    assert!(matches!(m.conditions.encode(&mut g, &bad), Err(Error::Schema(_))));
    let mut smp = data[0].clone();
    smp.observed_conditions = bad;
    assert!(matches!(m.predict(&smp), Err(Error::Schema(_))));
}

#[test]
fn dialogue_layout_and_length() {
    let data = samples(10, 0);
    let m = micro(Variant::Car, &data, 0);
    let smp = toy_sample(&["zq1 zq2 zq3", "zq4 zq5"], "zq6 zq7 zq8 zq9");
    let input = build_input(&smp, &m.vocab, &m.config).unwrap();
    assert_eq!(input.len(), 2 + 5 + 1 + 4);
    assert_eq!(input.tokens[0], Vocab::HIST_ID);
    assert_eq!(input.tokens[4], Vocab::EOU_ID);
    assert_eq!(input.ques_index, 7);
    assert_eq!(input.tokens[7], Vocab::QUES_ID);
    assert_eq!(input.turns, [vec![0; 7], vec![1; 5]].concat());
    // unseen words map to the unknown token
    assert!(input.tokens[1..4].iter().all(|&t| t == Vocab::UNK_ID));

    let empty = toy_sample(&[], "hello");
    let input = build_input(&empty, &m.vocab, &m.config).unwrap();
    assert_eq!(input.tokens, vec![Vocab::HIST_ID, Vocab::QUES_ID, m.vocab.id("hello")]);
    assert_eq!((input.hist_index, input.ques_index), (0, 1));
}

#[test]
fn truncation_keeps_latest_turns_and_question_tail() {
    let data = samples(10, 0);
    let m = micro(Variant::Car, &data, 0);
    let long_q: Vec<String> = (0..60).map(|i| if i < 10 { "hello".into() } else { "order".into() }).collect();
    let mut smp = toy_sample(&["hi", "hello there", "good day"], "x");
    smp.question = long_q;
    let input = build_input(&smp, &m.vocab, &m.config).unwrap();
    // [HIST] hello there <eou> good day [QUES] + 50
    assert_eq!(input.len(), 1 + 2 + 1 + 2 + 1 + 50);
    assert_eq!(input.tokens[1], m.vocab.id("hello"));
    assert!(input.tokens[7..].iter().all(|&t| t == m.vocab.id("order")));
}

#[test]
fn empty_question_is_rejected() {
    let data = samples(10, 0);
    let m = micro(Variant::Car, &data, 0);
    let smp = toy_sample(&["hello"], "");
    assert!(matches!(m.predict(&smp), Err(Error::Input(_))));
}

#[test]
fn turn_embedding_changes_z() {
    let data = samples(10, 0);
    let mut m = micro(Variant::Car, &data, 0);
    let smp = data.iter().find(|s| !s.history.is_empty()).unwrap();
    let input = build_input(smp, &m.vocab, &m.config).unwrap();
    let z1 = {
        let mut g = m.graph();
        let z = m.dialogue.encode(&mut g, &input).unwrap();
        assert_eq!(g.shape(z), &[input.len(), m.config.dim]);
        g.value(z).to_vec()
    };
    m.params.get_mut(m.dialogue.turn).values_mut().fill(0.0);
    let mut g = m.graph();
    let z2 = m.dialogue.encode(&mut g, &input).unwrap();
    let diff: f64 = z1.iter().zip(g.value(z2)).map(|(a, b)| (a - b).abs()).sum();
    assert!(diff > 1e-6, "turn embedding has no effect: {diff}");
}

#[test]
fn reviser_emits_one_distribution_per_condition() {
    let data = samples(20, 3);
    let m = micro(Variant::Car, &data, 3);
    for smp in &data {
        let p = m.predict(smp).unwrap();
        let widths: Vec<usize> = p.slot_probs.iter().map(Vec::len).collect();
        assert_eq!(widths, vec![2, 7, 4, 3, 2, 3, 3]);
        for d in p.slot_probs.iter().chain([&p.answer_probs]) {
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(d.iter().all(|&x| x > 0.0 && x.is_finite()));
        }
        assert_eq!(p.answer_probs.len(), 35);
        assert!(m.schema.check(&p.conditions).is_ok());
        assert_eq!(p.conditions, discretize(&p.slot_probs));
    }
}

#[test]
fn reviser_reads_observed_values_once_before_any_output() {
    let data = samples(5, 3);
    let m = micro(Variant::Car, &data, 3);
    let mut g = m.graph();
    let pass = m.forward(&mut g, &data[0]).unwrap();
    let reviser = m.reviser.as_ref().unwrap();
    let table_nodes: Vec<_> = reviser.value_tables.iter().map(|&t| g.param(t)).collect();
    let reads: Vec<_> = g
        .lookups()
        .into_iter()
        .filter(|(t, _)| table_nodes.contains(t))
        .collect();
    assert_eq!(reads.len(), 7);
    for (k, (_, ids)) in reads.iter().enumerate() {
        assert_eq!(ids, &vec![data[0].observed_conditions.get(k)]);
    }
    let first_output = pass.slot_logits.iter().map(|v| v.id()).min().unwrap();
    let layers_applied = g.op_counts()["layer_norm"];
    // one lookup per slot, and every reviser input is on the tape before the
    // first slot output exists
    assert!(table_nodes.iter().all(|t| t.id() < first_output));
    assert_eq!(layers_applied, 2 * m.config.encoder_layers + 3 * m.config.reviser_layers);
}

#[test]
fn observed_value_of_one_slot_affects_every_other_slot() {
    let data = samples(5, 4);
    let m = micro(Variant::Car, &data, 4);
    let base = m.predict(&data[0]).unwrap();
    for j in 0..7 {
        let mut smp = data[0].clone();
        let w = m.schema.conditions[j].width();
        smp.observed_conditions.0[j] = (smp.observed_conditions.get(j) + 1) % w;
        let p = m.predict(&smp).unwrap();
        for i in (0..7).filter(|&i| i != j) {
            let delta: f64 = base.slot_probs[i]
                .iter()
                .zip(&p.slot_probs[i])
                .map(|(a, b)| (a - b).abs())
                .sum();
            assert!(delta > 1e-9, "slot {j} does not reach slot {i}");
        }
    }
}

#[test]
fn discretize_picks_argmax_with_low_tie_break() {
    assert_eq!(discretize(&[vec![0.9, 0.1]]).values(), &[0]);
    assert_eq!(discretize(&[vec![0.5, 0.5]]).values(), &[0]);
    assert_eq!(discretize(&[vec![0.2, 0.4, 0.4], vec![0.1, 0.9]]).values(), &[1, 1]);
    assert_eq!(argmax(&[1.0, 3.0, 2.0]), argmax(&[11.0, 13.0, 12.0]));
}

#[test]
fn zero_output_layer_gives_uniform_answer() {
    let data = samples(5, 0);
    let mut m = micro(Variant::Car, &data, 5);
    let &(w, b) = m.classifier.layers.last().unwrap();
    m.params.get_mut(w).values_mut().fill(0.0);
    m.params.get_mut(b).values_mut().fill(0.0);
    let p = m.predict(&data[0]).unwrap();
    assert!(p.answer_probs.iter().all(|&x| (x - 1.0 / 35.0).abs() < 1e-15));
}

#[test]
fn forward_is_bitwise_deterministic() {
    let data = samples(5, 0);
    let a = micro(Variant::Car, &data, 6);
    let b = micro(Variant::Car, &data, 6);
    for s in &data {
        let (pa, pb) = (a.predict(s).unwrap(), b.predict(s).unwrap());
        assert_eq!(pa, pb);
    }
}

#[test]
fn forcing_true_conditions_matches_ablation_on_true_conditions() {
    let data = samples(10, 7);
    let car = micro(Variant::Car, &data, 7);
    let ca = micro(Variant::Ca, &data, 7);
    assert!(ca.reviser.is_none());
    for smp in &data {
        let truth = smp.true_conditions.clone().unwrap();
        let mut g = car.graph();
        let forced = car.forward_with_conditions(&mut g, smp, &truth).unwrap();
        let mut clean = smp.clone();
        clean.observed_conditions = truth;
        let p = ca.predict(&clean).unwrap();
        assert_eq!(forced.answer_probs, p.answer_probs);
        assert_eq!(g.value(forced.c), p.conditions_vector.as_slice());
    }
}

fn tiny_schema() -> ConditionSchema {
    ConditionSchema::new(vec![
        Condition {
            name: "a".into(),
            values: vec!["x".into(), "y".into()],
            null: None,
            unknown: None,
            description: String::new(),
        },
        Condition {
            name: "b".into(),
            values: vec!["p".into(), "q".into(), "r".into()],
            null: None,
            unknown: None,
            description: String::new(),
        },
    ])
    .unwrap()
}

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    let data = samples(3, 8);
    let vocab = Vocab::build(&data);
    let mut cfg = ModelConfig::with_dims(8, 2, 1, 1, 4, 8, vocab.len(), 5);
    cfg.classifier_hidden = vec![8];
    let mut m = CarModel::new(cfg, Variant::Car, tiny_schema(), vocab, 8).unwrap();
    let mut smp = data[0].clone();
    smp.history.truncate(1);
    smp.question.truncate(8);
    smp.observed_conditions = ConditionAssignment(vec![1, 0]);
    smp.true_conditions = Some(ConditionAssignment(vec![0, 2]));
    smp.gold_label = Some(3);
    let arch = m.clone();
    let report = grad_check_params(
        &mut m.params,
        |g| arch.loss(g, &smp).map(|l| l.total),
        1e-5,
        None,
    )
    .unwrap();
    assert!(report.checked > 500);
    assert!(report.passes(1e-3), "{report:?}");
}

#[test]
fn joint_loss_weights_the_two_terms() {
    let data = samples(3, 9);
    let m = micro(Variant::Car, &data, 9);
    let mut g = m.graph();
    let l = m.loss(&mut g, &data[0]).unwrap();
    let (lc, lr) = (g.scalar(l.condition.unwrap()), g.scalar(l.answer));
    assert!((g.scalar(l.total) - (0.2 * lc + 0.8 * lr)).abs() < 1e-12);
    // 0.2 * 1.0 + 0.8 * 0.5
    let mut h = Graph::new();
    let a = h.constant(Tensor::scalar(1.0));
    let b = h.constant(Tensor::scalar(0.5));
    let (a, b) = (h.scale(a, 0.2), h.scale(b, 0.8));
    let t = h.add(a, b).unwrap();
    assert!((h.scalar(t) - 0.6).abs() < 1e-15);
}

#[test]
fn ablation_loss_is_answer_loss() {
    let data = samples(3, 9);
    let m = micro(Variant::Ca, &data, 9);
    let mut g = m.graph();
    let l = m.loss(&mut g, &data[0]).unwrap();
    assert!(l.condition.is_none());
    assert_eq!(g.scalar(l.total), g.scalar(l.answer));
}

fn grad_norm(m: &CarModel, smp: &DialogueSample, prefix: &str) -> f64 {
    let mut g = m.graph();
    let l = m.loss(&mut g, smp).unwrap();
    let grads = g.backward(l.total).unwrap();
    grads
        .params()
        .filter(|(id, _)| m.params.name(*id).starts_with(prefix))
        .flat_map(|(_, gr)| gr.iter())
        .map(|x| x * x)
        .sum::<f64>()
}

#[test]
fn supervision_is_separated_by_eta() {
    let data = samples(4, 10);
    let mut m = micro(Variant::Car, &data, 10);
    m.config.eta = 0.0;
    assert_eq!(grad_norm(&m, &data[0], "reviser.head"), 0.0);
    assert!(grad_norm(&m, &data[0], "classifier") > 0.0);
    m.config.eta = 1.0;
    assert_eq!(grad_norm(&m, &data[0], "classifier"), 0.0);
    assert!(grad_norm(&m, &data[0], "reviser.head") > 0.0);
    assert!(grad_norm(&m, &data[0], "dialogue") > 0.0);
    m.config.eta = 0.0;
    m.config.straight_through = true;
    assert!(grad_norm(&m, &data[0], "reviser.head") > 0.0);
}

#[test]
fn straight_through_keeps_forward_values() {
    let data = samples(5, 11);
    let hard = micro(Variant::Car, &data, 11);
    let mut st = hard.clone();
    st.config.straight_through = true;
    for s in &data {
        let (a, b) = (hard.predict(s).unwrap(), st.predict(s).unwrap());
        assert_eq!(a.conditions, b.conditions);
        for (x, y) in a.answer_probs.iter().zip(&b.answer_probs) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn missing_label_is_a_training_data_error() {
    let data = samples(2, 0);
    let m = micro(Variant::Car, &data, 0);
    let mut smp = data[0].clone();
    smp.gold_label = None;
    let mut g = m.graph();
    assert!(matches!(m.loss(&mut g, &smp), Err(Error::TrainingData(_))));
    let mut smp = data[0].clone();
    smp.true_conditions = None;
    let mut g = m.graph();
    assert!(matches!(m.loss(&mut g, &smp), Err(Error::TrainingData(_))));
}

#[test]
fn config_validation() {
    let mut c = ModelConfig::desk(100, 35);
    assert!(c.validate().is_ok());
    c.eta = 1.5;
    assert!(c.validate().is_err());
    let mut c = ModelConfig::desk(100, 35);
    c.heads = 3;
    assert!(c.validate().is_err());
    let p = ModelConfig::paper(100, 35);
    assert_eq!((p.encoder_layers, p.reviser_layers, p.dim), (6, 6, 300));
    assert!(p.validate().is_ok());
    assert_eq!("CA".parse::<Variant>().unwrap(), Variant::Ca);
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let ds = Synth::default_synth()
        .generate_dataset(60, SplitRatios::default(), &CorruptionSpec::default(), 1)
        .unwrap();
    for variant in [Variant::Car, Variant::Ca] {
        let m = micro(variant, &ds.train, 12);
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&m, dir.path()).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back.params.len(), m.params.len());
        for ((_, n1, t1), (_, n2, t2)) in m.params.iter().zip(back.params.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let bits = |t: &crate::autograd::Tensor| t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(t1), bits(t2));
        }
        assert_eq!(back.vocab, m.vocab);
        assert_eq!(back.config, m.config);
        for s in &ds.test {
            assert_eq!(m.predict(s).unwrap(), back.predict(s).unwrap());
        }
        let manifest = read_manifest(dir.path()).unwrap();
        let blob = std::fs::read(dir.path().join("params.bin")).unwrap();
        assert_eq!(blob.len(), m.params.numel() * 8);
        assert_eq!(manifest.params[1].offset, manifest.params[0].len);
    }
}

#[test]
fn checkpoint_with_wrong_format_is_rejected() {
    let data = samples(5, 0);
    let m = micro(Variant::Car, &data, 0);
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&m, dir.path()).unwrap();
    let p = dir.path().join("manifest.json");
    let text = std::fs::read_to_string(&p).unwrap().replace(CHECKPOINT_FORMAT, "other/v9");
    std::fs::write(&p, text).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(Error::Checkpoint(_))));
    let missing = tempfile::tempdir().unwrap();
    assert!(load_checkpoint(missing.path()).unwrap_err().is_io());
}

#[test]
fn vocabulary_starts_with_markers() {
    let data = samples(50, 0);
    let v = Vocab::build(&data);
    assert_eq!(&v.tokens()[..4], &[UNK, HIST, QUES, EOU]);
    assert_eq!(v.id("no-such-word"), Vocab::UNK_ID);
    let json = serde_json::to_string(&v).unwrap();
    assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), v);
    assert!(serde_json::from_str::<Vocab>("[\"a\"]").is_err());
}
