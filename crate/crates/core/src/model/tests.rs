use std::ops::ControlFlow;

use super::*;
use crate::autodiff::Axis;
use crate::data::{synth_generate, KeyValues, Labels, SentenceRecord, SignalSet, SynthSpec, Task};
use crate::params::{ParamGrads, Session};

fn tiny(task: Task, signals: SignalSet) -> ModelConfig {
    ModelConfig {
        word_dim: 6,
        char_dim: 3,
        char_filters: 4,
        hidden: 3,
        shared_dim: 5,
        max_len: 16,
        ..ModelConfig::new(task, signals)
    }
}

fn corpus(task: Task, n: usize, seed: u64) -> Vec<SentenceRecord> {
    let spec = SynthSpec {
        n_train: n,
        n_dev: 1,
        n_test: 1,
        min_len: 3,
        max_len: 6,
        vocab_size: 40,
        seed,
        ..SynthSpec::new(task)
    };
    synth_generate(&spec).unwrap().train
}

fn model(task: Task, signals: SignalSet, n: usize) -> (CogAlignModel<f64>, Vec<SentenceRecord>) {
    let recs = corpus(task, n, 3);
    (
        CogAlignModel::build(tiny(task, signals), &recs, None, 7).unwrap(),
        recs,
    )
}

fn groups_of(m: &CogAlignModel<f64>, g: &ParamGrads<f64>) -> Vec<String> {
    let mut v: Vec<String> = g.keys().map(|&id| m.store.group(id).to_string()).collect();
    v.dedup();
    v
}

// ---- shapes ----

#[test]
fn dimension_ledger_at_defaults() {
    let recs = corpus(Task::Ner, 2, 1);
    let m = CogAlignModel::<f64>::build(
        ModelConfig::new(Task::Ner, SignalSet::EyeEeg),
        &recs,
        None,
        1,
    )
    .unwrap();
    assert_eq!(m.config.text_dim(), 330);
    assert_eq!(m.config.h_prime_dim(), 200);
    let inst = m.prepare(&recs[0]).unwrap();
    let mut s = Session::infer(&m.store);
    let t = m.forward_text(&mut s, &inst).unwrap();
    assert_eq!(s.shape(t.h_prime), &[200, recs[0].len()]);
    assert_eq!(s.shape(t.shared), &[100, recs[0].len()]);
    let c = m.forward_cognitive(&mut s, &inst, true).unwrap();
    assert_eq!(s.shape(c.h_prime), &[200, recs[0].len()]);
}

#[test]
fn cognitive_width_per_signal_set() {
    let recs = corpus(Task::Ner, 2, 1);
    for (set, d) in [
        (SignalSet::Eye, 17),
        (SignalSet::EyeEeg, 25),
        (SignalSet::Eeg, 8),
    ] {
        let m = CogAlignModel::<f64>::build(tiny(Task::Ner, set), &recs, None, 1).unwrap();
        assert_eq!(m.config.cog_dim(), d);
        assert_eq!(m.prepare(&recs[0]).unwrap().signals.unwrap().rows(), d);
    }
    let m = CogAlignModel::<f64>::build(tiny(Task::Ner, SignalSet::None), &recs, None, 1).unwrap();
    assert!(m.cognitive.is_none());
    assert!(m.prepare(&recs[0]).unwrap().signals.is_none());
}

#[test]
fn zero_parameters_give_zero_states() {
    let (mut m, recs) = model(Task::Ner, SignalSet::EyeEeg, 3);
    m.store.zero_all();
    let inst = m.prepare(&recs[0]).unwrap();
    let mut s = Session::infer(&m.store);
    let t = m.forward_text(&mut s, &inst).unwrap();
    assert!(s.value(t.h_prime).data().iter().all(|&v| v == 0.0));
}

#[test]
fn forward_text_matches_manual_composition() {
    let (m, recs) = model(Task::Ner, SignalSet::Eye, 3);
    let inst = m.prepare(&recs[1]).unwrap();
    let mut s = Session::infer(&m.store);
    let got = m.forward_text(&mut s, &inst).unwrap();
    let got = s.value(got.h_prime).clone();

    let mut s = Session::infer(&m.store);
    let cnn = m.char_cnn.as_ref().unwrap();
    let words = m.embedding.embed(&mut s, &inst.words).unwrap();
    let chars = cnn.embed_words(&mut s, &inst.chars).unwrap();
    let x = s.concat(&[words, chars], Axis::Rows).unwrap();
    let p = m.text_private.forward(&mut s, x).unwrap();
    let a = m.text_adapter.forward(&mut s, x).unwrap();
    let h = m.shared.forward(&mut s, a).unwrap();
    let want = s.concat(&[p, h], Axis::Rows).unwrap();
    assert_eq!(s.value(want), &got);
}

#[test]
fn attention_ablation_is_direct_encoding() {
    let (m, recs) = model(Task::Ner, SignalSet::EyeEeg, 3);
    let inst = m.prepare(&recs[0]).unwrap();
    let cog = m.cognitive.as_ref().unwrap();
    let mut s = Session::infer(&m.store);
    let got = m.forward_cognitive(&mut s, &inst, false).unwrap();
    let c = s.constant(inst.signals.clone().unwrap());
    let p = cog.private.forward(&mut s, c).unwrap();
    let a = cog.adapter.forward(&mut s, c).unwrap();
    let h = m.shared.forward(&mut s, a).unwrap();
    let want = s.concat(&[p, h], Axis::Rows).unwrap();
    assert_eq!(s.value(want), s.value(got.h_prime));
    let with = m.forward_cognitive(&mut s, &inst, true).unwrap();
    assert_ne!(s.value(with.h_prime), s.value(got.h_prime));
}

#[test]
fn missing_signals_name_the_token() {
    let (m, recs) = model(Task::Ner, SignalSet::Eye, 3);
    let mut r = recs[0].clone();
    r.eye.as_mut().unwrap()[2].pop();
    let err = m.prepare(&r).unwrap_err().to_string();
    assert!(err.contains("token 2"), "{err}");
    let inst = m.prepare_text(&recs[0]).unwrap();
    let mut s = Session::infer(&m.store);
    let err = m
        .forward_cognitive(&mut s, &inst, true)
        .unwrap_err()
        .to_string();
    assert!(
        err.contains("missing cognitive signals at token 0"),
        "{err}"
    );
}

// ---- inference ----

#[test]
fn inference_reads_no_cognitive_inputs() {
    let (m, recs) = model(Task::Ner, SignalSet::EyeEeg, 4);
    let before = m.cognitive_reads();
    let with: Vec<Prediction> = recs.iter().map(|r| m.infer(r).unwrap()).collect();
    assert_eq!(m.cognitive_reads(), before);
    let stripped = crate::data::strip_signals(&recs);
    let without: Vec<Prediction> = stripped.iter().map(|r| m.infer(r).unwrap()).collect();
    assert_eq!(with, without);
    m.prepare(&recs[0]).unwrap();
    assert_eq!(m.cognitive_reads(), before + 1);
}

#[test]
fn inference_matches_decoder_on_text_path() {
    let (m, recs) = model(Task::Ner, SignalSet::Eye, 3);
    let inst = m.prepare_text(&recs[0]).unwrap();
    let mut s = Session::infer(&m.store);
    let enc = m.forward_text(&mut s, &inst).unwrap();
    let Head::Crf(crf) = &m.text_predictor else {
        panic!()
    };
    let (path, _) = crf.decode(&mut s, enc.h_prime).unwrap();
    assert_eq!(m.infer(&recs[0]).unwrap(), Prediction::Tags(path));

    let (m, recs) = model(Task::Sentiment, SignalSet::Eye, 3);
    match m.infer(&recs[0]).unwrap() {
        Prediction::Class { index, probs } => {
            assert_eq!(probs.len(), 3);
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(probs.iter().all(|&p| p <= probs[index]));
        }
        p => panic!("{p:?}"),
    }
}

// ---- training ----

fn quick_plan() -> TrainPlan {
    TrainPlan {
        lr: 1e-2,
        epochs: 3,
        batch_size: 2,
        ..TrainPlan::default()
    }
}

#[test]
fn seeded_training_is_deterministic() {
    let run = || {
        let (mut m, recs) = model(Task::Ner, SignalSet::EyeEeg, 6);
        let insts = m.prepare_all(&recs).unwrap();
        let fit = train(&mut m, &insts, None, &quick_plan(), |_, _| {
            ControlFlow::Continue(())
        })
        .unwrap();
        (format_checkpoint(&m, &KeyValues::new()), fit.history)
    };
    assert_eq!(run(), run());
}

#[test]
fn no_discriminator_reports_zero_adversarial_loss() {
    let (mut m, recs) = model(Task::Ner, SignalSet::Eye, 4);
    let insts = m.prepare_all(&recs).unwrap();
    let mut plan = quick_plan();
    plan.ablations.no_discriminator = true;
    let before = m.store.clone();
    let mut tr = Trainer::new(plan.clone()).unwrap();
    let l = tr.training_step(&mut m, &insts, &insts).unwrap();
    assert_eq!(l.adversarial, 0.0);
    assert!(l.task_text > 0.0 && l.task_cog > 0.0);
    let text = text_substep(&m, &insts, &plan, true).unwrap();
    let cog = cognitive_substep(&m, &insts, &plan).unwrap().unwrap();
    for g in [&text.grads, &cog.grads] {
        assert!(!groups_of(&m, g).iter().any(|x| x == "discriminator"));
    }
    for id in m.store.ids_in_group("discriminator") {
        assert_eq!(m.store.get(id), before.get(id));
    }
}

#[test]
fn ablations_remove_exactly_their_parameters() {
    let (m, recs) = model(Task::Ner, SignalSet::EyeEeg, 4);
    let batch = m.prepare_all(&recs).unwrap();
    let mut base = quick_plan();
    base.lambda = 0.0;
    let full_text = text_substep(&m, &batch, &base, true).unwrap();
    let full_cog = cognitive_substep(&m, &batch, &base).unwrap().unwrap();

    let cases: [(&str, &[&str]); 3] = [
        ("no-discriminator", &["discriminator"]),
        ("no-text-aware-attention", &["attention"]),
        ("no-cognitive-loss", &["cog_predictor"]),
    ];
    for (name, removed) in cases {
        let mut plan = base.clone();
        plan.ablations.enable(name).unwrap();
        let text = text_substep(&m, &batch, &plan, true).unwrap();
        let cog = cognitive_substep(&m, &batch, &plan).unwrap().unwrap();
        for (full, abl) in [(&full_text, &text), (&full_cog, &cog)] {
            for id in full.grads.keys() {
                let group = m.store.group(*id);
                if removed.contains(&group) {
                    assert!(!abl.grads.contains_key(id), "{name}: {group} still present");
                }
            }
            for id in abl.grads.keys() {
                assert!(
                    full.grads.contains_key(id),
                    "{name}: new parameter {}",
                    m.store.name(*id)
                );
            }
        }
        // Text-path gradients never depend on cognitive-only switches; with
        // λ = 0 the discriminator does not reach the encoder either.
        for (id, g) in &text.grads {
            assert_eq!(g, &full_text.grads[id], "{name}: {}", m.store.name(*id));
        }
        if name == "no-discriminator" {
            assert_eq!(cog.adversarial, None);
            for (id, g) in &cog.grads {
                assert_eq!(g, &full_cog.grads[id], "{name}: {}", m.store.name(*id));
            }
        }
        if name == "no-cognitive-loss" {
            assert_eq!(cog.task, None);
            assert_eq!(cog.adversarial, full_cog.adversarial);
        }
    }
}

#[test]
fn loss_decreases_over_fifty_steps() {
    let (mut m, recs) = model(Task::Ner, SignalSet::EyeEeg, 4);
    let batch = m.prepare_all(&recs).unwrap();
    let mut tr = Trainer::new(TrainPlan {
        lr: 1e-2,
        ..TrainPlan::default()
    })
    .unwrap();
    let mut task = Vec::new();
    for _ in 0..50 {
        let l = tr.training_step(&mut m, &batch, &batch).unwrap();
        task.push(l.task_text + l.task_cog);
    }
    for w in task.windows(2) {
        assert!(w[1] < w[0], "{task:?}");
    }
    assert!(task[49] < 0.5 * task[0], "{task:?}");
}

#[test]
fn label_scheme_mismatch_is_a_data_error() {
    let (mut m, _) = model(Task::Ner, SignalSet::Eye, 3);
    let bad = Instance {
        words: vec![1, 2],
        chars: vec![vec![2], vec![3]],
        gold: Gold::Class(0),
        signals: None,
    };
    let err = transfer_train(&mut m, &[], &[bad], None, &quick_plan(), |_, _| {
        ControlFlow::Continue(())
    })
    .unwrap_err();
    assert!(matches!(err, crate::error::Error::Data(_)), "{err}");
}

#[test]
fn transfer_alternates_streams() {
    let (mut m, recs) = model(Task::Ner, SignalSet::Eye, 8);
    let zuco = m.prepare_all(&recs[..4]).unwrap();
    let plain = m
        .prepare_all(&crate::data::strip_signals(&recs[4..]))
        .unwrap();
    let plan = TrainPlan {
        epochs: 1,
        batch_size: 1,
        ..quick_plan()
    };
    let fit = transfer_train(&mut m.clone(), &zuco, &plain, None, &plan, |_, _| {
        ControlFlow::Continue(())
    })
    .unwrap();
    use Stream::{Plain as P, Zuco as Z};
    assert_eq!(fit.schedule, [Z, P, Z, P, Z, P, Z, P]);
    let plan2 = TrainPlan {
        transfer_period: 2,
        ..plan.clone()
    };
    let fit = transfer_train(&mut m.clone(), &zuco, &plain[..3], None, &plan2, |_, _| {
        ControlFlow::Continue(())
    })
    .unwrap();
    assert_eq!(fit.schedule, [Z, Z, P, P, Z, Z, P]);

    // Plain-only training never touches cognitive-only parameters.
    let before = m.store.clone();
    let fit = transfer_train(&mut m, &[], &plain, None, &plan, |_, _| {
        ControlFlow::Continue(())
    })
    .unwrap();
    assert!(fit.schedule.iter().all(|&s| s == P));
    for g in [
        "attention",
        "cog_private",
        "adapter.cog",
        "cog_predictor",
        "discriminator",
    ] {
        for id in m.store.ids_in_group(g) {
            assert_eq!(m.store.get(id), before.get(id), "{g}");
        }
    }
    assert!(m
        .store
        .ids_in_group("shared")
        .any(|id| m.store.get(id) != before.get(id)));
}

#[test]
fn early_stopping_and_callback_break() {
    let (mut m, recs) = model(Task::Ner, SignalSet::Eye, 6);
    let insts = m.prepare_all(&recs).unwrap();
    let mut seen = 0;
    let fit = train(&mut m.clone(), &insts, None, &quick_plan(), |_, _| {
        seen += 1;
        if seen == 2 {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })
    .unwrap();
    assert_eq!(fit.history.len(), 2);

    let plan = TrainPlan {
        epochs: 40,
        patience: 2,
        lr: 1e-9,
        ..quick_plan()
    };
    let fit = train(&mut m, &insts, Some(&recs), &plan, |_, _| {
        ControlFlow::Continue(())
    })
    .unwrap();
    let best = fit.best_epoch.unwrap();
    assert!(fit.history.len() < 40);
    assert_eq!(fit.history.len(), best + plan.patience);
}

#[test]
fn nan_loss_aborts() {
    let (mut m, recs) = model(Task::Ner, SignalSet::Eye, 3);
    let id = m.store.ids_in_group("text_predictor").next().unwrap();
    let t = m.store.get(id).map(|_| f64::NAN);
    m.store.set(id, t).unwrap();
    let insts = m.prepare_all(&recs).unwrap();
    let err = Trainer::new(quick_plan())
        .unwrap()
        .training_step(&mut m, &insts, &insts)
        .unwrap_err();
    assert!(matches!(err, crate::error::Error::Numeric(_)), "{err}");
}

// ---- evaluation ----

fn tags(s: &str) -> Vec<String> {
    s.split(' ').map(String::from).collect()
}

#[test]
fn metrics_perfect_and_empty_predictions() {
    let gold = vec![tags("B-PER I-PER O"), tags("O B-LOC")];
    let r = MetricsReport::sequence(&gold, &gold);
    assert_eq!(r.span.unwrap(), Prf::new(1.0, 1.0));
    assert_eq!(r.f1(), 1.0);
    let none = vec![tags("O O O"), tags("O O")];
    let r = MetricsReport::sequence(&gold, &none);
    let p = r.span.unwrap();
    assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
    let r = MetricsReport::classification(&[0, 1, 2], &[0, 1, 2]);
    assert_eq!(r.macro_avg.unwrap().f1, 1.0);
}

#[test]
fn metrics_three_sentence_boundary_error() {
    let gold = vec![
        tags("B-PER I-PER O B-LOC"),
        tags("O B-ORG O"),
        tags("B-MISC O"),
    ];
    let pred = vec![tags("B-PER O O B-LOC"), tags("O B-ORG O"), tags("O O")];
    let r = MetricsReport::sequence(&gold, &pred);
    // spans: gold 4, predicted 3, exact matches 2 (LOC, ORG)
    let p = r.span.unwrap();
    assert!((p.precision - 2.0 / 3.0).abs() < 1e-15);
    assert!((p.recall - 0.5).abs() < 1e-15);
    assert!((p.f1 - 4.0 / 7.0).abs() < 1e-15);
    // entity tokens: gold 5, predicted 3, matching 3
    let t = r.token.unwrap();
    assert_eq!((t.precision, t.recall), (1.0, 0.6));
    assert!((t.f1 - 0.75).abs() < 1e-15);
    assert!((r.accuracy - 7.0 / 9.0).abs() < 1e-15);
}

#[test]
fn metrics_macro_classification() {
    // class 0: tp 1, pred 2, gold 1; class 1: tp 1, pred 1, gold 2
    let r = MetricsReport::classification(&[0, 1, 1], &[0, 0, 1]);
    let m = r.macro_avg.unwrap();
    assert!((m.precision - 0.75).abs() < 1e-15);
    assert!((m.recall - 0.75).abs() < 1e-15);
    assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
    assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn evaluate_reports_discriminator_accuracy() {
    let (m, recs) = model(Task::Sentiment, SignalSet::Eye, 4);
    let r = evaluate(&m, &recs).unwrap();
    let d = r.discriminator_accuracy.unwrap();
    assert!((0.0..=1.0).contains(&d));
    assert_eq!(r.sentences, 4);
    let none = evaluate(&m, &crate::data::strip_signals(&recs)).unwrap();
    assert_eq!(none.discriminator_accuracy, None);
    assert_eq!(none.macro_avg, r.macro_avg);
}

#[test]
fn cross_validation_reports_every_fold() {
    let recs = corpus(Task::Sentiment, 6, 2);
    let plan = TrainPlan {
        epochs: 1,
        ..quick_plan()
    };
    let mut calls = 0;
    let r = cross_validate(
        &tiny(Task::Sentiment, SignalSet::Eye),
        &recs,
        3,
        None,
        &plan,
        |_, _| calls += 1,
    )
    .unwrap();
    assert_eq!(r.folds.len(), 3);
    assert_eq!(calls, 3);
    assert_eq!(r.sentences, 6);
}

// ---- files ----

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let (m, recs) = model(Task::Ner, SignalSet::EyeEeg, 4);
    let mut extra = KeyValues::new();
    extra.set("note", "x");
    save_checkpoint(&path, &m, &extra).unwrap();
    let (back, ex) = load_checkpoint::<f64>(&path).unwrap();
    assert_eq!(ex, extra);
    assert_eq!(back.labels, m.labels);
    assert_eq!(back.config, m.config);
    for id in m.store.ids() {
        assert_eq!(back.store.get(id), m.store.get(id));
    }
    for r in &recs {
        assert_eq!(back.infer(r).unwrap(), m.infer(r).unwrap());
    }
    assert_eq!(
        format_checkpoint(&back, &ex),
        std::fs::read_to_string(&path).unwrap()
    );

    let text = std::fs::read_to_string(&path)
        .unwrap()
        .replace("model.hidden=3", "model.hidden=4");
    let err = parse_checkpoint::<f64>(&text, &path)
        .unwrap_err()
        .to_string();
    assert!(err.contains("digest"), "{err}");
    assert!(load_checkpoint::<f64>(&dir.path().join("missing")).is_err());
}

#[test]
fn hidden_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.tsv");
    let (m, mut recs) = model(Task::Ner, SignalSet::Eye, 4);
    recs[3] = crate::data::strip_signals(&recs[3..])[0].clone();
    let rows = hidden_states(&m, &recs).unwrap();
    let words: usize = recs.iter().map(SentenceRecord::len).sum();
    assert_eq!(rows.len(), 2 * words - recs[3].len());
    assert!(rows.iter().all(|r| r.values.len() == 6));
    write_hidden(&path, &rows).unwrap();
    let back = read_hidden(&path).unwrap();
    assert_eq!(back.len(), rows.len());
    for (a, b) in rows.iter().zip(&back) {
        assert_eq!(
            (a.modality, a.sentence, a.position),
            (b.modality, b.sentence, b.position)
        );
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() <= 1e-9);
        }
    }
    assert!(centroid_distance(&rows).unwrap() > 0.0);
}

#[test]
fn centroid_distance_oracle() {
    use crate::adversarial::ModalityLabel::{Cognitive, Textual};
    let row = |modality, values: &[f64]| HiddenRow {
        modality,
        sentence: 0,
        position: 0,
        values: values.to_vec(),
    };
    let rows = [
        row(Textual, &[0.0, 0.0]),
        row(Textual, &[2.0, 0.0]),
        row(Cognitive, &[1.0, 3.0]),
        row(Cognitive, &[1.0, 5.0]),
    ];
    assert!((centroid_distance(&rows).unwrap() - 4.0).abs() < 1e-15);
    assert!(centroid_distance(&rows[..2]).is_err());
}

// ---- gradient checks ----

#[test]
fn full_model_gradients_match_finite_differences() {
    for (task, set) in [
        (Task::Ner, SignalSet::EyeEeg),
        (Task::Sentiment, SignalSet::Eye),
    ] {
        let (m, recs) = model(task, set, 2);
        let batch = m.prepare_all(&recs).unwrap();
        let report =
            gradcheck_model(&m, &batch, &TrainPlan::default(), false, 1e-8, false).unwrap();
        let groups: Vec<String> = report.iter().map(GroupCheck::label).collect();
        for g in m.groups() {
            assert!(
                groups.contains(&format!("task/{g}"))
                    || groups.contains(&format!("adversarial/{g}")),
                "{g} unchecked"
            );
        }
        for c in &report {
            assert!(c.passed(), "{task}: {} error {:e}", c.label(), c.max_error);
        }
    }
}

#[test]
fn gradcheck_catches_a_flipped_reversal() {
    let (m, recs) = model(Task::Ner, SignalSet::Eye, 2);
    let batch = m.prepare_all(&recs).unwrap();
    let report = gradcheck_model(&m, &batch, &TrainPlan::default(), false, 1e-8, true).unwrap();
    let failed: Vec<String> = report
        .iter()
        .filter(|c| !c.passed())
        .map(GroupCheck::label)
        .collect();
    assert!(
        failed.contains(&"adversarial/shared".to_string()),
        "{failed:?}"
    );
    assert!(
        failed.iter().all(|f| f.starts_with("adversarial/")),
        "{failed:?}"
    );
    assert!(!failed.contains(&"adversarial/discriminator".to_string()));
}

#[test]
fn float32_gradients_within_relaxed_tolerance() {
    let (m, recs) = model(Task::Ner, SignalSet::Eye, 2);
    let batch = m.prepare_all(&recs).unwrap();
    let report = gradcheck_model(&m, &batch, &TrainPlan::default(), true, 1e-6, false).unwrap();
    for c in &report {
        assert_eq!(c.tolerance, 1e-4);
        assert!(c.passed(), "{} error {:e}", c.label(), c.max_error);
    }
}

#[test]
fn record_label_kind_is_checked() {
    let (m, recs) = model(Task::Ner, SignalSet::Eye, 2);
    let mut r = recs[0].clone();
    r.labels = Labels::Class("c0".into());
    assert!(m.prepare(&r).is_err());
}
