use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{ModelConfig, TrainPlan};
use super::metrics::MetricsReport;
use super::network::{CogAlignModel, Gold, Head, Instance, Prediction};
use super::optim::{clip_global_norm, Adam};
use crate::adversarial::{mean_loss, ModalityLabel};
use crate::autodiff::Var;
use crate::data::{make_folds, SentenceRecord};
use crate::error::{Error, Result};
use crate::layers::WordVectors;
use crate::params::{ParamGrads, Session};
use crate::scalar::Scalar;

/// Loss values of one modality sub-step with the gradients of their sum.
#[derive(Clone, Debug)]
pub struct SubStep<T> {
    pub task: Option<f64>,
    pub adversarial: Option<f64>,
    pub grads: ParamGrads<T>,
}

/// Batch-mean losses of one `training_step`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StepLosses {
    pub task_text: f64,
    pub task_cog: f64,
    /// Mean of the discriminator loss over the sub-steps that include it;
    /// 0 when the discriminator is off.
    pub adversarial: f64,
}

fn grl_scale<T: Scalar>(plan: &TrainPlan) -> Option<T> {
    plan.use_grl.then(|| T::from_f64(plan.lambda))
}

fn uses_discriminator<T: Scalar>(model: &CogAlignModel<T>, plan: &TrainPlan) -> bool {
    model.cognitive.is_some() && !plan.ablations.no_discriminator
}

/// Records the text sub-step objective; returns `(task mean, adversarial mean)`.
pub fn text_objective<T: Scalar>(
    model: &CogAlignModel<T>,
    s: &mut Session<T>,
    batch: &[Instance<T>],
    plan: &TrainPlan,
    adversarial: bool,
) -> Result<(Var, Option<Var>)> {
    let adversarial = adversarial && uses_discriminator(model, plan);
    let (mut task, mut adv) = (Vec::new(), Vec::new());
    for inst in batch {
        let enc = model.forward_text(s, inst)?;
        task.push(model.text_predictor.nll(s, enc.h_prime, &inst.gold)?);
        if adversarial {
            adv.push(model.adversarial_term(
                s,
                enc.shared,
                ModalityLabel::Textual,
                grl_scale(plan),
            )?);
        }
    }
    let task = mean_loss(s, &task)?;
    let adv = if adversarial {
        Some(mean_loss(s, &adv)?)
    } else {
        None
    };
    Ok((task, adv))
}

/// Records the cognitive sub-step objective over the instances carrying
/// signals. `None` parts are switched off or have nothing to train on.
pub fn cognitive_objective<T: Scalar>(
    model: &CogAlignModel<T>,
    s: &mut Session<T>,
    batch: &[Instance<T>],
    plan: &TrainPlan,
) -> Result<(Option<Var>, Option<Var>)> {
    let Some(cog) = &model.cognitive else {
        return Ok((None, None));
    };
    let with_task = !plan.ablations.no_cognitive_loss;
    let with_adv = uses_discriminator(model, plan);
    let insts: Vec<&Instance<T>> = batch.iter().filter(|i| i.signals.is_some()).collect();
    if insts.is_empty() || !(with_task || with_adv) {
        return Ok((None, None));
    }
    let attention = !plan.ablations.no_text_aware_attention;
    let (mut task, mut adv) = (Vec::new(), Vec::new());
    for inst in insts {
        let enc = model.forward_cognitive(s, inst, attention)?;
        if with_task {
            task.push(cog.predictor.nll(s, enc.h_prime, &inst.gold)?);
        }
        if with_adv {
            adv.push(model.adversarial_term(
                s,
                enc.shared,
                ModalityLabel::Cognitive,
                grl_scale(plan),
            )?);
        }
    }
    let task = if with_task {
        Some(mean_loss(s, &task)?)
    } else {
        None
    };
    let adv = if with_adv {
        Some(mean_loss(s, &adv)?)
    } else {
        None
    };
    Ok((task, adv))
}

fn finish<T: Scalar>(
    s: &mut Session<T>,
    task: Option<Var>,
    adv: Option<Var>,
) -> Result<Option<SubStep<T>>> {
    let total = match (task, adv) {
        (Some(t), Some(a)) => s.add(t, a)?,
        (Some(t), None) => t,
        (None, Some(a)) => a,
        (None, None) => return Ok(None),
    };
    let value = s.value(total).item().as_f64();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss became {value}")));
    }
    let task = task.map(|v| s.value(v).item().as_f64());
    let adversarial = adv.map(|v| s.value(v).item().as_f64());
    let grads = s.backward(total)?;
    Ok(Some(SubStep {
        task,
        adversarial,
        grads,
    }))
}

pub fn text_substep<T: Scalar>(
    model: &CogAlignModel<T>,
    batch: &[Instance<T>],
    plan: &TrainPlan,
    adversarial: bool,
) -> Result<SubStep<T>> {
    let mut s = Session::train(&model.store);
    let (task, adv) = text_objective(model, &mut s, batch, plan, adversarial)?;
    Ok(finish(&mut s, Some(task), adv)?.expect("text sub-step always has a task loss"))
}

pub fn cognitive_substep<T: Scalar>(
    model: &CogAlignModel<T>,
    batch: &[Instance<T>],
    plan: &TrainPlan,
) -> Result<Option<SubStep<T>>> {
    let mut s = Session::train(&model.store);
    let (task, adv) = cognitive_objective(model, &mut s, batch, plan)?;
    finish(&mut s, task, adv)
}

/// Optimizer state carried across steps.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub plan: TrainPlan,
    pub adam: Adam<T>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(plan: TrainPlan) -> Result<Self> {
        plan.validate()?;
        let adam = Adam::new(plan.lr, plan.beta1, plan.beta2, plan.eps);
        Ok(Self { plan, adam })
    }

    fn apply(&mut self, model: &mut CogAlignModel<T>, mut step: SubStep<T>) -> Result<SubStep<T>> {
        clip_global_norm(&mut step.grads, self.plan.clip_norm);
        self.adam.step(&mut model.store, &step.grads)?;
        Ok(step)
    }

    /// Text sub-step then cognitive sub-step, one update after each.
    pub fn training_step(
        &mut self,
        model: &mut CogAlignModel<T>,
        batch_text: &[Instance<T>],
        batch_cog: &[Instance<T>],
    ) -> Result<StepLosses> {
        let text = text_substep(model, batch_text, &self.plan, true)?;
        let text = self.apply(model, text)?;
        let cog = match cognitive_substep(model, batch_cog, &self.plan)? {
            Some(c) => Some(self.apply(model, c)?),
            None => None,
        };
        let advs: Vec<f64> = [text.adversarial, cog.as_ref().and_then(|c| c.adversarial)]
            .into_iter()
            .flatten()
            .collect();
        Ok(StepLosses {
            task_text: text.task.unwrap_or(0.0),
            task_cog: cog.as_ref().and_then(|c| c.task).unwrap_or(0.0),
            adversarial: if advs.is_empty() {
                0.0
            } else {
                advs.iter().sum::<f64>() / advs.len() as f64
            },
        })
    }

    /// Text-path task loss only, as used for signal-free batches.
    pub fn plain_step(
        &mut self,
        model: &mut CogAlignModel<T>,
        batch: &[Instance<T>],
    ) -> Result<StepLosses> {
        let step = text_substep(model, batch, &self.plan, false)?;
        let step = self.apply(model, step)?;
        Ok(StepLosses {
            task_text: step.task.unwrap_or(0.0),
            ..StepLosses::default()
        })
    }
}

/// Which stream a batch came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Zuco,
    Plain,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub task_text: f64,
    pub task_cog: f64,
    pub adversarial: f64,
    pub dev_f1: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct FitSummary {
    pub history: Vec<EpochRecord>,
    /// Stream of every optimizer step, in order.
    pub schedule: Vec<Stream>,
    /// Epoch (1-based) whose parameters were kept, when a dev split was used.
    pub best_epoch: Option<usize>,
}

fn check_labels<T: Scalar>(model: &CogAlignModel<T>, insts: &[Instance<T>]) -> Result<()> {
    let seq = matches!(model.text_predictor, Head::Crf(_));
    for (i, inst) in insts.iter().enumerate() {
        let ok = match &inst.gold {
            Gold::Tags(t) => {
                seq && t.len() == inst.len() && t.iter().all(|&x| x < model.labels.len())
            }
            Gold::Class(c) => !seq && *c < model.labels.len(),
        };
        if !ok {
            return Err(Error::Data(format!(
                "instance {i}: labels do not match the model's label scheme"
            )));
        }
    }
    Ok(())
}

fn batches(n: usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(size).map(<[usize]>::to_vec).collect()
}

/// Trains on `zuco` (full three-loss steps) and `plain` (text task loss
/// only), alternating `plan.transfer_period` batches of each. With a dev
/// split, keeps the parameters of the best dev epoch and stops after
/// `plan.patience` epochs without improvement. `on_epoch` may stop early.
pub fn transfer_train<T: Scalar>(
    model: &mut CogAlignModel<T>,
    zuco: &[Instance<T>],
    plain: &[Instance<T>],
    dev: Option<&[SentenceRecord]>,
    plan: &TrainPlan,
    mut on_epoch: impl FnMut(&CogAlignModel<T>, &EpochRecord) -> ControlFlow<()>,
) -> Result<FitSummary> {
    if zuco.is_empty() && plain.is_empty() {
        return Err(Error::Contract("no training data in either stream".into()));
    }
    check_labels(model, zuco)?;
    check_labels(model, plain)?;
    let mut trainer = Trainer::new(plan.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut summary = FitSummary::default();
    let mut best: Option<(f64, usize, crate::params::ParamStore<T>)> = None;
    let p = plan.transfer_period;

    for epoch in 1..=plan.epochs {
        let zb = batches(zuco.len(), plan.batch_size, &mut rng);
        let pb = batches(plain.len(), plan.batch_size, &mut rng);
        let (mut zi, mut pi) = (0, 0);
        let mut sums = [0.0; 3];
        let mut counts = [0usize; 3];
        while zi < zb.len() || pi < pb.len() {
            for (stream, list, at) in [(Stream::Zuco, &zb, &mut zi), (Stream::Plain, &pb, &mut pi)]
            {
                for _ in 0..p {
                    let Some(idx) = list.get(*at) else { break };
                    *at += 1;
                    let src = if stream == Stream::Zuco { zuco } else { plain };
                    let batch: Vec<Instance<T>> = idx.iter().map(|&i| src[i].clone()).collect();
                    let l = match stream {
                        Stream::Zuco => trainer.training_step(model, &batch, &batch)?,
                        Stream::Plain => trainer.plain_step(model, &batch)?,
                    };
                    summary.schedule.push(stream);
                    sums[0] += l.task_text;
                    counts[0] += 1;
                    if stream == Stream::Zuco && model.cognitive.is_some() {
                        sums[1] += l.task_cog;
                        sums[2] += l.adversarial;
                        counts[1] += 1;
                        counts[2] += 1;
                    }
                }
            }
        }
        let avg = |k: usize| {
            if counts[k] == 0 {
                0.0
            } else {
                sums[k] / counts[k] as f64
            }
        };
        let dev_f1 = match dev {
            Some(d) => Some(evaluate(model, d)?.f1()),
            None => None,
        };
        let record = EpochRecord {
            epoch,
            task_text: avg(0),
            task_cog: avg(1),
            adversarial: avg(2),
            dev_f1,
        };
        summary.history.push(record.clone());
        let stop = on_epoch(model, &record).is_break();
        if let Some(f1) = dev_f1 {
            if best.as_ref().is_none_or(|(b, _, _)| f1 > *b) {
                best = Some((f1, epoch, model.store.clone()));
            } else if epoch - best.as_ref().map_or(0, |b| b.1) >= plan.patience {
                break;
            }
        }
        if stop {
            break;
        }
    }
    if let Some((_, epoch, store)) = best {
        model.store = store;
        summary.best_epoch = Some(epoch);
    }
    Ok(summary)
}

/// Standard training: every batch feeds both modalities.
pub fn train<T: Scalar>(
    model: &mut CogAlignModel<T>,
    train: &[Instance<T>],
    dev: Option<&[SentenceRecord]>,
    plan: &TrainPlan,
    on_epoch: impl FnMut(&CogAlignModel<T>, &EpochRecord) -> ControlFlow<()>,
) -> Result<FitSummary> {
    transfer_train(model, train, &[], dev, plan, on_epoch)
}

/// Task scores of cognitive-free predictions, plus discriminator accuracy on
/// both encodings of every record that carries signals.
pub fn evaluate<T: Scalar>(
    model: &CogAlignModel<T>,
    records: &[SentenceRecord],
) -> Result<MetricsReport> {
    let mut report = if model.is_sequence() {
        let (mut gold, mut pred) = (Vec::new(), Vec::new());
        for r in records {
            let p = model.infer(r)?;
            pred.push(model.prediction_labels(&p, r.len()));
            gold.push(
                r.tags()
                    .ok_or_else(|| Error::Data("sentence class given for a tagging task".into()))?
                    .to_vec(),
            );
        }
        MetricsReport::sequence(&gold, &pred)
    } else {
        let (mut gold, mut pred) = (Vec::new(), Vec::new());
        for r in records {
            let class = r.class().ok_or_else(|| {
                Error::Data("per-token tags given for a classification task".into())
            })?;
            gold.push(model.label_index(class)?);
            match model.infer(r)? {
                Prediction::Class { index, .. } => pred.push(index),
                Prediction::Tags(_) => unreachable!("classification head"),
            }
        }
        MetricsReport::classification(&gold, &pred)
    };
    report.discriminator_accuracy = discriminator_accuracy(model, records)?;
    Ok(report)
}

/// Share of correct modality predictions over the text and cognitive
/// encodings of every record with signals.
pub fn discriminator_accuracy<T: Scalar>(
    model: &CogAlignModel<T>,
    records: &[SentenceRecord],
) -> Result<Option<f64>> {
    let Some(cog) = &model.cognitive else {
        return Ok(None);
    };
    let (mut right, mut total) = (0usize, 0usize);
    for r in records.iter().filter(|r| r.has_signals()) {
        let inst = model.prepare(r)?;
        let mut s = Session::infer(&model.store);
        let t = model.forward_text(&mut s, &inst)?;
        let c = model.forward_cognitive(&mut s, &inst, true)?;
        right +=
            usize::from(cog.discriminator.predict(&mut s, t.shared)? == ModalityLabel::Textual);
        right +=
            usize::from(cog.discriminator.predict(&mut s, c.shared)? == ModalityLabel::Cognitive);
        total += 2;
    }
    Ok((total > 0).then(|| right as f64 / total as f64))
}

/// k-fold cross-validation with a fresh model per fold, trained for
/// `plan.epochs` on the other folds.
pub fn cross_validate(
    config: &ModelConfig,
    records: &[SentenceRecord],
    k: usize,
    vectors: Option<&WordVectors>,
    plan: &TrainPlan,
    mut on_epoch: impl FnMut(usize, &EpochRecord),
) -> Result<MetricsReport> {
    let folds = make_folds(records, k, plan.seed)?;
    let mut reports = Vec::with_capacity(k);
    for f in 0..k {
        let (tr, te) = folds.split(f);
        let train_set: Vec<SentenceRecord> = tr.iter().map(|&i| records[i].clone()).collect();
        let test_set: Vec<SentenceRecord> = te.iter().map(|&i| records[i].clone()).collect();
        let mut model = CogAlignModel::<f64>::build(config.clone(), records, vectors, plan.seed)?;
        let insts = model.prepare_all(&train_set)?;
        train(&mut model, &insts, None, plan, |_, e| {
            on_epoch(f, e);
            ControlFlow::Continue(())
        })?;
        reports.push(evaluate(&model, &test_set)?);
    }
    Ok(MetricsReport::mean_of(reports))
}
