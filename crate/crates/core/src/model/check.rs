//! Finite-difference check of every parameter group of a full model.
//!
//! Two objectives are checked separately on a frozen micro-batch. The task
//! objective (text and cognitive task losses) is smooth, so tape gradients
//! must equal central differences. The adversarial objective runs through
//! gradient reversal, so the expected tape gradient is the central
//! difference scaled by `-λ` for everything upstream of the shared output and
//! left as is for the discriminator.

use std::collections::BTreeMap;

use super::config::TrainPlan;
use super::network::{CogAlignModel, Instance};
use super::train::{cognitive_objective, text_objective};
use crate::adversarial::GROUP as DISCRIMINATOR;
use crate::autodiff::check::{REL_TOL_F32, REL_TOL_F64};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::gradcheck::{compare, numeric_param_grads};
use crate::params::{ParamGrads, ParamId, ParamStore, Session};
use crate::scalar::Scalar;

/// Worst element error of one parameter group under one objective.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupCheck {
    /// `"task"` or `"adversarial"`.
    pub objective: &'static str,
    pub group: String,
    pub max_error: f64,
    pub tolerance: f64,
}

impl GroupCheck {
    pub fn passed(&self) -> bool {
        self.max_error < self.tolerance
    }

    pub fn label(&self) -> String {
        format!("{}/{}", self.objective, self.group)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Part {
    Task,
    Adversarial,
}

fn objective<T: Scalar>(
    model: &CogAlignModel<T>,
    s: &mut Session<T>,
    batch: &[Instance<T>],
    plan: &TrainPlan,
    part: Part,
) -> Result<Option<Var>> {
    let mut p = plan.clone();
    p.use_grl = true;
    let terms = match part {
        Part::Task => {
            p.ablations.no_discriminator = true;
            let (t, _) = text_objective(model, s, batch, &p, false)?;
            let (c, _) = cognitive_objective(model, s, batch, &p)?;
            vec![Some(t), c]
        }
        Part::Adversarial => {
            p.ablations.no_cognitive_loss = true;
            let (_, t) = text_objective(model, s, batch, &p, true)?;
            let (_, c) = cognitive_objective(model, s, batch, &p)?;
            vec![t, c]
        }
    };
    let mut total: Option<Var> = None;
    for t in terms.into_iter().flatten() {
        total = Some(match total {
            Some(acc) => s.add(acc, t)?,
            None => t,
        });
    }
    Ok(total)
}

fn tape<T: Scalar>(
    model: &CogAlignModel<T>,
    batch: &[Instance<T>],
    plan: &TrainPlan,
    part: Part,
    grl_fault: bool,
) -> Result<Option<ParamGrads<f64>>> {
    let mut s = Session::train(&model.store);
    s.inject_grl_sign_fault(grl_fault);
    let Some(loss) = objective(model, &mut s, batch, plan, part)? else {
        return Ok(None);
    };
    let g = s.backward(loss)?;
    Ok(Some(g.into_iter().map(|(k, v)| (k, v.cast())).collect()))
}

fn finite_differences(
    model: &CogAlignModel<f64>,
    batch: &[Instance<f64>],
    plan: &TrainPlan,
    part: Part,
    ids: &[ParamId],
) -> Result<ParamGrads<f64>> {
    let mut num = numeric_param_grads(&model.store, ids, |st: &ParamStore<f64>| {
        let mut s = Session::infer(st);
        let loss = objective(model, &mut s, batch, plan, part)?.expect("objective present");
        Ok(s.value(loss).item())
    })?;
    if part == Part::Adversarial {
        for (id, g) in num.iter_mut() {
            if model.store.group(*id) != DISCRIMINATOR {
                *g = g.map(|x| -plan.lambda * x);
            }
        }
    }
    Ok(num)
}

/// Checks every parameter group of `model` on `batch`.
///
/// With `float32`, tape gradients come from an `f32` copy of the model and
/// the tolerance relaxes accordingly; the reference stays in `f64`.
/// `grl_fault` flips the reversal sign on the tape, which the adversarial
/// objective must catch.
pub fn gradcheck_model(
    model: &CogAlignModel<f64>,
    batch: &[Instance<f64>],
    plan: &TrainPlan,
    float32: bool,
    floor: f64,
    grl_fault: bool,
) -> Result<Vec<GroupCheck>> {
    if batch.is_empty() {
        return Err(Error::Contract(
            "gradient check needs at least one instance".into(),
        ));
    }
    let tol = if float32 { REL_TOL_F32 } else { REL_TOL_F64 };
    let narrow = float32.then(|| model.cast::<f32>());
    let narrow_batch: Vec<Instance<f32>> = batch
        .iter()
        .map(|i| Instance {
            words: i.words.clone(),
            chars: i.chars.clone(),
            gold: i.gold.clone(),
            signals: i.signals.as_ref().map(|t| t.cast()),
        })
        .collect();
    let mut out = Vec::new();
    for (part, name) in [(Part::Task, "task"), (Part::Adversarial, "adversarial")] {
        let analytic = match &narrow {
            Some(m) => tape(m, &narrow_batch, plan, part, grl_fault)?,
            None => tape(model, batch, plan, part, grl_fault)?,
        };
        let Some(analytic) = analytic else { continue };
        let ids: Vec<ParamId> = analytic.keys().copied().collect();
        let numeric = finite_differences(model, batch, plan, part, &ids)?;
        let mut groups: BTreeMap<usize, GroupCheck> = BTreeMap::new();
        let order = model.store.groups();
        for c in compare(&model.store, &analytic, &numeric, tol, floor) {
            let rank = order
                .iter()
                .position(|g| *g == c.group)
                .unwrap_or(usize::MAX);
            let e = groups.entry(rank).or_insert_with(|| GroupCheck {
                objective: name,
                group: c.group.clone(),
                max_error: 0.0,
                tolerance: tol,
            });
            e.max_error = e.max_error.max(c.max_error);
        }
        out.extend(groups.into_values());
    }
    Ok(out)
}
