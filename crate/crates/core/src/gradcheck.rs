//! Finite-difference checks of parameter gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::check::{
    central_difference, element_error, max_error, ABS_FLOOR, FD_STEP, REL_TOL_F64,
};
use crate::autodiff::{Axis, Graph, Tensor, Var};
use crate::error::Result;
use crate::params::{ParamGrads, ParamId, ParamStore, Session};

/// Largest element error of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub id: ParamId,
    pub name: String,
    pub group: String,
    pub max_error: f64,
}

/// Central differences of a scalar objective with respect to `ids`.
///
/// `objective` evaluates the loss from scratch for a given store; it is called
/// twice per scalar parameter on a perturbed copy of `store`.
pub fn numeric_param_grads<F>(
    store: &ParamStore<f64>,
    ids: &[ParamId],
    mut objective: F,
) -> Result<ParamGrads<f64>>
where
    F: FnMut(&ParamStore<f64>) -> Result<f64>,
{
    let mut work = store.clone();
    let mut out = ParamGrads::new();
    for &id in ids {
        let n = store.get(id).len();
        let mut g = Tensor::zeros(store.get(id).shape());
        for k in 0..n {
            let orig = store.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + FD_STEP;
            let plus = objective(&work)?;
            work.get_mut(id).data_mut()[k] = orig - FD_STEP;
            let minus = objective(&work)?;
            work.get_mut(id).data_mut()[k] = orig;
            g.data_mut()[k] = (plus - minus) / (2.0 * FD_STEP);
        }
        out.insert(id, g);
    }
    Ok(out)
}

/// Compares tape gradients against central differences of the same loss.
pub fn check_loss<F>(
    store: &ParamStore<f64>,
    rel_tol: f64,
    floor: f64,
    build: F,
) -> Result<Vec<ParamCheck>>
where
    F: Fn(&mut Session<f64>) -> Result<Var>,
{
    let mut s = Session::train(store);
    let loss = build(&mut s)?;
    let analytic = s.backward(loss)?;
    let ids: Vec<ParamId> = analytic.keys().copied().collect();
    let numeric = numeric_param_grads(store, &ids, |st| {
        let mut s = Session::infer(st);
        let l = build(&mut s)?;
        Ok(s.value(l).item())
    })?;
    Ok(compare(store, &analytic, &numeric, rel_tol, floor))
}

pub fn compare(
    store: &ParamStore<f64>,
    analytic: &ParamGrads<f64>,
    numeric: &ParamGrads<f64>,
    rel_tol: f64,
    floor: f64,
) -> Vec<ParamCheck> {
    numeric
        .iter()
        .map(|(&id, num)| {
            let max_error = match analytic.get(&id) {
                Some(a) => a
                    .data()
                    .iter()
                    .zip(num.data())
                    .map(|(&x, &y)| element_error(x, y, rel_tol, floor))
                    .fold(0.0, f64::max),
                None => num
                    .data()
                    .iter()
                    .map(|&y| element_error(0.0, y, rel_tol, floor))
                    .fold(0.0, f64::max),
            };
            ParamCheck {
                id,
                name: store.name(id).to_string(),
                group: store.group(id).to_string(),
                max_error,
            }
        })
        .collect()
}

/// Worst element error of one operation over a run of seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct OpCheck {
    pub op: &'static str,
    pub seeds: usize,
    pub max_error: f64,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.max_error < REL_TOL_F64
    }
}

type OpBuild = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect::<Vec<f64>>();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// `sum(op(inputs) ⊙ w)` for a fixed random `w`.
fn weighted(
    inputs: &[Tensor<f64>],
    seed: u64,
    build: &OpBuild,
    trainable: bool,
) -> Result<(Graph<f64>, Vec<Var>, Var)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        })
        .collect();
    let out = build(&mut g, &vars)?;
    let shape = g.shape(out).to_vec();
    let w = if shape.is_empty() {
        Tensor::scalar(1.0)
    } else {
        randn(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed), &shape, 1.0)
    };
    let w = g.constant(w);
    let prod = g.mul(out, w)?;
    let loss = g.sum(prod);
    Ok((g, vars, loss))
}

/// Tape versus central differences for one graph operation; the tape
/// gradient is expected to equal `scale` times the numeric one.
pub fn op_error(shapes: &[&[usize]], seed: u64, scale: f64, build: &OpBuild) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| randn(&mut rng, s, 1.0)).collect();
    let (mut g, vars, loss) = weighted(&inputs, seed, build, true)?;
    let grads = g.backward(loss)?;
    let mut failure = None;
    let numeric = central_difference(&inputs, FD_STEP, |xs| {
        match weighted(xs, seed, build, false) {
            Ok((g, _, l)) => g.value(l).item(),
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let mut worst: f64 = 0.0;
    for (&v, n) in vars.iter().zip(&numeric) {
        let a = grads
            .get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(n.shape()));
        worst = worst.max(max_error(&a, &n.map(|x| scale * x), REL_TOL_F64, ABS_FLOOR));
    }
    Ok(worst)
}

fn randomize(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for id in store.ids().collect::<Vec<_>>() {
        let t = randn(rng, store.get(id).shape(), 0.5);
        store.set(id, t).expect("same shape");
    }
}

/// Worst parameter-gradient error of `build` after re-drawing every
/// parameter of `store`.
fn layer_error(
    mut store: ParamStore<f64>,
    rng: &mut ChaCha8Rng,
    build: impl Fn(&mut Session<f64>) -> Result<Var>,
) -> Result<f64> {
    randomize(&mut store, rng);
    let checks = check_loss(&store, REL_TOL_F64, ABS_FLOOR, build)?;
    Ok(checks.iter().map(|c| c.max_error).fold(0.0, f64::max))
}

fn weighted_sum(s: &mut Session<f64>, y: Var, w: &Tensor<f64>) -> Result<Var> {
    let w = s.constant(w.clone());
    let p = s.mul(y, w)?;
    Ok(s.sum(p))
}

type LayerCheck = dyn Fn(&mut ChaCha8Rng) -> Result<f64>;

/// Finite-difference checks of every differentiable graph operation, the
/// CRF likelihood node and every layer, each over `seeds` seeds.
pub fn op_suite(seeds: u64) -> Result<Vec<OpCheck>> {
    use crate::adversarial::{Discriminator, ModalityLabel};
    use crate::layers::{BiLstm, CharCnn, Linear, SelfAttentionPool, TextAwareAttention};
    use crate::predictors::{crf, Classifier, Crf};

    let graph_ops: Vec<(&'static str, Vec<&[usize]>, f64, Box<OpBuild>)> = vec![
        (
            "matmul",
            vec![&[2, 4], &[4, 3]],
            1.0,
            Box::new(|g, v| g.matmul(v[0], v[1])),
        ),
        (
            "add",
            vec![&[2, 3], &[2, 3]],
            1.0,
            Box::new(|g, v| g.add(v[0], v[1])),
        ),
        (
            "sub",
            vec![&[2, 3], &[2, 3]],
            1.0,
            Box::new(|g, v| g.sub(v[0], v[1])),
        ),
        (
            "mul",
            vec![&[3, 2], &[3, 2]],
            1.0,
            Box::new(|g, v| g.mul(v[0], v[1])),
        ),
        (
            "add_col_bias",
            vec![&[3, 4], &[3]],
            1.0,
            Box::new(|g, v| g.add_col_bias(v[0], v[1])),
        ),
        (
            "scale_rows",
            vec![&[3, 4], &[3]],
            1.0,
            Box::new(|g, v| g.scale_rows(v[0], v[1])),
        ),
        (
            "scale",
            vec![&[2, 2]],
            1.0,
            Box::new(|g, v| Ok(g.scale(v[0], -1.7))),
        ),
        (
            "tanh",
            vec![&[4, 5]],
            1.0,
            Box::new(|g, v| Ok(g.tanh(v[0]))),
        ),
        (
            "sigmoid",
            vec![&[3, 4]],
            1.0,
            Box::new(|g, v| Ok(g.sigmoid(v[0]))),
        ),
        ("softmax", vec![&[5]], 1.0, Box::new(|g, v| g.softmax(v[0]))),
        (
            "log_softmax",
            vec![&[4]],
            1.0,
            Box::new(|g, v| g.log_softmax(v[0])),
        ),
        (
            "max_over_rows",
            vec![&[4, 3]],
            1.0,
            Box::new(|g, v| g.max_over_rows(v[0])),
        ),
        (
            "transpose",
            vec![&[2, 3]],
            1.0,
            Box::new(|g, v| g.transpose(v[0])),
        ),
        (
            "reshape",
            vec![&[2, 3]],
            1.0,
            Box::new(|g, v| g.reshape(v[0], &[6])),
        ),
        (
            "slice",
            vec![&[4, 5]],
            1.0,
            Box::new(|g, v| g.slice(v[0], 1..3, 2..5)),
        ),
        (
            "select_cols",
            vec![&[3, 4]],
            1.0,
            Box::new(|g, v| g.select_cols(v[0], &[2, 0, 2])),
        ),
        (
            "concat",
            vec![&[2, 3], &[1, 3]],
            1.0,
            Box::new(|g, v| g.concat(&[v[0], v[1]], Axis::Rows)),
        ),
        ("sum", vec![&[3, 2]], 1.0, Box::new(|g, v| Ok(g.sum(v[0])))),
        (
            "mean",
            vec![&[3, 2]],
            1.0,
            Box::new(|g, v| Ok(g.mean(v[0]))),
        ),
        ("pick", vec![&[5]], 1.0, Box::new(|g, v| g.pick(v[0], 3))),
        (
            "grad_reverse",
            vec![&[3, 2]],
            -0.6,
            Box::new(|g, v| g.grad_reverse(v[0], 0.6)),
        ),
    ];
    let mut out = Vec::new();
    for (op, shapes, scale, build) in &graph_ops {
        let mut worst: f64 = 0.0;
        for seed in 0..seeds {
            worst = worst.max(op_error(shapes, seed, *scale, build.as_ref())?);
        }
        out.push(OpCheck {
            op,
            seeds: seeds as usize,
            max_error: worst,
        });
    }

    let layers: Vec<(&'static str, Box<LayerCheck>)> = vec![
        (
            "crf_nll",
            Box::new(|rng| {
                let mut st = ParamStore::new();
                let e = st.add("crf", "e", Tensor::zeros(&[3, 4]));
                let t = st.add("crf", "t", Tensor::zeros(&[5, 5]));
                layer_error(st, rng, |s| {
                    let (e, t) = (s.param(e), s.param(t));
                    crf::nll_node(s, e, t, &[0, 2, 2, 1])
                })
            }),
        ),
        (
            "linear",
            Box::new(|rng| {
                let mut st = ParamStore::new();
                let l = Linear::new(&mut st, "l", "p", 3, 2, rng);
                let (x, w) = (randn(rng, &[3, 4], 1.0), randn(rng, &[2, 4], 1.0));
                layer_error(st, rng, |s| {
                    let x = s.constant(x.clone());
                    let y = l.forward(s, x)?;
                    weighted_sum(s, y, &w)
                })
            }),
        ),
        (
            "bilstm",
            Box::new(|rng| {
                let mut st = ParamStore::new();
                let l = BiLstm::new(&mut st, "lstm", 3, 2, rng);
                let (x, w) = (randn(rng, &[3, 4], 1.0), randn(rng, &[4, 4], 1.0));
                layer_error(st, rng, |s| {
                    let x = s.constant(x.clone());
                    let y = l.forward(s, x)?;
                    weighted_sum(s, y, &w)
                })
            }),
        ),
        (
            "char_cnn",
            Box::new(|rng| {
                let mut st = ParamStore::new();
                let c = CharCnn::new(&mut st, 6, 3, 3, 4, rng);
                let w = randn(rng, &[4, 3], 1.0);
                layer_error(st, rng, |s| {
                    let y = c.embed_words(s, &[vec![2, 3, 4], vec![5], vec![2, 2, 3, 5, 4]])?;
                    weighted_sum(s, y, &w)
                })
            }),
        ),
        (
            "text_aware_attention",
            Box::new(|rng| {
                let mut st = ParamStore::new();
                let a = TextAwareAttention::new(&mut st, 6, rng);
                let (x, c, w) = (
                    randn(rng, &[4, 3], 1.0),
                    randn(rng, &[5, 3], 1.0),
                    randn(rng, &[5, 3], 1.0),
                );
                layer_error(st, rng, |s| {
                    let (x, c) = (s.constant(x.clone()), s.constant(c.clone()));
                    let y = a.forward(s, x, c, None)?.output;
                    weighted_sum(s, y, &w)
                })
            }),
        ),
        (
            "self_attention_pool",
            Box::new(|rng| {
                let mut st = ParamStore::new();
                let p = SelfAttentionPool::new(&mut st, "pool", 3, rng);
                let (h, w) = (randn(rng, &[3, 4], 1.0), randn(rng, &[3], 1.0));
                layer_error(st, rng, |s| {
                    let h = s.constant(h.clone());
                    let y = p.forward(s, h, None)?.output;
                    weighted_sum(s, y, &w)
                })
            }),
        ),
        (
            "crf_predictor",
            Box::new(|rng| {
                let mut st = ParamStore::new();
                let c = Crf::new(&mut st, "crf", 3, 3, rng);
                let h = randn(rng, &[3, 4], 1.0);
                layer_error(st, rng, |s| {
                    let h = s.constant(h.clone());
                    c.nll(s, h, &[0, 1, 2, 1])
                })
            }),
        ),
        (
            "classifier",
            Box::new(|rng| {
                let mut st = ParamStore::new();
                let c = Classifier::new(&mut st, "cls", 3, 3, rng);
                let h = randn(rng, &[3, 4], 1.0);
                layer_error(st, rng, |s| {
                    let h = s.constant(h.clone());
                    c.nll(s, h, 2)
                })
            }),
        ),
        (
            "discriminator",
            Box::new(|rng| {
                let mut st = ParamStore::new();
                let d = Discriminator::new(&mut st, 3, rng);
                let h = randn(rng, &[3, 4], 1.0);
                layer_error(st, rng, |s| {
                    let h = s.constant(h.clone());
                    d.loss(s, h, ModalityLabel::Cognitive)
                })
            }),
        ),
    ];
    for (op, check) in &layers {
        let mut worst: f64 = 0.0;
        for seed in 0..seeds {
            worst = worst.max(check(&mut ChaCha8Rng::seed_from_u64(seed))?);
        }
        out.push(OpCheck {
            op,
            seeds: seeds as usize,
            max_error: worst,
        });
    }
    Ok(out)
}
