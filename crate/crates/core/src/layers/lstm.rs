use rand::Rng;

use crate::autodiff::{Axis, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{xavier, ParamId, ParamStore, Session};
use crate::scalar::Scalar;

/// Weights of one LSTM direction. Gate rows are stacked as
/// input, forget, output, candidate (each `hidden` rows).
#[derive(Clone, Debug)]
pub struct LstmDirection {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
}

impl LstmDirection {
    fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        group: &str,
        dir: &str,
        d_in: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let w_input = store.add(
            group,
            &format!("{dir}.w_input"),
            xavier(rng, 4 * hidden, d_in),
        );
        let w_hidden = store.add(
            group,
            &format!("{dir}.w_hidden"),
            xavier(rng, 4 * hidden, hidden),
        );
        let mut b = Tensor::zeros(&[4 * hidden]);
        for v in &mut b.data_mut()[hidden..2 * hidden] {
            *v = T::one();
        }
        let bias = store.add(group, &format!("{dir}.bias"), b);
        Self {
            w_input,
            w_hidden,
            bias,
        }
    }

    /// Hidden states `hidden × N`, column `t` aligned with input position `t`.
    fn run<T: Scalar>(
        &self,
        s: &mut Session<T>,
        x: Var,
        hidden: usize,
        reverse: bool,
    ) -> Result<Var> {
        let n = s.shape(x)[1];
        let w = s.param(self.w_input);
        let u = s.param(self.w_hidden);
        let b = s.param(self.bias);
        let pre = s.matmul(w, x)?;
        let pre = s.add_col_bias(pre, b)?;
        let order: Vec<usize> = if reverse {
            (0..n).rev().collect()
        } else {
            (0..n).collect()
        };
        let mut outputs: Vec<Option<Var>> = vec![None; n];
        let mut state: Option<(Var, Var)> = None;
        for t in order {
            let mut z = s.slice(pre, 0..4 * hidden, t..t + 1)?;
            if let Some((h_prev, _)) = state {
                let rec = s.matmul(u, h_prev)?;
                z = s.add(z, rec)?;
            }
            let gates = s.slice(z, 0..3 * hidden, 0..1)?;
            let gates = s.sigmoid(gates);
            let cand = s.slice(z, 3 * hidden..4 * hidden, 0..1)?;
            let cand = s.tanh(cand);
            let i = s.slice(gates, 0..hidden, 0..1)?;
            let f = s.slice(gates, hidden..2 * hidden, 0..1)?;
            let o = s.slice(gates, 2 * hidden..3 * hidden, 0..1)?;
            let mut c = s.mul(i, cand)?;
            if let Some((_, c_prev)) = state {
                let keep = s.mul(f, c_prev)?;
                c = s.add(c, keep)?;
            }
            let tc = s.tanh(c);
            let h = s.mul(o, tc)?;
            outputs[t] = Some(h);
            state = Some((h, c));
        }
        let cols: Vec<Var> = outputs
            .into_iter()
            .map(|h| h.expect("every position visited"))
            .collect();
        s.concat(&cols, Axis::Cols)
    }
}

/// Bidirectional LSTM producing `2·hidden × N`: forward states on top,
/// backward states below.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub d_in: usize,
    pub hidden: usize,
    pub forward: LstmDirection,
    pub backward: LstmDirection,
}

impl BiLstm {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        group: &str,
        d_in: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let forward = LstmDirection::new(store, group, "fwd", d_in, hidden, rng);
        let backward = LstmDirection::new(store, group, "bwd", d_in, hidden, rng);
        Self {
            d_in,
            hidden,
            forward,
            backward,
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let shape = s.shape(x).to_vec();
        if shape.len() != 2 || shape[0] != self.d_in {
            return Err(Error::dim("bilstm", &shape, &[self.d_in, 0]));
        }
        let f = self.forward.run(s, x, self.hidden, false)?;
        let b = self.backward.run(s, x, self.hidden, true)?;
        s.concat(&[f, b], Axis::Rows)
    }

    /// Same layer with the two directions' weights swapped.
    pub fn mirrored(&self) -> Self {
        Self {
            d_in: self.d_in,
            hidden: self.hidden,
            forward: self.backward.clone(),
            backward: self.forward.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn zero_weights_give_zero_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let lstm = BiLstm::new(&mut store, "enc", 3, 4, &mut rng);
        store.zero_all();
        let mut s = Session::infer(&store);
        let x = s.constant(Tensor::from_rows(&[&[1.0, -2.0], &[0.5, 3.0], &[7.0, 0.1]]));
        let h = lstm.forward(&mut s, x).unwrap();
        assert_eq!(s.shape(h), &[8, 2]);
        assert!(s.value(h).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let lstm = BiLstm::new(&mut store, "enc", 2, 3, &mut rng);
        let mut s = Session::infer(&store);
        let x = s.constant(Tensor::from_rows(&[&[0.3], &[-0.4]]));
        let h = lstm.forward(&mut s, x).unwrap();
        assert_eq!(s.shape(h), &[6, 1]);
        assert!(s.value(h).is_finite());
    }

    /// Scalar recurrence evaluated by hand: d_in = hidden = 1, N = 2.
    #[test]
    fn hand_computed_recurrence() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lstm = BiLstm::new(&mut store, "enc", 1, 1, &mut rng);
        // gates (i, f, o, g)
        let (wi, wh, b) = (
            [0.5, -0.3, 0.8, 1.2],
            [0.2, 0.4, -0.6, 0.7],
            [0.1, 1.0, -0.2, 0.05],
        );
        let (vi, vh, c) = (
            [-0.7, 0.9, 0.3, -0.4],
            [0.6, -0.1, 0.25, 0.5],
            [0.0, 0.3, 0.1, -0.1],
        );
        store
            .set(
                lstm.forward.w_input,
                Tensor::from_rows(&[&[wi[0]], &[wi[1]], &[wi[2]], &[wi[3]]]),
            )
            .unwrap();
        store
            .set(
                lstm.forward.w_hidden,
                Tensor::from_rows(&[&[wh[0]], &[wh[1]], &[wh[2]], &[wh[3]]]),
            )
            .unwrap();
        store
            .set(lstm.forward.bias, Tensor::vector(b.to_vec()).unwrap())
            .unwrap();
        store
            .set(
                lstm.backward.w_input,
                Tensor::from_rows(&[&[vi[0]], &[vi[1]], &[vi[2]], &[vi[3]]]),
            )
            .unwrap();
        store
            .set(
                lstm.backward.w_hidden,
                Tensor::from_rows(&[&[vh[0]], &[vh[1]], &[vh[2]], &[vh[3]]]),
            )
            .unwrap();
        store
            .set(lstm.backward.bias, Tensor::vector(c.to_vec()).unwrap())
            .unwrap();
        let xs = [0.9, -1.5];

        let step = |x: f64, h: f64, cell: f64, w: [f64; 4], u: [f64; 4], b: [f64; 4]| {
            let z: Vec<f64> = (0..4).map(|k| w[k] * x + u[k] * h + b[k]).collect();
            let (i, f, o, g) = (sig(z[0]), sig(z[1]), sig(z[2]), z[3].tanh());
            let c = f * cell + i * g;
            (o * c.tanh(), c)
        };
        let (hf1, cf1) = step(xs[0], 0.0, 0.0, wi, wh, b);
        let (hf2, _) = step(xs[1], hf1, cf1, wi, wh, b);
        let (hb2, cb2) = step(xs[1], 0.0, 0.0, vi, vh, c);
        let (hb1, _) = step(xs[0], hb2, cb2, vi, vh, c);

        let mut s = Session::infer(&store);
        let x = s.constant(Tensor::from_rows(&[&xs]));
        let h = lstm.forward(&mut s, x).unwrap();
        let got = s.value(h).data().to_vec();
        for (a, e) in got.iter().zip([hf1, hf2, hb1, hb2]) {
            assert!((a - e).abs() < 1e-10, "{got:?}");
        }
    }

    #[test]
    fn reversed_input_with_mirrored_weights_swaps_halves() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::new();
        let lstm = BiLstm::new(&mut store, "enc", 3, 2, &mut rng);
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..12).map(|k| ((k * 7 % 5) as f64 - 2.0) * 0.3).collect();
        let x = Tensor::matrix(3, 4, data).unwrap();
        let xr = {
            let t = g.constant(x.clone());
            let r = g.select_cols(t, &[3, 2, 1, 0]).unwrap();
            g.value(r).clone()
        };
        let mut s = Session::infer(&store);
        let xv = s.constant(x);
        let h = lstm.forward(&mut s, xv).unwrap();
        let h = s.value(h).clone();
        let mut s2 = Session::infer(&store);
        let xrv = s2.constant(xr);
        let hr = lstm.mirrored().forward(&mut s2, xrv).unwrap();
        let hr = s2.value(hr).clone();
        for t in 0..4 {
            for k in 0..2 {
                assert!((h.get(k, t) - hr.get(2 + k, 3 - t)).abs() < 1e-14);
                assert!((h.get(2 + k, t) - hr.get(k, 3 - t)).abs() < 1e-14);
            }
        }
    }
}
