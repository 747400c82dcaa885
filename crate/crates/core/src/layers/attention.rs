use rand::Rng;

use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{xavier, ParamId, ParamStore, Session};
use crate::scalar::Scalar;

/// Text-aware attention over cognitive feature dimensions.
///
/// `G = tanh(H_word · U[..N, ..N] · H_cogᵀ)` is a `d_w × d_c` compatibility
/// matrix; its column maxima give one score per cognitive feature, softmax
/// turns them into `alpha`, and every row `j` of `H_cog` is scaled by
/// `alpha_j` (uniformly across positions).
#[derive(Clone, Debug)]
pub struct TextAwareAttention {
    pub max_len: usize,
    pub u: ParamId,
}

/// Result of [`TextAwareAttention::forward`].
#[derive(Clone, Copy, Debug)]
pub struct Attended {
    pub output: Var,
    pub alpha: Var,
    pub compat: Var,
}

impl TextAwareAttention {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, max_len: usize, rng: &mut R) -> Self {
        let u = store.add("attention", "u", xavier(rng, max_len, max_len));
        Self { max_len, u }
    }

    /// `mask[i] == false` marks position `i` as padding; padded columns of both
    /// inputs are zeroed before the compatibility matrix is formed.
    pub fn forward<T: Scalar>(
        &self,
        s: &mut Session<T>,
        h_word: Var,
        h_cog: Var,
        mask: Option<&[bool]>,
    ) -> Result<Attended> {
        let (ws, cs) = (s.shape(h_word).to_vec(), s.shape(h_cog).to_vec());
        if ws.len() != 2 || cs.len() != 2 || ws[1] != cs[1] {
            return Err(Error::dim("text_aware_attention", &ws, &cs));
        }
        let n = ws[1];
        if n > self.max_len {
            return Err(Error::Capacity {
                len: n,
                max: self.max_len,
            });
        }
        let (mut hw, mut hc) = (h_word, h_cog);
        if let Some(mask) = mask {
            if mask.len() != n {
                return Err(Error::dim("text_aware_attention.mask", &[mask.len()], &[n]));
            }
            if mask.iter().any(|&m| !m) {
                hw = apply_mask(s, hw, mask)?;
                hc = apply_mask(s, hc, mask)?;
            }
        }
        let u = s.param(self.u);
        let u_n = s.slice(u, 0..n, 0..n)?;
        let left = s.matmul(hw, u_n)?;
        let hc_t = s.transpose(hc)?;
        let g = s.matmul(left, hc_t)?;
        let compat = s.tanh(g);
        let scores = s.max_over_rows(compat)?;
        let alpha = s.softmax(scores)?;
        let output = s.scale_rows(hc, alpha)?;
        Ok(Attended {
            output,
            alpha,
            compat,
        })
    }
}

fn apply_mask<T: Scalar>(s: &mut Session<T>, x: Var, mask: &[bool]) -> Result<Var> {
    let (r, c) = (s.shape(x)[0], s.shape(x)[1]);
    let data = (0..r * c)
        .map(|k| if mask[k % c] { T::one() } else { T::zero() })
        .collect();
    let m = s.constant(Tensor::from_raw(vec![r, c], data));
    s.mul(x, m)
}

/// Self-attention pooling `alpha = softmax(vᵀ tanh(W H + b))`, output `H · alpha`.
#[derive(Clone, Debug)]
pub struct SelfAttentionPool {
    pub dim: usize,
    pub w: ParamId,
    pub b: ParamId,
    pub v: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct Pooled {
    pub output: Var,
    pub weights: Var,
}

impl SelfAttentionPool {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        group: &str,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add(group, "pool.w", xavier(rng, dim, dim));
        let b = store.add(group, "pool.b", Tensor::zeros(&[dim]));
        let v = store.add(group, "pool.v", xavier(rng, 1, dim).into_vector());
        Self { dim, w, b, v }
    }

    /// Pools `h: dim × N` into a `dim` vector. Masked positions are dropped
    /// before scoring, so they get exactly zero weight.
    pub fn forward<T: Scalar>(
        &self,
        s: &mut Session<T>,
        h: Var,
        mask: Option<&[bool]>,
    ) -> Result<Pooled> {
        let shape = s.shape(h).to_vec();
        if shape.len() != 2 || shape[0] != self.dim {
            return Err(Error::dim("self_attention_pool", &shape, &[self.dim, 0]));
        }
        let h = match mask {
            Some(m) if m.iter().any(|&x| !x) => {
                if m.len() != shape[1] {
                    return Err(Error::dim(
                        "self_attention_pool.mask",
                        &[m.len()],
                        &[shape[1]],
                    ));
                }
                let keep: Vec<usize> = (0..m.len()).filter(|&i| m[i]).collect();
                if keep.is_empty() {
                    return Err(Error::Contract(
                        "self-attention pooling over zero valid positions".into(),
                    ));
                }
                s.select_cols(h, &keep)?
            }
            _ => h,
        };
        let n = s.shape(h)[1];
        let w = s.param(self.w);
        let b = s.param(self.b);
        let v = s.param(self.v);
        let proj = s.matmul(w, h)?;
        let proj = s.add_col_bias(proj, b)?;
        let act = s.tanh(proj);
        let v_row = s.reshape(v, &[1, self.dim])?;
        let scores = s.matmul(v_row, act)?;
        let scores = s.reshape(scores, &[n])?;
        let weights = s.softmax(scores)?;
        let wcol = s.reshape(weights, &[n, 1])?;
        let pooled = s.matmul(h, wcol)?;
        let output = s.reshape(pooled, &[self.dim])?;
        Ok(Pooled { output, weights })
    }
}

trait IntoVector {
    fn into_vector(self) -> Self;
}

impl<T: Scalar> IntoVector for Tensor<T> {
    fn into_vector(self) -> Self {
        let n = self.len();
        Tensor::from_raw(vec![n], self.into_data())
    }
}
