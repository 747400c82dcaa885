use rand::Rng;

use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{xavier, ParamId, ParamStore, Session};
use crate::scalar::Scalar;

/// Column-wise affine map `W·h_i + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub d_in: usize,
    pub d_out: usize,
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        group: &str,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add(group, &format!("{name}.w"), xavier(rng, d_out, d_in));
        let b = store.add(group, &format!("{name}.b"), Tensor::zeros(&[d_out]));
        Self { d_in, d_out, w, b }
    }

    /// `h` is `d_in × N` (or a `d_in` vector, giving a `d_out` vector).
    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, h: Var) -> Result<Var> {
        let shape = s.shape(h).to_vec();
        let vector = shape.len() == 1;
        if shape.first() != Some(&self.d_in) || shape.len() > 2 {
            return Err(Error::dim("linear", &shape, &[self.d_in]));
        }
        let h = if vector {
            s.reshape(h, &[self.d_in, 1])?
        } else {
            h
        };
        let w = s.param(self.w);
        let b = s.param(self.b);
        let y = s.matmul(w, h)?;
        let y = s.add_col_bias(y, b)?;
        if vector {
            s.reshape(y, &[self.d_out])
        } else {
            Ok(y)
        }
    }
}
