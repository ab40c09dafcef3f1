use crate::encoder::WEIGHT_INIT_RANGE;
use crate::error::Result;
use crate::numeric::{sigmoid, uniform_init, Matrix, ParamTensor, SeededRng};

/// Independent per-label logistic classifier: `P(y) = σ(W0 x + b0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticHead {
    pub w0: ParamTensor,
    pub b0: ParamTensor,
}

impl LogisticHead {
    pub fn new(labels: usize, input_dim: usize, rng: &mut SeededRng) -> Result<Self> {
        let w0 = uniform_init(rng, labels, input_dim, -WEIGHT_INIT_RANGE, WEIGHT_INIT_RANGE)?;
        Ok(Self {
            w0: ParamTensor::new("head.w0", w0),
            b0: ParamTensor::zeros("head.b0", labels, 1),
        })
    }

    pub fn labels(&self) -> usize {
        self.w0.value.rows()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.w0.value.matvec(x);
        for (zi, b) in z.iter_mut().zip(self.b0.value.as_slice()) {
            *zi += b;
        }
        z
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        vec![&self.w0, &self.b0]
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![&mut self.w0, &mut self.b0]
    }

    /// `dz` is the gradient w.r.t. the logits; grads follow [`Self::params`].
    pub fn backward(&self, x: &[f64], dz: &[f64], grads: &mut [Matrix], dx: &mut [f64]) {
        grads[0].add_outer(dz, x);
        for (g, d) in grads[1].as_mut_slice().iter_mut().zip(dz) {
            *g += d;
        }
        for (r, &d) in dz.iter().enumerate() {
            if d != 0.0 {
                crate::numeric::axpy(d, self.w0.value.row(r), dx);
            }
        }
    }
}

/// Marginals of the logistic head.
pub fn logistic_forward(x: &[f64], head: &LogisticHead) -> Vec<f64> {
    head.logits(x).into_iter().map(sigmoid).collect()
}
