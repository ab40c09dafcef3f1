//! Label classifiers over the encoded sentence vector.

pub mod crbm;
pub mod logistic;
pub mod stacked;

pub use crbm::{
    crbm_cd_gradient, crbm_cond_h, crbm_cond_y, crbm_exact, crbm_exact_gradient, crbm_exact_log_likelihood,
    crbm_exact_marginals, crbm_meanfield_predict, CrbmExact, CrbmGradient, CrbmHead,
};
pub use logistic::{logistic_forward, LogisticHead};
pub use stacked::{plain_forward, residual_forward, PlainHead, ResidualHead, Shortcuts, StackedHead, StackedTrace};

use crate::error::{Error, Result};
use crate::numeric::{sigmoid, Matrix, ParamTensor};

/// How CRBM marginals are computed at prediction time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrbmInference {
    /// Exact enumeration when `L ≤ 20`, mean-field otherwise.
    Auto,
    Exact,
    MeanField,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Head {
    Logistic(LogisticHead),
    Stacked(StackedHead),
    Crbm(CrbmHead),
}

/// Intermediates of a differentiable head.
#[derive(Debug, Clone, PartialEq)]
pub enum HeadTrace {
    Logistic { z: Vec<f64>, p: Vec<f64> },
    Stacked(StackedTrace),
}

impl HeadTrace {
    pub fn marginals(&self) -> &[f64] {
        match self {
            HeadTrace::Logistic { p, .. } => p,
            HeadTrace::Stacked(t) => t.marginals(),
        }
    }
}

impl Head {
    pub fn labels(&self) -> usize {
        match self {
            Head::Logistic(h) => h.labels(),
            Head::Stacked(h) => h.labels(),
            Head::Crbm(h) => h.labels(),
        }
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        match self {
            Head::Logistic(h) => h.params(),
            Head::Stacked(h) => h.params(),
            Head::Crbm(h) => h.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        match self {
            Head::Logistic(h) => h.params_mut(),
            Head::Stacked(h) => h.params_mut(),
            Head::Crbm(h) => h.params_mut(),
        }
    }

    pub fn zero_grads(&self) -> Vec<Matrix> {
        self.params().iter().map(|p| Matrix::zeros(p.value.rows(), p.value.cols())).collect()
    }

    /// Forward pass of a differentiable head; the CRBM has none.
    pub fn forward(&self, x: &[f64]) -> Result<HeadTrace> {
        match self {
            Head::Logistic(h) => {
                let z = h.logits(x);
                let p = z.iter().map(|&v| sigmoid(v)).collect();
                Ok(HeadTrace::Logistic { z, p })
            }
            Head::Stacked(h) => Ok(HeadTrace::Stacked(h.forward(x))),
            Head::Crbm(_) => Err(Error::InvalidArgument(
                "the CRBM head is trained by contrastive divergence, not backpropagation".into(),
            )),
        }
    }

    /// `dz_out` is the gradient w.r.t. the output logits.
    pub fn backward(&self, x: &[f64], trace: &HeadTrace, dz_out: &[f64], grads: &mut [Matrix], dx: &mut [f64]) {
        match (self, trace) {
            (Head::Logistic(h), HeadTrace::Logistic { .. }) => h.backward(x, dz_out, grads, dx),
            (Head::Stacked(h), HeadTrace::Stacked(t)) => h.backward(x, t, dz_out, grads, dx),
            _ => panic!("head/trace mismatch"),
        }
    }

    /// Label marginals in evaluation mode.
    pub fn predict(&self, x: &[f64], crbm: CrbmInference, meanfield_iters: usize) -> Result<Vec<f64>> {
        match self {
            Head::Crbm(h) => match crbm {
                CrbmInference::Exact => Ok(crbm_exact_marginals(x, h)?.0),
                CrbmInference::MeanField => Ok(crbm_meanfield_predict(x, h, meanfield_iters)),
                CrbmInference::Auto if h.labels() <= crbm::MAX_EXACT_LABELS => Ok(crbm_exact_marginals(x, h)?.0),
                CrbmInference::Auto => Ok(crbm_meanfield_predict(x, h, meanfield_iters)),
            },
            other => Ok(other.forward(x)?.marginals().to_vec()),
        }
    }
}
