//! n-layer label classifiers with and without identity shortcuts.
//!
//! Residual recurrence, for `i = 1..n`:
//!
//! ```text
//! z_0 = W0 x + b0
//! q_i = G_iᵀ σ(z_{i−1}) + c_i
//! z_i = W0 x + b_i + Σ_{t=1..i} W_t σ(q_t)
//! P(y) = σ(z_n)
//! ```
//!
//! The plain variant drops the shortcut and the running sum:
//! `z_i = W_i σ(q_i) + b_i`. Both variants own exactly the same tensors.

use crate::encoder::WEIGHT_INIT_RANGE;
use crate::error::{Error, Result};
use crate::numeric::{axpy, sigmoid, uniform_init, Matrix, ParamTensor, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shortcuts {
    /// Identity shortcuts from `W0 x` into every layer (residual head).
    Identity,
    /// No shortcuts (plain stacked head).
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackedHead {
    pub shortcuts: Shortcuts,
    pub w0: ParamTensor,
    /// `b_0 … b_n`, each `L × 1`.
    pub b: Vec<ParamTensor>,
    /// `W_1 … W_n`, each `L × h_i`.
    pub w: Vec<ParamTensor>,
    /// `G_1 … G_n`, each `L × h_i`.
    pub g: Vec<ParamTensor>,
    /// `c_1 … c_n`, each `h_i × 1`.
    pub c: Vec<ParamTensor>,
}

pub type ResidualHead = StackedHead;
pub type PlainHead = StackedHead;

/// Forward intermediates kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedTrace {
    /// `z_0 … z_n`.
    pub z: Vec<Vec<f64>>,
    /// `σ(z_0) … σ(z_n)`.
    pub a: Vec<Vec<f64>>,
    /// `q_1 … q_n`.
    pub q: Vec<Vec<f64>>,
    /// `σ(q_1) … σ(q_n)`.
    pub s: Vec<Vec<f64>>,
}

impl StackedTrace {
    pub fn marginals(&self) -> &[f64] {
        self.a.last().expect("trace has at least z_0")
    }
}

impl StackedHead {
    /// Weights `U[−0.01, 0.01)`, biases zero. `hidden` lists `h_1 … h_n`.
    pub fn new(
        shortcuts: Shortcuts,
        labels: usize,
        input_dim: usize,
        hidden: &[usize],
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::InvalidArgument("stacked head needs at least one layer".into()));
        }
        if hidden.contains(&0) || labels == 0 || input_dim == 0 {
            return Err(Error::InvalidArgument("stacked head dimensions must be >= 1".into()));
        }
        let r = WEIGHT_INIT_RANGE;
        let w0 = ParamTensor::new("head.w0", uniform_init(rng, labels, input_dim, -r, r)?);
        let mut b = vec![ParamTensor::zeros("head.b0", labels, 1)];
        let (mut w, mut g, mut c) = (Vec::new(), Vec::new(), Vec::new());
        for (i, &h) in hidden.iter().enumerate() {
            let i = i + 1;
            w.push(ParamTensor::new(format!("head.w{i}"), uniform_init(rng, labels, h, -r, r)?));
            g.push(ParamTensor::new(format!("head.g{i}"), uniform_init(rng, labels, h, -r, r)?));
            c.push(ParamTensor::zeros(format!("head.c{i}"), h, 1));
            b.push(ParamTensor::zeros(format!("head.b{i}"), labels, 1));
        }
        Ok(Self {
            shortcuts,
            w0,
            b,
            w,
            g,
            c,
        })
    }

    pub fn layers(&self) -> usize {
        self.w.len()
    }

    pub fn labels(&self) -> usize {
        self.w0.value.rows()
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.w.iter().map(|w| w.value.cols()).collect()
    }

    /// `w0, b0`, then `w_i, g_i, c_i, b_i` for each layer.
    pub fn params(&self) -> Vec<&ParamTensor> {
        let mut out = vec![&self.w0, &self.b[0]];
        for i in 0..self.layers() {
            out.extend([&self.w[i], &self.g[i], &self.c[i], &self.b[i + 1]]);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out = vec![&mut self.w0];
        let (b0, rest_b) = self.b.split_first_mut().expect("b0");
        out.push(b0);
        for (((w, g), c), b) in self
            .w
            .iter_mut()
            .zip(self.g.iter_mut())
            .zip(self.c.iter_mut())
            .zip(rest_b.iter_mut())
        {
            out.extend([w, g, c, b]);
        }
        out
    }

    pub fn forward(&self, x: &[f64]) -> StackedTrace {
        let n = self.layers();
        let shortcut = self.w0.value.matvec(x);
        let mut z0 = shortcut.clone();
        axpy(1.0, self.b[0].value.as_slice(), &mut z0);
        let a0: Vec<f64> = z0.iter().map(|&v| sigmoid(v)).collect();
        let mut trace = StackedTrace {
            z: vec![z0],
            a: vec![a0],
            q: Vec::with_capacity(n),
            s: Vec::with_capacity(n),
        };
        let mut running = vec![0.0; self.labels()];
        for i in 0..n {
            let mut q = self.g[i].value.matvec_t(&trace.a[i]);
            axpy(1.0, self.c[i].value.as_slice(), &mut q);
            let s: Vec<f64> = q.iter().map(|&v| sigmoid(v)).collect();
            let contrib = self.w[i].value.matvec(&s);
            let z = match self.shortcuts {
                Shortcuts::Identity => {
                    axpy(1.0, &contrib, &mut running);
                    let mut z = shortcut.clone();
                    axpy(1.0, self.b[i + 1].value.as_slice(), &mut z);
                    axpy(1.0, &running, &mut z);
                    z
                }
                Shortcuts::None => {
                    let mut z = contrib;
                    axpy(1.0, self.b[i + 1].value.as_slice(), &mut z);
                    z
                }
            };
            let a = z.iter().map(|&v| sigmoid(v)).collect();
            trace.q.push(q);
            trace.s.push(s);
            trace.z.push(z);
            trace.a.push(a);
        }
        trace
    }

    /// Backpropagates `dz_out` (gradient w.r.t. `z_n`). `grads` follows
    /// [`Self::params`]; `dx` receives the gradient w.r.t. the input.
    pub fn backward(&self, x: &[f64], trace: &StackedTrace, dz_out: &[f64], grads: &mut [Matrix], dx: &mut [f64]) {
        let n = self.layers();
        let l = self.labels();
        let mut dz: Vec<Vec<f64>> = vec![vec![0.0; l]; n + 1];
        dz[n].copy_from_slice(dz_out);
        // Gradient reaching W0 x through every shortcut.
        let mut d_shortcut = vec![0.0; l];
        // Suffix sum Σ_{j ≥ i} dz_j, i.e. everything that sees W_i σ(q_i).
        let mut suffix = vec![0.0; l];
        for i in (1..=n).rev() {
            let layer = i - 1;
            let gi = 2 + 4 * layer;
            let d_out: &[f64] = match self.shortcuts {
                Shortcuts::Identity => {
                    axpy(1.0, &dz[i], &mut suffix);
                    axpy(1.0, &dz[i], &mut d_shortcut);
                    &suffix
                }
                Shortcuts::None => &dz[i],
            };
            let d_out = d_out.to_vec();
            // b_i
            for (g, d) in grads[gi + 3].as_mut_slice().iter_mut().zip(&dz[i]) {
                *g += d;
            }
            // W_i
            let s = &trace.s[layer];
            grads[gi].add_outer(&d_out, s);
            let ds = self.w[layer].value.matvec_t(&d_out);
            let dq: Vec<f64> = ds.iter().zip(s).map(|(d, sv)| d * sv * (1.0 - sv)).collect();
            // G_i, c_i
            let a_prev = &trace.a[layer];
            grads[gi + 1].add_outer(a_prev, &dq);
            for (g, d) in grads[gi + 2].as_mut_slice().iter_mut().zip(&dq) {
                *g += d;
            }
            let da_prev = self.g[layer].value.matvec(&dq);
            for (k, (d, av)) in da_prev.iter().zip(a_prev).enumerate() {
                dz[layer][k] += d * av * (1.0 - av);
            }
        }
        for (g, d) in grads[1].as_mut_slice().iter_mut().zip(&dz[0]) {
            *g += d;
        }
        axpy(1.0, &dz[0], &mut d_shortcut);
        grads[0].add_outer(&d_shortcut, x);
        for (r, &d) in d_shortcut.iter().enumerate() {
            if d != 0.0 {
                axpy(d, self.w0.value.row(r), dx);
            }
        }
    }
}

/// Marginals and intermediates of the residual head.
pub fn residual_forward(x: &[f64], head: &ResidualHead) -> StackedTrace {
    debug_assert_eq!(head.shortcuts, Shortcuts::Identity);
    head.forward(x)
}

/// Marginals and intermediates of the plain stacked head.
pub fn plain_forward(x: &[f64], head: &PlainHead) -> StackedTrace {
    debug_assert_eq!(head.shortcuts, Shortcuts::None);
    head.forward(x)
}
