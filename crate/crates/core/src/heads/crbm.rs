//! Conditional RBM over labels `y ∈ {0,1}^L` and hidden units `h ∈ {0,1}^J`.
//!
//! Energies: `E_con = −yᵀWx`, `E_rbm = −yᵀGh − yᵀb − cᵀh`. Summing `h` out in
//! closed form gives the unnormalized label mass
//!
//! ```text
//! m(y) = exp(yᵀ(Wx + b)) · Π_j (1 + exp(yᵀG_{:j} + c_j))
//! ```
//!
//! which exact inference enumerates over all `2^L` label sets.

use crate::encoder::WEIGHT_INIT_RANGE;
use crate::error::{Error, Result};
use crate::numeric::{axpy, sigmoid, softplus, uniform_init, Matrix, ParamTensor, SeededRng};

/// Largest label count accepted by exact enumeration.
pub const MAX_EXACT_LABELS: usize = 20;
pub const DEFAULT_MEANFIELD_ITERS: usize = 20;
/// Weight on the fresh value in each damped mean-field update.
pub const MEANFIELD_DAMPING: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct CrbmHead {
    /// `L × vw`
    pub w: ParamTensor,
    /// `L × J`
    pub g: ParamTensor,
    /// `L × 1`
    pub b: ParamTensor,
    /// `J × 1`
    pub c: ParamTensor,
}

/// Gradient of the conditional log-likelihood, one matrix per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct CrbmGradient {
    pub w: Matrix,
    pub g: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

impl CrbmGradient {
    pub fn zeros(head: &CrbmHead) -> Self {
        let z = |p: &ParamTensor| Matrix::zeros(p.value.rows(), p.value.cols());
        Self {
            w: z(&head.w),
            g: z(&head.g),
            b: z(&head.b),
            c: z(&head.c),
        }
    }

    pub fn as_vec(&self) -> Vec<&Matrix> {
        vec![&self.w, &self.g, &self.b, &self.c]
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &CrbmGradient) {
        self.w.add_scaled(alpha, &other.w);
        self.g.add_scaled(alpha, &other.g);
        self.b.add_scaled(alpha, &other.b);
        self.c.add_scaled(alpha, &other.c);
    }
}

impl CrbmHead {
    pub fn new(labels: usize, input_dim: usize, hidden: usize, rng: &mut SeededRng) -> Result<Self> {
        if hidden == 0 || labels == 0 {
            return Err(Error::InvalidArgument("CRBM needs L >= 1 and J >= 1".into()));
        }
        let r = WEIGHT_INIT_RANGE;
        Ok(Self {
            w: ParamTensor::new("crbm.w", uniform_init(rng, labels, input_dim, -r, r)?),
            g: ParamTensor::new("crbm.g", uniform_init(rng, labels, hidden, -r, r)?),
            b: ParamTensor::zeros("crbm.b", labels, 1),
            c: ParamTensor::zeros("crbm.c", hidden, 1),
        })
    }

    pub fn labels(&self) -> usize {
        self.g.value.rows()
    }

    pub fn hidden(&self) -> usize {
        self.g.value.cols()
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        vec![&self.w, &self.g, &self.b, &self.c]
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![&mut self.w, &mut self.g, &mut self.b, &mut self.c]
    }

    /// `Wx + b`, the label-side field contributed by the input.
    pub fn label_field(&self, x: &[f64]) -> Vec<f64> {
        let mut f = self.w.value.matvec(x);
        axpy(1.0, self.b.value.as_slice(), &mut f);
        f
    }

    /// `yᵀG + c`.
    fn hidden_field(&self, y: &[f64]) -> Vec<f64> {
        let mut a = self.g.value.matvec_t(y);
        axpy(1.0, self.c.value.as_slice(), &mut a);
        a
    }

    /// `log m(y)` for a binary `y`.
    pub fn log_mass(&self, x: &[f64], y: &[f64]) -> f64 {
        let field = self.label_field(x);
        let lin: f64 = y.iter().zip(&field).map(|(a, b)| a * b).sum();
        lin + self.hidden_field(y).iter().map(|&a| softplus(a)).sum::<f64>()
    }
}

/// `P(h_j = 1 | y, x) = σ(yᵀG_{:j} + c_j)`.
pub fn crbm_cond_h(y: &[f64], head: &CrbmHead) -> Vec<f64> {
    head.hidden_field(y).into_iter().map(sigmoid).collect()
}

/// `P(y_l = 1 | h, x) = σ(G_{l:}h + b_l + W_{l:}x)`.
pub fn crbm_cond_y(h: &[f64], x: &[f64], head: &CrbmHead) -> Vec<f64> {
    let mut f = head.label_field(x);
    axpy(1.0, &head.g.value.matvec(h), &mut f);
    f.into_iter().map(sigmoid).collect()
}

/// Moments of the model distribution `P(y, h | x)` from exact enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct CrbmExact {
    /// `P(y_l = 1 | x)`.
    pub marginals: Vec<f64>,
    pub log_partition: f64,
    /// `E[σ(yᵀG + c)]`, i.e. `E[h]`.
    pub hidden_mean: Vec<f64>,
    /// `E[y hᵀ]` (`L × J`).
    pub label_hidden: Matrix,
}

fn check_capacity(labels: usize) -> Result<()> {
    if labels > MAX_EXACT_LABELS {
        return Err(Error::Capacity(format!(
            "exact CRBM inference enumerates 2^L label sets; L = {labels} exceeds {MAX_EXACT_LABELS}"
        )));
    }
    Ok(())
}

/// Enumerates all label sets in Gray-code order, calling `visit(code, log_mass, hidden_field)`.
fn enumerate_labels(head: &CrbmHead, x: &[f64], mut visit: impl FnMut(u64, f64, &[f64])) {
    let l = head.labels();
    let field = head.label_field(x);
    let mut a: Vec<f64> = head.c.value.as_slice().to_vec();
    let mut lin = 0.0;
    let mut code: u64 = 0;
    let log_mass = |lin: f64, a: &[f64]| lin + a.iter().map(|&v| softplus(v)).sum::<f64>();
    visit(code, log_mass(lin, &a), &a);
    for step in 1u64..(1u64 << l) {
        let bit = step.trailing_zeros() as usize;
        code ^= 1 << bit;
        let sign = if code & (1 << bit) != 0 { 1.0 } else { -1.0 };
        lin += sign * field[bit];
        axpy(sign, head.g.value.row(bit), &mut a);
        visit(code, log_mass(lin, &a), &a);
    }
}

/// Exact marginals, log-partition and hidden moments by enumeration.
pub fn crbm_exact(x: &[f64], head: &CrbmHead) -> Result<CrbmExact> {
    let l = head.labels();
    let j = head.hidden();
    check_capacity(l)?;
    let mut records: Vec<(u64, f64)> = Vec::with_capacity(1 << l);
    enumerate_labels(head, x, |code, lm, _| records.push((code, lm)));
    let max = records.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);

    let mut z = 0.0;
    let mut marg = vec![0.0; l];
    let mut hmean = vec![0.0; j];
    let mut yh = Matrix::zeros(l, j);
    let mut y = vec![0.0; l];
    for &(code, lm) in &records {
        let w = (lm - max).exp();
        z += w;
        for (bit, yl) in y.iter_mut().enumerate() {
            *yl = ((code >> bit) & 1) as f64;
        }
        let h = crbm_cond_h(&y, head);
        axpy(w, &h, &mut hmean);
        for (bit, m) in marg.iter_mut().enumerate() {
            if y[bit] != 0.0 {
                *m += w;
                axpy(w, &h, yh.row_mut(bit));
            }
        }
    }
    marg.iter_mut().for_each(|m| *m /= z);
    hmean.iter_mut().for_each(|m| *m /= z);
    yh.scale(1.0 / z);
    Ok(CrbmExact {
        marginals: marg,
        log_partition: max + z.ln(),
        hidden_mean: hmean,
        label_hidden: yh,
    })
}

/// Exact `P(y_l = 1 | x)` and `log Z(x)`.
pub fn crbm_exact_marginals(x: &[f64], head: &CrbmHead) -> Result<(Vec<f64>, f64)> {
    check_capacity(head.labels())?;
    let l = head.labels();
    let mut records: Vec<(u64, f64)> = Vec::with_capacity(1 << l);
    enumerate_labels(head, x, |code, lm, _| records.push((code, lm)));
    let max = records.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut marg = vec![0.0; l];
    for &(code, lm) in &records {
        let w = (lm - max).exp();
        z += w;
        let mut rest = code;
        while rest != 0 {
            let bit = rest.trailing_zeros() as usize;
            marg[bit] += w;
            rest &= rest - 1;
        }
    }
    marg.iter_mut().for_each(|m| *m /= z);
    Ok((marg, max + z.ln()))
}

/// `log P(y | x)` by enumeration.
pub fn crbm_exact_log_likelihood(x: &[f64], y: &[f64], head: &CrbmHead) -> Result<f64> {
    let (_, log_z) = crbm_exact_marginals(x, head)?;
    Ok(head.log_mass(x, y) - log_z)
}

/// Sufficient statistics `(y xᵀ, y μᵀ, y, μ)` for a label vector `y` with
/// hidden expectation `μ`, added into `acc` with weight `alpha`.
fn add_stats(acc: &mut CrbmGradient, alpha: f64, x: &[f64], y: &[f64], mu: &[f64]) {
    let ay: Vec<f64> = y.iter().map(|v| alpha * v).collect();
    acc.w.add_outer(&ay, x);
    acc.g.add_outer(&ay, mu);
    axpy(alpha, y, acc.b.as_mut_slice());
    axpy(alpha, mu, acc.c.as_mut_slice());
}

/// Gradient of `log P(y | x)` with the negative phase computed exactly.
pub fn crbm_exact_gradient(x: &[f64], y: &[f64], head: &CrbmHead) -> Result<CrbmGradient> {
    let ex = crbm_exact(x, head)?;
    let mut grad = CrbmGradient::zeros(head);
    add_stats(&mut grad, 1.0, x, y, &crbm_cond_h(y, head));
    // Negative phase: E[y] xᵀ, E[y hᵀ], E[y], E[h].
    grad.w.add_outer(&ex.marginals.iter().map(|m| -m).collect::<Vec<_>>(), x);
    grad.g.add_scaled(-1.0, &ex.label_hidden);
    axpy(-1.0, &ex.marginals, grad.b.as_mut_slice());
    axpy(-1.0, &ex.hidden_mean, grad.c.as_mut_slice());
    Ok(grad)
}

/// Contrastive-divergence estimate of the `log P(y | x)` gradient.
///
/// The positive phase uses `(y, E[h | y, x])`; the negative phase runs
/// `gibbs_steps` rounds of `h ~ P(h|y,x)`, `y ~ P(y|h,x)` from the observed
/// labels and uses `(y_k, E[h | y_k, x])`.
pub fn crbm_cd_gradient(x: &[f64], y: &[f64], head: &CrbmHead, gibbs_steps: usize, rng: &mut SeededRng) -> CrbmGradient {
    let mut grad = CrbmGradient::zeros(head);
    add_stats(&mut grad, 1.0, x, y, &crbm_cond_h(y, head));
    let field = head.label_field(x);
    let mut chain = y.to_vec();
    for _ in 0..gibbs_steps {
        let h: Vec<f64> = crbm_cond_h(&chain, head)
            .into_iter()
            .map(|p| f64::from(u8::from(rng.bernoulli(p))))
            .collect();
        let mut fy = head.g.value.matvec(&h);
        axpy(1.0, &field, &mut fy);
        for (c, f) in chain.iter_mut().zip(&fy) {
            *c = f64::from(u8::from(rng.bernoulli(sigmoid(*f))));
        }
    }
    let mu = crbm_cond_h(&chain, head);
    add_stats(&mut grad, -1.0, x, &chain, &mu);
    grad
}

/// Damped mean-field marginals, starting from `μ_y = σ(Wx + b)`.
pub fn crbm_meanfield_predict(x: &[f64], head: &CrbmHead, iters: usize) -> Vec<f64> {
    let field = head.label_field(x);
    let mut mu_y: Vec<f64> = field.iter().map(|&f| sigmoid(f)).collect();
    let mut mu_h = crbm_cond_h(&mu_y, head);
    for _ in 0..iters.max(1) {
        let fresh_h = crbm_cond_h(&mu_y, head);
        for (m, f) in mu_h.iter_mut().zip(&fresh_h) {
            *m = (1.0 - MEANFIELD_DAMPING) * *m + MEANFIELD_DAMPING * f;
        }
        let mut fy = head.g.value.matvec(&mu_h);
        axpy(1.0, &field, &mut fy);
        for (m, f) in mu_y.iter_mut().zip(&fy) {
            *m = (1.0 - MEANFIELD_DAMPING) * *m + MEANFIELD_DAMPING * sigmoid(*f);
        }
    }
    mu_y
}
