//! Multi-window convolutional sentence encoder.
//!
//! Each filter slides over the embedded sentence, passes through `tanh`, and
//! is max-pooled over time. Pooling only sees positions fully inside the
//! unpadded region, so the output does not depend on how much padding follows
//! the document. Filters are ordered by window (ascending), then by filter
//! index; that order fixes the meaning of every coordinate of `x`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{axpy, uniform_init, Matrix, ParamTensor, SeededRng};
use crate::text::{EmbeddingTable, EMBED_DIM};

/// Range for encoder and head weight initialization.
pub const WEIGHT_INIT_RANGE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub windows: Vec<usize>,
    pub filters_per_window: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: EMBED_DIM,
            windows: vec![3, 4, 5],
            filters_per_window: 100,
        }
    }
}

impl EncoderConfig {
    /// Width of the encoded vector (`filters × windows`).
    pub fn output_dim(&self) -> usize {
        self.windows.len() * self.filters_per_window
    }

    pub fn max_window(&self) -> usize {
        self.windows.iter().copied().max().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.filters_per_window == 0 || self.windows.is_empty() {
            return Err(Error::InvalidArgument(format!("degenerate encoder config {self:?}")));
        }
        if self.windows.contains(&0) {
            return Err(Error::InvalidArgument("filter windows must be >= 1".into()));
        }
        Ok(())
    }
}

/// A single filter `Λ ∈ R^{k×t}` with its scalar bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvFilter {
    pub weights: Matrix,
    pub bias: f64,
}

impl ConvFilter {
    pub fn window(&self) -> usize {
        self.weights.cols()
    }
}

/// `g_j = tanh(⟨X[:, j..j+t], Λ⟩ + ε)` over positions inside the first
/// `valid_len` columns. Columns past `valid_len` read as zero, and a document
/// shorter than the window is treated as zero-padded up to it.
pub fn conv_feature_map(x: &Matrix, filter: &ConvFilter, valid_len: usize) -> Result<Vec<f64>> {
    let k = filter.weights.rows();
    let t = filter.window();
    if x.rows() != k {
        return Err(Error::Dimension {
            op: "conv_feature_map",
            left: x.shape(),
            right: filter.weights.shape(),
        });
    }
    if t == 0 {
        return Err(Error::InvalidArgument("filter window must be >= 1".into()));
    }
    let valid = valid_len.min(x.cols());
    let positions = valid.max(t) - t + 1;
    let g = (0..positions)
        .map(|j| {
            let mut acc = filter.bias;
            for s in 0..t {
                let col = j + s;
                if col >= valid {
                    break;
                }
                for r in 0..k {
                    acc += x.get(r, col) * filter.weights.get(r, s);
                }
            }
            acc.tanh()
        })
        .collect();
    Ok(g)
}

/// Largest entry and the lowest index attaining it.
pub fn max_over_time(g: &[f64]) -> Result<(f64, usize)> {
    let (&first, rest) = g
        .split_first()
        .ok_or_else(|| Error::Internal("max_over_time on an empty feature map".into()))?;
    let mut best = (first, 0);
    for (i, &v) in rest.iter().enumerate() {
        if v > best.0 {
            best = (v, i + 1);
        }
    }
    Ok(best)
}

/// Gradient of max-pooling: everything goes to `argmax`.
pub fn max_pool_backward(len: usize, argmax: usize, grad: f64) -> Vec<f64> {
    let mut out = vec![0.0; len];
    out[argmax] = grad;
    out
}

/// Embedded sentence in time-major layout (`len × k`, one row per token),
/// zero-padded so every window fits at least once.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceInput {
    pub k: usize,
    pub valid_len: usize,
    pub data: Vec<f64>,
}

impl SentenceInput {
    pub fn rows(&self) -> usize {
        self.data.len() / self.k
    }

    /// From a `k × T` column-per-token matrix.
    pub fn from_matrix(x: &Matrix, valid_len: usize, max_window: usize) -> Self {
        let k = x.rows();
        let valid = valid_len.min(x.cols());
        let rows = valid.max(max_window);
        let mut data = vec![0.0; rows * k];
        for col in 0..valid {
            for r in 0..k {
                data[col * k + r] = x.get(r, col);
            }
        }
        Self {
            k,
            valid_len: valid,
            data,
        }
    }

    /// Gathers embedding rows for `ids` (the unpadded prefix of a document).
    pub fn from_ids(ids: &[usize], table: &EmbeddingTable, max_window: usize) -> Self {
        let k = table.dim();
        let rows = ids.len().max(max_window);
        let mut data = vec![0.0; rows * k];
        for (i, &id) in ids.iter().enumerate() {
            data[i * k..(i + 1) * k].copy_from_slice(table.row(id));
        }
        Self {
            k,
            valid_len: ids.len(),
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSentence {
    /// Encoder output, after dropout when in training mode.
    pub x: Vec<f64>,
    /// Pooled `tanh` values before dropout.
    pub pooled: Vec<f64>,
    pub argmax_positions: Vec<usize>,
    /// Per-coordinate dropout multipliers (`0` or `1/keep`); empty in eval mode.
    pub dropout_mask: Vec<f64>,
}

/// Convolution filters for every window, grouped per window.
///
/// Window `t` holds a `filters × (t·k)` weight tensor whose row `f` is filter
/// `f` flattened position-major (`s·k + r` ↔ `Λ[r, s]`), and a `filters × 1`
/// bias tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub weights: Vec<ParamTensor>,
    pub biases: Vec<ParamTensor>,
}

impl Encoder {
    pub fn new(config: EncoderConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let k = config.embed_dim;
        let f = config.filters_per_window;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for &t in &config.windows {
            let w = uniform_init(rng, f, t * k, -WEIGHT_INIT_RANGE, WEIGHT_INIT_RANGE)?;
            weights.push(ParamTensor::new(format!("encoder.w{t}.weight"), w));
            biases.push(ParamTensor::zeros(format!("encoder.w{t}.bias"), f, 1));
        }
        Ok(Self {
            config,
            weights,
            biases,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    /// Filter `i` in coordinate order, as a `k × t` matrix.
    pub fn filter(&self, i: usize) -> ConvFilter {
        let per = self.config.filters_per_window;
        let (wi, f) = (i / per, i % per);
        let t = self.config.windows[wi];
        let k = self.config.embed_dim;
        let row = self.weights[wi].value.row(f);
        let mut m = Matrix::zeros(k, t);
        for s in 0..t {
            for r in 0..k {
                m.set(r, s, row[s * k + r]);
            }
        }
        ConvFilter {
            weights: m,
            bias: self.biases[wi].value.get(f, 0),
        }
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn zero_grads(&self) -> Vec<Matrix> {
        self.params().iter().map(|p| Matrix::zeros(p.value.rows(), p.value.cols())).collect()
    }

    /// Pooled feature vector and argmax positions, no dropout.
    pub fn forward(&self, input: &SentenceInput) -> (Vec<f64>, Vec<usize>) {
        let k = self.config.embed_dim;
        assert_eq!(input.k, k, "embedding width does not match encoder");
        let per = self.config.filters_per_window;
        let mut pooled = Vec::with_capacity(self.output_dim());
        let mut argmax = Vec::with_capacity(self.output_dim());
        let mut scores = Vec::new();
        for (wi, &t) in self.config.windows.iter().enumerate() {
            let eff = input.valid_len.max(t);
            assert!(input.rows() >= eff, "sentence input not padded to window {t}");
            let positions = eff - t + 1;
            scores.clear();
            scores.resize(positions * per, 0.0);
            let w = self.weights[wi].value.as_slice();
            // scores[p, f] = Σ_i input[p·k + i] · W[f, i] over the t·k window.
            // SAFETY: A reads rows p·k .. p·k + t·k of `input.data`, which fit
            // because input.rows() ≥ eff = positions + t − 1; B is the F × t·k
            // weight matrix read transposed; C is positions × F.
            unsafe {
                matrixmultiply::dgemm(
                    positions,
                    t * k,
                    per,
                    1.0,
                    input.data.as_ptr(),
                    k as isize,
                    1,
                    w.as_ptr(),
                    1,
                    (t * k) as isize,
                    0.0,
                    scores.as_mut_ptr(),
                    per as isize,
                    1,
                );
            }
            let bias = self.biases[wi].value.as_slice();
            for f in 0..per {
                let mut best = f64::NEG_INFINITY;
                let mut best_pos = 0;
                for p in 0..positions {
                    let g = (scores[p * per + f] + bias[f]).tanh();
                    if g > best {
                        best = g;
                        best_pos = p;
                    }
                }
                pooled.push(best);
                argmax.push(best_pos);
            }
        }
        (pooled, argmax)
    }

    /// Encodes one sentence. In training mode inverted dropout with keep
    /// probability `keep` is applied to the output.
    pub fn encode_input(&self, input: &SentenceInput, dropout: Option<(&mut SeededRng, f64)>) -> EncodedSentence {
        let (pooled, argmax_positions) = self.forward(input);
        let (x, dropout_mask) = match dropout {
            Some((rng, keep)) => {
                let mask: Vec<f64> = pooled
                    .iter()
                    .map(|_| if rng.bernoulli(keep) { 1.0 / keep } else { 0.0 })
                    .collect();
                (pooled.iter().zip(&mask).map(|(p, m)| p * m).collect(), mask)
            }
            None => (pooled.clone(), Vec::new()),
        };
        EncodedSentence {
            x,
            pooled,
            argmax_positions,
            dropout_mask,
        }
    }

    /// Encodes a `k × T` sentence matrix.
    pub fn encode(
        &self,
        x: &Matrix,
        valid_len: usize,
        train_mode: bool,
        dropout_rng: &mut SeededRng,
        keep: f64,
    ) -> Result<EncodedSentence> {
        if x.rows() != self.config.embed_dim {
            return Err(Error::Dimension {
                op: "encode",
                left: x.shape(),
                right: (self.config.embed_dim, x.cols()),
            });
        }
        let input = SentenceInput::from_matrix(x, valid_len, self.config.max_window());
        let dropout = train_mode.then_some((dropout_rng, keep));
        Ok(self.encode_input(&input, dropout))
    }

    /// Backpropagates `dx` (gradient w.r.t. the encoder output) into the
    /// filter gradients `grads` (ordered like [`Encoder::params`]) and, if
    /// given, into `dinput` (same layout as `input.data`).
    pub fn backward(
        &self,
        input: &SentenceInput,
        enc: &EncodedSentence,
        dx: &[f64],
        grads: &mut [Matrix],
        mut dinput: Option<&mut [f64]>,
    ) {
        let k = self.config.embed_dim;
        let per = self.config.filters_per_window;
        assert_eq!(dx.len(), self.output_dim());
        for (i, &d) in dx.iter().enumerate() {
            let d = if enc.dropout_mask.is_empty() {
                d
            } else {
                d * enc.dropout_mask[i]
            };
            let pooled = enc.pooled[i];
            let dg = d * (1.0 - pooled * pooled);
            if dg == 0.0 {
                continue;
            }
            let (wi, f) = (i / per, i % per);
            let t = self.config.windows[wi];
            let pos = enc.argmax_positions[i];
            let span = pos * k..(pos + t) * k;
            axpy(dg, &input.data[span.clone()], grads[2 * wi].row_mut(f));
            grads[2 * wi + 1].as_mut_slice()[f] += dg;
            if let Some(din) = dinput.as_deref_mut() {
                axpy(dg, self.weights[wi].value.row(f), &mut din[span]);
            }
        }
    }
}
