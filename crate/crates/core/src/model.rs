//! Full pipeline: embedding lookup, convolutional encoder, label head.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncodedSentence, Encoder, EncoderConfig, SentenceInput};
use crate::error::{Error, Result};
use crate::gradcheck::Parameterized;
use crate::heads::crbm::DEFAULT_MEANFIELD_ITERS;
use crate::heads::{CrbmHead, CrbmInference, Head, LogisticHead, Shortcuts, StackedHead};
use crate::numeric::{adam_step, adam_step_rows, AdamConfig, Matrix, ParamTensor, SeededRng};
use crate::text::{encode_doc, tokenize, Document, EmbeddingTable, LabelVocab, TokenizedDoc, Vocabulary, PAD_ID};
use crate::training::{cross_entropy, cross_entropy_grad};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logistic,
    Plain,
    Residual,
    Crbm,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Logistic => "logistic",
            ModelKind::Plain => "plain",
            ModelKind::Residual => "residual",
            ModelKind::Crbm => "crbm",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(ModelKind::Logistic),
            "plain" => Ok(ModelKind::Plain),
            "residual" => Ok(ModelKind::Residual),
            "crbm" => Ok(ModelKind::Crbm),
            other => Err(Error::InvalidArgument(format!("unknown model type `{other}`"))),
        }
    }
}

/// Architecture choices that do not depend on the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Number of stacked layers `n` (plain and residual heads).
    pub layers: usize,
    /// `h_1 … h_n`. Empty means `h_i = L`; a single entry applies to every layer.
    pub hidden: Vec<usize>,
    pub encoder: EncoderConfig,
    pub max_len: usize,
    /// CRBM hidden units `J`; `None` means `J = L`.
    pub crbm_hidden: Option<usize>,
    pub gibbs_steps: usize,
    pub meanfield_iters: usize,
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            layers: 1,
            hidden: Vec::new(),
            encoder: EncoderConfig::default(),
            max_len: crate::text::DEFAULT_MAX_LEN,
            crbm_hidden: None,
            gibbs_steps: 1,
            meanfield_iters: DEFAULT_MEANFIELD_ITERS,
        }
    }

    pub fn with_layers(mut self, layers: usize) -> Self {
        self.layers = layers;
        self
    }

    /// Resolved `h_1 … h_n` for `labels` output labels.
    pub fn hidden_sizes(&self, labels: usize) -> Result<Vec<usize>> {
        match self.hidden.len() {
            0 => Ok(vec![labels; self.layers]),
            1 => Ok(vec![self.hidden[0]; self.layers]),
            n if n == self.layers => Ok(self.hidden.clone()),
            n => Err(Error::InvalidArgument(format!(
                "{n} hidden sizes given for {} layers",
                self.layers
            ))),
        }
    }
}

/// Gradient buffers mirroring a [`Model`]'s tensors. The embedding gradient
/// is dense but only rows listed in `touched` are ever non-zero.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub embedding: Matrix,
    pub touched: BTreeSet<usize>,
    pub encoder: Vec<Matrix>,
    pub head: Vec<Matrix>,
}

impl ModelGrads {
    pub fn new(model: &Model) -> Self {
        let (r, c) = model.embedding.table.shape();
        Self {
            embedding: Matrix::zeros(r, c),
            touched: BTreeSet::new(),
            encoder: model.encoder.zero_grads(),
            head: model.head.zero_grads(),
        }
    }

    pub fn clear(&mut self) {
        for &r in &self.touched {
            self.embedding.row_mut(r).fill(0.0);
        }
        self.touched.clear();
        self.encoder.iter_mut().chain(self.head.iter_mut()).for_each(|m| m.fill(0.0));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub vocab: Vocabulary,
    pub labels: LabelVocab,
    pub embedding: EmbeddingTable,
    pub encoder: Encoder,
    pub head: Head,
}

impl Model {
    /// Fresh model; encoder then head parameters are drawn from `rng`.
    pub fn new(
        spec: ModelSpec,
        vocab: Vocabulary,
        labels: LabelVocab,
        embedding: EmbeddingTable,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if embedding.dim() != spec.encoder.embed_dim {
            return Err(Error::InvalidArgument(format!(
                "embedding width {} != encoder width {}",
                embedding.dim(),
                spec.encoder.embed_dim
            )));
        }
        if embedding.len() != vocab.len() {
            return Err(Error::InvalidArgument("embedding rows != vocabulary size".into()));
        }
        let encoder = Encoder::new(spec.encoder.clone(), rng)?;
        let l = labels.len();
        let vw = encoder.output_dim();
        let head = match spec.kind {
            ModelKind::Logistic => Head::Logistic(LogisticHead::new(l, vw, rng)?),
            ModelKind::Residual => {
                Head::Stacked(StackedHead::new(Shortcuts::Identity, l, vw, &spec.hidden_sizes(l)?, rng)?)
            }
            ModelKind::Plain => Head::Stacked(StackedHead::new(Shortcuts::None, l, vw, &spec.hidden_sizes(l)?, rng)?),
            ModelKind::Crbm => Head::Crbm(CrbmHead::new(l, vw, spec.crbm_hidden.unwrap_or(l), rng)?),
        };
        Ok(Self {
            spec,
            vocab,
            labels,
            embedding,
            encoder,
            head,
        })
    }

    /// Number of trainable scalars in the label head.
    pub fn head_param_count(&self) -> usize {
        self.head.params().iter().map(|p| p.len()).sum()
    }

    /// Tokenizes and encodes a corpus record, resolving its labels.
    pub fn prepare(&self, doc: &Document) -> Result<TokenizedDoc> {
        let tokens = tokenize(&doc.text)?;
        let mut td = encode_doc(&tokens, &self.vocab, self.spec.max_len);
        td.labels = self.labels.ids_of(doc)?;
        Ok(td)
    }

    pub fn input(&self, doc: &TokenizedDoc) -> SentenceInput {
        SentenceInput::from_ids(doc.valid_ids(), &self.embedding, self.spec.encoder.max_window())
    }

    /// Encoder output in evaluation mode.
    pub fn encode(&self, doc: &TokenizedDoc) -> EncodedSentence {
        self.encoder.encode_input(&self.input(doc), None)
    }

    /// Label marginals in evaluation mode.
    pub fn predict(&self, doc: &TokenizedDoc) -> Result<Vec<f64>> {
        self.predict_with(doc, CrbmInference::Auto)
    }

    pub fn predict_with(&self, doc: &TokenizedDoc, crbm: CrbmInference) -> Result<Vec<f64>> {
        let enc = self.encode(doc);
        self.head.predict(&enc.x, crbm, self.spec.meanfield_iters)
    }

    /// Cross-entropy of one document in evaluation mode.
    pub fn loss(&self, doc: &TokenizedDoc, y: &[f64]) -> Result<f64> {
        Ok(cross_entropy(&self.predict(doc)?, y))
    }

    /// Forward and backward pass for one document, accumulating into `grads`.
    /// Returns the document's loss.
    pub fn loss_and_grad(
        &self,
        doc: &TokenizedDoc,
        y: &[f64],
        dropout: Option<(&mut SeededRng, f64)>,
        grads: &mut ModelGrads,
    ) -> Result<f64> {
        let input = self.input(doc);
        let enc = self.encoder.encode_input(&input, dropout);
        let trace = self.head.forward(&enc.x)?;
        let p = trace.marginals();
        let loss = cross_entropy(p, y);
        let dz = cross_entropy_grad(p, y);
        let mut dx = vec![0.0; enc.x.len()];
        self.head.backward(&enc.x, &trace, &dz, &mut grads.head, &mut dx);
        let mut dinput = vec![0.0; input.data.len()];
        self.encoder.backward(&input, &enc, &dx, &mut grads.encoder, Some(&mut dinput));
        let k = input.k;
        for (pos, &id) in doc.valid_ids().iter().enumerate() {
            if id == PAD_ID {
                continue;
            }
            crate::numeric::axpy(1.0, &dinput[pos * k..(pos + 1) * k], grads.embedding.row_mut(id));
            grads.touched.insert(id);
        }
        Ok(loss)
    }

    /// Copies `scale · grads` into the tensors' `grad` fields.
    pub fn store_grads(&mut self, grads: &ModelGrads, scale: f64) {
        let emb = &mut self.embedding.table.grad;
        emb.fill(0.0);
        for &r in &grads.touched {
            for (g, v) in emb.row_mut(r).iter_mut().zip(grads.embedding.row(r)) {
                *g = scale * v;
            }
        }
        for (p, g) in self.encoder.params_mut().into_iter().zip(&grads.encoder) {
            copy_scaled(&mut p.grad, g, scale);
        }
        for (p, g) in self.head.params_mut().into_iter().zip(&grads.head) {
            copy_scaled(&mut p.grad, g, scale);
        }
    }

    /// One Adam update from accumulated gradients. Only embedding rows that
    /// received gradient are updated; the pad row never moves.
    pub fn apply_adam(&mut self, grads: &ModelGrads, scale: f64, adam: &AdamConfig) -> Result<()> {
        let rows: Vec<usize> = grads.touched.iter().copied().filter(|&r| r != PAD_ID).collect();
        {
            let emb = &mut self.embedding.table;
            for &r in &rows {
                for (g, v) in emb.grad.row_mut(r).iter_mut().zip(grads.embedding.row(r)) {
                    *g = scale * v;
                }
            }
            adam_step_rows(emb, adam, &rows)?;
        }
        for (p, g) in self.encoder.params_mut().into_iter().zip(&grads.encoder) {
            copy_scaled(&mut p.grad, g, scale);
            adam_step(p, adam)?;
        }
        for (p, g) in self.head.params_mut().into_iter().zip(&grads.head) {
            copy_scaled(&mut p.grad, g, scale);
            adam_step(p, adam)?;
        }
        Ok(())
    }

    /// Parameter values only, in [`Parameterized::params`] order.
    pub fn snapshot(&self) -> Vec<Matrix> {
        self.params().iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, values: &[Matrix]) {
        for (p, v) in self.params_mut().into_iter().zip(values) {
            p.value.clone_from(v);
        }
    }
}

fn copy_scaled(dst: &mut Matrix, src: &Matrix, scale: f64) {
    for (d, s) in dst.as_mut_slice().iter_mut().zip(src.as_slice()) {
        *d = scale * s;
    }
}

impl Parameterized for Model {
    fn params(&self) -> Vec<&ParamTensor> {
        let mut out = vec![&self.embedding.table];
        out.extend(self.encoder.params());
        out.extend(self.head.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out = vec![&mut self.embedding.table];
        out.extend(self.encoder.params_mut());
        out.extend(self.head.params_mut());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_check, DEFAULT_DELTA};
    use crate::text::build_vocab;

    fn toy_model(kind: ModelKind, seed: u64) -> (Model, TokenizedDoc, Vec<f64>) {
        let words: Vec<String> = "pt with hx of cad s/p stent no fever".split(' ').map(String::from).collect();
        let vocab = build_vocab([words.as_slice()], 1).unwrap();
        let labels = LabelVocab::new((0..4).map(|i| format!("l{i}")).collect()).unwrap();
        let mut spec = ModelSpec::new(kind).with_layers(2);
        spec.encoder = EncoderConfig {
            embed_dim: 4,
            windows: vec![2, 3],
            filters_per_window: 3,
        };
        spec.hidden = vec![3];
        spec.max_len = 8;
        let mut rng = SeededRng::new(seed);
        let emb = EmbeddingTable::random(vocab.len(), 4, &mut rng);
        let mut model = Model::new(spec, vocab, labels, emb, &mut rng).unwrap();
        // Larger weights than the default init so every path carries signal.
        let mut wrng = SeededRng::new(seed ^ 0xABCD);
        for p in model.params_mut().into_iter().skip(1) {
            for v in p.value.as_mut_slice() {
                *v = wrng.uniform(-0.5, 0.5);
            }
        }
        let doc = Document {
            text: words[..8].join(" "),
            labels: vec!["l0".into(), "l2".into()],
        };
        let td = model.prepare(&doc).unwrap();
        let y = model.labels.indicator(&td.labels);
        (model, td, y)
    }

    #[test]
    fn full_pipeline_gradients() {
        for kind in [ModelKind::Logistic, ModelKind::Plain, ModelKind::Residual] {
            let (mut model, doc, y) = toy_model(kind, 21);
            let mut grads = ModelGrads::new(&model);
            model.loss_and_grad(&doc, &y, None, &mut grads).unwrap();
            model.store_grads(&grads, 1.0);
            let report = finite_diff_check(&mut model, |m| m.loss(&doc, &y).unwrap(), DEFAULT_DELTA);
            assert!(report.max_rel_error < 1e-4, "{kind}: {report:?}");
        }
    }

    #[test]
    fn pad_row_never_receives_gradient() {
        let (mut model, doc, y) = toy_model(ModelKind::Residual, 3);
        let mut grads = ModelGrads::new(&model);
        model.loss_and_grad(&doc, &y, None, &mut grads).unwrap();
        assert!(!grads.touched.contains(&PAD_ID));
        let touched: BTreeSet<usize> = doc.valid_ids().iter().copied().collect();
        assert_eq!(grads.touched, touched);
        model.apply_adam(&grads, 1.0, &AdamConfig::with_lr(0.1)).unwrap();
        assert!(model.embedding.row(PAD_ID).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn crbm_head_is_not_backpropagated() {
        let (model, doc, y) = toy_model(ModelKind::Crbm, 1);
        let mut grads = ModelGrads::new(&model);
        assert!(model.loss_and_grad(&doc, &y, None, &mut grads).is_err());
        assert_eq!(model.predict(&doc).unwrap().len(), 4);
    }

    #[test]
    fn hidden_size_resolution() {
        let mut s = ModelSpec::new(ModelKind::Residual).with_layers(3);
        assert_eq!(s.hidden_sizes(5).unwrap(), vec![5, 5, 5]);
        s.hidden = vec![2];
        assert_eq!(s.hidden_sizes(5).unwrap(), vec![2, 2, 2]);
        s.hidden = vec![1, 2, 3];
        assert_eq!(s.hidden_sizes(5).unwrap(), vec![1, 2, 3]);
        s.hidden = vec![1, 2];
        assert!(s.hidden_sizes(5).is_err());
    }
}
