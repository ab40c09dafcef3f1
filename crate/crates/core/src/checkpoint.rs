//! Single-file model checkpoints: one JSON header line, then one line per
//! tensor holding its name and row-major values as decimal text.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::gradcheck::Parameterized;
use crate::model::{Model, ModelKind, ModelSpec};
use crate::numeric::{Matrix, SeededRng};
use crate::text::{EmbeddingTable, LabelVocab, Vocabulary};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model_type: ModelKind,
    pub n_layers: usize,
    pub hidden_sizes: Vec<usize>,
    pub encoder: EncoderConfig,
    pub max_len: usize,
    pub crbm_hidden: Option<usize>,
    pub gibbs_steps: usize,
    pub meanfield_iters: usize,
    pub vocab: Vec<String>,
    pub labels: Vec<String>,
    pub tensors: Vec<TensorInfo>,
}

/// Serializes `model`; equal models give equal bytes.
pub fn to_string(model: &Model) -> Result<String> {
    let params = model.params();
    let mut seen = HashSet::new();
    for p in &params {
        if !seen.insert(p.name.as_str()) {
            return Err(Error::Checkpoint(format!("duplicate tensor name `{}`", p.name)));
        }
        if !p.value.is_finite() {
            return Err(Error::Checkpoint(format!("tensor `{}` has non-finite values", p.name)));
        }
    }
    let spec = &model.spec;
    let hidden_sizes = match spec.kind {
        ModelKind::Plain | ModelKind::Residual => spec.hidden_sizes(model.labels.len())?,
        _ => Vec::new(),
    };
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        model_type: spec.kind,
        n_layers: spec.layers,
        hidden_sizes,
        encoder: spec.encoder.clone(),
        max_len: spec.max_len,
        crbm_hidden: spec.crbm_hidden,
        gibbs_steps: spec.gibbs_steps,
        meanfield_iters: spec.meanfield_iters,
        vocab: model.vocab.tokens().to_vec(),
        labels: model.labels.labels().to_vec(),
        tensors: params
            .iter()
            .map(|p| TensorInfo {
                name: p.name.clone(),
                rows: p.value.rows(),
                cols: p.value.cols(),
            })
            .collect(),
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for p in &params {
        out.push_str(&p.name);
        for v in p.value.as_slice() {
            out.push(' ');
            // `Display` for f64 is the shortest string that parses back exactly.
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn from_str(text: &str) -> Result<Model> {
    let mut lines = text.lines();
    let header: CheckpointHeader = serde_json::from_str(lines.next().ok_or_else(|| Error::Checkpoint("empty file".into()))?)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            header.format_version
        )));
    }
    let spec = ModelSpec {
        kind: header.model_type,
        layers: header.n_layers,
        hidden: header.hidden_sizes.clone(),
        encoder: header.encoder.clone(),
        max_len: header.max_len,
        crbm_hidden: header.crbm_hidden,
        gibbs_steps: header.gibbs_steps,
        meanfield_iters: header.meanfield_iters,
    };
    let vocab = Vocabulary::from_tokens(header.vocab).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let labels = LabelVocab::new(header.labels).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let embedding = EmbeddingTable::new(Matrix::zeros(vocab.len(), spec.encoder.embed_dim));
    let mut model = Model::new(spec, vocab, labels, embedding, &mut SeededRng::new(0))
        .map_err(|e| Error::Checkpoint(e.to_string()))?;

    let mut params = model.params_mut();
    if params.len() != header.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "{} tensors listed, model type needs {}",
            header.tensors.len(),
            params.len()
        )));
    }
    for (i, (p, info)) in params.iter_mut().zip(&header.tensors).enumerate() {
        if p.name != info.name || p.value.shape() != (info.rows, info.cols) {
            return Err(Error::Checkpoint(format!(
                "tensor {i}: expected `{}` {:?}, header lists `{}` ({}, {})",
                p.name,
                p.value.shape(),
                info.name,
                info.rows,
                info.cols
            )));
        }
        let line = lines
            .next()
            .ok_or_else(|| Error::Checkpoint(format!("missing values for `{}`", info.name)))?;
        let mut fields = line.split(' ');
        if fields.next() != Some(info.name.as_str()) {
            return Err(Error::Checkpoint(format!("expected values for `{}`", info.name)));
        }
        let values = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Checkpoint(format!("`{}`: {e}", info.name)))?;
        if values.len() != info.rows * info.cols || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!(
                "`{}`: expected {} finite values, found {}",
                info.name,
                info.rows * info.cols,
                values.len()
            )));
        }
        p.value = Matrix::from_vec(info.rows, info.cols, values)?;
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(Error::Checkpoint("trailing data after last tensor".into()));
    }
    Ok(model)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, to_string(model)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    from_str(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{build_vocab, Document};

    fn toy(kind: ModelKind, seed: u64) -> Model {
        let docs = [vec!["a".to_string(), "b".into(), "c".into()]];
        let vocab = build_vocab(docs.iter().map(Vec::as_slice), 1).unwrap();
        let mut rng = SeededRng::new(seed);
        let embedding = EmbeddingTable::random(vocab.len(), 4, &mut rng);
        let spec = ModelSpec {
            layers: 2,
            encoder: EncoderConfig {
                embed_dim: 4,
                windows: vec![1, 2],
                filters_per_window: 3,
            },
            ..ModelSpec::new(kind)
        };
        let labels = LabelVocab::new(vec!["x".into(), "y".into(), "z".into()]).unwrap();
        Model::new(spec, vocab, labels, embedding, &mut rng).unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        for kind in [ModelKind::Logistic, ModelKind::Plain, ModelKind::Residual, ModelKind::Crbm] {
            let m = toy(kind, 4);
            let a = to_string(&m).unwrap();
            let back = from_str(&a).unwrap();
            assert_eq!(to_string(&back).unwrap(), a);
            assert_eq!(back.snapshot(), m.snapshot());
            let doc = Document {
                text: "a b q".into(),
                labels: vec!["y".into()],
            };
            let td = m.prepare(&doc).unwrap();
            assert_eq!(m.predict(&td).unwrap(), back.predict(&td).unwrap());
        }
    }

    #[test]
    fn corrupt_files_rejected() {
        let good = to_string(&toy(ModelKind::Logistic, 1)).unwrap();
        assert!(from_str("").is_err());
        assert!(from_str(&good.replace("\"format_version\":1", "\"format_version\":9")).is_err());
        let truncated: String = good.lines().take(2).map(|l| format!("{l}\n")).collect();
        assert!(from_str(&truncated).is_err());
        let mut extra = good.clone();
        extra.push_str("junk 1\n");
        assert!(from_str(&extra).is_err());
        let swapped = good.replacen("\"model_type\":\"logistic\"", "\"model_type\":\"residual\"", 1);
        assert!(matches!(from_str(&swapped), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn extreme_values_round_trip() {
        let mut m = toy(ModelKind::Logistic, 2);
        let vals = [f64::MIN_POSITIVE, -0.0, 1e300, -1.0 / 3.0, 5e-324];
        for (d, v) in m.params_mut()[1].value.as_mut_slice().iter_mut().zip(vals) {
            *d = v;
        }
        let s = to_string(&m).unwrap();
        let back = from_str(&s).unwrap();
        for (a, b) in back.params()[1].value.as_slice().iter().zip(vals) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
