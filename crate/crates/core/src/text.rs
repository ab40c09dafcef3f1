//! Raw note text to padded id sequences and embedding matrices.
//!
//! File formats handled here:
//!
//! - corpus: JSON Lines, one `{"text": "...", "labels": ["...", ...]}` per line;
//! - label vocabulary: one label per line, line number is the label id;
//! - embeddings: optional `<count> <dim>` header, then `token v1 … v_dim`.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, ParamTensor, SeededRng};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Default embedding width.
pub const EMBED_DIM: usize = 300;
/// Default maximum document length in tokens.
pub const DEFAULT_MAX_LEN: usize = 600;
/// Range for vectors of words without a pretrained entry.
pub const OOV_INIT_RANGE: f64 = 0.25;

/// Lowercases and splits `text` into tokens.
///
/// Punctuation becomes standalone tokens, except `/`, `-` and `'` between two
/// alphanumerics, so jargon such as `s/p` or `d/o` survives intact.
pub fn tokenize(text: &str) -> Result<Vec<String>> {
    let lower = text.to_lowercase();
    let mut tokens = Vec::new();
    for chunk in lower.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let mut current = String::new();
        for (i, &ch) in chars.iter().enumerate() {
            if ch.is_alphanumeric() {
                current.push(ch);
                continue;
            }
            let joiner = matches!(ch, '/' | '-' | '\'')
                && i > 0
                && chars[i - 1].is_alphanumeric()
                && chars.get(i + 1).is_some_and(|c| c.is_alphanumeric());
            if joiner {
                current.push(ch);
            } else {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(ch.to_string());
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    if tokens.is_empty() {
        return Err(Error::EmptyDocument);
    }
    Ok(tokens)
}

/// Token ↔ id map with reserved pad (0) and unknown (1) entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Rebuilds a vocabulary from its id-ordered token list (as stored in a
    /// checkpoint). The first two entries must be the pad and unknown tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD_ID] != PAD_TOKEN || tokens[UNK_ID] != UNK_TOKEN {
            return Err(Error::InvalidArgument(
                "vocabulary must start with <pad>, <unk>".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token `{t}`")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Builds a vocabulary from tokenized training documents.
///
/// Tokens seen at least `min_count` times get ids ordered by
/// (frequency desc, token asc).
pub fn build_vocab<'a, I>(docs: I, min_count: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a [String]>,
{
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut n_docs = 0;
    for doc in docs {
        n_docs += 1;
        for t in doc {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    if n_docs == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_count.max(1) && t != PAD_TOKEN && t != UNK_TOKEN)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    tokens.extend(kept.into_iter().map(|(t, _)| t.to_string()));
    Vocabulary::from_tokens(tokens)
}

/// Trainable `|V| × k` word vectors. The pad row is pinned at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub table: ParamTensor,
}

impl EmbeddingTable {
    pub fn new(table: Matrix) -> Self {
        let mut table = ParamTensor::new("embedding", table);
        table.value.row_mut(PAD_ID).fill(0.0);
        Self { table }
    }

    /// Every non-pad row drawn from `U[−0.25, 0.25)` in id order.
    pub fn random(vocab_size: usize, dim: usize, rng: &mut SeededRng) -> Self {
        let mut m = Matrix::zeros(vocab_size, dim);
        for r in 1..vocab_size {
            for v in m.row_mut(r) {
                *v = rng.uniform(-OOV_INIT_RANGE, OOV_INIT_RANGE);
            }
        }
        Self::new(m)
    }

    pub fn dim(&self) -> usize {
        self.table.value.cols()
    }

    pub fn len(&self) -> usize {
        self.table.value.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn row(&self, id: usize) -> &[f64] {
        self.table.value.row(id)
    }
}

/// Parses a text embedding file into a token → vector map, keeping only
/// tokens present in `vocab`.
fn read_embedding_file(path: &Path, vocab: &Vocabulary, dim: usize) -> Result<HashMap<usize, Vec<f64>>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut found = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if i == 0
            && fields.len() == 2
            && dim != 1
            && fields.iter().all(|f| f.parse::<usize>().is_ok())
        {
            let header_dim: usize = fields[1].parse().unwrap_or(0);
            if header_dim != dim {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("header dimension {header_dim} != expected {dim}"),
                });
            }
            continue;
        }
        if fields.len() != dim + 1 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected token and {dim} values, found {} values", fields.len() - 1),
            });
        }
        let values = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Parse {
                line: lineno,
                msg: e.to_string(),
            })?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line: lineno,
                msg: "non-finite value".into(),
            });
        }
        if let Some(id) = vocab.id(fields[0]) {
            if id != PAD_ID {
                found.entry(id).or_insert(values);
            }
        }
    }
    Ok(found)
}

/// Initializes the embedding table: file vectors where available, otherwise
/// `U[−0.25, 0.25)`. Random rows are drawn in id order.
pub fn load_embeddings(
    path: Option<&Path>,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut SeededRng,
) -> Result<EmbeddingTable> {
    let found = match path {
        Some(p) => read_embedding_file(p, vocab, dim)?,
        None => HashMap::new(),
    };
    let mut m = Matrix::zeros(vocab.len(), dim);
    for id in 1..vocab.len() {
        match found.get(&id) {
            Some(v) => m.row_mut(id).copy_from_slice(v),
            None => {
                for x in m.row_mut(id) {
                    *x = rng.uniform(-OOV_INIT_RANGE, OOV_INIT_RANGE);
                }
            }
        }
    }
    Ok(EmbeddingTable::new(m))
}

/// A document mapped onto vocabulary ids and padded to `max_len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedDoc {
    pub tokens: Vec<String>,
    pub ids: Vec<usize>,
    pub valid_len: usize,
    pub labels: Vec<usize>,
}

impl TokenizedDoc {
    pub fn valid_ids(&self) -> &[usize] {
        &self.ids[..self.valid_len]
    }
}

pub fn encode_doc(tokens: &[String], vocab: &Vocabulary, max_len: usize) -> TokenizedDoc {
    let max_len = max_len.max(1);
    let valid_len = tokens.len().min(max_len);
    let mut ids: Vec<usize> = tokens[..valid_len].iter().map(|t| vocab.id_or_unk(t)).collect();
    ids.resize(max_len, PAD_ID);
    TokenizedDoc {
        tokens: tokens.to_vec(),
        ids,
        valid_len,
        labels: Vec::new(),
    }
}

/// The `k × max_len` matrix whose column `i` is the embedding of `ids[i]`.
pub fn embed(doc: &TokenizedDoc, table: &EmbeddingTable) -> Result<Matrix> {
    let k = table.dim();
    let mut x = Matrix::zeros(k, doc.ids.len());
    for (col, &id) in doc.ids.iter().enumerate() {
        if id >= table.len() {
            return Err(Error::Internal(format!(
                "token id {id} outside embedding table of {} rows",
                table.len()
            )));
        }
        if id == PAD_ID {
            continue;
        }
        for (r, &v) in table.row(id).iter().enumerate() {
            x.set(r, col, v);
        }
    }
    Ok(x)
}

/// One corpus record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub text: String,
    #[serde(default)]
    pub labels: Vec<String>,
}

pub fn read_corpus(path: &Path) -> Result<Vec<Document>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_corpus(path: &Path, docs: &[Document]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in docs {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Label strings indexed by label id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVocab {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelVocab {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("label vocabulary is empty".into()));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate label `{l}`")));
            }
        }
        Ok(Self { labels, index })
    }

    /// Sorted set of every label mentioned in `docs`.
    pub fn from_corpus(docs: &[Document]) -> Result<Self> {
        let mut labels: Vec<String> = docs.iter().flat_map(|d| d.labels.iter().cloned()).collect();
        labels.sort();
        labels.dedup();
        Self::new(labels)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(text.lines().map(str::to_string).filter(|l| !l.is_empty()).collect())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for l in &self.labels {
            out.push_str(l);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Label ids of `doc`, sorted and deduplicated; unknown labels are an error.
    pub fn ids_of(&self, doc: &Document) -> Result<Vec<usize>> {
        let mut ids = doc
            .labels
            .iter()
            .map(|l| {
                self.id(l)
                    .ok_or_else(|| Error::LabelMismatch(format!("label `{l}` not in label vocabulary")))
            })
            .collect::<Result<Vec<_>>>()?;
        ids.sort_unstable();
        ids.dedup();
        Ok(ids)
    }

    /// Dense 0/1 target vector for a label-id set.
    pub fn indicator(&self, ids: &[usize]) -> Vec<f64> {
        let mut y = vec![0.0; self.len()];
        for &i in ids {
            y[i] = 1.0;
        }
        y
    }
}
