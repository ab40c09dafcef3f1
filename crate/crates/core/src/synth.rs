//! Synthetic multi-label corpora with a correlated (Ising) label prior and
//! label-specific keyword emissions, plus the exact Bayes posterior.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::SeededRng;
use crate::text::Document;

/// Largest label count for which the prior is enumerated.
pub const MAX_ENUM_LABELS: usize = 16;

const GIBBS_BURN_IN: usize = 500;
const GIBBS_SWEEPS_PER_DOC: usize = 20;
const GIBBS_MAX_RETRIES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub labels: usize,
    pub vocab_size: usize,
    /// Symmetric `L×L`, zero diagonal.
    pub pair_weights: Vec<Vec<f64>>,
    pub unary: Vec<f64>,
    pub keywords_per_label: usize,
    /// Inclusive token-count range.
    pub doc_len: (usize, usize),
    pub noise_rate: f64,
    /// Permit documents with no labels.
    pub allow_controls: bool,
    pub seed: u64,
}

impl SynthConfig {
    /// Base rates of `unary` everywhere and a positive coupling of `pair_weight`
    /// between labels `2i` and `2i+1`.
    pub fn correlated(labels: usize, vocab_size: usize, noise_rate: f64, seed: u64) -> Self {
        Self {
            labels,
            vocab_size,
            pair_weights: correlated_pairs(labels, 3.0),
            unary: vec![-2.0; labels],
            keywords_per_label: 10,
            doc_len: (8, 24),
            noise_rate,
            allow_controls: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let l = self.labels;
        if l == 0 {
            return bad("label count must be >= 1".into());
        }
        if self.keywords_per_label == 0 {
            return bad("keywords_per_label must be >= 1".into());
        }
        if self.vocab_size < l * self.keywords_per_label {
            return bad(format!(
                "vocab_size {} is smaller than {} labels x {} keywords",
                self.vocab_size, l, self.keywords_per_label
            ));
        }
        if self.doc_len.0 == 0 || self.doc_len.0 > self.doc_len.1 {
            return bad(format!("invalid doc_len range {:?}", self.doc_len));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return bad(format!("noise_rate {} not in [0, 1]", self.noise_rate));
        }
        if self.unary.len() != l || self.unary.iter().any(|v| !v.is_finite()) {
            return bad(format!("unary must hold {l} finite values"));
        }
        if self.pair_weights.len() != l || self.pair_weights.iter().any(|r| r.len() != l) {
            return bad(format!("pair_weights must be {l}x{l}"));
        }
        for i in 0..l {
            if self.pair_weights[i][i] != 0.0 {
                return bad(format!("pair_weights diagonal entry {i} is non-zero"));
            }
            for j in 0..i {
                let w = self.pair_weights[i][j];
                if !w.is_finite() || w != self.pair_weights[j][i] {
                    return bad(format!("pair_weights not symmetric at ({i}, {j})"));
                }
            }
        }
        Ok(())
    }

    /// Unnormalized log prior `uᵀy + ½ yᵀWy`.
    pub fn log_prior_weight(&self, y: &[bool]) -> f64 {
        let mut s = 0.0;
        for i in (0..self.labels).filter(|&i| y[i]) {
            s += self.unary[i];
            for j in (0..i).filter(|&j| y[j]) {
                s += self.pair_weights[i][j];
            }
        }
        s
    }

    pub fn label_name(&self, l: usize) -> String {
        format!("label{:0w$}", l, w = digits(self.labels - 1))
    }

    pub fn token_name(&self, t: usize) -> String {
        format!("w{:0w$}", t, w = digits(self.vocab_size - 1))
    }

    /// Keyword token ids of label `l`; disjoint across labels.
    pub fn keywords(&self, l: usize) -> std::ops::Range<usize> {
        l * self.keywords_per_label..(l + 1) * self.keywords_per_label
    }

    /// Label owning token `t` as a keyword, if any.
    pub fn keyword_owner(&self, t: usize) -> Option<usize> {
        let l = t / self.keywords_per_label;
        (l < self.labels).then_some(l)
    }
}

fn digits(n: usize) -> usize {
    n.max(1).ilog10() as usize + 1
}

/// `L×L` weights coupling `(2i, 2i+1)` with `weight`.
pub fn correlated_pairs(labels: usize, weight: f64) -> Vec<Vec<f64>> {
    let mut w = vec![vec![0.0; labels]; labels];
    for a in (0..labels.saturating_sub(1)).step_by(2) {
        w[a][a + 1] = weight;
        w[a + 1][a] = weight;
    }
    w
}

/// Reads `i j weight` lines (symmetric entries set together; `#` comments).
pub fn parse_pairs(text: &str, labels: usize) -> Result<Vec<Vec<f64>>> {
    let mut w = vec![vec![0.0; labels]; labels];
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: &str| Error::Parse {
            line: n + 1,
            msg: msg.to_string(),
        };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(err("expected `i j weight`"));
        }
        let i: usize = f[0].parse().map_err(|_| err("bad label index"))?;
        let j: usize = f[1].parse().map_err(|_| err("bad label index"))?;
        let v: f64 = f[2].parse().map_err(|_| err("bad weight"))?;
        if i >= labels || j >= labels || i == j || !v.is_finite() {
            return Err(err("pair out of range"));
        }
        w[i][j] = v;
        w[j][i] = v;
    }
    Ok(w)
}

/// Label prior over all `2^L` label sets, indexed by bitmask.
#[derive(Debug, Clone)]
pub struct EnumeratedPrior {
    /// Log weights; `-inf` for excluded states.
    pub log_weight: Vec<f64>,
    pub log_z: f64,
}

impl EnumeratedPrior {
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        let l = cfg.labels;
        if l > MAX_ENUM_LABELS {
            return Err(Error::Capacity(format!(
                "{l} labels exceed the enumeration limit of {MAX_ENUM_LABELS}"
            )));
        }
        let mut log_weight = vec![0.0; 1 << l];
        for s in 1usize..1 << l {
            let b = s.trailing_zeros() as usize;
            let rest = s & (s - 1);
            let mut v = log_weight[rest] + cfg.unary[b];
            let mut r = rest;
            while r != 0 {
                let j = r.trailing_zeros() as usize;
                v += cfg.pair_weights[b][j];
                r &= r - 1;
            }
            log_weight[s] = v;
        }
        if !cfg.allow_controls {
            log_weight[0] = f64::NEG_INFINITY;
        }
        let log_z = log_sum_exp(&log_weight);
        Ok(Self { log_weight, log_z })
    }

    pub fn marginals(&self, labels: usize) -> Vec<f64> {
        let mut m = vec![0.0; labels];
        for (s, &lw) in self.log_weight.iter().enumerate() {
            let p = (lw - self.log_z).exp();
            for (l, ml) in m.iter_mut().enumerate() {
                if s >> l & 1 == 1 {
                    *ml += p;
                }
            }
        }
        m
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

enum PriorSampler {
    Exact { cdf: Vec<f64> },
    Gibbs { state: Vec<bool> },
}

impl PriorSampler {
    fn new(cfg: &SynthConfig, rng: &mut SeededRng) -> Result<Self> {
        if cfg.labels <= MAX_ENUM_LABELS {
            let prior = EnumeratedPrior::new(cfg)?;
            let mut acc = 0.0;
            let cdf = prior
                .log_weight
                .iter()
                .map(|&lw| {
                    acc += (lw - prior.log_z).exp();
                    acc
                })
                .collect();
            Ok(PriorSampler::Exact { cdf })
        } else {
            let mut state = vec![false; cfg.labels];
            for _ in 0..GIBBS_BURN_IN {
                gibbs_sweep(cfg, &mut state, rng);
            }
            Ok(PriorSampler::Gibbs { state })
        }
    }

    fn sample(&mut self, cfg: &SynthConfig, rng: &mut SeededRng) -> Result<Vec<bool>> {
        match self {
            PriorSampler::Exact { cdf } => {
                let u = rng.next_f64() * cdf[cdf.len() - 1];
                let s = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
                Ok((0..cfg.labels).map(|l| s >> l & 1 == 1).collect())
            }
            PriorSampler::Gibbs { state } => {
                for _ in 0..GIBBS_SWEEPS_PER_DOC {
                    gibbs_sweep(cfg, state, rng);
                }
                let mut tries = 0;
                while !cfg.allow_controls && !state.iter().any(|&b| b) {
                    gibbs_sweep(cfg, state, rng);
                    tries += 1;
                    if tries > GIBBS_MAX_RETRIES {
                        return Err(Error::InvalidArgument(
                            "label prior almost never produces a non-empty label set".into(),
                        ));
                    }
                }
                Ok(state.clone())
            }
        }
    }
}

fn gibbs_sweep(cfg: &SynthConfig, y: &mut [bool], rng: &mut SeededRng) {
    for i in 0..cfg.labels {
        let field = cfg.unary[i]
            + (0..cfg.labels)
                .filter(|&j| j != i && y[j])
                .map(|j| cfg.pair_weights[i][j])
                .sum::<f64>();
        y[i] = rng.bernoulli(crate::numeric::sigmoid(field));
    }
}

/// Generated documents with their hidden label sets.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub docs: Vec<Document>,
    pub label_sets: Vec<Vec<bool>>,
}

/// Draws `n_docs` documents; identical `(cfg, n_docs)` gives identical output.
pub fn generate_corpus(cfg: &SynthConfig, n_docs: usize) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = SeededRng::new(cfg.seed);
    let mut sampler = PriorSampler::new(cfg, &mut rng)?;
    let label_names: Vec<String> = (0..cfg.labels).map(|l| cfg.label_name(l)).collect();
    let token_names: Vec<String> = (0..cfg.vocab_size).map(|t| cfg.token_name(t)).collect();
    let (lo, hi) = cfg.doc_len;
    let mut docs = Vec::with_capacity(n_docs);
    let mut label_sets = Vec::with_capacity(n_docs);
    for _ in 0..n_docs {
        let y = sampler.sample(cfg, &mut rng)?;
        let active: Vec<usize> = (0..cfg.labels).filter(|&l| y[l]).collect();
        let len = lo + rng.below((hi - lo + 1) as u64) as usize;
        let mut text = String::new();
        for i in 0..len {
            let t = if active.is_empty() || rng.bernoulli(cfg.noise_rate) {
                rng.below(cfg.vocab_size as u64) as usize
            } else {
                let l = active[rng.below(active.len() as u64) as usize];
                cfg.keywords(l).start + rng.below(cfg.keywords_per_label as u64) as usize
            };
            if i > 0 {
                text.push(' ');
            }
            text.push_str(&token_names[t]);
        }
        docs.push(Document {
            text,
            labels: active.iter().map(|&l| label_names[l].clone()).collect(),
        });
        label_sets.push(y);
    }
    Ok(SynthCorpus { docs, label_sets })
}

/// The generating model, able to compute exact label posteriors.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub cfg: SynthConfig,
    pub prior: EnumeratedPrior,
}

impl GroundTruth {
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            prior: EnumeratedPrior::new(cfg)?,
        })
    }

    fn token_id(&self, tok: &str) -> Result<usize> {
        tok.strip_prefix('w')
            .and_then(|d| d.parse::<usize>().ok())
            .filter(|&t| t < self.cfg.vocab_size && self.cfg.token_name(t) == tok)
            .ok_or_else(|| Error::InvalidArgument(format!("token `{tok}` is not in the synthetic vocabulary")))
    }

    /// `P(y_l = 1 | tokens)` for every label, by enumerating all label sets.
    pub fn posterior_marginals(&self, tokens: &[String]) -> Result<Vec<f64>> {
        let cfg = &self.cfg;
        let l = cfg.labels;
        let k = cfg.keywords_per_label as f64;
        let v = cfg.vocab_size as f64;
        let mut counts = vec![0usize; l];
        for tok in tokens {
            if let Some(owner) = cfg.keyword_owner(self.token_id(tok)?) {
                counts[owner] += 1;
            }
        }
        let n = tokens.len();
        let noise_lp = (cfg.noise_rate / v).ln();
        let uniform_lp = (1.0 / v).ln();
        // Per active-set size m: log-probability of a keyword of an active label.
        let kw_lp: Vec<f64> = (0..=l)
            .map(|m| {
                if m == 0 {
                    0.0
                } else {
                    (cfg.noise_rate / v + (1.0 - cfg.noise_rate) / (m as f64 * k)).ln()
                }
            })
            .collect();
        let mut kw_count = vec![0usize; 1 << l];
        let mut log_post = vec![f64::NEG_INFINITY; 1 << l];
        for s in 0usize..1 << l {
            if s > 0 {
                let b = s.trailing_zeros() as usize;
                kw_count[s] = kw_count[s & (s - 1)] + counts[b];
            }
            let lp = self.prior.log_weight[s];
            if lp == f64::NEG_INFINITY {
                continue;
            }
            let ll = if s == 0 {
                n as f64 * uniform_lp
            } else {
                let c = kw_count[s];
                scaled(c, kw_lp[s.count_ones() as usize]) + scaled(n - c, noise_lp)
            };
            log_post[s] = lp + ll;
        }
        let z = log_sum_exp(&log_post);
        if z == f64::NEG_INFINITY {
            return Err(Error::InvalidArgument("document has zero probability under the model".into()));
        }
        let mut m = vec![0.0; l];
        for (s, &lp) in log_post.iter().enumerate() {
            if lp == f64::NEG_INFINITY {
                continue;
            }
            let p = (lp - z).exp();
            let mut r = s;
            while r != 0 {
                m[r.trailing_zeros() as usize] += p;
                r &= r - 1;
            }
        }
        Ok(m)
    }

    pub fn to_json(&self, oracle: Option<&[Vec<f64>]>) -> Result<String> {
        let truth = TruthFile {
            config: self.cfg.clone(),
            labels: (0..self.cfg.labels).map(|l| self.cfg.label_name(l)).collect(),
            keywords: (0..self.cfg.labels)
                .map(|l| self.cfg.keywords(l).map(|t| self.cfg.token_name(t)).collect())
                .collect(),
            prior_marginals: self.prior.marginals(self.cfg.labels),
            oracle_marginals: oracle.map(<[Vec<f64>]>::to_vec),
        };
        Ok(serde_json::to_string(&truth)?)
    }
}

/// `c · lp`, with `0 · (−∞) = 0`.
fn scaled(c: usize, lp: f64) -> f64 {
    if c == 0 {
        0.0
    } else {
        c as f64 * lp
    }
}

/// Sidecar describing the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub config: SynthConfig,
    pub labels: Vec<String>,
    pub keywords: Vec<Vec<String>>,
    pub prior_marginals: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub oracle_marginals: Option<Vec<Vec<f64>>>,
}

/// Exact posterior marginals for one document under `cfg`.
pub fn bayes_optimal_marginals(tokens: &[String], cfg: &SynthConfig) -> Result<Vec<f64>> {
    GroundTruth::new(cfg)?.posterior_marginals(tokens)
}
