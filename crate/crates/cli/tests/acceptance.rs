//! Acceptance suite: one PASS/FAIL line per criterion.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use convres::gradcheck::{finite_diff_check, Parameterized, DEFAULT_DELTA};
use convres::heads::{
    crbm_exact, crbm_exact_gradient, crbm_exact_log_likelihood, crbm_exact_marginals, crbm_meanfield_predict,
    residual_forward, CrbmHead, Shortcuts, StackedHead,
};
use convres::metrics::{self, macro_auc, ndcg_at_k, precision_at_k, rank_k, RankedPrediction};
use convres::synth::{generate_corpus, GroundTruth, SynthConfig};
use convres::text::{build_vocab, read_corpus, tokenize, Document};
use convres::training::{self, TrainConfig, TrainInputs};
use convres::{
    EmbeddingTable, EncoderConfig, LabelVocab, Model, ModelGrads, ModelKind, ModelSpec, SeededRng,
};

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn run_cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut full = vec!["convres"];
    full.extend_from_slice(args);
    let code = convres_cli::run(full, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

// ---------------------------------------------------------------- 1

fn toy_model(kind: ModelKind, seed: u64) -> Model {
    let words: Vec<String> = "a b c d e f g h i j".split(' ').map(String::from).collect();
    let vocab = build_vocab([words.as_slice()], 1).unwrap();
    let labels = LabelVocab::new((0..4).map(|i| format!("l{i}")).collect()).unwrap();
    let spec = ModelSpec {
        layers: 2,
        hidden: vec![3],
        max_len: 8,
        encoder: EncoderConfig {
            embed_dim: 4,
            windows: vec![2, 3],
            filters_per_window: 3,
        },
        ..ModelSpec::new(kind)
    };
    let mut rng = SeededRng::new(seed);
    let emb = EmbeddingTable::random(vocab.len(), 4, &mut rng);
    let mut model = Model::new(spec, vocab, labels, emb, &mut rng).unwrap();
    for p in model.params_mut().into_iter().skip(1) {
        for v in p.value.as_mut_slice() {
            *v = rng.uniform(-0.5, 0.5);
        }
    }
    model
}

fn criterion_1() -> Verdict {
    let docs = [
        ("a b c d e f g h i j", vec!["l0", "l2"]),
        ("c a b", vec!["l3"]),
        ("j", vec!["l1", "l2", "l3"]),
    ];
    let mut worst: f64 = 0.0;
    for kind in [ModelKind::Logistic, ModelKind::Plain, ModelKind::Residual] {
        let mut model = toy_model(kind, 17);
        ensure(model.encoder.output_dim() == 6, || "toy encoder width is not 6".into())?;
        let prepared: Vec<_> = docs
            .iter()
            .map(|(t, l)| {
                let td = model
                    .prepare(&Document {
                        text: t.to_string(),
                        labels: l.iter().map(|s| s.to_string()).collect(),
                    })
                    .unwrap();
                let y = model.labels.indicator(&td.labels);
                (td, y)
            })
            .collect();
        let mut grads = ModelGrads::new(&model);
        for (td, y) in &prepared {
            model.loss_and_grad(td, y, None, &mut grads).map_err(|e| e.to_string())?;
        }
        model.store_grads(&grads, 1.0);
        let report = finite_diff_check(
            &mut model,
            |m| prepared.iter().map(|(td, y)| m.loss(td, y).unwrap()).sum(),
            DEFAULT_DELTA,
        );
        ensure(report.max_rel_error < 1e-4, || format!("{kind}: {report:?}"))?;
        worst = worst.max(report.max_rel_error);
    }
    Ok(format!("max rel err {worst:.2e} over logistic/plain/residual"))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Verdict {
    let mut rng = SeededRng::new(2);
    let mut counts = Vec::new();
    for n in [1, 2, 4, 8] {
        for (l, vw, h) in [(16, 300, 16), (5, 7, 3)] {
            let hidden = vec![h; n];
            let plain = StackedHead::new(Shortcuts::None, l, vw, &hidden, &mut rng).unwrap();
            let res = StackedHead::new(Shortcuts::Identity, l, vw, &hidden, &mut rng).unwrap();
            let cp: usize = plain.params().iter().map(|p| p.len()).sum();
            let cr: usize = res.params().iter().map(|p| p.len()).sum();
            ensure(cp == cr, || format!("n={n}: plain {cp} != residual {cr}"))?;
            if l == 16 {
                counts.push(format!("n={n}:{cr}"));
            }
        }
    }
    Ok(format!("equal counts ({})", counts.join(", ")))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Verdict {
    let mut rng = SeededRng::new(3);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let l = 1 + rng.below(5) as usize;
        let vw = 1 + rng.below(6) as usize;
        let n = 1 + rng.below(4) as usize;
        let hidden: Vec<usize> = (0..n).map(|_| 1 + rng.below(4) as usize).collect();
        let mut head = StackedHead::new(Shortcuts::Identity, l, vw, &hidden, &mut rng).unwrap();
        for p in head.params_mut() {
            for v in p.value.as_mut_slice() {
                *v = rng.uniform(-1.0, 1.0);
            }
        }
        let x: Vec<f64> = (0..vw).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let trace = residual_forward(&x, &head);

        // Step-by-step transcription, every sum recomputed from scratch.
        let w0 = |r: usize, c: usize| head.w0.value.get(r, c);
        let mut z_prev: Vec<f64> = (0..l)
            .map(|r| (0..vw).map(|c| w0(r, c) * x[c]).sum::<f64>() + head.b[0].value.get(r, 0))
            .collect();
        let mut sq: Vec<Vec<f64>> = Vec::new();
        for i in 0..n {
            let q: Vec<f64> = (0..hidden[i])
                .map(|k| {
                    (0..l).map(|r| sigmoid(z_prev[r]) * head.g[i].value.get(r, k)).sum::<f64>()
                        + head.c[i].value.get(k, 0)
                })
                .collect();
            sq.push(q.iter().map(|&v| sigmoid(v)).collect());
            let z: Vec<f64> = (0..l)
                .map(|r| {
                    let shortcut: f64 = (0..vw).map(|c| w0(r, c) * x[c]).sum();
                    let acc: f64 = (0..=i)
                        .map(|t| (0..hidden[t]).map(|k| head.w[t].value.get(r, k) * sq[t][k]).sum::<f64>())
                        .sum();
                    shortcut + head.b[i + 1].value.get(r, 0) + acc
                })
                .collect();
            for (a, b) in z.iter().zip(&trace.z[i + 1]) {
                worst = worst.max((a - b).abs());
            }
            z_prev = z;
        }
        for (zi, pi) in z_prev.iter().zip(trace.marginals()) {
            worst = worst.max((sigmoid(*zi) - pi).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("20 instances, max deviation {worst:.1e}"))
}

// ---------------------------------------------------------------- 4

fn random_crbm(rng: &mut SeededRng, l: usize, j: usize, vw: usize) -> CrbmHead {
    let mut head = CrbmHead::new(l, vw, j, rng).unwrap();
    for p in head.params_mut() {
        for v in p.value.as_mut_slice() {
            *v = rng.uniform(-0.5, 0.5);
        }
    }
    head
}

#[allow(clippy::needless_range_loop)]
/// `P(y_l = 1 | x)` by summing `exp(−E(y, h))` over every `(y, h)` pair.
fn joint_enumeration(x: &[f64], head: &CrbmHead) -> Vec<f64> {
    let (l, j) = (head.labels(), head.hidden());
    let wx = head.w.value.matvec(x);
    let mut z = 0.0;
    let mut m = vec![0.0; l];
    for ys in 0..1usize << l {
        let y: Vec<f64> = (0..l).map(|i| (ys >> i & 1) as f64).collect();
        for hs in 0..1usize << j {
            let h: Vec<f64> = (0..j).map(|k| (hs >> k & 1) as f64).collect();
            let mut neg_e = 0.0;
            for i in 0..l {
                neg_e += y[i] * (wx[i] + head.b.value.get(i, 0));
                for k in 0..j {
                    neg_e += y[i] * head.g.value.get(i, k) * h[k];
                }
            }
            for k in 0..j {
                neg_e += head.c.value.get(k, 0) * h[k];
            }
            let w = neg_e.exp();
            z += w;
            for i in 0..l {
                m[i] += y[i] * w;
            }
        }
    }
    m.iter().map(|v| v / z).collect()
}

fn criterion_4() -> Verdict {
    let started = Instant::now();
    let (l, j, vw) = (6, 3, 5);
    let mut rng = SeededRng::new(4);
    let (mut marg_err, mut grad_err, mut mf_total) = (0f64, 0f64, 0f64);
    for _ in 0..100 {
        let mut head = random_crbm(&mut rng, l, j, vw);
        let x: Vec<f64> = (0..vw).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let y: Vec<f64> = (0..l).map(|_| f64::from(u8::from(rng.bernoulli(0.4)))).collect();

        let exact = crbm_exact_marginals(&x, &head).map_err(|e| e.to_string())?.0;
        let full = crbm_exact(&x, &head).map_err(|e| e.to_string())?.marginals;
        for ((a, b), c) in exact.iter().zip(&full).zip(joint_enumeration(&x, &head)) {
            marg_err = marg_err.max((a - c).abs()).max((b - c).abs());
        }

        let grad = crbm_exact_gradient(&x, &y, &head).map_err(|e| e.to_string())?;
        for (t, g) in grad.as_vec().into_iter().enumerate() {
            for i in 0..g.len() {
                let orig = head.params()[t].value.as_slice()[i];
                let mut at = |v: f64| {
                    head.params_mut()[t].value.as_mut_slice()[i] = v;
                    crbm_exact_log_likelihood(&x, &y, &head).unwrap()
                };
                let num = (at(orig + DEFAULT_DELTA) - at(orig - DEFAULT_DELTA)) / (2.0 * DEFAULT_DELTA);
                at(orig);
                let a = g.as_slice()[i];
                grad_err = grad_err.max((a - num).abs() / 1f64.max(a.abs()).max(num.abs()));
            }
        }

        let mf = crbm_meanfield_predict(&x, &head, 20);
        mf_total += mf.iter().zip(&exact).map(|(a, b)| (a - b).abs()).sum::<f64>() / l as f64;
    }
    let mf_mae = mf_total / 100.0;
    let secs = started.elapsed().as_secs_f64();
    ensure(marg_err <= 1e-10, || format!("marginals deviate by {marg_err:e}"))?;
    ensure(grad_err < 1e-4, || format!("gradient rel err {grad_err:e}"))?;
    ensure(mf_mae <= 0.05, || format!("mean-field MAE {mf_mae:.4}"))?;
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "marginal err {marg_err:.1e}, grad rel err {grad_err:.1e}, mean-field MAE {mf_mae:.4}, {secs:.1}s"
    ))
}

// ---------------------------------------------------------------- 5

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

fn oracle_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    // Stable sort on descending score keeps ascending index among ties.
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    idx
}

fn oracle_p_at_k(scores: &[f64], truth: &[bool], k: usize) -> f64 {
    oracle_order(scores).iter().take(k).filter(|&&i| truth[i]).count() as f64 / k as f64
}

fn oracle_ndcg(scores: &[f64], truth: &[bool], k: usize) -> f64 {
    let dcg: f64 = oracle_order(scores)
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, &i)| truth[i])
        .map(|(r, _)| 1.0 / (r as f64 + 2.0).log2())
        .sum();
    let pos = truth.iter().filter(|&&t| t).count();
    let ideal: f64 = (0..pos.min(k)).map(|r| 1.0 / (r as f64 + 2.0).log2()).sum();
    if ideal == 0.0 {
        0.0
    } else {
        dcg / ideal
    }
}

fn oracle_auc(scores: &[f64], truth: &[bool]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for (i, &ti) in truth.iter().enumerate() {
        for (j, &tj) in truth.iter().enumerate() {
            if ti && !tj {
                pairs += 1;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

fn criterion_5() -> Verdict {
    let rp = |s: &[f64], t: &[u8]| RankedPrediction::new(s.to_vec(), t.iter().map(|&v| v == 1).collect()).unwrap();
    let a = rp(&[0.9, 0.1, 0.8, 0.2], &[1, 0, 1, 0]);
    ensure(rank_k(&[0.1, 0.9, 0.5], 2) == vec![1, 2], || "rank_k order".into())?;
    ensure(rank_k(&[0.3, 0.3, 0.3], 2) == vec![0, 1], || "rank_k ties".into())?;
    ensure(precision_at_k(&a, 2) == 1.0, || "P@2 hand case".into())?;
    ensure(precision_at_k(&a, 4) == 0.5, || "P@4 hand case".into())?;
    ensure(precision_at_k(&rp(&[0.4, 0.6], &[0, 0]), 1) == 0.0, || "P@k with no positives".into())?;
    ensure(ndcg_at_k(&rp(&[0.9, 0.1, 0.2], &[1, 0, 0]), 5) == 1.0, || "N@5 ideal".into())?;
    let second = ndcg_at_k(&rp(&[0.5, 0.9, 0.1], &[1, 0, 0]), 5);
    ensure(close(second, 1.0 / 3f64.log2()), || format!("N@5 second place {second}"))?;
    ensure(ndcg_at_k(&rp(&[0.9, 0.8, 0.1], &[1, 1, 0]), 2) == 1.0, || "N@2 ideal pair".into())?;
    let one_label: Vec<RankedPrediction> = [(0.9, 1), (0.8, 0), (0.3, 1), (0.1, 0)]
        .iter()
        .map(|&(s, t)| rp(&[s], &[t]))
        .collect();
    ensure(macro_auc(&one_label).unwrap() == 0.75, || "AUC hand case".into())?;

    let mut rng = SeededRng::new(5);
    for case in 0..1000 {
        let l = 1 + rng.below(6) as usize;
        let n_docs = 1 + rng.below(12) as usize;
        let preds: Vec<RankedPrediction> = (0..n_docs)
            .map(|_| {
                // Coarse grid so ties are common.
                let s: Vec<f64> = (0..l).map(|_| rng.below(6) as f64 / 5.0).collect();
                let t: Vec<bool> = (0..l).map(|_| rng.bernoulli(0.4)).collect();
                RankedPrediction::new(s, t).unwrap()
            })
            .collect();
        for pr in &preds {
            for k in 1..=7 {
                let got = rank_k(&pr.scores, k);
                let want: Vec<usize> = oracle_order(&pr.scores).into_iter().take(k).collect();
                ensure(got == want, || format!("case {case}: rank_k {got:?} vs {want:?}"))?;
                let (p, po) = (precision_at_k(pr, k), oracle_p_at_k(&pr.scores, &pr.truth, k));
                ensure(close(p, po), || format!("case {case}: P@{k} {p} vs {po}"))?;
                let (nd, no) = (ndcg_at_k(pr, k), oracle_ndcg(&pr.scores, &pr.truth, k));
                ensure(close(nd, no), || format!("case {case}: N@{k} {nd} vs {no}"))?;
            }
        }
        let oracle: Vec<Option<f64>> = (0..l)
            .map(|lab| {
                let s: Vec<f64> = preds.iter().map(|p| p.scores[lab]).collect();
                let t: Vec<bool> = preds.iter().map(|p| p.truth[lab]).collect();
                oracle_auc(&s, &t)
            })
            .collect();
        let per = metrics::per_label_auc(&preds);
        for (a, b) in per.iter().zip(&oracle) {
            let same = match (a, b) {
                (Some(a), Some(b)) => close(*a, *b),
                (None, None) => true,
                _ => false,
            };
            ensure(same, || format!("case {case}: per-label AUC {per:?} vs {oracle:?}"))?;
        }
        let valid: Vec<f64> = oracle.iter().flatten().copied().collect();
        match macro_auc(&preds) {
            Ok(m) => ensure(close(m, valid.iter().sum::<f64>() / valid.len() as f64), || {
                format!("case {case}: macro AUC {m}")
            })?,
            Err(_) => ensure(valid.is_empty(), || format!("case {case}: spurious macro AUC error"))?,
        }
        let rep = metrics::report(&preds);
        let labelled: Vec<&RankedPrediction> = preds.iter().filter(|p| p.positives() > 0).collect();
        if !labelled.is_empty() {
            let want = labelled.iter().map(|p| oracle_p_at_k(&p.scores, &p.truth, 3)).sum::<f64>()
                / labelled.len() as f64;
            ensure(close(rep.p_at_3, want), || format!("case {case}: report P@3"))?;
        }
    }
    Ok("hand cases exact; 1000 random instances agree with brute force".into())
}

// ---------------------------------------------------------------- 6 and 7

const SYNTH_SEED: u64 = 20_170_501;
const RUN_BUDGET: Duration = Duration::from_secs(15 * 60);
const SYNTH_LR: f64 = 1e-3;

struct SynthRun {
    kind: ModelKind,
    layers: usize,
    seed: u64,
    auc: f64,
    secs: f64,
}

struct SynthResults {
    runs: Vec<SynthRun>,
    oracle_auc: f64,
}

fn synth_experiment() -> Result<SynthResults, String> {
    let cfg = SynthConfig::correlated(16, 500, 0.3, SYNTH_SEED);
    let corpus = generate_corpus(&cfg, 5500).map_err(|e| e.to_string())?;
    let (train, val) = corpus.docs.split_at(5000);
    let labels = LabelVocab::new((0..16).map(|l| cfg.label_name(l)).collect()).unwrap();

    let truth = GroundTruth::new(&cfg).map_err(|e| e.to_string())?;
    let oracle_preds = val
        .iter()
        .map(|d| {
            let p = truth.posterior_marginals(&tokenize(&d.text).unwrap()).unwrap();
            RankedPrediction::from_label_ids(p, &labels.ids_of(d).unwrap()).unwrap()
        })
        .collect::<Vec<_>>();
    let oracle_auc = macro_auc(&oracle_preds).map_err(|e| e.to_string())?;

    let inputs = TrainInputs {
        embeddings: None,
        labels: Some(labels),
    };
    let mut runs = Vec::new();
    for seed in [1, 2, 3] {
        for (kind, layers) in [(ModelKind::Residual, 4), (ModelKind::Logistic, 1), (ModelKind::Plain, 8)] {
            let started = Instant::now();
            let spec = ModelSpec::new(kind).with_layers(layers);
            let tc = TrainConfig {
                lr: SYNTH_LR,
                seed,
                ..TrainConfig::default()
            };
            let out = training::train_with_validation(train, val, &spec, &tc, &inputs).map_err(|e| e.to_string())?;
            let report = training::evaluate(&out.model, val).map_err(|e| e.to_string())?;
            let run = SynthRun {
                kind,
                layers,
                seed,
                auc: report.macro_auc.ok_or("no evaluable label")?,
                secs: started.elapsed().as_secs_f64(),
            };
            eprintln!(
                "  synthetic: {} n={} seed={} macro AUC {:.4} ({} epochs, {:.0}s)",
                run.kind,
                run.layers,
                run.seed,
                run.auc,
                out.history.len(),
                run.secs
            );
            runs.push(run);
        }
    }
    Ok(SynthResults { runs, oracle_auc })
}

fn criterion_6(res: &SynthResults) -> Verdict {
    let auc = |kind: ModelKind, seed: u64| {
        res.runs.iter().find(|r| r.kind == kind && r.seed == seed).map(|r| r.auc).unwrap()
    };
    let mut lines = Vec::new();
    for seed in [1, 2, 3] {
        let (r, l, p) = (
            auc(ModelKind::Residual, seed),
            auc(ModelKind::Logistic, seed),
            auc(ModelKind::Plain, seed),
        );
        ensure(r >= l - 0.005, || format!("seed {seed}: residual {r:.4} < logistic {l:.4} - 0.005"))?;
        ensure(r >= p + 0.05, || format!("seed {seed}: residual {r:.4} < plain {p:.4} + 0.05"))?;
        ensure(r >= 0.90, || format!("seed {seed}: residual {r:.4} < 0.90"))?;
        lines.push(format!("s{seed} res {r:.4} / cnn {l:.4} / plain {p:.4}"));
    }
    let slowest = res.runs.iter().map(|r| r.secs).fold(0.0, f64::max);
    ensure(slowest < RUN_BUDGET.as_secs_f64(), || format!("slowest run {slowest:.0}s"))?;
    Ok(format!("{}; slowest run {slowest:.0}s", lines.join("; ")))
}

fn criterion_7(res: &SynthResults) -> Verdict {
    let best = res.runs.iter().map(|r| r.auc).fold(0.0, f64::max);
    for r in &res.runs {
        ensure(r.auc <= res.oracle_auc + 0.02, || {
            format!("{} seed {} AUC {:.4} > oracle {:.4} + 0.02", r.kind, r.seed, r.auc, res.oracle_auc)
        })?;
    }
    Ok(format!("oracle AUC {:.4}, best model {best:.4}", res.oracle_auc))
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = dir.path().join("c.jsonl");
    let (code, _, err) = run_cli(&["gensynth", "--labels", "6", "--vocab", "80", "--docs", "200", "--seed", "8", "--out", p(&corpus)]);
    ensure(code == 0, || format!("gensynth failed: {err}"))?;
    let mut checked = Vec::new();
    for model in ["residual", "crbm"] {
        let mut outputs = Vec::new();
        for run in 0..2 {
            let ckpt = dir.path().join(format!("{model}{run}.ckpt"));
            let hist = dir.path().join(format!("{model}{run}.hist"));
            let (code, _, err) = run_cli(&[
                "train", "--corpus", p(&corpus), "--model", model, "--layers", "2", "--epochs", "3",
                "--filters", "20", "--embed-dim", "50", "--seed", "11", "--lr", "1e-3",
                "--out", p(&ckpt), "--history", p(&hist),
            ]);
            ensure(code == 0, || format!("train {model} failed: {err}"))?;
            outputs.push((fs::read(&ckpt).unwrap(), fs::read(&hist).unwrap()));
        }
        ensure(outputs[0].0 == outputs[1].0, || format!("{model}: checkpoints differ"))?;
        ensure(outputs[0].1 == outputs[1].1, || format!("{model}: histories differ"))?;
        ensure(!outputs[0].1.is_empty(), || format!("{model}: empty history"))?;
        checked.push(format!("{model} ({} bytes)", outputs[0].0.len()));
    }
    Ok(format!("byte-identical checkpoints and histories: {}", checked.join(", ")))
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus_path = dir.path().join("c.jsonl");
    let (code, _, err) = run_cli(&[
        "gensynth", "--labels", "4", "--vocab", "60", "--docs", "80", "--seed", "9", "--allow-controls",
        "--unary", "-1.5", "--out", p(&corpus_path),
    ]);
    ensure(code == 0, || format!("gensynth failed: {err}"))?;
    let mut docs = read_corpus(&corpus_path).unwrap();
    let odd = [
        Document { text: "w01".into(), labels: vec!["label0".into()] },
        Document { text: "w02 w03".into(), labels: vec![] },
        Document { text: "zzz".into(), labels: vec!["label3".into()] },
        Document { text: "w05 , w06".into(), labels: vec!["label1".into(), "label2".into()] },
    ];
    docs.extend(odd.iter().cloned());
    let controls = docs.iter().filter(|d| d.labels.is_empty()).count();
    ensure(controls > 1, || "corpus has no control documents".into())?;
    let body: String = docs.iter().map(|d| serde_json::to_string(d).unwrap() + "\n").collect();
    fs::write(&corpus_path, body).unwrap();

    let ckpt = dir.path().join("m.ckpt");
    let hist = dir.path().join("h.jsonl");
    for model in ["residual", "logistic", "plain", "crbm"] {
        let (code, _, err) = run_cli(&[
            "train", "--corpus", p(&corpus_path), "--model", model, "--layers", "2", "--epochs", "2",
            "--filters", "5", "--embed-dim", "10", "--out", p(&ckpt), "--history", p(&hist),
        ]);
        ensure(code == 0, || format!("train {model} failed: {err}"))?;
    }

    let odd_path = dir.path().join("odd.jsonl");
    let odd_body: String = odd.iter().map(|d| serde_json::to_string(d).unwrap() + "\n").collect();
    fs::write(&odd_path, odd_body).unwrap();

    let (code, out, err) = run_cli(&["evaluate", "--checkpoint", p(&ckpt), "--corpus", p(&corpus_path)]);
    ensure(code == 0, || format!("evaluate failed: {err}"))?;
    let report: metrics::MetricReport = serde_json::from_str(&out).unwrap();
    for v in [report.p_at_1, report.p_at_3, report.p_at_5, report.n_at_3, report.n_at_5] {
        ensure((0.0..=1.0).contains(&v), || format!("metric out of range: {out}"))?;
    }

    let (code, out, err) = run_cli(&["predict", "--checkpoint", p(&ckpt), "--corpus", p(&odd_path), "--k", "9"]);
    ensure(code == 0, || format!("predict failed: {err}"))?;
    for line in out.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let top = v["top"].as_array().unwrap();
        ensure(top.len() == 4, || format!("k > L gave {} entries", top.len()))?;
        let scores: Vec<f64> = top.iter().map(|e| e["score"].as_f64().unwrap()).collect();
        ensure(scores.windows(2).all(|w| w[0] >= w[1]), || "predictions not sorted".into())?;
    }

    let (code, out, err) = run_cli(&["encode", "--checkpoint", p(&ckpt), "--corpus", p(&odd_path)]);
    ensure(code == 0, || format!("encode failed: {err}"))?;
    for line in out.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let x = v["x"].as_array().unwrap();
        ensure(x.len() == 15, || format!("encoded width {}", x.len()))?;
        ensure(x.iter().all(|e| e.as_f64().unwrap().abs() < 1.0), || "encoding outside (-1, 1)".into())?;
    }

    // Label-free corpora have no evaluable label but still report.
    let preds = vec![RankedPrediction::new(vec![0.2, 0.7], vec![false, false]).unwrap()];
    let rep = metrics::report(&preds);
    ensure(rep.macro_auc.is_none() && rep.p_at_1 == 0.0, || "all-control report".into())?;
    ensure(rank_k(&[0.2, 0.7], 5) == vec![1, 0], || "rank_k clamp".into())?;
    Ok(format!("{controls} control docs, 1-token and sub-window docs, k=9 > L=4"))
}

// ----------------------------------------------------------------

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn main() {
    let started = Instant::now();
    let mut verdicts: Vec<(&str, Verdict)> = vec![
        ("1 gradient correctness", guarded(criterion_1)),
        ("2 parameter parity", guarded(criterion_2)),
        ("3 residual recurrence fidelity", guarded(criterion_3)),
        ("4 CRBM oracle equivalence", guarded(criterion_4)),
        ("5 metric hand cases and oracle", guarded(criterion_5)),
    ];
    let synth = catch_unwind(synth_experiment).unwrap_or_else(|_| Err("synthetic experiment panicked".into()));
    match &synth {
        Ok(res) => {
            verdicts.push(("6 synthetic ordering", guarded(|| criterion_6(res))));
            verdicts.push(("7 oracle bound", guarded(|| criterion_7(res))));
        }
        Err(e) => {
            verdicts.push(("6 synthetic ordering", Err(e.clone())));
            verdicts.push(("7 oracle bound", Err(e.clone())));
        }
    }
    verdicts.push(("8 determinism", guarded(criterion_8)));
    verdicts.push(("9 degenerate inputs", guarded(criterion_9)));

    let mut failed = 0;
    for (name, v) in &verdicts {
        match v {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
    }
    println!(
        "{} of {} criteria passed in {:.0}s",
        verdicts.len() - failed,
        verdicts.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
