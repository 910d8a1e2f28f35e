//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use lcnmt::data::{
    examples_from_documents, generate_synthetic, load_parallel, make_batches, tokenize, write_parallel,
    ContextualExample, Document, SentencePair, SyntheticTask, Vocabulary, EMPTY_CONTEXT, EOS, REPLACE,
};
use lcnmt::decoding::{beam_best, exhaustive_decode, BeamConfig, EXHAUSTIVE_CAP};
use lcnmt::gradcheck::finite_difference_check;
use lcnmt::metrics::{bleu_corpus, ribes_corpus, ribes_sentence};
use lcnmt::pronoun::{evaluate, instances, mask_pronouns, predict, PronounInstance, PronounSet, DEFAULT_CAP, OTHER};
use lcnmt::training::{
    greedy_bleu, per_token_nll, subsample_corpus, subsample_size, train, TrainingConfig, ABLATION_FRACTIONS,
};
use lcnmt::{Mode, Model, ModelConfig, SeededRng, Tape};
use rand::{Rng, SeedableRng};

// Tolerances and budgets.
const GRAD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const REDUCTION_TOL: f64 = 1e-12;
const REDUCTION_INPUTS: usize = 20;
const DECODE_BUDGET: Duration = Duration::from_secs(60);
const PRONOUN_INSTANCES: usize = 50;
const PRONOUN_TOL: f64 = 1e-9;
const BLEU_TOY_TOL: f64 = 1e-9;
const COPY_NLL: f64 = 0.1;
const COPY_BLEU: f64 = 0.99;
const COPY_BUDGET: Duration = Duration::from_secs(15 * 60);
const CONTEXT_LC_MIN: f64 = 0.95;
const CONTEXT_NMT_MAX: f64 = 0.65;
const CONTEXT_BUDGET: Duration = Duration::from_secs(30 * 60);

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("gradient check, nmt and lc-nmt", gradient_check),
        ("zeroed context pathway reduces to nmt", reduction),
        ("beam search vs exhaustive oracle", decoding_oracle),
        ("pronoun prediction vs brute force", pronoun_oracle),
        ("metric oracles", metric_oracles),
        ("copy task overfit", copy_overfit),
        ("context-pronoun benefit", context_benefit),
        ("byte-for-byte determinism", determinism),
        ("data contracts", data_contracts),
    ];
    let filter: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if filter.is_some_and(|k| k != i + 1) {
            continue;
        }
        let start = Instant::now();
        let o = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} [{}] {name}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

fn randomize(model: &mut Model, rng: &mut SeededRng, scale: f64) {
    let ids: Vec<_> = model.params.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        for v in model.params.get_mut(id).values_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
}

fn random_sentence(rng: &mut SeededRng, vocab: usize, lo: usize, hi: usize) -> Vec<usize> {
    let n = rng.random_range(lo..=hi);
    (0..n).map(|_| rng.random_range(6..vocab)).collect()
}

fn random_example(rng: &mut SeededRng, src_vocab: usize, tgt_vocab: usize) -> ContextualExample {
    let mut target = random_sentence(rng, tgt_vocab, 1, 4);
    target.push(EOS);
    ContextualExample::new(
        random_sentence(rng, src_vocab, 1, 4),
        random_sentence(rng, src_vocab, 1, 5),
        target,
    )
}

fn vocab_of(docs: &[Document]) -> Vocabulary {
    let mut sents: Vec<Vec<String>> = docs.iter().flat_map(|d| d.pairs.iter().map(|p| p.source.clone())).collect();
    sents.extend(docs.iter().flat_map(|d| d.pairs.iter().map(|p| p.target.clone())));
    let mut v = Vocabulary::build(&sents, 10_000, 1).expect("non-empty corpus");
    v.ensure(OTHER);
    v
}

// 1 -------------------------------------------------------------------------

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut details = Vec::new();
    let mut pass = true;
    for mode in [Mode::Nmt, Mode::LcNmt] {
        let config = ModelConfig {
            mode,
            word_dim: 8,
            enc_hidden: 16,
            dec_hidden: 16,
            ctx_enc_hidden: (mode == Mode::LcNmt).then_some(16),
            attn_hidden: 16,
            dropout_rate: 0.0,
            src_vocab: 10,
            tgt_vocab: 9,
        };
        let mut rng = SeededRng::seed_from_u64(11);
        let mut model = Model::new(config, &mut rng).unwrap();
        randomize(&mut model, &mut rng, 0.5);
        let corpus = vec![
            ContextualExample::new(vec![EMPTY_CONTEXT], vec![6, 7, 8], vec![6, 7, EOS]),
            ContextualExample::new(vec![6, 7, 8], vec![9, 6], vec![8, 6, 7, EOS]),
        ];
        let report = finite_difference_check(
            |tape: &mut Tape<'_>| model.nll_on_tape(tape, &corpus, None),
            &model.params,
            GRAD_STEP,
            GRAD_TOL,
        )
        .unwrap();
        let worst = report.worst().unwrap();
        pass &= report.passed();
        details.push(format!(
            "{mode:?}: {} entries, worst {:.2e} in {}",
            report.entries_checked, worst.max_relative_error, worst.name
        ));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < GRAD_BUDGET;
    outcome(pass, format!("{}; tol {GRAD_TOL:e}, {:.1}s", details.join("; "), elapsed.as_secs_f64()))
}

// 2 -------------------------------------------------------------------------

/// NMT model holding every shared weight of `lc`; the decoder input matrix
/// drops the columns that read the context vector.
fn nmt_sharing(lc: &Model) -> Model {
    let mut cfg = lc.config.clone();
    cfg.mode = Mode::Nmt;
    cfg.ctx_enc_hidden = None;
    let mut nmt = Model::new(cfg, &mut SeededRng::seed_from_u64(0)).unwrap();
    let ctx_cols = lc.context_input_columns().unwrap();
    let ids: Vec<_> = nmt.params.iter().map(|(id, name, _)| (id, name.to_string())).collect();
    for (id, name) in ids {
        let src = lc.params.by_name(&name).unwrap();
        let dst = nmt.params.get_mut(id);
        if name == "dec.w" {
            let cols = src.cols();
            let keep = dst.cols();
            let mut vals = Vec::new();
            for r in 0..src.rows() {
                let row = &src.values()[r * cols..(r + 1) * cols];
                vals.extend(row.iter().enumerate().filter(|(c, _)| !ctx_cols.contains(c)).map(|(_, v)| *v));
            }
            assert_eq!(vals.len(), keep * dst.rows());
            dst.values_mut().copy_from_slice(&vals);
        } else {
            dst.values_mut().copy_from_slice(src.values());
        }
    }
    nmt
}

fn step_log_probs(model: &Model, ex: &ContextualExample) -> Vec<Vec<f64>> {
    let mut tape = Tape::new(&model.params);
    let enc = model.encode(&mut tape, ex, None).unwrap();
    let mut state = model.initial_state(&enc);
    let mut out = Vec::new();
    for &y in &ex.target {
        let step = model.decoder_step(&mut tape, &enc, &state, None).unwrap();
        out.push(tape.value(step.log_probs).to_vec());
        state = model.advance(&step, y).unwrap();
    }
    out
}

fn reduction() -> Outcome {
    let mut rng = SeededRng::seed_from_u64(21);
    let mut worst: f64 = 0.0;
    for _ in 0..REDUCTION_INPUTS {
        let config = ModelConfig {
            mode: Mode::LcNmt,
            word_dim: 5,
            enc_hidden: 6,
            dec_hidden: 7,
            ctx_enc_hidden: Some(4),
            attn_hidden: 5,
            dropout_rate: 0.0,
            src_vocab: 12,
            tgt_vocab: 11,
        };
        let mut lc = Model::new(config, &mut rng).unwrap();
        randomize(&mut lc, &mut rng, 1.0);
        let ctx_cols = lc.context_input_columns().unwrap();
        let ids: Vec<_> = lc.params.iter().map(|(id, name, _)| (id, name.to_string())).collect();
        for (id, name) in ids {
            let t = lc.params.get_mut(id);
            if name.starts_with("ctx_") {
                t.values_mut().fill(0.0);
            } else if name == "dec.w" {
                let cols = t.cols();
                for (k, v) in t.values_mut().iter_mut().enumerate() {
                    if ctx_cols.contains(&(k % cols)) {
                        *v = 0.0;
                    }
                }
            }
        }
        let nmt = nmt_sharing(&lc);
        let ex = random_example(&mut rng, 12, 11);
        let a = step_log_probs(&lc, &ex);
        let b = step_log_probs(&nmt, &ex);
        for (x, y) in a.iter().zip(&b) {
            for (p, q) in x.iter().zip(y) {
                worst = worst.max((p - q).abs());
            }
        }
    }
    outcome(
        worst <= REDUCTION_TOL,
        format!("{REDUCTION_INPUTS} inputs, max |Δ log p| = {worst:.1e} (tol {REDUCTION_TOL:e})"),
    )
}

// 3 -------------------------------------------------------------------------

fn decoding_oracle() -> Outcome {
    let start = Instant::now();
    const V: usize = 5;
    const MAX_LEN: usize = 4;
    let saturating = V.pow(MAX_LEN as u32);
    let mut exact = 0;
    let mut monotone = 0;
    let mut never_above = true;
    let models = 10;
    for seed in 0..models {
        let mode = if seed % 2 == 0 { Mode::Nmt } else { Mode::LcNmt };
        let config = ModelConfig {
            mode,
            word_dim: 4,
            enc_hidden: 5,
            dec_hidden: 6,
            ctx_enc_hidden: (mode == Mode::LcNmt).then_some(3),
            attn_hidden: 4,
            dropout_rate: 0.0,
            src_vocab: 9,
            tgt_vocab: V,
        };
        let mut rng = SeededRng::seed_from_u64(100 + seed);
        let mut model = Model::new(config, &mut rng).unwrap();
        randomize(&mut model, &mut rng, 1.5);
        let ex = ContextualExample::new(vec![6, 7], random_sentence(&mut rng, 9, 2, 4), vec![EOS]);
        let opt = exhaustive_decode(&model, &ex, MAX_LEN, EXHAUSTIVE_CAP).unwrap();
        let beam = |b: usize| {
            beam_best(
                &model,
                &ex,
                &BeamConfig {
                    beam_size: b,
                    max_len: MAX_LEN,
                    length_norm: false,
                },
            )
            .unwrap()
        };
        let full = beam(saturating);
        if full.log_prob == opt.log_prob && full.tokens == opt.tokens {
            exact += 1;
        }
        let scores: Vec<f64> = [1, 2, 4, 8].iter().map(|&b| beam(b).log_prob).collect();
        never_above &= scores.iter().all(|&s| s <= opt.log_prob);
        if scores.windows(2).all(|w| w[1] >= w[0]) {
            monotone += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = exact == models && monotone == models && never_above && elapsed < DECODE_BUDGET;
    outcome(
        pass,
        format!(
            "V={V}, max_len={MAX_LEN}: B={saturating} exact on {exact}/{models} models, monotone in B∈{{1,2,4,8}} on {monotone}/{models}, never above optimum: {never_above}"
        ),
    )
}

// 4 -------------------------------------------------------------------------

fn pronoun_oracle() -> Outcome {
    let set = PronounSet::en_de();
    let docs = generate_synthetic(SyntheticTask::ContextPronoun, 60, 12, 5).unwrap();
    let mut vocab = vocab_of(&docs);
    for c in set.classes() {
        vocab.ensure(c);
    }
    let config = ModelConfig {
        mode: Mode::LcNmt,
        word_dim: 8,
        enc_hidden: 8,
        dec_hidden: 8,
        ctx_enc_hidden: Some(8),
        attn_hidden: 8,
        dropout_rate: 0.0,
        src_vocab: vocab.len(),
        tgt_vocab: vocab.len(),
    };
    let mut model = Model::new(config, &mut SeededRng::seed_from_u64(2)).unwrap();
    let examples = examples_from_documents(&docs, &vocab, &vocab);
    let tc = TrainingConfig {
        batch_size: 8,
        max_epochs: 3,
        valid_interval: 1000,
        valid_max_len: 8,
        ..TrainingConfig::default()
    };
    train(&mut model, &examples, &examples[..4], &tc, &mut std::io::sink()).unwrap();

    let class_ids = set.class_ids(&vocab).unwrap();
    let mut rng = SeededRng::seed_from_u64(77);
    let mut argmax_ok = 0;
    let mut worst: f64 = 0.0;
    for n in 0..PRONOUN_INSTANCES {
        let ex = &examples[(7 * n) % examples.len()];
        let mut target = ex.reference().to_vec();
        while target.len() < 3 {
            target.push(6);
        }
        let i = rng.random_range(0..target.len());
        let mut j = rng.random_range(0..target.len() - 1);
        if j >= i {
            j += 1;
        }
        target[i] = REPLACE;
        target[j] = REPLACE;
        let inst = PronounInstance {
            context: ex.context.clone(),
            source: ex.source.clone(),
            target: target.clone(),
            gold: None,
        };
        let got = predict(&model, &inst, &set, &vocab, DEFAULT_CAP).unwrap();

        // brute force: two nested loops over the class set
        let (first, second) = (i.min(j), i.max(j));
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..set.len() {
            for b in 0..set.len() {
                let mut t = target.clone();
                t[first] = class_ids[a];
                t[second] = class_ids[b];
                t.push(EOS);
                let s = model
                    .sequence_log_prob(&ContextualExample::new(ex.context.clone(), ex.source.clone(), t))
                    .unwrap();
                if best.is_none_or(|(bs, _, _)| s > bs) {
                    best = Some((s, a, b));
                }
            }
        }
        let (bs, a, b) = best.unwrap();
        if got.classes == vec![a, b] {
            argmax_ok += 1;
        }
        worst = worst.max((got.log_prob - bs).abs());
    }
    outcome(
        argmax_ok == PRONOUN_INSTANCES && worst <= PRONOUN_TOL,
        format!(
            "k=2 over {} classes: argmax agrees on {argmax_ok}/{PRONOUN_INSTANCES}, max score gap {worst:.1e} (tol {PRONOUN_TOL:e})",
            set.len()
        ),
    )
}

// 5 -------------------------------------------------------------------------

/// Independent corpus BLEU: clipped n-gram counts on joined strings.
fn bleu_oracle(hyps: &[&str], refs: &[&str]) -> f64 {
    let mut matches = [0f64; 4];
    let mut totals = [0f64; 4];
    let (mut c, mut r) = (0f64, 0f64);
    for (h, rf) in hyps.iter().zip(refs) {
        let h: Vec<&str> = h.split(' ').collect();
        let rf: Vec<&str> = rf.split(' ').collect();
        c += h.len() as f64;
        r += rf.len() as f64;
        for n in 1..=4 {
            let grams = |s: &[&str]| {
                let mut m: HashMap<String, usize> = HashMap::new();
                for w in s.windows(n) {
                    *m.entry(w.join(" ")).or_default() += 1;
                }
                m
            };
            let (hg, rg) = (grams(&h), grams(&rf));
            for (g, k) in &hg {
                matches[n - 1] += (*k).min(*rg.get(g).unwrap_or(&0)) as f64;
                totals[n - 1] += *k as f64;
            }
        }
    }
    let log_p: f64 = (0..4).map(|i| (matches[i] / totals[i]).ln()).sum::<f64>() / 4.0;
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * log_p.exp()
}

fn metric_oracles() -> Outcome {
    let refs = [
        "the cat sat on the mat today",
        "a quick brown fox jumps over the lazy dog",
        "we like to translate long sentences with context",
    ];
    let hyps = [
        "the cat sat on a mat today",
        "a brown quick fox jumps over the dog",
        "we like to translate sentences with the context here",
    ];
    let tok = |xs: &[&str]| -> Vec<Vec<String>> { xs.iter().map(|s| tokenize(s)).collect() };
    let (r, h) = (tok(&refs), tok(&hyps));
    let mut checks = Vec::new();
    let identical_bleu = bleu_corpus(&r, &r).unwrap();
    let identical_ribes = ribes_corpus(&r, &r).unwrap();
    checks.push(("identical corpora give 1.0", identical_bleu == 1.0 && identical_ribes == 1.0));
    let toy = bleu_corpus(&h, &r).unwrap();
    let oracle = bleu_oracle(&hyps, &refs);
    checks.push((
        "toy BLEU matches counting oracle",
        (toy - oracle).abs() <= BLEU_TOY_TOL && (toy - 0.41809266280936486).abs() <= BLEU_TOY_TOL,
    ));
    checks.push((
        "RIBES(b a | a b) = 0",
        ribes_sentence(&tokenize("b a"), &tokenize("a b")) == 0.0,
    ));
    let set = PronounSet::synthetic();
    let macro_recall = evaluate(&[0, 1, 0], &[0, 1, 1], &set).unwrap().macro_recall;
    checks.push(("macro recall {1.0, 0.5} = 0.75", macro_recall == 0.75));
    let failed: Vec<_> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    outcome(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} checks; toy BLEU {toy:.12} vs oracle {oracle:.12}", checks.len())
        } else {
            format!("failed: {}", failed.join(", "))
        },
    )
}

// 6 -------------------------------------------------------------------------

fn copy_overfit() -> Outcome {
    let start = Instant::now();
    let docs = generate_synthetic(SyntheticTask::Copy, 200, 20, 7).unwrap();
    let vocab = vocab_of(&docs);
    let examples = examples_from_documents(&docs, &vocab, &vocab);
    let mut config = ModelConfig::desk_scale(Mode::Nmt, vocab.len(), vocab.len());
    config.dropout_rate = 0.0;
    let mut model = Model::new(config, &mut SeededRng::seed_from_u64(1)).unwrap();
    let tc = TrainingConfig {
        batch_size: 10,
        max_epochs: 600,
        patience: usize::MAX,
        valid_interval: 2000,
        valid_max_len: 12,
        ..TrainingConfig::default()
    };
    train(&mut model, &examples, &examples[..20], &tc, &mut std::io::sink()).unwrap();
    let nll = per_token_nll(&model, &examples).unwrap();
    let bleu = greedy_bleu(&model, &examples, 12).unwrap();
    let elapsed = start.elapsed();
    outcome(
        nll < COPY_NLL && bleu > COPY_BLEU && elapsed < COPY_BUDGET,
        format!(
            "per-token NLL {nll:.4} (< {COPY_NLL}), greedy BLEU {bleu:.4} (> {COPY_BLEU}), {:.0}s of {}s",
            elapsed.as_secs_f64(),
            COPY_BUDGET.as_secs()
        ),
    )
}

// 7 -------------------------------------------------------------------------

fn pronoun_recall(mode: Mode, seed: u64) -> f64 {
    let docs = generate_synthetic(SyntheticTask::ContextPronoun, 1000, 20, seed).unwrap();
    let test_docs = generate_synthetic(SyntheticTask::ContextPronoun, 200, 20, seed + 1000).unwrap();
    let vocab = vocab_of(&docs);
    let examples = examples_from_documents(&docs, &vocab, &vocab);
    let set = PronounSet::synthetic();
    let records: Vec<_> = test_docs.iter().map(|d| mask_pronouns(d, &set)).collect();
    let tests = instances(&records, &vocab, &vocab, &set).unwrap();
    let mut config = ModelConfig::desk_scale(mode, vocab.len(), vocab.len());
    config.dropout_rate = 0.0;
    let mut model = Model::new(config, &mut SeededRng::seed_from_u64(seed)).unwrap();
    let tc = TrainingConfig {
        batch_size: 8,
        max_epochs: 50,
        patience: usize::MAX,
        valid_interval: usize::MAX,
        valid_max_len: 10,
        seed,
        ..TrainingConfig::default()
    };
    train(&mut model, &examples, &examples[..20], &tc, &mut std::io::sink()).unwrap();
    let (mut preds, mut golds) = (Vec::new(), Vec::new());
    for inst in &tests {
        if let Some(g) = &inst.gold {
            preds.extend(predict(&model, inst, &set, &vocab, DEFAULT_CAP).unwrap().classes);
            golds.extend(g.iter().copied());
        }
    }
    evaluate(&preds, &golds, &set).unwrap().macro_recall
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

fn context_benefit() -> Outcome {
    let start = Instant::now();
    let seeds = [1u64, 2, 3];
    let lc: Vec<f64> = seeds.iter().map(|&s| pronoun_recall(Mode::LcNmt, s)).collect();
    let nmt: Vec<f64> = seeds.iter().map(|&s| pronoun_recall(Mode::Nmt, s)).collect();
    let (ml, mn) = (median(lc.clone()), median(nmt.clone()));
    let elapsed = start.elapsed();
    outcome(
        ml >= CONTEXT_LC_MIN && mn <= CONTEXT_NMT_MAX && elapsed < CONTEXT_BUDGET,
        format!(
            "median macro recall lc-nmt {ml:.4} (>= {CONTEXT_LC_MIN}) {lc:.3?}, nmt {mn:.4} (<= {CONTEXT_NMT_MAX}) {nmt:.3?}, {:.0}s",
            elapsed.as_secs_f64()
        ),
    )
}

// 8 -------------------------------------------------------------------------

fn cli(args: &[&str]) -> i32 {
    let mut full = vec!["lcnmt"];
    full.extend_from_slice(args);
    lcnmt::cli::run(full)
}

fn run_pipeline(data: &Path, out: &Path) -> Vec<(String, Vec<u8>)> {
    let p = |name: &str| data.join(name).to_string_lossy().into_owned();
    let o = |name: &str| out.join(name).to_string_lossy().into_owned();
    let out_s = out.to_string_lossy().into_owned();
    assert_eq!(
        cli(&[
            "--threads", "1", "train", "--mode", "lc-nmt",
            "--train-src", &p("train.src"), "--train-tgt", &p("train.tgt"), "--train-docs", &p("train.docs"),
            "--valid-src", &p("valid.src"), "--valid-tgt", &p("valid.tgt"), "--valid-docs", &p("valid.docs"),
            "--out-dir", &out_s, "--max-epochs", "2", "--batch-size", "8", "--valid-interval", "5",
            "--valid-max-len", "10", "--seed", "42",
        ]),
        0
    );
    assert_eq!(
        cli(&[
            "translate", "--checkpoint", &o("best.ckpt"), "--source", &p("valid.src"), "--docs", &p("valid.docs"),
            "--output", &o("valid.hyp"), "--beam", "3", "--max-len", "10",
        ]),
        0
    );
    assert_eq!(
        cli(&[
            "predict-pronouns", "--checkpoint", &o("final.ckpt"), "--task", &p("valid.task"),
            "--pronouns", "synthetic", "--output", &o("valid.pred"),
        ]),
        0
    );
    ["train.log", "best.ckpt", "final.ckpt", "run_config.json", "valid.hyp", "valid.pred"]
        .iter()
        .map(|f| (f.to_string(), fs::read(out.join(f)).unwrap()))
        .collect()
}

fn determinism() -> Outcome {
    let data = tempfile::tempdir().unwrap();
    for (stem, size, seed) in [("train", 40, 1), ("valid", 8, 2)] {
        let d = data.path().to_string_lossy().into_owned();
        let (size, seed) = (size.to_string(), seed.to_string());
        assert_eq!(
            cli(&[
                "make-synthetic", "--task", "context-pronoun", "--size", &size, "--vocab-size", "10",
                "--seed", &seed, "--out-dir", &d, "--stem", stem,
            ]),
            0
        );
    }
    let out = tempfile::tempdir().unwrap();
    let first = run_pipeline(data.path(), out.path());
    for entry in fs::read_dir(out.path()).unwrap() {
        fs::remove_file(entry.unwrap().path()).unwrap();
    }
    let second = run_pipeline(data.path(), out.path());
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(a, b)| a.1 != b.1)
        .map(|(a, _)| a.0.as_str())
        .collect();
    let log_lines = String::from_utf8_lossy(&first[0].1).lines().count();
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} artifacts identical across two runs ({log_lines} log lines)", first.len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

// 9 -------------------------------------------------------------------------

fn random_documents(rng: &mut SeededRng, n: usize) -> Vec<Document> {
    (0..n)
        .map(|_| Document {
            pairs: (0..rng.random_range(1..=5))
                .map(|_| {
                    let words = |rng: &mut SeededRng| -> Vec<String> {
                        (0..rng.random_range(1..=6)).map(|_| format!("t{}", rng.random_range(0..30))).collect()
                    };
                    SentencePair {
                        source: words(rng),
                        target: words(rng),
                    }
                })
                .collect(),
        })
        .collect()
}

fn data_contracts() -> Outcome {
    let mut rng = SeededRng::seed_from_u64(9);
    let mut checks: Vec<(String, bool)> = Vec::new();

    // context linkage, generated and reloaded from disk
    let generated = random_documents(&mut rng, 300);
    let dir = tempfile::tempdir().unwrap();
    write_parallel(&generated, dir.path(), "c").unwrap();
    let loaded = load_parallel(
        &dir.path().join("c.src"),
        &dir.path().join("c.tgt"),
        Some(&dir.path().join("c.docs")),
    )
    .unwrap();
    let mut synthetic = generate_synthetic(SyntheticTask::ContextPronoun, 300, 15, 4).unwrap();
    synthetic.extend(generated.iter().cloned());
    for (name, docs) in [("generated", &generated), ("reloaded", &loaded), ("synthetic", &synthetic)] {
        let vocab = vocab_of(docs);
        let ex = examples_from_documents(docs, &vocab, &vocab);
        let mut crossings = 0;
        let mut linked = 0;
        for (d, doc) in docs.iter().enumerate() {
            for (k, _) in doc.pairs.iter().enumerate() {
                let e = ex.iter().find(|e| e.doc == d && e.position == k).unwrap();
                let expected = if k == 0 {
                    vec![EMPTY_CONTEXT]
                } else {
                    vocab.encode(&doc.pairs[k - 1].source)
                };
                if e.context == expected {
                    linked += 1;
                } else {
                    crossings += 1;
                }
            }
        }
        let total: usize = docs.iter().map(|d| d.pairs.len()).sum();
        checks.push((
            format!("{name}: {linked}/{total} contexts within document"),
            crossings == 0 && linked == total && ex.len() == total,
        ));
    }
    checks.push(("reload preserves documents".into(), loaded == generated));

    // subsampling keeps each example's own context
    let vocab = vocab_of(&generated);
    let ex = examples_from_documents(&generated, &vocab, &vocab);
    let by_key: HashMap<(usize, usize), &ContextualExample> = ex.iter().map(|e| ((e.doc, e.position), e)).collect();
    for f in ABLATION_FRACTIONS {
        let sub = subsample_corpus(&ex, f, 3).unwrap();
        let intact = sub.iter().filter(|e| by_key[&(e.doc, e.position)] == *e).count();
        checks.push((
            format!("fraction {f}: {intact}/{} subsampled contexts intact", sub.len()),
            intact == sub.len() && sub.len() == subsample_size(ex.len(), f),
        ));
    }

    // batching preserves the multiset
    fn count(xs: &[ContextualExample]) -> HashMap<&ContextualExample, usize> {
        let mut m = HashMap::new();
        for x in xs {
            *m.entry(x).or_default() += 1;
        }
        m
    }
    let mut dup = ex.clone();
    dup.extend(ex[..50].iter().cloned());
    let want = count(&dup);
    for (bs, bucketing) in [(1, false), (7, true), (32, true), (1000, false)] {
        let batches = make_batches(&dup, bs, bucketing, 5).unwrap();
        let flat: Vec<ContextualExample> = batches.iter().flat_map(|b| b.examples()).collect();
        checks.push((
            format!("batch {bs}: {} of {} examples recovered", flat.len(), dup.len()),
            count(&flat) == want,
        ));
    }

    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| n.as_str()).collect();
    outcome(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} counting checks", checks.len())
        } else {
            format!("failed: {}", failed.join("; "))
        },
    )
}
