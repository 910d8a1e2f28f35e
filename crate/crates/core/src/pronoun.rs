//! Cross-lingual pronoun prediction by full-sentence scoring.
//!
//! A target sentence carries `REPLACE` placeholders. Every assignment of a
//! class token to the placeholders is scored with the teacher-forced
//! log-probability of the complete sentence, and the best assignment wins
//! (first in class order on ties).
//!
//! Task file format, UTF-8, whitespace-tokenized, one record per line:
//!
//! ```text
//! source sentence<TAB>target with REPLACE slots[<TAB>gold class ...]
//! ```
//!
//! Gold classes are listed in slot order. A blank line ends a document; the
//! context of a record is the source of the record before it in the same
//! document, or `<empty>` at document start.

use std::fmt;
use std::path::Path;

use crate::data::{tokenize, Document, Vocabulary, EMPTY_CONTEXT, EOS, REPLACE, REPLACE_TOKEN};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tape::Tape;

/// Surface token standing for any non-pronoun filler.
pub const OTHER: &str = "OTHER";

/// Default ceiling on candidate sentences per instance.
pub const DEFAULT_CAP: u128 = 100_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PronounSet {
    pair: String,
    classes: Vec<String>,
}

impl PronounSet {
    pub fn new(pair: impl Into<String>, classes: Vec<String>) -> Result<Self> {
        for (i, c) in classes.iter().enumerate() {
            if classes[..i].contains(c) {
                return Err(Error::contract(format!("pronoun class `{c}` listed twice")));
            }
        }
        if !classes.iter().any(|c| c == OTHER) {
            return Err(Error::contract(format!("pronoun set must contain {OTHER}")));
        }
        Ok(PronounSet {
            pair: pair.into(),
            classes,
        })
    }

    fn fixed(pair: &str, classes: &[&str]) -> Self {
        PronounSet::new(pair, classes.iter().map(|s| s.to_string()).collect()).expect("well-formed built-in set")
    }

    pub fn en_fr() -> Self {
        Self::fixed("en-fr", &["ce", "elle", "elles", "il", "ils", "cela", "on", OTHER])
    }

    pub fn en_de() -> Self {
        Self::fixed("en-de", &["er", "sie", "es", "man", OTHER])
    }

    /// Classes of the synthetic context-pronoun corpus.
    pub fn synthetic() -> Self {
        let mut classes: Vec<&str> = crate::data::synthetic::CLASSES.to_vec();
        classes.push(OTHER);
        Self::fixed("synthetic", &classes)
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "en-fr" => Ok(Self::en_fr()),
            "en-de" => Ok(Self::en_de()),
            "synthetic" => Ok(Self::synthetic()),
            _ => Err(Error::contract(format!(
                "unknown pronoun set `{name}` (expected en-fr, en-de or synthetic)"
            ))),
        }
    }

    pub fn pair(&self) -> &str {
        &self.pair
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn index_of(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    /// Target-vocabulary ids of the class tokens, in class order.
    pub fn class_ids(&self, vocab: &Vocabulary) -> Result<Vec<usize>> {
        self.classes
            .iter()
            .map(|c| vocab.id(c).ok_or_else(|| Error::UnknownToken(c.clone())))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PronounInstance {
    pub context: Vec<usize>,
    pub source: Vec<usize>,
    /// Target ids without `</s>`; slots hold the `REPLACE` id.
    pub target: Vec<usize>,
    /// Gold class indices in slot order, when known.
    pub gold: Option<Vec<usize>>,
}

impl PronounInstance {
    pub fn slots(&self) -> Vec<usize> {
        self.target
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == REPLACE)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult {
    /// Predicted class index per slot.
    pub classes: Vec<usize>,
    /// Log-probability of the chosen token at each slot in the best sentence.
    pub slot_log_probs: Vec<f64>,
    /// Full-sentence log-probability of the best filling.
    pub log_prob: f64,
    pub candidates: usize,
}

fn candidate_count(classes: usize, slots: usize) -> u128 {
    (0..slots).fold(1u128, |acc, _| acc.saturating_mul(classes as u128))
}

/// Every filling of the slots with `class_ids`, as complete targets (no
/// `</s>`). Assignments are produced in lexicographic order of class
/// indices, first slot slowest.
pub fn enumerate_fillings(instance: &PronounInstance, class_ids: &[usize], cap: u128) -> Result<Vec<Vec<usize>>> {
    let slots = instance.slots();
    let count = candidate_count(class_ids.len(), slots.len());
    if count > cap {
        return Err(Error::CapExceeded {
            count,
            cap,
            detail: format!("{} slots over {} classes", slots.len(), class_ids.len()),
        });
    }
    Ok(assignments(class_ids.len(), slots.len())
        .into_iter()
        .map(|a| fill(&instance.target, &slots, &a, class_ids))
        .collect())
}

fn assignments(classes: usize, slots: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..slots {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..classes).map(move |c| {
                    let mut p = prefix.clone();
                    p.push(c);
                    p
                })
            })
            .collect();
    }
    out
}

fn fill(target: &[usize], slots: &[usize], assignment: &[usize], class_ids: &[usize]) -> Vec<usize> {
    let mut t = target.to_vec();
    for (&pos, &c) in slots.iter().zip(assignment) {
        t[pos] = class_ids[c];
    }
    t
}

/// Fills the slots with the class assignment maximising the full-sentence
/// log-probability. The source (and context) is encoded once and every
/// candidate is teacher-forced from it.
pub fn predict(
    model: &Model,
    instance: &PronounInstance,
    set: &PronounSet,
    vocab: &Vocabulary,
    cap: u128,
) -> Result<PredictionResult> {
    let class_ids = set.class_ids(vocab)?;
    let slots = instance.slots();
    let count = candidate_count(class_ids.len(), slots.len());
    if count > cap {
        return Err(Error::CapExceeded {
            count,
            cap,
            detail: format!("{} slots over {} classes", slots.len(), class_ids.len()),
        });
    }
    let example = crate::data::ContextualExample::new(instance.context.clone(), instance.source.clone(), Vec::new());
    let mut tape = Tape::new(&model.params);
    let enc = model.encode(&mut tape, &example, None)?;
    let mut best: Option<PredictionResult> = None;
    let all = assignments(class_ids.len(), slots.len());
    let candidates = all.len();
    for assignment in all {
        let mut target = fill(&instance.target, &slots, &assignment, &class_ids);
        target.push(EOS);
        let picks = model.score_target(&mut tape, &enc, &target, None)?;
        let steps: Vec<f64> = picks.iter().map(|&p| tape.scalar(p)).collect();
        let log_prob: f64 = steps.iter().sum();
        if best.as_ref().is_none_or(|b| log_prob > b.log_prob) {
            best = Some(PredictionResult {
                slot_log_probs: slots.iter().map(|&s| steps[s]).collect(),
                classes: assignment,
                log_prob,
                candidates,
            });
        }
    }
    Ok(best.expect("at least one candidate"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassRecall {
    pub class: String,
    pub correct: usize,
    pub gold: usize,
    /// `None` when the class never occurs in the gold data.
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallReport {
    pub per_class: Vec<ClassRecall>,
    /// Mean recall over classes present in the gold data.
    pub macro_recall: f64,
}

impl fmt::Display for RecallReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.per_class {
            match c.recall {
                Some(r) => writeln!(f, "recall\t{}\t{:.2}\t{}/{}", c.class, 100.0 * r, c.correct, c.gold)?,
                None => writeln!(f, "recall\t{}\t-\t0/0", c.class)?,
            }
        }
        write!(f, "macro_recall\t{:.2}", 100.0 * self.macro_recall)
    }
}

/// Per-class recall and the macro average over represented classes.
/// `predictions` and `golds` are class indices, one per slot.
pub fn evaluate(predictions: &[usize], golds: &[usize], set: &PronounSet) -> Result<RecallReport> {
    if predictions.len() != golds.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} gold slots",
            predictions.len(),
            golds.len()
        )));
    }
    if golds.is_empty() {
        return Err(Error::contract("no gold instances to evaluate"));
    }
    let mut correct = vec![0usize; set.len()];
    let mut total = vec![0usize; set.len()];
    for (&p, &g) in predictions.iter().zip(golds) {
        if g >= set.len() || p >= set.len() {
            return Err(Error::contract(format!("class index outside the {}-class set", set.len())));
        }
        total[g] += 1;
        if p == g {
            correct[g] += 1;
        }
    }
    let per_class: Vec<ClassRecall> = set
        .classes()
        .iter()
        .enumerate()
        .map(|(i, c)| ClassRecall {
            class: c.clone(),
            correct: correct[i],
            gold: total[i],
            recall: (total[i] > 0).then(|| correct[i] as f64 / total[i] as f64),
        })
        .collect();
    let present: Vec<f64> = per_class.iter().filter_map(|c| c.recall).collect();
    let macro_recall = present.iter().sum::<f64>() / present.len() as f64;
    Ok(RecallReport {
        per_class,
        macro_recall,
    })
}

/// One line of a task file, still as tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskRecord {
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub gold: Vec<String>,
}

/// Parses task-file text into documents of records.
pub fn parse_task(text: &str, origin: &Path) -> Result<Vec<Vec<TaskRecord>>> {
    let mut docs = Vec::new();
    let mut current = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                docs.push(std::mem::take(&mut current));
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = |detail: String| Error::Format {
            path: origin.to_path_buf(),
            line: n + 1,
            detail,
        };
        if fields.len() < 2 {
            return Err(bad("expected `source<TAB>target[<TAB>gold...]`".into()));
        }
        let source = tokenize(fields[0]);
        let target = tokenize(fields[1]);
        if source.is_empty() {
            return Err(bad("empty source sentence".into()));
        }
        let gold: Vec<String> = fields[2..].iter().map(|g| g.trim().to_string()).collect();
        let slots = target.iter().filter(|t| *t == REPLACE_TOKEN).count();
        if !gold.is_empty() && gold.len() != slots {
            return Err(bad(format!("{} gold classes for {slots} slots", gold.len())));
        }
        current.push(TaskRecord { source, target, gold });
    }
    if !current.is_empty() {
        docs.push(current);
    }
    if docs.is_empty() {
        return Err(Error::Format {
            path: origin.to_path_buf(),
            line: 0,
            detail: "task file holds no records".into(),
        });
    }
    Ok(docs)
}

pub fn read_task_file(path: &Path) -> Result<Vec<Vec<TaskRecord>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_task(&text, path)
}

pub fn format_task(docs: &[Vec<TaskRecord>]) -> String {
    let mut out = String::new();
    for (i, doc) in docs.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for r in doc {
            out.push_str(&r.source.join(" "));
            out.push('\t');
            out.push_str(&r.target.join(" "));
            for g in &r.gold {
                out.push('\t');
                out.push_str(g);
            }
            out.push('\n');
        }
    }
    out
}

/// Turns a parallel document into task records by replacing every target
/// token that is a class of `set` (other than the catch-all) with `REPLACE`.
pub fn mask_pronouns(doc: &Document, set: &PronounSet) -> Vec<TaskRecord> {
    doc.pairs
        .iter()
        .map(|p| {
            let mut gold = Vec::new();
            let target = p
                .target
                .iter()
                .map(|t| {
                    if t != OTHER && set.index_of(t).is_some() {
                        gold.push(t.clone());
                        REPLACE_TOKEN.to_string()
                    } else {
                        t.clone()
                    }
                })
                .collect();
            TaskRecord {
                source: p.source.clone(),
                target,
                gold,
            }
        })
        .collect()
}

/// Encodes task records, linking each to the preceding source sentence of
/// its document.
pub fn instances(
    docs: &[Vec<TaskRecord>],
    src: &Vocabulary,
    tgt: &Vocabulary,
    set: &PronounSet,
) -> Result<Vec<PronounInstance>> {
    let mut out = Vec::new();
    for doc in docs {
        let mut previous: Option<Vec<usize>> = None;
        for r in doc {
            let source = src.encode(&r.source);
            let gold = if r.gold.is_empty() {
                None
            } else {
                Some(
                    r.gold
                        .iter()
                        .map(|g| {
                            set.index_of(g)
                                .ok_or_else(|| Error::contract(format!("gold `{g}` is not a class of {}", set.pair())))
                        })
                        .collect::<Result<Vec<_>>>()?,
                )
            };
            out.push(PronounInstance {
                context: previous.take().unwrap_or_else(|| vec![EMPTY_CONTEXT]),
                source: source.clone(),
                target: tgt.encode(&r.target),
                gold,
            });
            previous = Some(source);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Mode, ModelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn vocab() -> Vocabulary {
        let mut v = Vocabulary::reserved_only();
        for t in ["a", "b", "c", "er", "sie", "es", "man", OTHER] {
            v.ensure(t);
        }
        v
    }

    fn model(v: &Vocabulary, seed: u64, scale: f64) -> Model {
        let cfg = ModelConfig {
            mode: Mode::LcNmt,
            word_dim: 4,
            enc_hidden: 4,
            dec_hidden: 5,
            ctx_enc_hidden: Some(3),
            attn_hidden: 4,
            dropout_rate: 0.0,
            src_vocab: v.len(),
            tgt_vocab: v.len(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Model::new(cfg, &mut rng).unwrap();
        let ids: Vec<_> = m.params.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            for x in m.params.get_mut(id).values_mut() {
                *x = if scale > 0.0 { rng.random_range(-scale..scale) } else { 0.0 };
            }
        }
        m
    }

    fn instance(v: &Vocabulary, target: &str) -> PronounInstance {
        PronounInstance {
            context: v.encode(&tokenize("a b")),
            source: v.encode(&tokenize("c a")),
            target: v.encode(&tokenize(target)),
            gold: None,
        }
    }

    #[test]
    fn built_in_sets() {
        assert_eq!(PronounSet::en_fr().len(), 8);
        assert_eq!(PronounSet::en_de().classes(), &["er", "sie", "es", "man", "OTHER"]);
        assert!(PronounSet::new("x", vec!["a".into(), "a".into(), OTHER.into()]).is_err());
        assert!(PronounSet::new("x", vec!["a".into()]).is_err());
        assert!(PronounSet::by_name("en-xx").is_err());
    }

    #[test]
    fn filling_counts() {
        let v = vocab();
        let ids = PronounSet::en_de().class_ids(&v).unwrap();
        let zero = instance(&v, "a b");
        assert_eq!(enumerate_fillings(&zero, &ids, DEFAULT_CAP).unwrap(), vec![zero.target.clone()]);
        let fr_ids: Vec<usize> = (0..8).collect();
        let one = instance(&v, "a REPLACE b");
        assert_eq!(enumerate_fillings(&one, &fr_ids, DEFAULT_CAP).unwrap().len(), 8);
        let two = instance(&v, "REPLACE a REPLACE");
        let all = enumerate_fillings(&two, &ids, DEFAULT_CAP).unwrap();
        assert_eq!(all.len(), 25);
        assert_eq!(all.iter().collect::<HashSet<_>>().len(), 25);
        assert!(matches!(
            enumerate_fillings(&two, &ids, 24),
            Err(Error::CapExceeded { count: 25, .. })
        ));
    }

    #[test]
    fn single_slot_is_argmax_of_substitutions() {
        let v = vocab();
        let set = PronounSet::en_de();
        for seed in 0..5 {
            let m = model(&v, seed, 1.0);
            let inst = instance(&v, "a REPLACE b");
            let r = predict(&m, &inst, &set, &v, DEFAULT_CAP).unwrap();
            let scores: Vec<f64> = set
                .classes()
                .iter()
                .map(|c| {
                    let t = format!("a {c} b </s>");
                    let ex = crate::data::ContextualExample::new(inst.context.clone(), inst.source.clone(), v.encode(&tokenize(&t)));
                    m.sequence_log_prob(&ex).unwrap()
                })
                .collect();
            let mut best = 0;
            for (i, &s) in scores.iter().enumerate() {
                if s > scores[best] {
                    best = i;
                }
            }
            assert_eq!(r.classes, vec![best]);
            assert!((r.log_prob - scores[best]).abs() < 1e-12);
            assert_eq!(r.candidates, 5);
        }
    }

    #[test]
    fn uniform_model_picks_first_class() {
        let v = vocab();
        let m = model(&v, 0, 0.0);
        let r = predict(&m, &instance(&v, "REPLACE a REPLACE"), &PronounSet::en_de(), &v, DEFAULT_CAP).unwrap();
        assert_eq!(r.classes, vec![0, 0]);
    }

    #[test]
    fn missing_class_token_is_an_error() {
        let v = vocab();
        let m = model(&v, 0, 1.0);
        let err = predict(&m, &instance(&v, "a REPLACE"), &PronounSet::en_fr(), &v, DEFAULT_CAP).unwrap_err();
        assert!(matches!(err, Error::UnknownToken(_)));
    }

    #[test]
    fn recall_arithmetic() {
        let set = PronounSet::synthetic();
        let r = evaluate(&[0, 1, 0], &[0, 1, 1], &set).unwrap();
        assert_eq!(r.macro_recall, 0.75);
        assert_eq!(r.per_class[2].recall, None);
        let all = evaluate(&[1, 0], &[1, 0], &set).unwrap();
        assert_eq!(all.macro_recall, 1.0);
        assert!(evaluate(&[], &[], &set).is_err());
        assert!(evaluate(&[0], &[0, 1], &set).is_err());
    }

    #[test]
    fn recall_matches_counting_oracle() {
        let set = PronounSet::en_fr();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let golds: Vec<usize> = (0..300).map(|_| rng.random_range(0..6)).collect();
        let preds: Vec<usize> = golds
            .iter()
            .map(|&g| if rng.random_bool(0.6) { g } else { rng.random_range(0..8) })
            .collect();
        let mut table = [[0usize; 8]; 8];
        for (&p, &g) in preds.iter().zip(&golds) {
            table[g][p] += 1;
        }
        let mut sum = 0.0;
        let mut n = 0;
        for (g, row) in table.iter().enumerate() {
            let tot: usize = row.iter().sum();
            if tot > 0 {
                sum += row[g] as f64 / tot as f64;
                n += 1;
            }
        }
        let r = evaluate(&preds, &golds, &set).unwrap();
        assert_eq!(n, 6);
        assert!((r.macro_recall - sum / n as f64).abs() < 1e-15);
    }

    #[test]
    fn task_file_round_trip() {
        let text = "a b\tx y\nc a\tREPLACE b\ter\n\nb\tREPLACE REPLACE\tsie\tes\n";
        let docs = parse_task(text, Path::new("t")).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0][1].gold, vec!["er"]);
        assert_eq!(format_task(&docs), text);
        let v = vocab();
        let inst = instances(&docs, &v, &v, &PronounSet::en_de()).unwrap();
        assert_eq!(inst[0].context, vec![EMPTY_CONTEXT]);
        assert_eq!(inst[1].context, v.encode(&tokenize("a b")));
        assert_eq!(inst[2].context, vec![EMPTY_CONTEXT]);
        assert_eq!(inst[2].gold, Some(vec![1, 2]));
        assert_eq!(inst[1].slots(), vec![0]);
    }

    #[test]
    fn task_file_errors() {
        let p = Path::new("t");
        assert!(matches!(parse_task("", p), Err(Error::Format { .. })));
        assert!(matches!(parse_task("only one field\n", p), Err(Error::Format { line: 1, .. })));
        assert!(matches!(parse_task("a\tREPLACE\ter\tsie\n", p), Err(Error::Format { .. })));
        let docs = parse_task("a\tREPLACE\tnope\n", p).unwrap();
        let v = vocab();
        assert!(instances(&docs, &v, &v, &PronounSet::en_de()).is_err());
    }

    #[test]
    fn masking_synthetic_documents() {
        let docs = crate::data::generate_synthetic(crate::data::SyntheticTask::ContextPronoun, 20, 8, 1).unwrap();
        let set = PronounSet::synthetic();
        for d in &docs {
            let recs = mask_pronouns(d, &set);
            assert!(recs[0].gold.is_empty());
            assert_eq!(recs[1].gold.len(), 1);
            assert_eq!(recs[1].target.iter().filter(|t| *t == REPLACE_TOKEN).count(), 1);
        }
    }
}
