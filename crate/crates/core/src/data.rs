//! Corpora, vocabularies, context linkage, batching and synthetic data.
//!
//! Reserved ids are fixed across every vocabulary:
//!
//! | id | token      | role                                           |
//! |----|------------|------------------------------------------------|
//! | 0  | `<pad>`    | padding in batches                             |
//! | 1  | `<s>`      | decoder start symbol                           |
//! | 2  | `</s>`     | end of sentence                                |
//! | 3  | `<unk>`    | out-of-vocabulary token                        |
//! | 4  | `REPLACE`  | pronoun slot placeholder                       |
//! | 5  | `<empty>`  | sole token of the context of a document start  |

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const REPLACE: usize = 4;
pub const EMPTY_CONTEXT: usize = 5;

pub const RESERVED: [&str; 6] = ["<pad>", "<s>", "</s>", "<unk>", "REPLACE", "<empty>"];

pub const REPLACE_TOKEN: &str = "REPLACE";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Vocabulary holding only the reserved tokens.
    pub fn reserved_only() -> Self {
        Self::from_entries(RESERVED.iter().map(|t| (t.to_string(), 0)))
    }

    /// Vocabulary with exactly these `(token, count)` entries in id order.
    pub fn from_entries(items: impl IntoIterator<Item = (String, u64)>) -> Self {
        let (tokens, counts): (Vec<_>, Vec<_>) = items.into_iter().unzip();
        let index = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        Vocabulary {
            tokens,
            counts,
            index,
        }
    }

    /// Keeps the most frequent tokens (ties in lexicographic order) with at
    /// least `min_count` occurrences, up to `max_size` entries including the
    /// reserved ones.
    pub fn build<'a, S, I>(corpus: I, max_size: usize, min_count: u64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a S>,
        S: AsRef<[String]> + 'a + ?Sized,
    {
        if max_size < RESERVED.len() {
            return Err(Error::contract(format!(
                "max vocabulary size {max_size} is below the {} reserved tokens",
                RESERVED.len()
            )));
        }
        let mut counts: HashMap<&str, u64> = HashMap::new();
        let mut sentences = 0usize;
        for sentence in corpus {
            sentences += 1;
            for tok in sentence.as_ref() {
                if !RESERVED.contains(&tok.as_str()) {
                    *counts.entry(tok.as_str()).or_default() += 1;
                }
            }
        }
        if sentences == 0 {
            return Err(Error::contract("cannot build a vocabulary from an empty corpus"));
        }
        let mut ranked: Vec<(&str, u64)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size - RESERVED.len());
        let mut vocab = Self::reserved_only();
        for (tok, c) in ranked {
            vocab.push(tok.to_string(), c);
        }
        Ok(vocab)
    }

    fn push(&mut self, token: String, count: u64) -> usize {
        let id = self.tokens.len();
        self.index.insert(token.clone(), id);
        self.tokens.push(token);
        self.counts.push(count);
        id
    }

    /// Returns the id of `token`, adding it if absent.
    pub fn ensure(&mut self, token: &str) -> usize {
        match self.index.get(token) {
            Some(&id) => id,
            None => self.push(token.to_string(), 0),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn encode(&self, sentence: &[String]) -> Vec<usize> {
        sentence
            .iter()
            .map(|t| self.id(t).unwrap_or(UNK))
            .collect()
    }

    /// Surface tokens of `ids`, skipping every reserved id except `REPLACE`
    /// and `<unk>`.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| !matches!(i, PAD | BOS | EOS | EMPTY_CONTEXT))
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK]).to_string())
            .collect()
    }

    /// Writes `token<TAB>count` lines in id order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (t, c) in self.tokens.iter().zip(&self.counts) {
            out.push_str(&format!("{t}\t{c}\n"));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut items = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let (tok, count) = line.split_once('\t').ok_or_else(|| Error::Format {
                path: path.to_path_buf(),
                line: i + 1,
                detail: "expected `token<TAB>count`".into(),
            })?;
            let count = count.trim().parse().map_err(|_| Error::Format {
                path: path.to_path_buf(),
                line: i + 1,
                detail: format!("bad count `{count}`"),
            })?;
            items.push((tok.to_string(), count));
        }
        let vocab = Self::from_entries(items);
        for (i, r) in RESERVED.iter().enumerate() {
            if vocab.token(i) != Some(r) {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    line: i + 1,
                    detail: format!("reserved token `{r}` expected"),
                });
            }
        }
        Ok(vocab)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Document {
    pub pairs: Vec<SentencePair>,
}

/// One training or evaluation unit: the preceding source sentence, the
/// current source sentence and its target. `target` ends with [`EOS`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContextualExample {
    pub context: Vec<usize>,
    pub source: Vec<usize>,
    pub target: Vec<usize>,
    /// Document index and position inside it, for provenance checks.
    pub doc: usize,
    pub position: usize,
}

impl ContextualExample {
    pub fn new(context: Vec<usize>, source: Vec<usize>, target: Vec<usize>) -> Self {
        ContextualExample {
            context,
            source,
            target,
            doc: 0,
            position: 0,
        }
    }

    /// Target ids without the trailing end-of-sentence marker.
    pub fn reference(&self) -> &[usize] {
        match self.target.last() {
            Some(&EOS) => &self.target[..self.target.len() - 1],
            _ => &self.target,
        }
    }
}

pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_string).collect()
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Reads a boundary sidecar: one 1-based line number per line, each the
/// first sentence of a new document.
pub fn read_boundaries(path: &Path) -> Result<BTreeSet<usize>> {
    let mut out = BTreeSet::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let n: usize = line.parse().map_err(|_| Error::Format {
            path: path.to_path_buf(),
            line: i + 1,
            detail: format!("expected a line number, got `{line}`"),
        })?;
        if n == 0 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                line: i + 1,
                detail: "line numbers are 1-based".into(),
            });
        }
        out.insert(n);
    }
    Ok(out)
}

/// Loads a line-aligned parallel corpus. A blank line in both files, or a
/// line listed in `boundaries`, starts a new document.
pub fn load_parallel(source: &Path, target: &Path, boundaries: Option<&Path>) -> Result<Vec<Document>> {
    let src = read_lines(source)?;
    let tgt = read_lines(target)?;
    if src.len() != tgt.len() {
        return Err(Error::Alignment {
            left: source.to_path_buf(),
            left_lines: src.len(),
            right: target.to_path_buf(),
            right_lines: tgt.len(),
        });
    }
    let starts = match boundaries {
        Some(p) => read_boundaries(p)?,
        None => BTreeSet::new(),
    };
    let mut docs = Vec::new();
    let mut current = Document::default();
    let mut saw_boundary = !starts.is_empty();
    for (i, (s, t)) in src.iter().zip(&tgt).enumerate() {
        let lineno = i + 1;
        match (s.trim().is_empty(), t.trim().is_empty()) {
            (true, true) => {
                saw_boundary = true;
                if !current.pairs.is_empty() {
                    docs.push(std::mem::take(&mut current));
                }
                continue;
            }
            (true, false) | (false, true) => {
                return Err(Error::Format {
                    path: if s.trim().is_empty() { source } else { target }.to_path_buf(),
                    line: lineno,
                    detail: "blank line on one side only".into(),
                })
            }
            _ => {}
        }
        if starts.contains(&lineno) && !current.pairs.is_empty() {
            docs.push(std::mem::take(&mut current));
        }
        current.pairs.push(SentencePair {
            source: tokenize(s),
            target: tokenize(t),
        });
    }
    if !current.pairs.is_empty() {
        docs.push(current);
    }
    if !saw_boundary && docs.first().is_some_and(|d| d.pairs.len() > 1) {
        log::warn!(
            "{}: no document boundaries found; treating the whole corpus as a single document",
            source.display()
        );
    }
    Ok(docs)
}

/// Loads a source-only file into documents with empty targets, using the
/// same boundary rules as [`load_parallel`].
pub fn load_source(source: &Path, boundaries: Option<&Path>) -> Result<Vec<Document>> {
    let lines = read_lines(source)?;
    let starts = match boundaries {
        Some(p) => read_boundaries(p)?,
        None => BTreeSet::new(),
    };
    let mut docs = Vec::new();
    let mut current = Document::default();
    for (i, s) in lines.iter().enumerate() {
        if s.trim().is_empty() {
            if !current.pairs.is_empty() {
                docs.push(std::mem::take(&mut current));
            }
            continue;
        }
        if starts.contains(&(i + 1)) && !current.pairs.is_empty() {
            docs.push(std::mem::take(&mut current));
        }
        current.pairs.push(SentencePair {
            source: tokenize(s),
            target: Vec::new(),
        });
    }
    if !current.pairs.is_empty() {
        docs.push(current);
    }
    Ok(docs)
}

/// Writes documents as `<stem>.src`, `<stem>.tgt` and a `<stem>.docs`
/// boundary sidecar (no blank lines, so hypothesis files stay aligned).
pub fn write_parallel(docs: &[Document], dir: &Path, stem: &str) -> Result<()> {
    let mut src = String::new();
    let mut tgt = String::new();
    let mut bounds = String::new();
    let mut line = 1;
    for doc in docs {
        bounds.push_str(&format!("{line}\n"));
        for p in &doc.pairs {
            src.push_str(&p.source.join(" "));
            src.push('\n');
            tgt.push_str(&p.target.join(" "));
            tgt.push('\n');
            line += 1;
        }
    }
    for (ext, body) in [("src", src), ("tgt", tgt), ("docs", bounds)] {
        let path = dir.join(format!("{stem}.{ext}"));
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Links each sentence to the source sentence just before it in the same
/// document; the first sentence gets the `<empty>` singleton.
pub fn attach_context(doc: &Document, doc_index: usize, src: &Vocabulary, tgt: &Vocabulary) -> Vec<ContextualExample> {
    let mut out = Vec::with_capacity(doc.pairs.len());
    let mut previous: Option<Vec<usize>> = None;
    for (position, pair) in doc.pairs.iter().enumerate() {
        let source = src.encode(&pair.source);
        let mut target = tgt.encode(&pair.target);
        target.push(EOS);
        let context = match &previous {
            Some(p) if !p.is_empty() => p.clone(),
            _ => vec![EMPTY_CONTEXT],
        };
        out.push(ContextualExample {
            context,
            source: source.clone(),
            target,
            doc: doc_index,
            position,
        });
        previous = Some(source);
    }
    out
}

pub fn examples_from_documents(docs: &[Document], src: &Vocabulary, tgt: &Vocabulary) -> Vec<ContextualExample> {
    docs.iter()
        .enumerate()
        .flat_map(|(i, d)| attach_context(d, i, src, tgt))
        .collect()
}

/// Padded `rows × width` id matrix with a mask marking real tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Padded {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    pub lengths: Vec<usize>,
    pub width: usize,
}

impl Padded {
    fn new(rows: &[&[usize]]) -> Self {
        let width = rows.iter().map(|r| r.len()).max().unwrap_or(0);
        let mut ids = vec![PAD; rows.len() * width];
        let mut mask = vec![false; rows.len() * width];
        for (i, r) in rows.iter().enumerate() {
            ids[i * width..i * width + r.len()].copy_from_slice(r);
            mask[i * width..i * width + r.len()].fill(true);
        }
        Padded {
            ids,
            mask,
            lengths: rows.iter().map(|r| r.len()).collect(),
            width,
        }
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.ids[i * self.width..i * self.width + self.lengths[i]]
    }

    pub fn row_mask(&self, i: usize) -> &[bool] {
        &self.mask[i * self.width..(i + 1) * self.width]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub context: Padded,
    pub source: Padded,
    pub target: Padded,
    /// Indices into the example list the batch was cut from.
    pub indices: Vec<usize>,
    docs: Vec<(usize, usize)>,
}

impl Batch {
    pub fn from_examples(examples: &[ContextualExample], indices: Vec<usize>) -> Self {
        let pick = |f: fn(&ContextualExample) -> &[usize]| -> Padded {
            Padded::new(&indices.iter().map(|&i| f(&examples[i])).collect::<Vec<_>>())
        };
        Batch {
            context: pick(|e| &e.context),
            source: pick(|e| &e.source),
            target: pick(|e| &e.target),
            docs: indices.iter().map(|&i| (examples[i].doc, examples[i].position)).collect(),
            indices,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Recovers row `i` as an unpadded example using the masks.
    pub fn example(&self, i: usize) -> ContextualExample {
        ContextualExample {
            context: self.context.row(i).to_vec(),
            source: self.source.row(i).to_vec(),
            target: self.target.row(i).to_vec(),
            doc: self.docs[i].0,
            position: self.docs[i].1,
        }
    }

    pub fn examples(&self) -> Vec<ContextualExample> {
        (0..self.len()).map(|i| self.example(i)).collect()
    }

    pub fn target_tokens(&self) -> usize {
        self.target.lengths.iter().sum()
    }
}

/// How many batches' worth of examples are length-sorted together.
const BUCKET_WINDOW: usize = 20;

/// Shuffles with `seed`, optionally sorts windows of examples by source
/// length so batches hold similar lengths, then shuffles batch order.
pub fn make_batches(examples: &[ContextualExample], batch_size: usize, bucketing: bool, seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::contract("batch size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng);
    if bucketing {
        for window in order.chunks_mut(batch_size * BUCKET_WINDOW) {
            window.sort_by_key(|&i| examples[i].source.len());
        }
    }
    let mut batches: Vec<Batch> = order
        .chunks(batch_size)
        .map(|c| Batch::from_examples(examples, c.to_vec()))
        .collect();
    batches.shuffle(&mut rng);
    Ok(batches)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticTask {
    /// Target is a verbatim copy of the source.
    Copy,
    /// Two-sentence documents whose second target carries a class token
    /// decided only by a marker in the first source sentence.
    ContextPronoun,
}

/// Surface tokens used by the context-pronoun generator.
pub mod synthetic {
    pub const MARKERS: [&str; 2] = ["MARK_A", "MARK_B"];
    pub const CLASSES: [&str; 2] = ["PRON_A", "PRON_B"];
    pub const NEUTRAL: &str = "it";
    pub const MIN_LEN: usize = 3;
    pub const MAX_LEN: usize = 6;
    pub const COPY_MIN_LEN: usize = 4;
    pub const COPY_MAX_LEN: usize = 8;

    pub fn word(i: usize) -> String {
        format!("w{i}")
    }
}

pub fn generate_synthetic(task: SyntheticTask, size: usize, vocab_size: usize, seed: u64) -> Result<Vec<Document>> {
    use synthetic::*;
    if size == 0 {
        return Err(Error::contract("synthetic corpus size must be at least 1"));
    }
    if vocab_size == 0 {
        return Err(Error::contract("synthetic vocabulary must hold at least one word"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = |rng: &mut ChaCha8Rng, lo: usize, hi: usize| -> Vec<String> {
        let n = rng.random_range(lo..=hi);
        (0..n).map(|_| word(rng.random_range(0..vocab_size))).collect()
    };
    let mut docs = Vec::with_capacity(size);
    for _ in 0..size {
        match task {
            SyntheticTask::Copy => {
                let s = words(&mut rng, COPY_MIN_LEN, COPY_MAX_LEN);
                docs.push(Document {
                    pairs: vec![SentencePair {
                        source: s.clone(),
                        target: s,
                    }],
                });
            }
            SyntheticTask::ContextPronoun => {
                let class = rng.random_range(0..2usize);
                let mut first = words(&mut rng, MIN_LEN - 1, MAX_LEN - 1);
                let at = rng.random_range(0..=first.len());
                first.insert(at, MARKERS[class].to_string());
                let mut second = words(&mut rng, MIN_LEN - 1, MAX_LEN - 1);
                let at = rng.random_range(0..=second.len());
                second.insert(at, NEUTRAL.to_string());
                let mut second_tgt = second.clone();
                second_tgt[at] = CLASSES[class].to_string();
                docs.push(Document {
                    pairs: vec![
                        SentencePair {
                            source: first.clone(),
                            target: first,
                        },
                        SentencePair {
                            source: second,
                            target: second_tgt,
                        },
                    ],
                });
            }
        }
    }
    Ok(docs)
}
