//! Bag-of-words corpora: loading, validation, splitting and fold-in halves.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// One nonzero cell of the document-word count matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Entry {
    pub doc: u32,
    pub word: u32,
    pub count: u32,
}

/// A sparse document-word count matrix with 0-based ids.
///
/// Entries are kept sorted by `(doc, word)` so each document's entries are
/// contiguous. Corpora are immutable once built and cheap to share.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    num_docs: usize,
    vocab_size: usize,
    entries: Vec<Entry>,
    doc_offsets: Vec<usize>,
    vocab: Option<Arc<Vec<String>>>,
    total_tokens: u64,
}

/// Tokens laid out document-major: within a document, entries in corpus
/// order with repeated tokens of one entry consecutive.
#[derive(Debug, Clone)]
pub struct TokenStream {
    pub words: Vec<u32>,
    pub docs: Vec<u32>,
    /// `doc_offsets[j]..doc_offsets[j + 1]` are the tokens of document `j`.
    pub doc_offsets: Vec<usize>,
}

impl TokenStream {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

impl Corpus {
    /// Build a corpus, checking ids, counts and duplicates. Every document
    /// must hold at least one token.
    pub fn new(num_docs: usize, vocab_size: usize, entries: Vec<Entry>) -> Result<Self> {
        let c = Self::build(num_docs, vocab_size, entries)?;
        if let Some(j) = (0..c.num_docs).find(|&j| c.doc_offsets[j] == c.doc_offsets[j + 1]) {
            return Err(Error::InvalidCorpus(format!("document {j} has no tokens")));
        }
        Ok(c)
    }

    /// Like [`Corpus::new`] but documents may be empty. Used for held-out
    /// halves, where single-token documents contribute nothing.
    pub(crate) fn new_allow_empty(
        num_docs: usize,
        vocab_size: usize,
        entries: Vec<Entry>,
    ) -> Result<Self> {
        Self::build(num_docs, vocab_size, entries)
    }

    fn build(num_docs: usize, vocab_size: usize, mut entries: Vec<Entry>) -> Result<Self> {
        entries.sort_unstable_by_key(|e| (e.doc, e.word));
        for e in &entries {
            if e.doc as usize >= num_docs {
                return Err(Error::InvalidCorpus(format!(
                    "document id {} out of range [0, {num_docs})",
                    e.doc
                )));
            }
            if e.word as usize >= vocab_size {
                return Err(Error::InvalidCorpus(format!(
                    "word id {} out of range [0, {vocab_size})",
                    e.word
                )));
            }
            if e.count == 0 {
                return Err(Error::InvalidCorpus(format!(
                    "zero count for document {} word {}",
                    e.doc, e.word
                )));
            }
        }
        if let Some(w) = entries
            .windows(2)
            .find(|w| w[0].doc == w[1].doc && w[0].word == w[1].word)
        {
            return Err(Error::InvalidCorpus(format!(
                "duplicate entry for document {} word {}",
                w[0].doc, w[0].word
            )));
        }
        let mut doc_offsets = vec![0usize; num_docs + 1];
        for e in &entries {
            doc_offsets[e.doc as usize + 1] += 1;
        }
        for j in 0..num_docs {
            doc_offsets[j + 1] += doc_offsets[j];
        }
        let total_tokens = entries.iter().map(|e| e.count as u64).sum();
        Ok(Self {
            num_docs,
            vocab_size,
            entries,
            doc_offsets,
            vocab: None,
            total_tokens,
        })
    }

    /// Attach a vocabulary; its length must equal the vocabulary size.
    pub fn with_vocab(mut self, vocab: Arc<Vec<String>>) -> Result<Self> {
        if vocab.len() != self.vocab_size {
            return Err(Error::InvalidCorpus(format!(
                "vocabulary has {} words, corpus declares {}",
                vocab.len(),
                self.vocab_size
            )));
        }
        self.vocab = Some(vocab);
        Ok(self)
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn vocab(&self) -> Option<&Arc<Vec<String>>> {
        self.vocab.as_ref()
    }

    pub fn word(&self, w: usize) -> Option<&str> {
        self.vocab.as_ref().and_then(|v| v.get(w)).map(String::as_str)
    }

    /// Entries of document `j`.
    pub fn doc_entries(&self, j: usize) -> &[Entry] {
        &self.entries[self.doc_offsets[j]..self.doc_offsets[j + 1]]
    }

    /// Index range of document `j` within [`Corpus::entries`].
    pub fn doc_entry_range(&self, j: usize) -> std::ops::Range<usize> {
        self.doc_offsets[j]..self.doc_offsets[j + 1]
    }

    pub fn doc_len(&self, j: usize) -> u64 {
        self.doc_entries(j).iter().map(|e| e.count as u64).sum()
    }

    /// Total count of each word over all documents.
    pub fn word_totals(&self) -> Vec<u64> {
        let mut t = vec![0u64; self.vocab_size];
        for e in &self.entries {
            t[e.word as usize] += e.count as u64;
        }
        t
    }

    pub fn tokens(&self) -> TokenStream {
        let n = self.total_tokens as usize;
        let mut words = Vec::with_capacity(n);
        let mut docs = Vec::with_capacity(n);
        let mut doc_offsets = Vec::with_capacity(self.num_docs + 1);
        doc_offsets.push(0);
        for j in 0..self.num_docs {
            for e in self.doc_entries(j) {
                for _ in 0..e.count {
                    words.push(e.word);
                    docs.push(e.doc);
                }
            }
            doc_offsets.push(words.len());
        }
        TokenStream {
            words,
            docs,
            doc_offsets,
        }
    }

    /// The sub-corpus made of documents `ids` (in that order), re-indexed
    /// from 0. Shares the vocabulary.
    pub fn select_docs(&self, ids: &[usize]) -> Result<Corpus> {
        let mut entries = Vec::new();
        for (new_id, &j) in ids.iter().enumerate() {
            if j >= self.num_docs {
                return Err(Error::InvalidCorpus(format!("document id {j} out of range")));
            }
            entries.extend(self.doc_entries(j).iter().map(|e| Entry {
                doc: new_id as u32,
                ..*e
            }));
        }
        let mut c = Corpus::new_allow_empty(ids.len(), self.vocab_size, entries)?;
        c.vocab = self.vocab.clone();
        Ok(c)
    }

    /// Write in UCI docword format (1-based ids).
    pub fn write_uci<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.num_docs)?;
        writeln!(out, "{}", self.vocab_size)?;
        writeln!(out, "{}", self.entries.len())?;
        for e in &self.entries {
            writeln!(out, "{} {} {}", e.doc + 1, e.word + 1, e.count)?;
        }
        Ok(())
    }

    /// Write the vocabulary, one word per line. No-op without a vocabulary.
    pub fn write_vocab<W: Write>(&self, mut out: W) -> Result<()> {
        if let Some(v) = &self.vocab {
            for w in v.iter() {
                writeln!(out, "{w}")?;
            }
        }
        Ok(())
    }
}

fn parse_header_field<I>(lines: &mut I, name: &str) -> Result<(usize, usize)>
where
    I: Iterator<Item = (usize, std::io::Result<String>)>,
{
    for (idx, line) in lines.by_ref() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v = t.parse::<usize>().map_err(|_| Error::Parse {
            line: idx + 1,
            msg: format!("malformed header: expected {name}, got {t:?}"),
        })?;
        return Ok((idx + 1, v));
    }
    Err(Error::Parse {
        line: 0,
        msg: format!("malformed header: missing {name}"),
    })
}

/// Load a UCI bag-of-words corpus: three header lines (D, W, NNZ) followed by
/// NNZ `docID wordID count` triples with 1-based ids. An optional vocabulary
/// stream holds one word per line, line `i` naming word `i`.
pub fn load_uci<R: BufRead, V: BufRead>(docword: R, vocab: Option<V>) -> Result<Corpus> {
    let mut lines = docword.lines().enumerate();
    let (_, num_docs) = parse_header_field(&mut lines, "D")?;
    let (_, vocab_size) = parse_header_field(&mut lines, "W")?;
    let (_, nnz) = parse_header_field(&mut lines, "NNZ")?;

    let mut entries = Vec::with_capacity(nnz);
    let mut seen = HashSet::with_capacity(nnz);
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { line: lineno, msg };
        let fields: Vec<&str> = t.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 fields, got {}", fields.len())));
        }
        let parse = |s: &str, what: &str| {
            s.parse::<u64>()
                .map_err(|_| err(format!("malformed {what} {s:?}")))
        };
        let d = parse(fields[0], "document id")?;
        let w = parse(fields[1], "word id")?;
        let n = parse(fields[2], "count")?;
        if d < 1 || d as usize > num_docs {
            return Err(err(format!("document id {d} out of range [1, {num_docs}]")));
        }
        if w < 1 || w as usize > vocab_size {
            return Err(err(format!("word id {w} out of range [1, {vocab_size}]")));
        }
        if n < 1 || n > u32::MAX as u64 {
            return Err(err(format!("count {n} must be at least 1")));
        }
        let e = Entry {
            doc: (d - 1) as u32,
            word: (w - 1) as u32,
            count: n as u32,
        };
        if !seen.insert((e.doc, e.word)) {
            return Err(err(format!("duplicate entry for document {d} word {w}")));
        }
        entries.push(e);
    }
    if entries.len() != nnz {
        return Err(Error::EntryCountMismatch {
            declared: nnz,
            found: entries.len(),
        });
    }
    let corpus = Corpus::new(num_docs, vocab_size, entries)?;
    match vocab {
        Some(v) => {
            let words = load_vocab(v)?;
            corpus.with_vocab(Arc::new(words))
        }
        None => Ok(corpus),
    }
}

pub fn load_vocab<R: BufRead>(r: R) -> Result<Vec<String>> {
    let mut words = Vec::new();
    for line in r.lines() {
        let line = line?;
        let t = line.trim_end_matches(['\r', '\n']);
        words.push(t.to_string());
    }
    while words.last().is_some_and(|w| w.is_empty()) {
        words.pop();
    }
    Ok(words)
}

/// Disjoint train/validation/test parts of one corpus.
#[derive(Debug, Clone)]
pub struct SplitCorpus {
    pub train: Corpus,
    pub validation: Corpus,
    pub test: Corpus,
    /// Original document ids of each part, in part order.
    pub train_ids: Vec<usize>,
    pub validation_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

/// Assign documents to test, validation and train by a seeded shuffle.
/// Each part keeps its documents in original id order.
pub fn split_corpus(
    c: &Corpus,
    test_docs: usize,
    validation_docs: usize,
    seed: u64,
) -> Result<SplitCorpus> {
    if test_docs + validation_docs >= c.num_docs() {
        return Err(Error::SplitTooLarge {
            test: test_docs,
            validation: validation_docs,
            docs: c.num_docs(),
        });
    }
    let mut order: Vec<usize> = (0..c.num_docs()).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let mut test_ids = order[..test_docs].to_vec();
    let mut validation_ids = order[test_docs..test_docs + validation_docs].to_vec();
    let mut train_ids = order[test_docs + validation_docs..].to_vec();
    test_ids.sort_unstable();
    validation_ids.sort_unstable();
    train_ids.sort_unstable();
    Ok(SplitCorpus {
        train: c.select_docs(&train_ids)?,
        validation: c.select_docs(&validation_ids)?,
        test: c.select_docs(&test_ids)?,
        train_ids,
        validation_ids,
        test_ids,
    })
}

/// Token-level halves of every document: `observed_half` trains the
/// document's topic proportions, `heldout_half` is scored.
#[derive(Debug, Clone)]
pub struct FoldInSplit {
    pub observed_half: Corpus,
    pub heldout_half: Corpus,
}

/// Shuffle each document's tokens and put the first `ceil(N_j / 2)` into the
/// observed half. A word type can land in both halves.
pub fn fold_in_split(c: &Corpus, seed: u64) -> FoldInSplit {
    let mut rng = rng_from_seed(seed);
    let mut observed = Vec::new();
    let mut heldout = Vec::new();
    let mut tokens: Vec<u32> = Vec::new();
    let mut counts = vec![0u32; c.vocab_size()];
    let mut touched: Vec<u32> = Vec::new();

    let mut flush = |toks: &[u32], doc: u32, out: &mut Vec<Entry>| {
        for &w in toks {
            if counts[w as usize] == 0 {
                touched.push(w);
            }
            counts[w as usize] += 1;
        }
        touched.sort_unstable();
        for &w in &touched {
            out.push(Entry {
                doc,
                word: w,
                count: counts[w as usize],
            });
            counts[w as usize] = 0;
        }
        touched.clear();
    };

    for j in 0..c.num_docs() {
        tokens.clear();
        for e in c.doc_entries(j) {
            tokens.extend(std::iter::repeat_n(e.word, e.count as usize));
        }
        tokens.shuffle(&mut rng);
        let split = tokens.len().div_ceil(2);
        flush(&tokens[..split], j as u32, &mut observed);
        flush(&tokens[split..], j as u32, &mut heldout);
    }

    let mk = |entries| {
        let mut part = Corpus::new_allow_empty(c.num_docs(), c.vocab_size(), entries)
            .expect("halves of a valid corpus are valid");
        part.vocab = c.vocab.clone();
        part
    };
    FoldInSplit {
        observed_half: mk(observed),
        heldout_half: mk(heldout),
    }
}
