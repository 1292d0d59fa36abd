//! Text ingestion: tokenization, embeddings, corpus files and batching.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Document;

/// Share of malformed embedding lines above which loading fails.
pub const MAX_MALFORMED_SHARE: f64 = 0.01;
pub const UNK_TOKEN: &str = "<unk>";

fn is_sentence_end(token: &str) -> bool {
    matches!(token, "." | "!" | "?")
}

/// Lowercases, detaches every non-alphanumeric character as its own token and
/// splits sentences after `.`, `!` or `?`. A run of closing marks stays with
/// the sentence it ends.
pub fn split_sentences_tokenize(text: &str) -> Result<Vec<Vec<String>>> {
    let mut tokens = Vec::new();
    for chunk in text.to_lowercase().split_whitespace() {
        let mut word = String::new();
        for c in chunk.chars() {
            if c.is_alphanumeric() {
                word.push(c);
            } else {
                if !word.is_empty() {
                    tokens.push(std::mem::take(&mut word));
                }
                tokens.push(c.to_string());
            }
        }
        if !word.is_empty() {
            tokens.push(word);
        }
    }
    if tokens.is_empty() {
        return Err(Error::NoTokens);
    }
    let mut sentences: Vec<Vec<String>> = Vec::new();
    let mut current = Vec::new();
    for tok in tokens {
        if is_sentence_end(&tok) && current.is_empty() {
            if let Some(last) = sentences.last_mut() {
                last.push(tok);
                continue;
            }
        }
        let end = is_sentence_end(&tok);
        current.push(tok);
        if end {
            sentences.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    Ok(sentences)
}

/// Token to embedding-row map with a zero-vector unknown row.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
    rows: Vec<Vec<f64>>,
    unk_id: usize,
}

impl Vocabulary {
    /// Builds a vocabulary from `(token, row)` pairs; the first occurrence of
    /// a repeated token wins. The unknown row is appended last.
    pub fn new(entries: impl IntoIterator<Item = (String, Vec<f64>)>, d_emb: usize) -> Result<Self> {
        let mut v = Vocabulary {
            index: HashMap::new(),
            tokens: Vec::new(),
            rows: Vec::new(),
            unk_id: 0,
        };
        for (tok, row) in entries {
            if row.len() != d_emb {
                return Err(Error::shape("Vocabulary::new", &[row.len()], &[d_emb]));
            }
            if v.index.contains_key(&tok) {
                continue;
            }
            v.index.insert(tok.clone(), v.rows.len());
            v.tokens.push(tok);
            v.rows.push(row);
        }
        v.unk_id = v.rows.len();
        v.tokens.push(UNK_TOKEN.to_string());
        v.rows.push(vec![0.0; d_emb]);
        Ok(v)
    }

    /// Number of rows, including the unknown row.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn d_emb(&self) -> usize {
        self.rows[0].len()
    }

    pub fn unk_id(&self) -> usize {
        self.unk_id
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.unk_id)
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.rows[id]
    }

    pub fn embedding(&self, token: &str) -> &[f64] {
        self.row(self.id(token))
    }

    /// File tokens with their rows, in file order; the unknown row excluded.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.tokens[..self.unk_id]
            .iter()
            .zip(&self.rows)
            .map(|(t, r)| (t.as_str(), r.as_slice()))
    }
}

/// Reads `token v1 ... v_d` lines. Lines of the wrong arity or with
/// unparsable numbers are skipped; more than [`MAX_MALFORMED_SHARE`] of them
/// is an error.
pub fn load_embeddings(path: &Path, d_emb: usize) -> Result<Vocabulary> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    let mut malformed = 0usize;
    let mut total = 0usize;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("nonempty line").to_string();
        let row: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
        match row {
            Ok(row) if row.len() == d_emb && row.iter().all(|x| x.is_finite()) => entries.push((token, row)),
            _ => malformed += 1,
        }
    }
    if malformed as f64 > MAX_MALFORMED_SHARE * total as f64 {
        return Err(Error::MalformedEmbeddings {
            path: path.to_path_buf(),
            malformed,
            total,
        });
    }
    Vocabulary::new(entries, d_emb)
}

/// Writes the file tokens in the format read by [`load_embeddings`].
pub fn write_embeddings(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (tok, row) in vocab.entries() {
        let mut line = tok.to_string();
        for x in row {
            line.push(' ');
            line.push_str(&x.to_string());
        }
        line.push('\n');
        out.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Tokenizes `text` and looks up every token.
pub fn encode(text: &str, label: usize, vocab: &Vocabulary) -> Result<Document> {
    let sentences = split_sentences_tokenize(text)?
        .iter()
        .map(|s| s.iter().map(|t| vocab.embedding(t).to_vec()).collect())
        .collect();
    Document::new(sentences, label)
}

/// A labelled text. `label` is 0-based; files store it 1-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawRecord {
    pub text: String,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawCorpus {
    pub records: Vec<RawRecord>,
    pub class_count: usize,
}

#[derive(Serialize, Deserialize)]
struct RawLine {
    text: String,
    label: usize,
}

impl RawCorpus {
    /// `class_count` defaults to the largest label seen.
    pub fn new(records: Vec<RawRecord>, class_count: Option<usize>) -> Result<Self> {
        let seen = records.iter().map(|r| r.label + 1).max().unwrap_or(0);
        let class_count = class_count.unwrap_or(seen);
        if let Some(r) = records.iter().find(|r| r.label >= class_count) {
            return Err(Error::LabelOutOfRange {
                label: r.label,
                classes: class_count,
            });
        }
        Ok(RawCorpus { records, class_count })
    }

    pub fn encode(&self, vocab: &Vocabulary) -> Result<Vec<Document>> {
        self.records.iter().map(|r| encode(&r.text, r.label, vocab)).collect()
    }
}

/// Reads `{"text": ..., "label": k}` lines with `k >= 1`.
pub fn read_raw_corpus(path: &Path) -> Result<RawCorpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: RawLine = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        if rec.label == 0 {
            return Err(parse("labels are 1-based".into()));
        }
        split_sentences_tokenize(&rec.text).map_err(|e| parse(e.to_string()))?;
        records.push(RawRecord {
            text: rec.text,
            label: rec.label - 1,
        });
    }
    RawCorpus::new(records, None)
}

pub fn write_raw_corpus(path: &Path, corpus: &RawCorpus) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in &corpus.records {
        let line = RawLine {
            text: r.text.clone(),
            label: r.label + 1,
        };
        let mut s = serde_json::to_string(&line).expect("plain record serializes");
        s.push('\n');
        out.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Stable sort of document indices by token count, cut into consecutive
/// batches of `batch_size` (the last may be short); batch order shuffled.
pub fn batch_by_length<R: Rng + ?Sized>(docs: &[Document], batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.sort_by_key(|&i| docs[i].token_count());
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    batches.shuffle(rng);
    batches
}
