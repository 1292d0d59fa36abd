//! Synthetic documents with known phrase indicators, labelled by a frozen
//! teacher network.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::em::cem_impute;
use crate::error::{Error, Result};
use crate::model::{argmax, forward_given_z, Document, IndicatorAssignment, ModelConfig, ModelParams};

pub const SIM_DIM: usize = 50;
pub const SIM_SENTENCES: usize = 2;
pub const SIM_SENTENCE_LEN: usize = 5;
pub const SIM_CLASSES: usize = 5;
/// A class holding less than this share of training labels triggers a
/// teacher redraw.
pub const MIN_CLASS_SHARE: f64 = 0.02;
pub const MAX_TEACHER_REDRAWS: u64 = 10;

const STREAM_SHARED: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub data_seed: u64,
    pub teacher_seed: u64,
    pub teacher: ModelConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_train: 10_000,
            n_test: 1_000,
            data_seed: 0,
            teacher_seed: 0,
            teacher: ModelConfig {
                d_emb: SIM_DIM,
                d_h: 50,
                d_a: 50,
                classes: SIM_CLASSES,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub docs: Vec<Document>,
    pub true_z: Vec<IndicatorAssignment>,
    /// Seed of the teacher that produced the labels, after any redraws.
    pub teacher_seed: u64,
    pub data_seed: u64,
}

impl SyntheticCorpus {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn label_counts(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        for d in &self.docs {
            counts[d.label] += 1;
        }
        counts
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimOutput {
    pub train: SyntheticCorpus,
    pub test: SyntheticCorpus,
    pub teacher: ModelParams,
    pub teacher_redraws: u64,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Frozen teacher parameters for `seed`.
pub fn teacher_params(seed: u64, cfg: &ModelConfig) -> ModelParams {
    ModelParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Argmax class of the teacher run on the true indicators.
pub fn teacher_label(doc: &Document, true_z: &IndicatorAssignment, teacher: &ModelParams) -> Result<usize> {
    let (probs, _) = forward_given_z(teacher, doc, true_z)?;
    Ok(argmax(&probs).expect("teacher has at least two classes"))
}

struct Generator {
    shared: Vec<f64>,
    dim: usize,
}

impl Generator {
    fn new(cfg: &SimConfig) -> Self {
        let dim = cfg.teacher.d_emb;
        let shared = normal_vector(&mut stream_rng(cfg.data_seed, STREAM_SHARED), dim);
        Generator { shared, dim }
    }

    /// Unlabelled document `index` of `split`; its label is filled in later.
    fn document(&self, seed: u64, split: u64, index: u64) -> (Document, IndicatorAssignment) {
        let mut rng = stream_rng(seed, split << 40 | index);
        let mut sentences = Vec::with_capacity(SIM_SENTENCES);
        let mut z = Vec::with_capacity(SIM_SENTENCES * SIM_SENTENCE_LEN);
        for _ in 0..SIM_SENTENCES {
            let mut sentence = Vec::with_capacity(SIM_SENTENCE_LEN);
            for _ in 0..SIM_SENTENCE_LEN - 1 {
                sentence.push(normal_vector(&mut rng, self.dim));
                z.push(rng.random_bool(0.5));
            }
            sentence.push(self.shared.clone());
            z.push(true);
            sentences.push(sentence);
        }
        let doc = Document::new(sentences, 0).expect("fixed nonempty shape");
        (doc, IndicatorAssignment(z))
    }
}

fn label_all(docs: &mut [Document], z: &[IndicatorAssignment], teacher: &ModelParams) -> Result<()> {
    for (d, zt) in docs.iter_mut().zip(z) {
        d.label = teacher_label(d, zt, teacher)?;
    }
    Ok(())
}

fn is_degenerate(docs: &[Document], classes: usize) -> bool {
    let mut counts = vec![0usize; classes];
    for d in docs {
        counts[d.label] += 1;
    }
    counts.iter().any(|&c| (c as f64) < MIN_CLASS_SHARE * docs.len() as f64)
}

/// Train and test corpora of 2 x 5-token documents. Train and test use
/// disjoint random streams; the teacher is redrawn from `teacher_seed + k`
/// while any class is rarer than [`MIN_CLASS_SHARE`] on the training set.
pub fn generate_corpus(cfg: &SimConfig) -> Result<SimOutput> {
    if cfg.n_train == 0 || cfg.n_test == 0 {
        return Err(Error::Config("n_train and n_test must be at least 1".into()));
    }
    cfg.teacher.validate()?;
    let gen = Generator::new(cfg);
    let split = |tag: u64, n: usize| -> (Vec<Document>, Vec<IndicatorAssignment>) {
        (0..n as u64).map(|i| gen.document(cfg.data_seed, tag, i)).unzip()
    };
    let (mut train_docs, train_z) = split(0, cfg.n_train);
    let (mut test_docs, test_z) = split(1, cfg.n_test);

    let mut redraws = 0;
    let mut seed = cfg.teacher_seed;
    let mut teacher = teacher_params(seed, &cfg.teacher);
    label_all(&mut train_docs, &train_z, &teacher)?;
    while is_degenerate(&train_docs, cfg.teacher.classes) && redraws < MAX_TEACHER_REDRAWS {
        redraws += 1;
        seed = cfg.teacher_seed.wrapping_add(redraws);
        teacher = teacher_params(seed, &cfg.teacher);
        label_all(&mut train_docs, &train_z, &teacher)?;
    }
    label_all(&mut test_docs, &test_z, &teacher)?;
    let corpus = |docs, true_z| SyntheticCorpus {
        docs,
        true_z,
        teacher_seed: seed,
        data_seed: cfg.data_seed,
    };
    Ok(SimOutput {
        train: corpus(train_docs, train_z),
        test: corpus(test_docs, test_z),
        teacher,
        teacher_redraws: redraws,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub overall: f64,
    /// Sentence-final positions only.
    pub forced: f64,
    /// All other positions.
    pub free: f64,
}

/// Share of positions where the thresholded intensity matches the truth.
pub fn recovery_accuracy(params: &ModelParams, corpus: &SyntheticCorpus) -> Result<Recovery> {
    let predicted = corpus
        .docs
        .iter()
        .map(|d| cem_impute(params, d))
        .collect::<Result<Vec<_>>>()?;
    recovery_from(&corpus.docs, &predicted, &corpus.true_z)
}

/// Recovery of `predicted` against `truth`.
pub fn recovery_from(
    docs: &[Document],
    predicted: &[IndicatorAssignment],
    truth: &[IndicatorAssignment],
) -> Result<Recovery> {
    let mut hits = [0usize; 2];
    let mut totals = [0usize; 2];
    for ((doc, zhat), z) in docs.iter().zip(predicted).zip(truth) {
        zhat.check_len(doc)?;
        z.check_len(doc)?;
        let finals = doc.sentence_final_positions();
        for t in 0..z.len() {
            let k = usize::from(finals.contains(&t));
            totals[k] += 1;
            hits[k] += usize::from(zhat.0[t] == z.0[t]);
        }
    }
    let share = |h: usize, t: usize| if t == 0 { 0.0 } else { h as f64 / t as f64 };
    Ok(Recovery {
        overall: share(hits[0] + hits[1], totals[0] + totals[1]),
        forced: share(hits[1], totals[1]),
        free: share(hits[0], totals[0]),
    })
}

#[derive(Deserialize)]
struct Record {
    doc_id: usize,
    sentences: Vec<Vec<Vec<f64>>>,
    true_z: Option<Vec<u8>>,
    label: usize,
}

/// Writes one record per line; floats carry 17 significant digits.
pub fn write_corpus(path: &Path, corpus: &SyntheticCorpus) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut line = String::new();
    for (id, (doc, z)) in corpus.docs.iter().zip(&corpus.true_z).enumerate() {
        line.clear();
        corpus_line(&mut line, id, doc, Some(z));
        out.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// One JSON record with labels written 1-based.
pub fn corpus_line(line: &mut String, id: usize, doc: &Document, z: Option<&IndicatorAssignment>) {
    let _ = write!(line, "{{\"doc_id\":{id},\"sentences\":[");
    for (si, s) in doc.sentences.iter().enumerate() {
        line.push_str(if si == 0 { "[" } else { ",[" });
        for (ti, v) in s.iter().enumerate() {
            line.push_str(if ti == 0 { "[" } else { ",[" });
            for (k, x) in v.iter().enumerate() {
                if k > 0 {
                    line.push(',');
                }
                let _ = write!(line, "{x:.16e}");
            }
            line.push(']');
        }
        line.push(']');
    }
    line.push(']');
    if let Some(z) = z {
        line.push_str(",\"true_z\":[");
        for (k, b) in z.0.iter().enumerate() {
            if k > 0 {
                line.push(',');
            }
            line.push(if *b { '1' } else { '0' });
        }
        line.push(']');
    }
    let _ = writeln!(line, ",\"label\":{}}}", doc.label + 1);
}

/// Reads a corpus written by [`write_corpus`]. Records without `true_z` are
/// accepted; `true_z` is then `None`.
pub fn read_corpus(path: &Path) -> Result<(Vec<Document>, Option<Vec<IndicatorAssignment>>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    let mut zs = Vec::new();
    let mut all_have_z = true;
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
        let rec: Record = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        if rec.label == 0 {
            return Err(parse("labels are 1-based".into()));
        }
        if rec.doc_id != docs.len() {
            return Err(parse(format!("doc_id {} out of sequence", rec.doc_id)));
        }
        let doc = Document::new(rec.sentences, rec.label - 1).map_err(|e| parse(e.to_string()))?;
        match rec.true_z {
            Some(bits) => {
                let z = IndicatorAssignment(bits.iter().map(|&b| b != 0).collect());
                z.check_len(&doc).map_err(|e| parse(e.to_string()))?;
                zs.push(z);
            }
            None => all_have_z = false,
        }
        docs.push(doc);
    }
    let z = (all_have_z && !docs.is_empty()).then_some(zs);
    Ok((docs, z))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n_train: usize, n_test: usize) -> SimConfig {
        SimConfig {
            n_train,
            n_test,
            data_seed: 3,
            teacher_seed: 4,
            teacher: ModelConfig {
                d_emb: SIM_DIM,
                d_h: 8,
                d_a: 8,
                classes: SIM_CLASSES,
            },
        }
    }

    #[test]
    fn shape_and_forced_positions() {
        let out = generate_corpus(&small(20, 5)).unwrap();
        assert_eq!(out.train.len(), 20);
        assert_eq!(out.test.len(), 5);
        let shared = &out.train.docs[0].sentences[0][4];
        for (d, z) in out
            .train
            .docs
            .iter()
            .chain(&out.test.docs)
            .zip(out.train.true_z.iter().chain(&out.test.true_z))
        {
            assert_eq!(d.sentences.len(), 2);
            assert!(d
                .sentences
                .iter()
                .all(|s| s.len() == 5 && s.iter().all(|v| v.len() == SIM_DIM)));
            assert_eq!(&d.sentences[0][4], shared);
            assert_eq!(&d.sentences[1][4], shared);
            assert!(z.0[4] && z.0[9]);
            assert!(d.label < SIM_CLASSES);
        }
    }

    #[test]
    fn seeds_replay_bitwise() {
        let a = generate_corpus(&small(10, 3)).unwrap();
        let b = generate_corpus(&small(10, 3)).unwrap();
        assert_eq!(a, b);
        let mut other = small(10, 3);
        other.data_seed = 99;
        assert_ne!(generate_corpus(&other).unwrap().train.docs, a.train.docs);
    }

    #[test]
    fn train_and_test_are_disjoint() {
        let out = generate_corpus(&small(30, 30)).unwrap();
        for d in &out.test.docs {
            assert!(!out.train.docs.iter().any(|t| t.sentences[0][0] == d.sentences[0][0]));
        }
    }

    #[test]
    fn teacher_is_deterministic() {
        let out = generate_corpus(&small(5, 1)).unwrap();
        let t = teacher_params(out.train.teacher_seed, &small(1, 1).teacher);
        assert_eq!(t, out.teacher);
        for (d, z) in out.train.docs.iter().zip(&out.train.true_z) {
            assert_eq!(teacher_label(d, z, &t).unwrap(), d.label);
            assert_eq!(teacher_label(d, z, &t).unwrap(), teacher_label(d, z, &t).unwrap());
        }
    }

    #[test]
    fn recovery_extremes() {
        let out = generate_corpus(&small(10, 1)).unwrap();
        let c = &out.train;
        let r = recovery_from(&c.docs, &c.true_z, &c.true_z).unwrap();
        assert_eq!((r.overall, r.forced, r.free), (1.0, 1.0, 1.0));
        let flipped: Vec<_> = c
            .true_z
            .iter()
            .map(|z| IndicatorAssignment(z.0.iter().map(|b| !b).collect()))
            .collect();
        assert_eq!(recovery_from(&c.docs, &flipped, &c.true_z).unwrap().overall, 0.0);
    }

    #[test]
    fn always_zero_recovery_near_expectation() {
        // 20% of positions are forced on, the remaining 80% are fair coins.
        let out = generate_corpus(&small(2000, 1)).unwrap();
        let c = &out.train;
        let zeros: Vec<_> = c
            .docs
            .iter()
            .map(|d| IndicatorAssignment::zeros(d.token_count()))
            .collect();
        let r = recovery_from(&c.docs, &zeros, &c.true_z).unwrap();
        assert!((r.overall - 0.4).abs() < 0.01, "{}", r.overall);
        assert_eq!(r.forced, 0.0);
        let boundary_only: Vec<_> = c
            .docs
            .iter()
            .map(|d| {
                let mut z = IndicatorAssignment::zeros(d.token_count());
                d.sentence_final_positions().into_iter().for_each(|t| z.0[t] = true);
                z
            })
            .collect();
        let r = recovery_from(&c.docs, &boundary_only, &c.true_z).unwrap();
        assert!((r.overall - 0.6).abs() < 0.01, "{}", r.overall);
        assert_eq!(r.forced, 1.0);
    }

    #[test]
    fn corpus_file_round_trips() {
        let out = generate_corpus(&small(4, 1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        write_corpus(&path, &out.train).unwrap();
        let (docs, z) = read_corpus(&path).unwrap();
        assert_eq!(docs, out.train.docs);
        assert_eq!(z.unwrap(), out.train.true_z);
        let first = std::fs::read_to_string(&path).unwrap();
        assert!(first.contains("\"label\":"));
    }
}
