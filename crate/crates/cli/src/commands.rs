//! The four subcommands. Each writes its files and prints a short
//! human-readable summary to `out`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use emhrnn::data::{load_embeddings, read_raw_corpus, split_sentences_tokenize};
use emhrnn::em::{select_learning_rate, train, EpochRecord, TrainingSet, LR_GRID};
use emhrnn::model::{predict, segments_from, Document, IndicatorAssignment, ModelConfig, ModelParams};
use emhrnn::simgen::{generate_corpus, read_corpus, recovery_from, write_corpus, Recovery};

use crate::archive::{ModelArchive, TrainingMetadata};
use crate::config::{ApplyRun, SimgenRun, TrainRun};
use crate::segment::{marked_text, phrase_lengths, DocSegmentation, PhraseLengthStats, SegmentReport};

/// Documents with optional true indicators and the token strings used for
/// reports.
#[derive(Clone, Debug)]
pub struct LoadedCorpus {
    pub docs: Vec<Document>,
    pub true_z: Option<Vec<IndicatorAssignment>>,
    pub tokens: Vec<Vec<String>>,
}

fn infer_d_emb(path: &Path) -> Result<usize> {
    let file = File::open(path).with_context(|| format!("{}: cannot read embeddings", path.display()))?;
    for line in BufReader::new(file).lines() {
        let line = line.with_context(|| format!("{}: cannot read embeddings", path.display()))?;
        let fields = line.split_whitespace().count();
        if fields > 1 {
            return Ok(fields - 1);
        }
    }
    bail!("{}: no embedding rows", path.display())
}

/// Synthetic records, or text records encoded through `embeddings`.
pub fn load_corpus(path: &Path, embeddings: Option<&Path>, d_emb: Option<usize>) -> Result<LoadedCorpus> {
    let loaded = match embeddings {
        None => {
            let (docs, true_z) = read_corpus(path)?;
            let tokens = docs
                .iter()
                .map(|d| (1..=d.token_count()).map(|i| format!("w{i}")).collect())
                .collect();
            LoadedCorpus { docs, true_z, tokens }
        }
        Some(emb) => {
            let d = match d_emb {
                Some(d) => d,
                None => infer_d_emb(emb)?,
            };
            let vocab = load_embeddings(emb, d)?;
            let raw = read_raw_corpus(path)?;
            let docs = raw.encode(&vocab)?;
            let tokens = raw
                .records
                .iter()
                .map(|r| Ok(split_sentences_tokenize(&r.text)?.concat()))
                .collect::<Result<Vec<_>>>()?;
            LoadedCorpus {
                docs,
                true_z: None,
                tokens,
            }
        }
    };
    ensure!(!loaded.docs.is_empty(), "{}: corpus is empty", path.display());
    Ok(loaded)
}

fn corpus_dim(docs: &[Document]) -> Result<usize> {
    let d = docs[0].sentences[0][0].len();
    ensure!(d > 0, "token vectors are empty");
    ensure!(
        docs.iter().all(|doc| doc.tokens().all(|v| v.len() == d)),
        "token vectors have inconsistent sizes"
    );
    Ok(d)
}

fn check_fits(config: &ModelConfig, docs: &[Document]) -> Result<()> {
    let d = corpus_dim(docs)?;
    ensure!(
        d == config.d_emb,
        "corpus vectors have {d} dims, model expects {}",
        config.d_emb
    );
    if let Some(doc) = docs.iter().find(|doc| doc.label >= config.classes) {
        bail!("label {} exceeds the model's {} classes", doc.label + 1, config.classes);
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("{}: cannot create directory", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("{}: cannot create", path.display()))?;
    Ok(BufWriter::new(f))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimgenManifest {
    pub n_train: usize,
    pub n_test: usize,
    pub data_seed: u64,
    pub teacher_seed: u64,
    pub teacher_seed_used: u64,
    pub teacher_redraws: u64,
    pub teacher: ModelConfig,
    pub train_label_counts: Vec<usize>,
    pub test_label_counts: Vec<usize>,
    pub train_file: String,
    pub test_file: String,
}

pub fn cmd_simgen(run: &SimgenRun, out: &mut dyn Write) -> Result<SimgenManifest> {
    let sim = generate_corpus(&run.sim)?;
    std::fs::create_dir_all(&run.out).with_context(|| format!("{}: cannot create directory", run.out.display()))?;
    let classes = run.sim.teacher.classes;
    let manifest = SimgenManifest {
        n_train: sim.train.len(),
        n_test: sim.test.len(),
        data_seed: run.sim.data_seed,
        teacher_seed: run.sim.teacher_seed,
        teacher_seed_used: sim.train.teacher_seed,
        teacher_redraws: sim.teacher_redraws,
        teacher: run.sim.teacher,
        train_label_counts: sim.train.label_counts(classes),
        test_label_counts: sim.test.label_counts(classes),
        train_file: "train.jsonl".into(),
        test_file: "test.jsonl".into(),
    };
    write_corpus(&run.out.join(&manifest.train_file), &sim.train)?;
    write_corpus(&run.out.join(&manifest.test_file), &sim.test)?;
    let path = run.out.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(&path, text).with_context(|| format!("{}: cannot write", path.display()))?;
    writeln!(
        out,
        "wrote {} train / {} test documents to {} (teacher seed {}, labels {:?})",
        manifest.n_train,
        manifest.n_test,
        run.out.display(),
        manifest.teacher_seed_used,
        manifest.train_label_counts
    )?;
    Ok(manifest)
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub archive: ModelArchive,
    pub history: Vec<EpochRecord>,
    pub events: Vec<String>,
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

pub fn cmd_train(run: &TrainRun, out: &mut dyn Write) -> Result<TrainSummary> {
    let corpus = load_corpus(&run.corpus, run.embeddings.as_deref(), run.d_emb)?;
    let d_emb = corpus_dim(&corpus.docs)?;
    let max_label = corpus.docs.iter().map(|d| d.label).max().expect("nonempty corpus");
    let model_cfg = ModelConfig {
        d_emb,
        d_h: run.d_h,
        d_a: run.d_a,
        classes: run.classes.unwrap_or((max_label + 1).max(2)),
    };
    model_cfg.validate()?;
    check_fits(&model_cfg, &corpus.docs)?;

    let mut init_rng = ChaCha8Rng::seed_from_u64(run.train.seed);
    init_rng.set_stream(1);
    let params = ModelParams::init(&model_cfg, &mut init_rng);
    let mut cfg = run.train.clone();
    if run.select_lr {
        let choice = select_learning_rate(&params, &corpus.docs, &cfg, &LR_GRID)?;
        for (lr, acc) in &choice.scores {
            writeln!(out, "lr {lr}: validation accuracy {acc:.4}")?;
        }
        cfg.learning_rate = choice.learning_rate;
        writeln!(out, "selected lr {}", cfg.learning_rate)?;
    }

    let mut history_file = create(&run.history)?;
    writeln!(
        out,
        "{:>5} {:>14} {:>14} {:>10} {:>9} {:>9} {:>5}",
        "epoch", "Q", "marginal_ll", "evals", "recovery", "accuracy", "skip"
    )?;
    let mut write_err = None;
    let set = TrainingSet {
        docs: &corpus.docs,
        truth: corpus.true_z.as_deref(),
    };
    let result = train(params, set, &cfg, |r| {
        let line = serde_json::to_string(r).expect("record serializes");
        let res = writeln!(history_file, "{line}").and_then(|_| {
            writeln!(
                out,
                "{:>5} {:>14.4} {:>14} {:>10} {:>9} {:>9.4} {:>5}",
                r.epoch,
                r.q,
                fmt_opt(r.marginal_ll),
                r.config_evals,
                fmt_opt(r.recovery),
                r.accuracy,
                r.skipped_steps
            )
        });
        if let Err(e) = res {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e).with_context(|| format!("{}: cannot write history", run.history.display()));
    }
    history_file
        .flush()
        .with_context(|| format!("{}: cannot write history", run.history.display()))?;
    for e in &result.events {
        writeln!(out, "note: {e}")?;
    }

    let archive = ModelArchive::new(
        &result.params,
        TrainingMetadata {
            strategy: cfg.strategy.to_string(),
            seed: cfg.seed,
            epochs: cfg.epochs,
            learning_rate: cfg.learning_rate,
            momentum: cfg.momentum,
            batch_size: cfg.batch_size,
            m_step_passes: cfg.m_step_passes,
            outer_k: cfg.outer_k,
            inner_m: cfg.inner_m,
            documents: corpus.docs.len(),
        },
    );
    if let Some(dir) = run.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("{}: cannot create directory", dir.display()))?;
    }
    archive.save(&run.out)?;
    writeln!(out, "wrote {}", run.out.display())?;
    Ok(TrainSummary {
        archive,
        history: result.history,
        events: result.events,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassCounts {
    /// 1-based class.
    pub class: usize,
    pub support: usize,
    pub predicted: usize,
    pub correct: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub docs: usize,
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recovery: Option<Recovery>,
    pub per_class: Vec<ClassCounts>,
}

fn load_for_apply(run: &ApplyRun) -> Result<(ModelParams, LoadedCorpus)> {
    let archive = ModelArchive::load(&run.model)?;
    let params = archive.params()?;
    let corpus = load_corpus(&run.corpus, run.embeddings.as_deref(), Some(archive.config.d_emb))?;
    check_fits(&archive.config, &corpus.docs)?;
    Ok((params, corpus))
}

pub fn cmd_eval(run: &ApplyRun, out: &mut dyn Write) -> Result<Metrics> {
    let (params, corpus) = load_for_apply(run)?;
    let classes = params.config().classes;
    let mut per_class: Vec<ClassCounts> = (1..=classes)
        .map(|class| ClassCounts {
            class,
            support: 0,
            predicted: 0,
            correct: 0,
        })
        .collect();
    let mut imputed = Vec::with_capacity(corpus.docs.len());
    for doc in &corpus.docs {
        let p = predict(&params, doc)?;
        per_class[doc.label].support += 1;
        per_class[p.label].predicted += 1;
        if p.label == doc.label {
            per_class[doc.label].correct += 1;
        }
        imputed.push(p.z);
    }
    let correct: usize = per_class.iter().map(|c| c.correct).sum();
    let recovery = match &corpus.true_z {
        Some(z) => Some(recovery_from(&corpus.docs, &imputed, z)?),
        None => None,
    };
    let metrics = Metrics {
        docs: corpus.docs.len(),
        accuracy: correct as f64 / corpus.docs.len() as f64,
        recovery,
        per_class,
    };
    let line = serde_json::to_string(&metrics)?;
    if let Some(path) = &run.out {
        let mut f = create(path)?;
        writeln!(f, "{line}")
            .and_then(|_| f.flush())
            .with_context(|| format!("{}: cannot write", path.display()))?;
    }
    writeln!(out, "{line}")?;
    Ok(metrics)
}

pub fn cmd_segment(run: &ApplyRun, out: &mut dyn Write) -> Result<SegmentReport> {
    let (params, corpus) = load_for_apply(run)?;
    let mut documents = Vec::with_capacity(corpus.docs.len());
    let mut all_lengths = Vec::new();
    for (doc_id, (doc, tokens)) in corpus.docs.iter().zip(&corpus.tokens).enumerate() {
        let p = predict(&params, doc)?;
        let segments = segments_from(doc, &p.z)?;
        let lengths = phrase_lengths(&segments);
        all_lengths.extend_from_slice(&lengths);
        let top = p.trace.top_word();
        documents.push(DocSegmentation {
            doc_id,
            label: doc.label + 1,
            predicted: p.label + 1,
            marked: marked_text(tokens, &segments),
            pi: p.pis,
            alpha: p.trace.alpha,
            beta: p.trace.beta,
            gamma: p.trace.gamma,
            top_word: top.map(|t| tokens[t].clone()),
            top_word_index: top,
            phrase_lengths: lengths,
        });
    }
    let report = SegmentReport {
        documents,
        phrase_lengths: PhraseLengthStats::from_lengths(&all_lengths),
    };
    for d in &report.documents {
        writeln!(
            out,
            "[{}] {}  (top: {})",
            d.doc_id,
            d.marked,
            d.top_word.as_deref().unwrap_or("-")
        )?;
    }
    if let Some(s) = &report.phrase_lengths {
        writeln!(
            out,
            "phrases {}  mean length {:.3}  min {}  max {}",
            s.count, s.mean, s.min, s.max
        )?;
    }
    if let Some(path) = &run.out {
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        let mut f = create(path)?;
        f.write_all(text.as_bytes())
            .and_then(|_| f.flush())
            .with_context(|| format!("{}: cannot write", path.display()))?;
    }
    Ok(report)
}
