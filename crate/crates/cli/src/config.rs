//! Command options: a TOML file merged with command-line flags, flags first.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Deserialize;

use emhrnn::em::{Strategy, TrainConfig, DEFAULT_MAX_EXACT_N};
use emhrnn::model::ModelConfig;
use emhrnn::simgen::{SimConfig, SIM_CLASSES, SIM_DIM};

/// Reads a TOML file into `T`, rejecting unknown keys.
pub fn read_config_file<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("{}: cannot read config", path.display()))?;
    toml::from_str(&text).with_context(|| format!("{}: invalid config", path.display()))
}

/// Loads `--config` if given and fills every flag left unset.
fn with_file<T: for<'de> Deserialize<'de> + Default>(config: &Option<PathBuf>) -> Result<T> {
    match config {
        Some(p) => read_config_file(p),
        None => Ok(T::default()),
    }
}

macro_rules! merge_fields {
    ($flags:expr, $file:expr; $($f:ident),* $(,)?) => {{
        let file = $file;
        $( if $flags.$f.is_none() { $flags.$f = file.$f; } )*
    }};
}

#[derive(Args, Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimgenArgs {
    /// TOML file with any of the options below.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Data seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub teacher_seed: Option<u64>,
    /// Hidden and attention size of the teacher network.
    #[arg(long)]
    pub teacher_d_h: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimgenRun {
    pub out: PathBuf,
    pub sim: SimConfig,
}

impl SimgenArgs {
    pub fn resolve(mut self) -> Result<SimgenRun> {
        let file: SimgenArgs = with_file(&self.config)?;
        merge_fields!(self, file; out, n_train, n_test, seed, teacher_seed, teacher_d_h);
        let d_h = self.teacher_d_h.unwrap_or(50);
        let sim = SimConfig {
            n_train: self.n_train.unwrap_or(10_000),
            n_test: self.n_test.unwrap_or(1_000),
            data_seed: self.seed.unwrap_or(0),
            teacher_seed: self.teacher_seed.unwrap_or(0),
            teacher: ModelConfig {
                d_emb: SIM_DIM,
                d_h,
                d_a: d_h,
                classes: SIM_CLASSES,
            },
        };
        if sim.n_train == 0 || sim.n_test == 0 {
            bail!("--n-train and --n-test must be at least 1");
        }
        sim.teacher.validate()?;
        Ok(SimgenRun {
            out: self.out.context("--out is required")?,
            sim,
        })
    }
}

#[derive(Args, Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainArgs {
    /// TOML file with any of the options below.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Corpus: synthetic records, or text records when --embeddings is set.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Word vectors in text format; switches the corpus to text records.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Word-vector size; inferred from the embeddings file when omitted.
    #[arg(long)]
    pub d_emb: Option<usize>,
    /// Model archive to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-epoch history (one JSON record per line); default `<out>.history.jsonl`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// exact, nonoverlap:<l> or local.
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Outer iterations of the local bootstrap.
    #[arg(long = "K")]
    #[serde(rename = "K")]
    pub k: Option<usize>,
    /// Inner iterations of the local bootstrap.
    #[arg(long = "M")]
    #[serde(rename = "M")]
    pub m: Option<usize>,
    #[arg(long)]
    pub m_step_passes: Option<usize>,
    #[arg(long)]
    pub max_exact_n: Option<usize>,
    #[arg(long)]
    pub d_h: Option<usize>,
    #[arg(long)]
    pub d_a: Option<usize>,
    /// Class count; defaults to the largest label in the corpus.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Pick the learning rate from {0.1, 0.05, 0.01} on a 10% validation split.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub select_lr: Option<bool>,
    /// Record the enumerated marginal log-likelihood every epoch.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub track_marginal: Option<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRun {
    pub corpus: PathBuf,
    pub embeddings: Option<PathBuf>,
    pub d_emb: Option<usize>,
    pub out: PathBuf,
    pub history: PathBuf,
    pub train: TrainConfig,
    pub d_h: usize,
    pub d_a: usize,
    pub classes: Option<usize>,
    pub select_lr: bool,
}

impl TrainArgs {
    pub fn resolve(mut self) -> Result<TrainRun> {
        let file: TrainArgs = with_file(&self.config)?;
        merge_fields!(self, file; corpus, embeddings, d_emb, out, history, strategy, epochs, lr, momentum,
            batch, seed, k, m, m_step_passes, max_exact_n, d_h, d_a, classes, select_lr, track_marginal);
        let defaults = TrainConfig::default();
        let strategy: Strategy = match &self.strategy {
            Some(s) => s.parse()?,
            None => defaults.strategy,
        };
        let train = TrainConfig {
            strategy,
            learning_rate: self.lr.unwrap_or(defaults.learning_rate),
            momentum: self.momentum.unwrap_or(defaults.momentum),
            batch_size: self.batch.unwrap_or(defaults.batch_size),
            m_step_passes: self.m_step_passes.unwrap_or(defaults.m_step_passes),
            epochs: self.epochs.unwrap_or(defaults.epochs),
            outer_k: self.k.unwrap_or(defaults.outer_k),
            inner_m: self.m.unwrap_or(defaults.inner_m),
            seed: self.seed.unwrap_or(defaults.seed),
            max_exact_n: self.max_exact_n.unwrap_or(DEFAULT_MAX_EXACT_N),
            track_marginal: self.track_marginal.unwrap_or(false),
        };
        train.validate()?;
        let out = self.out.context("--out is required")?;
        let history = self.history.unwrap_or_else(|| {
            let mut p = out.clone().into_os_string();
            p.push(".history.jsonl");
            p.into()
        });
        let d_h = self.d_h.unwrap_or(50);
        let d_a = self.d_a.unwrap_or(d_h);
        if d_h == 0 || d_a == 0 || self.d_emb == Some(0) {
            bail!("model dimensions must be positive");
        }
        if let Some(c) = self.classes {
            if c < 2 {
                bail!("--classes must be at least 2");
            }
        }
        Ok(TrainRun {
            corpus: self.corpus.context("--corpus is required")?,
            embeddings: self.embeddings,
            d_emb: self.d_emb,
            out,
            history,
            train,
            d_h,
            d_a,
            classes: self.classes,
            select_lr: self.select_lr.unwrap_or(false),
        })
    }
}

/// Options shared by `eval` and `segment`.
#[derive(Args, Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ApplyArgs {
    /// TOML file with any of the options below.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Model archive written by `train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Report file; standard output only when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Accepted for uniformity; evaluation is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApplyRun {
    pub model: PathBuf,
    pub corpus: PathBuf,
    pub embeddings: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl ApplyArgs {
    pub fn resolve(mut self) -> Result<ApplyRun> {
        let file: ApplyArgs = with_file(&self.config)?;
        merge_fields!(self, file; model, corpus, embeddings, out, seed);
        Ok(ApplyRun {
            model: self.model.context("--model is required")?,
            corpus: self.corpus.context("--corpus is required")?,
            embeddings: self.embeddings,
            out: self.out,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, text: &str) -> PathBuf {
        let p = dir.join("run.toml");
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "corpus = \"c\"\nout = \"o\"\nlearning_rate = 0.1\n");
        let args = TrainArgs {
            config: Some(p),
            ..TrainArgs::default()
        };
        let err = format!("{:#}", args.resolve().unwrap_err());
        assert!(err.contains("learning_rate"), "{err}");
    }

    #[test]
    fn file_fills_unset_flags() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "corpus = \"c\"\nout = \"o\"\nstrategy = \"nonoverlap:2\"\nK = 3\nM = 4\n",
        );
        let run = TrainArgs {
            config: Some(p),
            ..TrainArgs::default()
        }
        .resolve()
        .unwrap();
        assert_eq!(run.train.strategy, Strategy::NonOverlap(2));
        assert_eq!((run.train.outer_k, run.train.inner_m), (3, 4));
        assert_eq!(run.history, PathBuf::from("o.history.jsonl"));
        assert_eq!(run.train.momentum, 0.9);
        assert_eq!(run.train.batch_size, 64);
    }

    #[test]
    fn invalid_values_fail_before_compute() {
        let bad = TrainArgs {
            corpus: Some("c".into()),
            out: Some("o".into()),
            strategy: Some("window:3".into()),
            ..TrainArgs::default()
        };
        assert!(bad.resolve().is_err());
        let bad = TrainArgs {
            corpus: Some("c".into()),
            out: Some("o".into()),
            momentum: Some(1.5),
            ..TrainArgs::default()
        };
        assert!(bad.resolve().is_err());
        assert!(TrainArgs::default().resolve().is_err());
    }
}
