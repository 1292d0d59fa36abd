//! Generalized EM training under the three enumeration strategies.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blocks::{partition_blocks, sample_local_blocks, BlockSpec};
use super::optim::{accumulate, next_velocity, step_along};
use super::posterior::{
    posterior_with_grad, q_value, q_value_and_grad, Enumeration, PosteriorTable, DEFAULT_MAX_EXACT_N,
};
use crate::autodiff::Tensor;
use crate::data::batch_by_length;
use crate::error::{Error, Result};
use crate::model::{
    complete_log_likelihood, indicator_probs, predict, threshold_indicators, Document, IndicatorAssignment, ModelParams,
};

/// Slack allowed when checking that an M-step did not lower Q.
pub const Q_SLACK: f64 = 1e-9;
/// Maximum number of step-size halvings before an M-step pass is skipped.
pub const MAX_HALVINGS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Exact,
    NonOverlap(usize),
    Local,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Exact => write!(f, "exact"),
            Strategy::NonOverlap(l) => write!(f, "nonoverlap:{l}"),
            Strategy::Local => write!(f, "local"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Strategy::Exact),
            "local" => Ok(Strategy::Local),
            _ => {
                let bad = || {
                    Error::Config(format!(
                        "unknown strategy {s:?}; expected exact, nonoverlap:<l> or local"
                    ))
                };
                let l = s.strip_prefix("nonoverlap:").ok_or_else(bad)?;
                let l: usize = l.parse().map_err(|_| bad())?;
                if l == 0 {
                    return Err(bad());
                }
                Ok(Strategy::NonOverlap(l))
            }
        }
    }
}

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub m_step_passes: usize,
    pub epochs: usize,
    /// Outer and inner iteration counts of the local bootstrap.
    pub outer_k: usize,
    pub inner_m: usize,
    pub seed: u64,
    pub max_exact_n: usize,
    /// Record the exact marginal log-likelihood every epoch when documents
    /// are short enough to enumerate.
    pub track_marginal: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            strategy: Strategy::Exact,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 64,
            m_step_passes: 1,
            epochs: 10,
            outer_k: 1,
            inner_m: 1,
            seed: 0,
            max_exact_n: DEFAULT_MAX_EXACT_N,
            track_marginal: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.m_step_passes == 0 || self.outer_k == 0 || self.inner_m == 0 {
            return fail("batch_size, m_step_passes, K and M must be at least 1");
        }
        if let Strategy::NonOverlap(l) = self.strategy {
            if l == 0 {
                return fail("block length must be at least 1");
            }
            if l > self.max_exact_n {
                return Err(Error::TooManyFreePositions {
                    free: l,
                    limit: self.max_exact_n,
                });
            }
        }
        Ok(())
    }
}

/// Hard imputation `z_t = 1` iff `pi_t > 0.5`.
pub fn cem_impute(params: &ModelParams, doc: &Document) -> Result<IndicatorAssignment> {
    Ok(threshold_indicators(&indicator_probs(params, doc)?))
}

#[derive(Clone, Debug)]
pub struct GemSettings {
    pub learning_rate: f64,
    pub momentum: f64,
    pub passes: usize,
    /// Tensors (in [`ModelParams::items`] order) allowed to change.
    pub mask: Option<Vec<bool>>,
}

#[derive(Clone, Debug)]
pub struct GemOutcome {
    pub params: ModelParams,
    pub velocity: ModelParams,
    pub q_before: f64,
    pub q_after: f64,
    pub accepted: usize,
    pub skipped: usize,
    pub halvings: usize,
    /// Smallest `Q(new) - Q(old)` over accepted passes.
    pub min_delta: f64,
}

fn batch_q(params: &ModelParams, docs: &[&Document], tables: &[PosteriorTable]) -> Result<f64> {
    let mut total = 0.0;
    for (doc, table) in docs.iter().zip(tables) {
        total += q_value(params, doc, table)?;
    }
    Ok(total)
}

fn batch_q_grad(params: &ModelParams, docs: &[&Document], tables: &[PosteriorTable]) -> Result<(f64, ModelParams)> {
    let mut total = 0.0;
    let mut grad = params.zeros_like();
    for (doc, table) in docs.iter().zip(tables) {
        let (q, g) = q_value_and_grad(params, doc, table)?;
        total += q;
        accumulate(&mut grad, &g, 1.0);
    }
    Ok((total, grad))
}

/// Generalized M-step: `passes` ascent steps on the batch Q with the tables
/// held fixed. A pass whose trial lowers Q by more than [`Q_SLACK`] is retried
/// with half the step, up to [`MAX_HALVINGS`] times, then skipped.
///
/// `initial` may carry `(Q, dQ/dparams)` already computed at `params`.
pub fn gem_step(
    params: &ModelParams,
    velocity: &ModelParams,
    docs: &[&Document],
    tables: &[PosteriorTable],
    settings: &GemSettings,
    initial: Option<(f64, ModelParams)>,
) -> Result<GemOutcome> {
    assert_eq!(docs.len(), tables.len(), "one posterior table per document");
    let mask = settings.mask.as_deref();
    let mut current = params.clone();
    let mut vel = velocity.clone();
    let mut outcome_q_before = None;
    let mut accepted = 0;
    let mut skipped = 0;
    let mut halvings = 0;
    let mut min_delta = f64::INFINITY;
    let mut initial = initial;
    let mut q_now = 0.0;
    for _ in 0..settings.passes {
        let (q_old, grad_q) = match initial.take() {
            Some(pre) => pre,
            None => batch_q_grad(&current, docs, tables)?,
        };
        outcome_q_before.get_or_insert(q_old);
        q_now = q_old;
        // Descent direction on the summed batch loss -Q.
        let mut neg = current.zeros_like();
        accumulate(&mut neg, &grad_q, -1.0);
        let trial_velocity = next_velocity(&vel, &neg, settings.momentum, mask)?;
        let mut lr = settings.learning_rate;
        let mut done = false;
        for attempt in 0..=MAX_HALVINGS {
            let candidate = step_along(&current, &trial_velocity, lr, mask);
            let q_new = if candidate.all_finite() {
                batch_q(&candidate, docs, tables)?
            } else {
                f64::NEG_INFINITY
            };
            if q_new.is_finite() && q_new >= q_old - Q_SLACK {
                min_delta = min_delta.min(q_new - q_old);
                current = candidate;
                vel = trial_velocity.clone();
                q_now = q_new;
                accepted += 1;
                done = true;
                break;
            }
            if attempt < MAX_HALVINGS {
                halvings += 1;
                lr *= 0.5;
            }
        }
        if !done {
            skipped += 1;
            vel = vel.zeros_like();
        }
    }
    Ok(GemOutcome {
        params: current,
        velocity: vel,
        q_before: outcome_q_before.unwrap_or(q_now),
        q_after: q_now,
        accepted,
        skipped,
        halvings,
        min_delta,
    })
}

/// One line of training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub strategy: Strategy,
    /// Sum over M-steps of the batch Q after the update.
    #[serde(rename = "Q")]
    pub q: f64,
    pub marginal_ll: Option<f64>,
    pub config_evals: u64,
    /// E-sweeps each document went through this epoch.
    pub sweeps_per_doc: u64,
    /// Smallest and largest per-document configuration count per sweep.
    pub evals_per_doc_sweep_min: u64,
    pub evals_per_doc_sweep_max: u64,
    pub recovery: Option<f64>,
    pub accuracy: f64,
    pub accepted_steps: usize,
    pub skipped_steps: usize,
    pub min_accepted_delta_q: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub events: Vec<String>,
}

/// Reference to a training set with optional ground-truth indicators.
#[derive(Clone, Copy, Debug)]
pub struct TrainingSet<'a> {
    pub docs: &'a [Document],
    pub truth: Option<&'a [IndicatorAssignment]>,
}

/// Fraction of positions where the thresholded intensity matches `truth`.
pub fn indicator_recovery(params: &ModelParams, docs: &[Document], truth: &[IndicatorAssignment]) -> Result<f64> {
    let mut hit = 0usize;
    let mut total = 0usize;
    for (doc, z) in docs.iter().zip(truth) {
        let zhat = cem_impute(params, doc)?;
        z.check_len(doc)?;
        hit += zhat.bits().iter().zip(z.bits()).filter(|(a, b)| a == b).count();
        total += z.len();
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

pub fn label_accuracy(params: &ModelParams, docs: &[Document]) -> Result<f64> {
    if docs.is_empty() {
        return Ok(0.0);
    }
    let mut hit = 0usize;
    for doc in docs {
        if predict(params, doc)?.label == doc.label {
            hit += 1;
        }
    }
    Ok(hit as f64 / docs.len() as f64)
}

/// `sum_d ln sum_Z p(y_d, Z | w_d)` by full enumeration.
pub fn marginal_log_likelihood(params: &ModelParams, docs: &[Document], max_exact_n: usize) -> Result<f64> {
    let mut total = 0.0;
    for doc in docs {
        total += super::posterior::enumerate_posterior(params, doc, Enumeration::Full, max_exact_n)?.log_marginal();
    }
    Ok(total)
}

struct Counters {
    evals: Vec<u64>,
    sweeps: u64,
}

impl Counters {
    fn new(n_docs: usize) -> Self {
        Counters {
            evals: vec![0; n_docs],
            sweeps: 0,
        }
    }
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    params: ModelParams,
    velocity: ModelParams,
    q_sum: f64,
    accepted: usize,
    skipped: usize,
    min_delta: f64,
    events: Vec<String>,
}

impl Trainer<'_> {
    fn settings(&self, mask: Option<Vec<bool>>) -> GemSettings {
        GemSettings {
            learning_rate: self.cfg.learning_rate,
            momentum: self.cfg.momentum,
            passes: self.cfg.m_step_passes,
            mask,
        }
    }

    fn apply(
        &mut self,
        docs: &[&Document],
        tables: &[PosteriorTable],
        mask: Option<Vec<bool>>,
        initial: Option<(f64, ModelParams)>,
    ) -> Result<()> {
        if docs.is_empty() {
            return Ok(());
        }
        let settings = self.settings(mask);
        let out = gem_step(&self.params, &self.velocity, docs, tables, &settings, initial)?;
        self.params = out.params;
        self.velocity = out.velocity;
        self.q_sum += out.q_after;
        self.accepted += out.accepted;
        self.skipped += out.skipped;
        if out.accepted > 0 {
            self.min_delta = self.min_delta.min(out.min_delta);
        }
        if out.skipped > 0 {
            self.events.push(format!(
                "M-step pass skipped after {MAX_HALVINGS} halvings ({} docs)",
                docs.len()
            ));
        }
        Ok(())
    }

    /// E-step over `en(doc)` for every doc and one fused M-step.
    fn enumerate_and_step(
        &mut self,
        docs: &[&Document],
        free: &[Option<Vec<usize>>],
        fixed: &[IndicatorAssignment],
        mask: Option<Vec<bool>>,
        counts: &mut [u64],
    ) -> Result<f64> {
        let mut tables = Vec::with_capacity(docs.len());
        let mut q = 0.0;
        let mut grad = self.params.zeros_like();
        let mut marginal = 0.0;
        for (k, doc) in docs.iter().enumerate() {
            let en = match &free[k] {
                None => Enumeration::Full,
                Some(f) => Enumeration::Restricted {
                    free: f,
                    fixed: &fixed[k],
                },
            };
            let (table, qd, gd) = posterior_with_grad(&self.params, doc, en, self.cfg.max_exact_n)?;
            counts[k] += table.len() as u64;
            marginal += table.log_marginal();
            q += qd;
            accumulate(&mut grad, &gd, 1.0);
            tables.push(table);
        }
        self.apply(docs, &tables, mask, Some((q, grad)))?;
        Ok(marginal)
    }
}

fn not_head_mask() -> Vec<bool> {
    ModelParams::<Tensor>::indicator_head_mask()
        .iter()
        .map(|m| !m)
        .collect()
}

/// Runs `config.epochs` epochs of the configured strategy.
pub fn train(
    params: ModelParams,
    set: TrainingSet<'_>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    params.validate()?;
    let docs = set.docs;
    if docs.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    for doc in docs {
        if doc.label >= params.config().classes {
            return Err(Error::LabelOutOfRange {
                label: doc.label,
                classes: params.config().classes,
            });
        }
    }
    if config.strategy == Strategy::Exact {
        if let Some(n) = docs.iter().map(Document::token_count).find(|&n| n > config.max_exact_n) {
            return Err(Error::TooManyFreePositions {
                free: n,
                limit: config.max_exact_n,
            });
        }
    }
    let can_enumerate = docs.iter().all(|d| d.token_count() <= config.max_exact_n);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let velocity = params.zeros_like();
    let mut tr = Trainer {
        cfg: config,
        params,
        velocity,
        q_sum: 0.0,
        accepted: 0,
        skipped: 0,
        min_delta: f64::INFINITY,
        events: Vec::new(),
    };
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        tr.q_sum = 0.0;
        tr.accepted = 0;
        tr.skipped = 0;
        tr.min_delta = f64::INFINITY;
        let mut counters = Counters::new(docs.len());
        let mut estep_marginal = 0.0;
        for batch in batch_by_length(docs, config.batch_size, &mut rng) {
            let bdocs: Vec<&Document> = batch.iter().map(|&i| &docs[i]).collect();
            let mut counts = vec![0u64; batch.len()];
            match config.strategy {
                Strategy::Exact => {
                    let free = vec![None; batch.len()];
                    let fixed: Vec<IndicatorAssignment> = bdocs
                        .iter()
                        .map(|d| IndicatorAssignment::zeros(d.token_count()))
                        .collect();
                    estep_marginal += tr.enumerate_and_step(&bdocs, &free, &fixed, None, &mut counts)?;
                }
                Strategy::NonOverlap(l) => {
                    let mut fixed = bdocs
                        .iter()
                        .map(|d| cem_impute(&tr.params, d))
                        .collect::<Result<Vec<_>>>()?;
                    let specs: Vec<BlockSpec> = bdocs.iter().map(|d| partition_blocks(d.token_count(), l)).collect();
                    let rounds = specs.iter().map(|s| s.blocks.len()).max().unwrap_or(0);
                    for j in 0..rounds {
                        let active: Vec<usize> = (0..bdocs.len()).filter(|&k| j < specs[k].blocks.len()).collect();
                        run_block_round(&mut tr, &bdocs, &specs, &mut fixed, &active, j, None, &mut counts)?;
                    }
                }
                Strategy::Local => {
                    for _ in 0..config.outer_k {
                        for _ in 0..config.inner_m {
                            let specs: Vec<BlockSpec> = bdocs
                                .iter()
                                .map(|d| sample_local_blocks(d.token_count(), &mut rng))
                                .collect();
                            // Step 1: network parameters on the imputed indicators.
                            let mut fixed = Vec::with_capacity(bdocs.len());
                            let mut tables = Vec::with_capacity(bdocs.len());
                            for d in &bdocs {
                                let z = cem_impute(&tr.params, d)?;
                                let ll = complete_log_likelihood(&tr.params, d, &z)?;
                                tables.push(PosteriorTable::single(z.clone(), ll));
                                fixed.push(z);
                            }
                            tr.apply(&bdocs, &tables, Some(not_head_mask()), None)?;
                            // Step 2: indicator head, one block at a time.
                            let all: Vec<usize> = (0..bdocs.len()).collect();
                            for j in 0..super::blocks::LOCAL_BLOCKS {
                                run_block_round(
                                    &mut tr,
                                    &bdocs,
                                    &specs,
                                    &mut fixed,
                                    &all,
                                    j,
                                    Some(ModelParams::<Tensor>::indicator_head_mask()),
                                    &mut counts,
                                )?;
                            }
                        }
                    }
                }
            }
            for (k, &i) in batch.iter().enumerate() {
                counters.evals[i] += counts[k];
            }
        }
        counters.sweeps = match config.strategy {
            Strategy::Local => config.outer_k as u64,
            _ => 1,
        };
        let marginal_ll = match config.strategy {
            Strategy::Exact => Some(estep_marginal),
            _ if config.track_marginal && can_enumerate => {
                Some(marginal_log_likelihood(&tr.params, docs, config.max_exact_n)?)
            }
            _ => None,
        };
        let recovery = match set.truth {
            Some(truth) => Some(indicator_recovery(&tr.params, docs, truth)?),
            None => None,
        };
        let per_sweep: Vec<u64> = counters.evals.iter().map(|e| e / counters.sweeps).collect();
        let record = EpochRecord {
            epoch,
            strategy: config.strategy,
            q: tr.q_sum,
            marginal_ll,
            config_evals: counters.evals.iter().sum(),
            sweeps_per_doc: counters.sweeps,
            evals_per_doc_sweep_min: per_sweep.iter().copied().min().unwrap_or(0),
            evals_per_doc_sweep_max: per_sweep.iter().copied().max().unwrap_or(0),
            recovery,
            accuracy: label_accuracy(&tr.params, docs)?,
            accepted_steps: tr.accepted,
            skipped_steps: tr.skipped,
            min_accepted_delta_q: tr.min_delta.is_finite().then_some(tr.min_delta),
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok(TrainOutcome {
        params: tr.params,
        history,
        events: tr.events,
    })
}

/// Block `j` of every active document: restricted E-step, M-step, then the
/// block's fixed indicators are re-imputed from the updated intensities.
#[allow(clippy::too_many_arguments)]
fn run_block_round(
    tr: &mut Trainer<'_>,
    bdocs: &[&Document],
    specs: &[BlockSpec],
    fixed: &mut [IndicatorAssignment],
    active: &[usize],
    j: usize,
    mask: Option<Vec<bool>>,
    counts: &mut [u64],
) -> Result<()> {
    let docs: Vec<&Document> = active.iter().map(|&k| bdocs[k]).collect();
    let free: Vec<Option<Vec<usize>>> = active.iter().map(|&k| Some(specs[k].block_positions(j))).collect();
    let fx: Vec<IndicatorAssignment> = active.iter().map(|&k| fixed[k].clone()).collect();
    let mut sub_counts = vec![0u64; active.len()];
    tr.enumerate_and_step(&docs, &free, &fx, mask, &mut sub_counts)?;
    for (s, &k) in active.iter().enumerate() {
        counts[k] += sub_counts[s];
        let refreshed = cem_impute(&tr.params, bdocs[k])?;
        for t in specs[k].blocks[j].clone() {
            fixed[k].0[t] = refreshed.0[t];
        }
    }
    Ok(())
}

pub fn train_exact_em(params: ModelParams, set: TrainingSet<'_>, config: &TrainConfig) -> Result<TrainOutcome> {
    let cfg = TrainConfig {
        strategy: Strategy::Exact,
        ..config.clone()
    };
    train(params, set, &cfg, |_| {})
}

pub fn train_nonoverlap(
    params: ModelParams,
    set: TrainingSet<'_>,
    config: &TrainConfig,
    l: usize,
) -> Result<TrainOutcome> {
    let cfg = TrainConfig {
        strategy: Strategy::NonOverlap(l),
        ..config.clone()
    };
    train(params, set, &cfg, |_| {})
}

pub fn train_local_bootstrap(params: ModelParams, set: TrainingSet<'_>, config: &TrainConfig) -> Result<TrainOutcome> {
    let cfg = TrainConfig {
        strategy: Strategy::Local,
        ..config.clone()
    };
    train(params, set, &cfg, |_| {})
}

/// Learning-rate candidates searched by [`select_learning_rate`].
pub const LR_GRID: [f64; 3] = [0.1, 0.05, 0.01];

#[derive(Clone, Debug, PartialEq)]
pub struct LrChoice {
    pub learning_rate: f64,
    /// `(learning_rate, validation accuracy)` for every candidate.
    pub scores: Vec<(f64, f64)>,
}

/// Holds out a seeded 10% of `docs`, trains from `params` with each grid
/// value on the rest, and keeps the rate with the best validation accuracy
/// (earlier grid entries win ties).
pub fn select_learning_rate(
    params: &ModelParams,
    docs: &[Document],
    config: &TrainConfig,
    grid: &[f64],
) -> Result<LrChoice> {
    if docs.len() < 2 {
        return Err(Error::Config(
            "learning-rate selection needs at least two documents".into(),
        ));
    }
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_1a7e));
    let n_val = (docs.len() / 10).max(1);
    let val: Vec<Document> = order[..n_val].iter().map(|&i| docs[i].clone()).collect();
    let fit: Vec<Document> = order[n_val..].iter().map(|&i| docs[i].clone()).collect();
    let mut scores = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &lr in grid {
        let cfg = TrainConfig {
            learning_rate: lr,
            ..config.clone()
        };
        let out = train(
            params.clone(),
            TrainingSet {
                docs: &fit,
                truth: None,
            },
            &cfg,
            |_| {},
        )?;
        let acc = label_accuracy(&out.params, &val)?;
        scores.push((lr, acc));
        if best.is_none_or(|(_, b)| acc > b) {
            best = Some((lr, acc));
        }
    }
    Ok(LrChoice {
        learning_rate: best.expect("grid is nonempty").0,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::Rng;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            d_emb: 3,
            d_h: 3,
            d_a: 3,
            classes: 3,
        }
    }

    fn corpus(n_docs: usize, lens: &[usize], seed: u64) -> Vec<Document> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_docs)
            .map(|_| {
                let sentences = lens
                    .iter()
                    .map(|&l| {
                        (0..l)
                            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                            .collect()
                    })
                    .collect();
                Document::new(sentences, rng.random_range(0..3)).unwrap()
            })
            .collect()
    }

    #[test]
    fn strategy_round_trips_through_strings() {
        for s in ["exact", "local", "nonoverlap:5"] {
            assert_eq!(s.parse::<Strategy>().unwrap().to_string(), s);
        }
        for bad in ["nonoverlap:0", "nonoverlap:x", "window", ""] {
            assert!(bad.parse::<Strategy>().is_err(), "{bad}");
        }
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        c.validate().unwrap();
        c.momentum = 1.0;
        assert!(c.validate().is_err());
        c.momentum = 0.9;
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        c.learning_rate = 0.1;
        c.strategy = Strategy::NonOverlap(17);
        assert!(matches!(c.validate(), Err(Error::TooManyFreePositions { .. })));
    }

    #[test]
    fn cem_threshold_and_tie_rule() {
        assert_eq!(
            threshold_indicators(&[0.9, 0.1, 0.6]),
            IndicatorAssignment::from_bits(&[1, 0, 1])
        );
        assert_eq!(threshold_indicators(&[0.5, 0.5]), IndicatorAssignment::zeros(2));
        let mut params = ModelParams::init(&tiny_cfg(), &mut ChaCha8Rng::seed_from_u64(1));
        params.w_pi = Tensor::zeros(&[1, 3]);
        let doc = &corpus(1, &[4], 2)[0];
        assert_eq!(cem_impute(&params, doc).unwrap(), IndicatorAssignment::zeros(4));
    }

    #[test]
    fn gem_step_is_stationary_at_zero_gradient() {
        // With every parameter frozen there is nothing to move.
        let params = ModelParams::init(&tiny_cfg(), &mut ChaCha8Rng::seed_from_u64(3));
        let docs = corpus(2, &[3], 4);
        let refs: Vec<&Document> = docs.iter().collect();
        let tables: Vec<PosteriorTable> = docs
            .iter()
            .map(|d| super::super::posterior::enumerate_posterior(&params, d, Enumeration::Full, 16).unwrap())
            .collect();
        let settings = GemSettings {
            learning_rate: 0.1,
            momentum: 0.9,
            passes: 2,
            mask: Some(vec![false; crate::model::PARAM_TENSORS]),
        };
        let out = gem_step(&params, &params.zeros_like(), &refs, &tables, &settings, None).unwrap();
        assert_eq!(out.params, params);
        assert_eq!(out.q_before, out.q_after);
    }

    #[test]
    fn gem_step_does_not_lower_q() {
        let params = ModelParams::init(&tiny_cfg(), &mut ChaCha8Rng::seed_from_u64(5));
        let docs = corpus(4, &[3, 2], 6);
        let refs: Vec<&Document> = docs.iter().collect();
        let tables: Vec<PosteriorTable> = docs
            .iter()
            .map(|d| super::super::posterior::enumerate_posterior(&params, d, Enumeration::Full, 16).unwrap())
            .collect();
        let settings = GemSettings {
            learning_rate: 0.5,
            momentum: 0.9,
            passes: 4,
            mask: None,
        };
        let out = gem_step(&params, &params.zeros_like(), &refs, &tables, &settings, None).unwrap();
        assert!(out.q_after >= out.q_before - Q_SLACK);
        assert!(out.accepted + out.skipped == 4);
        assert!(out.accepted == 0 || out.min_delta >= -Q_SLACK);
    }

    #[test]
    fn exact_training_is_deterministic() {
        let params = ModelParams::init(&tiny_cfg(), &mut ChaCha8Rng::seed_from_u64(7));
        let docs = corpus(5, &[2, 2], 8);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let set = TrainingSet {
            docs: &docs,
            truth: None,
        };
        let a = train_exact_em(params.clone(), set, &cfg).unwrap();
        let b = train_exact_em(params, set, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.history, b.history);
        assert_eq!(a.history[0].evals_per_doc_sweep_max, 16);
    }

    #[test]
    fn exact_rejects_long_documents() {
        let params = ModelParams::init(&tiny_cfg(), &mut ChaCha8Rng::seed_from_u64(9));
        let docs = corpus(1, &[5, 5], 10);
        let cfg = TrainConfig {
            max_exact_n: 8,
            ..TrainConfig::default()
        };
        let err = train_exact_em(
            params,
            TrainingSet {
                docs: &docs,
                truth: None,
            },
            &cfg,
        )
        .unwrap_err();
        assert!(matches!(err, Error::TooManyFreePositions { free: 10, limit: 8 }));
    }

    #[test]
    fn local_step_two_only_moves_the_indicator_head() {
        let params = ModelParams::init(&tiny_cfg(), &mut ChaCha8Rng::seed_from_u64(11));
        let docs = corpus(2, &[5, 5], 12);
        let refs: Vec<&Document> = docs.iter().collect();
        let tables: Vec<PosteriorTable> = docs
            .iter()
            .map(|d| {
                let z = cem_impute(&params, d).unwrap();
                let free: Vec<usize> = (2..7).collect();
                super::super::posterior::enumerate_posterior(
                    &params,
                    d,
                    Enumeration::Restricted { free: &free, fixed: &z },
                    16,
                )
                .unwrap()
            })
            .collect();
        let settings = GemSettings {
            learning_rate: 0.1,
            momentum: 0.9,
            passes: 1,
            mask: Some(ModelParams::<Tensor>::indicator_head_mask()),
        };
        let out = gem_step(&params, &params.zeros_like(), &refs, &tables, &settings, None).unwrap();
        let mask = ModelParams::<Tensor>::indicator_head_mask();
        for (k, (a, b)) in out.params.items().iter().zip(params.items()).enumerate() {
            if !mask[k] {
                assert_eq!(*a, b);
            }
        }
    }
}
