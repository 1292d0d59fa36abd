//! E-step: enumeration of indicator configurations and the Q function.

use crate::autodiff::{log_sum_exp, Graph};
use crate::error::{Error, Result};
use crate::model::{complete_log_likelihood, Document, IndicatorAssignment, ModelParams, SharedEvaluation};

/// Default ceiling on the number of enumerated positions (2^16 configurations).
pub const DEFAULT_MAX_EXACT_N: usize = 16;

/// Which indicator positions are enumerated.
#[derive(Clone, Copy, Debug)]
pub enum Enumeration<'a> {
    /// Every position of the document.
    Full,
    /// Only `free` positions; all others are held at `fixed`.
    Restricted {
        free: &'a [usize],
        fixed: &'a IndicatorAssignment,
    },
}

/// Posterior over enumerated configurations of one document.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorTable {
    pub configs: Vec<IndicatorAssignment>,
    pub weights: Vec<f64>,
    /// `ln p(y, Z | w)` of each configuration at the parameters that built
    /// the table.
    pub log_joint: Vec<f64>,
}

impl PosteriorTable {
    /// A table holding one configuration with weight 1.
    pub fn single(z: IndicatorAssignment, log_joint: f64) -> Self {
        PosteriorTable {
            configs: vec![z],
            weights: vec![1.0],
            log_joint: vec![log_joint],
        }
    }

    /// Normalizes `exp(log_joint)` into weights by log-sum-exp.
    pub fn from_log_joint(configs: Vec<IndicatorAssignment>, log_joint: Vec<f64>) -> Self {
        let total = log_sum_exp(&log_joint);
        let weights = log_joint.iter().map(|l| (l - total).exp()).collect();
        PosteriorTable {
            configs,
            weights,
            log_joint,
        }
    }

    /// `ln sum_Z p(y, Z | w)` over the enumerated configurations.
    pub fn log_marginal(&self) -> f64 {
        log_sum_exp(&self.log_joint)
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }
}

/// Lists the `2^|free|` configurations in binary counting order; bit `j` of
/// the counter drives position `free[j]`.
pub fn enumerate_configs(doc: &Document, en: Enumeration<'_>, max_free: usize) -> Result<Vec<IndicatorAssignment>> {
    let n = doc.token_count();
    let all: Vec<usize>;
    let (free, base) = match en {
        Enumeration::Full => {
            all = (0..n).collect();
            (all.as_slice(), IndicatorAssignment::zeros(n))
        }
        Enumeration::Restricted { free, fixed } => {
            fixed.check_len(doc)?;
            (free, fixed.clone())
        }
    };
    if free.len() > max_free {
        return Err(Error::TooManyFreePositions {
            free: free.len(),
            limit: max_free,
        });
    }
    if let Some(&bad) = free.iter().find(|&&t| t >= n) {
        return Err(Error::AssignmentLength {
            expected: n,
            got: bad + 1,
        });
    }
    let count = 1usize << free.len();
    let mut out = Vec::with_capacity(count);
    for mask in 0..count {
        let mut z = base.clone();
        for (j, &t) in free.iter().enumerate() {
            z.0[t] = mask >> j & 1 == 1;
        }
        out.push(z);
    }
    Ok(out)
}

/// E-step for one document. The configuration count is `2^|free|`.
pub fn enumerate_posterior(
    params: &ModelParams,
    doc: &Document,
    en: Enumeration<'_>,
    max_free: usize,
) -> Result<PosteriorTable> {
    let configs = enumerate_configs(doc, en, max_free)?;
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let shared = SharedEvaluation::build(&mut g, &p, doc, &configs)?;
    Ok(PosteriorTable::from_log_joint(configs, shared.complete_ll))
}

/// `Q = sum_k weights[k] * ln p(y, Z_k | w; params)` with the table's weights
/// held constant.
pub fn q_value(params: &ModelParams, doc: &Document, table: &PosteriorTable) -> Result<f64> {
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let shared = SharedEvaluation::build(&mut g, &p, doc, &table.configs)?;
    Ok(shared.complete_ll.iter().zip(&table.weights).map(|(l, w)| w * l).sum())
}

/// Q evaluated one configuration at a time; used as an independent check of
/// the shared-graph evaluation.
pub fn q_value_per_config(params: &ModelParams, doc: &Document, table: &PosteriorTable) -> Result<f64> {
    let mut total = 0.0;
    for (z, w) in table.configs.iter().zip(&table.weights) {
        total += w * complete_log_likelihood(params, doc, z)?;
    }
    Ok(total)
}

/// Q and its gradient with respect to every parameter.
pub fn q_value_and_grad(params: &ModelParams, doc: &Document, table: &PosteriorTable) -> Result<(f64, ModelParams)> {
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let shared = SharedEvaluation::build(&mut g, &p, doc, &table.configs)?;
    let q = shared.weighted_objective(&mut g, &table.configs, &table.weights)?;
    g.backward(q)?;
    Ok((g.scalar(q), p.grads(&g)))
}

/// E-step and the gradient of `Q(. | current)` at the current parameters,
/// sharing one forward pass.
pub fn posterior_with_grad(
    params: &ModelParams,
    doc: &Document,
    en: Enumeration<'_>,
    max_free: usize,
) -> Result<(PosteriorTable, f64, ModelParams)> {
    let configs = enumerate_configs(doc, en, max_free)?;
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let shared = SharedEvaluation::build(&mut g, &p, doc, &configs)?;
    let table = PosteriorTable::from_log_joint(configs, shared.complete_ll.clone());
    let q = shared.weighted_objective(&mut g, &table.configs, &table.weights)?;
    g.backward(q)?;
    Ok((table, g.scalar(q), p.grads(&g)))
}
