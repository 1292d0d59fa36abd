//! The full hierarchical pipeline: word LSTM, latent indicator head,
//! word attention over phrase segments, phrase LSTM and attention, sentence
//! BiLSTM and attention, and the softmax classifier.

use std::collections::HashMap;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::{
    attention_pool, bilstm_encode, classify, init_uniform, lstm_cell_step, lstm_encode, AttentionParams, LstmParams,
    LstmState, PROB_FLOOR,
};

/// Bernoulli intensities are clamped into `[PI_CLAMP, 1 - PI_CLAMP]` before
/// taking logarithms.
pub const PI_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_emb: usize,
    pub d_h: usize,
    pub d_a: usize,
    pub classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_emb: 100,
            d_h: 50,
            d_a: 50,
            classes: 5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_emb == 0 || self.d_h == 0 || self.d_a == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config("at least two classes are required".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T = Tensor> {
    pub word_lstm: LstmParams<T>,
    pub phrase_lstm: LstmParams<T>,
    pub sent_fwd: LstmParams<T>,
    pub sent_bwd: LstmParams<T>,
    pub attn_word: AttentionParams<T>,
    pub attn_phrase: AttentionParams<T>,
    pub attn_sent: AttentionParams<T>,
    /// Indicator head, `1 x d_h`.
    pub w_pi: T,
    pub b_pi: T,
    /// Classifier, `classes x 2 d_h`.
    pub w_c: T,
    pub b_c: T,
}

/// Number of tensors in a [`ModelParams`].
pub const PARAM_TENSORS: usize = 4 * 12 + 3 * 3 + 4;

impl<T> ModelParams<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> ModelParams<U> {
        ModelParams {
            word_lstm: self.word_lstm.map(&mut f),
            phrase_lstm: self.phrase_lstm.map(&mut f),
            sent_fwd: self.sent_fwd.map(&mut f),
            sent_bwd: self.sent_bwd.map(&mut f),
            attn_word: self.attn_word.map(&mut f),
            attn_phrase: self.attn_phrase.map(&mut f),
            attn_sent: self.attn_sent.map(&mut f),
            w_pi: f(&self.w_pi),
            b_pi: f(&self.b_pi),
            w_c: f(&self.w_c),
            b_c: f(&self.b_c),
        }
    }

    /// All tensors in a fixed order shared by [`ModelParams::names`].
    pub fn items(&self) -> Vec<&T> {
        let mut out = Vec::with_capacity(PARAM_TENSORS);
        for l in [&self.word_lstm, &self.phrase_lstm, &self.sent_fwd, &self.sent_bwd] {
            out.extend(l.items());
        }
        for a in [&self.attn_word, &self.attn_phrase, &self.attn_sent] {
            out.extend(a.items());
        }
        out.extend([&self.w_pi, &self.b_pi, &self.w_c, &self.b_c]);
        out
    }

    pub fn items_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::with_capacity(PARAM_TENSORS);
        out.extend(self.word_lstm.items_mut());
        out.extend(self.phrase_lstm.items_mut());
        out.extend(self.sent_fwd.items_mut());
        out.extend(self.sent_bwd.items_mut());
        out.extend(self.attn_word.items_mut());
        out.extend(self.attn_phrase.items_mut());
        out.extend(self.attn_sent.items_mut());
        out.extend([&mut self.w_pi, &mut self.b_pi, &mut self.w_c, &mut self.b_c]);
        out
    }

    pub fn names() -> Vec<String> {
        let mut out = Vec::with_capacity(PARAM_TENSORS);
        for layer in ["word_lstm", "phrase_lstm", "sent_fwd", "sent_bwd"] {
            out.extend(LstmParams::<T>::NAMES.iter().map(|n| format!("{layer}.{n}")));
        }
        for head in ["attn_word", "attn_phrase", "attn_sent"] {
            out.extend(AttentionParams::<T>::NAMES.iter().map(|n| format!("{head}.{n}")));
        }
        out.extend(["w_pi", "b_pi", "w_c", "b_c"].map(String::from));
        out
    }

    /// Mask over [`ModelParams::items`] selecting only the indicator head.
    pub fn indicator_head_mask() -> Vec<bool> {
        let mut mask = vec![false; PARAM_TENSORS];
        mask[PARAM_TENSORS - 4] = true;
        mask[PARAM_TENSORS - 3] = true;
        mask
    }
}

impl ModelParams<Tensor> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        ModelParams {
            word_lstm: LstmParams::zeros(cfg.d_emb, cfg.d_h),
            phrase_lstm: LstmParams::zeros(cfg.d_h, cfg.d_h),
            sent_fwd: LstmParams::zeros(cfg.d_h, cfg.d_h),
            sent_bwd: LstmParams::zeros(cfg.d_h, cfg.d_h),
            attn_word: AttentionParams::zeros(cfg.d_h, cfg.d_a),
            attn_phrase: AttentionParams::zeros(cfg.d_h, cfg.d_a),
            attn_sent: AttentionParams::zeros(2 * cfg.d_h, cfg.d_a),
            w_pi: Tensor::zeros(&[1, cfg.d_h]),
            b_pi: Tensor::zeros(&[1]),
            w_c: Tensor::zeros(&[cfg.classes, 2 * cfg.d_h]),
            b_c: Tensor::zeros(&[cfg.classes]),
        }
    }

    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        ModelParams {
            word_lstm: LstmParams::init(rng, cfg.d_emb, cfg.d_h),
            phrase_lstm: LstmParams::init(rng, cfg.d_h, cfg.d_h),
            sent_fwd: LstmParams::init(rng, cfg.d_h, cfg.d_h),
            sent_bwd: LstmParams::init(rng, cfg.d_h, cfg.d_h),
            attn_word: AttentionParams::init(rng, cfg.d_h, cfg.d_a),
            attn_phrase: AttentionParams::init(rng, cfg.d_h, cfg.d_a),
            attn_sent: AttentionParams::init(rng, 2 * cfg.d_h, cfg.d_a),
            w_pi: init_uniform(rng, &[1, cfg.d_h], cfg.d_h),
            b_pi: Tensor::zeros(&[1]),
            w_c: init_uniform(rng, &[cfg.classes, 2 * cfg.d_h], 2 * cfg.d_h),
            b_c: Tensor::zeros(&[cfg.classes]),
        }
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            d_emb: self.word_lstm.d_in(),
            d_h: self.word_lstm.d_h(),
            d_a: self.attn_word.b.len(),
            classes: self.b_c.len(),
        }
    }

    /// Checks every tensor against the shapes implied by [`ModelParams::config`].
    pub fn validate(&self) -> Result<()> {
        let cfg = self.config();
        cfg.validate()?;
        let reference = ModelParams::zeros(&cfg);
        for (have, want) in self.items().into_iter().zip(reference.items()) {
            if have.shape() != want.shape() {
                return Err(Error::shape("model params", have.shape(), want.shape()));
            }
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph) -> ModelParams<Var> {
        self.map(|t| g.input(t))
    }

    pub fn zeros_like(&self) -> Self {
        self.map(Tensor::zeros_like)
    }

    pub fn all_finite(&self) -> bool {
        self.items().iter().all(|t| t.all_finite())
    }
}

impl ModelParams<Var> {
    pub fn grads(&self, g: &Graph) -> ModelParams<Tensor> {
        self.map(|v| g.grad(*v))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub sentences: Vec<Vec<Vec<f64>>>,
    pub label: usize,
}

impl Document {
    pub fn new(sentences: Vec<Vec<Vec<f64>>>, label: usize) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::Empty("document"));
        }
        if sentences.iter().any(|s| s.is_empty()) {
            return Err(Error::Empty("sentence"));
        }
        Ok(Document { sentences, label })
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    /// Global token ranges of each sentence.
    pub fn sentence_spans(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.sentences
            .iter()
            .map(|s| {
                let r = start..start + s.len();
                start = r.end;
                r
            })
            .collect()
    }

    /// Positions whose indicator does not affect segmentation.
    pub fn sentence_final_positions(&self) -> Vec<usize> {
        self.sentence_spans().into_iter().map(|r| r.end - 1).collect()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.sentences.iter().flatten()
    }
}

/// One latent phrase-end bit per token, in document order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IndicatorAssignment(pub Vec<bool>);

impl IndicatorAssignment {
    pub fn zeros(n: usize) -> Self {
        IndicatorAssignment(vec![false; n])
    }

    pub fn ones(n: usize) -> Self {
        IndicatorAssignment(vec![true; n])
    }

    pub fn from_bits(bits: &[u8]) -> Self {
        IndicatorAssignment(bits.iter().map(|&b| b != 0).collect())
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check_len(&self, doc: &Document) -> Result<()> {
        let n = doc.token_count();
        if self.0.len() != n {
            return Err(Error::AssignmentLength {
                expected: n,
                got: self.0.len(),
            });
        }
        Ok(())
    }
}

/// Splits every sentence into phrase segments: a segment closes at each
/// position with `z = 1` and always at the sentence-final token.
pub fn segments_from(doc: &Document, z: &IndicatorAssignment) -> Result<Vec<Vec<Range<usize>>>> {
    z.check_len(doc)?;
    Ok(doc
        .sentence_spans()
        .into_iter()
        .map(|span| sentence_segments(span, z.bits()))
        .collect())
}

fn sentence_segments(span: Range<usize>, bits: &[bool]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = span.start;
    for t in span.clone() {
        if bits[t] || t + 1 == span.end {
            out.push(start..t + 1);
            start = t + 1;
        }
    }
    out
}

/// Attention weights of one forward pass, for interpretation reports.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    /// Global token ranges of the phrase segments, per sentence.
    pub segments: Vec<Vec<Range<usize>>>,
    /// Word weights within each segment, per sentence.
    pub alpha: Vec<Vec<Vec<f64>>>,
    /// Phrase weights, per sentence.
    pub beta: Vec<Vec<f64>>,
    /// Sentence weights.
    pub gamma: Vec<f64>,
}

impl AttentionTrace {
    /// Drill-down to the most attended word: highest-gamma sentence, then its
    /// highest-beta phrase, then that phrase's highest-alpha word.
    pub fn top_word(&self) -> Option<usize> {
        let s = argmax(&self.gamma)?;
        let p = argmax(&self.beta[s])?;
        let w = argmax(&self.alpha[s][p])?;
        Some(self.segments[s][p].start + w)
    }
}

/// Index of the first maximum.
pub fn argmax(xs: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in xs.iter().enumerate() {
        match best {
            Some(b) if xs[b] >= x => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Word-layer hidden states per sentence; the LSTM state is reset to zero at
/// each sentence start and runs through phrase boundaries.
pub fn word_states(g: &mut Graph, p: &ModelParams<Var>, doc: &Document) -> Result<Vec<Vec<Var>>> {
    let d_h = g.shape(p.word_lstm.b_i)[0];
    let mut out = Vec::with_capacity(doc.sentences.len());
    for sentence in &doc.sentences {
        let inputs: Vec<Var> = sentence.iter().map(|x| g.constant_vector(x.clone())).collect();
        let init = LstmState::zeros(g, d_h);
        let states = lstm_encode(g, &p.word_lstm, &inputs, init)?;
        out.push(states.into_iter().map(|s| s.h).collect());
    }
    Ok(out)
}

/// `pi_t = sigmoid(W_pi h_t + b_pi)` as one scalar node per token.
pub fn indicator_nodes(g: &mut Graph, p: &ModelParams<Var>, word_h: &[Vec<Var>]) -> Result<Vec<Var>> {
    let mut out = Vec::new();
    for h in word_h.iter().flatten() {
        let logit = g.affine(p.w_pi, *h, Some(p.b_pi))?;
        out.push(g.sigmoid(logit)?);
    }
    Ok(out)
}

pub fn indicator_probs(params: &ModelParams, doc: &Document) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let word_h = word_states(&mut g, &p, doc)?;
    let pis = indicator_nodes(&mut g, &p, &word_h)?;
    Ok(pis.iter().map(|v| g.scalar(*v)).collect())
}

struct SentenceVector {
    vector: Var,
    alpha: Vec<Var>,
    beta: Var,
}

/// Word attention within each segment, phrase LSTM from a zero state, then
/// phrase attention; `segments` are local to `word_h`.
fn sentence_vector(
    g: &mut Graph,
    p: &ModelParams<Var>,
    word_h: &[Var],
    segments: &[Range<usize>],
) -> Result<SentenceVector> {
    let mut phrases = Vec::with_capacity(segments.len());
    let mut alpha = Vec::with_capacity(segments.len());
    for seg in segments {
        let (q, a) = attention_pool(g, &p.attn_word, &word_h[seg.clone()])?;
        phrases.push(q);
        alpha.push(a);
    }
    let d_h = g.shape(p.phrase_lstm.b_i)[0];
    let init = LstmState::zeros(g, d_h);
    let phrase_h: Vec<Var> = lstm_encode(g, &p.phrase_lstm, &phrases, init)?
        .into_iter()
        .map(|s| s.h)
        .collect();
    let (vector, beta) = attention_pool(g, &p.attn_phrase, &phrase_h)?;
    Ok(SentenceVector { vector, alpha, beta })
}

/// Sentence BiLSTM, sentence attention and classifier; returns `(p, gamma)`.
fn document_probs(g: &mut Graph, p: &ModelParams<Var>, sentence_vectors: &[Var]) -> Result<(Var, Var)> {
    let annotations = bilstm_encode(g, &p.sent_fwd, &p.sent_bwd, sentence_vectors)?;
    let (v, gamma) = attention_pool(g, &p.attn_sent, &annotations)?;
    Ok((classify(g, p.w_c, p.b_c, v)?, gamma))
}

/// Graph-level forward pass for a fixed assignment.
pub fn forward_given_z_graph(
    g: &mut Graph,
    p: &ModelParams<Var>,
    doc: &Document,
    word_h: &[Vec<Var>],
    z: &IndicatorAssignment,
) -> Result<(Var, AttentionTrace)> {
    let segments = segments_from(doc, z)?;
    let spans = doc.sentence_spans();
    let mut svecs = Vec::with_capacity(segments.len());
    let mut alpha = Vec::new();
    let mut beta = Vec::new();
    for ((segs, span), h) in segments.iter().zip(&spans).zip(word_h) {
        let local: Vec<Range<usize>> = segs.iter().map(|r| r.start - span.start..r.end - span.start).collect();
        let sv = sentence_vector(g, p, h, &local)?;
        svecs.push(sv.vector);
        alpha.push(sv.alpha.iter().map(|a| g.value(*a).to_vec()).collect());
        beta.push(g.value(sv.beta).to_vec());
    }
    let (probs, gamma) = document_probs(g, p, &svecs)?;
    let trace = AttentionTrace {
        segments,
        alpha,
        beta,
        gamma: g.value(gamma).to_vec(),
    };
    Ok((probs, trace))
}

pub fn forward_given_z(
    params: &ModelParams,
    doc: &Document,
    z: &IndicatorAssignment,
) -> Result<(Vec<f64>, AttentionTrace)> {
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let word_h = word_states(&mut g, &p, doc)?;
    let (probs, trace) = forward_given_z_graph(&mut g, &p, doc, &word_h, z)?;
    Ok((g.value(probs).to_vec(), trace))
}

/// `ln pi_t` and `ln (1 - pi_t)` nodes with the intensity clamped.
pub fn bernoulli_log_nodes(g: &mut Graph, pis: &[Var]) -> Result<(Vec<Var>, Vec<Var>)> {
    let mut log_on = Vec::with_capacity(pis.len());
    let mut log_off = Vec::with_capacity(pis.len());
    for &pi in pis {
        log_on.push(g.ln_clamped(pi, PI_CLAMP, 1.0 - PI_CLAMP)?);
        let off = g.scale_shift(pi, -1.0, 1.0)?;
        log_off.push(g.ln_clamped(off, PI_CLAMP, 1.0 - PI_CLAMP)?);
    }
    Ok((log_on, log_off))
}

fn check_label(p: &ModelParams<Var>, g: &Graph, doc: &Document) -> Result<()> {
    let classes = g.shape(p.b_c)[0];
    if doc.label >= classes {
        return Err(Error::LabelOutOfRange {
            label: doc.label,
            classes,
        });
    }
    Ok(())
}

/// `ln p(y | Z, w) + sum_t [z_t ln pi_t + (1 - z_t) ln (1 - pi_t)]` as a node.
pub fn complete_log_likelihood_graph(
    g: &mut Graph,
    p: &ModelParams<Var>,
    doc: &Document,
    z: &IndicatorAssignment,
) -> Result<Var> {
    z.check_len(doc)?;
    check_label(p, g, doc)?;
    let word_h = word_states(g, p, doc)?;
    let pis = indicator_nodes(g, p, &word_h)?;
    let (log_on, log_off) = bernoulli_log_nodes(g, &pis)?;
    let (probs, _) = forward_given_z_graph(g, p, doc, &word_h, z)?;
    let picked = g.pick(probs, doc.label)?;
    let label_ll = g.ln_clamped(picked, PROB_FLOOR, 1.0)?;
    let mut items = vec![label_ll];
    for (t, &bit) in z.bits().iter().enumerate() {
        items.push(if bit { log_on[t] } else { log_off[t] });
    }
    let ones = vec![1.0; items.len()];
    g.lin_comb(&items, &ones)
}

pub fn complete_log_likelihood(params: &ModelParams, doc: &Document, z: &IndicatorAssignment) -> Result<f64> {
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let ll = complete_log_likelihood_graph(&mut g, &p, doc, z)?;
    Ok(g.scalar(ll))
}

/// Hard assignment `z_t = 1` iff `pi_t > 0.5`.
pub fn threshold_indicators(pis: &[f64]) -> IndicatorAssignment {
    IndicatorAssignment(pis.iter().map(|&p| p > 0.5).collect())
}

#[derive(Clone, Debug)]
pub struct Prediction {
    pub label: usize,
    pub probs: Vec<f64>,
    pub pis: Vec<f64>,
    pub z: IndicatorAssignment,
    pub trace: AttentionTrace,
}

pub fn predict(params: &ModelParams, doc: &Document) -> Result<Prediction> {
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let word_h = word_states(&mut g, &p, doc)?;
    let pis: Vec<f64> = indicator_nodes(&mut g, &p, &word_h)?
        .iter()
        .map(|v| g.scalar(*v))
        .collect();
    let z = threshold_indicators(&pis);
    let (probs, trace) = forward_given_z_graph(&mut g, &p, doc, &word_h, &z)?;
    let probs = g.value(probs).to_vec();
    let label = argmax(&probs).expect("at least two classes");
    Ok(Prediction {
        label,
        probs,
        pis,
        z,
        trace,
    })
}

/// Many assignments of one document evaluated on a single graph.
///
/// Word states and indicator probabilities are built once. Sentence vectors
/// are shared between assignments that segment a sentence identically, and
/// BiLSTM states are shared across common prefixes/suffixes of sentence
/// vectors, so each distinct segmentation is computed once.
pub struct SharedEvaluation {
    /// Per distinct document segmentation, the `ln p(y | Z, w)` node.
    pub label_ll: Vec<Var>,
    /// For each input assignment, its index into `label_ll`.
    pub segmentation_of: Vec<usize>,
    pub log_on: Vec<Var>,
    pub log_off: Vec<Var>,
    pub pis: Vec<f64>,
    /// Complete-data log-likelihood of each input assignment.
    pub complete_ll: Vec<f64>,
}

impl SharedEvaluation {
    pub fn build(g: &mut Graph, p: &ModelParams<Var>, doc: &Document, configs: &[IndicatorAssignment]) -> Result<Self> {
        check_label(p, g, doc)?;
        for z in configs {
            z.check_len(doc)?;
        }
        let word_h = word_states(g, p, doc)?;
        let pi_nodes = indicator_nodes(g, p, &word_h)?;
        let pis: Vec<f64> = pi_nodes.iter().map(|v| g.scalar(*v)).collect();
        let (log_on, log_off) = bernoulli_log_nodes(g, &pi_nodes)?;
        let spans = doc.sentence_spans();

        // Sentence vectors keyed by (sentence, non-final bits of the sentence).
        let mut sent_index: Vec<HashMap<Vec<bool>, usize>> = vec![HashMap::new(); spans.len()];
        let mut sent_vectors: Vec<Var> = Vec::new();
        let mut doc_index: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut doc_keys: Vec<Vec<usize>> = Vec::new();
        let mut segmentation_of = Vec::with_capacity(configs.len());
        for z in configs {
            let mut key = Vec::with_capacity(spans.len());
            for (s, span) in spans.iter().enumerate() {
                let bits = z.bits()[span.start..span.end - 1].to_vec();
                let id = match sent_index[s].get(&bits) {
                    Some(&id) => id,
                    None => {
                        let segs = sentence_segments(0..span.len(), &z.bits()[span.start..span.end]);
                        let sv = sentence_vector(g, p, &word_h[s], &segs)?;
                        sent_vectors.push(sv.vector);
                        let id = sent_vectors.len() - 1;
                        sent_index[s].insert(bits, id);
                        id
                    }
                };
                key.push(id);
            }
            let di = match doc_index.get(&key) {
                Some(&di) => di,
                None => {
                    doc_keys.push(key.clone());
                    doc_index.insert(key, doc_keys.len() - 1);
                    doc_keys.len() - 1
                }
            };
            segmentation_of.push(di);
        }

        let d_f = g.shape(p.sent_fwd.b_i)[0];
        let d_b = g.shape(p.sent_bwd.b_i)[0];
        let zero_f = LstmState::zeros(g, d_f);
        let zero_b = LstmState::zeros(g, d_b);
        let mut fwd_memo: HashMap<Vec<usize>, LstmState> = HashMap::new();
        let mut bwd_memo: HashMap<Vec<usize>, LstmState> = HashMap::new();
        let mut label_ll = Vec::with_capacity(doc_keys.len());
        for key in &doc_keys {
            let l = key.len();
            let mut fwd_h = Vec::with_capacity(l);
            let mut prev = zero_f;
            for t in 0..l {
                let prefix = key[..=t].to_vec();
                prev = match fwd_memo.get(&prefix) {
                    Some(s) => *s,
                    None => {
                        let s = lstm_cell_step(g, &p.sent_fwd, &prev, sent_vectors[key[t]])?;
                        fwd_memo.insert(prefix, s);
                        s
                    }
                };
                fwd_h.push(prev.h);
            }
            let mut bwd_h = vec![prev.h; l];
            let mut prev = zero_b;
            for t in (0..l).rev() {
                let suffix = key[t..].to_vec();
                prev = match bwd_memo.get(&suffix) {
                    Some(s) => *s,
                    None => {
                        let s = lstm_cell_step(g, &p.sent_bwd, &prev, sent_vectors[key[t]])?;
                        bwd_memo.insert(suffix, s);
                        s
                    }
                };
                bwd_h[t] = prev.h;
            }
            let annotations = fwd_h
                .iter()
                .zip(&bwd_h)
                .map(|(f, b)| g.concat(&[*f, *b]))
                .collect::<Result<Vec<_>>>()?;
            let (v, _) = attention_pool(g, &p.attn_sent, &annotations)?;
            let probs = classify(g, p.w_c, p.b_c, v)?;
            let picked = g.pick(probs, doc.label)?;
            label_ll.push(g.ln_clamped(picked, PROB_FLOOR, 1.0)?);
        }

        let on: Vec<f64> = log_on.iter().map(|v| g.scalar(*v)).collect();
        let off: Vec<f64> = log_off.iter().map(|v| g.scalar(*v)).collect();
        let complete_ll = configs
            .iter()
            .zip(&segmentation_of)
            .map(|(z, &di)| {
                let mut acc = g.scalar(label_ll[di]);
                for (t, &bit) in z.bits().iter().enumerate() {
                    acc += if bit { on[t] } else { off[t] };
                }
                acc
            })
            .collect();
        Ok(SharedEvaluation {
            label_ll,
            segmentation_of,
            log_on,
            log_off,
            pis,
            complete_ll,
        })
    }

    /// Node for `sum_k weights[k] * complete_ll[k]` with constant weights.
    pub fn weighted_objective(&self, g: &mut Graph, configs: &[IndicatorAssignment], weights: &[f64]) -> Result<Var> {
        let mut seg_w = vec![0.0; self.label_ll.len()];
        let n = self.log_on.len();
        let mut on_w = vec![0.0; n];
        let mut off_w = vec![0.0; n];
        for ((z, &w), &di) in configs.iter().zip(weights).zip(&self.segmentation_of) {
            seg_w[di] += w;
            for (t, &bit) in z.bits().iter().enumerate() {
                if bit {
                    on_w[t] += w;
                } else {
                    off_w[t] += w;
                }
            }
        }
        let mut items = self.label_ll.clone();
        items.extend(&self.log_on);
        items.extend(&self.log_off);
        let mut coeffs = seg_w;
        coeffs.extend(on_w);
        coeffs.extend(off_w);
        g.lin_comb(&items, &coeffs)
    }
}
