//! LSTM encoders, attention pooling and the softmax classifier.
//!
//! Parameter structs are generic over their storage: `T = Tensor` holds
//! values, `T = Var` holds handles bound on a [`Graph`] for one forward pass.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Uniform draw in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for every entry.
pub fn init_uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-bound..=bound);
    }
    t
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmParams<T = Tensor> {
    pub w_i: T,
    pub w_f: T,
    pub w_c: T,
    pub w_o: T,
    pub u_i: T,
    pub u_f: T,
    pub u_c: T,
    pub u_o: T,
    pub b_i: T,
    pub b_f: T,
    pub b_c: T,
    pub b_o: T,
}

impl<T> LstmParams<T> {
    pub const NAMES: [&'static str; 12] = [
        "w_i", "w_f", "w_c", "w_o", "u_i", "u_f", "u_c", "u_o", "b_i", "b_f", "b_c", "b_o",
    ];

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> LstmParams<U> {
        LstmParams {
            w_i: f(&self.w_i),
            w_f: f(&self.w_f),
            w_c: f(&self.w_c),
            w_o: f(&self.w_o),
            u_i: f(&self.u_i),
            u_f: f(&self.u_f),
            u_c: f(&self.u_c),
            u_o: f(&self.u_o),
            b_i: f(&self.b_i),
            b_f: f(&self.b_f),
            b_c: f(&self.b_c),
            b_o: f(&self.b_o),
        }
    }

    pub fn items(&self) -> [&T; 12] {
        [
            &self.w_i, &self.w_f, &self.w_c, &self.w_o, &self.u_i, &self.u_f, &self.u_c, &self.u_o, &self.b_i,
            &self.b_f, &self.b_c, &self.b_o,
        ]
    }

    pub fn items_mut(&mut self) -> [&mut T; 12] {
        [
            &mut self.w_i,
            &mut self.w_f,
            &mut self.w_c,
            &mut self.w_o,
            &mut self.u_i,
            &mut self.u_f,
            &mut self.u_c,
            &mut self.u_o,
            &mut self.b_i,
            &mut self.b_f,
            &mut self.b_c,
            &mut self.b_o,
        ]
    }
}

impl LstmParams<Tensor> {
    pub fn zeros(d_in: usize, d_h: usize) -> Self {
        let w = Tensor::zeros(&[d_h, d_h]);
        let u = Tensor::zeros(&[d_h, d_in]);
        let b = Tensor::zeros(&[d_h]);
        LstmParams {
            w_i: w.clone(),
            w_f: w.clone(),
            w_c: w.clone(),
            w_o: w,
            u_i: u.clone(),
            u_f: u.clone(),
            u_c: u.clone(),
            u_o: u,
            b_i: b.clone(),
            b_f: b.clone(),
            b_c: b.clone(),
            b_o: b,
        }
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R, d_in: usize, d_h: usize) -> Self {
        let mut p = LstmParams::zeros(d_in, d_h);
        for w in [&mut p.w_i, &mut p.w_f, &mut p.w_c, &mut p.w_o] {
            *w = init_uniform(rng, &[d_h, d_h], d_h);
        }
        for u in [&mut p.u_i, &mut p.u_f, &mut p.u_c, &mut p.u_o] {
            *u = init_uniform(rng, &[d_h, d_in], d_in);
        }
        p
    }

    pub fn d_h(&self) -> usize {
        self.b_i.len()
    }

    pub fn d_in(&self) -> usize {
        self.u_i.dims2().1
    }

    pub fn bind(&self, g: &mut Graph) -> LstmParams<Var> {
        self.map(|t| g.input(t))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams<T = Tensor> {
    /// Projection, `d_a x d_state`.
    pub w: T,
    pub b: T,
    /// Context vector scored against the projected states.
    pub u: T,
}

impl<T> AttentionParams<T> {
    pub const NAMES: [&'static str; 3] = ["w", "b", "u"];

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> AttentionParams<U> {
        AttentionParams {
            w: f(&self.w),
            b: f(&self.b),
            u: f(&self.u),
        }
    }

    pub fn items(&self) -> [&T; 3] {
        [&self.w, &self.b, &self.u]
    }

    pub fn items_mut(&mut self) -> [&mut T; 3] {
        [&mut self.w, &mut self.b, &mut self.u]
    }
}

impl AttentionParams<Tensor> {
    pub fn zeros(d_state: usize, d_a: usize) -> Self {
        AttentionParams {
            w: Tensor::zeros(&[d_a, d_state]),
            b: Tensor::zeros(&[d_a]),
            u: Tensor::zeros(&[d_a]),
        }
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R, d_state: usize, d_a: usize) -> Self {
        AttentionParams {
            w: init_uniform(rng, &[d_a, d_state], d_state),
            b: Tensor::zeros(&[d_a]),
            u: init_uniform(rng, &[d_a], d_a),
        }
    }

    pub fn bind(&self, g: &mut Graph) -> AttentionParams<Var> {
        self.map(|t| g.input(t))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros(g: &mut Graph, d_h: usize) -> Self {
        LstmState {
            h: g.zeros(d_h),
            c: g.zeros(d_h),
        }
    }
}

fn gate(g: &mut Graph, w: Var, h: Var, u: Var, x: Var, b: Var) -> Result<Var> {
    let rec = g.affine(w, h, Some(b))?;
    let inp = g.affine(u, x, None)?;
    g.add(rec, inp)
}

/// One LSTM step: input, forget, candidate and output gates, then
/// `c = i * c~ + f * c_prev` and `h = o * tanh(c)`.
pub fn lstm_cell_step(g: &mut Graph, p: &LstmParams<Var>, prev: &LstmState, x: Var) -> Result<LstmState> {
    let i_pre = gate(g, p.w_i, prev.h, p.u_i, x, p.b_i)?;
    let i = g.sigmoid(i_pre)?;
    let f_pre = gate(g, p.w_f, prev.h, p.u_f, x, p.b_f)?;
    let f = g.sigmoid(f_pre)?;
    let c_pre = gate(g, p.w_c, prev.h, p.u_c, x, p.b_c)?;
    let cand = g.tanh(c_pre)?;
    let o_pre = gate(g, p.w_o, prev.h, p.u_o, x, p.b_o)?;
    let o = g.sigmoid(o_pre)?;
    let keep = g.mul(f, prev.c)?;
    let write = g.mul(i, cand)?;
    let c = g.add(write, keep)?;
    let tc = g.tanh(c)?;
    let h = g.mul(o, tc)?;
    Ok(LstmState { h, c })
}

pub fn lstm_encode(g: &mut Graph, p: &LstmParams<Var>, inputs: &[Var], init: LstmState) -> Result<Vec<LstmState>> {
    if inputs.is_empty() {
        return Err(Error::Empty("lstm_encode"));
    }
    let mut states = Vec::with_capacity(inputs.len());
    let mut prev = init;
    for &x in inputs {
        prev = lstm_cell_step(g, p, &prev, x)?;
        states.push(prev);
    }
    Ok(states)
}

/// Bidirectional encoding from zero initial states. Output `t` is the
/// forward state at `t` followed by the backward state at `t`.
pub fn bilstm_encode(g: &mut Graph, fwd: &LstmParams<Var>, bwd: &LstmParams<Var>, inputs: &[Var]) -> Result<Vec<Var>> {
    if inputs.is_empty() {
        return Err(Error::Empty("bilstm_encode"));
    }
    let d_f = g.shape(fwd.b_i)[0];
    let d_b = g.shape(bwd.b_i)[0];
    let init = LstmState::zeros(g, d_f);
    let forward = lstm_encode(g, fwd, inputs, init)?;
    let reversed: Vec<Var> = inputs.iter().rev().copied().collect();
    let init = LstmState::zeros(g, d_b);
    let mut backward = lstm_encode(g, bwd, &reversed, init)?;
    backward.reverse();
    forward
        .iter()
        .zip(&backward)
        .map(|(f, b)| g.concat(&[f.h, b.h]))
        .collect()
}

/// Attention pooling: `u_t = tanh(W s_t + b)`, weights `softmax(u_t . u)`,
/// pooled `sum_t weight_t s_t`. Returns `(pooled, weights)`.
pub fn attention_pool(g: &mut Graph, p: &AttentionParams<Var>, states: &[Var]) -> Result<(Var, Var)> {
    if states.is_empty() {
        return Err(Error::Empty("attention_pool"));
    }
    let mut scores = Vec::with_capacity(states.len());
    for &s in states {
        let proj = g.affine(p.w, s, Some(p.b))?;
        let act = g.tanh(proj)?;
        scores.push(g.dot(act, p.u)?);
    }
    let scores = g.concat(&scores)?;
    let weights = g.softmax(scores)?;
    let pooled = g.weighted_sum(weights, states)?;
    Ok((pooled, weights))
}

/// `softmax(W_c v + b_c)`.
pub fn classify(g: &mut Graph, w_c: Var, b_c: Var, v: Var) -> Result<Var> {
    let logits = g.affine(w_c, v, Some(b_c))?;
    g.softmax(logits)
}

pub const PROB_FLOOR: f64 = 1e-300;

/// `-ln p[label]`, with `p[label]` floored at [`PROB_FLOOR`]; flooring is
/// counted on the graph's clamp counter.
pub fn nll_loss(g: &mut Graph, p: Var, label: usize) -> Result<Var> {
    let picked = g.pick(p, label)?;
    let ln = g.ln_clamped(picked, PROB_FLOOR, 1.0)?;
    g.scale_shift(ln, -1.0, 0.0)
}
