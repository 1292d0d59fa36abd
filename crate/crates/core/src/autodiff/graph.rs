//! Define-by-run tape for reverse-mode differentiation.
//!
//! Every primitive appends one node holding its forward value. `backward`
//! walks the tape once in reverse append order, so gradient accumulation is
//! deterministic and each node is visited exactly once.

use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed)
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

/// Elementwise primitives accepted by [`Graph::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Sigmoid,
    Tanh,
    Hadamard,
    Add,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Affine { w: usize, x: usize, b: Option<usize> },
    Add(usize, usize),
    Mul(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Softmax(usize),
    Dot(usize, usize),
    Concat(Vec<usize>),
    WeightedSum { weights: usize, items: Vec<usize> },
    Pick { src: usize, at: usize },
    Ln { src: usize, lo: f64, hi: f64 },
    ScaleShift { src: usize, scale: f64 },
    Sum(usize),
    LinComb { items: Vec<usize>, coeffs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
}

#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    clamp_events: usize,
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: fresh_id(),
            nodes: Vec::new(),
            grads: Vec::new(),
            clamp_events: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node. Handles issued before the call become foreign.
    pub fn clear(&mut self) {
        self.id = fresh_id();
        self.nodes.clear();
        self.grads.clear();
        self.clamp_events = 0;
    }

    pub fn zero_grad(&mut self) {
        for g in self.grads.iter_mut() {
            *g = None;
        }
    }

    /// Number of logarithm evaluations whose argument had to be clamped.
    pub fn clamp_events(&self) -> usize {
        self.clamp_events
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignNode);
        }
        Ok(v.index)
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node { shape, value, op });
        self.grads.push(None);
        Var { graph: self.id, index }
    }

    pub fn value(&self, v: Var) -> &[f64] {
        assert_eq!(v.graph, self.id, "value read through a foreign handle");
        &self.nodes[v.index].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        assert_eq!(v.graph, self.id, "shape read through a foreign handle");
        &self.nodes[v.index].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape is consistent")
    }

    /// Accumulated gradient of a node; zeros if backward never reached it.
    pub fn grad(&self, v: Var) -> Tensor {
        assert_eq!(v.graph, self.id, "grad read through a foreign handle");
        let node = &self.nodes[v.index];
        match &self.grads[v.index] {
            Some(g) => Tensor::new(node.shape.clone(), g.clone()).expect("grad shape"),
            None => Tensor::zeros(&node.shape),
        }
    }

    pub fn input(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf)
    }

    pub fn constant_vector(&mut self, data: Vec<f64>) -> Var {
        self.push(vec![data.len()], data, Op::Leaf)
    }

    pub fn zeros(&mut self, len: usize) -> Var {
        self.push(vec![len], vec![0.0; len], Op::Leaf)
    }

    /// `w x + b` for an `m x n` matrix `w`, length-`n` vector `x`, length-`m` bias.
    pub fn affine(&mut self, w: Var, x: Var, b: Option<Var>) -> Result<Var> {
        let (wi, xi) = (self.idx(w)?, self.idx(x)?);
        let bi = b.map(|b| self.idx(b)).transpose()?;
        let wn = &self.nodes[wi];
        let xn = &self.nodes[xi];
        let (m, n) = match wn.shape.as_slice() {
            [m, n] => (*m, *n),
            _ => return Err(Error::shape("affine", &wn.shape, &xn.shape)),
        };
        if xn.value.len() != n || xn.shape.len() != 1 {
            return Err(Error::shape("affine", &wn.shape, &xn.shape));
        }
        let mut out = match bi {
            Some(bi) => {
                let bn = &self.nodes[bi];
                if bn.value.len() != m {
                    return Err(Error::shape("affine", &wn.shape, &bn.shape));
                }
                bn.value.clone()
            }
            None => vec![0.0; m],
        };
        let x = &xn.value;
        for (row, o) in wn.value.chunks_exact(n).zip(out.iter_mut()) {
            *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(self.push(vec![m], out, Op::Affine { w: wi, x: xi, b: bi }))
    }

    fn same_shape(&self, op: &'static str, a: usize, b: usize) -> Result<()> {
        let (sa, sb) = (&self.nodes[a].shape, &self.nodes[b].shape);
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    pub fn elementwise(&mut self, kind: Elementwise, args: &[Var]) -> Result<Var> {
        match (kind, args) {
            (Elementwise::Sigmoid, [a]) => self.sigmoid(*a),
            (Elementwise::Tanh, [a]) => self.tanh(*a),
            (Elementwise::Hadamard, [a, b]) => self.mul(*a, *b),
            (Elementwise::Add, [a, b]) => self.add(*a, *b),
            _ => Err(Error::shape("elementwise", &[args.len()], &[])),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        self.same_shape("add", ai, bi)?;
        let value = self.nodes[ai]
            .value
            .iter()
            .zip(&self.nodes[bi].value)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[ai].shape.clone();
        Ok(self.push(shape, value, Op::Add(ai, bi)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        self.same_shape("hadamard", ai, bi)?;
        let value = self.nodes[ai]
            .value
            .iter()
            .zip(&self.nodes[bi].value)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[ai].shape.clone();
        Ok(self.push(shape, value, Op::Mul(ai, bi)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let value = self.nodes[ai].value.iter().map(|&x| sigmoid(x)).collect();
        let shape = self.nodes[ai].shape.clone();
        Ok(self.push(shape, value, Op::Sigmoid(ai)))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let value = self.nodes[ai].value.iter().map(|x| x.tanh()).collect();
        let shape = self.nodes[ai].shape.clone();
        Ok(self.push(shape, value, Op::Tanh(ai)))
    }

    /// Softmax over all entries, with the maximum subtracted before exponentiation.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let x = &self.nodes[ai].value;
        if x.is_empty() {
            return Err(Error::Empty("softmax"));
        }
        let value = softmax_values(x);
        let shape = self.nodes[ai].shape.clone();
        Ok(self.push(shape, value, Op::Softmax(ai)))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        self.same_shape("dot", ai, bi)?;
        let value = self.nodes[ai]
            .value
            .iter()
            .zip(&self.nodes[bi].value)
            .map(|(x, y)| x * y)
            .sum();
        Ok(self.push(vec![1], vec![value], Op::Dot(ai, bi)))
    }

    /// Concatenates vectors (scalars count as length-1 vectors).
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty("concat"));
        }
        let idx = parts.iter().map(|&p| self.idx(p)).collect::<Result<Vec<_>>>()?;
        let mut value = Vec::new();
        for &i in &idx {
            if self.nodes[i].shape.len() != 1 {
                return Err(Error::shape("concat", &self.nodes[i].shape, &[]));
            }
            value.extend_from_slice(&self.nodes[i].value);
        }
        Ok(self.push(vec![value.len()], value, Op::Concat(idx)))
    }

    /// `sum_k weights[k] * items[k]` for equally shaped vectors.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        let wi = self.idx(weights)?;
        if items.is_empty() {
            return Err(Error::Empty("weighted_sum"));
        }
        let idx = items.iter().map(|&p| self.idx(p)).collect::<Result<Vec<_>>>()?;
        if self.nodes[wi].value.len() != idx.len() {
            return Err(Error::shape("weighted_sum", &self.nodes[wi].shape, &[idx.len()]));
        }
        let shape = self.nodes[idx[0]].shape.clone();
        let mut value = vec![0.0; self.nodes[idx[0]].value.len()];
        for (k, &i) in idx.iter().enumerate() {
            if self.nodes[i].shape != shape {
                return Err(Error::shape("weighted_sum", &shape, &self.nodes[i].shape));
            }
            let w = self.nodes[wi].value[k];
            for (o, x) in value.iter_mut().zip(&self.nodes[i].value) {
                *o += w * x;
            }
        }
        Ok(self.push(
            shape,
            value,
            Op::WeightedSum {
                weights: wi,
                items: idx,
            },
        ))
    }

    pub fn pick(&mut self, a: Var, at: usize) -> Result<Var> {
        let ai = self.idx(a)?;
        let len = self.nodes[ai].value.len();
        if at >= len {
            return Err(Error::LabelOutOfRange {
                label: at,
                classes: len,
            });
        }
        let v = self.nodes[ai].value[at];
        Ok(self.push(vec![1], vec![v], Op::Pick { src: ai, at }))
    }

    /// Natural log of `clamp(x, lo, hi)`; clamped coordinates pass no gradient
    /// and are counted in [`Graph::clamp_events`].
    pub fn ln_clamped(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let ai = self.idx(a)?;
        let mut clamps = 0;
        let value = self.nodes[ai]
            .value
            .iter()
            .map(|&x| {
                let c = x.clamp(lo, hi);
                if c != x {
                    clamps += 1;
                }
                c.ln()
            })
            .collect();
        self.clamp_events += clamps;
        let shape = self.nodes[ai].shape.clone();
        Ok(self.push(shape, value, Op::Ln { src: ai, lo, hi }))
    }

    /// `scale * x + shift`, elementwise.
    pub fn scale_shift(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let ai = self.idx(a)?;
        let value = self.nodes[ai].value.iter().map(|x| scale * x + shift).collect();
        let shape = self.nodes[ai].shape.clone();
        Ok(self.push(shape, value, Op::ScaleShift { src: ai, scale }))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let v = self.nodes[ai].value.iter().sum();
        Ok(self.push(vec![1], vec![v], Op::Sum(ai)))
    }

    /// `sum_k coeffs[k] * items[k]` over scalar nodes with constant coefficients.
    pub fn lin_comb(&mut self, items: &[Var], coeffs: &[f64]) -> Result<Var> {
        if items.len() != coeffs.len() {
            return Err(Error::shape("lin_comb", &[items.len()], &[coeffs.len()]));
        }
        if items.is_empty() {
            return Err(Error::Empty("lin_comb"));
        }
        let idx = items.iter().map(|&p| self.idx(p)).collect::<Result<Vec<_>>>()?;
        let shape = self.nodes[idx[0]].shape.clone();
        let mut value = vec![0.0; self.nodes[idx[0]].value.len()];
        for (&i, &c) in idx.iter().zip(coeffs) {
            if self.nodes[i].shape != shape {
                return Err(Error::shape("lin_comb", &shape, &self.nodes[i].shape));
            }
            for (o, x) in value.iter_mut().zip(&self.nodes[i].value) {
                *o += c * x;
            }
        }
        Ok(self.push(
            shape,
            value,
            Op::LinComb {
                items: idx,
                coeffs: coeffs.to_vec(),
            },
        ))
    }

    /// Accumulates `d loss / d node` into every node reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let li = self.idx(loss)?;
        if self.nodes[li].value.len() != 1 {
            return Err(Error::NonScalarLoss(self.nodes[li].shape.clone()));
        }
        let mut tmp: Vec<Option<Vec<f64>>> = vec![None; li + 1];
        tmp[li] = Some(vec![1.0]);
        for i in (0..=li).rev() {
            let Some(gy) = tmp[i].take() else { continue };
            self.propagate(i, &gy, &mut tmp);
            let slot = &mut self.grads[i];
            match slot {
                Some(acc) => acc.iter_mut().zip(&gy).for_each(|(a, g)| *a += g),
                None => *slot = Some(gy),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, gy: &[f64], tmp: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        macro_rules! slot {
            ($j:expr) => {{
                let j = $j;
                tmp[j].get_or_insert_with(|| vec![0.0; nodes[j].value.len()])
            }};
        }
        match &node.op {
            Op::Leaf => {}
            Op::Affine { w, x, b } => {
                let n = nodes[*x].value.len();
                let xv = &nodes[*x].value;
                let gw = slot!(*w);
                for (row, g) in gw.chunks_exact_mut(n).zip(gy) {
                    if *g != 0.0 {
                        row.iter_mut().zip(xv).for_each(|(r, xj)| *r += g * xj);
                    }
                }
                let wv = &nodes[*w].value;
                let gx = slot!(*x);
                for (row, g) in wv.chunks_exact(n).zip(gy) {
                    if *g != 0.0 {
                        gx.iter_mut().zip(row).for_each(|(o, wij)| *o += g * wij);
                    }
                }
                if let Some(b) = b {
                    slot!(*b).iter_mut().zip(gy).for_each(|(o, g)| *o += g);
                }
            }
            Op::Add(a, b) => {
                slot!(*a).iter_mut().zip(gy).for_each(|(o, g)| *o += g);
                slot!(*b).iter_mut().zip(gy).for_each(|(o, g)| *o += g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                let ga = slot!(*a);
                for k in 0..gy.len() {
                    ga[k] += gy[k] * bv[k];
                }
                let gb = slot!(*b);
                for k in 0..gy.len() {
                    gb[k] += gy[k] * av[k];
                }
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                let ga = slot!(*a);
                for k in 0..gy.len() {
                    ga[k] += gy[k] * y[k] * (1.0 - y[k]);
                }
            }
            Op::Tanh(a) => {
                let y = &node.value;
                let ga = slot!(*a);
                for k in 0..gy.len() {
                    ga[k] += gy[k] * (1.0 - y[k] * y[k]);
                }
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let inner: f64 = y.iter().zip(gy).map(|(p, g)| p * g).sum();
                let ga = slot!(*a);
                for k in 0..gy.len() {
                    ga[k] += y[k] * (gy[k] - inner);
                }
            }
            Op::Dot(a, b) => {
                let g = gy[0];
                let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                slot!(*a).iter_mut().zip(bv).for_each(|(o, x)| *o += g * x);
                slot!(*b).iter_mut().zip(av).for_each(|(o, x)| *o += g * x);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p].value.len();
                    slot!(p)
                        .iter_mut()
                        .zip(&gy[offset..offset + len])
                        .for_each(|(o, g)| *o += g);
                    offset += len;
                }
            }
            Op::WeightedSum { weights, items } => {
                let wv = &nodes[*weights].value;
                for (k, &item) in items.iter().enumerate() {
                    let xv = &nodes[item].value;
                    let dw: f64 = xv.iter().zip(gy).map(|(x, g)| x * g).sum();
                    slot!(*weights)[k] += dw;
                    let w = wv[k];
                    slot!(item).iter_mut().zip(gy).for_each(|(o, g)| *o += w * g);
                }
            }
            Op::Pick { src, at } => {
                slot!(*src)[*at] += gy[0];
            }
            Op::Ln { src, lo, hi } => {
                let xv = &nodes[*src].value;
                let ga = slot!(*src);
                for k in 0..gy.len() {
                    let x = xv[k];
                    if x >= *lo && x <= *hi {
                        ga[k] += gy[k] / x;
                    }
                }
            }
            Op::ScaleShift { src, scale } => {
                slot!(*src).iter_mut().zip(gy).for_each(|(o, g)| *o += scale * g);
            }
            Op::Sum(a) => {
                let g = gy[0];
                slot!(*a).iter_mut().for_each(|o| *o += g);
            }
            Op::LinComb { items, coeffs } => {
                for (&item, &c) in items.iter().zip(coeffs) {
                    slot!(item).iter_mut().zip(gy).for_each(|(o, g)| *o += c * g);
                }
            }
        }
    }
}

/// Numerically stable softmax of a plain slice.
pub fn softmax_values(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `log(sum(exp(x)))` with the maximum factored out.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn affine_identity_and_zero_weights() {
        let mut g = Graph::new();
        let w = g.input(&Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let x = g.constant_vector(vec![3.0, -1.0]);
        let b = g.zeros(2);
        let y = g.affine(w, x, Some(b)).unwrap();
        assert_eq!(g.value(y), &[3.0, -1.0]);

        let w0 = g.input(&Tensor::zeros(&[2, 2]));
        let b = g.constant_vector(vec![1.0, 2.0]);
        let y = g.affine(w0, x, Some(b)).unwrap();
        assert_eq!(g.value(y), &[1.0, 2.0]);
    }

    #[test]
    fn affine_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut expected = vec![0.0; 3];
        for i in 0..3 {
            let mut acc = b[i];
            for j in 0..4 {
                acc += w[i * 4 + j] * x[j];
            }
            expected[i] = acc;
        }
        let mut g = Graph::new();
        let wv = g.input(&Tensor::matrix(3, 4, w).unwrap());
        let xv = g.constant_vector(x);
        let bv = g.constant_vector(b);
        let y = g.affine(wv, xv, Some(bv)).unwrap();
        for (a, e) in g.value(y).iter().zip(&expected) {
            assert!(close(*a, *e, 1e-12));
        }
    }

    #[test]
    fn affine_rejects_mismatched_shapes() {
        let mut g = Graph::new();
        let w = g.input(&Tensor::zeros(&[2, 3]));
        let x = g.zeros(2);
        let err = g.affine(w, x, None).unwrap_err();
        match err {
            Error::Shape { left, right, .. } => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn elementwise_basics() {
        let mut g = Graph::new();
        let z = g.constant_vector(vec![0.0]);
        let s = g.elementwise(Elementwise::Sigmoid, &[z]).unwrap();
        let t = g.elementwise(Elementwise::Tanh, &[z]).unwrap();
        assert_eq!(g.scalar(s), 0.5);
        assert_eq!(g.scalar(t), 0.0);
        let a = g.constant_vector(vec![2.0, 3.0]);
        let b = g.constant_vector(vec![4.0, 5.0]);
        let h = g.elementwise(Elementwise::Hadamard, &[a, b]).unwrap();
        assert_eq!(g.value(h), &[8.0, 15.0]);
        let short = g.constant_vector(vec![1.0]);
        assert!(matches!(
            g.elementwise(Elementwise::Add, &[a, short]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn softmax_cases() {
        let mut g = Graph::new();
        let a = g.constant_vector(vec![0.0, 0.0]);
        let s = g.softmax(a).unwrap();
        assert_eq!(g.value(s), &[0.5, 0.5]);
        let big = g.constant_vector(vec![1000.0; 3]);
        let s = g.softmax(big).unwrap();
        for p in g.value(s) {
            assert!(close(*p, 1.0 / 3.0, 1e-15));
        }
        let empty = g.constant_vector(vec![]);
        assert!(matches!(g.softmax(empty), Err(Error::Empty(_))));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let naive: Vec<f64> = {
            let e: Vec<f64> = x.iter().map(|v| v.exp()).collect();
            let t: f64 = e.iter().sum();
            e.iter().map(|v| v / t).collect()
        };
        let xv = g.constant_vector(x);
        let s = g.softmax(xv).unwrap();
        for (a, b) in g.value(s).iter().zip(&naive) {
            assert!(close(*a, *b, 1e-12));
        }
    }

    #[test]
    fn backward_square_and_sigmoid() {
        let mut g = Graph::new();
        let x = g.constant_vector(vec![1.0, 2.0]);
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).data(), &[2.0, 4.0]);

        let mut g = Graph::new();
        let w = g.constant_vector(vec![0.0]);
        let s = g.sigmoid(w).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(w).data(), &[0.25]);
    }

    #[test]
    fn backward_accumulates_and_zero_grad_resets() {
        let mut g = Graph::new();
        let x = g.constant_vector(vec![3.0]);
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).data(), &[12.0]);
        g.zero_grad();
        assert_eq!(g.grad(x).data(), &[0.0]);
    }

    #[test]
    fn backward_rejects_foreign_and_non_scalar() {
        let mut a = Graph::new();
        let mut b = Graph::new();
        let x = a.constant_vector(vec![1.0]);
        let _ = b.constant_vector(vec![1.0]);
        assert!(matches!(b.backward(x), Err(Error::ForeignNode)));
        let v = a.constant_vector(vec![1.0, 2.0]);
        assert!(matches!(a.backward(v), Err(Error::NonScalarLoss(_))));
        a.clear();
        assert!(matches!(a.backward(x), Err(Error::ForeignNode)));
    }

    #[test]
    fn ln_clamp_is_flagged() {
        let mut g = Graph::new();
        let p = g.constant_vector(vec![0.0, 0.5]);
        let l = g.ln_clamped(p, 1e-300, 1.0).unwrap();
        assert_eq!(g.clamp_events(), 1);
        assert!(close(g.value(l)[0], (1e-300f64).ln(), 1e-9));
        let total = g.sum(l).unwrap();
        g.backward(total).unwrap();
        assert_eq!(g.grad(p).data(), &[0.0, 2.0]);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert!(close(log_sum_exp(&[1000.0, 1000.0]), 1000.0 + 2f64.ln(), 1e-12));
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
