//! Similarity head: per-pair score `s_j = tanh(w·e_j + b)`, class
//! distribution `p = softmax_j(W[j] · s_j)` and the episode cross-entropy.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::train::xavier_init;

#[derive(Clone, Debug)]
pub struct SimilarityHead {
    pub weight: ParamId,
    pub bias: ParamId,
    pub class_weights: ParamId,
    embedding: usize,
    classes: usize,
}

impl SimilarityHead {
    /// Score map is Xavier-initialized; class weights start at one so no
    /// class position is favoured.
    pub fn new(embedding: usize, classes: usize, store: &mut ParamStore, rng: &mut impl Rng) -> Self {
        let weight = store.add("head.w", xavier_init(&[1, embedding], rng));
        let bias = store.add("head.b", xavier_init(&[1], rng));
        let class_weights = store.add("head.class_w", Tensor::full(&[classes], 1.0));
        SimilarityHead { weight, bias, class_weights, embedding, classes }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn embedding(&self) -> usize {
        self.embedding
    }

    pub fn score_var(&self, g: &mut Graph, p: &Bound, e: Var) -> Result<Var> {
        score_var(g, p.var(self.weight), p.var(self.bias), e)
    }

    /// `C×1` scores → `1×C` probabilities.
    pub fn class_probs_var(&self, g: &mut Graph, p: &Bound, scores: Var) -> Result<Var> {
        class_probs_var(g, p.var(self.class_weights), scores)
    }
}

pub fn score_var(g: &mut Graph, w: Var, b: Var, e: Var) -> Result<Var> {
    let a = g.matmul(w, e)?;
    let a = g.add(a, b)?;
    Ok(g.tanh(a))
}

pub fn class_probs_var(g: &mut Graph, class_w: Var, scores: Var) -> Result<Var> {
    let n = g.value(scores).len();
    if n < 2 {
        return Err(Error::Contract(format!("class_probs needs at least 2 classes, got {n}")));
    }
    let logits = g.mul(class_w, scores)?;
    let row = g.reshape(logits, &[1, n])?;
    Ok(g.softmax_rows(row))
}

/// `−log p[target]` for a `1×C` probability row.
pub fn cross_entropy_var(g: &mut Graph, probs: Var, target: usize) -> Result<Var> {
    let n = g.value(probs).len();
    if target >= n {
        return Err(Error::Contract(format!("target {target} out of {n} classes")));
    }
    let col = g.reshape(probs, &[n, 1])?;
    let p = g.slice_rows(col, target, 1)?;
    let lp = g.log(p);
    Ok(g.scale(lp, -1.0))
}

/// `tanh(w·e + b)` outside a graph.
pub fn score(e: &[f64], w: &[f64], b: f64) -> Result<f64> {
    if e.len() != w.len() {
        return Err(Error::Shape(format!("score: embedding {} vs weight {}", e.len(), w.len())));
    }
    Ok((e.iter().zip(w).map(|(x, y)| x * y).sum::<f64>() + b).tanh())
}

/// `softmax_j(W[j] · s_j)` outside a graph.
pub fn class_probs(scores: &[f64], class_w: &[f64]) -> Result<Vec<f64>> {
    if scores.len() != class_w.len() {
        return Err(Error::Shape(format!(
            "class_probs: {} scores vs {} class weights",
            scores.len(),
            class_w.len()
        )));
    }
    let mut g = Graph::new();
    let s = g.constant(Tensor::column(scores));
    let w = g.constant(Tensor::column(class_w));
    let p = class_probs_var(&mut g, w, s)?;
    Ok(g.value(p).data().to_vec())
}
