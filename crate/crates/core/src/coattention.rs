//! Co-dependent encoding of a feature-map pair.
//!
//! With `Q_a, Q_b` flattened to `C×M²`:
//!
//! ```text
//! L   = Q_bᵀ · W_L · Q_a        (M²×M², W_L is C×C)
//! A_a = softmax_rows(L)
//! A_b = softmax_rows(Lᵀ)
//! Z_a = Q_b · A_aᵀ              (C×M²)
//! Z_b = Q_a · A_bᵀ
//! ```
//!
//! Column `i` of `Z_a` is the average of `Q_b`'s feature columns weighted by
//! row `i` of `A_a`, so every summary column is a convex combination of the
//! other image's features.

use rand::Rng;

use crate::encoder::FeatureMap;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::train::xavier_init;

/// Trainable `W_L`.
#[derive(Clone, Debug)]
pub struct CoAttention {
    weight: ParamId,
    channels: usize,
}

/// Graph nodes of one co-attention evaluation.
#[derive(Clone, Copy, Debug)]
pub struct CoAttentionVars {
    pub affinity: Var,
    pub weights_a: Var,
    pub weights_b: Var,
    pub summary_a: Var,
    pub summary_b: Var,
}

/// Evaluated co-attention: `L, A_a, A_b, Z_a, Z_b`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoAttentionPair {
    pub affinity: Tensor,
    pub weights_a: Tensor,
    pub weights_b: Tensor,
    pub summary_a: Tensor,
    pub summary_b: Tensor,
}

impl CoAttention {
    pub fn new(channels: usize, store: &mut ParamStore, rng: &mut impl Rng) -> Self {
        let weight = store.add("coattn.w_l", xavier_init(&[channels, channels], rng));
        CoAttention { weight, channels }
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn forward(&self, g: &mut Graph, params: &Bound, qa: Var, qb: Var) -> Result<CoAttentionVars> {
        co_attend_var(g, params.var(self.weight), qa, qb)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
}

fn check_pair(g: &Graph, w: Var, qa: Var, qb: Var) -> Result<()> {
    let (sa, sb, sw) = (g.value(qa).shape(), g.value(qb).shape(), g.value(w).shape());
    if sa != sb || sa.len() != 2 || sw != [sa[0], sa[0]] {
        return Err(Error::Shape(format!(
            "co-attention needs matching C×M² features and a C×C weight: Q_a {sa:?}, Q_b {sb:?}, W_L {sw:?}"
        )));
    }
    Ok(())
}

/// `L = Q_bᵀ · W_L · Q_a`.
pub fn affinity_var(g: &mut Graph, w: Var, qa: Var, qb: Var) -> Result<Var> {
    check_pair(g, w, qa, qb)?;
    let qbt = g.transpose(qb);
    let left = g.matmul(qbt, w)?;
    g.matmul(left, qa)
}

pub fn co_attend_var(g: &mut Graph, w: Var, qa: Var, qb: Var) -> Result<CoAttentionVars> {
    let affinity = affinity_var(g, w, qa, qb)?;
    let weights_a = g.softmax_rows(affinity);
    let lt = g.transpose(affinity);
    let weights_b = g.softmax_rows(lt);
    let at = g.transpose(weights_a);
    let summary_a = g.matmul(qb, at)?;
    let bt = g.transpose(weights_b);
    let summary_b = g.matmul(qa, bt)?;
    Ok(CoAttentionVars { affinity, weights_a, weights_b, summary_a, summary_b })
}

fn check_maps(qa: &FeatureMap, qb: &FeatureMap) -> Result<()> {
    if (qa.channels(), qa.side()) != (qb.channels(), qb.side()) {
        return Err(Error::Shape(format!(
            "feature maps differ: {}×{}×{} vs {}×{}×{}",
            qa.channels(),
            qa.side(),
            qa.side(),
            qb.channels(),
            qb.side(),
            qb.side()
        )));
    }
    Ok(())
}

/// Affinity matrix outside a training graph.
pub fn affinity(qa: &FeatureMap, qb: &FeatureMap, w_l: &Tensor) -> Result<Tensor> {
    check_maps(qa, qb)?;
    let mut g = Graph::new();
    let (a, b, w) = (g.constant(qa.values().clone()), g.constant(qb.values().clone()), g.constant(w_l.clone()));
    let l = affinity_var(&mut g, w, a, b)?;
    Ok(g.value(l).clone())
}

/// Full co-attention outside a training graph.
pub fn co_attend(qa: &FeatureMap, qb: &FeatureMap, w_l: &Tensor) -> Result<CoAttentionPair> {
    check_maps(qa, qb)?;
    let mut g = Graph::new();
    let (a, b, w) = (g.constant(qa.values().clone()), g.constant(qb.values().clone()), g.constant(w_l.clone()));
    let v = co_attend_var(&mut g, w, a, b)?;
    Ok(CoAttentionPair {
        affinity: g.value(v.affinity).clone(),
        weights_a: g.value(v.weights_a).clone(),
        weights_b: g.value(v.weights_b).clone(),
        summary_a: g.value(v.summary_a).clone(),
        summary_b: g.value(v.summary_b).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(c: usize, m: usize, values: Vec<f64>) -> FeatureMap {
        FeatureMap::new(c, m, Tensor::new(&[c, m * m], values).unwrap()).unwrap()
    }

    #[test]
    fn rank_one_affinity() {
        let q = map(1, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let l = affinity(&q, &q, &Tensor::scalar(1.0)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(l.at(i, j), ((i + 1) * (j + 1)) as f64);
            }
        }
    }

    #[test]
    fn zero_weight_gives_uniform_attention() {
        let qa = map(2, 2, vec![0.1, 0.5, -0.3, 2.0, 1.0, 0.0, 0.2, 0.4]);
        let qb = map(2, 2, vec![1.0, -1.0, 0.5, 0.25, 3.0, 1.0, 0.0, 2.0]);
        let p = co_attend(&qa, &qb, &Tensor::zeros(&[2, 2])).unwrap();
        assert!(p.affinity.data().iter().all(|&v| v == 0.0));
        assert!(p.weights_a.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert!(p.weights_b.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let means = [(1.0 - 1.0 + 0.5 + 0.25) / 4.0, (3.0 + 1.0 + 0.0 + 2.0) / 4.0];
        for c in 0..2 {
            for i in 0..4 {
                assert!((p.summary_a.at(c, i) - means[c]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mismatched_maps_are_shape_errors() {
        let a = map(2, 2, vec![0.0; 8]);
        let b = map(2, 1, vec![0.0; 2]);
        assert!(matches!(co_attend(&a, &b, &Tensor::zeros(&[2, 2])), Err(Error::Shape(_))));
        let c = map(1, 2, vec![0.0; 4]);
        assert!(matches!(affinity(&a, &c, &Tensor::zeros(&[2, 2])), Err(Error::Shape(_))));
        assert!(matches!(affinity(&a, &a, &Tensor::zeros(&[3, 3])), Err(Error::Shape(_))));
    }
}
