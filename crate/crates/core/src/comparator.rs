//! Recurrent comparator: an LSTM that alternates glimpses between the two
//! attention summaries (`Z_a` at even steps, `Z_b` at odd steps) and whose
//! final hidden state is the pair's relative representation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glimpse::{self, GlimpseConfig, GlimpseParams, GlimpseVars};
use crate::graph::{Graph, Var};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::train::{xavier_bound, xavier_init};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparatorConfig {
    pub hidden: usize,
    /// Glimpses per image; the comparator runs `2 · glimpses` steps.
    pub glimpses: usize,
    pub dropout: f64,
    pub glimpse: GlimpseConfig,
}

impl Default for ComparatorConfig {
    fn default() -> Self {
        ComparatorConfig { hidden: 64, glimpses: 8, dropout: 0.3, glimpse: GlimpseConfig::default() }
    }
}

impl ComparatorConfig {
    pub fn steps(&self) -> usize {
        2 * self.glimpses
    }
}

/// `Z_a` when `t` is even, `Z_b` otherwise.
pub fn select_stream<T>(t: usize, za: T, zb: T) -> T {
    if t % 2 == 0 {
        za
    } else {
        zb
    }
}

/// Parameter handles. LSTM gate blocks are stacked in the order input,
/// forget, candidate, output.
#[derive(Clone, Debug)]
pub struct Comparator {
    cfg: ComparatorConfig,
    channels: usize,
    side: usize,
    pub w_g: ParamId,
    pub b_g: ParamId,
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub bias: ParamId,
}

/// Recurrent state inside a graph.
#[derive(Clone, Debug)]
pub struct StateVars {
    pub t: usize,
    pub h: Var,
    pub c: Var,
    pub trajectory: Vec<GlimpseVars>,
}

/// Recurrent state outside a graph.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparatorState {
    pub t: usize,
    pub h: Tensor,
    pub c: Tensor,
    pub trajectory: Vec<GlimpseParams>,
}

impl ComparatorState {
    pub fn zeros(hidden: usize) -> Self {
        ComparatorState {
            t: 0,
            h: Tensor::zeros(&[hidden, 1]),
            c: Tensor::zeros(&[hidden, 1]),
            trajectory: Vec::new(),
        }
    }
}

/// Result of a full comparison.
#[derive(Clone, Debug)]
pub struct Comparison {
    /// `h_T`, after dropout when a mask was supplied.
    pub embedding: Var,
    pub trajectory: Vec<GlimpseVars>,
}

fn stacked_xavier(hidden: usize, fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = xavier_bound(fan_in, hidden);
    let data = (0..4 * hidden * fan_in).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(&[4 * hidden, fan_in], data).expect("gate shape")
}

impl Comparator {
    /// Register parameters for summaries of `channels×side²`. The glimpse
    /// projection bias starts at `(0, 0, 1)`: centred, full-coverage stride.
    pub fn new(
        cfg: ComparatorConfig,
        channels: usize,
        side: usize,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if cfg.hidden == 0 || cfg.glimpses == 0 || cfg.glimpse.k == 0 {
            return Err(Error::Config("comparator hidden, glimpses and K must be positive".into()));
        }
        if !(0.0..1.0).contains(&cfg.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", cfg.dropout)));
        }
        let h = cfg.hidden;
        let input = channels * cfg.glimpse.k * cfg.glimpse.k;
        let w_g = store.add("comparator.w_g", xavier_init(&[3, h], rng));
        let b_g = store.add("comparator.b_g", Tensor::column(&[0.0, 0.0, 1.0]).reshape(&[3])?);
        let w_x = store.add("lstm.w_x", stacked_xavier(h, input, rng));
        let w_h = store.add("lstm.w_h", stacked_xavier(h, h, rng));
        let bias = store.add("lstm.b", xavier_init(&[4 * h], rng));
        Ok(Comparator { cfg, channels, side, w_g, b_g, w_x, w_h, bias })
    }

    pub fn config(&self) -> &ComparatorConfig {
        &self.cfg
    }

    pub fn initial_state(&self, g: &mut Graph) -> StateVars {
        let h = g.constant(Tensor::zeros(&[self.cfg.hidden, 1]));
        let c = g.constant(Tensor::zeros(&[self.cfg.hidden, 1]));
        StateVars { t: 0, h, c, trajectory: Vec::new() }
    }

    /// One recurrent update.
    pub fn step_var(
        &self,
        g: &mut Graph,
        p: &Bound,
        state: &mut StateVars,
        za: Var,
        zb: Var,
    ) -> Result<()> {
        if state.t >= self.cfg.steps() {
            return Err(Error::Contract(format!(
                "comparator already ran all {} steps",
                self.cfg.steps()
            )));
        }
        let hsz = self.cfg.hidden;
        let proj = g.matmul(p.var(self.w_g), state.h)?;
        let raw = g.add(proj, p.var(self.b_g))?;
        let z = select_stream(state.t, za, zb);
        let (read, gv) = glimpse::read_var(g, raw, z, self.side, &self.cfg.glimpse)?;
        let x = g.reshape(read, &[g.value(read).len(), 1])?;

        let zx = g.matmul(p.var(self.w_x), x)?;
        let zh = g.matmul(p.var(self.w_h), state.h)?;
        let pre = g.add(zx, zh)?;
        let pre = g.add(pre, p.var(self.bias))?;
        let gate = |g: &mut Graph, k: usize| g.slice_rows(pre, k * hsz, hsz);
        let i = gate(g, 0)?;
        let i = g.sigmoid(i);
        let f = gate(g, 1)?;
        let f = g.sigmoid(f);
        let cand = gate(g, 2)?;
        let cand = g.tanh(cand);
        let o = gate(g, 3)?;
        let o = g.sigmoid(o);

        let keep = g.mul(f, state.c)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;

        state.h = h;
        state.c = c;
        state.t += 1;
        state.trajectory.push(gv);
        Ok(())
    }

    /// Run all `2𝒢` steps from a zero state. `dropout_mask` (`H×1`) scales
    /// the final hidden state only.
    pub fn compare_var(
        &self,
        g: &mut Graph,
        p: &Bound,
        za: Var,
        zb: Var,
        dropout_mask: Option<&Tensor>,
    ) -> Result<Comparison> {
        for z in [za, zb] {
            let shape = g.value(z).shape();
            if shape != [self.channels, self.side * self.side] {
                return Err(Error::Shape(format!(
                    "comparator expects {}×{} summaries, got {shape:?}",
                    self.channels,
                    self.side * self.side
                )));
            }
        }
        let mut state = self.initial_state(g);
        for _ in 0..self.cfg.steps() {
            self.step_var(g, p, &mut state, za, zb)?;
        }
        let embedding = match dropout_mask {
            Some(mask) => {
                let m = g.constant(mask.clone());
                g.mul(state.h, m)?
            }
            None => state.h,
        };
        Ok(Comparison { embedding, trajectory: state.trajectory })
    }

    /// Inverted-dropout mask for `h_T`: each unit kept with probability
    /// `1 − dropout` and scaled by `1 / (1 − dropout)`.
    pub fn dropout_mask(&self, rng: &mut impl Rng) -> Tensor {
        let keep = 1.0 - self.cfg.dropout;
        let data = (0..self.cfg.hidden)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        Tensor::new(&[self.cfg.hidden, 1], data).expect("mask shape")
    }

    /// One step outside a graph.
    pub fn step(
        &self,
        store: &ParamStore,
        state: &ComparatorState,
        za: &Tensor,
        zb: &Tensor,
    ) -> Result<ComparatorState> {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let (a, b) = (g.constant(za.clone()), g.constant(zb.clone()));
        let mut sv = StateVars {
            t: state.t,
            h: g.constant(state.h.clone()),
            c: g.constant(state.c.clone()),
            trajectory: Vec::new(),
        };
        self.step_var(&mut g, &p, &mut sv, a, b)?;
        let mut trajectory = state.trajectory.clone();
        trajectory.extend(sv.trajectory.iter().map(|v| v.params(&g)));
        Ok(ComparatorState {
            t: sv.t,
            h: g.value(sv.h).clone(),
            c: g.value(sv.c).clone(),
            trajectory,
        })
    }

    /// Full comparison outside a graph: `(h_T, trajectory)`.
    pub fn compare(
        &self,
        store: &ParamStore,
        za: &Tensor,
        zb: &Tensor,
        dropout_mask: Option<&Tensor>,
    ) -> Result<(Tensor, Vec<GlimpseParams>)> {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let (a, b) = (g.constant(za.clone()), g.constant(zb.clone()));
        let out = self.compare_var(&mut g, &p, a, b, dropout_mask)?;
        let traj = out.trajectory.iter().map(|v| v.params(&g)).collect();
        Ok((g.value(out.embedding).clone(), traj))
    }
}
