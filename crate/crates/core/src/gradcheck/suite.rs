//! The finite-difference suite behind `dcc gradcheck`.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_with_hook, CheckReport};
use crate::coattention::co_attend_var;
use crate::comparator::{Comparator, ComparatorConfig};
use crate::data::{make_episode, synthetic_dataset, Image, SynthConfig};
use crate::error::{Error, Result};
use crate::glimpse::{read_var, GlimpseConfig};
use crate::graph::{Graph, Var};
use crate::head::{class_probs_var, cross_entropy_var, score_var};
use crate::model::{Model, ModelConfig};
use crate::params::{Bound, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    Ops,
    CoAttention,
    Glimpse,
    Comparator,
    Head,
    EndToEnd,
}

impl Block {
    pub const ALL: [Block; 6] =
        [Block::Ops, Block::CoAttention, Block::Glimpse, Block::Comparator, Block::Head, Block::EndToEnd];

    pub fn tolerance(self) -> f64 {
        match self {
            Block::EndToEnd => 1e-3,
            _ => 1e-4,
        }
    }

    /// Block that owns a named weight group: `wl`, `wg`, `lstm`, `head`,
    /// `stem`, or a block name.
    pub fn for_weight(name: &str) -> Result<Block> {
        match name {
            "wl" | "w_l" => Ok(Block::CoAttention),
            "wg" | "w_g" => Ok(Block::Glimpse),
            "lstm" => Ok(Block::Comparator),
            "head" | "w" => Ok(Block::Head),
            "stem" => Ok(Block::EndToEnd),
            other => other.parse(),
        }
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Block::Ops => "ops",
            Block::CoAttention => "coattention",
            Block::Glimpse => "glimpse",
            Block::Comparator => "comparator",
            Block::Head => "head",
            Block::EndToEnd => "end-to-end",
        })
    }
}

impl FromStr for Block {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Block::ALL
            .into_iter()
            .find(|b| b.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown gradient-check block {s:?}")))
    }
}

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub eps: f64,
    /// Blocks to run; empty runs all.
    pub blocks: Vec<Block>,
    /// Corrupt one analytic gradient per check (negative control).
    pub corrupt: bool,
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions { eps: 1e-5, blocks: Vec::new(), corrupt: false, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct BlockReport {
    pub block: Block,
    pub report: CheckReport,
    pub elapsed: Duration,
}

impl BlockReport {
    pub fn passed(&self) -> bool {
        self.report.passes(self.block.tolerance())
    }
}

fn worse(a: CheckReport, b: CheckReport) -> CheckReport {
    let entries = a.entries + b.entries;
    let mut w = if b.max_rel_error > a.max_rel_error { b } else { a };
    w.entries = entries;
    w
}

struct Ctx {
    eps: f64,
    corrupt: bool,
    rng: ChaCha8Rng,
}

impl Ctx {
    fn uniform(&mut self, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
        Tensor::new(&[r, c], (0..r * c).map(|_| self.rng.gen_range(lo..hi)).collect()).expect("shape")
    }

    /// Magnitudes in `[0.1, 2)` with random sign.
    fn away(&mut self, r: usize, c: usize) -> Tensor {
        let data = (0..r * c)
            .map(|_| {
                let v = self.rng.gen_range(0.1..2.0);
                if self.rng.gen() { v } else { -v }
            })
            .collect();
        Tensor::new(&[r, c], data).expect("shape")
    }

    fn check<F>(&self, inputs: &[Tensor], f: F) -> Result<CheckReport>
    where
        F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    {
        let corrupt = self.corrupt;
        check_with_hook(inputs, self.eps, f, |grads| {
            if corrupt {
                if let Some(v) = grads.iter_mut().find(|t| !t.is_empty()).map(|t| &mut t.data_mut()[0]) {
                    *v = *v * 1.5 + 0.1;
                }
            }
        })
    }

    /// Check `op` on `inputs` through a fixed projection to a scalar.
    fn op<F>(&self, inputs: &[Tensor], op: F) -> Result<CheckReport>
    where
        F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    {
        self.check(inputs, |g, v| {
            let y = op(g, v)?;
            project(g, y)
        })
    }
}

/// `Σ y ⊙ w` with deterministic weights in `[-1, 1]`.
fn project(g: &mut Graph, y: Var) -> Result<Var> {
    let shape = g.value(y).shape().to_vec();
    let n = g.value(y).len();
    let w = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 / 5.0 - 1.0).collect();
    let w = g.constant(Tensor::new(&shape, w)?);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn ops(cx: &mut Ctx) -> Result<CheckReport> {
    let (a, b, c) = (cx.uniform(3, 4, -2.0, 2.0), cx.uniform(3, 4, -2.0, 2.0), cx.uniform(4, 2, -2.0, 2.0));
    let d = cx.away(3, 4);
    let pos = cx.uniform(3, 4, 0.1, 3.0);
    let distinct = Tensor::new(&[3, 4], (0..12).map(|i| ((i * 5) % 12) as f64 * 0.1).collect())?;
    let small = cx.uniform(2, 2, -2.0, 2.0);
    let mut r = cx.op(&[a.clone(), c], |g, v| g.matmul(v[0], v[1]))?;
    let binary: [fn(&mut Graph, Var, Var) -> Result<Var>; 4] =
        [|g, x, y| g.add(x, y), |g, x, y| g.sub(x, y), |g, x, y| g.mul(x, y), |g, x, y| g.div(x, y)];
    for (i, f) in binary.iter().enumerate() {
        let rhs = if i == 3 { d.clone() } else { b.clone() };
        r = worse(r, cx.op(&[a.clone(), rhs], |g, v| f(g, v[0], v[1]))?);
    }
    let unary: [fn(&mut Graph, Var) -> Result<Var>; 15] = [
        |g, x| Ok(g.scale(x, -1.7)),
        |g, x| Ok(g.add_scalar(x, 0.3)),
        |g, x| Ok(g.tanh(x)),
        |g, x| Ok(g.sigmoid(x)),
        |g, x| Ok(g.exp(x)),
        |g, x| Ok(g.transpose(x)),
        |g, x| g.reshape(x, &[4, 3]),
        |g, x| g.concat_rows(&[x, x]),
        |g, x| g.slice_rows(x, 1, 2),
        |g, x| Ok(g.sum_rows(x)),
        |g, x| Ok(g.sum_cols(x)),
        |g, x| Ok(g.sum(x)),
        |g, x| {
            let s = g.sum_rows(x);
            g.broadcast(s, 3, 5)
        },
        |g, x| g.gather(x, &[Some(0), None, Some(11), Some(0)], &[2, 2]),
        |g, x| Ok(g.softmax_rows(x)),
    ];
    for f in unary {
        r = worse(r, cx.op(&[a.clone()], |g, v| f(g, v[0]))?);
    }
    let kinked: [fn(&mut Graph, Var) -> Result<Var>; 4] = [
        |g, x| Ok(g.relu(x)),
        |g, x| Ok(g.abs(x)),
        |g, x| Ok(g.clamp_min(x, 0.05)),
        |g, x| {
            let a = g.abs(x);
            Ok(g.log(a))
        },
    ];
    for f in kinked {
        r = worse(r, cx.op(&[d.clone()], |g, v| f(g, v[0]))?);
    }
    r = worse(r, cx.op(&[pos], |g, v| Ok(g.normalize_rows(v[0])))?);
    r = worse(r, cx.op(&[distinct], |g, v| Ok(g.max_rows(v[0])))?);
    r = worse(r, cx.op(&[small, b], |g, v| Ok(g.kron(v[0], v[1])))?);
    Ok(r)
}

fn coattention(cx: &mut Ctx) -> Result<CheckReport> {
    let (c, n) = (2, 9);
    let inputs = [cx.uniform(c, n, -1.0, 1.0), cx.uniform(c, n, -1.0, 1.0), cx.uniform(c, c, -1.0, 1.0)];
    cx.check(&inputs, |g, v| {
        let co = co_attend_var(g, v[2], v[0], v[1])?;
        let za = project(g, co.summary_a)?;
        let zb = project(g, co.summary_b)?;
        let l = project(g, co.affinity)?;
        let s = g.add(za, zb)?;
        g.add(s, l)
    })
}

fn glimpse(cx: &mut Ctx) -> Result<CheckReport> {
    let cfg = GlimpseConfig::default();
    let raw = cx.away(3, 1);
    let z = cx.uniform(2, 9, -1.0, 1.0);
    cx.check(&[raw, z], |g, v| {
        let (read, _) = read_var(g, v[0], v[1], 3, &cfg)?;
        project(g, read)
    })
}

fn comparator(cx: &mut Ctx) -> Result<CheckReport> {
    let mut store = ParamStore::new();
    let cfg = ComparatorConfig { hidden: 3, glimpses: 1, ..ComparatorConfig::default() };
    let cmp = Comparator::new(cfg, 2, 2, &mut store, &mut cx.rng)?;
    let np = store.len();
    let mut inputs = store.tensors().to_vec();
    inputs.push(cx.uniform(2, 4, -1.0, 1.0));
    inputs.push(cx.uniform(2, 4, -1.0, 1.0));
    cx.check(&inputs, |g, v| {
        let p = Bound::from_vars(v[..np].to_vec());
        let out = cmp.compare_var(g, &p, v[np], v[np + 1], None)?;
        project(g, out.embedding)
    })
}

fn head(cx: &mut Ctx) -> Result<CheckReport> {
    let (classes, h) = (3, 4);
    let inputs = [
        cx.uniform(h, classes, -1.0, 1.0),
        cx.uniform(1, h, -1.0, 1.0),
        cx.uniform(1, 1, -0.5, 0.5),
        cx.uniform(classes, 1, 0.5, 1.5),
    ];
    cx.check(&inputs, |g, v| {
        let mut scores = Vec::new();
        for j in 0..classes {
            let e = g.transpose(v[0]);
            let e = g.slice_rows(e, j, 1)?;
            let e = g.transpose(e);
            scores.push(score_var(g, v[1], v[2], e)?);
        }
        let s = g.concat_rows(&scores)?;
        let p = class_probs_var(g, v[3], s)?;
        cross_entropy_var(g, p, 1)
    })
}

fn end_to_end(cx: &mut Ctx) -> Result<CheckReport> {
    let cfg = ModelConfig::tiny();
    let model = Model::new(cfg.clone(), &mut cx.rng)?;
    let data = synthetic_dataset(&SynthConfig { ids: 4, views: 2, side: cfg.encoder.input_side, seed: 5 })?;
    let ep = make_episode(&data, cfg.classes, &mut cx.rng)?;
    let unknown = &data.samples[ep.unknown].image;
    let refs: Vec<&Image> = ep.references.iter().map(|&r| &data.samples[r].image).collect();
    let inputs = model.store().tensors().to_vec();
    cx.check(&inputs, |g, v| {
        let p = Bound::from_vars(v.to_vec());
        Ok(model.episode_var(g, &p, unknown, &refs, ep.target, None)?.loss)
    })
}

pub fn run_block(block: Block, opts: &SuiteOptions) -> Result<BlockReport> {
    let mut cx = Ctx { eps: opts.eps, corrupt: opts.corrupt, rng: ChaCha8Rng::seed_from_u64(opts.seed) };
    let start = Instant::now();
    let report = match block {
        Block::Ops => ops(&mut cx)?,
        Block::CoAttention => coattention(&mut cx)?,
        Block::Glimpse => glimpse(&mut cx)?,
        Block::Comparator => comparator(&mut cx)?,
        Block::Head => head(&mut cx)?,
        Block::EndToEnd => end_to_end(&mut cx)?,
    };
    Ok(BlockReport { block, report, elapsed: start.elapsed() })
}

pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<BlockReport>> {
    let blocks = if opts.blocks.is_empty() { Block::ALL.to_vec() } else { opts.blocks.clone() };
    blocks.into_iter().map(|b| run_block(b, opts)).collect()
}
