//! The full pair model and its pooling baselines.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coattention::CoAttention;
use crate::comparator::{Comparator, ComparatorConfig};
use crate::data::{Dataset, Episode, Image};
use crate::encoder::{Encoder, EncoderConfig, FeatureMap, Source};
use crate::error::{Error, Result};
use crate::eval::pool;
use crate::glimpse::GlimpseParams;
use crate::graph::{Graph, Var};
use crate::head::{cross_entropy_var, SimilarityHead};
use crate::params::{Bound, ParamStore};
use crate::tensor::Tensor;

/// How a co-attended pair becomes an embedding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    /// Recurrent glimpse comparator.
    #[default]
    Dcc,
    /// Per-channel mean of the stacked summaries.
    GlobalPool,
    /// Two-level spatial pyramid max pooling of the stacked summaries.
    Spp,
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dcc" => Ok(HeadKind::Dcc),
            "gp" | "global" | "global-pool" => Ok(HeadKind::GlobalPool),
            "spp" => Ok(HeadKind::Spp),
            _ => Err(Error::Config(format!("unknown head {s:?} (dcc, gp, spp)"))),
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadKind::Dcc => "dcc",
            HeadKind::GlobalPool => "gp",
            HeadKind::Spp => "spp",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub comparator: ComparatorConfig,
    /// Classes per episode.
    pub classes: usize,
    pub head: HeadKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            comparator: ComparatorConfig::default(),
            classes: 10,
            head: HeadKind::Dcc,
        }
    }
}

impl ModelConfig {
    /// Gradient-check scale: 8×8 images, 2×2×2 features, H=3, one glimpse
    /// per stream, three classes.
    pub fn tiny() -> Self {
        ModelConfig {
            encoder: EncoderConfig::tiny(),
            comparator: ComparatorConfig { hidden: 3, glimpses: 1, ..ComparatorConfig::default() },
            classes: 3,
            head: HeadKind::Dcc,
        }
    }

    pub fn embedding(&self) -> usize {
        let c = self.encoder.output_channels();
        match self.head {
            HeadKind::Dcc => self.comparator.hidden,
            HeadKind::GlobalPool => 2 * c,
            HeadKind::Spp => 2 * c * pool::SPP_BINS,
        }
    }
}

/// Graph outputs of one episode.
#[derive(Clone, Debug)]
pub struct EpisodeVars {
    pub loss: Var,
    /// `1×C` class distribution.
    pub probs: Var,
    /// `C×1` per-reference scores.
    pub scores: Var,
}

#[derive(Clone, Debug)]
pub struct Model {
    cfg: ModelConfig,
    store: ParamStore,
    encoder: Encoder,
    coattention: CoAttention,
    comparator: Option<Comparator>,
    head: SimilarityHead,
}

impl Model {
    /// Fresh parameters drawn from `rng` in a fixed registration order.
    pub fn new(cfg: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        if cfg.classes < 2 {
            return Err(Error::Config(format!("episodes need at least 2 classes, got {}", cfg.classes)));
        }
        let mut store = ParamStore::new();
        let encoder = Encoder::new(cfg.encoder.clone(), &mut store, rng)?;
        let (c, m) = (cfg.encoder.output_channels(), cfg.encoder.output_side()?);
        let coattention = CoAttention::new(c, &mut store, rng);
        let comparator = match cfg.head {
            HeadKind::Dcc => Some(Comparator::new(cfg.comparator.clone(), c, m, &mut store, rng)?),
            _ => None,
        };
        let head = SimilarityHead::new(cfg.embedding(), cfg.classes, &mut store, rng);
        Ok(Model { cfg, store, encoder, coattention, comparator, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn coattention(&self) -> &CoAttention {
        &self.coattention
    }

    pub fn comparator(&self) -> Option<&Comparator> {
        self.comparator.as_ref()
    }

    pub fn head(&self) -> &SimilarityHead {
        &self.head
    }

    /// Dropout mask for one pair, or `None` for baselines and zero dropout.
    pub fn dropout_mask(&self, rng: &mut impl Rng) -> Option<Tensor> {
        self.comparator
            .as_ref()
            .filter(|c| c.config().dropout > 0.0)
            .map(|c| c.dropout_mask(rng))
    }

    /// Embedding of the pair `(qa, qb)` of `C×M²` feature nodes.
    pub fn embed_var(
        &self,
        g: &mut Graph,
        p: &Bound,
        qa: Var,
        qb: Var,
        mask: Option<&Tensor>,
    ) -> Result<Var> {
        let co = self.coattention.forward(g, p, qa, qb)?;
        match (&self.comparator, self.cfg.head) {
            (Some(cmp), _) => Ok(cmp.compare_var(g, p, co.summary_a, co.summary_b, mask)?.embedding),
            (None, kind) => {
                let z = g.concat_rows(&[co.summary_a, co.summary_b])?;
                let side = self.cfg.encoder.output_side()?;
                match kind {
                    HeadKind::GlobalPool => pool::global_pool_var(g, z),
                    _ => pool::spp_pool_var(g, z, side),
                }
            }
        }
    }

    /// Episode loss from precomputed feature nodes. `masks` holds one
    /// dropout mask per reference when training.
    pub fn episode_from_features(
        &self,
        g: &mut Graph,
        p: &Bound,
        unknown: Var,
        references: &[Var],
        target: usize,
        masks: Option<&[Tensor]>,
    ) -> Result<EpisodeVars> {
        if references.len() != self.cfg.classes {
            return Err(Error::Contract(format!(
                "model built for {} classes, episode has {}",
                self.cfg.classes,
                references.len()
            )));
        }
        let mut scores = Vec::with_capacity(references.len());
        for (j, &r) in references.iter().enumerate() {
            let e = self.embed_var(g, p, unknown, r, masks.map(|m| &m[j]))?;
            scores.push(self.head.score_var(g, p, e)?);
        }
        let scores = g.concat_rows(&scores)?;
        let probs = self.head.class_probs_var(g, p, scores)?;
        let loss = cross_entropy_var(g, probs, target)?;
        Ok(EpisodeVars { loss, probs, scores })
    }

    /// Build the episode graph: encode the unknown and each reference once,
    /// compare every `(unknown, reference)` pair, score and normalize.
    pub fn episode_var(
        &self,
        g: &mut Graph,
        p: &Bound,
        unknown: &Image,
        references: &[&Image],
        target: usize,
        masks: Option<&[Tensor]>,
    ) -> Result<EpisodeVars> {
        let u = self.encoder.encode_var(g, p, unknown)?;
        let refs = references
            .iter()
            .map(|img| self.encoder.encode_var(g, p, img))
            .collect::<Result<Vec<_>>>()?;
        self.episode_from_features(g, p, u, &refs, target, masks)
    }

    /// Validate `ep` against `data` and build its graph with fresh leaves.
    /// Dropout masks are drawn from `rng` when given.
    pub fn episode_loss(
        &self,
        data: &Dataset,
        ep: &Episode,
        rng: Option<&mut dyn rand::RngCore>,
    ) -> Result<(Graph, Bound, EpisodeVars)> {
        ep.validate(data)?;
        let masks: Option<Vec<Tensor>> = match rng {
            Some(mut r) => (0..ep.classes()).map(|_| self.dropout_mask(&mut r)).collect(),
            None => None,
        };
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let refs: Vec<&Image> = ep.references.iter().map(|&i| &data.samples[i].image).collect();
        let out = self.episode_var(
            &mut g,
            &p,
            &data.samples[ep.unknown].image,
            &refs,
            ep.target,
            masks.as_deref(),
        )?;
        Ok((g, p, out))
    }

    /// Features of one image, for caching across many comparisons.
    pub fn features(&self, image: &Image) -> Result<FeatureMap> {
        self.encoder.encode(&self.store, Source::Image(image))
    }

    /// Test-time similarity: the score of the pair embedding, no dropout and
    /// no class softmax.
    pub fn similarity(&self, a: &FeatureMap, b: &FeatureMap) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let qa = g.constant(a.values().clone());
        let qb = g.constant(b.values().clone());
        let e = self.embed_var(&mut g, &p, qa, qb, None)?;
        let s = self.head.score_var(&mut g, &p, e)?;
        Ok(g.value(s).item())
    }

    /// Glimpse trajectory of the comparator on a pair, `None` for baselines.
    pub fn trajectory(&self, a: &FeatureMap, b: &FeatureMap) -> Result<Option<Vec<GlimpseParams>>> {
        let Some(cmp) = &self.comparator else { return Ok(None) };
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let qa = g.constant(a.values().clone());
        let qb = g.constant(b.values().clone());
        let co = self.coattention.forward(&mut g, &p, qa, qb)?;
        let out = cmp.compare_var(&mut g, &p, co.summary_a, co.summary_b, None)?;
        Ok(Some(out.trajectory.iter().map(|v| v.params(&g)).collect()))
    }
}
