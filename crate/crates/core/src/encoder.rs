//! Base feature extraction: image → `C×M×M` feature block.
//!
//! A small trainable convolutional stem stands in for a pretrained
//! backbone. Convolutions are a patch gather followed by a matmul, so the
//! whole stem differentiates through the ordinary graph ops. Precomputed
//! backbone features can be loaded from `DCCFEAT v1` files instead.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::train::xavier_init;

const FEATURE_MAGIC: &str = "DCCFEAT v1";

/// One image's activations, stored flattened as `C×M²` with the spatial
/// grid in row-major order (row `y` major, column `x` minor).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    side: usize,
    values: Tensor,
}

impl FeatureMap {
    pub fn new(channels: usize, side: usize, values: Tensor) -> Result<Self> {
        if values.shape() != [channels, side * side] {
            return Err(Error::Shape(format!(
                "feature map {channels}×{side}×{side} cannot hold {:?}",
                values.shape()
            )));
        }
        Ok(FeatureMap { channels, side, values })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// The `C×M²` matrix.
    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values.at(c, y * self.side + x)
    }

    /// Write `DCCFEAT v1 C M M` followed by little-endian `f64` values.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes =
            format!("{FEATURE_MAGIC} {} {} {}\n", self.channels, self.side, self.side).into_bytes();
        for v in self.values.data() {
            bytes.write_all(&v.to_le_bytes()).expect("vec write");
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

pub fn load_feature_file(path: &Path) -> Result<FeatureMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(path, "missing manifest line"))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::format(path, "manifest is not UTF-8"))?;
    let rest = header
        .strip_prefix(FEATURE_MAGIC)
        .ok_or_else(|| Error::format(path, format!("expected `{FEATURE_MAGIC}`, found `{header}`")))?;
    let dims: Vec<usize> = rest
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| Error::format(path, format!("bad extent `{s}`"))))
        .collect::<Result<_>>()?;
    let [c, m, m2] = dims[..] else {
        return Err(Error::format(path, format!("manifest needs C M M, found `{rest}`")));
    };
    if m != m2 || c == 0 || m == 0 {
        return Err(Error::format(path, format!("unsupported extents {c}×{m}×{m2}")));
    }
    let payload = &bytes[nl + 1..];
    let need = c * m * m * 8;
    if payload.len() != need {
        return Err(Error::format(
            path,
            format!("payload holds {} bytes, manifest {c}×{m}×{m} needs {need}", payload.len()),
        ));
    }
    let values = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    FeatureMap::new(c, m, Tensor::new(&[c, m * m], values)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderMode {
    TinyStem,
    FileLoad,
}

/// 3×3 convolution (padding 1) with the given stride, ReLU, then an
/// optional 2×2 max pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemStage {
    pub out_channels: usize,
    pub stride: usize,
    pub pool: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub mode: EncoderMode,
    pub input_side: usize,
    pub stages: Vec<StemStage>,
    /// Expected `(C, M)` of loaded feature files.
    pub file_shape: (usize, usize),
}

impl Default for EncoderConfig {
    /// 56×56 RGB → 32×7×7: stride-2 conv and pool, then a stride-2 conv.
    fn default() -> Self {
        EncoderConfig {
            mode: EncoderMode::TinyStem,
            input_side: 56,
            stages: vec![
                StemStage { out_channels: 16, stride: 2, pool: true },
                StemStage { out_channels: 32, stride: 2, pool: false },
            ],
            file_shape: (32, 7),
        }
    }
}

impl EncoderConfig {
    /// 8×8 RGB → 2×2×2, for gradient checks.
    pub fn tiny() -> Self {
        EncoderConfig {
            mode: EncoderMode::TinyStem,
            input_side: 8,
            stages: vec![StemStage { out_channels: 2, stride: 2, pool: true }],
            file_shape: (2, 2),
        }
    }

    /// Backbone-sized features read from files (1024×14×14).
    pub fn backbone_shape() -> Self {
        EncoderConfig {
            mode: EncoderMode::FileLoad,
            input_side: 224,
            stages: Vec::new(),
            file_shape: (1024, 14),
        }
    }

    pub fn output_channels(&self) -> usize {
        match self.mode {
            EncoderMode::TinyStem => self.stages.last().map_or(3, |s| s.out_channels),
            EncoderMode::FileLoad => self.file_shape.0,
        }
    }

    pub fn output_side(&self) -> Result<usize> {
        if self.mode == EncoderMode::FileLoad {
            return Ok(self.file_shape.1);
        }
        let mut side = self.input_side;
        for (i, s) in self.stages.iter().enumerate() {
            if s.stride == 0 || s.out_channels == 0 {
                return Err(Error::Config(format!("stem stage {i}: zero stride or width")));
            }
            side = (side - 1) / s.stride + 1;
            if s.pool {
                side /= 2;
            }
            if side == 0 {
                return Err(Error::Config(format!(
                    "stem collapses a {}-pixel input to nothing at stage {i}",
                    self.input_side
                )));
            }
        }
        Ok(side)
    }
}

/// What an encoder consumes.
#[derive(Clone, Copy, Debug)]
pub enum Source<'a> {
    Image(&'a Image),
    FeatureFile(&'a Path),
}

#[derive(Clone, Debug)]
struct Stage {
    weight: ParamId,
    bias: ParamId,
    out_channels: usize,
    conv_side: usize,
    out_side: usize,
    patches: Rc<[usize]>,
    pool: Option<Rc<[usize]>>,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    cfg: EncoderConfig,
    stages: Vec<Stage>,
}

impl Encoder {
    /// Register stem parameters (Xavier weights, zero biases) in `store`.
    pub fn new(cfg: EncoderConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        cfg.output_side()?;
        let mut stages = Vec::new();
        if cfg.mode == EncoderMode::TinyStem {
            let (mut side, mut ch) = (cfg.input_side, 3);
            for (i, s) in cfg.stages.iter().enumerate() {
                let weight =
                    store.add(&format!("stem.{i}.w"), xavier_init(&[s.out_channels, ch * 9], rng));
                let bias = store.add(&format!("stem.{i}.b"), xavier_init(&[s.out_channels], rng));
                let conv_side = (side - 1) / s.stride + 1;
                let patches = conv_patch_index(ch, side, s.stride, conv_side).into();
                let out_side = if s.pool { conv_side / 2 } else { conv_side };
                let pool = s.pool.then(|| pool_index(s.out_channels, conv_side, out_side).into());
                stages.push(Stage {
                    weight,
                    bias,
                    out_channels: s.out_channels,
                    conv_side,
                    out_side,
                    patches,
                    pool,
                });
                side = out_side;
                ch = s.out_channels;
            }
        }
        Ok(Encoder { cfg, stages })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Stem forward inside `g`; returns a `C×M²` node.
    pub fn encode_var(&self, g: &mut Graph, params: &Bound, image: &Image) -> Result<Var> {
        if self.cfg.mode != EncoderMode::TinyStem {
            return Err(Error::Contract("file-load encoder cannot consume pixels".into()));
        }
        let side = self.cfg.input_side;
        if image.width() != side || image.height() != side {
            return Err(Error::Shape(format!(
                "encoder expects {side}×{side}×3 images, got {}×{}×3",
                image.width(),
                image.height()
            )));
        }
        // HWC → C×(H·W)
        let mut chw = vec![0.0; 3 * side * side];
        for (p, px) in image.data().chunks(3).enumerate() {
            for c in 0..3 {
                chw[c * side * side + p] = px[c];
            }
        }
        let mut x = g.constant(Tensor::new(&[3, side * side], chw)?);
        for st in &self.stages {
            let n_out = st.conv_side * st.conv_side;
            let cols_rows = st.patches.len() / n_out;
            let cols = g.gather_prepared(x, st.patches.clone(), &[cols_rows, n_out])?;
            let conv = g.matmul(params.var(st.weight), cols)?;
            let b = g.broadcast(params.var(st.bias), st.out_channels, n_out)?;
            let pre = g.add(conv, b)?;
            x = g.relu(pre);
            if let Some(pool) = &st.pool {
                let cells = st.out_channels * st.out_side * st.out_side;
                let windows = g.gather_prepared(x, pool.clone(), &[cells, 4])?;
                let m = g.max_rows(windows);
                x = g.reshape(m, &[st.out_channels, st.out_side * st.out_side])?;
            }
        }
        Ok(x)
    }

    /// Encode outside any training graph.
    pub fn encode(&self, store: &ParamStore, source: Source<'_>) -> Result<FeatureMap> {
        let (c, m) = (self.cfg.output_channels(), self.cfg.output_side()?);
        match (self.cfg.mode, source) {
            (EncoderMode::TinyStem, Source::Image(img)) => {
                let mut g = Graph::new();
                let bound = store.bind(&mut g);
                let v = self.encode_var(&mut g, &bound, img)?;
                FeatureMap::new(c, m, g.value(v).clone())
            }
            (EncoderMode::FileLoad, Source::FeatureFile(path)) => {
                let fm = load_feature_file(path)?;
                if (fm.channels, fm.side) != (c, m) {
                    return Err(Error::format(
                        path,
                        format!(
                            "features are {}×{}×{}, encoder expects {c}×{m}×{m}",
                            fm.channels, fm.side, fm.side
                        ),
                    ));
                }
                Ok(fm)
            }
            (mode, _) => Err(Error::Contract(format!("{mode:?} encoder given the wrong source"))),
        }
    }
}

/// Gather index for a padded 3×3 convolution: rows `(ci, ky, kx)`, columns
/// output positions.
fn conv_patch_index(ch: usize, side: usize, stride: usize, out: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(ch * 9 * out * out);
    for c in 0..ch {
        for ky in 0..3 {
            for kx in 0..3 {
                for oy in 0..out {
                    for ox in 0..out {
                        let iy = (oy * stride + ky) as isize - 1;
                        let ix = (ox * stride + kx) as isize - 1;
                        let inside =
                            iy >= 0 && ix >= 0 && (iy as usize) < side && (ix as usize) < side;
                        idx.push(if inside {
                            c * side * side + iy as usize * side + ix as usize
                        } else {
                            usize::MAX
                        });
                    }
                }
            }
        }
    }
    idx
}

/// Gather index for 2×2 max pooling: rows `(c, oy, ox)`, four columns.
fn pool_index(ch: usize, side: usize, out: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(ch * out * out * 4);
    for c in 0..ch {
        for oy in 0..out {
            for ox in 0..out {
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    idx.push(c * side * side + (2 * oy + dy) * side + 2 * ox + dx);
                }
            }
        }
    }
    idx
}
