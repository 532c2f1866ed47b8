//! Run configuration: a sectioned TOML file merged with command-line flags.

use std::fmt;
use std::str::FromStr;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use dcc_core::encoder::StemStage;
use dcc_core::eval::EvalConfig;
use dcc_core::train::TrainConfig;
use toml::{Table, Value};

/// Where images come from.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    /// Image directory; `None` means the synthetic generator.
    pub path: Option<PathBuf>,
    pub ids: usize,
    pub views: usize,
    /// Render side; defaults to the encoder's input side.
    pub side: Option<usize>,
    /// Generator seed; defaults to the run seed.
    pub seed: Option<u64>,
    /// Identities held out of training for evaluation.
    pub holdout: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { path: None, ids: 20, views: 4, side: None, seed: None, holdout: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub out: PathBuf,
    pub max_steps: Option<u64>,
    pub stop_accuracy: Option<f64>,
    /// Steps averaged for the accuracy stop; unset means whole epochs.
    pub accuracy_window: Option<u64>,
    /// Seconds.
    pub time_limit: Option<f64>,
    pub log_every: u64,
    /// Whether the file set any `model`, `encoder`, `comparator` or
    /// `glimpse` key.
    pub model_keys: bool,
    seed_set: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            data: DataConfig::default(),
            eval: EvalConfig::default(),
            out: PathBuf::from("runs/latest"),
            max_steps: None,
            stop_accuracy: None,
            accuracy_window: None,
            time_limit: None,
            log_every: 10,
            model_keys: false,
            seed_set: false,
        }
    }
}

/// Every accepted key, listed when an unknown one is rejected.
pub const KEYS: &[&str] = &[
    "model.classes",
    "model.head",
    "encoder.input_side",
    "encoder.stages",
    "comparator.hidden",
    "comparator.glimpses",
    "comparator.dropout",
    "glimpse.k",
    "glimpse.kernel",
    "glimpse.eq7_division",
    "train.batch",
    "train.lr",
    "train.decay",
    "train.clip",
    "train.clip_mode",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.epochs",
    "train.epoch_episodes",
    "train.patience",
    "train.checkpoint_every",
    "train.seed",
    "train.max_steps",
    "train.stop_accuracy",
    "train.accuracy_window",
    "train.time_limit",
    "train.log_every",
    "data.path",
    "data.ids",
    "data.views",
    "data.side",
    "data.seed",
    "data.holdout",
    "eval.trials",
    "eval.seed",
    "eval.probe_camera",
    "output.dir",
];

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config file {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let table: Table = text.parse().map_err(|e| anyhow!("{e}"))?;
        let mut entries = Vec::new();
        flatten("", &table, &mut entries);
        let mut cfg = RunConfig::default();
        for (key, value) in entries {
            cfg.set(&key, &value)?;
        }
        Ok(cfg)
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    /// Flag beats file beats `DCC_SEED` beats 0.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> Result<()> {
        if let Some(s) = flag {
            self.train.seed = s;
        } else if !self.seed_set {
            if let Ok(v) = std::env::var("DCC_SEED") {
                self.train.seed =
                    v.trim().parse().map_err(|_| anyhow!("DCC_SEED must be an unsigned integer, got {v:?}"))?;
            }
        }
        self.seed_set = true;
        Ok(())
    }

    pub fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(self.train.seed)
    }

    pub fn data_side(&self) -> usize {
        self.data.side.unwrap_or(self.train.model.encoder.input_side)
    }

    fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        let lower = key.to_ascii_lowercase();
        let section = lower.split('.').next().unwrap_or("");
        if matches!(section, "model" | "encoder" | "comparator" | "glimpse") {
            self.model_keys = true;
        }
        let t = &mut self.train;
        let m = &mut t.model;
        match lower.as_str() {
            "model.classes" => m.classes = int(key, v)?,
            "model.head" => m.head = parsed(key, v)?,
            "encoder.input_side" => m.encoder.input_side = int(key, v)?,
            "encoder.stages" => m.encoder.stages = parse_stages(text(key, v)?).context(key.to_string())?,
            "comparator.hidden" => m.comparator.hidden = int(key, v)?,
            "comparator.glimpses" => m.comparator.glimpses = int(key, v)?,
            "comparator.dropout" => m.comparator.dropout = float(key, v)?,
            "glimpse.k" => m.comparator.glimpse.k = int(key, v)?,
            "glimpse.kernel" => m.comparator.glimpse.kernel = parsed(key, v)?,
            "glimpse.eq7_division" => m.comparator.glimpse.eq7_division = boolean(key, v)?,
            "train.batch" => t.batch = int(key, v)?,
            "train.lr" => t.lr = float(key, v)?,
            "train.decay" => t.decay = float(key, v)?,
            "train.clip" => t.clip = float(key, v)?,
            "train.clip_mode" => t.clip_mode = parsed(key, v)?,
            "train.beta1" => t.adam.beta1 = float(key, v)?,
            "train.beta2" => t.adam.beta2 = float(key, v)?,
            "train.eps" => t.adam.eps = float(key, v)?,
            "train.epochs" => t.epochs = int(key, v)?,
            "train.epoch_episodes" => t.epoch_episodes = int(key, v)?,
            "train.patience" => t.patience = int(key, v)?,
            "train.checkpoint_every" => t.checkpoint_every = int(key, v)?,
            "train.seed" => {
                t.seed = int(key, v)?;
                self.seed_set = true;
            }
            "train.max_steps" => self.max_steps = Some(int(key, v)?),
            "train.stop_accuracy" => self.stop_accuracy = Some(float(key, v)?),
            "train.accuracy_window" => self.accuracy_window = Some(int(key, v)?),
            "train.time_limit" => self.time_limit = Some(float(key, v)?),
            "train.log_every" => self.log_every = int(key, v)?,
            "data.path" => self.data.path = Some(PathBuf::from(text(key, v)?)),
            "data.ids" => self.data.ids = int(key, v)?,
            "data.views" => self.data.views = int(key, v)?,
            "data.side" => self.data.side = Some(int(key, v)?),
            "data.seed" => self.data.seed = Some(int(key, v)?),
            "data.holdout" => self.data.holdout = int(key, v)?,
            "eval.trials" => self.eval.trials = int(key, v)?,
            "eval.seed" => self.eval.seed = int(key, v)?,
            "eval.probe_camera" => self.eval.probe_camera = int(key, v)?,
            "output.dir" => self.out = PathBuf::from(text(key, v)?),
            _ => bail!("unknown config key `{key}`; known keys: {}", KEYS.join(", ")),
        }
        Ok(())
    }

    /// Checks that need no data; run before anything is computed.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.train.model.encoder.output_side()?;
        let d = &self.data;
        if d.path.is_none() {
            if d.ids == 0 || d.views == 0 {
                bail!("data.ids and data.views must be at least 1");
            }
            if d.holdout >= d.ids {
                bail!("data.holdout ({}) leaves no training identities out of {}", d.holdout, d.ids);
            }
        }
        if self.eval.trials == 0 {
            bail!("eval.trials must be at least 1");
        }
        if let Some(a) = self.stop_accuracy {
            if !(0.0..=1.0).contains(&a) {
                bail!("train.stop_accuracy must lie in [0, 1], got {a}");
            }
        }
        if self.accuracy_window == Some(0) {
            bail!("train.accuracy_window must be at least 1");
        }
        if let Some(s) = self.time_limit {
            if !(s > 0.0) {
                bail!("train.time_limit must be positive, got {s}");
            }
        }
        if self.log_every == 0 {
            bail!("train.log_every must be at least 1");
        }
        Ok(())
    }
}

fn flatten(prefix: &str, table: &Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

fn int<T: TryFrom<i64>>(key: &str, v: &Value) -> Result<T> {
    let i = v.as_integer().ok_or_else(|| anyhow!("`{key}` must be an integer, got {v}"))?;
    T::try_from(i).map_err(|_| anyhow!("`{key}` is out of range: {i}"))
}

fn float(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => bail!("`{key}` must be a number, got {v}"),
    }
}

fn boolean(key: &str, v: &Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| anyhow!("`{key}` must be true or false, got {v}"))
}

fn text<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| anyhow!("`{key}` must be a string, got {v}"))
}

fn parsed<T>(key: &str, v: &Value) -> Result<T>
where
    T: FromStr,
    T::Err: std::error::Error + Send + Sync + 'static,
{
    text(key, v)?.parse().with_context(|| format!("bad value for `{key}`"))
}

/// `"16/2/pool, 32/2"`: channels, stride and an optional pool marker.
pub fn parse_stages(s: &str) -> Result<Vec<StemStage>> {
    let mut stages = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let fields: Vec<&str> = part.split('/').map(str::trim).collect();
        let stage = match fields[..] {
            [c, st] => StemStage { out_channels: c.parse()?, stride: st.parse()?, pool: false },
            [c, st, "pool"] => StemStage { out_channels: c.parse()?, stride: st.parse()?, pool: true },
            _ => bail!("stage `{part}` is not CHANNELS/STRIDE[/pool]"),
        };
        stages.push(stage);
    }
    if stages.is_empty() {
        bail!("at least one stem stage is required");
    }
    Ok(stages)
}

pub struct Stages<'a>(pub &'a [StemStage]);

impl fmt::Display for Stages<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}/{}", s.out_channels, s.stride)?;
            if s.pool {
                f.write_str("/pool")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dcc_core::glimpse::Kernel;
    use dcc_core::model::HeadKind;

    #[test]
    fn sections_and_dotted_keys() {
        let cfg = RunConfig::parse(
            "eval.trials = 3\n[comparator]\nhidden = 32\n[model]\nhead = \"spp\"\n[glimpse]\nK = 3\nkernel = \"gaussian\"\n[train]\nlr = 2e-3\nseed = 5\n",
        )
        .unwrap();
        let m = &cfg.train.model;
        assert_eq!(m.comparator.glimpse.k, 3);
        assert_eq!(m.comparator.glimpse.kernel, Kernel::Gaussian);
        assert_eq!(m.comparator.hidden, 32);
        assert_eq!(m.head, HeadKind::Spp);
        assert_eq!(cfg.train.lr, 2e-3);
        assert_eq!(cfg.seed(), 5);
        assert_eq!(cfg.eval.trials, 3);
        assert!(cfg.model_keys);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse("[glimpse]\nwidth = 3\n").unwrap_err();
        assert!(format!("{err:#}").contains("glimpse.width"), "{err:#}");
    }

    #[test]
    fn wrong_type_is_named() {
        let err = RunConfig::parse("[train]\nbatch = \"eight\"\n").unwrap_err();
        assert!(format!("{err:#}").contains("train.batch"), "{err:#}");
    }

    #[test]
    fn stage_strings_round_trip() {
        let stages = parse_stages("16/2/pool, 32/2").unwrap();
        assert_eq!(stages, TrainConfig::default().model.encoder.stages);
        assert_eq!(Stages(&stages).to_string(), "16/2/pool, 32/2");
        assert!(parse_stages("16").is_err());
    }

    #[test]
    fn every_listed_key_is_accepted() {
        for key in KEYS {
            let mut cfg = RunConfig::default();
            let value = match *key {
                "model.head" => Value::String("gp".into()),
                "glimpse.kernel" => Value::String("cauchy".into()),
                "train.clip_mode" => Value::String("global".into()),
                "encoder.stages" => Value::String("8/2".into()),
                "data.path" | "output.dir" => Value::String("x".into()),
                "glimpse.eq7_division" => Value::Boolean(true),
                _ => Value::Integer(1),
            };
            cfg.set(key, &value).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }
}
