//! `DCCKPT v1`: a text manifest followed by a little-endian f64 payload.
//!
//! ```text
//! DCCKPT v1
//! step <m>
//! adam_t <t>
//! rng <seed hex> <stream> <word pos>
//! config <json>
//! param <name> <d0,d1,..> <byte offset>
//! adam_m <name> <shape> <offset>
//! adam_v <name> <shape> <offset>
//! payload <bytes>
//! <payload>
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

const MAGIC: &str = "DCCKPT v1";

/// Everything needed to resume a ChaCha8 stream exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: u64,
    pub params: Vec<(String, Tensor)>,
    pub adam_t: u64,
    pub adam_m: Vec<Tensor>,
    pub adam_v: Vec<Tensor>,
    pub rng: RngState,
}

fn shape_str(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl Checkpoint {
    /// A model with this checkpoint's configuration and weights.
    pub fn model(&self) -> Result<Model> {
        use rand::SeedableRng;
        let mut model = Model::new(self.config.model.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
        model.store_mut().load_from(&self.params)?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = String::new();
        let hex: String = self.rng.seed.iter().map(|b| format!("{b:02x}")).collect();
        let config = serde_json::to_string(&self.config).expect("config serializes");
        writeln!(head, "{MAGIC}").unwrap();
        writeln!(head, "step {}", self.step).unwrap();
        writeln!(head, "adam_t {}", self.adam_t).unwrap();
        writeln!(head, "rng {hex} {} {}", self.rng.stream, self.rng.word_pos).unwrap();
        writeln!(head, "config {config}").unwrap();
        let mut payload = Vec::new();
        let sections = [
            ("param", self.params.iter().map(|(_, t)| t).collect::<Vec<_>>()),
            ("adam_m", self.adam_m.iter().collect()),
            ("adam_v", self.adam_v.iter().collect()),
        ];
        for (tag, tensors) in sections {
            for ((name, _), t) in self.params.iter().zip(tensors) {
                writeln!(head, "{tag} {name} {} {}", shape_str(t.shape()), payload.len()).unwrap();
                payload.extend(t.data().iter().flat_map(|v| v.to_le_bytes()));
            }
        }
        writeln!(head, "payload {}", payload.len()).unwrap();
        let mut out = head.into_bytes();
        out.extend(payload);
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|msg| Error::format(path, msg))
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut pos = 0;
        let mut next_line = || -> std::result::Result<&str, String> {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or("manifest ends before the payload line")?;
            let line = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| "manifest is not UTF-8")?;
            pos += end + 1;
            Ok(line)
        };
        if next_line()? != MAGIC {
            return Err(format!("missing {MAGIC} header"));
        }
        let (mut step, mut adam_t, mut rng, mut config) = (None, None, None, None);
        let mut entries: Vec<(String, String, Vec<usize>, usize)> = Vec::new();
        let payload_len = loop {
            let line = next_line()?;
            let (key, rest) = line.split_once(' ').ok_or_else(|| format!("bad manifest line {line:?}"))?;
            let num = |s: &str| s.parse::<u64>().map_err(|_| format!("bad number in {line:?}"));
            match key {
                "step" => step = Some(num(rest)?),
                "adam_t" => adam_t = Some(num(rest)?),
                "rng" => {
                    let f: Vec<&str> = rest.split(' ').collect();
                    if f.len() != 3 || f[0].len() != 64 {
                        return Err(format!("bad rng line {line:?}"));
                    }
                    let mut seed = [0u8; 32];
                    for (i, b) in seed.iter_mut().enumerate() {
                        *b = u8::from_str_radix(&f[0][2 * i..2 * i + 2], 16)
                            .map_err(|_| "bad rng seed".to_string())?;
                    }
                    let stream = num(f[1])?;
                    let word_pos = f[2].parse::<u128>().map_err(|_| "bad rng position".to_string())?;
                    rng = Some(RngState { seed, stream, word_pos });
                }
                "config" => {
                    config = Some(
                        serde_json::from_str::<TrainConfig>(rest).map_err(|e| format!("bad config: {e}"))?,
                    )
                }
                "param" | "adam_m" | "adam_v" => {
                    let f: Vec<&str> = rest.split(' ').collect();
                    if f.len() != 3 {
                        return Err(format!("bad tensor line {line:?}"));
                    }
                    let shape = f[1]
                        .split(',')
                        .map(|d| d.parse::<usize>().map_err(|_| format!("bad shape in {line:?}")))
                        .collect::<std::result::Result<Vec<_>, _>>()?;
                    entries.push((key.to_string(), f[0].to_string(), shape, num(f[2])? as usize));
                }
                "payload" => break num(rest)? as usize,
                _ => return Err(format!("unknown manifest key {key:?}")),
            }
        };
        let payload = &bytes[pos..];
        if payload.len() != payload_len {
            return Err(format!("payload holds {} bytes, manifest says {payload_len}", payload.len()));
        }
        let mut ck = Checkpoint {
            config: config.ok_or("missing config")?,
            step: step.ok_or("missing step")?,
            params: Vec::new(),
            adam_t: adam_t.ok_or("missing adam_t")?,
            adam_m: Vec::new(),
            adam_v: Vec::new(),
            rng: rng.ok_or("missing rng")?,
        };
        for (tag, name, shape, offset) in entries {
            let n: usize = shape.iter().product();
            let end = offset + 8 * n;
            if end > payload.len() {
                return Err(format!("{tag} {name} needs bytes {offset}..{end} of {}", payload.len()));
            }
            let data = payload[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(&shape, data).map_err(|e| e.to_string())?;
            match tag.as_str() {
                "param" => ck.params.push((name, t)),
                "adam_m" => ck.adam_m.push(t),
                _ => ck.adam_v.push(t),
            }
        }
        if ck.adam_m.len() != ck.params.len() || ck.adam_v.len() != ck.params.len() {
            return Err("optimizer moments do not match the parameters".into());
        }
        Ok(ck)
    }
}
