use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `base · decay^(m/N)` with a real-valued exponent.
pub fn lr_at(m: u64, n: u64, base: f64, decay: f64) -> f64 {
    assert!(n >= 1, "steps per epoch must be positive");
    base * decay.powf(m as f64 / n as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClipMode {
    /// Sum over tensors of each tensor's L2 norm.
    #[default]
    SumOfNorms,
    /// L2 norm of all gradients concatenated.
    GlobalNorm,
}

impl std::str::FromStr for ClipMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" | "sum-of-norms" => Ok(ClipMode::SumOfNorms),
            "global" | "global-norm" => Ok(ClipMode::GlobalNorm),
            _ => Err(Error::Config(format!("unknown clip mode {s:?} (sum, global)"))),
        }
    }
}

pub fn gradient_norm(grads: &[Tensor], mode: ClipMode) -> f64 {
    match mode {
        ClipMode::SumOfNorms => grads.iter().map(Tensor::l2_norm).sum(),
        ClipMode::GlobalNorm => grads
            .iter()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt(),
    }
}

/// Rescale `grads` so their norm is at most `threshold`. Returns the norm
/// before clipping. `names[i]` labels `grads[i]` in errors.
pub fn clip_gradients(
    grads: &mut [Tensor],
    names: &[&str],
    threshold: f64,
    mode: ClipMode,
) -> Result<f64> {
    if let Some(i) = grads.iter().position(|t| !t.is_finite()) {
        let name = names.get(i).copied().unwrap_or("?");
        return Err(Error::Training(format!("non-finite gradient for parameter {name}")));
    }
    let s = gradient_norm(grads, mode);
    if s > threshold {
        let k = threshold / s;
        for t in grads.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    /// Updates applied so far.
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Adam { cfg, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam: {} parameters, {} gradients, {} moments",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powf(self.t as f64);
        let c2 = 1.0 - beta2.powf(self.t as f64);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "adam: parameter {:?} vs gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
            for (i, &gi) in g.data().iter().enumerate() {
                md[i] = beta1 * md[i] + (1.0 - beta1) * gi;
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * gi * gi;
                pd[i] -= lr * (md[i] / c1) / ((vd[i] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
