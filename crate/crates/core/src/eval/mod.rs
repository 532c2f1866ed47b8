//! Single-shot re-identification metrics and protocol.

pub mod pool;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::encoder::FeatureMap;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

/// Ranks reported in the summary table.
pub const RANKS: [usize; 4] = [1, 5, 10, 20];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankRate {
    pub k: usize,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// `cmc[k]` is the fraction of queries whose true match ranks `≤ k+1`.
    pub cmc: Vec<f64>,
    pub ranks: Vec<RankRate>,
    pub map: f64,
    pub trials: usize,
}

impl EvalResult {
    /// Average per-trial curves and mAPs.
    pub fn from_trials(curves: &[Vec<f64>], maps: &[f64]) -> Result<Self> {
        let Some(first) = curves.first() else {
            return Err(Error::Protocol("no trials to average".into()));
        };
        if curves.iter().any(|c| c.len() != first.len()) || maps.len() != curves.len() {
            return Err(Error::Protocol("trials disagree on gallery size".into()));
        }
        let n = curves.len() as f64;
        let cmc: Vec<f64> =
            (0..first.len()).map(|k| curves.iter().map(|c| c[k]).sum::<f64>() / n).collect();
        let ranks = RANKS
            .iter()
            .map(|&k| RankRate { k, rate: cmc[k.min(cmc.len()) - 1] })
            .collect();
        Ok(EvalResult { cmc, ranks, map: maps.iter().sum::<f64>() / n, trials: curves.len() })
    }

    /// Rank-`k` rate, clamped to the gallery size.
    pub fn rank(&self, k: usize) -> f64 {
        self.cmc[k.clamp(1, self.cmc.len()) - 1]
    }

    pub fn table_header() -> String {
        let mut s = format!("{:<12}", "method");
        for k in RANKS {
            write!(s, " {:>8}", format!("R={k}")).expect("string write");
        }
        s + &format!(" {:>8}", "mAP")
    }

    /// One table row in percent.
    pub fn table_row(&self, label: &str) -> String {
        let mut s = format!("{label:<12}");
        for r in &self.ranks {
            write!(s, " {:>8.1}", 100.0 * r.rate).expect("string write");
        }
        s + &format!(" {:>8.1}", 100.0 * self.map)
    }

    pub fn report(&self, label: &str) -> String {
        format!(
            "{}\n{}\ngallery {} | trials {}\n",
            Self::table_header(),
            self.table_row(label),
            self.cmc.len(),
            self.trials
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

fn check_inputs(sim: &Tensor, query: &[usize], gallery: &[usize]) -> Result<()> {
    let (q, g) = sim.dims2();
    if q != query.len() || g != gallery.len() {
        return Err(Error::Shape(format!(
            "similarity {:?} vs {} queries and {} gallery items",
            sim.shape(),
            query.len(),
            gallery.len()
        )));
    }
    if !sim.is_finite() {
        return Err(Error::Protocol("non-finite similarity".into()));
    }
    let missing: Vec<usize> = query.iter().copied().filter(|l| !gallery.contains(l)).collect();
    if !missing.is_empty() {
        return Err(Error::Protocol(format!("queries with labels {missing:?} have no gallery match")));
    }
    Ok(())
}

/// Gallery indices by descending similarity, ties by ascending index.
fn ranking(row: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    order
}

/// Cumulative match characteristic over a `Q×G` similarity matrix.
pub fn cmc(sim: &Tensor, query: &[usize], gallery: &[usize]) -> Result<Vec<f64>> {
    check_inputs(sim, query, gallery)?;
    let g = gallery.len();
    let mut hits = vec![0usize; g];
    for (qi, row) in sim.data().chunks(g).enumerate() {
        let first = ranking(row)
            .iter()
            .position(|&j| gallery[j] == query[qi])
            .expect("checked match");
        hits[first] += 1;
    }
    let mut acc = 0;
    Ok(hits
        .iter()
        .map(|h| {
            acc += h;
            acc as f64 / query.len() as f64
        })
        .collect())
}

/// Mean over queries of average precision.
pub fn map_score(sim: &Tensor, query: &[usize], gallery: &[usize]) -> Result<f64> {
    check_inputs(sim, query, gallery)?;
    let g = gallery.len();
    let mut total = 0.0;
    for (qi, row) in sim.data().chunks(g).enumerate() {
        let (mut found, mut ap) = (0usize, 0.0);
        for (pos, &j) in ranking(row).iter().enumerate() {
            if gallery[j] == query[qi] {
                found += 1;
                ap += found as f64 / (pos + 1) as f64;
            }
        }
        total += ap / found as f64;
    }
    Ok(total / query.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalConfig {
    pub trials: usize,
    pub seed: u64,
    /// Probes are the images from this camera; the gallery draws from the rest.
    pub probe_camera: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { trials: 10, seed: 0, probe_camera: 0 }
    }
}

/// Probe and gallery candidates for the single-shot protocol.
#[derive(Clone, Debug)]
pub struct Protocol {
    pub probes: Vec<usize>,
    /// Per gallery identity: the label and its candidate sample indices.
    pub candidates: Vec<(usize, Vec<usize>)>,
}

impl Protocol {
    pub fn single_shot(data: &Dataset, probe_camera: usize) -> Result<Self> {
        let probes: Vec<usize> = (0..data.samples.len())
            .filter(|&i| data.samples[i].camera == probe_camera)
            .collect();
        if probes.is_empty() {
            return Err(Error::Protocol(format!("no probe images from camera {probe_camera}")));
        }
        let mut candidates = Vec::new();
        for (label, idx) in data.by_identity().into_iter().enumerate() {
            let other: Vec<usize> =
                idx.into_iter().filter(|&i| data.samples[i].camera != probe_camera).collect();
            if !other.is_empty() {
                candidates.push((label, other));
            }
        }
        let mut missing: Vec<&str> = probes
            .iter()
            .map(|&p| data.samples[p].identity)
            .filter(|l| !candidates.iter().any(|(c, _)| c == l))
            .map(|l| data.identities[l].as_str())
            .collect();
        missing.dedup();
        if !missing.is_empty() {
            return Err(Error::Protocol(format!(
                "identities with no gallery-view image: {}",
                missing.join(", ")
            )));
        }
        Ok(Protocol { probes, candidates })
    }

    /// One exemplar per gallery identity.
    pub fn sample_gallery(&self, rng: &mut impl Rng) -> Vec<usize> {
        self.candidates.iter().map(|(_, c)| c[rng.gen_range(0..c.len())]).collect()
    }
}

/// Run `cfg.trials` single-shot trials, scoring `(probe, gallery)` sample
/// index pairs with `score`, and average the results.
pub fn evaluate<F>(data: &Dataset, cfg: &EvalConfig, mut score: F) -> Result<EvalResult>
where
    F: FnMut(usize, usize) -> Result<f64>,
{
    if cfg.trials == 0 {
        return Err(Error::Config("evaluation needs at least one trial".into()));
    }
    let proto = Protocol::single_shot(data, cfg.probe_camera)?;
    let query: Vec<usize> = proto.probes.iter().map(|&p| data.samples[p].identity).collect();
    let labels: Vec<usize> = proto.candidates.iter().map(|(l, _)| *l).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut curves, mut maps) = (Vec::new(), Vec::new());
    for _ in 0..cfg.trials {
        let gallery = proto.sample_gallery(&mut rng);
        let mut sim = Vec::with_capacity(query.len() * gallery.len());
        for &p in &proto.probes {
            for &g in &gallery {
                sim.push(score(p, g)?);
            }
        }
        let sim = Tensor::new(&[query.len(), gallery.len()], sim)?;
        curves.push(cmc(&sim, &query, &labels)?);
        maps.push(map_score(&sim, &query, &labels)?);
    }
    EvalResult::from_trials(&curves, &maps)
}

/// [`evaluate`] with the model's test-time similarity; features and pair
/// scores are cached across trials.
pub fn evaluate_model(model: &Model, data: &Dataset, cfg: &EvalConfig) -> Result<EvalResult> {
    let mut features: Vec<Option<FeatureMap>> = vec![None; data.samples.len()];
    let mut cache: HashMap<(usize, usize), f64> = HashMap::new();
    evaluate(data, cfg, |p, g| {
        if let Some(&s) = cache.get(&(p, g)) {
            return Ok(s);
        }
        for i in [p, g] {
            if features[i].is_none() {
                features[i] = Some(model.features(&data.samples[i].image)?);
            }
        }
        let s = model.similarity(
            features[p].as_ref().expect("cached"),
            features[g].as_ref().expect("cached"),
        )?;
        cache.insert((p, g), s);
        Ok(s)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim(q: usize, g: usize, v: &[f64]) -> Tensor {
        Tensor::new(&[q, g], v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_ranking() {
        let s = sim(3, 3, &[0.9, 0.1, 0.2, 0.0, 0.8, 0.3, 0.1, 0.2, 0.7]);
        assert_eq!(cmc(&s, &[0, 1, 2], &[0, 1, 2]).unwrap(), [1.0; 3]);
        assert_eq!(map_score(&s, &[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
    }

    #[test]
    fn ranks_one_and_two() {
        let s = sim(2, 3, &[0.9, 0.5, 0.1, 0.9, 0.5, 0.1]);
        assert_eq!(cmc(&s, &[0, 1], &[0, 1, 2]).unwrap(), [0.5, 1.0, 1.0]);
    }

    #[test]
    fn ap_hand_values() {
        let s = sim(1, 3, &[0.9, 0.5, 0.1]);
        let ap = map_score(&s, &[4], &[4, 7, 4]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        let s = sim(1, 2, &[0.9, 0.1]);
        assert_eq!(map_score(&s, &[1], &[0, 1]).unwrap(), 0.5);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let s = sim(1, 3, &[0.5, 0.5, 0.5]);
        assert_eq!(cmc(&s, &[1], &[0, 1, 2]).unwrap(), [0.0, 1.0, 1.0]);
    }

    #[test]
    fn unmatched_query_is_protocol_error() {
        let s = sim(1, 2, &[0.1, 0.2]);
        assert!(matches!(cmc(&s, &[9], &[0, 1]), Err(Error::Protocol(_))));
        assert!(matches!(map_score(&s, &[9], &[0, 1]), Err(Error::Protocol(_))));
    }

    #[test]
    fn rank_table_clamps() {
        let r = EvalResult::from_trials(&[vec![0.5, 1.0]], &[0.75]).unwrap();
        assert_eq!(r.ranks.iter().map(|x| x.rate).collect::<Vec<_>>(), [0.5, 1.0, 1.0, 1.0]);
        assert_eq!(r.rank(20), 1.0);
        let back: EvalResult = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
