use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::synth::{generate_identity, render_view, ViewParams};
use super::Image;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub identity: usize,
    pub camera: usize,
    pub image: Image,
}

/// Labelled images. `identities[i]` names identity label `i`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub identities: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn num_identities(&self) -> usize {
        self.identities.len()
    }

    /// Sample indices per identity label.
    pub fn by_identity(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.identities.len()];
        for (i, s) in self.samples.iter().enumerate() {
            out[s.identity].push(i);
        }
        out
    }

    /// Keep only the given identity labels, relabelled `0..n` in order.
    pub fn subset(&self, identities: &[usize]) -> Dataset {
        let mut map = vec![None; self.identities.len()];
        for (new, &old) in identities.iter().enumerate() {
            map[old] = Some(new);
        }
        Dataset {
            identities: identities.iter().map(|&i| self.identities[i].clone()).collect(),
            samples: self
                .samples
                .iter()
                .filter_map(|s| map[s.identity].map(|id| Sample { identity: id, ..s.clone() }))
                .collect(),
        }
    }

    /// Split identities into a leading training part and the rest.
    pub fn split_identities(&self, train: usize) -> (Dataset, Dataset) {
        let n = self.identities.len();
        let train = train.min(n);
        (
            self.subset(&(0..train).collect::<Vec<_>>()),
            self.subset(&(train..n).collect::<Vec<_>>()),
        )
    }
}

/// Options for [`synthetic_dataset`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub ids: usize,
    pub views: usize,
    pub side: usize,
    pub seed: u64,
}

/// `ids × views` rendered images; view `v` is taken by camera `v`.
pub fn synthetic_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.ids == 0 || cfg.views == 0 || cfg.side == 0 {
        return Err(Error::Data("synthetic dataset needs ids, views and side ≥ 1".into()));
    }
    let mut samples = Vec::with_capacity(cfg.ids * cfg.views);
    for id in 0..cfg.ids {
        let proto = generate_identity(cfg.seed, id);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (id as u64).wrapping_mul(0xA24B_AED4_963E_E407));
        for camera in 0..cfg.views {
            let image = loop {
                let view = ViewParams::sample(camera, &mut rng);
                match render_view(&proto, &view, cfg.side) {
                    Ok(img) => break img,
                    Err(Error::Data(_)) => continue,
                    Err(e) => return Err(e),
                }
            };
            samples.push(Sample { identity: id, camera, image });
        }
    }
    Ok(Dataset {
        identities: (0..cfg.ids).map(|i| format!("id{i:04}")).collect(),
        samples,
    })
}

/// One unknown sample scored against one reference per class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Episode {
    pub unknown: usize,
    pub references: Vec<usize>,
    /// Position of the unknown's identity within `references`.
    pub target: usize,
}

impl Episode {
    pub fn classes(&self) -> usize {
        self.references.len()
    }

    /// Exactly one reference per identity, target in range and sharing the
    /// unknown's identity.
    pub fn validate(&self, data: &Dataset) -> Result<()> {
        let n = data.samples.len();
        if self.unknown >= n || self.references.iter().any(|&r| r >= n) {
            return Err(Error::Contract("episode refers to missing samples".into()));
        }
        if self.target >= self.references.len() {
            return Err(Error::Contract(format!(
                "target {} out of {} classes",
                self.target,
                self.references.len()
            )));
        }
        let ids: Vec<usize> = self.references.iter().map(|&r| data.samples[r].identity).collect();
        for (i, a) in ids.iter().enumerate() {
            if ids[i + 1..].contains(a) {
                return Err(Error::Contract(format!("identity {a} appears twice in the episode")));
            }
        }
        if ids[self.target] != data.samples[self.unknown].identity {
            return Err(Error::Contract("target reference does not match the unknown".into()));
        }
        Ok(())
    }
}

/// Draw `classes` distinct identities, a uniformly placed target, and an
/// unknown taken from a different view than the target's reference.
pub fn make_episode(data: &Dataset, classes: usize, rng: &mut impl Rng) -> Result<Episode> {
    let groups = data.by_identity();
    let eligible: Vec<usize> = (0..groups.len()).filter(|&i| groups[i].len() >= 2).collect();
    if classes < 2 || eligible.len() < classes {
        return Err(Error::Data(format!(
            "episode of {classes} classes needs that many identities with ≥ 2 views; have {}",
            eligible.len()
        )));
    }
    let chosen: Vec<usize> = index::sample(rng, eligible.len(), classes)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    let target = rng.gen_range(0..classes);
    let mut references = Vec::with_capacity(classes);
    let mut unknown = 0;
    for (pos, &id) in chosen.iter().enumerate() {
        let views = &groups[id];
        if pos == target {
            let pick = index::sample(rng, views.len(), 2);
            references.push(views[pick.index(0)]);
            unknown = views[pick.index(1)];
        } else {
            references.push(views[rng.gen_range(0..views.len())]);
        }
    }
    Ok(Episode { unknown, references, target })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(ids: usize, views: usize) -> Dataset {
        synthetic_dataset(&SynthConfig { ids, views, side: 16, seed: 3 }).unwrap()
    }

    #[test]
    fn minimal_episode() {
        let d = small(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = make_episode(&d, 2, &mut rng).unwrap();
        assert!(e.target < 2);
        e.validate(&d).unwrap();
    }

    #[test]
    fn unknown_view_differs_from_reference() {
        let d = small(6, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let e = make_episode(&d, 4, &mut rng).unwrap();
            let (u, r) = (&d.samples[e.unknown], &d.samples[e.references[e.target]]);
            assert_eq!(u.identity, r.identity);
            assert_ne!(u.camera, r.camera);
        }
    }

    #[test]
    fn insufficient_data_is_an_error() {
        let d = small(3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(make_episode(&d, 2, &mut rng), Err(Error::Data(_))));
        let d = small(3, 2);
        assert!(matches!(make_episode(&d, 4, &mut rng), Err(Error::Data(_))));
    }

    #[test]
    fn duplicate_class_is_contract_error() {
        let d = small(3, 2);
        let e = Episode { unknown: 1, references: vec![0, 0, 2], target: 0 };
        assert!(matches!(e.validate(&d), Err(Error::Contract(_))));
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(small(4, 2), small(4, 2));
    }

    #[test]
    fn split_relabels() {
        let d = small(5, 2);
        let (a, b) = d.split_identities(3);
        assert_eq!((a.num_identities(), b.num_identities()), (3, 2));
        assert_eq!(b.samples[0].image, d.samples[6].image);
        assert_eq!(b.samples[0].identity, 0);
    }
}
