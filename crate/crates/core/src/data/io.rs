//! Image directories laid out as `<root>/<identity>/<camera>_<index>.<png|ppm>`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;

use super::{Dataset, Image, Sample};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "dataset.txt";

#[derive(Clone, Debug)]
pub struct Loaded {
    pub dataset: Dataset,
    /// Files that were skipped, with the reason.
    pub warnings: Vec<String>,
}

/// Parse `<camera>_<index>.<ext>`; the camera may carry a `c` prefix.
fn parse_name(name: &str) -> Option<(usize, usize)> {
    let (stem, ext) = name.rsplit_once('.')?;
    if ext != "png" && ext != "ppm" {
        return None;
    }
    let (cam, idx) = stem.rsplit_once('_')?;
    let cam = cam.strip_prefix('c').unwrap_or(cam);
    Some((cam.parse().ok()?, idx.parse().ok()?))
}

fn sorted_entries(dir: &Path) -> Result<Vec<fs::DirEntry>> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    Ok(entries)
}

/// Load every identity folder under `root`, resizing images to `side×side`.
/// Identity labels follow the sorted folder names.
pub fn load_directory(root: &Path, side: usize) -> Result<Loaded> {
    let mut dataset = Dataset::default();
    let mut warnings = Vec::new();
    for entry in sorted_entries(root)? {
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let label = dataset.identities.len();
        let mut files: BTreeMap<(usize, usize), std::path::PathBuf> = BTreeMap::new();
        for f in sorted_entries(&path)? {
            let fname = f.file_name().to_string_lossy().into_owned();
            match parse_name(&fname) {
                Some(key) => {
                    files.insert(key, f.path());
                }
                None => {
                    let msg = format!("skipping {}: expected <camera>_<index>.<png|ppm>", f.path().display());
                    warn!("{msg}");
                    warnings.push(msg);
                }
            }
        }
        if files.is_empty() {
            return Err(Error::Data(format!("identity folder {} holds no images", path.display())));
        }
        for ((camera, _), file) in files {
            let image = Image::read(&file)?.resize(side, side);
            dataset.samples.push(Sample { identity: label, camera, image });
        }
        dataset.identities.push(name);
    }
    if dataset.identities.is_empty() {
        return Err(Error::Data(format!("no identity folders under {}", root.display())));
    }
    Ok(Loaded { dataset, warnings })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ImageFormat {
    #[default]
    Ppm,
    Png,
}

/// Write `dataset` under `root` plus a manifest listing identities, cameras
/// and counts.
pub fn export_directory(dataset: &Dataset, root: &Path, format: ImageFormat) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut manifest = String::from("# identity cameras images\n");
    for (label, name) in dataset.identities.iter().enumerate() {
        let dir = root.join(name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut per_camera: BTreeMap<usize, usize> = BTreeMap::new();
        for s in dataset.samples.iter().filter(|s| s.identity == label) {
            let idx = per_camera.entry(s.camera).or_default();
            match format {
                ImageFormat::Ppm => s.image.write_ppm(&dir.join(format!("{}_{}.ppm", s.camera, idx)))?,
                ImageFormat::Png => s.image.write_png(&dir.join(format!("{}_{}.png", s.camera, idx)))?,
            }
            *idx += 1;
        }
        let total: usize = per_camera.values().sum();
        writeln!(manifest, "{name} {} {total}", per_camera.len()).expect("string write");
    }
    let path = root.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_dataset, SynthConfig};

    #[test]
    fn names() {
        assert_eq!(parse_name("3_0.ppm"), Some((3, 0)));
        assert_eq!(parse_name("c1_12.png"), Some((1, 12)));
        assert_eq!(parse_name("front.png"), None);
        assert_eq!(parse_name("1_2.jpg"), None);
    }

    #[test]
    fn two_ids_two_cams() {
        let dir = tempfile::tempdir().unwrap();
        for id in ["alice", "bob"] {
            fs::create_dir(dir.path().join(id)).unwrap();
            for cam in 0..2 {
                Image::black(4).write_ppm(&dir.path().join(id).join(format!("{cam}_0.ppm"))).unwrap();
            }
        }
        fs::write(dir.path().join("bob").join("notes.ppm"), b"x").unwrap();
        let loaded = load_directory(dir.path(), 4).unwrap();
        assert_eq!(loaded.dataset.samples.len(), 4);
        assert_eq!(loaded.dataset.identities, ["alice", "bob"]);
        assert_eq!(loaded.warnings.len(), 1);
    }

    #[test]
    fn empty_identity_folder_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("ghost")).unwrap();
        assert!(matches!(load_directory(dir.path(), 4), Err(Error::Data(_))));
    }

    #[test]
    fn synthetic_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = synthetic_dataset(&SynthConfig { ids: 3, views: 2, side: 20, seed: 8 }).unwrap();
        export_directory(&d, dir.path(), ImageFormat::Ppm).unwrap();
        let back = load_directory(dir.path(), 20).unwrap();
        assert!(back.warnings.is_empty());
        assert_eq!(back.dataset, d);
        let manifest = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert!(manifest.contains("id0001 2 2"));
    }
}
