use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pnm::{load_pgm, save_pgm, Grid};
use super::Sample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// PGM path, relative to the manifest's directory unless absolute.
    pub image: String,
    pub mask: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    /// Slices sharing a scan id always land in the same split; defaults to `id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<String>,
}

impl ManifestEntry {
    pub fn group(&self) -> &str {
        self.scan.as_deref().unwrap_or(&self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub samples: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        let m: DatasetManifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path.as_ref(), text + "\n").map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for e in &self.samples {
            if !ids.insert(e.id.as_str()) {
                return Err(Error::Data(format!("duplicate sample id {:?}", e.id)));
            }
        }
        let mut by_group: BTreeMap<&str, Option<Split>> = BTreeMap::new();
        for e in &self.samples {
            if let Some(prev) = by_group.insert(e.group(), e.split) {
                if prev != e.split {
                    return Err(Error::Data(format!(
                        "scan {:?} straddles splits",
                        e.group()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.samples
            .iter()
            .filter(|e| e.split == Some(split))
            .map(|e| e.id.as_str())
            .collect()
    }
}

/// Deterministic 80/10/10 split over scan groups: test and val each get
/// `ceil(0.1 n)` groups, train the rest.
pub fn split(manifest: &DatasetManifest, seed: u64) -> Result<DatasetManifest> {
    manifest.validate()?;
    let groups: BTreeSet<&str> = manifest.samples.iter().map(|e| e.group()).collect();
    let n = groups.len();
    if n < 10 {
        return Err(Error::config(format!(
            "need at least 10 scans to split, have {n}"
        )));
    }
    let mut order: Vec<&str> = groups.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = n.div_ceil(10);
    let assign: BTreeMap<&str, Split> = order
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            let s = if i < held {
                Split::Test
            } else if i < 2 * held {
                Split::Val
            } else {
                Split::Train
            };
            (g, s)
        })
        .collect();
    let mut out = manifest.clone();
    for e in &mut out.samples {
        let s = assign[e.group()];
        e.split = Some(s);
    }
    Ok(out)
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Load every entry's image and mask PGMs. Images are scaled to `[0, 1]`.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Vec<(Sample, Option<Split>)>> {
    let path = manifest_path.as_ref();
    let manifest = DatasetManifest::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    manifest
        .samples
        .iter()
        .map(|e| {
            let img = load_pgm(resolve(base, &e.image))?;
            let mask = load_pgm(resolve(base, &e.mask))?;
            if (img.width, img.height) != (mask.width, mask.height) {
                return Err(Error::dim(format!(
                    "sample {}: image {}x{} but mask {}x{}",
                    e.id, img.width, img.height, mask.width, mask.height
                )));
            }
            let s = Sample::new(
                e.id.clone(),
                img.width,
                img.height,
                img.to_unit(),
                mask.to_mask()?,
            )?;
            Ok((s, e.split))
        })
        .collect()
}

/// Write each sample as `images/<id>.pgm` (8-bit) and `masks/<id>.pgm`
/// under `dir`, plus `manifest.json` listing them with their splits.
pub fn write_dataset(
    samples: &[(Sample, Option<Split>)],
    dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    for sub in ["images", "masks"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut manifest = DatasetManifest::default();
    for (s, split) in samples {
        let image = format!("images/{}.pgm", s.id);
        let mask = format!("masks/{}.pgm", s.id);
        save_pgm(
            &Grid::from_unit(s.width, s.height, &s.image)?,
            dir.join(&image),
        )?;
        save_pgm(
            &Grid::from_mask(s.width, s.height, &s.mask)?,
            dir.join(&mask),
        )?;
        manifest.samples.push(ManifestEntry {
            id: s.id.clone(),
            image,
            mask,
            split: *split,
            scan: None,
        });
    }
    manifest.validate()?;
    manifest.save(dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn manifest(n: usize) -> DatasetManifest {
        DatasetManifest {
            samples: (0..n)
                .map(|i| ManifestEntry {
                    id: format!("s{i:03}"),
                    image: format!("s{i:03}.pgm"),
                    mask: format!("s{i:03}_mask.pgm"),
                    split: None,
                    scan: None,
                })
                .collect(),
        }
    }

    #[test]
    fn twenty_scans() {
        let m = split(&manifest(20), 3).unwrap();
        assert_eq!(m.ids(Split::Train).len(), 16);
        assert_eq!(m.ids(Split::Val).len(), 2);
        assert_eq!(m.ids(Split::Test).len(), 2);
        assert_eq!(m, split(&manifest(20), 3).unwrap());
        assert_ne!(m, split(&manifest(20), 4).unwrap());
    }

    #[test]
    fn partition_for_random_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let n = rng.gen_range(10..=100);
            let m = split(&manifest(n), rng.gen()).unwrap();
            let (tr, va, te) = (m.ids(Split::Train), m.ids(Split::Val), m.ids(Split::Test));
            assert_eq!(tr.len() + va.len() + te.len(), n);
            assert_eq!(va.len(), n.div_ceil(10));
            assert_eq!(te.len(), n.div_ceil(10));
            let all: BTreeSet<_> = tr.iter().chain(&va).chain(&te).collect();
            assert_eq!(all.len(), n);
        }
    }

    #[test]
    fn slices_of_a_scan_stay_together() {
        let mut m = manifest(60);
        for (i, e) in m.samples.iter_mut().enumerate() {
            e.scan = Some(format!("scan{}", i / 5));
        }
        let out = split(&m, 1).unwrap();
        out.validate().unwrap();
        // 12 scans: 2 test, 2 val
        assert_eq!(out.ids(Split::Test).len(), 10);
        assert_eq!(out.ids(Split::Val).len(), 10);
    }

    #[test]
    fn too_few() {
        assert!(matches!(split(&manifest(9), 0), Err(Error::Config(_))));
    }

    #[test]
    fn json_shape() {
        let mut m = manifest(1);
        m.samples[0].split = Some(Split::Val);
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(
            text,
            r#"{"samples":[{"id":"s000","image":"s000.pgm","mask":"s000_mask.pgm","split":"val"}]}"#
        );
    }
}
