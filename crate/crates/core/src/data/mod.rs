//! Samples, dataset manifests, normalisation, splitting, synthetic
//! phantoms and overlay rendering.

mod manifest;
mod overlay;
pub mod pnm;
mod synth;

use serde::{Deserialize, Serialize};

pub use manifest::{load_dataset, split, write_dataset, DatasetManifest, ManifestEntry, Split};
pub use overlay::{
    overlay_counts, render_overlay, write_overlay, OverlayCounts, FN_RGB, FP_RGB, TP_RGB,
};
pub use pnm::{load_pgm, save_pgm, Grid, RgbImage};
pub use synth::{synth_phantoms, CLASS_LEVELS};

use crate::error::{Error, Result};
use crate::tensor::{resize_bilinear, resize_nearest_index, Tensor};

/// Class ids of the four-class label set.
pub const BACKGROUND: u8 = 0;
pub const LUNG_OTHER: u8 = 1;
pub const GROUND_GLASS: u8 = 2;
pub const CONSOLIDATION: u8 = 3;
pub const NUM_CLASSES: usize = 4;

/// One single-channel slice and its class mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub image: Vec<f32>,
    pub mask: Vec<u8>,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        width: usize,
        height: usize,
        image: Vec<f32>,
        mask: Vec<u8>,
    ) -> Result<Self> {
        let id = id.into();
        if image.len() != width * height || mask.len() != width * height {
            return Err(Error::dim(format!(
                "sample {id}: {width}x{height} needs {} pixels, image has {}, mask has {}",
                width * height,
                image.len(),
                mask.len()
            )));
        }
        Ok(Sample {
            id,
            width,
            height,
            image,
            mask,
        })
    }

    /// Classes present in the mask, ascending.
    pub fn classes(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        self.mask.iter().for_each(|&c| seen[c as usize] = true);
        (0..=255u8).filter(|&c| seen[c as usize]).collect()
    }

    pub fn check_classes(&self, num_classes: usize) -> Result<()> {
        match self.mask.iter().find(|&&c| c as usize >= num_classes) {
            Some(c) => Err(Error::Data(format!(
                "sample {}: class {c} out of range for {num_classes} classes",
                self.id
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Per-slice min-max to `[0, 1]`.
    #[default]
    MinMax,
    /// Per-slice zero mean, unit variance.
    ZScore,
}

/// Resize to `target x target` (bilinear for the image, nearest for the
/// mask, both corner-aligned) and normalise intensities. Normalisation runs
/// on the resized raster so min-max output spans exactly `[0, 1]`.
pub fn normalize_resize(sample: &Sample, target: usize, method: Normalization) -> Result<Sample> {
    if sample.width < 16 || sample.height < 16 {
        return Err(Error::config(format!(
            "sample {} is {}x{}, needs at least 16x16",
            sample.id, sample.width, sample.height
        )));
    }
    if target == 0 {
        return Err(Error::config("target size must be positive"));
    }
    let t = Tensor::new([1, 1, sample.height, sample.width], sample.image.clone())?;
    let image = resize_bilinear(&t, target, target)?.into_data();
    let image = normalize(&image, method, &sample.id);
    let mut mask = Vec::with_capacity(target * target);
    for y in 0..target {
        let sy = resize_nearest_index(y, sample.height, target);
        for x in 0..target {
            let sx = resize_nearest_index(x, sample.width, target);
            mask.push(sample.mask[sy * sample.width + sx]);
        }
    }
    Sample::new(sample.id.clone(), target, target, image, mask)
}

fn normalize(image: &[f32], method: Normalization, id: &str) -> Vec<f32> {
    match method {
        Normalization::MinMax => {
            let (lo, hi) = image
                .iter()
                .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            if hi <= lo {
                log::warn!("sample {id}: constant image normalised to zeros");
                return vec![0.0; image.len()];
            }
            let scale = 1.0 / (hi as f64 - lo as f64);
            image
                .iter()
                .map(|&v| ((v as f64 - lo as f64) * scale) as f32)
                .collect()
        }
        Normalization::ZScore => {
            let n = image.len() as f64;
            let mean = image.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = image
                .iter()
                .map(|&v| (v as f64 - mean).powi(2))
                .sum::<f64>()
                / n;
            if var == 0.0 {
                log::warn!("sample {id}: constant image normalised to zeros");
                return vec![0.0; image.len()];
            }
            let sd = var.sqrt();
            image
                .iter()
                .map(|&v| ((v as f64 - mean) / sd) as f32)
                .collect()
        }
    }
}

/// Stack samples into a `(N, 1, H, W)` image tensor and a flat target list.
pub fn batch_tensors(samples: &[&Sample]) -> Result<(Tensor<f32>, Vec<usize>)> {
    let first = samples.first().ok_or_else(|| Error::dim("empty batch"))?;
    let (w, h) = (first.width, first.height);
    let mut image = Vec::with_capacity(samples.len() * w * h);
    let mut target = Vec::with_capacity(samples.len() * w * h);
    for s in samples {
        if (s.width, s.height) != (w, h) {
            return Err(Error::dim(format!(
                "batch mixes {}x{} and {}x{} samples",
                w, h, s.width, s.height
            )));
        }
        image.extend_from_slice(&s.image);
        target.extend(s.mask.iter().map(|&c| c as usize));
    }
    Ok((Tensor::new([samples.len(), 1, h, w], image)?, target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sample(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Sample {
        let image = (0..w * h).map(|_| rng.gen_range(-3.0..5.0)).collect();
        let mask = (0..w * h).map(|_| rng.gen_range(0..4)).collect();
        Sample::new("r", w, h, image, mask).unwrap()
    }

    #[test]
    fn already_normalised_is_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = random_sample(&mut rng, 32, 32);
        s.image = normalize(&s.image, Normalization::MinMax, "x");
        let out = normalize_resize(&s, 32, Normalization::MinMax).unwrap();
        assert_eq!(out.mask, s.mask);
        for (a, b) in out.image.iter().zip(&s.image) {
            assert!((a - b).abs() < 1e-6);
        }
        let again = normalize_resize(&out, 32, Normalization::MinMax).unwrap();
        assert_eq!(again.mask, out.mask);
    }

    #[test]
    fn min_max_hits_both_ends() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_sample(&mut rng, 20, 24);
        let out = normalize_resize(&s, 64, Normalization::MinMax).unwrap();
        let lo = out.image.iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = out.image.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        assert_eq!((lo, hi), (0.0, 1.0));
        assert_eq!((out.width, out.height), (64, 64));
    }

    #[test]
    fn nearest_resize_preserves_alphabet() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (w, h) = (rng.gen_range(16..40), rng.gen_range(16..40));
            let mut s = random_sample(&mut rng, w, h);
            // Sparse alphabets make the check meaningful.
            let keep: Vec<u8> = (0..4).filter(|_| rng.gen_bool(0.5)).collect();
            let keep = if keep.is_empty() { vec![2] } else { keep };
            s.mask
                .iter_mut()
                .for_each(|c| *c = keep[*c as usize % keep.len()]);
            let before = s.classes();
            let out = normalize_resize(&s, rng.gen_range(8..70), Normalization::MinMax).unwrap();
            assert!(out.classes().iter().all(|c| before.contains(c)));
        }
    }

    #[test]
    fn constant_image_becomes_zero() {
        let s = Sample::new("c", 16, 16, vec![0.3; 256], vec![0; 256]).unwrap();
        let out = normalize_resize(&s, 16, Normalization::MinMax).unwrap();
        assert!(out.image.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn z_score_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_sample(&mut rng, 16, 16);
        let out = normalize_resize(&s, 16, Normalization::ZScore).unwrap();
        let mean = out.image.iter().map(|&v| v as f64).sum::<f64>() / 256.0;
        let var = out
            .image
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / 256.0;
        assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn too_small_is_rejected() {
        let s = Sample::new("s", 8, 8, vec![0.0; 64], vec![0; 64]).unwrap();
        assert!(matches!(
            normalize_resize(&s, 64, Normalization::MinMax),
            Err(Error::Config(_))
        ));
    }
}
