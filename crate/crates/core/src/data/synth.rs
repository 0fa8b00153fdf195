//! Lung-like phantoms standing in for annotated CT slices.
//!
//! Each phantom has a dark background, two bright elliptical lungs, and
//! lesions inside the lungs: textured mid-intensity ground-glass blobs and
//! bright solid consolidation patches.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Sample, BACKGROUND, CONSOLIDATION, GROUND_GLASS, LUNG_OTHER};

/// Mean intensity per class id.
pub const CLASS_LEVELS: [f32; 4] = [0.08, 0.62, 0.38, 0.9];
const NOISE_SD: f64 = 0.03;
const GLASS_TEXTURE: f32 = 0.05;

#[derive(Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    angle: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * c + dy * s) / self.rx;
        let v = (-dx * s + dy * c) / self.ry;
        u * u + v * v <= 1.0
    }
}

/// Pick a blob centred on a random lung pixel.
fn blob_in(lung: &[usize], size: usize, radius: (f64, f64), rng: &mut ChaCha8Rng) -> Ellipse {
    let p = lung[rng.gen_range(0..lung.len())];
    let r = rng.gen_range(radius.0..radius.1) * size as f64;
    Ellipse {
        cx: (p % size) as f64,
        cy: (p / size) as f64,
        rx: r * rng.gen_range(0.8..1.2),
        ry: r * rng.gen_range(0.8..1.2),
        angle: rng.gen_range(0.0..std::f64::consts::PI),
    }
}

fn phantom(index: usize, size: usize, rng: &mut ChaCha8Rng) -> Sample {
    let s = size as f64;
    let mut mask = vec![BACKGROUND; size * size];
    for side in [-1.0, 1.0] {
        let lung = Ellipse {
            cx: s * (0.5 + side * rng.gen_range(0.16..0.2)),
            cy: s * rng.gen_range(0.47..0.53),
            rx: s * rng.gen_range(0.12..0.16),
            ry: s * rng.gen_range(0.26..0.32),
            angle: side * rng.gen_range(-0.15..0.15),
        };
        for y in 0..size {
            for x in 0..size {
                if lung.contains(x as f64, y as f64) {
                    mask[y * size + x] = LUNG_OTHER;
                }
            }
        }
    }
    let lung: Vec<usize> = (0..size * size)
        .filter(|&i| mask[i] == LUNG_OTHER)
        .collect();

    // Lesions only overwrite lung pixels, so lungs keep their outline.
    let paint = |e: Ellipse, class: u8, mask: &mut [u8]| {
        for &i in &lung {
            if e.contains((i % size) as f64, (i / size) as f64) {
                mask[i] = class;
            }
        }
    };
    if rng.gen_bool(0.9) {
        for _ in 0..rng.gen_range(1..=2) {
            paint(
                blob_in(&lung, size, (0.07, 0.11), rng),
                GROUND_GLASS,
                &mut mask,
            );
        }
    }
    if rng.gen_bool(0.9) {
        paint(
            blob_in(&lung, size, (0.05, 0.08), rng),
            CONSOLIDATION,
            &mut mask,
        );
    }

    let noise = Normal::new(0.0, NOISE_SD).unwrap();
    let (fx, fy, phase) = (
        rng.gen_range(0.6..1.2),
        rng.gen_range(0.6..1.2),
        rng.gen_range(0.0..std::f32::consts::TAU),
    );
    let image = mask
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let mut v = CLASS_LEVELS[c as usize];
            if c == GROUND_GLASS {
                let (x, y) = ((i % size) as f32, (i / size) as f32);
                v += GLASS_TEXTURE * (x * fx + phase).sin() * (y * fy).cos();
            }
            (v + noise.sample(rng) as f32).clamp(0.0, 1.0)
        })
        .collect();
    Sample::new(format!("phantom{index:05}"), size, size, image, mask).expect("consistent extents")
}

/// `n` phantoms of `size x size`, deterministic in `seed`.
pub fn synth_phantoms(n: usize, size: usize, seed: u64) -> Vec<Sample> {
    assert!(size >= 32, "phantoms need size >= 32");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| phantom(i, size, &mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        assert_eq!(synth_phantoms(5, 32, 7), synth_phantoms(5, 32, 7));
        assert_ne!(synth_phantoms(5, 32, 7), synth_phantoms(5, 32, 8));
    }

    #[test]
    fn class_frequencies() {
        let set = synth_phantoms(1000, 32, 1);
        let mut with = [0usize; 4];
        for s in &set {
            let cls = s.classes();
            assert!(
                cls.contains(&BACKGROUND) && cls.contains(&LUNG_OTHER),
                "{}",
                s.id
            );
            for c in cls {
                with[c as usize] += 1;
            }
        }
        assert!(with[2] >= 800, "ground glass in {} of 1000", with[2]);
        assert!(with[3] >= 800, "consolidation in {} of 1000", with[3]);
    }

    #[test]
    fn intensities_ordered_by_class() {
        let set = synth_phantoms(200, 64, 2);
        let mut sum = [0.0f64; 4];
        let mut cnt = [0usize; 4];
        for s in &set {
            assert!(s.image.iter().all(|v| (0.0..=1.0).contains(v)));
            for (&v, &c) in s.image.iter().zip(&s.mask) {
                sum[c as usize] += v as f64;
                cnt[c as usize] += 1;
            }
        }
        let mean: Vec<f64> = (0..4).map(|c| sum[c] / cnt[c] as f64).collect();
        assert!(
            mean[0] < mean[2] && mean[2] < mean[1] && mean[1] < mean[3],
            "{mean:?}"
        );
    }
}
