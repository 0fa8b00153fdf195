//! Geometric augmentation applied identically to image and mask.

use rand::Rng;

use crate::data::Sample;
use crate::tensor::{resize_bilinear, resize_nearest_index, Tensor};

pub const MAX_ROTATION_DEG: f64 = 15.0;
pub const MIN_CROP_AREA: f64 = 0.8;
/// Slack for source coordinates that land on the border up to rounding.
const EDGE: f64 = 1e-9;

/// Mirror left to right.
pub fn hflip(s: &Sample) -> Sample {
    let (w, h) = (s.width, s.height);
    let mut out = s.clone();
    for y in 0..h {
        for x in 0..w {
            out.image[y * w + x] = s.image[y * w + (w - 1 - x)];
            out.mask[y * w + x] = s.mask[y * w + (w - 1 - x)];
        }
    }
    out
}

/// Rotate about the image centre. The image is sampled bilinearly, the mask
/// by nearest neighbour; pixels that map outside the source become 0.
pub fn rotate(s: &Sample, degrees: f64) -> Sample {
    let (w, h) = (s.width, s.height);
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let mut out = s.clone();
    let px = |x: usize, y: usize| s.image[y * w + x] as f64;
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            // inverse rotation maps the output pixel back into the source
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            let i = y * w + x;
            let (rx, ry) = (sx.round(), sy.round());
            out.mask[i] = if rx >= 0.0 && ry >= 0.0 && rx < w as f64 && ry < h as f64 {
                s.mask[ry as usize * w + rx as usize]
            } else {
                0
            };
            out.image[i] = if sx > -EDGE
                && sy > -EDGE
                && sx < w as f64 - 1.0 + EDGE
                && sy < h as f64 - 1.0 + EDGE
            {
                let sx = sx.clamp(0.0, w as f64 - 1.0);
                let sy = sy.clamp(0.0, h as f64 - 1.0);
                let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
                let top = px(x0, y0) * (1.0 - fx) + px(x1, y0) * fx;
                let bot = px(x0, y1) * (1.0 - fx) + px(x1, y1) * fx;
                (top * (1.0 - fy) + bot * fy) as f32
            } else {
                0.0
            };
        }
    }
    out
}

/// Cut the `ch x cw` window at `(y0, x0)` and resize it back to the full
/// extent (bilinear image, nearest-neighbour mask).
pub fn crop_resize(s: &Sample, y0: usize, x0: usize, ch: usize, cw: usize) -> Sample {
    let (w, h) = (s.width, s.height);
    assert!(
        ch >= 1 && cw >= 1 && y0 + ch <= h && x0 + cw <= w,
        "crop window outside sample"
    );
    let window = Tensor::from_fn([1, 1, ch, cw], |[_, _, y, x]| {
        s.image[(y0 + y) * w + x0 + x]
    });
    let image = resize_bilinear(&window, h, w)
        .expect("positive extents")
        .into_data();
    let mut mask = Vec::with_capacity(w * h);
    for y in 0..h {
        let sy = y0 + resize_nearest_index(y, ch, h);
        for x in 0..w {
            mask.push(s.mask[sy * w + x0 + resize_nearest_index(x, cw, w)]);
        }
    }
    Sample {
        id: s.id.clone(),
        width: w,
        height: h,
        image,
        mask,
    }
}

/// Rotation, random-size crop and horizontal flip, each applied with
/// probability 0.5 in that order.
pub fn augment<R: Rng + ?Sized>(s: &Sample, rng: &mut R) -> Sample {
    let mut out = s.clone();
    if rng.gen::<f64>() < 0.5 {
        let deg = rng.gen_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG);
        out = rotate(&out, deg);
    }
    if rng.gen::<f64>() < 0.5 {
        let area = rng.gen_range(MIN_CROP_AREA..=1.0);
        let scale = area.sqrt();
        let ch = ((s.height as f64 * scale).round() as usize).clamp(1, s.height);
        let cw = ((s.width as f64 * scale).round() as usize).clamp(1, s.width);
        let y0 = rng.gen_range(0..=s.height - ch);
        let x0 = rng.gen_range(0..=s.width - cw);
        out = crop_resize(&out, y0, x0, ch, cw);
    }
    if rng.gen::<f64>() < 0.5 {
        out = hflip(&out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_phantoms;
    use rand::rngs::mock::StepRng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn phantom() -> Sample {
        synth_phantoms(1, 32, 5).remove(0)
    }

    #[test]
    fn no_op_draws_leave_sample_unchanged() {
        let s = phantom();
        let mut rng = StepRng::new(u64::MAX, 0);
        assert_eq!(augment(&s, &mut rng), s);
    }

    #[test]
    fn flip_is_an_involution() {
        let s = phantom();
        assert_eq!(hflip(&hflip(&s)), s);
        assert_ne!(hflip(&s).mask, s.mask);
    }

    #[test]
    fn zero_rotation_and_full_crop_are_identity() {
        let s = phantom();
        assert_eq!(rotate(&s, 0.0).mask, s.mask);
        let r = rotate(&s, 0.0);
        for (a, b) in r.image.iter().zip(&s.image) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(crop_resize(&s, 0, 0, 32, 32), s);
    }

    #[test]
    fn alphabet_never_grows() {
        let s = phantom();
        let before = s.classes();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let a = augment(&s, &mut rng);
            for c in a.classes() {
                assert!(c == 0 || before.contains(&c), "class {c}");
            }
        }
    }
}
