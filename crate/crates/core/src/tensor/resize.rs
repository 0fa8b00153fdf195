use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Corner-aligned source coordinate for output index `o`.
fn source_coord(o: usize, input: usize, output: usize) -> f64 {
    if output == 1 {
        0.0
    } else {
        o as f64 * (input - 1) as f64 / (output - 1) as f64
    }
}

/// Nearest source index under corner-aligned sampling.
pub fn resize_nearest_index(o: usize, input: usize, output: usize) -> usize {
    (source_coord(o, input, output).round() as usize).min(input - 1)
}

/// Per-axis taps: (low index, high index, weight of high).
fn taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    (0..output)
        .map(|o| {
            let s = source_coord(o, input, output);
            let lo = (s.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

pub(crate) fn resize_shape(input: Shape, out_h: usize, out_w: usize) -> Result<Shape> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::dim(format!(
            "resize target {out_h}x{out_w} must be positive"
        )));
    }
    Ok(Shape::new(input.n, input.c, out_h, out_w))
}

/// Bilinear interpolation with corner-aligned sampling.
pub fn resize_bilinear<T: Scalar>(
    input: &Tensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    let s = input.shape();
    let os = resize_shape(s, out_h, out_w)?;
    if os == s {
        return Tensor::new(s, input.data().to_vec());
    }
    let ty = taps(s.h, out_h);
    let tx = taps(s.w, out_w);
    let x = input.data();
    let mut out = Vec::with_capacity(os.numel());
    for nc in 0..s.n * s.c {
        let p = &x[nc * s.plane()..(nc + 1) * s.plane()];
        for &(y0, y1, wy) in &ty {
            for &(x0, x1, wx) in &tx {
                let top = p[y0 * s.w + x0].as_f64() * (1.0 - wx) + p[y0 * s.w + x1].as_f64() * wx;
                let bot = p[y1 * s.w + x0].as_f64() * (1.0 - wx) + p[y1 * s.w + x1].as_f64() * wx;
                out.push(T::from_f64(top * (1.0 - wy) + bot * wy));
            }
        }
    }
    Tensor::new(os, out)
}

pub(crate) fn resize_bilinear_backward<T: Scalar>(
    input: Shape,
    grad_out: &[T],
    out_h: usize,
    out_w: usize,
) -> Vec<T> {
    if (input.h, input.w) == (out_h, out_w) {
        return grad_out.to_vec();
    }
    let ty = taps(input.h, out_h);
    let tx = taps(input.w, out_w);
    let mut dx = vec![0.0f64; input.numel()];
    let mut k = 0;
    for nc in 0..input.n * input.c {
        let p = &mut dx[nc * input.plane()..(nc + 1) * input.plane()];
        for &(y0, y1, wy) in &ty {
            for &(x0, x1, wx) in &tx {
                let g = grad_out[k].as_f64();
                k += 1;
                p[y0 * input.w + x0] += g * (1.0 - wy) * (1.0 - wx);
                p[y0 * input.w + x1] += g * (1.0 - wy) * wx;
                p[y1 * input.w + x0] += g * wy * (1.0 - wx);
                p[y1 * input.w + x1] += g * wy * wx;
            }
        }
    }
    dx.into_iter().map(T::from_f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let x = Tensor::<f32>::from_fn([1, 2, 5, 7], |[_, c, h, w]| (c * 100 + h * 10 + w) as f32);
        assert_eq!(resize_bilinear(&x, 5, 7).unwrap(), x);
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::<f32>::full([1, 1, 3, 5], 0.75);
        for (h, w) in [(1, 1), (7, 2), (16, 16)] {
            let y = resize_bilinear(&x, h, w).unwrap();
            assert!(y.data().iter().all(|&v| (v - 0.75).abs() < 1e-7));
        }
    }

    #[test]
    fn corner_aligned_midpoint() {
        let x = Tensor::<f32>::new([1, 1, 2, 2], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let y = resize_bilinear(&x, 3, 3).unwrap();
        assert_eq!(&y.data()[3..6], &[0.5, 0.5, 0.5]);
        assert_eq!(&y.data()[0..3], &[0.0, 0.0, 0.0]);
        assert_eq!(&y.data()[6..9], &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn nearest_index_hits_corners() {
        assert_eq!(resize_nearest_index(0, 10, 4), 0);
        assert_eq!(resize_nearest_index(3, 10, 4), 9);
        assert_eq!(resize_nearest_index(0, 10, 1), 0);
    }
}
