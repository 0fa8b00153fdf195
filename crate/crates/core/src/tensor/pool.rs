use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

pub(crate) fn pool_shape(input: Shape, window: usize, stride: usize) -> Result<Shape> {
    if window == 0 || stride == 0 {
        return Err(Error::config("pool window and stride must be positive"));
    }
    if window > input.h || window > input.w {
        return Err(Error::config(format!(
            "pool window {window} larger than input {}x{}",
            input.h, input.w
        )));
    }
    Ok(Shape::new(
        input.n,
        input.c,
        (input.h - window) / stride + 1,
        (input.w - window) / stride + 1,
    ))
}

/// Max pool returning the flat input index of each window's winner. Ties go
/// to the first element in row-major scan order.
pub(crate) fn max_pool2d_with_argmax<T: Scalar>(
    input: &Tensor<T>,
    window: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = input.shape();
    let os = pool_shape(s, window, stride)?;
    let mut out = Vec::with_capacity(os.numel());
    let mut arg = Vec::with_capacity(os.numel());
    let x = input.data();
    for nc in 0..s.n * s.c {
        let base = nc * s.plane();
        for oy in 0..os.h {
            for ox in 0..os.w {
                let mut best = base + oy * stride * s.w + ox * stride;
                let mut bv = x[best];
                for ky in 0..window {
                    let row = base + (oy * stride + ky) * s.w + ox * stride;
                    for (i, &v) in x[row..row + window].iter().enumerate() {
                        if v > bv {
                            bv = v;
                            best = row + i;
                        }
                    }
                }
                out.push(bv);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(os, out)?, arg))
}

pub fn max_pool2d<T: Scalar>(input: &Tensor<T>, window: usize, stride: usize) -> Result<Tensor<T>> {
    max_pool2d_with_argmax(input, window, stride).map(|(t, _)| t)
}

/// Window mean, summed in `f64`.
pub fn avg_pool2d<T: Scalar>(input: &Tensor<T>, window: usize, stride: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    let os = pool_shape(s, window, stride)?;
    let area = (window * window) as f64;
    let x = input.data();
    let mut out = Vec::with_capacity(os.numel());
    for nc in 0..s.n * s.c {
        let base = nc * s.plane();
        for oy in 0..os.h {
            for ox in 0..os.w {
                let mut acc = 0.0f64;
                for ky in 0..window {
                    let row = base + (oy * stride + ky) * s.w + ox * stride;
                    acc += x[row..row + window].iter().map(|v| v.as_f64()).sum::<f64>();
                }
                out.push(T::from_f64(acc / area));
            }
        }
    }
    Tensor::new(os, out)
}

pub(crate) fn avg_pool2d_backward<T: Scalar>(
    input: Shape,
    grad_out: &[T],
    window: usize,
    stride: usize,
) -> Result<Vec<T>> {
    let os = pool_shape(input, window, stride)?;
    let scale = T::from_f64(1.0 / (window * window) as f64);
    let mut dx = vec![T::zero(); input.numel()];
    for nc in 0..input.n * input.c {
        let base = nc * input.plane();
        for oy in 0..os.h {
            for ox in 0..os.w {
                let g = grad_out[(nc * os.h + oy) * os.w + ox] * scale;
                for ky in 0..window {
                    let row = base + (oy * stride + ky) * input.w + ox * stride;
                    for v in &mut dx[row..row + window] {
                        *v = *v + g;
                    }
                }
            }
        }
    }
    Ok(dx)
}
