//! Convolution kernels via patch-matrix expansion (im2col) + GEMM.

use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Span covered by an `f`-tap kernel with the given dilation.
pub fn effective_kernel(f: usize, dilation: usize) -> usize {
    f + (dilation - 1) * (f - 1)
}

/// Output extent of a convolution along one axis, or a configuration error
/// when the geometry does not tile exactly.
pub fn conv2d_output_extent(
    input: usize,
    f: usize,
    stride: usize,
    padding: usize,
    dilation: usize,
) -> Result<usize> {
    if f == 0 || stride == 0 || dilation == 0 {
        return Err(Error::config(format!(
            "kernel size, stride and dilation must be positive (f={f}, stride={stride}, dilation={dilation})"
        )));
    }
    let eff = effective_kernel(f, dilation);
    let padded = input + 2 * padding;
    if padded < eff {
        return Err(Error::config(format!(
            "effective kernel {eff} exceeds padded input extent {padded}"
        )));
    }
    let span = padded - eff;
    if span % stride != 0 {
        return Err(Error::config(format!(
            "output extent ({input} + 2*{padding} - {eff})/{stride} + 1 is not an integer"
        )));
    }
    Ok(span / stride + 1)
}

/// Geometry of one convolution, shared by im2col and col2im.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c * self.f * self.f
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.f == 1 && self.stride == 1 && self.padding == 0
    }

    /// Range of output indices `o` for which `o*stride + off` lands in `[0, extent)`.
    fn valid_range(&self, off: isize, extent: usize, out: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let lo = if off < 0 { ((-off) + s - 1) / s } else { 0 };
        let last = extent as isize - 1 - off;
        if last < 0 {
            return (0, 0);
        }
        let hi = (last / s + 1).min(out as isize);
        let lo = lo.min(hi);
        (lo as usize, hi as usize)
    }
}

/// Expand one image `(C, H, W)` into a `(C*f*f) x (Ho*Wo)` patch matrix.
pub(crate) fn im2col<T: Scalar>(img: &[T], g: &ConvGeom, cols: &mut [T]) {
    let ncols = g.cols();
    for ci in 0..g.c {
        let plane = &img[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.f {
            let offy = (ky * g.dilation) as isize - g.padding as isize;
            let (ylo, yhi) = g.valid_range(offy, g.h, g.ho);
            for kx in 0..g.f {
                let offx = (kx * g.dilation) as isize - g.padding as isize;
                let (xlo, xhi) = g.valid_range(offx, g.w, g.wo);
                let row = (ci * g.f + ky) * g.f + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.ho {
                    let out = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if oy < ylo || oy >= yhi {
                        out.fill(T::zero());
                        continue;
                    }
                    let iy = (oy * g.stride) as isize + offy;
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out[..xlo].fill(T::zero());
                    out[xhi..].fill(T::zero());
                    if xlo == xhi {
                        continue;
                    }
                    if g.stride == 1 {
                        let start = (xlo as isize + offx) as usize;
                        out[xlo..xhi].copy_from_slice(&src[start..start + (xhi - xlo)]);
                    } else {
                        for ox in xlo..xhi {
                            out[ox] = src[((ox * g.stride) as isize + offx) as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add a patch matrix back into `(C, H, W)`.
pub(crate) fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, img: &mut [T]) {
    let ncols = g.cols();
    for ci in 0..g.c {
        let plane = &mut img[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.f {
            let offy = (ky * g.dilation) as isize - g.padding as isize;
            let (ylo, yhi) = g.valid_range(offy, g.h, g.ho);
            for kx in 0..g.f {
                let offx = (kx * g.dilation) as isize - g.padding as isize;
                let (xlo, xhi) = g.valid_range(offx, g.w, g.wo);
                let row = (ci * g.f + ky) * g.f + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in ylo..yhi {
                    let iy = ((oy * g.stride) as isize + offy) as usize;
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let s = &src[oy * g.wo..(oy + 1) * g.wo];
                    for ox in xlo..xhi {
                        dst[((ox * g.stride) as isize + offx) as usize] =
                            dst[((ox * g.stride) as isize + offx) as usize] + s[ox];
                    }
                }
            }
        }
    }
}

fn check_bias<T: Scalar>(bias: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape().numel() != channels {
            return Err(Error::dim(format!(
                "bias has {} values for {channels} output channels",
                b.shape().numel()
            )));
        }
    }
    Ok(())
}

pub(crate) fn conv2d_geom(
    input: Shape,
    kernel: Shape,
    stride: usize,
    padding: usize,
    dilation: usize,
) -> Result<ConvGeom> {
    if kernel.h != kernel.w {
        return Err(Error::dim(format!("kernel {kernel} is not square")));
    }
    if input.c != kernel.c {
        return Err(Error::dim(format!(
            "input {input} has {} channels but kernel {kernel} expects {}",
            input.c, kernel.c
        )));
    }
    let f = kernel.h;
    let ho = conv2d_output_extent(input.h, f, stride, padding, dilation)?;
    let wo = conv2d_output_extent(input.w, f, stride, padding, dilation)?;
    Ok(ConvGeom {
        c: input.c,
        h: input.h,
        w: input.w,
        f,
        stride,
        padding,
        dilation,
        ho,
        wo,
    })
}

/// Cross-correlation with holes. `kernel` is `(Cout, Cin, f, f)`; `bias`
/// holds `Cout` values in any rank-4 shape.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
    dilation: usize,
) -> Result<Tensor<T>> {
    let g = conv2d_geom(input.shape(), kernel.shape(), stride, padding, dilation)?;
    let cout = kernel.shape().n;
    check_bias(bias, cout)?;
    let n = input.shape().n;
    let out_shape = Shape::new(n, cout, g.ho, g.wo);
    let mut out = vec![T::zero(); out_shape.numel()];
    let in_len = g.c * g.h * g.w;
    let out_len = cout * g.cols();
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.rows() * g.cols()]
    };
    for b in 0..n {
        let img = &input.data()[b * in_len..(b + 1) * in_len];
        let patches: &[T] = if g.is_pointwise() {
            img
        } else {
            im2col(img, &g, &mut cols);
            &cols
        };
        let dst = &mut out[b * out_len..(b + 1) * out_len];
        T::gemm(
            cout,
            g.rows(),
            g.cols(),
            kernel.data(),
            false,
            patches,
            false,
            dst,
            false,
        );
        if let Some(bias) = bias {
            for (co, chunk) in dst.chunks_mut(g.cols()).enumerate() {
                let bv = bias.data()[co];
                chunk.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    }
    Tensor::new(out_shape, out)
}

/// Gradients `(input, kernel, bias)`; the input part only when requested.
type ConvGrads<T> = (Option<Vec<T>>, Vec<T>, Vec<T>);

/// Gradients of [`conv2d`]: `(d_input, d_kernel, d_bias)`.
pub(crate) fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &[T],
    stride: usize,
    padding: usize,
    dilation: usize,
    want_input: bool,
) -> Result<ConvGrads<T>> {
    let g = conv2d_geom(input.shape(), kernel.shape(), stride, padding, dilation)?;
    let cout = kernel.shape().n;
    let n = input.shape().n;
    let in_len = g.c * g.h * g.w;
    let out_len = cout * g.cols();
    let mut dk = vec![T::zero(); kernel.shape().numel()];
    let mut db = vec![T::zero(); cout];
    let mut dx = want_input.then(|| vec![T::zero(); input.shape().numel()]);
    let mut cols = vec![
        T::zero();
        if g.is_pointwise() {
            0
        } else {
            g.rows() * g.cols()
        }
    ];
    let mut dcols = vec![T::zero(); g.rows() * g.cols()];
    for b in 0..n {
        let img = &input.data()[b * in_len..(b + 1) * in_len];
        let dy = &grad_out[b * out_len..(b + 1) * out_len];
        for (co, chunk) in dy.chunks(g.cols()).enumerate() {
            let s: f64 = chunk.iter().map(|v| v.as_f64()).sum();
            db[co] = db[co] + T::from_f64(s);
        }
        let patches: &[T] = if g.is_pointwise() {
            img
        } else {
            im2col(img, &g, &mut cols);
            &cols
        };
        T::gemm(
            cout,
            g.cols(),
            g.rows(),
            dy,
            false,
            patches,
            true,
            &mut dk,
            true,
        );
        if let Some(dx) = dx.as_mut() {
            let dst = &mut dx[b * in_len..(b + 1) * in_len];
            if g.is_pointwise() {
                T::gemm(
                    g.rows(),
                    cout,
                    g.cols(),
                    kernel.data(),
                    true,
                    dy,
                    false,
                    dst,
                    false,
                );
            } else {
                T::gemm(
                    g.rows(),
                    cout,
                    g.cols(),
                    kernel.data(),
                    true,
                    dy,
                    false,
                    &mut dcols,
                    false,
                );
                col2im(&dcols, &g, dst);
            }
        }
    }
    Ok((dx, dk, db))
}

fn transpose_geom(input: Shape, kernel: Shape, stride: usize) -> Result<(ConvGeom, usize)> {
    if kernel.h != kernel.w {
        return Err(Error::dim(format!("kernel {kernel} is not square")));
    }
    if stride == 0 {
        return Err(Error::config("stride must be positive"));
    }
    if input.c != kernel.n {
        return Err(Error::dim(format!(
            "input {input} has {} channels but transpose kernel {kernel} expects {}",
            input.c, kernel.n
        )));
    }
    let f = kernel.h;
    let cout = kernel.c;
    // Geometry of the forward (strided) conv whose adjoint this is.
    let g = ConvGeom {
        c: cout,
        h: (input.h - 1) * stride + f,
        w: (input.w - 1) * stride + f,
        f,
        stride,
        padding: 0,
        dilation: 1,
        ho: input.h,
        wo: input.w,
    };
    Ok((g, cout))
}

/// Transposed convolution (fractionally strided). `kernel` is
/// `(Cin, Cout, f, f)`; output extent is `(H-1)*stride + f`, i.e.
/// `stride*H` for the decoder's `f == stride` configuration.
pub fn conv2d_transpose<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
) -> Result<Tensor<T>> {
    let (g, cout) = transpose_geom(input.shape(), kernel.shape(), stride)?;
    check_bias(bias, cout)?;
    let n = input.shape().n;
    let cin = input.shape().c;
    let out_shape = Shape::new(n, cout, g.h, g.w);
    let mut out = vec![T::zero(); out_shape.numel()];
    let mut cols = vec![T::zero(); g.rows() * g.cols()];
    let in_len = cin * g.cols();
    let out_len = cout * g.h * g.w;
    for b in 0..n {
        let x = &input.data()[b * in_len..(b + 1) * in_len];
        T::gemm(
            g.rows(),
            cin,
            g.cols(),
            kernel.data(),
            true,
            x,
            false,
            &mut cols,
            false,
        );
        let dst = &mut out[b * out_len..(b + 1) * out_len];
        col2im(&cols, &g, dst);
        if let Some(bias) = bias {
            for (co, chunk) in dst.chunks_mut(g.h * g.w).enumerate() {
                let bv = bias.data()[co];
                chunk.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    }
    Tensor::new(out_shape, out)
}

/// Gradients of [`conv2d_transpose`]: `(d_input, d_kernel, d_bias)`.
pub(crate) fn conv2d_transpose_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &[T],
    stride: usize,
    want_input: bool,
) -> Result<ConvGrads<T>> {
    let (g, cout) = transpose_geom(input.shape(), kernel.shape(), stride)?;
    let n = input.shape().n;
    let cin = input.shape().c;
    let in_len = cin * g.cols();
    let out_len = cout * g.h * g.w;
    let mut dk = vec![T::zero(); kernel.shape().numel()];
    let mut db = vec![T::zero(); cout];
    let mut dx = want_input.then(|| vec![T::zero(); input.shape().numel()]);
    let mut dcols = vec![T::zero(); g.rows() * g.cols()];
    for b in 0..n {
        let x = &input.data()[b * in_len..(b + 1) * in_len];
        let dy = &grad_out[b * out_len..(b + 1) * out_len];
        for (co, chunk) in dy.chunks(g.h * g.w).enumerate() {
            let s: f64 = chunk.iter().map(|v| v.as_f64()).sum();
            db[co] = db[co] + T::from_f64(s);
        }
        im2col(dy, &g, &mut dcols);
        T::gemm(
            cin,
            g.cols(),
            g.rows(),
            x,
            false,
            &dcols,
            true,
            &mut dk,
            true,
        );
        if let Some(dx) = dx.as_mut() {
            let dst = &mut dx[b * in_len..(b + 1) * in_len];
            T::gemm(
                cin,
                g.rows(),
                g.cols(),
                kernel.data(),
                false,
                &dcols,
                false,
                dst,
                false,
            );
        }
    }
    Ok((dx, dk, db))
}

/// Expand an `(Cout, Cin, f, f)` kernel to the dense kernel of size
/// `f + (d-1)(f-1)` with `d-1` zero rows/columns between taps.
pub fn dilate_kernel<T: Scalar>(kernel: &Tensor<T>, dilation: usize) -> Result<Tensor<T>> {
    let s = kernel.shape();
    if dilation == 0 {
        return Err(Error::config("dilation must be positive"));
    }
    let e = effective_kernel(s.h, dilation);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, e, e));
    for o in 0..s.n {
        for i in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    out.set(o, i, y * dilation, x * dilation, kernel.get(o, i, y, x));
                }
            }
        }
    }
    Ok(out)
}
