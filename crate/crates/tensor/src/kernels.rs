//! Raw loops behind the convolution family of graph ops.
//!
//! Convolution is lowered to im2col + GEMM one sample at a time. Keeping
//! the per-sample decomposition means a sample's result never depends on
//! which other samples share its batch.

use crate::error::{Result, TensorError};
use crate::scalar::{gemm, MatRef, Scalar};

/// Geometry of a strided, zero-padded 2-D correlation.
///
/// `(channels, height, width)` is the image side and `(out_h, out_w)` the
/// column side: for a convolution the image is the input, for a transposed
/// convolution the image is the output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn for_conv(
        op: &'static str,
        (channels, height, width): (usize, usize, usize),
        (kh, kw): (usize, usize),
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 || kh == 0 || kw == 0 {
            return Err(TensorError::InvalidArgument(format!(
                "{op}: stride and kernel must be positive"
            )));
        }
        let padded_h = height + 2 * pad;
        let padded_w = width + 2 * pad;
        if padded_h < kh {
            return Err(TensorError::ShapeMismatch {
                op,
                dim: "height (padded) vs kernel height".into(),
                expected: kh,
                actual: padded_h,
            });
        }
        if padded_w < kw {
            return Err(TensorError::ShapeMismatch {
                op,
                dim: "width (padded) vs kernel width".into(),
                expected: kw,
                actual: padded_w,
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            kh,
            kw,
            stride,
            pad,
            out_h: (padded_h - kh) / stride + 1,
            out_w: (padded_w - kw) / stride + 1,
        })
    }

    /// Geometry whose column side is `(in_h, in_w)` and whose image side is
    /// the transposed-convolution output `(in-1)·stride − 2·pad + k`.
    pub fn for_deconv(
        op: &'static str,
        out_channels: usize,
        (in_h, in_w): (usize, usize),
        (kh, kw): (usize, usize),
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 || kh == 0 || kw == 0 {
            return Err(TensorError::InvalidArgument(format!(
                "{op}: stride and kernel must be positive"
            )));
        }
        let full_h = (in_h - 1) * stride + kh;
        let full_w = (in_w - 1) * stride + kw;
        if full_h <= 2 * pad {
            return Err(TensorError::ShapeMismatch {
                op,
                dim: "height vs padding".into(),
                expected: 2 * pad + 1,
                actual: full_h,
            });
        }
        if full_w <= 2 * pad {
            return Err(TensorError::ShapeMismatch {
                op,
                dim: "width vs padding".into(),
                expected: 2 * pad + 1,
                actual: full_w,
            });
        }
        let geom = Self::for_conv(
            op,
            (out_channels, full_h - 2 * pad, full_w - 2 * pad),
            (kh, kw),
            stride,
            pad,
        )?;
        debug_assert_eq!((geom.out_h, geom.out_w), (in_h, in_w));
        Ok(geom)
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Unfolds one image into `[C·kh·kw, out_h·out_w]` columns.
pub fn im2col<T: Scalar>(g: &ConvGeom, img: &[T], cols: &mut [T]) {
    let ncols = g.col_cols();
    debug_assert_eq!(img.len(), g.image_len());
    debug_assert_eq!(cols.len(), g.col_rows() * ncols);
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let dst_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        dst_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.width as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `img`.
pub fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], img: &mut [T]) {
    let ncols = g.col_cols();
    debug_assert_eq!(img.len(), g.image_len());
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Convolution forward: `x [N,C,H,W]`, `w [F,C,kh,kw]`, `b [F]` → `[N,F,oh,ow]`.
pub fn conv_forward<T: Scalar>(
    g: &ConvGeom,
    batch: usize,
    x: &[T],
    w: &[T],
    b: &[T],
    filters: usize,
) -> Vec<T> {
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let mut cols = vec![T::zero(); rows * ncols];
    let mut out = vec![T::zero(); batch * filters * ncols];
    for n in 0..batch {
        im2col(g, &x[n * g.image_len()..(n + 1) * g.image_len()], &mut cols);
        let dst = &mut out[n * filters * ncols..(n + 1) * filters * ncols];
        for (f, chunk) in dst.chunks_mut(ncols).enumerate() {
            chunk.fill(b[f]);
        }
        gemm(
            MatRef::row_major(w, filters, rows),
            MatRef::row_major(&cols, rows, ncols),
            T::one(),
            dst,
        );
    }
    out
}

/// Gradients of [`conv_forward`]; any of the outputs may be skipped.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Scalar>(
    g: &ConvGeom,
    batch: usize,
    x: &[T],
    w: &[T],
    filters: usize,
    dout: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let mut cols = vec![T::zero(); rows * ncols];
    let mut dcols = vec![T::zero(); rows * ncols];
    for n in 0..batch {
        let dout_n = &dout[n * filters * ncols..(n + 1) * filters * ncols];
        if let Some(db) = db.as_deref_mut() {
            for (f, chunk) in dout_n.chunks(ncols).enumerate() {
                db[f] += chunk.iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = dw.as_deref_mut() {
            im2col(g, &x[n * g.image_len()..(n + 1) * g.image_len()], &mut cols);
            gemm(
                MatRef::row_major(dout_n, filters, ncols),
                MatRef::transposed(&cols, ncols, rows),
                T::one(),
                dw,
            );
        }
        if let Some(dx) = dx.as_deref_mut() {
            gemm(
                MatRef::transposed(w, rows, filters),
                MatRef::row_major(dout_n, filters, ncols),
                T::zero(),
                &mut dcols,
            );
            col2im(g, &dcols, &mut dx[n * g.image_len()..(n + 1) * g.image_len()]);
        }
    }
}

/// Transposed convolution forward: `x [N,Cin,h,w]`, `w [Cin,Cout,kh,kw]`,
/// `b [Cout]` → `[N,Cout,H,W]` with `g` built by [`ConvGeom::for_deconv`].
pub fn deconv_forward<T: Scalar>(
    g: &ConvGeom,
    batch: usize,
    in_channels: usize,
    x: &[T],
    w: &[T],
    b: &[T],
) -> Vec<T> {
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let img = g.image_len();
    let plane = g.height * g.width;
    let mut cols = vec![T::zero(); rows * ncols];
    let mut out = vec![T::zero(); batch * img];
    for n in 0..batch {
        let x_n = &x[n * in_channels * ncols..(n + 1) * in_channels * ncols];
        gemm(
            MatRef::transposed(w, rows, in_channels),
            MatRef::row_major(x_n, in_channels, ncols),
            T::zero(),
            &mut cols,
        );
        let dst = &mut out[n * img..(n + 1) * img];
        for (c, chunk) in dst.chunks_mut(plane).enumerate() {
            chunk.fill(b[c]);
        }
        col2im(g, &cols, dst);
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn deconv_backward<T: Scalar>(
    g: &ConvGeom,
    batch: usize,
    in_channels: usize,
    x: &[T],
    w: &[T],
    dout: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let img = g.image_len();
    let plane = g.height * g.width;
    let mut dcols = vec![T::zero(); rows * ncols];
    for n in 0..batch {
        let dout_n = &dout[n * img..(n + 1) * img];
        if let Some(db) = db.as_deref_mut() {
            for (c, chunk) in dout_n.chunks(plane).enumerate() {
                db[c] += chunk.iter().copied().sum::<T>();
            }
        }
        if dx.is_none() && dw.is_none() {
            continue;
        }
        im2col(g, dout_n, &mut dcols);
        if let Some(dx) = dx.as_deref_mut() {
            gemm(
                MatRef::row_major(w, in_channels, rows),
                MatRef::row_major(&dcols, rows, ncols),
                T::zero(),
                &mut dx[n * in_channels * ncols..(n + 1) * in_channels * ncols],
            );
        }
        if let Some(dw) = dw.as_deref_mut() {
            let x_n = &x[n * in_channels * ncols..(n + 1) * in_channels * ncols];
            gemm(
                MatRef::row_major(x_n, in_channels, ncols),
                MatRef::transposed(&dcols, ncols, rows),
                T::one(),
                dw,
            );
        }
    }
}
