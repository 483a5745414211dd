//! Convolution kernels on raw NCHW buffers, lowered to GEMM through im2col.
//!
//! Cross-correlation convention: `y[k,i,j] = b[k] + sum w[k,c,u,v] *
//! x[c, i*s - p + u*d, j*s - p + v*d]`, taps outside the input read zero.

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub const fn new(stride: usize, pad: usize, dilation: usize) -> Self {
        ConvGeom { stride, pad, dilation }
    }

    /// Dilated kernel footprint along one axis.
    pub fn span(&self, k: usize) -> usize {
        (k - 1) * self.dilation + 1
    }

    /// Output extent of a forward convolution; inexact division is a fault.
    pub fn out_extent(&self, op: &'static str, n: usize, k: usize) -> Result<usize> {
        let span = self.span(k);
        let padded = n + 2 * self.pad;
        if self.stride == 0 || self.dilation == 0 {
            return Err(CoreError::invalid(format!("{op}: stride and dilation must be positive")));
        }
        if padded < span || (padded - span) % self.stride != 0 {
            return Err(CoreError::InexactExtent { op, extent: n, span, pad: self.pad, stride: self.stride });
        }
        Ok((padded - span) / self.stride + 1)
    }

    /// Output extent of the transposed convolution.
    pub fn transposed_extent(&self, op: &'static str, n: usize, k: usize) -> Result<usize> {
        let full = (n - 1) * self.stride + self.span(k);
        if full <= 2 * self.pad {
            return Err(CoreError::InexactExtent { op, extent: n, span: self.span(k), pad: self.pad, stride: self.stride });
        }
        Ok(full - 2 * self.pad)
    }
}

/// Spatial problem description shared by im2col and col2im.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Plane {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub geom: ConvGeom,
}

impl Plane {
    pub fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Input coordinate hit by output `o` and tap `t`, if inside the image.
    #[inline]
    fn source(o: usize, t: usize, g: ConvGeom, n: usize) -> Option<usize> {
        let pos = (o * g.stride + t * g.dilation) as isize - g.pad as isize;
        (pos >= 0 && (pos as usize) < n).then_some(pos as usize)
    }

    /// `cols[(c,u,v), (i,j)] = x[c, src(i,u), src(j,v)]`.
    pub fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let Plane { channels, h, w, kh, kw, oh, ow, geom } = *self;
        let p = oh * ow;
        debug_assert_eq!(cols.len(), self.col_rows() * p);
        for c in 0..channels {
            let xc = &x[c * h * w..(c + 1) * h * w];
            for u in 0..kh {
                for v in 0..kw {
                    let row = &mut cols[((c * kh + u) * kw + v) * p..][..p];
                    for i in 0..oh {
                        let out = &mut row[i * ow..(i + 1) * ow];
                        match Self::source(i, u, geom, h) {
                            None => out.fill(T::zero()),
                            Some(y) => {
                                let src = &xc[y * w..(y + 1) * w];
                                for (j, o) in out.iter_mut().enumerate() {
                                    *o = Self::source(j, v, geom, w).map_or(T::zero(), |xj| src[xj]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of `im2col`: scatters-adds columns back onto the image.
    pub fn col2im<T: Scalar>(&self, cols: &[T], x: &mut [T]) {
        let Plane { channels, h, w, kh, kw, oh, ow, geom } = *self;
        let p = oh * ow;
        for c in 0..channels {
            let xc = &mut x[c * h * w..(c + 1) * h * w];
            for u in 0..kh {
                for v in 0..kw {
                    let row = &cols[((c * kh + u) * kw + v) * p..][..p];
                    for i in 0..oh {
                        let Some(y) = Self::source(i, u, geom, h) else { continue };
                        let dst = &mut xc[y * w..(y + 1) * w];
                        for (j, &val) in row[i * ow..(i + 1) * ow].iter().enumerate() {
                            if let Some(xj) = Self::source(j, v, geom, w) {
                                dst[xj] += val;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvDims {
    pub n: usize,
    pub k: usize,
    pub plane: Plane,
}

/// Shape checks for `x: [N,C,H,W]` against `w: [K,C,kh,kw]`.
pub(crate) fn conv_dims(op: &'static str, x: &[usize], w: &[usize], b: &[usize], geom: ConvGeom) -> Result<ConvDims> {
    if x.len() != 4 || w.len() != 4 || x[1] != w[1] {
        return Err(CoreError::Shape { op, left: x.to_vec(), right: w.to_vec() });
    }
    if b != [w[0]] {
        return Err(CoreError::Shape { op, left: w.to_vec(), right: b.to_vec() });
    }
    let oh = geom.out_extent(op, x[2], w[2])?;
    let ow = geom.out_extent(op, x[3], w[3])?;
    let plane = Plane { channels: x[1], h: x[2], w: x[3], kh: w[2], kw: w[3], oh, ow, geom };
    Ok(ConvDims { n: x[0], k: w[0], plane })
}

pub(crate) fn conv_forward<T: Scalar>(d: &ConvDims, x: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let pl = d.plane;
    let (rows, p) = (pl.col_rows(), pl.col_cols());
    let in_len = pl.channels * pl.h * pl.w;
    let mut cols = vec![T::zero(); rows * p];
    let mut y = vec![T::zero(); d.n * d.k * p];
    for n in 0..d.n {
        pl.im2col(&x[n * in_len..(n + 1) * in_len], &mut cols);
        let yn = &mut y[n * d.k * p..(n + 1) * d.k * p];
        for (k, chunk) in yn.chunks_mut(p).enumerate() {
            chunk.fill(b[k]);
        }
        T::gemm(d.k, rows, p, T::one(), w, (rows, 1), &cols, (p, 1), T::one(), yn, (p, 1));
    }
    y
}

/// Returns `(dx, dw, db)`; `dx`/`dw` only when requested.
pub(crate) fn conv_backward<T: Scalar>(
    d: &ConvDims,
    x: &[T],
    w: &[T],
    dy: &[T],
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Vec<T>) {
    let pl = d.plane;
    let (rows, p) = (pl.col_rows(), pl.col_cols());
    let in_len = pl.channels * pl.h * pl.w;
    let mut cols = vec![T::zero(); rows * p];
    let mut dx = need_dx.then(|| vec![T::zero(); x.len()]);
    let mut dw = need_dw.then(|| vec![T::zero(); w.len()]);
    let mut db = vec![T::zero(); d.k];
    for n in 0..d.n {
        let dyn_ = &dy[n * d.k * p..(n + 1) * d.k * p];
        for (k, chunk) in dyn_.chunks(p).enumerate() {
            db[k] += chunk.iter().copied().sum();
        }
        if let Some(dw) = dw.as_mut() {
            pl.im2col(&x[n * in_len..(n + 1) * in_len], &mut cols);
            // dW[K, rows] += dY[K, P] * cols^T
            T::gemm(d.k, p, rows, T::one(), dyn_, (p, 1), &cols, (1, p), T::one(), dw, (rows, 1));
        }
        if let Some(dx) = dx.as_mut() {
            // dcols[rows, P] = W^T * dY
            T::gemm(rows, d.k, p, T::one(), w, (1, rows), dyn_, (p, 1), T::zero(), &mut cols, (p, 1));
            pl.col2im(&cols, &mut dx[n * in_len..(n + 1) * in_len]);
        }
    }
    (dx, dw, db)
}

/// Shape checks for the transposed convolution, `w: [Cin, Cout, kh, kw]`.
/// The returned plane describes the adjoint forward convolution that maps
/// the output `[Cout, Ho, Wo]` back onto the input grid `[H, W]`.
pub(crate) fn convt_dims(op: &'static str, x: &[usize], w: &[usize], b: &[usize], geom: ConvGeom) -> Result<ConvDims> {
    if x.len() != 4 || w.len() != 4 || x[1] != w[0] {
        return Err(CoreError::Shape { op, left: x.to_vec(), right: w.to_vec() });
    }
    if b != [w[1]] {
        return Err(CoreError::Shape { op, left: w.to_vec(), right: b.to_vec() });
    }
    let oh = geom.transposed_extent(op, x[2], w[2])?;
    let ow = geom.transposed_extent(op, x[3], w[3])?;
    // The adjoint forward map must land exactly on the input grid.
    if geom.out_extent(op, oh, w[2])? != x[2] || geom.out_extent(op, ow, w[3])? != x[3] {
        return Err(CoreError::InexactExtent { op, extent: x[2], span: geom.span(w[2]), pad: geom.pad, stride: geom.stride });
    }
    let plane = Plane { channels: w[1], h: oh, w: ow, kh: w[2], kw: w[3], oh: x[2], ow: x[3], geom };
    Ok(ConvDims { n: x[0], k: w[0], plane })
}

pub(crate) fn convt_forward<T: Scalar>(d: &ConvDims, x: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let pl = d.plane;
    let (rows, p) = (pl.col_rows(), pl.col_cols());
    let out_len = pl.channels * pl.h * pl.w;
    let mut cols = vec![T::zero(); rows * p];
    let mut y = vec![T::zero(); d.n * out_len];
    for n in 0..d.n {
        let xn = &x[n * d.k * p..(n + 1) * d.k * p];
        // cols[rows, P] = W^T[rows, Cin] * x[Cin, P]
        T::gemm(rows, d.k, p, T::one(), w, (1, rows), xn, (p, 1), T::zero(), &mut cols, (p, 1));
        let yn = &mut y[n * out_len..(n + 1) * out_len];
        pl.col2im(&cols, yn);
        for (c, chunk) in yn.chunks_mut(pl.h * pl.w).enumerate() {
            chunk.iter_mut().for_each(|v| *v += b[c]);
        }
    }
    y
}

pub(crate) fn convt_backward<T: Scalar>(
    d: &ConvDims,
    x: &[T],
    w: &[T],
    dy: &[T],
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Vec<T>) {
    let pl = d.plane;
    let (rows, p) = (pl.col_rows(), pl.col_cols());
    let out_len = pl.channels * pl.h * pl.w;
    let mut cols = vec![T::zero(); rows * p];
    let mut dx = need_dx.then(|| vec![T::zero(); x.len()]);
    let mut dw = need_dw.then(|| vec![T::zero(); w.len()]);
    let mut db = vec![T::zero(); pl.channels];
    for n in 0..d.n {
        let dyn_ = &dy[n * out_len..(n + 1) * out_len];
        for (c, chunk) in dyn_.chunks(pl.h * pl.w).enumerate() {
            db[c] += chunk.iter().copied().sum();
        }
        if dx.is_none() && dw.is_none() {
            continue;
        }
        pl.im2col(dyn_, &mut cols);
        if let Some(dx) = dx.as_mut() {
            T::gemm(d.k, rows, p, T::one(), w, (rows, 1), &cols, (p, 1), T::zero(), &mut dx[n * d.k * p..(n + 1) * d.k * p], (p, 1));
        }
        if let Some(dw) = dw.as_mut() {
            let xn = &x[n * d.k * p..(n + 1) * d.k * p];
            T::gemm(d.k, p, rows, T::one(), xn, (p, 1), &cols, (1, p), T::one(), dw, (rows, 1));
        }
    }
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extents() {
        let g = ConvGeom::new(2, 1, 1);
        assert_eq!(g.out_extent("t", 128, 4).unwrap(), 64);
        assert!(g.out_extent("t", 128, 3).is_err());
        assert_eq!(ConvGeom::new(1, 8, 8).out_extent("t", 32, 3).unwrap(), 32);
        assert_eq!(ConvGeom::new(2, 0, 1).transposed_extent("t", 2, 2).unwrap(), 4);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let pl = Plane { channels: 2, h: 5, w: 6, kh: 3, kw: 2, oh: 3, ow: 4, geom: ConvGeom::new(2, 1, 1) };
        let x: Vec<f64> = (0..60).map(|i| (i as f64 * 0.7).sin()).collect();
        let c: Vec<f64> = (0..pl.col_rows() * pl.col_cols()).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut cx = vec![0.0; c.len()];
        pl.im2col(&x, &mut cx);
        let mut xc = vec![0.0; x.len()];
        pl.col2im(&c, &mut xc);
        let lhs: f64 = cx.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&xc).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
