/// Direct dilated cross-correlation, NCHW input and KCHW kernel.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    [n, c, h, w]: [usize; 4],
    k: &[f64],
    [ko, kc, kh, kw]: [usize; 4],
    b: &[f64],
    stride: usize,
    pad: usize,
    dilation: usize,
) -> (Vec<f64>, [usize; 4]) {
    assert_eq!(c, kc);
    let oh = (h + 2 * pad - (kh - 1) * dilation - 1) / stride + 1;
    let ow = (w + 2 * pad - (kw - 1) * dilation - 1) / stride + 1;
    let mut y = vec![0.0; n * ko * oh * ow];
    for bn in 0..n {
        for o in 0..ko {
            for i in 0..oh {
                for j in 0..ow {
                    let mut s = b[o];
                    for ci in 0..c {
                        for u in 0..kh {
                            for v in 0..kw {
                                let r = (i * stride + u * dilation) as isize - pad as isize;
                                let q = (j * stride + v * dilation) as isize - pad as isize;
                                if r < 0 || q < 0 || r >= h as isize || q >= w as isize {
                                    continue;
                                }
                                s += x[((bn * c + ci) * h + r as usize) * w + q as usize]
                                    * k[((o * c + ci) * kh + u) * kw + v];
                            }
                        }
                    }
                    y[((bn * ko + o) * oh + i) * ow + j] = s;
                }
            }
        }
    }
    (y, [n, ko, oh, ow])
}

/// Kernel with `rate - 1` zeros inserted between consecutive taps.
pub fn zero_insert(k: &[f64], [ko, kc, kh, kw]: [usize; 4], rate: usize) -> (Vec<f64>, [usize; 4]) {
    let (eh, ew) = ((kh - 1) * rate + 1, (kw - 1) * rate + 1);
    let mut out = vec![0.0; ko * kc * eh * ew];
    for o in 0..ko {
        for c in 0..kc {
            for u in 0..kh {
                for v in 0..kw {
                    out[((o * kc + c) * eh + u * rate) * ew + v * rate] = k[((o * kc + c) * kh + u) * kw + v];
                }
            }
        }
    }
    (out, [ko, kc, eh, ew])
}

/// Transposed convolution as a scatter: each input pixel stamps the kernel
/// onto the output. Kernel layout `[Cin, Cout, kh, kw]`.
pub fn conv_transpose2d(
    x: &[f64],
    [n, cin, h, w]: [usize; 4],
    k: &[f64],
    [kin, cout, kh, kw]: [usize; 4],
    b: &[f64],
    stride: usize,
) -> (Vec<f64>, [usize; 4]) {
    assert_eq!(cin, kin);
    let (oh, ow) = ((h - 1) * stride + kh, (w - 1) * stride + kw);
    let mut y = vec![0.0; n * cout * oh * ow];
    for bn in 0..n {
        for o in 0..cout {
            for p in 0..oh * ow {
                y[(bn * cout + o) * oh * ow + p] = b[o];
            }
        }
        for ci in 0..cin {
            for i in 0..h {
                for j in 0..w {
                    let xv = x[((bn * cin + ci) * h + i) * w + j];
                    for o in 0..cout {
                        for u in 0..kh {
                            for v in 0..kw {
                                y[((bn * cout + o) * oh + i * stride + u) * ow + j * stride + v] +=
                                    xv * k[((ci * cout + o) * kh + u) * kw + v];
                            }
                        }
                    }
                }
            }
        }
    }
    (y, [n, cout, oh, ow])
}
