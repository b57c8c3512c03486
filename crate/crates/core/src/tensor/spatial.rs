//! Channels-last (N, H, W, C) image ops.

use super::kernels::{bilinear_taps, gemm, gemm_a_bt, gemm_at_b, Taps};
use super::{Scalar, Tensor, Var};
use crate::error::{Error, Result};

fn nhwc(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [n, h, w, c] => Ok((n, h, w, c)),
        _ => Err(Error::dim(op, shape, &[0, 0, 0, 0])),
    }
}

fn out_extent(op: &str, size: usize, window: usize, stride: usize, padding: usize) -> Result<usize> {
    if window == 0 || stride == 0 {
        return Err(Error::Geometry(format!("{op}: window and stride must be positive")));
    }
    let padded = size + 2 * padding;
    if padded < window {
        return Err(Error::Geometry(format!(
            "{op}: window {window} exceeds padded extent {padded}"
        )));
    }
    Ok((padded - window) / stride + 1)
}

#[derive(Clone, Copy)]
struct ConvGeom {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn cols(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    /// Visits (col_row, col_offset, x_offset) for every in-bounds tap.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let kc = self.cols();
        for b in 0..self.n {
            for oy in 0..self.ho {
                for ox in 0..self.wo {
                    let row = (b * self.ho + oy) * self.wo + ox;
                    for ky in 0..self.kh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for kx in 0..self.kw {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            let col = row * kc + (ky * self.kw + kx) * self.cin;
                            let src = ((b * self.h + iy as usize) * self.w + ix as usize) * self.cin;
                            f(row, col, src);
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let rows = self.n * self.ho * self.wo;
        let mut cols = vec![T::zero(); rows * self.cols()];
        let cin = self.cin;
        self.for_each_tap(|_, col, src| cols[col..col + cin].copy_from_slice(&x[src..src + cin]));
        cols
    }

    fn col2im<T: Scalar>(&self, cols: &[T]) -> Vec<T> {
        let mut dx = vec![T::zero(); self.n * self.h * self.w * self.cin];
        let cin = self.cin;
        self.for_each_tap(|_, col, src| {
            for c in 0..cin {
                dx[src + c] += cols[col + c];
            }
        });
        dx
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Cross-correlation of `self` [N,H,W,Cin] with `weight` [kh,kw,Cin,Cout], plus `bias` [Cout].
    pub fn conv2d(self, weight: Var<'t, T>, bias: Var<'t, T>, stride: usize, padding: usize) -> Result<Var<'t, T>> {
        self.same_tape(&weight, "conv2d")?;
        self.same_tape(&bias, "conv2d")?;
        let xs = self.shape();
        let ws = weight.shape();
        let (n, h, w, cin) = nhwc("conv2d", &xs)?;
        let (kh, kw, wc, cout) = nhwc("conv2d", &ws)?;
        if wc != cin || bias.shape() != [cout] {
            return Err(Error::dim("conv2d", &xs, &ws));
        }
        let ho = out_extent("conv2d", h, kh, stride, padding)?;
        let wo = out_extent("conv2d", w, kw, stride, padding)?;
        let geom = ConvGeom {
            n,
            h,
            w,
            cin,
            kh,
            kw,
            ho,
            wo,
            stride,
            pad: padding,
        };
        let rows = n * ho * wo;
        let kc = geom.cols();
        let (value, cols) = {
            let (x, wt, b) = (self.value(), weight.value(), bias.value());
            let cols = geom.im2col(x.data());
            let mut out = vec![T::zero(); rows * cout];
            gemm(&cols, wt.data(), &mut out, rows, kc, cout);
            for row in out.chunks_mut(cout) {
                row.iter_mut().zip(b.data()).for_each(|(o, &bv)| *o += bv);
            }
            (
                Tensor {
                    shape: vec![n, ho, wo, cout],
                    data: out,
                },
                cols,
            )
        };
        Ok(self.tape.push(
            "conv2d",
            value,
            vec![self.id, weight.id, bias.id],
            Box::new(move |ins: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>| {
                let mut dcols = vec![T::zero(); rows * kc];
                gemm_a_bt(g.data(), ins[1].data(), &mut dcols, rows, cout, kc);
                let mut dw = vec![T::zero(); kc * cout];
                gemm_at_b(&cols, g.data(), &mut dw, rows, kc, cout);
                let mut db = vec![T::zero(); cout];
                for row in g.data().chunks(cout) {
                    db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                }
                vec![
                    Some(Tensor {
                        shape: ins[0].shape.clone(),
                        data: geom.col2im(&dcols),
                    }),
                    Some(Tensor {
                        shape: ins[1].shape.clone(),
                        data: dw,
                    }),
                    Some(Tensor {
                        shape: vec![cout],
                        data: db,
                    }),
                ]
            }),
        ))
    }

    /// Non-overlapping mean pooling; the window must tile the input exactly.
    pub fn avg_pool2d(self, window: (usize, usize)) -> Result<Var<'t, T>> {
        let xs = self.shape();
        let (n, h, w, c) = nhwc("avg_pool2d", &xs)?;
        let (ph, pw) = window;
        if ph == 0 || pw == 0 || h % ph != 0 || w % pw != 0 {
            return Err(Error::Geometry(format!(
                "avg_pool2d: window {ph}x{pw} does not tile {h}x{w}"
            )));
        }
        let (ho, wo) = (h / ph, w / pw);
        let inv = T::one() / T::lit((ph * pw) as f64);
        let value = {
            let x = self.value();
            let mut out = vec![T::zero(); n * ho * wo * c];
            for b in 0..n {
                for y in 0..h {
                    for xx in 0..w {
                        let src = ((b * h + y) * w + xx) * c;
                        let dst = ((b * ho + y / ph) * wo + xx / pw) * c;
                        for ch in 0..c {
                            out[dst + ch] += x.data()[src + ch];
                        }
                    }
                }
            }
            out.iter_mut().for_each(|v| *v *= inv);
            Tensor {
                shape: vec![n, ho, wo, c],
                data: out,
            }
        };
        Ok(self.tape.push(
            "avg_pool2d",
            value,
            vec![self.id],
            Box::new(move |ins: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>| {
                let mut dx = vec![T::zero(); ins[0].len()];
                for b in 0..n {
                    for y in 0..h {
                        for xx in 0..w {
                            let dst = ((b * h + y) * w + xx) * c;
                            let src = ((b * ho + y / ph) * wo + xx / pw) * c;
                            for ch in 0..c {
                                dx[dst + ch] = g.data()[src + ch] * inv;
                            }
                        }
                    }
                }
                vec![Some(Tensor {
                    shape: ins[0].shape.clone(),
                    data: dx,
                })]
            }),
        ))
    }

    /// Square max pooling; padded positions never win. The gradient goes to
    /// the first maximal input in row-major window order.
    pub fn max_pool2d(self, window: usize, stride: usize, padding: usize) -> Result<Var<'t, T>> {
        let xs = self.shape();
        let (n, h, w, c) = nhwc("max_pool2d", &xs)?;
        if padding >= window {
            return Err(Error::Geometry("max_pool2d: padding must be smaller than the window".into()));
        }
        let ho = out_extent("max_pool2d", h, window, stride, padding)?;
        let wo = out_extent("max_pool2d", w, window, stride, padding)?;
        let (value, argmax) = {
            let x = self.value();
            let mut out = vec![T::zero(); n * ho * wo * c];
            let mut arg = vec![0usize; out.len()];
            for b in 0..n {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let o = ((b * ho + oy) * wo + ox) * c;
                        for ch in 0..c {
                            let mut best = T::neg_infinity();
                            let mut best_i = usize::MAX;
                            for ky in 0..window {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..window {
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let i = ((b * h + iy as usize) * w + ix as usize) * c + ch;
                                    let v = x.data()[i];
                                    if best_i == usize::MAX || v > best {
                                        best = v;
                                        best_i = i;
                                    }
                                }
                            }
                            out[o + ch] = best;
                            arg[o + ch] = best_i;
                        }
                    }
                }
            }
            (
                Tensor {
                    shape: vec![n, ho, wo, c],
                    data: out,
                },
                arg,
            )
        };
        Ok(self.tape.push(
            "max_pool2d",
            value,
            vec![self.id],
            Box::new(move |ins: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>| {
                let mut dx = vec![T::zero(); ins[0].len()];
                for (&i, &gv) in argmax.iter().zip(g.data()) {
                    dx[i] += gv;
                }
                vec![Some(Tensor {
                    shape: ins[0].shape.clone(),
                    data: dx,
                })]
            }),
        ))
    }

    /// Bilinear upsampling to `(out_h, out_w)` with half-pixel centres
    /// (align-corners off), source coordinates clamped to the edge.
    pub fn bilinear_upsample(self, size: (usize, usize)) -> Result<Var<'t, T>> {
        let xs = self.shape();
        let (n, h, w, c) = nhwc("bilinear_upsample", &xs)?;
        let (oh, ow) = size;
        if oh < h || ow < w {
            return Err(Error::Geometry(format!(
                "bilinear_upsample: target {oh}x{ow} smaller than source {h}x{w}"
            )));
        }
        let ty: Vec<Taps<T>> = bilinear_taps(h, oh);
        let tx: Vec<Taps<T>> = bilinear_taps(w, ow);
        let value = {
            let x = self.value();
            let mut out = Vec::with_capacity(n * oh * ow * c);
            for img in x.data().chunks(h * w * c) {
                out.extend(super::kernels::resize_bilinear_hwc(img, (h, w, c), (oh, ow)));
            }
            Tensor {
                shape: vec![n, oh, ow, c],
                data: out,
            }
        };
        Ok(self.tape.push(
            "bilinear_upsample",
            value,
            vec![self.id],
            Box::new(move |ins: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>| {
                let mut dx = vec![T::zero(); ins[0].len()];
                for b in 0..n {
                    let base = b * h * w * c;
                    for (oy, y) in ty.iter().enumerate() {
                        for (ox, x) in tx.iter().enumerate() {
                            let o = ((b * oh + oy) * ow + ox) * c;
                            let w00 = (T::one() - y.frac) * (T::one() - x.frac);
                            let w01 = (T::one() - y.frac) * x.frac;
                            let w10 = y.frac * (T::one() - x.frac);
                            let w11 = y.frac * x.frac;
                            for ch in 0..c {
                                let gv = g.data()[o + ch];
                                dx[base + (y.lo * w + x.lo) * c + ch] += gv * w00;
                                dx[base + (y.lo * w + x.hi) * c + ch] += gv * w01;
                                dx[base + (y.hi * w + x.lo) * c + ch] += gv * w10;
                                dx[base + (y.hi * w + x.hi) * c + ch] += gv * w11;
                            }
                        }
                    }
                }
                vec![Some(Tensor {
                    shape: ins[0].shape.clone(),
                    data: dx,
                })]
            }),
        ))
    }
}
