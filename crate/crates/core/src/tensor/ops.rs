use super::kernels::{gemm, gemm_a_bt, gemm_at_b};
use super::{invert_permutation, numel, strides, Scalar, Tensor, Var};
use crate::error::{Error, Result};
use crate::parallel::{for_each_chunk, map_range};

/// `rhs` may equal `lhs` in shape or be a trailing suffix of it.
fn suffix_broadcast(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<usize> {
    if rhs.len() <= lhs.len() && lhs[lhs.len() - rhs.len()..] == *rhs {
        Ok(numel(rhs))
    } else {
        Err(Error::dim(op, lhs, rhs))
    }
}

/// Sums `g` over its leading blocks down to a tensor of `shape`.
fn reduce_to<T: Scalar>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    let r = numel(shape);
    let mut out = vec![T::zero(); r];
    for block in g.data().chunks(r) {
        for (o, &v) in out.iter_mut().zip(block) {
            *o += v;
        }
    }
    Tensor {
        shape: shape.to_vec(),
        data: out,
    }
}

fn unary<'t, T: Scalar>(
    x: Var<'t, T>,
    op: &'static str,
    f: impl Fn(T) -> T,
    df: impl Fn(T, T) -> T + 'static,
) -> Var<'t, T> {
    let value = x.value().map(&f);
    x.tape.push(
        op,
        value,
        vec![x.id],
        Box::new(move |ins: &[&Tensor<T>], out: &Tensor<T>, g: &Tensor<T>| {
            let data = ins[0]
                .data()
                .iter()
                .zip(out.data())
                .zip(g.data())
                .map(|((&x, &y), &g)| g * df(x, y))
                .collect();
            vec![Some(Tensor {
                shape: g.shape.clone(),
                data,
            })]
        }),
    )
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU: x·Φ(x).
pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    x * T::lit(0.5) * (T::one() + (x * T::lit(INV_SQRT_2)).erf())
}

/// `max(z,0) + log1p(exp(-|z|))`.
pub fn softplus_scalar<T: Scalar>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid_scalar<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    fn binary_suffix(
        self,
        rhs: Var<'t, T>,
        op: &'static str,
        f: impl Fn(T, T) -> T,
        grads: impl Fn(&[T], &[T], &[T], usize) -> (Vec<T>, Vec<T>) + 'static,
    ) -> Result<Var<'t, T>> {
        self.same_tape(&rhs, op)?;
        let value = {
            let (a, b) = (self.value(), rhs.value());
            let r = suffix_broadcast(op, a.shape(), b.shape())?;
            let data = a
                .data()
                .chunks(r)
                .flat_map(|blk| blk.iter().zip(b.data()).map(|(&x, &y)| f(x, y)))
                .collect();
            Tensor {
                shape: a.shape.clone(),
                data,
            }
        };
        Ok(self.tape.push(
            op,
            value,
            vec![self.id, rhs.id],
            Box::new(move |ins: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>| {
                let r = ins[1].len();
                let (ga, gb_full) = grads(ins[0].data(), ins[1].data(), g.data(), r);
                let gb = reduce_to(
                    &Tensor {
                        shape: g.shape.clone(),
                        data: gb_full,
                    },
                    ins[1].shape(),
                );
                vec![
                    Some(Tensor {
                        shape: g.shape.clone(),
                        data: ga,
                    }),
                    Some(gb),
                ]
            }),
        ))
    }

    /// Elementwise sum; `rhs` may be a trailing-suffix broadcast (bias, embeddings).
    pub fn add(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary_suffix(rhs, "add", |a, b| a + b, |_, _, g, _| (g.to_vec(), g.to_vec()))
    }

    pub fn sub(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary_suffix(
            rhs,
            "sub",
            |a, b| a - b,
            |_, _, g, _| (g.to_vec(), g.iter().map(|&x| -x).collect()),
        )
    }

    pub fn mul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary_suffix(
            rhs,
            "mul",
            |a, b| a * b,
            |a, b, g, r| {
                let ga = g.iter().enumerate().map(|(i, &g)| g * b[i % r]).collect();
                let gb = g.iter().zip(a).map(|(&g, &a)| g * a).collect();
                (ga, gb)
            },
        )
    }

    pub fn scale(self, c: T) -> Var<'t, T> {
        unary(self, "scale", |x| x * c, move |_, _| c)
    }

    pub fn tanh(self) -> Var<'t, T> {
        unary(self, "tanh", |x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn gelu(self) -> Var<'t, T> {
        unary(self, "gelu", gelu_scalar, |x, _| {
            let cdf = T::lit(0.5) * (T::one() + (x * T::lit(INV_SQRT_2)).erf());
            let pdf = T::lit(INV_SQRT_2PI) * (-(x * x) * T::lit(0.5)).exp();
            cdf + x * pdf
        })
    }

    /// Numerically stable log(1 + e^z).
    pub fn softplus(self) -> Var<'t, T> {
        unary(self, "softplus", softplus_scalar, |x, _| sigmoid_scalar(x))
    }

    pub fn sum(self) -> Var<'t, T> {
        let value = Tensor::scalar(self.value().sum());
        self.tape.push(
            "sum",
            value,
            vec![self.id],
            Box::new(|ins: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>| {
                vec![Some(Tensor::full(ins[0].shape(), g.item()))]
            }),
        )
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean_axis(self, axis: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::dim("mean_axis", &shape, &[axis]));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let inv = T::one() / T::lit(len as f64);
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let value = {
            let x = self.value();
            let mut out = vec![T::zero(); outer * inner];
            for o in 0..outer {
                let dst = &mut out[o * inner..(o + 1) * inner];
                for l in 0..len {
                    let src = &x.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
                }
                dst.iter_mut().for_each(|d| *d *= inv);
            }
            Tensor {
                shape: out_shape,
                data: out,
            }
        };
        Ok(self.tape.push(
            "mean_axis",
            value,
            vec![self.id],
            Box::new(move |ins: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>| {
                let mut dx = vec![T::zero(); ins[0].len()];
                for o in 0..outer {
                    let src = &g.data()[o * inner..(o + 1) * inner];
                    for l in 0..len {
                        let dst = &mut dx[(o * len + l) * inner..(o * len + l + 1) * inner];
                        dst.iter_mut().zip(src).for_each(|(d, &s)| *d = s * inv);
                    }
                }
                vec![Some(Tensor {
                    shape: ins[0].shape.clone(),
                    data: dx,
                })]
            }),
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let value = self.value().clone().reshape(shape)?;
        Ok(self.tape.push(
            "reshape",
            value,
            vec![self.id],
            Box::new(|ins: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>| {
                vec![Some(g.clone().reshape(ins[0].shape()).expect("same numel"))]
            }),
        ))
    }

    /// Output axis `i` is input axis `axes[i]`.
    pub fn permute(self, axes: &[usize]) -> Result<Var<'t, T>> {
        let value = self.value().permute(axes)?;
        let inverse = invert_permutation(axes);
        Ok(self.tape.push(
            "permute",
            value,
            vec![self.id],
            Box::new(move |_: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>| {
                vec![Some(g.permute(&inverse).expect("valid inverse"))]
            }),
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(self) -> Result<Var<'t, T>> {
        let r = self.value().rank();
        if r < 2 {
            return Err(Error::dim("transpose", &self.shape(), &[]));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    /// Batched matrix product over the last two axes; leading axes broadcast.
    pub fn matmul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&rhs, "matmul")?;
        let (a_shape, b_shape) = (self.shape(), rhs.shape());
        if a_shape.len() < 2 || b_shape.len() < 2 || a_shape[a_shape.len() - 1] != b_shape[b_shape.len() - 2] {
            return Err(Error::dim("matmul", &a_shape, &b_shape));
        }
        if b_shape.len() == 2 {
            return Ok(self.matmul_shared_rhs(rhs));
        }
        self.matmul_batched(rhs, &a_shape, &b_shape)
    }

    /// `[..., k] × [k, n]`: all leading axes of `self` fold into one row axis.
    fn matmul_shared_rhs(self, rhs: Var<'t, T>) -> Var<'t, T> {
        let (value, m, k, n) = {
            let (a, b) = (self.value(), rhs.value());
            let (k, n) = (b.shape()[0], b.shape()[1]);
            let m = a.len() / k;
            let mut out = vec![T::zero(); m * n];
            gemm(a.data(), b.data(), &mut out, m, k, n);
            let mut shape = a.shape().to_vec();
            *shape.last_mut().unwrap() = n;
            (Tensor { shape, data: out }, m, k, n)
        };
        self.tape.push(
            "matmul",
            value,
            vec![self.id, rhs.id],
            Box::new(move |ins: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>| {
                let mut da = vec![T::zero(); m * k];
                gemm_a_bt(g.data(), ins[1].data(), &mut da, m, n, k);
                let mut db = vec![T::zero(); k * n];
                gemm_at_b(ins[0].data(), g.data(), &mut db, m, k, n);
                vec![
                    Some(Tensor {
                        shape: ins[0].shape.clone(),
                        data: da,
                    }),
                    Some(Tensor {
                        shape: ins[1].shape.clone(),
                        data: db,
                    }),
                ]
            }),
        )
    }

    fn matmul_batched(self, rhs: Var<'t, T>, a_shape: &[usize], b_shape: &[usize]) -> Result<Var<'t, T>> {
        let (m, k) = (a_shape[a_shape.len() - 2], a_shape[a_shape.len() - 1]);
        let n = b_shape[b_shape.len() - 1];
        let a_batch = &a_shape[..a_shape.len() - 2];
        let b_batch = &b_shape[..b_shape.len() - 2];
        let batch = broadcast_shapes(a_batch, b_batch).ok_or_else(|| Error::dim("matmul", a_shape, b_shape))?;
        let nb = numel(&batch);
        let ia = broadcast_index(&batch, a_batch);
        let ib = broadcast_index(&batch, b_batch);

        let value = {
            let (av, bv) = (self.value(), rhs.value());
            let (a, b) = (av.data(), bv.data());
            let mut out = vec![T::zero(); nb * m * n];
            for_each_chunk(&mut out, m * n, nb * m * k * n, |bi, o| {
                gemm_serial(&a[ia[bi] * m * k..][..m * k], &b[ib[bi] * k * n..][..k * n], o, m, k, n);
            });
            let mut shape = batch.clone();
            shape.extend([m, n]);
            Tensor { shape, data: out }
        };

        let direct = ia.iter().enumerate().all(|(i, &x)| x == i) && ib.iter().enumerate().all(|(i, &x)| x == i);
        Ok(self.tape.push(
            "matmul",
            value,
            vec![self.id, rhs.id],
            Box::new(move |ins: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>| {
                let (a, b) = (ins[0].data(), ins[1].data());
                let da_full: Vec<Vec<T>> = map_range(nb, |bi| {
                    let mut d = vec![T::zero(); m * k];
                    gemm_a_bt_serial(&g.data()[bi * m * n..][..m * n], &b[ib[bi] * k * n..][..k * n], &mut d, m, n, k);
                    d
                });
                let db_full: Vec<Vec<T>> = map_range(nb, |bi| {
                    let mut d = vec![T::zero(); k * n];
                    gemm_at_b_serial(&a[ia[bi] * m * k..][..m * k], &g.data()[bi * m * n..][..m * n], &mut d, m, k, n);
                    d
                });
                let gather = |full: Vec<Vec<T>>, idx: &[usize], shape: &[usize], blk: usize| {
                    if direct {
                        return Tensor {
                            shape: shape.to_vec(),
                            data: full.concat(),
                        };
                    }
                    let mut data = vec![T::zero(); numel(shape)];
                    for (bi, part) in full.iter().enumerate() {
                        let dst = &mut data[idx[bi] * blk..(idx[bi] + 1) * blk];
                        dst.iter_mut().zip(part).for_each(|(d, &s)| *d += s);
                    }
                    Tensor {
                        shape: shape.to_vec(),
                        data,
                    }
                };
                vec![
                    Some(gather(da_full, &ia, ins[0].shape(), m * k)),
                    Some(gather(db_full, &ib, ins[1].shape(), k * n)),
                ]
            }),
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Var<'t, T> {
        let value = {
            let x = self.value();
            let d = *x.shape().last().unwrap_or(&1);
            let mut out = x.data().to_vec();
            for row in out.chunks_mut(d) {
                let mx = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
                let mut s = T::zero();
                row.iter_mut().for_each(|v| {
                    *v = (*v - mx).exp();
                    s += *v;
                });
                row.iter_mut().for_each(|v| *v = *v / s);
            }
            Tensor {
                shape: x.shape.clone(),
                data: out,
            }
        };
        self.tape.push(
            "softmax",
            value,
            vec![self.id],
            Box::new(|_: &[&Tensor<T>], y: &Tensor<T>, g: &Tensor<T>| {
                let d = *y.shape().last().unwrap_or(&1);
                let mut dx = vec![T::zero(); y.len()];
                for ((dxr, yr), gr) in dx.chunks_mut(d).zip(y.data().chunks(d)).zip(g.data().chunks(d)) {
                    let dotp: T = yr.iter().zip(gr).map(|(&y, &g)| y * g).sum();
                    for ((o, &y), &g) in dxr.iter_mut().zip(yr).zip(gr) {
                        *o = y * (g - dotp);
                    }
                }
                vec![Some(Tensor {
                    shape: y.shape.clone(),
                    data: dx,
                })]
            }),
        )
    }

    /// Normalizes over the last axis with population variance, then applies
    /// `gamma`/`beta`.
    pub fn layer_norm(self, gamma: Var<'t, T>, beta: Var<'t, T>, eps: T) -> Result<Var<'t, T>> {
        self.same_tape(&gamma, "layer_norm")?;
        self.same_tape(&beta, "layer_norm")?;
        let shape = self.shape();
        let d = *shape.last().ok_or_else(|| Error::dim("layer_norm", &shape, &[]))?;
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::dim("layer_norm", &shape, &gamma.shape()));
        }
        let inv_d = T::one() / T::lit(d as f64);
        let (value, xhat, rstd) = {
            let (x, ga, be) = (self.value(), gamma.value(), beta.value());
            let rows = x.len() / d;
            let mut xhat = vec![T::zero(); x.len()];
            let mut rstd = vec![T::zero(); rows];
            let mut out = vec![T::zero(); x.len()];
            for r in 0..rows {
                let row = &x.data()[r * d..(r + 1) * d];
                let mean = row.iter().copied().sum::<T>() * inv_d;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
                let rs = T::one() / (var + eps).sqrt();
                rstd[r] = rs;
                for j in 0..d {
                    let h = (row[j] - mean) * rs;
                    xhat[r * d + j] = h;
                    out[r * d + j] = h * ga.data()[j] + be.data()[j];
                }
            }
            (
                Tensor {
                    shape: shape.clone(),
                    data: out,
                },
                xhat,
                rstd,
            )
        };
        Ok(self.tape.push(
            "layer_norm",
            value,
            vec![self.id, gamma.id, beta.id],
            Box::new(move |ins: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>| {
                let ga = ins[1].data();
                let mut dx = vec![T::zero(); g.len()];
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                for (r, &rs) in rstd.iter().enumerate() {
                    let gr = &g.data()[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    let mut sum_dh = T::zero();
                    let mut sum_dh_h = T::zero();
                    for j in 0..d {
                        let dh = gr[j] * ga[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[j];
                        dgamma[j] += gr[j] * hr[j];
                        dbeta[j] += gr[j];
                    }
                    for j in 0..d {
                        let dh = gr[j] * ga[j];
                        dx[r * d + j] = rs * inv_d * (T::lit(d as f64) * dh - sum_dh - hr[j] * sum_dh_h);
                    }
                }
                vec![
                    Some(Tensor {
                        shape: g.shape.clone(),
                        data: dx,
                    }),
                    Some(Tensor {
                        shape: vec![d],
                        data: dgamma,
                    }),
                    Some(Tensor {
                        shape: vec![d],
                        data: dbeta,
                    }),
                ]
            }),
        ))
    }
}

fn gemm_serial<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        out_row.iter_mut().for_each(|x| *x = T::zero());
        for p in 0..k {
            let av = a[i * k + p];
            for (o, &bv) in out_row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

fn gemm_a_bt_serial<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = super::kernels::dot(&a[i * k..(i + 1) * k], &b[j * k..(j + 1) * k]);
        }
    }
}

fn gemm_at_b_serial<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    out.iter_mut().for_each(|x| *x = T::zero());
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            for (o, &bv) in out[p * n..(p + 1) * n].iter_mut().zip(&b[i * n..(i + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    (0..r)
        .map(|i| {
            let x = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
            let y = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
            match (x, y) {
                (x, y) if x == y => Some(x),
                (1, y) => Some(y),
                (x, 1) => Some(x),
                _ => None,
            }
        })
        .collect()
}

/// For every flat index of `full`, the flat index of the broadcast operand.
fn broadcast_index(full: &[usize], part: &[usize]) -> Vec<usize> {
    let r = full.len();
    let part_strides = strides(part);
    let full_strides = strides(full);
    (0..numel(full))
        .map(|flat| {
            let mut idx = 0;
            for ax in 0..r {
                let coord = (flat / full_strides[ax]) % full[ax];
                if ax + part.len() >= r {
                    let pa = ax + part.len() - r;
                    if part[pa] != 1 {
                        idx += coord * part_strides[pa];
                    }
                }
            }
            idx
        })
        .collect()
}
