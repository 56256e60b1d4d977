//! Elementwise, reduction and structural operators.

use super::tensor::{BackwardFn, Node};
use super::{Result, Scalar, Tensor, TensorError};

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    Ok(())
}

/// `[B,C,1,1..]` against `[B,C,H,W..]`: the only broadcast supported.
fn is_channel_broadcast(full: &[usize], small: &[usize]) -> bool {
    full.len() >= 2
        && full.len() == small.len()
        && full[..2] == small[..2]
        && small[2..].iter().all(|&d| d == 1)
}

struct AddBack;
impl BackwardFn for AddBack {
    fn name(&self) -> &'static str {
        "add"
    }
    fn backward(&self, _: &[Tensor], _: &Node, g: &[Scalar]) -> Vec<Option<Vec<Scalar>>> {
        vec![Some(g.to_vec()), Some(g.to_vec())]
    }
}

struct SubBack;
impl BackwardFn for SubBack {
    fn name(&self) -> &'static str {
        "sub"
    }
    fn backward(&self, _: &[Tensor], _: &Node, g: &[Scalar]) -> Vec<Option<Vec<Scalar>>> {
        vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]
    }
}

struct MulBack;
impl BackwardFn for MulBack {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn backward(&self, inputs: &[Tensor], _: &Node, g: &[Scalar]) -> Vec<Option<Vec<Scalar>>> {
        let (a, b) = (&inputs[0], &inputs[1]);
        let ga = a
            .requires_grad()
            .then(|| g.iter().zip(b.data()).map(|(g, b)| g * b).collect());
        let gb = b
            .requires_grad()
            .then(|| g.iter().zip(a.data()).map(|(g, a)| g * a).collect());
        vec![ga, gb]
    }
}

struct ChannelMulBack {
    inner: usize,
}
impl BackwardFn for ChannelMulBack {
    fn name(&self) -> &'static str {
        "mul_channel"
    }
    fn backward(&self, inputs: &[Tensor], _: &Node, g: &[Scalar]) -> Vec<Option<Vec<Scalar>>> {
        let (a, w) = (&inputs[0], &inputs[1]);
        let inner = self.inner;
        let ga = a.requires_grad().then(|| {
            let mut out = vec![0.0; g.len()];
            for ((o, gc), &wv) in out
                .chunks_mut(inner)
                .zip(g.chunks(inner))
                .zip(w.data())
            {
                o.iter_mut().zip(gc).for_each(|(o, g)| *o = g * wv);
            }
            out
        });
        let gw = w.requires_grad().then(|| {
            g.chunks(inner)
                .zip(a.data().chunks(inner))
                .map(|(gc, ac)| gc.iter().zip(ac).map(|(g, a)| g * a).sum())
                .collect()
        });
        vec![ga, gw]
    }
}

struct ScaleBack(Scalar);
impl BackwardFn for ScaleBack {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn backward(&self, _: &[Tensor], _: &Node, g: &[Scalar]) -> Vec<Option<Vec<Scalar>>> {
        vec![Some(g.iter().map(|v| v * self.0).collect())]
    }
}

struct SumBack(Scalar);
impl BackwardFn for SumBack {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn backward(&self, inputs: &[Tensor], _: &Node, g: &[Scalar]) -> Vec<Option<Vec<Scalar>>> {
        vec![Some(vec![g[0] * self.0; inputs[0].numel()])]
    }
}

struct ReluBack;
impl BackwardFn for ReluBack {
    fn name(&self) -> &'static str {
        "relu"
    }
    fn backward(&self, inputs: &[Tensor], _: &Node, g: &[Scalar]) -> Vec<Option<Vec<Scalar>>> {
        let x = inputs[0].data();
        vec![Some(
            g.iter()
                .zip(x)
                .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                .collect(),
        )]
    }
}

struct SigmoidBack;
impl BackwardFn for SigmoidBack {
    fn name(&self) -> &'static str {
        "sigmoid"
    }
    fn backward(&self, _: &[Tensor], out: &Node, g: &[Scalar]) -> Vec<Option<Vec<Scalar>>> {
        vec![Some(
            g.iter()
                .zip(&out.data)
                .map(|(g, s)| g * s * (1.0 - s))
                .collect(),
        )]
    }
}

struct ReshapeBack;
impl BackwardFn for ReshapeBack {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn backward(&self, _: &[Tensor], _: &Node, g: &[Scalar]) -> Vec<Option<Vec<Scalar>>> {
        vec![Some(g.to_vec())]
    }
}

/// Outer (axis 0) and inner (axes 2..) extents around axis 1.
fn axis1_dims(shape: &[usize]) -> (usize, usize, usize) {
    (shape[0], shape[1], shape[2..].iter().product())
}

struct ConcatBack {
    sizes: Vec<usize>,
    outer: usize,
    inner: usize,
}
impl BackwardFn for ConcatBack {
    fn name(&self) -> &'static str {
        "concat"
    }
    fn backward(&self, inputs: &[Tensor], _: &Node, g: &[Scalar]) -> Vec<Option<Vec<Scalar>>> {
        let total: usize = self.sizes.iter().sum();
        let mut offset = 0;
        let mut out = Vec::with_capacity(inputs.len());
        for (t, &c) in inputs.iter().zip(&self.sizes) {
            if t.requires_grad() {
                let mut gi = Vec::with_capacity(self.outer * c * self.inner);
                for b in 0..self.outer {
                    let start = (b * total + offset) * self.inner;
                    gi.extend_from_slice(&g[start..start + c * self.inner]);
                }
                out.push(Some(gi));
            } else {
                out.push(None);
            }
            offset += c;
        }
        out
    }
}

struct NarrowBack {
    start: usize,
    len: usize,
    channels: usize,
    outer: usize,
    inner: usize,
}
impl BackwardFn for NarrowBack {
    fn name(&self) -> &'static str {
        "narrow"
    }
    fn backward(&self, _: &[Tensor], _: &Node, g: &[Scalar]) -> Vec<Option<Vec<Scalar>>> {
        let mut gi = vec![0.0; self.outer * self.channels * self.inner];
        let block = self.len * self.inner;
        for b in 0..self.outer {
            let dst = (b * self.channels + self.start) * self.inner;
            gi[dst..dst + block].copy_from_slice(&g[b * block..(b + 1) * block]);
        }
        vec![Some(gi)]
    }
}

struct LinearBack {
    rows: usize,
    in_dim: usize,
    out_dim: usize,
}
impl BackwardFn for LinearBack {
    fn name(&self) -> &'static str {
        "linear"
    }
    fn backward(&self, inputs: &[Tensor], _: &Node, g: &[Scalar]) -> Vec<Option<Vec<Scalar>>> {
        let (x, w) = (&inputs[0], &inputs[1]);
        let (n, d, k) = (self.rows, self.in_dim, self.out_dim);
        let gx = x.requires_grad().then(|| {
            let mut gx = vec![0.0; n * d];
            for r in 0..n {
                let row = &mut gx[r * d..(r + 1) * d];
                for c in 0..k {
                    let gv = g[r * k + c];
                    let wr = &w.data()[c * d..(c + 1) * d];
                    row.iter_mut().zip(wr).for_each(|(o, w)| *o += gv * w);
                }
            }
            gx
        });
        let gw = w.requires_grad().then(|| {
            let mut gw = vec![0.0; k * d];
            for r in 0..n {
                let xr = &x.data()[r * d..(r + 1) * d];
                for c in 0..k {
                    let gv = g[r * k + c];
                    gw[c * d..(c + 1) * d]
                        .iter_mut()
                        .zip(xr)
                        .for_each(|(o, x)| *o += gv * x);
                }
            }
            gw
        });
        let mut out = vec![gx, gw];
        if let Some(b) = inputs.get(2) {
            out.push(b.requires_grad().then(|| {
                let mut gb = vec![0.0; k];
                for r in 0..n {
                    gb.iter_mut()
                        .zip(&g[r * k..(r + 1) * k])
                        .for_each(|(o, g)| *o += g);
                }
                gb
            }));
        }
        out
    }
}

struct L2NormBack {
    dim: usize,
    norms: Vec<Scalar>,
}
impl BackwardFn for L2NormBack {
    fn name(&self) -> &'static str {
        "l2_normalize_rows"
    }
    fn backward(&self, _: &[Tensor], out: &Node, g: &[Scalar]) -> Vec<Option<Vec<Scalar>>> {
        // y = x/|x|  =>  dx = (g - y <g,y>) / |x|
        let d = self.dim;
        let mut gx = vec![0.0; g.len()];
        for (r, &norm) in self.norms.iter().enumerate() {
            let y = &out.data[r * d..(r + 1) * d];
            let gr = &g[r * d..(r + 1) * d];
            let dot: Scalar = y.iter().zip(gr).map(|(a, b)| a * b).sum();
            for ((o, gv), yv) in gx[r * d..(r + 1) * d].iter_mut().zip(gr).zip(y) {
                *o = (gv - yv * dot) / norm;
            }
        }
        vec![Some(gx)]
    }
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("add", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a + b).collect();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            AddBack,
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a - b).collect();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            SubBack,
        ))
    }

    /// Elementwise product. `other` may also be a per-channel weight of
    /// shape `[B,C,1,1]` broadcast over `self` of shape `[B,C,H,W]`.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape() == other.shape() {
            let data = self.data().iter().zip(other.data()).map(|(a, b)| a * b).collect();
            return Ok(Tensor::from_op(
                data,
                self.shape().to_vec(),
                vec![self.clone(), other.clone()],
                MulBack,
            ));
        }
        if !is_channel_broadcast(self.shape(), other.shape()) {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                detail: format!(
                    "cannot broadcast {:?} over {:?}",
                    other.shape(),
                    self.shape()
                ),
            });
        }
        let inner: usize = self.shape()[2..].iter().product();
        let mut data = Vec::with_capacity(self.numel());
        for (chunk, &w) in self.data().chunks(inner).zip(other.data()) {
            data.extend(chunk.iter().map(|v| v * w));
        }
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            ChannelMulBack { inner },
        ))
    }

    pub fn scale(&self, factor: Scalar) -> Tensor {
        let data = self.data().iter().map(|v| v * factor).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], ScaleBack(factor))
    }

    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        Tensor::from_op(vec![s], vec![1], vec![self.clone()], SumBack(1.0))
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as Scalar;
        let s: Scalar = self.data().iter().sum();
        Tensor::from_op(vec![s / n], vec![1], vec![self.clone()], SumBack(1.0 / n))
    }

    pub fn relu(&self) -> Tensor {
        let data = self.data().iter().map(|&v| v.max(0.0)).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], ReluBack)
    }

    pub fn sigmoid(&self) -> Tensor {
        let data = self.data().iter().map(|&v| sigmoid(v)).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], SigmoidBack)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() || shape.contains(&0) {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {shape:?}", self.shape()),
            });
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            ReshapeBack,
        ))
    }

    /// Concatenate along axis 1 (channels). All other extents must agree.
    pub fn concat(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| {
            TensorError::Invalid("concat of an empty list".to_string())
        })?;
        if first.shape().len() < 2 {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                detail: format!("rank {} has no channel axis", first.shape().len()),
            });
        }
        let (outer, _, inner) = axis1_dims(first.shape());
        for p in parts {
            let s = p.shape();
            if s.len() != first.shape().len() || s[0] != outer || s[2..] != first.shape()[2..] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    detail: format!("{:?} vs {:?}", s, first.shape()),
                });
            }
        }
        let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[1]).collect();
        let total: usize = sizes.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for b in 0..outer {
            for (p, &c) in parts.iter().zip(&sizes) {
                data.extend_from_slice(&p.data()[b * c * inner..(b + 1) * c * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[1] = total;
        Ok(Tensor::from_op(
            data,
            shape,
            parts.to_vec(),
            ConcatBack {
                sizes,
                outer,
                inner,
            },
        ))
    }

    /// Channels `[start, start+len)` along axis 1.
    pub fn narrow_channels(&self, start: usize, len: usize) -> Result<Tensor> {
        if self.shape().len() < 2 || len == 0 || start + len > self.shape()[1] {
            return Err(TensorError::ShapeMismatch {
                op: "narrow",
                detail: format!("[{start}, {}) of {:?}", start + len, self.shape()),
            });
        }
        let (outer, channels, inner) = axis1_dims(self.shape());
        let mut data = Vec::with_capacity(outer * len * inner);
        for b in 0..outer {
            let s = (b * channels + start) * inner;
            data.extend_from_slice(&self.data()[s..s + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[1] = len;
        Ok(Tensor::from_op(
            data,
            shape,
            vec![self.clone()],
            NarrowBack {
                start,
                len,
                channels,
                outer,
                inner,
            },
        ))
    }

    /// Split along axis 1 into consecutive pieces of the given sizes.
    pub fn split_channels(&self, sizes: &[usize]) -> Result<Vec<Tensor>> {
        let total: usize = sizes.iter().sum();
        if self.shape().len() < 2 || total != self.shape()[1] {
            return Err(TensorError::ShapeMismatch {
                op: "split",
                detail: format!("sizes {sizes:?} do not partition {:?}", self.shape()),
            });
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&len| {
                let t = self.narrow_channels(start, len);
                start += len;
                t
            })
            .collect()
    }

    /// `x[N,D] · w[K,D]^T + b[K]`.
    pub fn linear(&self, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                detail: format!("input {xs:?}, weight {ws:?}"),
            });
        }
        let (n, d, k) = (xs[0], xs[1], ws[0]);
        if let Some(b) = bias {
            if b.shape() != [k] {
                return Err(TensorError::ShapeMismatch {
                    op: "linear",
                    detail: format!("bias {:?}, expected [{k}]", b.shape()),
                });
            }
        }
        let mut data = Vec::with_capacity(n * k);
        for r in 0..n {
            let xr = &self.data()[r * d..(r + 1) * d];
            for c in 0..k {
                let wr = &weight.data()[c * d..(c + 1) * d];
                let mut acc: Scalar = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
                if let Some(b) = bias {
                    acc += b.data()[c];
                }
                data.push(acc);
            }
        }
        let mut inputs = vec![self.clone(), weight.clone()];
        inputs.extend(bias.cloned());
        Ok(Tensor::from_op(
            data,
            vec![n, k],
            inputs,
            LinearBack {
                rows: n,
                in_dim: d,
                out_dim: k,
            },
        ))
    }

    /// Divide each row of a `[N,D]` tensor by its Euclidean norm.
    pub fn l2_normalize_rows(&self) -> Result<Tensor> {
        if self.shape().len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "l2_normalize_rows",
                detail: format!("expected rank 2, got {:?}", self.shape()),
            });
        }
        let d = self.shape()[1];
        let mut norms = Vec::with_capacity(self.shape()[0]);
        let mut data = Vec::with_capacity(self.numel());
        for row in self.data().chunks(d) {
            let norm = row.iter().map(|v| v * v).sum::<Scalar>().sqrt();
            if norm <= 0.0 || !norm.is_finite() {
                return Err(TensorError::ZeroNorm("l2_normalize_rows"));
            }
            data.extend(row.iter().map(|v| v / norm));
            norms.push(norm);
        }
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            L2NormBack { dim: d, norms },
        ))
    }
}

pub fn sigmoid(v: Scalar) -> Scalar {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
