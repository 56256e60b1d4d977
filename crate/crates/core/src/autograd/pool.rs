use super::tensor::{BackwardFn, Node};
use super::{Result, Scalar, Tensor, TensorError};

/// One pooling window per output cell: `(y0, y1, x0, x1, divisor)`.
type Window = (usize, usize, usize, usize, Scalar);

struct PoolBack {
    planes: usize,
    in_plane: usize,
    width: usize,
    windows: Vec<Window>,
}

impl BackwardFn for PoolBack {
    fn name(&self) -> &'static str {
        "avg_pool2d"
    }

    fn backward(&self, _: &[Tensor], _: &Node, g: &[Scalar]) -> Vec<Option<Vec<Scalar>>> {
        let nw = self.windows.len();
        let mut gx = vec![0.0; self.planes * self.in_plane];
        for p in 0..self.planes {
            let dst = &mut gx[p * self.in_plane..(p + 1) * self.in_plane];
            for (&(y0, y1, x0, x1, div), gv) in self.windows.iter().zip(&g[p * nw..(p + 1) * nw]) {
                let share = gv / div;
                for y in y0..y1 {
                    dst[y * self.width + x0..y * self.width + x1]
                        .iter_mut()
                        .for_each(|v| *v += share);
                }
            }
        }
        vec![Some(gx)]
    }
}

fn pool(x: &Tensor, oh: usize, ow: usize, windows: Vec<Window>) -> Tensor {
    let s = x.shape();
    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
    let mut out = Vec::with_capacity(planes * windows.len());
    for plane in x.data().chunks(h * w) {
        for &(y0, y1, x0, x1, div) in &windows {
            let mut acc = 0.0;
            for y in y0..y1 {
                acc += plane[y * w + x0..y * w + x1].iter().sum::<Scalar>();
            }
            out.push(acc / div);
        }
    }
    Tensor::from_op(
        out,
        vec![s[0], s[1], oh, ow],
        vec![x.clone()],
        PoolBack {
            planes,
            in_plane: h * w,
            width: w,
            windows,
        },
    )
}

fn rank4(op: &'static str, t: &Tensor) -> Result<()> {
    if t.shape().len() != 4 {
        return Err(TensorError::ShapeMismatch {
            op,
            detail: format!("expected rank 4, got {:?}", t.shape()),
        });
    }
    Ok(())
}

impl Tensor {
    /// Average over adaptive bins: output cell `i` covers input rows
    /// `floor(i·H/oh) .. ceil((i+1)·H/oh)`, likewise for columns.
    pub fn adaptive_avg_pool2d(&self, oh: usize, ow: usize) -> Result<Tensor> {
        rank4("adaptive_avg_pool2d", self)?;
        if oh == 0 || ow == 0 {
            return Err(TensorError::Geometry {
                op: "adaptive_avg_pool2d",
                detail: format!("output size {oh}x{ow}"),
            });
        }
        let (h, w) = (self.shape()[2], self.shape()[3]);
        let bins = |i: usize, n: usize, o: usize| (i * n / o, ((i + 1) * n).div_ceil(o));
        let mut windows = Vec::with_capacity(oh * ow);
        for i in 0..oh {
            let (y0, y1) = bins(i, h, oh);
            for j in 0..ow {
                let (x0, x1) = bins(j, w, ow);
                windows.push((y0, y1, x0, x1, ((y1 - y0) * (x1 - x0)) as Scalar));
            }
        }
        Ok(pool(self, oh, ow, windows))
    }

    /// Fixed-window average pooling with zero padding counted in the divisor.
    pub fn avg_pool2d(&self, kernel: usize, stride: usize, padding: usize) -> Result<Tensor> {
        rank4("avg_pool2d", self)?;
        let (h, w) = (self.shape()[2], self.shape()[3]);
        if kernel == 0 || stride == 0 || h + 2 * padding < kernel || w + 2 * padding < kernel {
            return Err(TensorError::Geometry {
                op: "avg_pool2d",
                detail: format!("kernel {kernel}, stride {stride}, padding {padding} on {h}x{w}"),
            });
        }
        let oh = (h + 2 * padding - kernel) / stride + 1;
        let ow = (w + 2 * padding - kernel) / stride + 1;
        let clip = |o: usize, n: usize| {
            let start = (o * stride) as isize - padding as isize;
            let end = start + kernel as isize;
            (start.max(0) as usize, (end.min(n as isize)) as usize)
        };
        let div = (kernel * kernel) as Scalar;
        let mut windows = Vec::with_capacity(oh * ow);
        for i in 0..oh {
            let (y0, y1) = clip(i, h);
            for j in 0..ow {
                let (x0, x1) = clip(j, w);
                windows.push((y0, y1, x0, x1, div));
            }
        }
        Ok(pool(self, oh, ow, windows))
    }
}
