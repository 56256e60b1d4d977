use super::tensor::{BackwardFn, Node};
use super::{Result, Scalar, Tensor, TensorError};

/// Per-channel statistics of one training-mode batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<Scalar>,
    /// Unbiased variance, the quantity folded into running estimates.
    pub var: Vec<Scalar>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Batch statistics.
    Batch,
    /// Supplied running statistics.
    Running,
}

struct BatchNormBack {
    mode: NormMode,
    channels: usize,
    inner: usize,
    xhat: Vec<Scalar>,
    inv_std: Vec<Scalar>,
}

impl BackwardFn for BatchNormBack {
    fn name(&self) -> &'static str {
        "batchnorm2d"
    }

    fn backward(&self, inputs: &[Tensor], _: &Node, g: &[Scalar]) -> Vec<Option<Vec<Scalar>>> {
        let (x, gamma, beta) = (&inputs[0], &inputs[1], &inputs[2]);
        let (c, inner) = (self.channels, self.inner);
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for (i, (gc, xc)) in g.chunks(inner).zip(self.xhat.chunks(inner)).enumerate() {
            let ch = i % c;
            dbeta[ch] += gc.iter().sum::<Scalar>();
            dgamma[ch] += gc.iter().zip(xc).map(|(a, b)| a * b).sum::<Scalar>();
        }
        let gx = x.requires_grad().then(|| {
            let gm = gamma.data();
            let mut gx = vec![0.0; g.len()];
            match self.mode {
                NormMode::Running => {
                    for (i, (o, gc)) in gx.chunks_mut(inner).zip(g.chunks(inner)).enumerate() {
                        let k = gm[i % c] * self.inv_std[i % c];
                        o.iter_mut().zip(gc).for_each(|(o, g)| *o = g * k);
                    }
                }
                NormMode::Batch => {
                    let n = (g.len() / c) as Scalar;
                    for (i, ((o, gc), xc)) in gx
                        .chunks_mut(inner)
                        .zip(g.chunks(inner))
                        .zip(self.xhat.chunks(inner))
                        .enumerate()
                    {
                        let ch = i % c;
                        let k = gm[ch] * self.inv_std[ch] / n;
                        for ((o, gv), xh) in o.iter_mut().zip(gc).zip(xc) {
                            *o = k * (n * gv - dbeta[ch] - xh * dgamma[ch]);
                        }
                    }
                }
            }
            gx
        });
        vec![
            gx,
            gamma.requires_grad().then_some(dgamma),
            beta.requires_grad().then_some(dbeta),
        ]
    }
}

impl Tensor {
    /// Batch normalisation over `[B,C,H,W]`.
    ///
    /// `NormMode::Batch` normalises with the batch's own statistics and
    /// returns them so the caller can fold them into running estimates.
    /// `NormMode::Running` uses `running = (mean, var)`.
    pub fn batch_norm2d(
        &self,
        gamma: &Tensor,
        beta: &Tensor,
        running: (&[Scalar], &[Scalar]),
        eps: Scalar,
        mode: NormMode,
    ) -> Result<(Tensor, Option<BatchStats>)> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(TensorError::ShapeMismatch {
                op: "batchnorm2d",
                detail: format!("expected rank 4, got {s:?}"),
            });
        }
        let c = s[1];
        for (name, t) in [("gamma", gamma.shape()), ("beta", beta.shape())] {
            if t != [c] {
                return Err(TensorError::ShapeMismatch {
                    op: "batchnorm2d",
                    detail: format!("{name} {t:?}, expected [{c}]"),
                });
            }
        }
        if running.0.len() != c || running.1.len() != c {
            return Err(TensorError::ShapeMismatch {
                op: "batchnorm2d",
                detail: format!("running stats must have {c} entries"),
            });
        }
        let inner = s[2] * s[3];
        let count = s[0] * inner;
        let x = self.data();

        let (mean, var_biased, stats) = match mode {
            NormMode::Batch => {
                if count < 2 {
                    return Err(TensorError::Invalid(
                        "batchnorm2d in batch mode needs at least 2 values per channel".into(),
                    ));
                }
                let mut mean = vec![0.0; c];
                for (i, chunk) in x.chunks(inner).enumerate() {
                    mean[i % c] += chunk.iter().sum::<Scalar>();
                }
                mean.iter_mut().for_each(|m| *m /= count as Scalar);
                let mut ss = vec![0.0; c];
                for (i, chunk) in x.chunks(inner).enumerate() {
                    let m = mean[i % c];
                    ss[i % c] += chunk.iter().map(|v| (v - m) * (v - m)).sum::<Scalar>();
                }
                let var_b: Vec<Scalar> = ss.iter().map(|v| v / count as Scalar).collect();
                let var_u: Vec<Scalar> = ss.iter().map(|v| v / (count - 1) as Scalar).collect();
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: var_u,
                };
                (mean, var_b, Some(stats))
            }
            NormMode::Running => (running.0.to_vec(), running.1.to_vec(), None),
        };
        let inv_std: Vec<Scalar> = var_biased.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = Vec::with_capacity(x.len());
        let mut out = Vec::with_capacity(x.len());
        for (i, chunk) in x.chunks(inner).enumerate() {
            let ch = i % c;
            let (m, k, gm, bt) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            for v in chunk {
                let h = (v - m) * k;
                xhat.push(h);
                out.push(gm * h + bt);
            }
        }
        let t = Tensor::from_op(
            out,
            s.to_vec(),
            vec![self.clone(), gamma.clone(), beta.clone()],
            BatchNormBack {
                mode,
                channels: c,
                inner,
                xhat,
                inv_std,
            },
        );
        Ok((t, stats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Vec<Scalar> {
        (0..n).map(|i| ((i * 37 % 11) as Scalar) * 0.3 - 1.0).collect()
    }

    #[test]
    fn constant_input_gives_beta() {
        let x = Tensor::full(&[2, 2, 3, 3], 4.2);
        let gamma = Tensor::new(vec![1.5, -2.0], &[2]).unwrap();
        let beta = Tensor::new(vec![0.25, -0.75], &[2]).unwrap();
        let (y, stats) = x
            .batch_norm2d(&gamma, &beta, (&[0.0; 2], &[1.0; 2]), 1e-5, NormMode::Batch)
            .unwrap();
        for (i, chunk) in y.data().chunks(9).enumerate() {
            let b = beta.data()[i % 2];
            assert!(chunk.iter().all(|&v| (v - b).abs() < 1e-12));
        }
        assert_eq!(stats.unwrap().var, vec![0.0, 0.0]);
    }

    #[test]
    fn batch_mode_standardises() {
        let x = Tensor::new(ramp(3 * 2 * 4 * 5), &[3, 2, 4, 5]).unwrap();
        let (y, _) = x
            .batch_norm2d(
                &Tensor::full(&[2], 1.0),
                &Tensor::zeros(&[2]),
                (&[0.0; 2], &[1.0; 2]),
                1e-10,
                NormMode::Batch,
            )
            .unwrap();
        for ch in 0..2 {
            let vals: Vec<Scalar> = y
                .data()
                .chunks(20)
                .enumerate()
                .filter(|(i, _)| i % 2 == ch)
                .flat_map(|(_, c)| c.iter().copied())
                .collect();
            let n = vals.len() as Scalar;
            let mean = vals.iter().sum::<Scalar>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<Scalar>() / n;
            assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-5, "{mean} {var}");
        }
    }

    #[test]
    fn running_mode_matches_scalar_formula() {
        let xs = ramp(2 * 3 * 2 * 2);
        let x = Tensor::new(xs.clone(), &[2, 3, 2, 2]).unwrap();
        let gamma = [0.5, 2.0, -1.0];
        let beta = [0.1, 0.0, 3.0];
        let rm = [0.2, -0.4, 1.0];
        let rv = [1.5, 0.25, 4.0];
        let eps = 1e-5;
        let (y, stats) = x
            .batch_norm2d(
                &Tensor::new(gamma.to_vec(), &[3]).unwrap(),
                &Tensor::new(beta.to_vec(), &[3]).unwrap(),
                (&rm, &rv),
                eps,
                NormMode::Running,
            )
            .unwrap();
        assert!(stats.is_none());
        for (i, (&v, &out)) in xs.iter().zip(y.data()).enumerate() {
            let c = (i / 4) % 3;
            let expect = gamma[c] * (v - rm[c]) / (rv[c] + eps).sqrt() + beta[c];
            assert!((out - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn single_value_batch_is_rejected() {
        let x = Tensor::zeros(&[1, 2, 1, 1]);
        let r = x.batch_norm2d(
            &Tensor::full(&[2], 1.0),
            &Tensor::zeros(&[2]),
            (&[0.0; 2], &[1.0; 2]),
            1e-5,
            NormMode::Batch,
        );
        assert!(r.is_err());
    }
}
