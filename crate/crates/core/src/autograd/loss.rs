//! Classification losses: angular margin on cosine logits and softmax
//! cross-entropy.

use std::f64::consts::PI;

use super::tensor::{BackwardFn, Node};
use super::{Result, Scalar, Tensor, TensorError};

/// Chebyshev `T_m(c) = cos(m·acos c)` and its derivative `m·U_{m-1}(c)`.
fn chebyshev(m: u32, c: Scalar) -> (Scalar, Scalar) {
    let (mut t_prev, mut t) = (1.0, c);
    let (mut u_prev, mut u) = (0.0, 1.0);
    if m == 0 {
        return (1.0, 0.0);
    }
    for _ in 1..m {
        let t_next = 2.0 * c * t - t_prev;
        let u_next = 2.0 * c * u - u_prev;
        (t_prev, t) = (t, t_next);
        (u_prev, u) = (u, u_next);
    }
    (t, m as Scalar * u)
}

/// Monotone angular-margin target cosine `ψ(θ) = (-1)^k cos(mθ) − 2k`,
/// `k = floor(mθ/π)`, as a function of `c = cos θ`. Returns `(ψ, dψ/dc)`.
pub fn margin_cosine(c: Scalar, m: u32) -> (Scalar, Scalar) {
    let c = c.clamp(-1.0, 1.0);
    let theta = c.acos();
    let k = ((m as Scalar * theta / PI).floor() as u32).min(m.saturating_sub(1));
    let sign = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
    let (t, dt) = chebyshev(m, c);
    (sign * t - 2.0 * k as Scalar, sign * dt)
}

fn check_targets(op: &'static str, shape: &[usize], targets: &[usize]) -> Result<()> {
    if shape.len() != 2 || shape[0] != targets.len() {
        return Err(TensorError::ShapeMismatch {
            op,
            detail: format!("logits {shape:?} with {} targets", targets.len()),
        });
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= shape[1]) {
        return Err(TensorError::Invalid(format!(
            "{op}: target class {t} out of range for {} classes",
            shape[1]
        )));
    }
    Ok(())
}

struct MarginBack {
    classes: usize,
    targets: Vec<usize>,
    slopes: Vec<Scalar>,
}

impl BackwardFn for MarginBack {
    fn name(&self) -> &'static str {
        "angular_margin"
    }

    fn backward(&self, _: &[Tensor], _: &Node, g: &[Scalar]) -> Vec<Option<Vec<Scalar>>> {
        let mut gx = g.to_vec();
        for (r, (&t, &slope)) in self.targets.iter().zip(&self.slopes).enumerate() {
            gx[r * self.classes + t] *= slope;
        }
        vec![Some(gx)]
    }
}

struct CrossEntropyBack {
    probs: Vec<Scalar>,
    classes: usize,
    targets: Vec<usize>,
}

impl BackwardFn for CrossEntropyBack {
    fn name(&self) -> &'static str {
        "cross_entropy"
    }

    fn backward(&self, _: &[Tensor], _: &Node, g: &[Scalar]) -> Vec<Option<Vec<Scalar>>> {
        let n = self.targets.len() as Scalar;
        let mut gx: Vec<Scalar> = self.probs.iter().map(|p| p * g[0] / n).collect();
        for (r, &t) in self.targets.iter().enumerate() {
            gx[r * self.classes + t] -= g[0] / n;
        }
        vec![Some(gx)]
    }
}

impl Tensor {
    /// Replace the target-class cosine of each row by the annealed margin
    /// cosine `(λ·c + ψ_m(c)) / (1 + λ)`. Other entries pass through; `m = 1`
    /// is the identity.
    pub fn angular_margin(&self, targets: &[usize], m: u32, lambda: Scalar) -> Result<Tensor> {
        check_targets("angular_margin", self.shape(), targets)?;
        if m == 0 || lambda < 0.0 {
            return Err(TensorError::Invalid(format!(
                "angular_margin needs m >= 1 and lambda >= 0, got m={m}, lambda={lambda}"
            )));
        }
        let k = self.shape()[1];
        let mut data = self.to_vec();
        let mut slopes = vec![1.0; targets.len()];
        if m > 1 {
            for (r, &t) in targets.iter().enumerate() {
                let c = data[r * k + t];
                let (psi, dpsi) = margin_cosine(c, m);
                data[r * k + t] = (lambda * c + psi) / (1.0 + lambda);
                slopes[r] = (lambda + dpsi) / (1.0 + lambda);
            }
        }
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            MarginBack {
                classes: k,
                targets: targets.to_vec(),
                slopes,
            },
        ))
    }

    /// Mean softmax cross-entropy of `[N,K]` logits against class indices.
    pub fn cross_entropy(&self, targets: &[usize]) -> Result<Tensor> {
        check_targets("cross_entropy", self.shape(), targets)?;
        let k = self.shape()[1];
        let mut probs = Vec::with_capacity(self.numel());
        let mut total = 0.0;
        for (row, &t) in self.data().chunks(k).zip(targets) {
            let max = row.iter().copied().fold(Scalar::NEG_INFINITY, Scalar::max);
            let z: Scalar = row.iter().map(|v| (v - max).exp()).sum();
            probs.extend(row.iter().map(|v| (v - max).exp() / z));
            total += z.ln() + max - row[t];
        }
        Ok(Tensor::from_op(
            vec![total / targets.len() as Scalar],
            vec![1],
            vec![self.clone()],
            CrossEntropyBack {
                probs,
                classes: k,
                targets: targets.to_vec(),
            },
        ))
    }
}
