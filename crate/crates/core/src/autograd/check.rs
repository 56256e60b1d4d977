//! Central finite-difference gradient checking.
//!
//! Only the forward pass of the function under test is used here, so the
//! numbers it produces are independent of any backward rule.

use super::{Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|)` over
    /// entries whose magnitude exceeds `abs_floor`.
    pub max_rel_err: Scalar,
    /// Largest absolute error over the remaining (near-zero) entries.
    pub max_abs_err_near_zero: Scalar,
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, rel_tol: Scalar, abs_tol: Scalar) -> bool {
        self.max_rel_err < rel_tol && self.max_abs_err_near_zero < abs_tol
    }
}

/// Numerical gradient of `f(inputs)` w.r.t. every element of every input.
pub fn numeric_grad<F>(f: &F, inputs: &[(Vec<Scalar>, Vec<usize>)], h: Scalar) -> Vec<Vec<Scalar>>
where
    F: Fn(&[Tensor]) -> Tensor,
{
    let eval = |vals: &[(Vec<Scalar>, Vec<usize>)]| -> Scalar {
        let ts: Vec<Tensor> = vals
            .iter()
            .map(|(d, s)| Tensor::new(d.clone(), s).expect("valid input"))
            .collect();
        f(&ts).item().expect("scalar output")
    };
    let mut work: Vec<_> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Vec::with_capacity(inputs[i].0.len());
        for j in 0..inputs[i].0.len() {
            let orig = work[i].0[j];
            work[i].0[j] = orig + h;
            let plus = eval(&work);
            work[i].0[j] = orig - h;
            let minus = eval(&work);
            work[i].0[j] = orig;
            g.push((plus - minus) / (2.0 * h));
        }
        out.push(g);
    }
    out
}

/// Compare backward-pass gradients of a scalar function with central
/// differences.
pub fn check_gradients<F>(f: F, inputs: &[(Vec<Scalar>, Vec<usize>)], h: Scalar, abs_floor: Scalar) -> GradCheck
where
    F: Fn(&[Tensor]) -> Tensor,
{
    let params: Vec<Tensor> = inputs
        .iter()
        .map(|(d, s)| Tensor::param(d.clone(), s).expect("valid input"))
        .collect();
    f(&params).backward().expect("scalar output");
    let numeric = numeric_grad(&f, inputs, h);
    let mut report = GradCheck {
        max_rel_err: 0.0,
        max_abs_err_near_zero: 0.0,
        checked: 0,
    };
    for (p, num) in params.iter().zip(&numeric) {
        let ana = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
        for (a, n) in ana.iter().zip(num) {
            let scale = a.abs().max(n.abs());
            let err = (a - n).abs();
            if scale > abs_floor {
                report.max_rel_err = report.max_rel_err.max(err / scale);
            } else {
                report.max_abs_err_near_zero = report.max_abs_err_near_zero.max(err);
            }
            report.checked += 1;
        }
    }
    report
}
