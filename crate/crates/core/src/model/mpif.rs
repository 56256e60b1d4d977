//! Channel-group split, the hierarchical scale recurrence and the
//! two-branch dilated fusion module used as its per-group transform.

use rand::Rng;

use super::layers::Conv;
use super::params::{ParamStore, Session};
use super::{ModelError, Result};
use crate::autograd::{Conv2dGeom, Tensor};

/// Dilations of the two fusion branches.
pub const BRANCH_DILATIONS: [usize; 2] = [1, 2];

/// Split `[B,C,H,W]` into `n` groups of `C/n` consecutive channels.
pub fn split_channels(x: &Tensor, n: usize) -> Result<Vec<Tensor>> {
    let s = x.shape();
    if s.len() != 4 || n == 0 || !s[1].is_multiple_of(n) {
        return Err(ModelError::Config(format!(
            "cannot split {s:?} into {n} equal channel groups"
        )));
    }
    Ok(x.split_channels(&vec![s[1] / n; n])?)
}

fn check_groups(groups: &[Tensor]) -> Result<()> {
    if groups.len() < 2 {
        return Err(ModelError::Config("scale recurrence needs at least 2 groups".into()));
    }
    if groups.iter().any(|g| g.shape() != groups[0].shape()) {
        return Err(ModelError::Config("channel groups differ in shape".into()));
    }
    Ok(())
}

/// `y_1 = p_1`, `y_2 = K_2(p_2)`, `y_i = K_i(p_i + y_{i-1})`. The transform
/// receives the 0-based group index.
pub fn scale_forward<F>(groups: &[Tensor], mut k: F) -> Result<Vec<Tensor>>
where
    F: FnMut(usize, &Tensor) -> Result<Tensor>,
{
    check_groups(groups)?;
    let mut ys = vec![groups[0].clone()];
    let mut prev = k(1, &groups[1])?;
    ys.push(prev.clone());
    for (i, p) in groups.iter().enumerate().skip(2) {
        prev = k(i, &p.add(&prev)?)?;
        ys.push(prev.clone());
    }
    Ok(ys)
}

/// Strided variant: the recurrence sum would mix resolutions, so each
/// `K_i` sees `p_i` alone and group 1 is passed through `first`.
pub fn stage_scale_forward<F, G>(groups: &[Tensor], mut first: G, mut k: F) -> Result<Vec<Tensor>>
where
    F: FnMut(usize, &Tensor) -> Result<Tensor>,
    G: FnMut(&Tensor) -> Result<Tensor>,
{
    check_groups(groups)?;
    let mut ys = vec![first(&groups[0])?];
    for (i, p) in groups.iter().enumerate().skip(1) {
        ys.push(k(i, p)?);
    }
    Ok(ys)
}

/// Scale recurrence with bare 3×3 kernels, one per group 2..n.
pub fn res2net_scale_forward(groups: &[Tensor], kernels: &[Tensor], geom: Conv2dGeom) -> Result<Vec<Tensor>> {
    if kernels.len() + 1 != groups.len() {
        return Err(ModelError::Config(format!(
            "{} groups need {} kernels, got {}",
            groups.len(),
            groups.len().saturating_sub(1),
            kernels.len()
        )));
    }
    scale_forward(groups, |i, x| Ok(x.conv2d(&kernels[i - 1], None, geom)?))
}

/// `c^j`: 3×3 conv with dilation and padding `j`.
pub fn mpif_branch(p: &Tensor, weight: &Tensor, j: usize) -> Result<Tensor> {
    Ok(p.conv2d(weight, None, Conv2dGeom::new(1, j, j))?)
}

/// `Ω^j = AvgPool₁ₓ₁(sigmoid(V_j * c^j))`, shape `[B,p,1,1]`.
pub fn channel_weights(c: &Tensor, v: &Tensor, v_bias: Option<&Tensor>, j: usize) -> Result<Tensor> {
    let e = c.conv2d(v, v_bias, Conv2dGeom::new(1, j, j))?;
    Ok(e.sigmoid().adaptive_avg_pool2d(1, 1)?)
}

/// `Σ_j c^j ⊙ Ω^j` with `Ω^j` broadcast over space.
pub fn mpif_fuse(branches: &[Tensor], weights: &[Tensor]) -> Result<Tensor> {
    if branches.is_empty() || branches.len() != weights.len() {
        return Err(ModelError::Config(format!(
            "{} branches with {} weight sets",
            branches.len(),
            weights.len()
        )));
    }
    let mut acc = branches[0].mul(&weights[0])?;
    for (c, w) in branches.iter().zip(weights).skip(1) {
        acc = acc.add(&c.mul(w)?)?;
    }
    Ok(acc)
}

/// Kernels of one fusion module as plain tensors.
#[derive(Clone, Debug)]
pub struct MpifWeights {
    pub branch: [Tensor; 2],
    pub energy: [Tensor; 2],
    pub energy_bias: [Option<Tensor>; 2],
}

/// Intermediate values of one fusion pass.
#[derive(Clone, Debug)]
pub struct MpifTrace {
    pub output: Tensor,
    pub branches: Vec<Tensor>,
    pub weights: Vec<Tensor>,
}

pub fn mpif_forward(p: &Tensor, m: &MpifWeights) -> Result<MpifTrace> {
    let mut branches = Vec::with_capacity(2);
    let mut weights = Vec::with_capacity(2);
    for (b, &j) in BRANCH_DILATIONS.iter().enumerate() {
        let c = mpif_branch(p, &m.branch[b], j)?;
        weights.push(channel_weights(&c, &m.energy[b], m.energy_bias[b].as_ref(), j)?);
        branches.push(c);
    }
    Ok(MpifTrace {
        output: mpif_fuse(&branches, &weights)?,
        branches,
        weights,
    })
}

/// Scale recurrence with a fusion module per group 2..n.
pub fn mpif_scale_forward(groups: &[Tensor], modules: &[MpifWeights]) -> Result<Vec<Tensor>> {
    if modules.len() + 1 != groups.len() {
        return Err(ModelError::Config(format!(
            "{} groups need {} modules, got {}",
            groups.len(),
            groups.len().saturating_sub(1),
            modules.len()
        )));
    }
    scale_forward(groups, |i, x| Ok(mpif_forward(x, &modules[i - 1])?.output))
}

/// Parameterised fusion module.
#[derive(Clone, Debug)]
pub struct MpifModule {
    pub branch: [Conv; 2],
    pub energy: [Conv; 2],
}

impl MpifModule {
    pub(crate) fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, p: usize, stride: usize) -> Self {
        let mk = |store: &mut ParamStore, rng: &mut R, b: usize, role: &str, stride: usize, bias: bool| {
            let j = BRANCH_DILATIONS[b];
            Conv::new(store, rng, &format!("{name}.{role}{j}"), p, p, 3, Conv2dGeom::new(stride, j, j), bias)
        };
        let b0 = mk(store, rng, 0, "branch", stride, false);
        let e0 = mk(store, rng, 0, "energy", 1, true);
        let b1 = mk(store, rng, 1, "branch", stride, false);
        let e1 = mk(store, rng, 1, "energy", 1, true);
        Self {
            branch: [b0, b1],
            energy: [e0, e1],
        }
    }

    pub fn weights(&self, s: &mut Session) -> MpifWeights {
        let [b0, b1] = &self.branch;
        let [e0, e1] = &self.energy;
        MpifWeights {
            branch: [s.param(b0.weight), s.param(b1.weight)],
            energy: [s.param(e0.weight), s.param(e1.weight)],
            energy_bias: [e0.bias.map(|b| s.param(b)), e1.bias.map(|b| s.param(b))],
        }
    }

    pub fn forward(&self, s: &mut Session, x: &Tensor) -> Result<Tensor> {
        let mut branches = Vec::with_capacity(2);
        let mut weights = Vec::with_capacity(2);
        for (conv, energy) in self.branch.iter().zip(&self.energy) {
            let c = conv.forward(s, x)?;
            let e = energy.forward(s, &c)?;
            weights.push(e.sigmoid().adaptive_avg_pool2d(1, 1)?);
            branches.push(c);
        }
        mpif_fuse(&branches, &weights)
    }
}
