use rand::Rng;

use super::params::{BnId, Init, ParamId, ParamStore, Session};
use super::Result;
use crate::autograd::{Conv2dGeom, NormMode, Scalar, Tensor};
use crate::Mode;

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: Conv2dGeom,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        geom: Conv2dGeom,
        bias: bool,
    ) -> Self {
        let fan_in = cin * k * k;
        let weight = store.add(format!("{name}.weight"), &[cout, cin, k, k], Init::KaimingNormal(fan_in), rng);
        let bias = bias.then(|| store.add(format!("{name}.bias"), &[cout], Init::Zeros, rng));
        Self { weight, bias, geom }
    }

    pub fn forward(&self, s: &mut Session, x: &Tensor) -> Result<Tensor> {
        let w = s.param(self.weight);
        let b = self.bias.map(|b| s.param(b));
        Ok(x.conv2d(&w, b.as_ref(), self.geom)?)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: BnId,
    pub eps: Scalar,
}

impl BatchNorm {
    pub(crate) fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, c: usize, eps: Scalar) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), &[c], Init::Ones, rng),
            beta: store.add(format!("{name}.beta"), &[c], Init::Zeros, rng),
            stats: store.add_stats(name.to_string(), c),
            eps,
        }
    }

    /// Batch statistics in train mode (recorded in the session), running
    /// statistics in eval mode.
    pub fn forward(&self, s: &mut Session, x: &Tensor) -> Result<Tensor> {
        let g = s.param(self.gamma);
        let b = s.param(self.beta);
        let mode = match s.mode() {
            Mode::Train => NormMode::Batch,
            Mode::Eval => NormMode::Running,
        };
        let r = s.store().running(self.stats);
        let (y, stats) = x.batch_norm2d(&g, &b, (&r.mean, &r.var), self.eps, mode)?;
        if let Some(st) = stats {
            s.record_bn(self.stats, st);
        }
        Ok(y)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub(crate) fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        din: usize,
        dout: usize,
        bias: bool,
    ) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), &[dout, din], Init::FanInUniform(din), rng),
            bias: bias.then(|| store.add(format!("{name}.bias"), &[dout], Init::FanInUniform(din), rng)),
        }
    }

    pub fn forward(&self, s: &mut Session, x: &Tensor) -> Result<Tensor> {
        let w = s.param(self.weight);
        let b = self.bias.map(|b| s.param(b));
        Ok(x.linear(&w, b.as_ref())?)
    }
}

/// Squeeze-and-excitation gate: `x · sigmoid(fc2(relu(fc1(avgpool(x)))))`.
#[derive(Clone, Debug)]
pub struct SeBlock {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl SeBlock {
    pub(crate) fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, c: usize, r: usize) -> Self {
        let hidden = c / r;
        Self {
            fc1: Linear::new(store, rng, &format!("{name}.fc1"), c, hidden, true),
            fc2: Linear::new(store, rng, &format!("{name}.fc2"), hidden, c, true),
        }
    }

    /// The `[B,C,1,1]` channel scales.
    pub fn gate(&self, s: &mut Session, x: &Tensor) -> Result<Tensor> {
        let (b, c) = (x.shape()[0], x.shape()[1]);
        let z = x.adaptive_avg_pool2d(1, 1)?.reshape(&[b, c])?;
        let h = self.fc1.forward(s, &z)?.relu();
        let g = self.fc2.forward(s, &h)?.sigmoid();
        Ok(g.reshape(&[b, c, 1, 1])?)
    }

    pub fn forward(&self, s: &mut Session, x: &Tensor) -> Result<Tensor> {
        let g = self.gate(s, x)?;
        Ok(x.mul(&g)?)
    }
}
