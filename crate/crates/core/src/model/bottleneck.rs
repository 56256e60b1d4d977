use rand::Rng;

use super::config::BlockKind;
use super::layers::{BatchNorm, Conv, SeBlock};
use super::mpif::{scale_forward, split_channels, stage_scale_forward, MpifModule};
use super::params::{ParamStore, Session};
use super::Result;
use crate::autograd::{Conv2dGeom, Scalar, Tensor};

#[derive(Clone, Debug)]
enum Transform {
    Conv(Conv),
    Mpif(MpifModule),
}

#[derive(Clone, Debug)]
struct GroupTransform {
    op: Transform,
    bn: BatchNorm,
}

impl GroupTransform {
    fn forward(&self, s: &mut Session, x: &Tensor) -> Result<Tensor> {
        let y = match &self.op {
            Transform::Conv(c) => c.forward(s, x)?,
            Transform::Mpif(m) => m.forward(s, x)?,
        };
        Ok(self.bn.forward(s, &y)?.relu())
    }
}

/// Shape of a bottleneck, independent of its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub in_channels: usize,
    pub width: usize,
    pub stride: usize,
    pub n_groups: usize,
    pub se_reduction: usize,
    pub conv_dilation: usize,
}

/// reduce 1×1 → split → scale recurrence → concat → expand 1×1 → SE →
/// add shortcut → ReLU.
#[derive(Clone, Debug)]
pub struct Bottleneck {
    pub spec: BlockSpec,
    reduce: Conv,
    reduce_bn: BatchNorm,
    transforms: Vec<GroupTransform>,
    expand: Conv,
    expand_bn: BatchNorm,
    se: SeBlock,
    shortcut: Option<(Conv, BatchNorm)>,
}

impl Bottleneck {
    pub(crate) fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        spec: BlockSpec,
        eps: Scalar,
    ) -> Self {
        let w = spec.width;
        let p = w / spec.n_groups;
        let reduce = Conv::new(store, rng, &format!("{name}.reduce"), spec.in_channels, w, 1, Conv2dGeom::default(), false);
        let reduce_bn = BatchNorm::new(store, rng, &format!("{name}.reduce_bn"), w, eps);
        let transforms = (2..=spec.n_groups)
            .map(|g| {
                let gname = format!("{name}.group{g}");
                let op = match spec.kind {
                    BlockKind::Conv => {
                        let d = spec.conv_dilation;
                        Transform::Conv(Conv::new(
                            store,
                            rng,
                            &format!("{gname}.conv"),
                            p,
                            p,
                            3,
                            Conv2dGeom::new(spec.stride, d, d),
                            false,
                        ))
                    }
                    BlockKind::Mpif => Transform::Mpif(MpifModule::new(store, rng, &format!("{gname}.mpif"), p, spec.stride)),
                };
                let bn = BatchNorm::new(store, rng, &format!("{gname}.bn"), p, eps);
                GroupTransform { op, bn }
            })
            .collect();
        let expand = Conv::new(store, rng, &format!("{name}.expand"), w, w, 1, Conv2dGeom::default(), false);
        let expand_bn = BatchNorm::new(store, rng, &format!("{name}.expand_bn"), w, eps);
        let se = SeBlock::new(store, rng, &format!("{name}.se"), w, spec.se_reduction);
        let shortcut = (spec.stride != 1 || spec.in_channels != w).then(|| {
            (
                Conv::new(
                    store,
                    rng,
                    &format!("{name}.shortcut"),
                    spec.in_channels,
                    w,
                    1,
                    Conv2dGeom::new(spec.stride, 0, 1),
                    false,
                ),
                BatchNorm::new(store, rng, &format!("{name}.shortcut_bn"), w, eps),
            )
        });
        Self {
            spec,
            reduce,
            reduce_bn,
            transforms,
            expand,
            expand_bn,
            se,
            shortcut,
        }
    }

    pub fn forward(&self, s: &mut Session, x: &Tensor) -> Result<Tensor> {
        let h = self.reduce.forward(s, x)?;
        let h = self.reduce_bn.forward(s, &h)?.relu();
        let groups = split_channels(&h, self.spec.n_groups)?;
        let ys = if self.spec.stride == 1 {
            scale_forward(&groups, |i, t| self.transforms[i - 1].forward(s, t))?
        } else {
            let stride = self.spec.stride;
            stage_scale_forward(
                &groups,
                |t| Ok(t.avg_pool2d(3, stride, 1)?),
                |i, t| self.transforms[i - 1].forward(s, t),
            )?
        };
        let cat = Tensor::concat(&ys)?;
        let out = self.expand.forward(s, &cat)?;
        let out = self.expand_bn.forward(s, &out)?;
        let out = self.se.forward(s, &out)?;
        let res = match &self.shortcut {
            Some((conv, bn)) => {
                let r = conv.forward(s, x)?;
                bn.forward(s, &r)?
            }
            None => x.clone(),
        };
        Ok(out.add(&res)?.relu())
    }
}
