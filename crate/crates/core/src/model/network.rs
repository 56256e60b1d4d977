use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::bottleneck::{BlockSpec, Bottleneck};
use super::config::{HeadKind, NetworkConfig};
use super::layers::{BatchNorm, Conv, Linear};
use super::params::{Init, ParamId, ParamStore, Session};
use super::{ModelError, Result};
use crate::autograd::{Conv2dGeom, Scalar, Tensor};
use crate::Mode;

/// Cosines between L2-normalised feature rows `[B,D]` and class weight rows
/// `[K,D]`. With targets, the true-class cosine is replaced by the annealed
/// margin cosine for margin `m` (`m = 1` leaves the cosines untouched).
pub fn angle_linear(
    features: &Tensor,
    weight: &Tensor,
    margin: Option<(&[usize], u32, Scalar)>,
) -> Result<Tensor> {
    let x = features.l2_normalize_rows()?;
    let w = weight.l2_normalize_rows()?;
    let cos = x.linear(&w, None)?;
    match margin {
        Some((targets, m, lambda)) => Ok(cos.angular_margin(targets, m, lambda)?),
        None => Ok(cos),
    }
}

#[derive(Clone, Debug)]
enum Head {
    Angle(ParamId),
    Linear(Linear),
}

/// Result of one forward pass.
pub struct ForwardOutput {
    /// `[B,K]` cosines (angle head) or raw logits (linear head).
    pub logits: Tensor,
    /// `[B,C]` pooled embedding.
    pub embedding: Tensor,
    /// `(stage, [C,H,W])` after the stem, each layer and the pooling.
    pub trace: Vec<(String, Vec<usize>)>,
}

impl ForwardOutput {
    /// Bonafide-vs-spoof score per row: higher means more bonafide.
    pub fn scores(&self) -> Vec<Scalar> {
        let k = self.logits.shape()[1];
        self.logits
            .data()
            .chunks(k)
            .map(|r| r[crate::Label::Bonafide.index()] - r[crate::Label::Spoof.index()])
            .collect()
    }

    pub fn predictions(&self) -> Vec<usize> {
        let k = self.logits.shape()[1];
        self.logits
            .data()
            .chunks(k)
            .map(|r| {
                r.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap_or(0)
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    cfg: NetworkConfig,
    pub store: ParamStore,
    stem: Conv,
    stem_bn: BatchNorm,
    layers: Vec<Vec<Bottleneck>>,
    head: Head,
}

pub fn build_network(cfg: &NetworkConfig) -> Result<Network> {
    Network::new(cfg)
}

impl Network {
    pub fn new(cfg: &NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let mut store = ParamStore::default();
        let eps = cfg.bn_eps;
        let stem = Conv::new(&mut store, &mut rng, "stem.conv", 1, cfg.stem_channels, 1, Conv2dGeom::default(), false);
        let stem_bn = BatchNorm::new(&mut store, &mut rng, "stem.bn", cfg.stem_channels, eps);
        let mut layers = Vec::with_capacity(cfg.widths.len());
        let mut cin = cfg.stem_channels;
        for (li, ((&w, &stride), kinds)) in cfg.widths.iter().zip(&cfg.strides).zip(&cfg.blocks).enumerate() {
            let mut blocks = Vec::with_capacity(kinds.len());
            for (bi, &kind) in kinds.iter().enumerate() {
                let spec = BlockSpec {
                    kind,
                    in_channels: cin,
                    width: w,
                    stride: if bi == 0 { stride } else { 1 },
                    n_groups: cfg.n_groups,
                    se_reduction: cfg.se_reduction,
                    conv_dilation: cfg.conv_dilation,
                };
                blocks.push(Bottleneck::new(&mut store, &mut rng, &format!("layer{}.{}", li + 1, bi), spec, eps));
                cin = w;
            }
            layers.push(blocks);
        }
        let head = match cfg.head.kind {
            HeadKind::AngleLinear => Head::Angle(store.add(
                "head.weight".into(),
                &[cfg.num_classes, cin],
                Init::Normal(1.0),
                &mut rng,
            )),
            HeadKind::Linear => Head::Linear(Linear::new(&mut store, &mut rng, "head", cin, cfg.num_classes, true)),
        };
        Ok(Self {
            cfg: cfg.clone(),
            store,
            stem,
            stem_bn,
            layers,
            head,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// `(name, element count)` for every parameter in build order.
    pub fn param_report(&self) -> Vec<(String, usize)> {
        self.store.params().iter().map(|p| (p.name.clone(), p.data.len())).collect()
    }

    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        let want = [1, self.cfg.input_rows, self.cfg.input_cols];
        if s.len() != 4 || s[0] == 0 || s[1..] != want {
            return Err(ModelError::InputShape {
                expected: format!("[B,1,{},{}]", want[1], want[2]),
                got: s.to_vec(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, s: &mut Session, x: &Tensor) -> Result<ForwardOutput> {
        self.check_input(x)?;
        let mut trace = Vec::new();
        let chw = |t: &Tensor| t.shape()[1..].to_vec();
        let h = self.stem.forward(s, x)?;
        let mut h = self.stem_bn.forward(s, &h)?.relu();
        trace.push(("stem".to_string(), chw(&h)));
        for (li, blocks) in self.layers.iter().enumerate() {
            for b in blocks {
                h = b.forward(s, &h)?;
            }
            trace.push((format!("layer{}", li + 1), chw(&h)));
        }
        let pooled = h.adaptive_avg_pool2d(1, 1)?;
        trace.push(("avgpool".to_string(), chw(&pooled)));
        let (b, c) = (pooled.shape()[0], pooled.shape()[1]);
        let embedding = pooled.reshape(&[b, c])?;
        let logits = match &self.head {
            Head::Angle(w) => {
                let w = s.param(*w);
                angle_linear(&embedding, &w, None)?
            }
            Head::Linear(l) => l.forward(s, &embedding)?,
        };
        Ok(ForwardOutput {
            logits,
            embedding,
            trace,
        })
    }

    /// Eval-mode forward without gradient tracking.
    pub fn infer(&self, x: &Tensor) -> Result<ForwardOutput> {
        let mut s = Session::new(&self.store, Mode::Eval);
        self.forward(&mut s, x)
    }

    /// Training loss for logits produced by [`Network::forward`].
    pub fn loss(&self, out: &ForwardOutput, targets: &[usize], step: u64) -> Result<Tensor> {
        let logits = match self.head {
            Head::Angle(_) => {
                let h = &self.cfg.head;
                out.logits
                    .angular_margin(targets, h.margin, h.lambda_at(step))?
                    .scale(h.scale)
            }
            Head::Linear(_) => out.logits.clone(),
        };
        Ok(logits.cross_entropy(targets)?)
    }

    /// Rebuild from a config and replace every parameter and running
    /// statistic with the given values.
    pub(crate) fn with_state(
        cfg: &NetworkConfig,
        params: Vec<(String, Vec<usize>, Vec<Scalar>)>,
        stats: Vec<(String, Vec<Scalar>, Vec<Scalar>)>,
    ) -> Result<Self> {
        let mut net = Network::new(cfg)?;
        let np = net.store.params().len();
        if params.len() != np {
            return Err(ModelError::Mismatch(format!("expected {np} parameters, found {}", params.len())));
        }
        for (slot, (name, shape, data)) in net.store.params_mut().iter_mut().zip(params) {
            if slot.name != name || slot.shape != shape {
                return Err(ModelError::Mismatch(format!(
                    "parameter {name} {shape:?} does not match {} {:?}",
                    slot.name, slot.shape
                )));
            }
            slot.data = data;
        }
        let ns = net.store.stats().len();
        if stats.len() != ns {
            return Err(ModelError::Mismatch(format!("expected {ns} norm layers, found {}", stats.len())));
        }
        for (slot, (name, mean, var)) in net.store.stats_mut().iter_mut().zip(stats) {
            if slot.name != name || slot.mean.len() != mean.len() || slot.var.len() != var.len() {
                return Err(ModelError::Mismatch(format!("running stats {name} do not match {}", slot.name)));
            }
            slot.mean = mean;
            slot.var = var;
        }
        Ok(net)
    }
}
