//! Parameter storage and the per-forward session that turns stored values
//! into tape leaves.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::autograd::{BatchStats, Scalar, Tensor};
use crate::Mode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BnId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<Scalar>,
}

/// Running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub name: String,
    pub mean: Vec<Scalar>,
    pub var: Vec<Scalar>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    stats: Vec<RunningStats>,
}

pub(crate) enum Init {
    Zeros,
    Ones,
    /// He normal with the given fan-in.
    KaimingNormal(usize),
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    FanInUniform(usize),
    Normal(Scalar),
}

impl ParamStore {
    pub(crate) fn add<R: Rng + ?Sized>(&mut self, name: String, shape: &[usize], init: Init, rng: &mut R) -> ParamId {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::KaimingNormal(fan_in) => {
                let d = Normal::new(0.0, (2.0 / fan_in as Scalar).sqrt()).expect("std > 0");
                (0..n).map(|_| d.sample(rng)).collect()
            }
            Init::FanInUniform(fan_in) => {
                let b = 1.0 / (fan_in as Scalar).sqrt();
                let d = Uniform::new_inclusive(-b, b).expect("bound > 0");
                (0..n).map(|_| d.sample(rng)).collect()
            }
            Init::Normal(std) => {
                let d = Normal::new(0.0, std).expect("std > 0");
                (0..n).map(|_| d.sample(rng)).collect()
            }
        };
        self.params.push(Param {
            name,
            shape: shape.to_vec(),
            data,
        });
        ParamId(self.params.len() - 1)
    }

    pub(crate) fn add_stats(&mut self, name: String, channels: usize) -> BnId {
        self.stats.push(RunningStats {
            name,
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        });
        BnId(self.stats.len() - 1)
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn stats(&self) -> &[RunningStats] {
        &self.stats
    }

    pub fn stats_mut(&mut self) -> &mut [RunningStats] {
        &mut self.stats
    }

    pub fn running(&self, id: BnId) -> &RunningStats {
        &self.stats[id.0]
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Fold batch statistics into running estimates:
    /// `running ← (1 − momentum)·running + momentum·batch`.
    pub fn apply_bn_updates(&mut self, updates: &[(BnId, BatchStats)], momentum: Scalar) {
        for (id, s) in updates {
            let r = &mut self.stats[id.0];
            for (m, b) in r.mean.iter_mut().zip(&s.mean) {
                *m = (1.0 - momentum) * *m + momentum * b;
            }
            for (v, b) in r.var.iter_mut().zip(&s.var) {
                *v = (1.0 - momentum) * *v + momentum * b;
            }
        }
    }
}

/// State of one forward pass: parameter leaves (created on first use),
/// the mode, and batch statistics waiting to be folded into the store.
pub struct Session<'a> {
    store: &'a ParamStore,
    leaves: Vec<Option<Tensor>>,
    mode: Mode,
    track_grads: bool,
    bn_updates: Vec<(BnId, BatchStats)>,
}

impl<'a> Session<'a> {
    /// Train mode tracks parameter gradients; eval mode does not.
    pub fn new(store: &'a ParamStore, mode: Mode) -> Self {
        Self::with_grads(store, mode, mode == Mode::Train)
    }

    pub fn with_grads(store: &'a ParamStore, mode: Mode, track_grads: bool) -> Self {
        Self {
            store,
            leaves: vec![None; store.params.len()],
            mode,
            track_grads,
            bn_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Tensor {
        let store = self.store;
        let track = self.track_grads;
        self.leaves[id.0]
            .get_or_insert_with(|| {
                let p = &store.params[id.0];
                if track {
                    Tensor::param(p.data.clone(), &p.shape).expect("stored shape")
                } else {
                    Tensor::new(p.data.clone(), &p.shape).expect("stored shape")
                }
            })
            .clone()
    }

    pub(crate) fn record_bn(&mut self, id: BnId, stats: BatchStats) {
        self.bn_updates.push((id, stats));
    }

    pub fn bn_updates(&self) -> &[(BnId, BatchStats)] {
        &self.bn_updates
    }

    pub fn take_bn_updates(&mut self) -> Vec<(BnId, BatchStats)> {
        std::mem::take(&mut self.bn_updates)
    }

    /// Gradient per parameter (zeros for parameters that were not used or
    /// received no gradient), in store order.
    pub fn gradients(&self) -> Vec<Vec<Scalar>> {
        self.store
            .params
            .iter()
            .zip(&self.leaves)
            .map(|(p, leaf)| {
                leaf.as_ref()
                    .and_then(Tensor::grad)
                    .unwrap_or_else(|| vec![0.0; p.data.len()])
            })
            .collect()
    }

    pub fn gradient(&self, id: ParamId) -> Option<Vec<Scalar>> {
        self.leaves[id.0].as_ref().and_then(Tensor::grad)
    }
}
