//! Mini-batch training with Adam and best-on-dev model selection.

mod adam;
mod runlog;

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{apply_noise, random_specmix, AugmentError, NoiseConfig, NoiseMode, SpecmixConfig};
use crate::autograd::{Tensor, TensorError};
use crate::dsp::{extract_features, DspError, FeatureBlock, Waveform};
use crate::io::RunConfig;
use crate::metrics::{compute_eer, compute_min_tdcf, MetricError, TrialScore};
use crate::model::{encode_checkpoint, Checkpoint, ModelError, Network, Session};
use crate::{derive_seed, Label, Mode};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use runlog::{EpochRecord, RunLog, SeedRecord};

pub const BEST_CHECKPOINT: &str = "best.mpif";
pub const LAST_CHECKPOINT: &str = "last.mpif";
pub const RUNLOG_FILE: &str = "runlog.jsonl";
pub const SPECMIX_LOG_FILE: &str = "specmix.jsonl";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("bad training data: {0}")]
    Data(String),
    #[error("non-finite gradient in parameter {param} at {index}: {value}")]
    NonFiniteGradient { param: usize, index: usize, value: f64 },
    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Divergence { epoch: usize, step: u64, detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, TrainError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Root seed; every other seed is derived from it.
    pub seed: u64,
    pub eval_batch_size: usize,
    pub specmix: SpecmixConfig,
    pub noise: NoiseConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            epochs: 32,
            batch_size: 16,
            learning_rate: a.learning_rate,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            weight_decay: a.weight_decay,
            seed: 0,
            eval_batch_size: 16,
            specmix: SpecmixConfig::default(),
            noise: NoiseConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        if self.epochs == 0 || self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(TrainError::Config("epochs and batch sizes must be at least 1".into()));
        }
        self.specmix.validate()?;
        self.noise.validate()?;
        Ok(())
    }

    /// Seeds actually used by a run, fanned out from the root seed.
    pub fn seeds(&self) -> SeedRecord {
        let root = self.seed;
        SeedRecord {
            root,
            shuffle: derive_seed(root, &[1]),
            specmix: derive_seed(root, &[2, self.specmix.rng_seed]),
            noise: derive_seed(root, &[3, self.noise.rng_seed]),
        }
    }
}

/// One labelled utterance: clean features and, when waveform noise is
/// enabled, the audio it came from.
#[derive(Clone, Debug)]
pub struct Utterance {
    pub id: String,
    pub label: Label,
    pub features: FeatureBlock,
    pub audio: Option<Waveform>,
}

/// `[B,1,rows,cols]` tensor from equally sized feature blocks.
pub fn batch_tensor(blocks: &[FeatureBlock]) -> Result<Tensor> {
    let first = blocks.first().ok_or_else(|| TrainError::Data("empty batch".into()))?;
    let (r, c) = (first.rows(), first.cols());
    let mut data = Vec::with_capacity(blocks.len() * r * c);
    for b in blocks {
        if (b.rows(), b.cols()) != (r, c) {
            return Err(TrainError::Data(format!(
                "mixed block sizes {}x{} and {r}x{c}",
                b.rows(),
                b.cols()
            )));
        }
        data.extend(b.values().iter().map(|&v| v as f64));
    }
    Ok(Tensor::new(data, &[blocks.len(), 1, r, c]).map_err(ModelError::from)?)
}

/// Eval-mode scores (higher = more bonafide) for each block, in order.
/// Chunks are scored in parallel; eval-mode outputs do not depend on how
/// samples are grouped.
pub fn score_blocks(net: &Network, blocks: &[&FeatureBlock], batch: usize) -> Result<Vec<f64>> {
    let chunks: Vec<Vec<f64>> = blocks
        .par_chunks(batch.max(1))
        .map(|chunk| {
            let owned: Vec<FeatureBlock> = chunk.iter().map(|b| (*b).clone()).collect();
            let x = batch_tensor(&owned)?;
            Ok(net.infer(&x)?.scores())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

pub fn score_utterances(net: &Network, items: &[Utterance], batch: usize) -> Result<Vec<TrialScore>> {
    let blocks: Vec<&FeatureBlock> = items.iter().map(|u| &u.features).collect();
    let scores = score_blocks(net, &blocks, batch)?;
    Ok(items
        .iter()
        .zip(scores)
        .map(|(u, s)| TrialScore::new(u.id.clone(), s, Some(u.label)))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub correct: usize,
    pub batch: usize,
}

/// A blown-up step can zero every activation; the normalised embedding
/// is then 0/0 and the loss undefined, which counts as divergence.
fn undefined_loss(e: TrainError, epoch: usize, step: u64) -> TrainError {
    match e {
        TrainError::Model(ModelError::Tensor(TensorError::ZeroNorm(op))) => TrainError::Divergence {
            epoch,
            step,
            detail: format!("loss undefined, zero-norm embedding in {op}"),
        },
        other => other,
    }
}

/// Network plus optimiser state; one call to [`Trainer::step`] is one
/// parameter update.
pub struct Trainer {
    pub net: Network,
    pub adam: AdamConfig,
    pub state: AdamState,
    pub step: u64,
}

impl Trainer {
    pub fn new(net: Network, adam: AdamConfig) -> Result<Self> {
        adam.validate()?;
        let state = AdamState::new(net.store.params().iter().map(|p| p.data.as_slice()));
        Ok(Self {
            net,
            adam,
            state,
            step: 0,
        })
    }

    pub fn step(&mut self, blocks: &[FeatureBlock], labels: &[Label]) -> Result<StepStats> {
        let x = batch_tensor(blocks)?;
        let targets: Vec<usize> = labels.iter().map(|l| l.index()).collect();
        let (loss, correct, grads, bn) = {
            let mut s = Session::new(&self.net.store, Mode::Train);
            let out = self.net.forward(&mut s, &x).map_err(|e| undefined_loss(e.into(), 0, self.step))?;
            let loss = self
                .net
                .loss(&out, &targets, self.step)
                .map_err(|e| undefined_loss(e.into(), 0, self.step))?;
            let value = loss.item().map_err(ModelError::from)?;
            if !value.is_finite() {
                return Err(TrainError::Divergence {
                    epoch: 0,
                    step: self.step,
                    detail: format!("loss is {value}"),
                });
            }
            loss.backward().map_err(ModelError::from)?;
            let correct = out.predictions().iter().zip(&targets).filter(|(p, t)| p == t).count();
            (value, correct, s.gradients(), s.take_bn_updates())
        };
        let mut params: Vec<&mut [f64]> = self
            .net
            .store
            .params_mut()
            .iter_mut()
            .map(|p| p.data.as_mut_slice())
            .collect();
        adam_step(&mut params, &grads, &mut self.state, &self.adam)?;
        let momentum = self.net.config().bn_momentum;
        self.net.store.apply_bn_updates(&bn, momentum);
        self.step += 1;
        Ok(StepStats {
            loss,
            correct,
            batch: blocks.len(),
        })
    }
}

pub struct TrainOutcome {
    pub log: RunLog,
    pub best: Network,
    pub last: Network,
}

fn write_checkpoint(dir: &Path, name: &str, net: &Network, step: u64) -> Result<()> {
    let path = dir.join(name);
    let bytes = encode_checkpoint(&Checkpoint::from_network(net, step))?;
    // write then rename so a crash never leaves a half-written checkpoint
    let tmp = dir.join(format!("{name}.tmp"));
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, &path).map_err(io_err(&path))
}

fn check_sets(run: &RunConfig, train: &[Utterance], dev: &[Utterance]) -> Result<()> {
    if train.is_empty() {
        return Err(TrainError::Data("training set is empty".into()));
    }
    if dev.is_empty() {
        return Err(TrainError::Data("development set is empty".into()));
    }
    let (r, c) = (run.network.input_rows, run.network.input_cols);
    for u in train.iter().chain(dev) {
        if (u.features.rows(), u.features.cols()) != (r, c) {
            return Err(TrainError::Data(format!(
                "{}: features are {}x{}, network expects {r}x{c}",
                u.id,
                u.features.rows(),
                u.features.cols()
            )));
        }
    }
    if run.train.noise.mode != NoiseMode::None {
        if let Some(u) = train.iter().find(|u| u.audio.is_none()) {
            return Err(TrainError::Data(format!("{}: waveform noise needs audio", u.id)));
        }
    }
    Ok(())
}

/// Train per `run`, selecting the epoch with the lowest dev EER (earliest
/// on ties). With `out_dir`, checkpoints, the run log and the Specmix
/// reports are written there as training progresses; on divergence the
/// last completed epoch's checkpoint is left in place.
pub fn train(run: &RunConfig, train_set: &[Utterance], dev_set: &[Utterance], out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let cfg = &run.train;
    cfg.validate()?;
    check_sets(run, train_set, dev_set)?;
    let seeds = cfg.seeds();
    let snapshot = serde_json::to_value(run).expect("config serialises");
    let specmix = SpecmixConfig {
        rng_seed: seeds.specmix,
        ..cfg.specmix.clone()
    };
    let noise: NoiseConfig = cfg.noise.with_seed(seeds.noise);

    let mut trainer = Trainer::new(Network::new(&run.network)?, cfg.adam())?;
    let mut best: Option<(usize, f64, Network)> = None;
    let mut log = RunLog::default();
    let mut specmix_log = match out_dir {
        Some(d) => {
            fs::create_dir_all(d).map_err(io_err(d))?;
            let p = d.join(SPECMIX_LOG_FILE);
            Some((fs::File::create(&p).map_err(io_err(&p))?, p))
        }
        None => None,
    };
    if let Some(d) = out_dir {
        let p = d.join(RUNLOG_FILE);
        fs::write(&p, "").map_err(io_err(&p))?;
    }

    let mut batch_index: u64 = 0;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seeds.shuffle, &[epoch as u64])));

        let (mut loss_sum, mut correct, mut seen) = (0.0, 0, 0);
        let (mut batches, mut mixed, mut identity) = (0, 0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let clean: Vec<FeatureBlock> = chunk.iter().map(|&i| train_set[i].features.clone()).collect();
            let inputs: Vec<FeatureBlock> = if noise.mode == NoiseMode::None {
                clean.clone()
            } else {
                chunk
                    .par_iter()
                    .map(|&i| {
                        let audio = train_set[i].audio.as_ref().expect("checked above");
                        let n = noise.with_seed(derive_seed(noise.rng_seed, &[epoch as u64, i as u64]));
                        Ok(extract_features(&apply_noise(audio, &n)?, &run.frontend)?)
                    })
                    .collect::<Result<_>>()?
            };
            let labels: Vec<Label> = chunk.iter().map(|&i| train_set[i].label).collect();
            let mut rng = specmix.rng_for_batch(batch_index);
            let (aug, aug_labels, report) = random_specmix(&inputs, &labels, &specmix, Mode::Train, &mut rng)?;
            debug_assert_eq!(aug_labels, labels);
            batches += 1;
            mixed += usize::from(report.applied);
            if aug == clean {
                identity += 1;
            }
            if let Some((f, p)) = specmix_log.as_mut() {
                let line = serde_json::json!({ "epoch": epoch, "batch": batch_index, "report": report });
                writeln!(f, "{line}").map_err(io_err(p))?;
            }
            let stats = trainer.step(&aug, &aug_labels).map_err(|e| match e {
                TrainError::Divergence { step, detail, .. } => TrainError::Divergence { epoch, step, detail },
                other => other,
            })?;
            loss_sum += stats.loss * stats.batch as f64;
            correct += stats.correct;
            seen += stats.batch;
            batch_index += 1;
        }

        let dev_scores = score_utterances(&trainer.net, dev_set, cfg.eval_batch_size)
            .map_err(|e| undefined_loss(e, epoch, trainer.step))?;
        let eer = compute_eer(&dev_scores)?;
        let min_tdcf = compute_min_tdcf(&dev_scores, &run.costs)?;
        if best.as_ref().is_none_or(|(_, b, _)| eer.eer < *b) {
            best = Some((epoch, eer.eer, trainer.net.clone()));
            if let Some(d) = out_dir {
                write_checkpoint(d, BEST_CHECKPOINT, &trainer.net, trainer.step)?;
            }
        }
        if let Some(d) = out_dir {
            write_checkpoint(d, LAST_CHECKPOINT, &trainer.net, trainer.step)?;
        }
        let (best_epoch, best_eer, _) = best.as_ref().expect("set above");
        let record = EpochRecord {
            epoch,
            steps: trainer.step,
            train_loss: loss_sum / seen as f64,
            train_accuracy: correct as f64 / seen as f64,
            dev_eer: eer.eer,
            dev_eer_threshold: eer.threshold,
            dev_min_tdcf: min_tdcf,
            margin_lambda: run.network.head.lambda_at(trainer.step),
            batches,
            specmix_batches: mixed,
            identity_batches: identity,
            best_epoch: *best_epoch,
            best_dev_eer: *best_eer,
            best_checkpoint: BEST_CHECKPOINT.to_string(),
            seeds: seeds.clone(),
            config: snapshot.clone(),
        };
        if let Some(d) = out_dir {
            let p = d.join(RUNLOG_FILE);
            let mut f = fs::OpenOptions::new().append(true).open(&p).map_err(io_err(&p))?;
            writeln!(f, "{}", record.to_json_line()).map_err(io_err(&p))?;
        }
        log.records.push(record);
    }
    let (_, _, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        log,
        best,
        last: trainer.net,
    })
}
