use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AugmentError, Result};
use crate::dsp::FeatureBlock;
use crate::{Label, Mode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpecmixConfig {
    /// Gate threshold: a batch is mixed when its uniform draw exceeds it.
    pub p_hyper: f64,
    pub max_span: usize,
    pub rng_seed: u64,
}

impl Default for SpecmixConfig {
    fn default() -> Self {
        Self {
            p_hyper: 0.5,
            max_span: 10,
            rng_seed: 0,
        }
    }
}

impl SpecmixConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_hyper) {
            return Err(AugmentError::InvalidConfig(format!(
                "p_hyper must lie in [0, 1], got {}",
                self.p_hyper
            )));
        }
        if !(1..=crate::dsp::F0_BINS).contains(&self.max_span) {
            return Err(AugmentError::InvalidConfig(format!(
                "max_span must lie in [1, {}], got {}",
                crate::dsp::F0_BINS,
                self.max_span
            )));
        }
        Ok(())
    }

    /// Independent stream for batch `index` under this config's seed.
    pub fn rng_for_batch(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(index);
        rng
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpecmixReport {
    pub applied: bool,
    /// The gate draw; absent in eval mode.
    pub p: Option<f64>,
    pub band_start: usize,
    pub band_span: usize,
    pub donor_permutation: Vec<usize>,
}

/// A concrete cut-and-paste: rows `[start, start+span)` of every sample `b`
/// are replaced by the same rows of sample `donors[b]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpecmixPlan {
    pub band_start: usize,
    pub band_span: usize,
    pub donors: Vec<usize>,
}

fn check_batch(batch: &[FeatureBlock], labels: &[Label]) -> Result<()> {
    let first = batch
        .first()
        .ok_or_else(|| AugmentError::Shape("empty batch".into()))?;
    if labels.len() != batch.len() {
        return Err(AugmentError::Shape(format!(
            "{} blocks but {} labels",
            batch.len(),
            labels.len()
        )));
    }
    if batch
        .iter()
        .any(|b| b.rows() != first.rows() || b.cols() != first.cols())
    {
        return Err(AugmentError::Shape("blocks in a batch differ in shape".into()));
    }
    Ok(())
}

/// Apply an explicit plan. Cells outside the band are copied bit for bit.
pub fn apply_plan(batch: &[FeatureBlock], plan: &SpecmixPlan) -> Result<Vec<FeatureBlock>> {
    let rows = batch.first().map_or(0, FeatureBlock::rows);
    if plan.band_span == 0 || plan.band_start + plan.band_span > rows {
        return Err(AugmentError::Shape(format!(
            "band [{}, {}) outside {rows} rows",
            plan.band_start,
            plan.band_start + plan.band_span
        )));
    }
    if plan.donors.len() != batch.len() || plan.donors.iter().any(|&d| d >= batch.len()) {
        return Err(AugmentError::Shape("donor list does not index the batch".into()));
    }
    let mut out = batch.to_vec();
    for (b, &donor) in plan.donors.iter().enumerate() {
        for r in plan.band_start..plan.band_start + plan.band_span {
            out[b].row_mut(r).copy_from_slice(batch[donor].row(r));
        }
    }
    Ok(out)
}

/// Uniformly random permutation of `0..n` without fixed points (`n ≥ 2`).
pub fn random_derangement<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    debug_assert!(n >= 2);
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            return perm;
        }
    }
}

/// Random Specmix over one batch.
///
/// Train mode draws `p ~ U(0,1)` once; when `p > p_hyper` a band of
/// `1..=max_span` frequency rows is cut from a donor sample and pasted into
/// every sample. Labels are never mixed. Eval mode is the identity.
pub fn random_specmix<R: Rng + ?Sized>(
    batch: &[FeatureBlock],
    labels: &[Label],
    cfg: &SpecmixConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<(Vec<FeatureBlock>, Vec<Label>, SpecmixReport)> {
    cfg.validate()?;
    check_batch(batch, labels)?;
    let identity = |p| {
        Ok((
            batch.to_vec(),
            labels.to_vec(),
            SpecmixReport {
                p,
                ..Default::default()
            },
        ))
    };
    if mode == Mode::Eval {
        return identity(None);
    }
    let p: f64 = rng.random();
    if p <= cfg.p_hyper || batch.len() < 2 {
        return identity(Some(p));
    }
    let rows = batch[0].rows();
    let span = rng.random_range(1..=cfg.max_span.min(rows));
    let start = rng.random_range(0..=rows - span);
    let donors = random_derangement(batch.len(), rng);
    let plan = SpecmixPlan {
        band_start: start,
        band_span: span,
        donors,
    };
    let out = apply_plan(batch, &plan)?;
    Ok((
        out,
        labels.to_vec(),
        SpecmixReport {
            applied: true,
            p: Some(p),
            band_start: start,
            band_span: span,
            donor_permutation: plan.donors,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(tag: f32) -> FeatureBlock {
        let values = (0..45 * 8).map(|i| tag * 1000.0 + i as f32).collect();
        FeatureBlock::new(45, 8, values).unwrap()
    }

    #[test]
    fn forced_band_swaps_rows() {
        let batch = vec![block(1.0), block(2.0)];
        let plan = SpecmixPlan {
            band_start: 5,
            band_span: 3,
            donors: vec![1, 0],
        };
        let out = apply_plan(&batch, &plan).unwrap();
        for r in 0..45 {
            if (5..8).contains(&r) {
                assert_eq!(out[0].row(r), batch[1].row(r));
                assert_eq!(out[1].row(r), batch[0].row(r));
            } else {
                assert_eq!(out[0].row(r), batch[0].row(r));
                assert_eq!(out[1].row(r), batch[1].row(r));
            }
        }
    }

    #[test]
    fn single_sample_batch_has_no_donor() {
        let cfg = SpecmixConfig {
            p_hyper: 0.0,
            ..Default::default()
        };
        let batch = vec![block(3.0)];
        let (out, labels, rep) =
            random_specmix(&batch, &[Label::Spoof], &cfg, Mode::Train, &mut cfg.rng_for_batch(0)).unwrap();
        assert!(!rep.applied);
        assert_eq!(out, batch);
        assert_eq!(labels, vec![Label::Spoof]);
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            SpecmixConfig { p_hyper: 1.5, ..Default::default() },
            SpecmixConfig { p_hyper: -0.1, ..Default::default() },
            SpecmixConfig { max_span: 0, ..Default::default() },
            SpecmixConfig { max_span: 46, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn derangement_has_no_fixed_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 2..20 {
            let p = random_derangement(n, &mut rng);
            let mut sorted = p.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..n).collect::<Vec<_>>());
            assert!(p.iter().enumerate().all(|(i, &v)| i != v));
        }
    }

    #[test]
    fn batch_streams_are_distinct_and_reproducible() {
        let cfg = SpecmixConfig::default();
        let a: f64 = cfg.rng_for_batch(3).random();
        let b: f64 = cfg.rng_for_batch(3).random();
        let c: f64 = cfg.rng_for_batch(4).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
