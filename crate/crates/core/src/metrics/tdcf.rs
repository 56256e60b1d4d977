use serde::{Deserialize, Serialize};

use super::eer::error_rates;
use super::{split_by_class, MetricError, Result, TrialScore};

/// Tandem cost model. The CM/ASV costs and priors default to the ASVspoof
/// 2019 LA evaluation constants; the three ASV error rates describe a fixed
/// ASV operating point and must come from the ASV system in use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TdcfCosts {
    pub p_spoof: f64,
    /// Share of non-spoof trials that are target speakers.
    pub p_target_of_nonspoof: f64,
    pub c_miss_asv: f64,
    pub c_fa_asv: f64,
    pub c_miss_cm: f64,
    pub c_fa_cm: f64,
    pub p_miss_asv: f64,
    pub p_fa_asv: f64,
    pub p_miss_spoof_asv: f64,
}

impl Default for TdcfCosts {
    fn default() -> Self {
        Self {
            p_spoof: 0.05,
            p_target_of_nonspoof: 0.99,
            c_miss_asv: 1.0,
            c_fa_asv: 10.0,
            c_miss_cm: 1.0,
            c_fa_cm: 10.0,
            p_miss_asv: 0.0242,
            p_fa_asv: 0.0242,
            p_miss_spoof_asv: 0.3,
        }
    }
}

impl TdcfCosts {
    /// `(C1, C2)` such that `tDCF = C1·Pmiss_cm + C2·Pfa_cm`.
    pub fn coefficients(&self) -> Result<(f64, f64)> {
        let probs = [
            ("p_spoof", self.p_spoof),
            ("p_target_of_nonspoof", self.p_target_of_nonspoof),
            ("p_miss_asv", self.p_miss_asv),
            ("p_fa_asv", self.p_fa_asv),
            ("p_miss_spoof_asv", self.p_miss_spoof_asv),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(MetricError::Costs(format!("{name} = {p} is not a probability")));
            }
        }
        let costs = [
            ("c_miss_asv", self.c_miss_asv),
            ("c_fa_asv", self.c_fa_asv),
            ("c_miss_cm", self.c_miss_cm),
            ("c_fa_cm", self.c_fa_cm),
        ];
        for (name, c) in costs {
            if !(c > 0.0 && c.is_finite()) {
                return Err(MetricError::Costs(format!("{name} = {c} must be positive")));
            }
        }
        let p_tar = (1.0 - self.p_spoof) * self.p_target_of_nonspoof;
        let p_non = (1.0 - self.p_spoof) * (1.0 - self.p_target_of_nonspoof);
        let c1 = p_tar * (self.c_miss_cm - self.c_miss_asv * self.p_miss_asv)
            - p_non * self.c_fa_asv * self.p_fa_asv;
        let c2 = self.c_fa_cm * self.p_spoof * (1.0 - self.p_miss_spoof_asv);
        if c1 <= 0.0 || c2 <= 0.0 {
            return Err(MetricError::Costs(format!(
                "degenerate normaliser: C1 = {c1}, C2 = {c2}"
            )));
        }
        Ok((c1, c2))
    }
}

/// Normalised tandem cost at every CM threshold of the sweep:
/// `(threshold, tDCF_norm)`.
pub fn tdcf_curve(scores: &[TrialScore], costs: &TdcfCosts) -> Result<Vec<(f64, f64)>> {
    let (c1, c2) = costs.coefficients()?;
    let (bona, spoof) = split_by_class(scores)?;
    let norm = c1.min(c2);
    Ok(error_rates(&bona, &spoof)
        .into_iter()
        .map(|(t, p_miss, p_fa)| (t, (c1 * p_miss + c2 * p_fa) / norm))
        .collect())
}

/// Minimum normalised t-DCF over CM thresholds.
pub fn compute_min_tdcf(scores: &[TrialScore], costs: &TdcfCosts) -> Result<f64> {
    Ok(tdcf_curve(scores, costs)?
        .into_iter()
        .map(|(_, c)| c)
        .fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::labelled;

    #[test]
    fn perfect_separation_costs_nothing() {
        let t = labelled(&[0.9, 0.7, 0.8], &[0.1, 0.3]);
        assert_eq!(compute_min_tdcf(&t, &TdcfCosts::default()).unwrap(), 0.0);
    }

    #[test]
    fn constant_scores_use_trivial_operating_points() {
        let costs = TdcfCosts::default();
        let (c1, c2) = costs.coefficients().unwrap();
        let t = labelled(&[0.4; 5], &[0.4; 7]);
        // accept all: C2/min, reject all: C1/min
        let expect = c2.min(c1) / c1.min(c2);
        assert_eq!(compute_min_tdcf(&t, &costs).unwrap(), expect);
        assert_eq!(expect, 1.0);
    }

    #[test]
    fn degenerate_costs_rejected() {
        let costs = TdcfCosts {
            p_miss_spoof_asv: 1.0,
            ..Default::default()
        };
        assert!(matches!(costs.coefficients(), Err(MetricError::Costs(_))));
        let costs = TdcfCosts {
            c_fa_cm: 0.0,
            ..Default::default()
        };
        assert!(costs.coefficients().is_err());
        let costs = TdcfCosts {
            p_spoof: 1.5,
            ..Default::default()
        };
        assert!(costs.coefficients().is_err());
    }

    #[test]
    fn more_separation_never_costs_more() {
        let costs = TdcfCosts::default();
        let bona = [0.2, 0.5, 0.6, 0.9, 0.35];
        let spoof = [0.1, 0.4, 0.55, 0.3, 0.65, 0.05];
        let mut prev = f64::INFINITY;
        for shift in 0..8 {
            let b: Vec<f64> = bona.iter().map(|v| v + 0.1 * shift as f64).collect();
            let c = compute_min_tdcf(&labelled(&b, &spoof), &costs).unwrap();
            assert!(c <= prev + 1e-15);
            prev = c;
        }
        assert_eq!(prev, 0.0);
    }
}
