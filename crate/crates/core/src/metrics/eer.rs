use super::{split_by_class, Result, TrialScore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eer {
    pub eer: f64,
    pub threshold: f64,
}

/// Operating points at every distinct score and at `+inf`:
/// `(threshold, FRR, FAR)` with FRR = P(bonafide < t), FAR = P(spoof >= t).
pub fn error_rates(bona: &[f64], spoof: &[f64]) -> Vec<(f64, f64, f64)> {
    let mut thresholds: Vec<f64> = bona.iter().chain(spoof).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);
    let (nb, ns) = (bona.len() as f64, spoof.len() as f64);
    thresholds
        .into_iter()
        .map(|t| {
            let below_b = bona.partition_point(|&s| s < t);
            let below_s = spoof.partition_point(|&s| s < t);
            (t, below_b as f64 / nb, (spoof.len() - below_s) as f64 / ns)
        })
        .collect()
}

/// Equal error rate by sweeping all distinct scores and linearly
/// interpolating the FAR/FRR crossing between neighbouring operating points.
pub fn compute_eer(scores: &[TrialScore]) -> Result<Eer> {
    let (bona, spoof) = split_by_class(scores)?;
    let pts = error_rates(&bona, &spoof);
    // first point is (min score, 0, 1) and the last (+inf, 1, 0), so the
    // sign of FRR - FAR flips somewhere in between
    let k = pts
        .iter()
        .position(|&(_, frr, far)| frr >= far)
        .expect("FRR reaches 1 at +inf");
    let (t1, frr1, far1) = pts[k];
    let d1 = frr1 - far1;
    if d1 == 0.0 || k == 0 {
        return Ok(Eer {
            eer: far1,
            threshold: t1,
        });
    }
    let (t0, frr0, far0) = pts[k - 1];
    let d0 = frr0 - far0;
    let alpha = -d0 / (d1 - d0);
    let eer = far0 + alpha * (far1 - far0);
    let threshold = if t1.is_finite() {
        t0 + alpha * (t1 - t0)
    } else {
        t0
    };
    Ok(Eer { eer, threshold })
}
