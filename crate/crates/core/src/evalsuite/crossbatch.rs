//! Cross-batch comparability: per-batch significant counts against batch
//! sizes, the R^2 of their linear fit across significance thresholds, and
//! normalized partial areas under that curve.

use serde::{Deserialize, Serialize};

use super::BatchedStatistics;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub batch_id: String,
    pub batch_size: usize,
    pub n_significant: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRelation {
    pub quantile: f64,
    /// Cutoff in the statistic's own units.
    pub threshold: f64,
    pub points: Vec<ScatterPoint>,
    /// `None` when undefined (fewer than 3 batches, or no variance in
    /// sizes or counts).
    pub r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub quantile: f64,
    pub threshold: f64,
    pub prop_significant: f64,
    pub r2: Option<f64>,
    pub max_significant: usize,
    /// The busiest batch has run out of values that can become significant
    /// before the final threshold, so counts have plateaued.
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R2Curve {
    pub points: Vec<CurvePoint>,
}

/// Batches sorted in significance order (most significant first), with the
/// pooled order alongside.
pub(crate) struct Ranked {
    ids: Vec<String>,
    scores: Vec<Vec<f64>>,
    pooled: Vec<f64>,
}

impl Ranked {
    pub(crate) fn new(s: &BatchedStatistics) -> Self {
        let mut ids = Vec::new();
        let mut scores = Vec::new();
        for b in s.batches().iter().filter(|b| !b.values.is_empty()) {
            let mut v: Vec<f64> = b.values.iter().map(|&x| s.significance_score(x)).collect();
            v.sort_by(f64::total_cmp);
            ids.push(b.id.clone());
            scores.push(v);
        }
        let mut pooled: Vec<f64> = scores.iter().flatten().copied().collect();
        pooled.sort_by(f64::total_cmp);
        Ranked { ids, scores, pooled }
    }

    fn n_batches(&self) -> usize {
        self.ids.len()
    }

    /// Score of the `rank`-th most significant pooled value (1-based).
    fn cutoff(&self, rank: usize) -> f64 {
        self.pooled[rank.clamp(1, self.pooled.len()) - 1]
    }

    fn counts(&self, cutoff: f64) -> Vec<usize> {
        self.scores.iter().map(|v| v.partition_point(|&x| x <= cutoff)).collect()
    }
}

fn quantile_rank(q: f64, n: usize) -> usize {
    // guard against q * n landing a hair above an integer
    ((q * n as f64) - 1e-9).ceil().max(1.0) as usize
}

/// Coefficient of determination of an ordinary least-squares line with
/// intercept; `None` if either coordinate has no variance.
pub fn r_squared(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    if xs.len() < 3 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy * sxy / (sxx * syy)).clamp(0.0, 1.0))
}

fn fit(ranked: &Ranked, counts: &[usize]) -> Option<f64> {
    if ranked.n_batches() < 3 {
        return None;
    }
    let xs: Vec<f64> = ranked.scores.iter().map(|v| v.len() as f64).collect();
    let ys: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    r_squared(&xs, &ys)
}

/// Counts significant values per batch at the pooled `threshold_quantile`
/// cutoff and fits counts against batch sizes. Empty batches are skipped.
pub fn linear_relation(s: &BatchedStatistics, threshold_quantile: f64) -> Result<LinearRelation> {
    if !(threshold_quantile > 0.0 && threshold_quantile < 1.0) {
        return Err(Error::invalid(format!(
            "threshold quantile must lie in (0, 1), got {threshold_quantile}"
        )));
    }
    let ranked = Ranked::new(s);
    if ranked.pooled.is_empty() {
        return Err(Error::invalid("no values to threshold"));
    }
    let cutoff = ranked.cutoff(quantile_rank(threshold_quantile, ranked.pooled.len()));
    let counts = ranked.counts(cutoff);
    let points = ranked
        .ids
        .iter()
        .zip(&ranked.scores)
        .zip(&counts)
        .map(|((id, v), &c)| ScatterPoint {
            batch_id: id.clone(),
            batch_size: v.len(),
            n_significant: c,
        })
        .collect();
    Ok(LinearRelation {
        quantile: threshold_quantile,
        threshold: s.score_to_value(cutoff),
        points,
        r2: fit(&ranked, &counts),
    })
}

/// R^2 at pooled quantile thresholds `k / n_thresholds`, `k = 1..=n_thresholds`.
pub fn r2_curve(s: &BatchedStatistics, n_thresholds: usize) -> Result<R2Curve> {
    if n_thresholds == 0 {
        return Err(Error::invalid("need at least one threshold"));
    }
    let ranked = Ranked::new(s);
    let total = ranked.pooled.len();
    if total == 0 {
        return Err(Error::invalid("no values to threshold"));
    }
    let least = *ranked.pooled.last().unwrap();
    let reachable = ranked
        .scores
        .iter()
        .map(|v| v.partition_point(|&x| x < least))
        .max()
        .unwrap_or(0);

    let mut points = Vec::with_capacity(n_thresholds);
    for k in 1..=n_thresholds {
        let rank = (k * total).div_ceil(n_thresholds);
        let cutoff = ranked.cutoff(rank);
        let counts = ranked.counts(cutoff);
        let n_sig: usize = counts.iter().sum();
        let max_significant = counts.iter().copied().max().unwrap_or(0);
        points.push(CurvePoint {
            quantile: k as f64 / n_thresholds as f64,
            threshold: s.score_to_value(cutoff),
            prop_significant: n_sig as f64 / total as f64,
            r2: fit(&ranked, &counts),
            max_significant,
            saturated: n_sig < total && max_significant >= reachable,
        });
    }
    Ok(R2Curve { points })
}

/// Trapezoidal area under the defined part of the curve over `[lo, hi]`,
/// divided by `hi - lo`.
///
/// The curve is interpolated linearly at the bound endpoints and held flat
/// beyond its first and last defined points. At least one defined point
/// must fall inside the bound.
pub fn partial_auc(curve: &R2Curve, bound: (f64, f64)) -> Result<f64> {
    let (lo, hi) = bound;
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(Error::invalid(format!("AUC bound [{lo}, {hi}] must satisfy 0 <= lo < hi <= 1")));
    }
    let pts: Vec<(f64, f64)> = curve
        .points
        .iter()
        .filter_map(|p| p.r2.map(|r| (p.prop_significant, r)))
        .collect();
    if !pts.iter().any(|&(x, _)| x >= lo && x <= hi) {
        return Err(Error::invalid(format!("no defined curve points within [{lo}, {hi}]")));
    }
    let eval = |x: f64| -> f64 {
        let i = pts.partition_point(|&(px, _)| px < x);
        if i == 0 {
            return pts[0].1;
        }
        if i == pts.len() {
            return pts[i - 1].1;
        }
        let (x0, y0) = pts[i - 1];
        let (x1, y1) = pts[i];
        if x1 == x0 {
            y1
        } else {
            y0 + (y1 - y0) * (x - x0) / (x1 - x0)
        }
    };
    let mut xs = vec![lo];
    xs.extend(pts.iter().map(|&(x, _)| x).filter(|&x| x > lo && x < hi));
    xs.push(hi);
    let mut area = 0.0;
    for w in xs.windows(2) {
        area += 0.5 * (eval(w[0]) + eval(w[1])) * (w[1] - w[0]);
    }
    Ok((area / (hi - lo)).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn curve(points: &[(f64, Option<f64>)]) -> R2Curve {
        R2Curve {
            points: points
                .iter()
                .map(|&(x, r2)| CurvePoint {
                    quantile: x,
                    threshold: x,
                    prop_significant: x,
                    r2,
                    max_significant: 0,
                    saturated: false,
                })
                .collect(),
        }
    }

    #[test]
    fn worked_r2_example() {
        let r2 = r_squared(&[10.0, 20.0, 30.0], &[1.0, 2.0, 6.0]).unwrap();
        // 50^2 / (200 * 14)
        assert_abs_diff_eq!(r2, 2500.0 / 2800.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r2, 0.8929, epsilon = 5e-5);
        assert!(r_squared(&[5.0, 5.0, 5.0], &[1.0, 2.0, 3.0]).is_none());
        assert!(r_squared(&[1.0, 2.0], &[1.0, 2.0]).is_none());
    }

    #[test]
    fn auc_of_constants_and_identity() {
        let xs: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let ones = curve(&xs.iter().map(|&x| (x, Some(1.0))).collect::<Vec<_>>());
        let half = curve(&xs.iter().map(|&x| (x, Some(0.5))).collect::<Vec<_>>());
        let ident = curve(&xs.iter().map(|&x| (x, Some(x))).collect::<Vec<_>>());
        for b in [(0.0, 1.0), (0.0, 0.013), (0.3, 0.7)] {
            assert_abs_diff_eq!(partial_auc(&ones, b).unwrap(), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(partial_auc(&half, b).unwrap(), 0.5, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(partial_auc(&ident, (0.0, 1.0)).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(partial_auc(&ident, (0.0, 0.2)).unwrap(), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn auc_skips_undefined_points_and_holds_ends_flat() {
        let c = curve(&[(0.2, Some(0.4)), (0.4, None), (0.6, Some(0.8))]);
        // flat 0.4 on [0, 0.2], ramp to 0.8 on [0.2, 0.6], flat 0.8 after
        let expect = 0.2 * 0.4 + 0.4 * 0.6 + 0.4 * 0.8;
        assert_abs_diff_eq!(partial_auc(&c, (0.0, 1.0)).unwrap(), expect, epsilon = 1e-12);
        assert!(partial_auc(&c, (0.7, 0.9)).is_err());
        assert!(partial_auc(&c, (0.5, 0.5)).is_err());
    }
}
