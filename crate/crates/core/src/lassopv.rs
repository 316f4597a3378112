//! P-values for the regularization strength at which each predictor first
//! becomes active.
//!
//! Under the null, predictor `i` is replaced by a centered iid normal column
//! of the same variance. Ignoring the chance that the null predictor enters
//! earlier and leaves again before `lambda_i`, its activity at `lambda_i`
//! is decided by its correlation with the residual of the other
//! predictors, which gives
//!
//! ```text
//! p_i = Q(1/2, n lambda_i^2 / (2 sigma_i^2 sigma_res^2(lambda_i)))
//! ```
//!
//! with `Q(1/2, t) = P(chi^2(1) > 2t) = erfc(sqrt(t))`. The neglected term
//! is nonnegative, so these p-values err on the small side;
//! [`monte_carlo_pvalue`] estimates the full probability by simulation.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::dataset::{center_in_place, DataMatrix};
use crate::error::{Error, Result};
use crate::lars::{compute_path, PathOptions};

/// Minimum simulation count accepted by [`monte_carlo_pvalue`].
pub const MIN_SIMULATIONS: usize = 100;

/// `Q(1/2, t)`, the survival function of chi-squared(1) at `2t`.
pub fn chi2_survival_half(t: f64) -> Result<f64> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::invalid(format!("chi2_survival_half needs finite t >= 0, got {t}")));
    }
    Ok(erfc(t.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorPvalue {
    pub predictor: String,
    /// `None` for predictors that never enter the computed path.
    pub entry_lambda: Option<f64>,
    pub sigma_sq: f64,
    /// Residual variance at the entry knot; `None` when never active.
    pub sigma_sq_res: Option<f64>,
    pub pvalue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub target: String,
    pub n_samples: usize,
    /// The path stopped at its knot budget before reaching its natural end.
    pub truncated: bool,
    pub predictors: Vec<PredictorPvalue>,
}

impl SelectionResult {
    pub fn pvalues(&self) -> impl Iterator<Item = f64> + '_ {
        self.predictors.iter().map(|p| p.pvalue)
    }
}

/// P-value of a first-activation strength given the predictor variance and
/// the residual variance at entry.
pub fn activation_pvalue(n_samples: usize, lambda: f64, sigma_sq: f64, sigma_sq_res: f64) -> Result<f64> {
    let denom = 2.0 * sigma_sq * sigma_sq_res;
    if denom <= 0.0 {
        // a predictor entering with lambda > 0 against an exact fit
        return Ok(if lambda > 0.0 { 0.0 } else { 1.0 });
    }
    chi2_survival_half(n_samples as f64 * lambda * lambda / denom)
}

/// Runs the lasso path of `y` on `x` and converts every predictor's first
/// activation into a p-value. Never-active predictors get p = 1.
pub fn selection_pvalues(target: &str, x: &DataMatrix, y: &[f64], max_knots: Option<usize>) -> Result<SelectionResult> {
    let options = PathOptions {
        max_knots,
        ..Default::default()
    };
    let path = compute_path(x, y, &options)?;
    let n = x.n_samples();
    let mut predictors = Vec::with_capacity(x.n_vars());
    for (i, entry) in path.first_entries().into_iter().enumerate() {
        let sigma_sq = x.column_variance(i)?;
        let predictor = x.var_names()[i].clone();
        let row = match entry {
            // y_res at entry equals the residual stored at that knot, since
            // the entering coefficient is still zero there
            Some((knot, lambda)) if lambda > 0.0 => {
                let sigma_sq_res = path.knots()[knot].residual_variance;
                PredictorPvalue {
                    predictor,
                    entry_lambda: Some(lambda),
                    sigma_sq,
                    sigma_sq_res: Some(sigma_sq_res),
                    pvalue: activation_pvalue(n, lambda, sigma_sq, sigma_sq_res)?,
                }
            }
            _ => PredictorPvalue {
                predictor,
                entry_lambda: None,
                sigma_sq,
                sigma_sq_res: None,
                pvalue: 1.0,
            },
        };
        predictors.push(row);
    }
    Ok(SelectionResult {
        target: target.to_string(),
        n_samples: n,
        truncated: path.truncated(),
        predictors,
    })
}

pub const SELECTION_HEADER: &str = "target\tpredictor\tentry_lambda\tsigma\tsigma_res\tpvalue";

/// Writes results as TSV rows; `entry_lambda` and `sigma_res` are blank for
/// never-active predictors.
pub fn selection_to_tsv(results: &[SelectionResult]) -> String {
    let mut out = String::from(SELECTION_HEADER);
    out.push('\n');
    for r in results {
        for p in &r.predictors {
            let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.target,
                p.predictor,
                fmt_opt(p.entry_lambda),
                p.sigma_sq.sqrt(),
                fmt_opt(p.sigma_sq_res.map(f64::sqrt)),
                p.pvalue
            )
            .unwrap();
        }
    }
    out
}

pub fn write_selection_tsv(path: &Path, results: &[SelectionResult]) -> Result<()> {
    fs::write(path, selection_to_tsv(results)).map_err(|e| Error::from(e).in_file(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub p_hat: f64,
    pub stderr: f64,
    /// Simulations whose path computation succeeded.
    pub n_valid: usize,
    pub n_failed: usize,
}

/// Estimates `P(sup{lambda : b_i(lambda) != 0} >= lambda_i)` under the null
/// by replacing column `i` with centered iid `Normal(0, sigma_i^2)` draws and
/// recomputing the path.
///
/// Simulation `s` draws from a ChaCha stream selected by `(seed, s)`, so the
/// estimate does not depend on how simulations are scheduled.
pub fn monte_carlo_pvalue(
    x: &DataMatrix,
    y: &[f64],
    i: usize,
    lambda_i: f64,
    n_sims: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    if !(lambda_i > 0.0) {
        return Err(Error::invalid(format!("lambda_i must be positive, got {lambda_i}")));
    }
    if n_sims < MIN_SIMULATIONS {
        return Err(Error::invalid(format!(
            "at least {MIN_SIMULATIONS} simulations required, got {n_sims}"
        )));
    }
    let sigma = x.column_variance(i)?.sqrt();
    let n = x.n_samples();
    let options = PathOptions {
        max_knots: None,
        lambda_floor: lambda_i,
    };

    let outcomes: Vec<Option<bool>> = (0..n_sims)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64);
            let mut values = x.values().to_vec();
            let col = &mut values[i * n..(i + 1) * n];
            for v in col.iter_mut() {
                *v = sigma * rng.sample::<f64, _>(StandardNormal);
            }
            center_in_place(col);
            let sim = DataMatrix::from_column_major(x.var_names().to_vec(), n, values).ok()?;
            let path = compute_path(&sim, y, &options).ok()?;
            Some(matches!(path.first_entries()[i], Some((_, l)) if l >= lambda_i))
        })
        .collect();

    let n_valid = outcomes.iter().flatten().count();
    let n_failed = n_sims - n_valid;
    if n_valid == 0 {
        return Err(Error::invalid("every simulation failed"));
    }
    let hits = outcomes.iter().flatten().filter(|&&h| h).count();
    let p_hat = hits as f64 / n_valid as f64;
    Ok(MonteCarloEstimate {
        p_hat,
        stderr: (p_hat * (1.0 - p_hat) / n_valid as f64).sqrt(),
        n_valid,
        n_failed,
    })
}
