//! Kolmogorov-Smirnov statistics and p-values.
//!
//! One-sample p-values are exact (Marsaglia, Tsang and Wang's matrix
//! method) up to [`EXACT_MAX_N`] observations and asymptotic with
//! Stephens' finite-n correction beyond. Two-sample p-values are always
//! asymptotic with effective size `n1 n2 / (n1 + n2)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EXACT_MAX_N: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsStat {
    pub d: f64,
    pub pvalue: f64,
}

/// One-sample KS test of `values` against `U(lower, upper)`. Returns `None`
/// for an empty sample.
pub fn ks_uniform(values: &[f64], lower: f64, upper: f64) -> Result<Option<KsStat>> {
    if !(lower < upper) {
        return Err(Error::invalid(format!("KS bounds need lower < upper, got [{lower}, {upper}]")));
    }
    if values.is_empty() {
        return Ok(None);
    }
    let width = upper - lower;
    let slack = 1e-12 * width.max(1.0);
    let mut u = Vec::with_capacity(values.len());
    for &v in values {
        if !(v >= lower - slack && v <= upper + slack) {
            return Err(Error::invalid(format!("value {v} outside KS bounds [{lower}, {upper}]")));
        }
        u.push(((v - lower) / width).clamp(0.0, 1.0));
    }
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    let d = u
        .iter()
        .enumerate()
        .map(|(i, &x)| ((i + 1) as f64 / n - x).max(x - i as f64 / n))
        .fold(0.0_f64, f64::max);
    Ok(Some(KsStat {
        d,
        pvalue: one_sample_pvalue(u.len(), d),
    }))
}

/// `P(D_n >= d)` for the one-sample statistic.
pub fn one_sample_pvalue(n: usize, d: f64) -> f64 {
    if n <= EXACT_MAX_N {
        (1.0 - kolmogorov_cdf_exact(n, d)).clamp(0.0, 1.0)
    } else {
        let sn = (n as f64).sqrt();
        kolmogorov_survival((sn + 0.12 + 0.11 / sn) * d)
    }
}

/// Exact `P(D_n < d)` by the Marsaglia-Tsang-Wang matrix power.
pub fn kolmogorov_cdf_exact(n: usize, d: f64) -> f64 {
    let nf = n as f64;
    if d <= 0.5 / nf {
        return 0.0;
    }
    if d >= 1.0 {
        return 1.0;
    }
    let k = (nf * d) as usize + 1;
    let m = 2 * k - 1;
    let h = k as f64 - nf * d;

    let mut hm = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            if i + 1 >= j {
                hm[i * m + j] = 1.0;
            }
        }
    }
    for i in 0..m {
        hm[i * m] -= h.powi(i as i32 + 1);
        hm[(m - 1) * m + i] -= h.powi((m - i) as i32);
    }
    if 2.0 * h - 1.0 > 0.0 {
        hm[(m - 1) * m] += (2.0 * h - 1.0).powi(m as i32);
    }
    for i in 0..m {
        for j in 0..m {
            if i + 1 > j {
                let mut f = 1.0;
                for g in 1..=(i + 1 - j) {
                    f *= g as f64;
                }
                hm[i * m + j] /= f;
            }
        }
    }

    let (q, mut exp10) = matrix_power(&hm, m, n);
    let mut s = q[(k - 1) * m + k - 1];
    for i in 1..=n {
        s = s * i as f64 / nf;
        if s < 1e-140 {
            s *= 1e140;
            exp10 -= 140;
        }
    }
    s * 10f64.powi(exp10)
}

/// `A^n` with a running power-of-ten exponent to avoid overflow.
fn matrix_power(a: &[f64], m: usize, n: usize) -> (Vec<f64>, i32) {
    if n == 1 {
        return (a.to_vec(), 0);
    }
    let (half, e) = matrix_power(a, m, n / 2);
    let sq = matmul(&half, &half, m);
    let (mut v, mut ev) = if n % 2 == 0 {
        (sq, 2 * e)
    } else {
        (matmul(a, &sq, m), 2 * e)
    };
    if v[(m / 2) * m + m / 2] > 1e140 {
        for x in v.iter_mut() {
            *x *= 1e-140;
        }
        ev += 140;
    }
    (v, ev)
}

fn matmul(a: &[f64], b: &[f64], m: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * m];
    for i in 0..m {
        for l in 0..m {
            let ail = a[i * m + l];
            if ail == 0.0 {
                continue;
            }
            for j in 0..m {
                c[i * m + j] += ail * b[l * m + j];
            }
        }
    }
    c
}

/// Survival function of the Kolmogorov distribution,
/// `2 sum_{k>=1} (-1)^(k-1) exp(-2 k^2 x^2)`.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.18 {
        // theta-function form converges fast for small x
        let y = -std::f64::consts::PI.powi(2) / (8.0 * x * x);
        let w = (2.0 * std::f64::consts::PI).sqrt() / x;
        let cdf: f64 = (0..20).map(|j| ((2 * j + 1) as f64).powi(2) * y).map(f64::exp).sum::<f64>() * w;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-300 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample statistic `sup |F_a - F_b|`, evaluated after each distinct
/// value so ties are handled.
pub fn two_sample_d(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Two-sample KS test; `None` if either sample is empty.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Option<KsStat> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let d = two_sample_d(a, b);
    let en = (a.len() * b.len()) as f64 / (a.len() + b.len()) as f64;
    let se = en.sqrt();
    Some(KsStat {
        d,
        pvalue: kolmogorov_survival((se + 0.12 + 0.11 / se) * d),
    })
}
