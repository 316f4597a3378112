#![allow(dead_code)]

use lassopv_core::DataMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("x{i}")).collect()
}

pub fn centered(v: &[f64]) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - m).collect()
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Centered design with columns sharing a common factor, plus a response
/// built from a sparse mixed-sign signal. Shared factors make drop events
/// along the path common.
pub fn correlated_instance(rng: &mut ChaCha8Rng, n: usize, k: usize) -> (DataMatrix, Vec<f64>) {
    let factor = normal_vec(rng, n);
    let rho: f64 = rng.gen_range(0.0..1.5);
    let cols: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let load = rho * rng.gen_range(-1.0..1.0);
            let scale = rng.gen_range(0.5..2.0);
            (0..n)
                .map(|i| scale * (rng.sample::<f64, _>(StandardNormal) + load * factor[i]))
                .collect()
        })
        .collect();
    let x = DataMatrix::from_columns(names(k), cols).unwrap().center_columns();
    let mut y = normal_vec(rng, n);
    for j in 0..k {
        if rng.gen_bool(0.5) {
            let b: f64 = rng.gen_range(-2.0..2.0);
            for (yi, xv) in y.iter_mut().zip(x.column(j)) {
                *yi += b * xv;
            }
        }
    }
    (x, centered(&y))
}

/// Cyclic coordinate descent for `(1/2n)|y - Xb|^2 + lambda |b|_1`,
/// iterated until no coordinate moves by more than `tol`.
pub fn coordinate_descent(x: &DataMatrix, y: &[f64], lambda: f64, tol: f64) -> Vec<f64> {
    let n = y.len() as f64;
    let k = x.n_vars();
    let sq: Vec<f64> = (0..k)
        .map(|j| x.column(j).iter().map(|v| v * v).sum::<f64>() / n)
        .collect();
    let mut beta = vec![0.0; k];
    let mut res = y.to_vec();
    for _ in 0..1_000_000 {
        let mut max_move: f64 = 0.0;
        for j in 0..k {
            let col = x.column(j);
            let rho = col.iter().zip(&res).map(|(a, b)| a * b).sum::<f64>() / n + sq[j] * beta[j];
            let new = rho.signum() * (rho.abs() - lambda).max(0.0) / sq[j];
            let delta = new - beta[j];
            if delta != 0.0 {
                for (r, xv) in res.iter_mut().zip(col) {
                    *r -= delta * xv;
                }
                beta[j] = new;
                max_move = max_move.max(delta.abs());
            }
        }
        if max_move < tol {
            return beta;
        }
    }
    panic!("coordinate descent did not converge at lambda {lambda}");
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// `P(chi^2(1) > 2t)` by composite Simpson integration of the standard
/// normal density over `[sqrt(2t), sqrt(2t) + 40]`, doubled.
pub fn chi2_half_survival_quadrature(t: f64) -> f64 {
    let a = (2.0 * t).sqrt();
    let b = a + 40.0;
    let m = 200_000;
    let h = (b - a) / m as f64;
    let pdf = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = pdf(a) + pdf(b);
    for i in 1..m {
        let z = a + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(z);
    }
    2.0 * s * h / 3.0
}

/// `P(D_n < d)` for the one-sample KS statistic by direct integration of the
/// order-statistic density over the band `i/n - d < u_i < (i-1)/n + d`.
///
/// The running volume `F_k(t) = vol{u_1 <= .. <= u_k <= t}` is a piecewise
/// polynomial on the grid of band endpoints and is integrated exactly.
pub fn ks_cdf_by_volume(n: usize, d: f64) -> f64 {
    let nf = n as f64;
    let lo: Vec<f64> = (1..=n).map(|i| (i as f64 / nf - d).max(0.0)).collect();
    let hi: Vec<f64> = (1..=n).map(|i| ((i - 1) as f64 / nf + d).min(1.0)).collect();
    if lo.iter().zip(&hi).any(|(a, b)| a >= b) {
        return 0.0;
    }
    let mut grid: Vec<f64> = vec![0.0, 1.0];
    grid.extend(&lo);
    grid.extend(&hi);
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let m = grid.len() - 1;

    // polynomial coefficients in s per grid interval, lowest degree first
    let eval = |p: &[f64], s: f64| p.iter().rev().fold(0.0, |acc, c| acc * s + c);
    let integral = |p: &[f64]| -> Vec<f64> {
        let mut q = vec![0.0];
        q.extend(p.iter().enumerate().map(|(j, c)| c / (j + 1) as f64));
        q
    };
    let mut pieces: Vec<Vec<f64>> = vec![vec![1.0]; m];
    for k in 0..n {
        let mut next = Vec::with_capacity(m);
        let mut acc = 0.0;
        for j in 0..m {
            let (l, r) = (grid[j], grid[j + 1]);
            if r <= lo[k] + 1e-15 {
                next.push(vec![0.0]);
            } else if l >= hi[k] - 1e-15 {
                next.push(vec![acc]);
            } else {
                let mut q = integral(&pieces[j]);
                let shift = acc - eval(&q, l);
                q[0] += shift;
                acc = eval(&q, r);
                next.push(q);
            }
        }
        pieces = next;
    }
    let total = eval(&pieces[m - 1], 1.0);
    (1..=n).fold(total, |v, i| v * i as f64)
}
