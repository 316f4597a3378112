//! Exact lasso regularization path by LARS homotopy with sign-change drops.
//!
//! The objective is `(1/2n)|y - X b|^2 + lambda |b|_1`, so correlations and
//! knot values all carry the `1/n` factor: the path starts at
//! `lambda_max = max_j |x_j . y| / n`.
//!
//! Between adjacent knots the solution is affine in `lambda`; the knots
//! alone determine the path.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;

use crate::dataset::{column_is_centered, DataMatrix};
use crate::error::{Error, Result};

/// Relative agreement below which two entry criteria count as a tie.
const TIE_TOL: f64 = 1e-10;
/// Active-set solve residual that triggers a Gram refactorization.
const REFACTOR_TOL: f64 = 1e-9;
/// Cholesky pivots below this fraction of the column norm are collinear.
const PIVOT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PathEvent {
    Enter(usize),
    Drop(usize),
    Terminate,
}

impl std::fmt::Display for PathEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PathEvent::Enter(_) => f.write_str("enter"),
            PathEvent::Drop(_) => f.write_str("drop"),
            PathEvent::Terminate => f.write_str("terminate"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Knot {
    pub lambda: f64,
    /// Coefficients of the active set at this knot, sorted by predictor.
    /// A predictor entering here is listed with coefficient 0.
    pub coefs: Vec<(usize, f64)>,
    pub events: Vec<PathEvent>,
    /// `|y - X b|^2 / n` at this knot.
    pub residual_variance: f64,
}

impl Knot {
    pub fn coef(&self, i: usize) -> f64 {
        self.coefs
            .binary_search_by_key(&i, |&(j, _)| j)
            .map(|p| self.coefs[p].1)
            .unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizationPath {
    knots: Vec<Knot>,
    n_samples: usize,
    n_vars: usize,
    truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathOptions {
    /// Knot budget including the first knot; `None` picks
    /// [`default_max_knots`].
    pub max_knots: Option<usize>,
    /// Stop (and mark the path truncated) before any knot below this value.
    pub lambda_floor: f64,
}

impl Default for PathOptions {
    fn default() -> Self {
        PathOptions {
            max_knots: None,
            lambda_floor: 0.0,
        }
    }
}

impl PathOptions {
    pub fn with_max_knots(max_knots: usize) -> Self {
        PathOptions {
            max_knots: Some(max_knots),
            ..Default::default()
        }
    }
}

pub fn default_max_knots(n_samples: usize, n_vars: usize) -> usize {
    8 * n_samples.min(n_vars)
}

impl RegularizationPath {
    /// Assembles a path from raw knots, checking the ordering invariant.
    pub fn from_knots(knots: Vec<Knot>, n_samples: usize, n_vars: usize, truncated: bool) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::invalid("a path needs at least one knot"));
        }
        for w in knots.windows(2) {
            if !(w[1].lambda < w[0].lambda) {
                return Err(Error::invalid(format!(
                    "knots must be strictly decreasing ({} then {})",
                    w[0].lambda, w[1].lambda
                )));
            }
        }
        if knots.iter().flat_map(|k| &k.coefs).any(|&(j, _)| j >= n_vars) {
            return Err(Error::invalid("coefficient index out of range"));
        }
        Ok(RegularizationPath {
            knots,
            n_samples,
            n_vars,
            truncated,
        })
    }

    pub fn knots(&self) -> &[Knot] {
        &self.knots
    }

    pub fn lambdas(&self) -> impl Iterator<Item = f64> + '_ {
        self.knots.iter().map(|k| k.lambda)
    }

    pub fn lambda_max(&self) -> f64 {
        self.knots[0].lambda
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    /// True when the path stopped at the knot budget or a lambda floor
    /// before reaching its natural end.
    pub fn truncated(&self) -> bool {
        self.truncated
    }

    /// Whether any predictor left the active set along the path.
    pub fn has_drop(&self) -> bool {
        self.knots
            .iter()
            .flat_map(|k| &k.events)
            .any(|e| matches!(e, PathEvent::Drop(_)))
    }

    pub fn dense_coefs(&self, knot: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_vars];
        for &(j, b) in &self.knots[knot].coefs {
            out[j] = b;
        }
        out
    }

    /// Coefficients at an arbitrary `lambda`, interpolated linearly between
    /// the bracketing knots. Above `lambda_max` every coefficient is 0;
    /// below the last knot the last knot's coefficients are returned.
    pub fn coefficients_at(&self, lambda: f64) -> Vec<f64> {
        if lambda >= self.lambda_max() {
            return vec![0.0; self.n_vars];
        }
        let last = self.knots.len() - 1;
        if lambda <= self.knots[last].lambda {
            return self.dense_coefs(last);
        }
        // first knot strictly below lambda
        let hi = self.knots.partition_point(|k| k.lambda >= lambda);
        let (a, b) = (&self.knots[hi - 1], &self.knots[hi]);
        let t = (a.lambda - lambda) / (a.lambda - b.lambda);
        let mut out = self.dense_coefs(hi - 1);
        for v in out.iter_mut() {
            *v *= 1.0 - t;
        }
        for &(j, coef) in &b.coefs {
            out[j] += t * coef;
        }
        out
    }

    /// Knot index and lambda of each predictor's first entry, `None` for
    /// predictors that never enter.
    pub fn first_entries(&self) -> Vec<Option<(usize, f64)>> {
        let mut out = vec![None; self.n_vars];
        for (idx, knot) in self.knots.iter().enumerate() {
            for e in &knot.events {
                if let PathEvent::Enter(i) = *e {
                    out[i].get_or_insert((idx, knot.lambda));
                }
            }
        }
        out
    }

    /// Debug dump: one row per event with the full coefficient vector.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("knot_index\tlambda\tevent\tpredictor");
        for j in 0..self.n_vars {
            write!(out, "\tcoef_{j}").unwrap();
        }
        out.push('\n');
        for (idx, knot) in self.knots.iter().enumerate() {
            let coefs = self.dense_coefs(idx);
            for e in &knot.events {
                let pred = match e {
                    PathEvent::Enter(i) | PathEvent::Drop(i) => i.to_string(),
                    PathEvent::Terminate => String::new(),
                };
                write!(out, "{idx}\t{}\t{e}\t{pred}", knot.lambda).unwrap();
                for c in &coefs {
                    write!(out, "\t{c}").unwrap();
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::from(e).in_file(path))
    }
}

/// First-activation strength of every predictor, `None` if it never enters.
pub fn first_activation(path: &RegularizationPath) -> Vec<Option<f64>> {
    path.first_entries()
        .into_iter()
        .map(|e| e.map(|(_, lambda)| lambda))
        .collect()
}

/// Residual of `y` at predictor `i`'s first entry knot and its variance
/// `|y_res|^2 / n`.
///
/// At that knot the coefficient of `i` is still 0, and the remaining
/// coefficients satisfy the optimality conditions of the problem with
/// column `i` removed. The residual is therefore the same as the one
/// obtained from a separate path computed without predictor `i`.
pub fn residual_at_entry(
    path: &RegularizationPath,
    x: &DataMatrix,
    y: &[f64],
    i: usize,
) -> Result<(Vec<f64>, f64)> {
    let (knot, _) = path
        .first_entries()
        .get(i)
        .copied()
        .flatten()
        .ok_or(Error::NeverActive(i))?;
    let res = residual(x, y, &path.knots[knot].coefs);
    let var = res.iter().map(|v| v * v).sum::<f64>() / res.len() as f64;
    Ok((res, var))
}

fn residual(x: &DataMatrix, y: &[f64], coefs: &[(usize, f64)]) -> Vec<f64> {
    let mut res = y.to_vec();
    for &(j, b) in coefs {
        if b != 0.0 {
            for (r, xv) in res.iter_mut().zip(x.column(j)) {
                *r -= b * xv;
            }
        }
    }
    res
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KktViolation {
    /// An inactive predictor's correlation exceeds lambda.
    Inactive,
    /// An active predictor's correlation differs from `sign(b) lambda`.
    Active,
    /// The predictor entering at a knot does not sit on the boundary.
    Entry,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    pub ok: bool,
    /// Largest violation relative to the knot's lambda scale.
    pub worst: f64,
    pub knot: usize,
    pub predictor: Option<usize>,
    pub kind: Option<KktViolation>,
}

/// Checks the lasso stationarity and subgradient conditions at every knot.
///
/// Violations are measured relative to `max(lambda_k, 1e-4 lambda_max)` so
/// the check stays meaningful at a final knot of `lambda = 0`.
pub fn verify_kkt(path: &RegularizationPath, x: &DataMatrix, y: &[f64], tol: f64) -> KktReport {
    let n = y.len() as f64;
    let lambda_max = path.lambda_max();
    let mut report = KktReport {
        ok: true,
        worst: 0.0,
        knot: 0,
        predictor: None,
        kind: None,
    };
    let note = |viol: f64, knot: usize, j: usize, kind: KktViolation, r: &mut KktReport| {
        if viol > r.worst {
            r.worst = viol;
            r.knot = knot;
            r.predictor = Some(j);
            r.kind = Some(kind);
        }
    };
    for (idx, knot) in path.knots.iter().enumerate() {
        let lambda = knot.lambda;
        let scale = lambda.max(1e-4 * lambda_max).max(f64::MIN_POSITIVE);
        let res = residual(x, y, &knot.coefs);
        let entering: Vec<usize> = knot
            .events
            .iter()
            .filter_map(|e| match e {
                PathEvent::Enter(i) => Some(*i),
                _ => None,
            })
            .collect();
        for j in 0..x.n_vars() {
            let c = dot(x.column(j), &res) / n;
            let b = knot.coef(j);
            if b != 0.0 {
                let viol = (c - b.signum() * lambda).abs() / scale;
                note(viol, idx, j, KktViolation::Active, &mut report);
            } else {
                let viol = (c.abs() - lambda) / scale;
                note(viol, idx, j, KktViolation::Inactive, &mut report);
            }
            if entering.contains(&j) {
                let viol = (c.abs() - lambda).abs() / scale;
                note(viol, idx, j, KktViolation::Entry, &mut report);
            }
        }
    }
    report.ok = report.worst <= tol;
    report
}

/// Computes the lasso path of centered `y` on centered predictors `x`.
pub fn compute_path(x: &DataMatrix, y: &[f64], options: &PathOptions) -> Result<RegularizationPath> {
    let n = x.n_samples();
    let k = x.n_vars();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "response has {} samples, predictors have {n}",
            y.len()
        )));
    }
    let max_knots = options.max_knots.unwrap_or_else(|| default_max_knots(n, k));
    if max_knots == 0 {
        return Err(Error::invalid("max_knots must be at least 1"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("response holds non-finite values"));
    }
    if !column_is_centered(y) {
        return Err(Error::NotCentered("response".into()));
    }
    if let Some(j) = (0..k).find(|&j| !column_is_centered(x.column(j))) {
        return Err(Error::NotCentered(format!("predictor `{}`", x.var_names()[j])));
    }
    Lars::new(x, y).run(max_knots, options.lambda_floor)
}

struct Lars<'a> {
    x: &'a DataMatrix,
    n: usize,
    k: usize,
    inv_n: f64,
    col_sq: Vec<f64>,
    corr: Vec<f64>,
    residual: Vec<f64>,
    beta: Vec<f64>,
    active: Vec<usize>,
    signs: Vec<f64>,
    is_active: Vec<bool>,
    /// Lower Cholesky factor of the active Gram matrix, row `i` holding
    /// `i + 1` entries.
    chol: Vec<Vec<f64>>,
    lambda: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators let the compiler vectorize the reduction
    let mut acc = [0.0; 4];
    let (ca, ra) = a.split_at(a.len() - a.len() % 4);
    let (cb, rb) = b.split_at(ca.len());
    for (x, y) in ca.chunks_exact(4).zip(cb.chunks_exact(4)) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

enum Step {
    Enter(Vec<usize>),
    Drop(usize),
    Zero,
}

impl<'a> Lars<'a> {
    fn new(x: &'a DataMatrix, y: &[f64]) -> Self {
        let n = x.n_samples();
        let k = x.n_vars();
        let inv_n = 1.0 / n as f64;
        let corr = (0..k).map(|j| dot(x.column(j), y) * inv_n).collect();
        let col_sq = (0..k).map(|j| dot(x.column(j), x.column(j)) * inv_n).collect();
        Lars {
            x,
            n,
            k,
            inv_n,
            col_sq,
            corr,
            residual: y.to_vec(),
            beta: vec![0.0; k],
            active: Vec::new(),
            signs: Vec::new(),
            is_active: vec![false; k],
            chol: Vec::new(),
            lambda: 0.0,
        }
    }

    fn max_active(&self) -> usize {
        self.k.min(self.n - 1)
    }

    fn knot(&self, events: Vec<PathEvent>) -> Knot {
        let mut coefs: Vec<(usize, f64)> = self.active.iter().map(|&j| (j, self.beta[j])).collect();
        coefs.sort_unstable_by_key(|&(j, _)| j);
        let rv = dot(&self.residual, &self.residual) * self.inv_n;
        Knot {
            lambda: self.lambda,
            coefs,
            events,
            residual_variance: rv,
        }
    }

    fn run(mut self, max_knots: usize, floor: f64) -> Result<RegularizationPath> {
        let lambda_max = self.corr.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
        self.lambda = lambda_max;
        let mut knots = Vec::new();
        if lambda_max == 0.0 {
            knots.push(self.knot(vec![PathEvent::Terminate]));
            return RegularizationPath::from_knots(knots, self.n, self.k, false);
        }

        let first: Vec<usize> = (0..self.k)
            .filter(|&j| self.corr[j].abs() >= lambda_max * (1.0 - TIE_TOL))
            .collect();
        let mut events = self.enter(&first)?;
        // A predictor that just left sits on the boundary it left through;
        // on the next step it may only re-enter through the opposite one.
        let mut excluded: Option<(usize, f64)> = None;
        let mut truncated = false;

        loop {
            let saturated = self.active.len() >= self.max_active() && self.k > self.n - 1;
            if saturated {
                events.push(PathEvent::Terminate);
                knots.push(self.knot(events));
                break;
            }
            knots.push(self.knot(events));
            if knots.len() >= max_knots {
                truncated = true;
                break;
            }

            let (w, u, a) = self.direction()?;
            let (gamma, step) = self.next_step(&w, &a, excluded);
            if self.lambda - gamma < floor {
                truncated = true;
                break;
            }

            for (p, &j) in self.active.iter().enumerate() {
                self.beta[j] += gamma * w[p];
            }
            for (r, uv) in self.residual.iter_mut().zip(&u) {
                *r -= gamma * uv;
            }
            for (c, av) in self.corr.iter_mut().zip(&a) {
                *c -= gamma * av;
            }
            self.lambda -= gamma;
            for (p, &j) in self.active.iter().enumerate() {
                self.corr[j] = self.signs[p] * self.lambda;
            }

            excluded = None;
            events = match step {
                Step::Zero => {
                    self.lambda = 0.0;
                    knots.push(self.knot(vec![PathEvent::Terminate]));
                    break;
                }
                Step::Drop(j) => {
                    let sign = self.drop(j);
                    excluded = Some((j, sign));
                    vec![PathEvent::Drop(j)]
                }
                Step::Enter(js) => self.enter(&js)?,
            };
        }
        RegularizationPath::from_knots(knots, self.n, self.k, truncated)
    }

    /// Solves the active-set system for the coefficient velocity `w`
    /// (per unit decrease of lambda), the fitted-value velocity `u = X_A w`
    /// and the correlation velocities `a = X^T u / n`.
    fn direction(&mut self) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let mut refactored = false;
        loop {
            let w = self.solve(&self.signs);
            let mut u = vec![0.0; self.n];
            for (p, &j) in self.active.iter().enumerate() {
                let wp = w[p];
                for (uv, xv) in u.iter_mut().zip(self.x.column(j)) {
                    *uv += wp * xv;
                }
            }
            let a: Vec<f64> = (0..self.k).map(|j| dot(self.x.column(j), &u) * self.inv_n).collect();
            let err = self
                .active
                .iter()
                .zip(&self.signs)
                .map(|(&j, s)| (a[j] - s).abs())
                .fold(0.0_f64, f64::max);
            if err <= REFACTOR_TOL || refactored {
                if err > REFACTOR_TOL {
                    warn!("active-set solve residual {err:.3e} after refactorization");
                }
                return Ok((w, u, a));
            }
            self.refactor()?;
            refactored = true;
        }
    }

    fn next_step(&self, w: &[f64], a: &[f64], excluded: Option<(usize, f64)>) -> (f64, Step) {
        let lambda = self.lambda;
        let mut best = lambda;
        let mut step = Step::Zero;

        let can_enter = self.active.len() < self.max_active();
        let mut entry_gamma = vec![f64::INFINITY; self.k];
        if can_enter {
            for j in 0..self.k {
                if self.is_active[j] {
                    continue;
                }
                let c = self.corr[j];
                let mut g = f64::INFINITY;
                for (side, num, den) in [(1.0, lambda - c, 1.0 - a[j]), (-1.0, lambda + c, 1.0 + a[j])] {
                    if excluded == Some((j, side)) {
                        continue;
                    }
                    if den > 0.0 {
                        let cand = num.max(0.0) / den;
                        if cand > 0.0 && cand < g {
                            g = cand;
                        }
                    }
                }
                entry_gamma[j] = g;
                if g < best {
                    best = g;
                }
            }
        }
        let min_entry = best;

        let mut drop_at = None;
        for (p, &j) in self.active.iter().enumerate() {
            if w[p] != 0.0 {
                let g = -self.beta[j] / w[p];
                if g > 0.0 && g < best {
                    best = g;
                    drop_at = Some(j);
                }
            }
        }

        if let Some(j) = drop_at {
            step = Step::Drop(j);
        } else if min_entry < lambda {
            let tol = TIE_TOL * lambda;
            let js: Vec<usize> = (0..self.k)
                .filter(|&j| entry_gamma[j] <= min_entry + tol)
                .collect();
            step = Step::Enter(js);
        }
        (best, step)
    }

    fn enter(&mut self, js: &[usize]) -> Result<Vec<PathEvent>> {
        if js.len() > 1 {
            warn!(
                "predictors {js:?} enter together at lambda {:.6e}; general position violated, entering in index order",
                self.lambda
            );
        }
        let mut events = Vec::with_capacity(js.len());
        for &j in js {
            if self.active.len() >= self.max_active() {
                break;
            }
            self.add_to_factor(j)?;
            self.active.push(j);
            self.signs.push(self.corr[j].signum());
            self.is_active[j] = true;
            self.beta[j] = 0.0;
            self.corr[j] = self.corr[j].signum() * self.lambda;
            events.push(PathEvent::Enter(j));
        }
        Ok(events)
    }

    /// Removes `j` from the active set, returning its former sign.
    fn drop(&mut self, j: usize) -> f64 {
        let p = self.active.iter().position(|&a| a == j).expect("dropped predictor is active");
        self.active.remove(p);
        let sign = self.signs.remove(p);
        self.is_active[j] = false;
        self.beta[j] = 0.0;
        self.remove_from_factor(p);
        sign
    }

    fn add_to_factor(&mut self, j: usize) -> Result<()> {
        let xj = self.x.column(j);
        let g: Vec<f64> = self
            .active
            .iter()
            .map(|&i| dot(self.x.column(i), xj) * self.inv_n)
            .collect();
        let z = forward_solve(&self.chol, &g);
        let d = self.col_sq[j] - z.iter().map(|v| v * v).sum::<f64>();
        if !(d > PIVOT_TOL * self.col_sq[j]) {
            if let Some(&i) = self.active.iter().find(|&&i| {
                let xi = self.x.column(i);
                xi == xj || xi.iter().zip(xj).all(|(a, b)| *a == -*b)
            }) {
                return Err(Error::DuplicateColumns(i.min(j), i.max(j)));
            }
            return Err(Error::Collinear(j));
        }
        let mut row = z;
        row.push(d.sqrt());
        self.chol.push(row);
        Ok(())
    }

    fn remove_from_factor(&mut self, p: usize) {
        self.chol.remove(p);
        let mut x: Vec<f64> = Vec::with_capacity(self.chol.len() - p);
        for row in self.chol.iter_mut().skip(p) {
            x.push(row.remove(p));
        }
        // rank-one update of the trailing block restores lower-triangular form
        let m = self.chol.len();
        for kk in p..m {
            let xi = kk - p;
            let l = self.chol[kk][kk];
            let r = l.hypot(x[xi]);
            let c = r / l;
            let s = x[xi] / l;
            self.chol[kk][kk] = r;
            for i in kk + 1..m {
                let xr = i - p;
                let lik = (self.chol[i][kk] + s * x[xr]) / c;
                x[xr] = c * x[xr] - s * lik;
                self.chol[i][kk] = lik;
            }
        }
    }

    fn refactor(&mut self) -> Result<()> {
        let active = std::mem::take(&mut self.active);
        self.chol.clear();
        for &j in &active {
            self.add_to_factor(j)?;
            self.active.push(j);
        }
        Ok(())
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let z = forward_solve(&self.chol, rhs);
        let m = z.len();
        let mut w = z;
        for i in (0..m).rev() {
            let mut v = w[i];
            for r in i + 1..m {
                v -= self.chol[r][i] * w[r];
            }
            w[i] = v / self.chol[i][i];
        }
        w
    }
}

fn forward_solve(chol: &[Vec<f64>], rhs: &[f64]) -> Vec<f64> {
    let mut z = Vec::with_capacity(rhs.len());
    for (i, row) in chol.iter().enumerate() {
        let s = dot(&row[..i], &z);
        z.push((rhs[i] - s) / row[i]);
    }
    z
}
