//! Quality tests for batched p-values and generic significance statistics.
//!
//! Single-batch tests compare the pooled histogram against the uniform and
//! run a KS test per batch. Cross-batch tests count significant values per
//! batch at pooled thresholds and ask whether the counts grow linearly with
//! batch size, summarized by an R^2 curve and its normalized partial AUC.

pub mod crossbatch;
pub mod ks;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lassopv::SelectionResult;

pub use crossbatch::{linear_relation, partial_auc, r2_curve, r_squared, CurvePoint, LinearRelation, R2Curve, ScatterPoint};
pub use ks::{ks_two_sample, ks_uniform, KsStat};

/// Values at or above this count as p = 1 for histogram exclusion.
pub const ONE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    SmallerIsSignificant,
    LargerIsSignificant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "direction")]
pub enum StatKind {
    Pvalue,
    Generic(Direction),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub id: String,
    pub values: Vec<f64>,
}

/// Named batches of statistics. Batches may be empty; they are reported but
/// take no part in the cross-batch tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchedStatistics {
    kind: StatKind,
    batches: Vec<Batch>,
}

impl BatchedStatistics {
    pub fn new(kind: StatKind, batches: Vec<Batch>) -> Result<Self> {
        let mut seen = HashMap::new();
        for (b, batch) in batches.iter().enumerate() {
            if seen.insert(batch.id.as_str(), b).is_some() {
                return Err(Error::invalid(format!("duplicate batch id `{}`", batch.id)));
            }
            for &v in &batch.values {
                check_value(kind, v).map_err(|msg| Error::invalid(format!("batch `{}`: {msg}", batch.id)))?;
            }
        }
        Ok(BatchedStatistics { kind, batches })
    }

    /// One batch per selection task, keyed by target.
    pub fn from_selection(results: &[SelectionResult]) -> Result<Self> {
        let batches = results
            .iter()
            .map(|r| Batch {
                id: r.target.clone(),
                values: r.pvalues().collect(),
            })
            .collect();
        Self::new(StatKind::Pvalue, batches)
    }

    pub fn kind(&self) -> StatKind {
        self.kind
    }

    pub fn batches(&self) -> &[Batch] {
        &self.batches
    }

    pub fn n_values(&self) -> usize {
        self.batches.iter().map(|b| b.values.len()).sum()
    }

    pub fn n_nonempty(&self) -> usize {
        self.batches.iter().filter(|b| !b.values.is_empty()).count()
    }

    /// Same statistics reinterpreted as a generic statistic.
    pub fn as_generic(&self, direction: Direction) -> Self {
        BatchedStatistics {
            kind: StatKind::Generic(direction),
            batches: self.batches.clone(),
        }
    }

    /// Maps a value so that smaller always means more significant.
    pub fn significance_score(&self, v: f64) -> f64 {
        match self.kind {
            StatKind::Generic(Direction::LargerIsSignificant) => -v,
            _ => v,
        }
    }

    pub fn score_to_value(&self, s: f64) -> f64 {
        self.significance_score(s)
    }

    /// Reads `(batch_id, value)` rows, or the `target`/`pvalue` columns of a
    /// selection TSV. A row with an empty value declares an empty batch.
    pub fn read_tsv(path: &Path, kind: StatKind) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        Self::parse_tsv(&text, kind).map_err(|e| e.in_file(path))
    }

    pub fn parse_tsv(text: &str, kind: StatKind) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::EmptyInput)?;
        let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
        let (id_col, val_col) = match (
            cols.iter().position(|&c| c == "target"),
            cols.iter().position(|&c| c == "pvalue"),
        ) {
            (Some(t), Some(p)) => (t, p),
            _ if cols.len() == 2 => (0, 1),
            _ => {
                return Err(Error::invalid(format!(
                    "expected a (batch_id, value) header or a selection table, got `{header}`"
                )))
            }
        };

        let mut index: HashMap<String, usize> = HashMap::new();
        let mut batches: Vec<Batch> = Vec::new();
        for (row, (_, line)) in lines.enumerate() {
            let row = row + 1;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != cols.len() {
                return Err(Error::RaggedRow {
                    row,
                    expected: cols.len(),
                    found: fields.len(),
                });
            }
            let id = fields[id_col].trim();
            if id.is_empty() {
                return Err(Error::Parse {
                    row,
                    col: id_col + 1,
                    msg: "empty batch id".into(),
                });
            }
            let b = *index.entry(id.to_string()).or_insert_with(|| {
                batches.push(Batch {
                    id: id.to_string(),
                    values: Vec::new(),
                });
                batches.len() - 1
            });
            let raw = fields[val_col].trim();
            if raw.is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                row,
                col: val_col + 1,
                msg,
            };
            let v: f64 = raw.parse().map_err(|_| parse_err(format!("`{raw}` is not a number")))?;
            check_value(kind, v).map_err(parse_err)?;
            batches[b].values.push(v);
        }
        Self::new(kind, batches)
    }

    /// `(batch_id, value)` rows; empty batches get one row with no value.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("batch_id\tvalue\n");
        for b in &self.batches {
            if b.values.is_empty() {
                writeln!(out, "{}\t", b.id).unwrap();
            }
            for v in &b.values {
                writeln!(out, "{}\t{}", b.id, v).unwrap();
            }
        }
        out
    }
}

fn check_value(kind: StatKind, v: f64) -> std::result::Result<(), String> {
    if !v.is_finite() {
        return Err(format!("non-finite value {v}"));
    }
    if kind == StatKind::Pvalue && !(0.0..=1.0).contains(&v) {
        return Err(format!("p-value {v} outside [0, 1]"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub n_thresholds: usize,
    pub n_bins: usize,
    /// Histogram values below this are dropped and bins span `[lower, 1]`.
    pub lower: f64,
    pub exclude_ones: bool,
    /// KS window. For p-values, the values inside are tested against the
    /// uniform on the window. For generic statistics, the bounds are pooled
    /// significance quantiles and both sides of the one-vs-rest test are
    /// restricted to them.
    pub ks_bounds: (f64, f64),
    pub scatter_quantiles: Vec<f64>,
    pub auc_bounds: Vec<(f64, f64)>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            n_thresholds: 400,
            n_bins: 20,
            lower: 0.0,
            exclude_ones: false,
            ks_bounds: (0.0, 1.0),
            scatter_quantiles: vec![0.01, 0.05, 0.2],
            auc_bounds: vec![(0.0, 0.01), (0.0, 0.05), (0.0, 0.2), (0.0, 1.0)],
        }
    }
}

impl EvalOptions {
    /// Drops p-values below `cutoff` as likely non-null and tests the rest
    /// against `U(cutoff, 1)`.
    pub fn real_data(cutoff: f64) -> Self {
        EvalOptions {
            lower: cutoff,
            ks_bounds: (cutoff, 1.0),
            ..Default::default()
        }
    }

    /// Never-active predictors pile up at p = 1, so histograms exclude them
    /// and KS only looks at the most significant 5%.
    pub fn high_dimensional() -> Self {
        EvalOptions {
            n_bins: 50,
            exclude_ones: true,
            ks_bounds: (0.0, 0.05),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_thresholds == 0 || self.n_bins == 0 {
            return Err(Error::invalid("n_thresholds and n_bins must be positive"));
        }
        if !(0.0..1.0).contains(&self.lower) {
            return Err(Error::invalid(format!("lower bound {} outside [0, 1)", self.lower)));
        }
        let (lo, hi) = self.ks_bounds;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::invalid(format!("KS bounds ({lo}, {hi}) must satisfy 0 <= lo < hi <= 1")));
        }
        for &q in &self.scatter_quantiles {
            if !(q > 0.0 && q < 1.0) {
                return Err(Error::invalid(format!("scatter quantile {q} outside (0, 1)")));
            }
        }
        for &(lo, hi) in &self.auc_bounds {
            if !(0.0 <= lo && lo < hi && hi <= 1.0) {
                return Err(Error::invalid(format!("AUC bound ({lo}, {hi}) must satisfy 0 <= lo < hi <= 1")));
            }
        }
        Ok(())
    }
}

/// Parses `"0,0.01;0,0.05"` style bound lists.
pub fn parse_bounds(s: &str) -> Result<Vec<(f64, f64)>> {
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|pair| {
            let mut it = pair.split(',').map(|v| v.trim().parse::<f64>());
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(lo)), Some(Ok(hi)), None) => Ok((lo, hi)),
                _ => Err(Error::invalid(format!("malformed bound `{pair}`, expected `lo,hi`"))),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRecord {
    pub lower: f64,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Uniform expectation per bin, computed before excluding ones.
    pub expected_count: f64,
    pub n_retained: usize,
    pub n_below_lower: usize,
    pub n_ones_excluded: usize,
}

pub fn histogram_test(s: &BatchedStatistics, n_bins: usize, lower: f64, exclude_ones: bool) -> Result<HistogramRecord> {
    if s.kind != StatKind::Pvalue {
        return Err(Error::invalid("histogram test needs p-values, not a generic statistic"));
    }
    if n_bins == 0 {
        return Err(Error::invalid("need at least one bin"));
    }
    if !(0.0..1.0).contains(&lower) {
        return Err(Error::invalid(format!("lower bound {lower} outside [0, 1)")));
    }
    let width = (1.0 - lower) / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    let (mut below, mut ones, mut above_lower) = (0, 0, 0);
    for &v in s.batches.iter().flat_map(|b| &b.values) {
        if v < lower {
            below += 1;
            continue;
        }
        above_lower += 1;
        if exclude_ones && v >= 1.0 - ONE_TOLERANCE {
            ones += 1;
            continue;
        }
        let bin = (((v - lower) / width) as usize).min(n_bins - 1);
        counts[bin] += 1;
    }
    Ok(HistogramRecord {
        lower,
        bin_edges: (0..=n_bins).map(|i| lower + i as f64 * width).collect(),
        counts,
        expected_count: above_lower as f64 / n_bins as f64,
        n_retained: above_lower - ones,
        n_below_lower: below,
        n_ones_excluded: ones,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KsMode {
    Uniform,
    OneVsRest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsRecord {
    pub batch_id: String,
    pub batch_size: usize,
    /// Values inside the KS window.
    pub n_tested: usize,
    /// `None` when the test is undefined (nothing to test).
    pub d: Option<f64>,
    pub pvalue: Option<f64>,
    pub mode: KsMode,
}

/// Per-batch KS test against `U(lo, hi)` of the values inside `[lo, hi]`.
pub fn ks_records_uniform(s: &BatchedStatistics, bounds: (f64, f64)) -> Result<Vec<KsRecord>> {
    if s.kind != StatKind::Pvalue {
        return Err(Error::invalid("uniform KS needs p-values; use one-vs-rest for generic statistics"));
    }
    let (lo, hi) = bounds;
    s.batches
        .par_iter()
        .map(|b| {
            let window: Vec<f64> = b.values.iter().copied().filter(|&v| v >= lo && v <= hi).collect();
            let stat = ks_uniform(&window, lo, hi)?;
            Ok(KsRecord {
                batch_id: b.id.clone(),
                batch_size: b.values.len(),
                n_tested: window.len(),
                d: stat.map(|k| k.d),
                pvalue: stat.map(|k| k.pvalue),
                mode: KsMode::Uniform,
            })
        })
        .collect()
}

/// Two-sample KS of one batch against all the others pooled.
pub fn ks_one_vs_rest(s: &BatchedStatistics, batch_id: &str) -> Result<Option<KsStat>> {
    if s.batches.len() < 2 {
        return Err(Error::invalid("one-vs-rest KS needs at least two batches"));
    }
    let b = s
        .batches
        .iter()
        .position(|b| b.id == batch_id)
        .ok_or_else(|| Error::invalid(format!("no batch `{batch_id}`")))?;
    let rest: Vec<f64> = s
        .batches
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != b)
        .flat_map(|(_, x)| x.values.iter().copied())
        .collect();
    Ok(ks_two_sample(&s.batches[b].values, &rest))
}

/// One-vs-rest KS for every batch, restricted to the pooled significance
/// quantile window `bounds`.
pub fn ks_records_one_vs_rest(s: &BatchedStatistics, bounds: (f64, f64)) -> Result<Vec<KsRecord>> {
    if s.batches.len() < 2 {
        return Err(Error::invalid("one-vs-rest KS needs at least two batches"));
    }
    let mut pooled: Vec<f64> = s.batches.iter().flat_map(|b| &b.values).map(|&v| s.significance_score(v)).collect();
    pooled.sort_by(f64::total_cmp);
    let total = pooled.len();
    let rank_score = |q: f64| -> f64 {
        let r = ((q * total as f64) - 1e-9).ceil().max(1.0) as usize;
        pooled[r.min(total) - 1]
    };
    let (lo, hi) = bounds;
    let (a, b) = if total == 0 {
        (f64::NEG_INFINITY, f64::INFINITY)
    } else {
        let a = if lo <= 0.0 { f64::NEG_INFINITY } else { rank_score(lo) };
        let b = if hi >= 1.0 { f64::INFINITY } else { rank_score(hi) };
        (a, b)
    };
    let window: Vec<Vec<f64>> = s
        .batches
        .iter()
        .map(|batch| {
            batch
                .values
                .iter()
                .map(|&v| s.significance_score(v))
                .filter(|&x| (lo <= 0.0 && x <= b) || (x > a && x <= b))
                .collect()
        })
        .collect();
    Ok((0..s.batches.len())
        .into_par_iter()
        .map(|i| {
            let rest: Vec<f64> = window
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .flat_map(|(_, w)| w.iter().copied())
                .collect();
            let stat = ks_two_sample(&window[i], &rest);
            KsRecord {
                batch_id: s.batches[i].id.clone(),
                batch_size: s.batches[i].values.len(),
                n_tested: window[i].len(),
                d: stat.map(|k| k.d),
                pvalue: stat.map(|k| k.pvalue),
                mode: KsMode::OneVsRest,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucRow {
    pub lo: f64,
    pub hi: f64,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: StatKind,
    pub n_batches: usize,
    pub n_values: usize,
    pub bonferroni_level: f64,
    pub histogram: Option<HistogramRecord>,
    pub ks_records: Vec<KsRecord>,
    pub linear_relations: Vec<LinearRelation>,
    pub r2_curve: Option<R2Curve>,
    pub auc_table: Vec<AucRow>,
    pub warnings: Vec<String>,
}

impl EvalReport {
    /// Batches whose KS p-value falls below the Bonferroni level.
    pub fn ks_failures(&self) -> usize {
        self.ks_records
            .iter()
            .filter(|r| r.pvalue.is_some_and(|p| p < self.bonferroni_level))
            .count()
    }

    pub fn auc(&self, bound: (f64, f64)) -> Option<f64> {
        self.auc_table
            .iter()
            .find(|r| r.lo == bound.0 && r.hi == bound.1)
            .and_then(|r| r.auc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count,expected\n");
        if let Some(h) = &self.histogram {
            for (i, c) in h.counts.iter().enumerate() {
                writeln!(out, "{},{},{},{}", h.bin_edges[i], h.bin_edges[i + 1], c, h.expected_count).unwrap();
            }
        }
        out
    }

    pub fn ks_csv(&self) -> String {
        let mut out = String::from("batch_id,batch_size,n_tested,d,pvalue,mode\n");
        for r in &self.ks_records {
            let mode = match r.mode {
                KsMode::Uniform => "uniform",
                KsMode::OneVsRest => "one_vs_rest",
            };
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.batch_id,
                r.batch_size,
                r.n_tested,
                opt(r.d),
                opt(r.pvalue),
                mode
            )
            .unwrap();
        }
        out
    }

    pub fn scatter_csv(rel: &LinearRelation) -> String {
        let mut out = String::from("batch_id,batch_size,n_significant\n");
        for p in &rel.points {
            writeln!(out, "{},{},{}", p.batch_id, p.batch_size, p.n_significant).unwrap();
        }
        out
    }

    pub fn r2_curve_csv(&self) -> String {
        let mut out = String::from("quantile,threshold,prop_significant,r2,max_significant,saturated\n");
        if let Some(c) = &self.r2_curve {
            for p in &c.points {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    p.quantile,
                    p.threshold,
                    p.prop_significant,
                    opt(p.r2),
                    p.max_significant,
                    p.saturated
                )
                .unwrap();
            }
        }
        out
    }

    pub fn auc_csv(&self) -> String {
        let mut out = String::from("lo,hi,auc\n");
        for r in &self.auc_table {
            writeln!(out, "{},{},{}", r.lo, r.hi, opt(r.auc)).unwrap();
        }
        out
    }

    /// Writes `report.json` and the CSV tables into `dir`, returning the
    /// file names written in order.
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<String>> {
        fs::create_dir_all(dir).map_err(|e| Error::from(e).in_file(dir))?;
        let mut files = vec![
            ("report.json".to_string(), self.to_json()),
            ("histogram.csv".to_string(), self.histogram_csv()),
            ("ks.csv".to_string(), self.ks_csv()),
        ];
        for rel in &self.linear_relations {
            files.push((format!("scatter_q{}.csv", rel.quantile), Self::scatter_csv(rel)));
        }
        files.push(("r2_curve.csv".to_string(), self.r2_curve_csv()));
        files.push(("auc.csv".to_string(), self.auc_csv()));
        for (name, body) in &files {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::from(e).in_file(&path))?;
        }
        Ok(files.into_iter().map(|(n, _)| n).collect())
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Runs every applicable test. Tests that are undefined for the input
/// (too few batches, no values) are skipped with a warning.
pub fn evaluate(s: &BatchedStatistics, options: &EvalOptions) -> Result<EvalReport> {
    options.validate()?;
    let mut warnings = Vec::new();
    let n_batches = s.batches.len();
    let n_values = s.n_values();
    let empty = s.batches.iter().filter(|b| b.values.is_empty()).count();
    if empty > 0 {
        warnings.push(format!("{empty} empty batch(es) excluded from cross-batch tests"));
    }

    let (histogram, ks_records) = match s.kind {
        StatKind::Pvalue => (
            Some(histogram_test(s, options.n_bins, options.lower, options.exclude_ones)?),
            ks_records_uniform(s, options.ks_bounds)?,
        ),
        StatKind::Generic(_) if n_batches >= 2 => (None, ks_records_one_vs_rest(s, options.ks_bounds)?),
        StatKind::Generic(_) => {
            warnings.push("one-vs-rest KS skipped: fewer than two batches".into());
            (None, Vec::new())
        }
    };

    let mut linear_relations = Vec::new();
    let mut curve = None;
    let mut auc_table = Vec::new();
    if n_values == 0 {
        warnings.push("no values: cross-batch tests skipped".into());
    } else {
        if s.n_nonempty() < 3 {
            warnings.push("fewer than three non-empty batches: R^2 undefined".into());
        }
        for &q in &options.scatter_quantiles {
            linear_relations.push(linear_relation(s, q)?);
        }
        let c = r2_curve(s, options.n_thresholds)?;
        for &(lo, hi) in &options.auc_bounds {
            let auc = partial_auc(&c, (lo, hi)).ok();
            if auc.is_none() {
                warnings.push(format!("AUC on [{lo}, {hi}] undefined: no defined R^2 points"));
            }
            auc_table.push(AucRow { lo, hi, auc });
        }
        curve = Some(c);
    }

    Ok(EvalReport {
        kind: s.kind,
        n_batches,
        n_values,
        bonferroni_level: 0.05 / n_batches.max(1) as f64,
        histogram,
        ks_records,
        linear_relations,
        r2_curve: curve,
        auc_table,
        warnings,
    })
}
