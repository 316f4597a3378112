//! Tabular ingestion and column preprocessing.
//!
//! A [`DataMatrix`] holds samples in rows and variables in columns, stored
//! column-major so that a variable is a contiguous slice.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Field separator of a delimited text file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Tsv,
    Csv,
}

impl TableFormat {
    pub fn delimiter(self) -> char {
        match self {
            TableFormat::Tsv => '\t',
            TableFormat::Csv => ',',
        }
    }

    /// Guesses the format from a file extension, defaulting to TSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => TableFormat::Csv,
            _ => TableFormat::Tsv,
        }
    }
}

/// Relative tolerance on a column mean for the column to count as centered.
const CENTER_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    n_samples: usize,
    n_vars: usize,
    values: Vec<f64>,
    var_names: Vec<String>,
    centered: bool,
}

impl DataMatrix {
    /// Builds an uncentered matrix from named columns.
    pub fn from_columns(var_names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if var_names.len() != columns.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} names for {} columns",
                var_names.len(),
                columns.len()
            )));
        }
        if columns.is_empty() {
            return Err(Error::invalid("a data matrix needs at least one variable"));
        }
        let n_samples = columns[0].len();
        if n_samples < 2 {
            return Err(Error::invalid(format!(
                "a data matrix needs at least 2 samples, found {n_samples}"
            )));
        }
        let mut values = Vec::with_capacity(n_samples * columns.len());
        for (name, col) in var_names.iter().zip(&columns) {
            if col.len() != n_samples {
                return Err(Error::DimensionMismatch(format!(
                    "column `{name}` has {} values, expected {n_samples}",
                    col.len()
                )));
            }
            if let Some(v) = col.iter().find(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("column `{name}` holds non-finite value {v}")));
            }
            values.extend_from_slice(col);
        }
        Ok(DataMatrix {
            n_samples,
            n_vars: columns.len(),
            values,
            var_names,
            centered: false,
        })
    }

    /// Builds a matrix from column-major storage. The `centered` flag is
    /// recomputed from the data.
    pub fn from_column_major(var_names: Vec<String>, n_samples: usize, values: Vec<f64>) -> Result<Self> {
        let n_vars = var_names.len();
        if n_vars == 0 || n_samples < 2 || values.len() != n_vars * n_samples {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {n_samples} samples x {n_vars} variables",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("matrix holds non-finite values"));
        }
        let mut m = DataMatrix {
            n_samples,
            n_vars,
            values,
            var_names,
            centered: false,
        };
        m.centered = (0..n_vars).all(|j| column_is_centered(m.column(j)));
        Ok(m)
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn var_names(&self) -> &[String] {
        &self.var_names
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    /// Column-major backing storage.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_samples..(i + 1) * self.n_samples]
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[col * self.n_samples + row]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.var_names.iter().position(|n| n == name)
    }

    /// New matrix holding the given columns in the given order.
    pub fn select_columns(&self, indices: &[usize]) -> Result<DataMatrix> {
        let mut values = Vec::with_capacity(indices.len() * self.n_samples);
        let mut names = Vec::with_capacity(indices.len());
        for &i in indices {
            self.check_index(i)?;
            values.extend_from_slice(self.column(i));
            names.push(self.var_names[i].clone());
        }
        if names.is_empty() {
            return Err(Error::invalid("cannot select zero columns"));
        }
        Ok(DataMatrix {
            n_samples: self.n_samples,
            n_vars: names.len(),
            values,
            var_names: names,
            centered: self.centered,
        })
    }

    /// Subtracts each column's mean. Variances are left as they are.
    pub fn center_columns(&self) -> DataMatrix {
        let mut out = self.clone();
        for col in out.values.chunks_exact_mut(self.n_samples) {
            center_in_place(col);
        }
        out.centered = true;
        out
    }

    /// Replaces every entry by the standard normal quantile of its adjusted
    /// rank, `(rank - 0.5) / n`, with average ranks for ties, then centers.
    pub fn rank_inverse_normal(&self) -> Result<DataMatrix> {
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        let n = self.n_samples as f64;
        let mut out = self.clone();
        for (j, col) in out.values.chunks_exact_mut(self.n_samples).enumerate() {
            let ranks = average_ranks(col);
            if ranks.iter().all(|&r| r == ranks[0]) {
                return Err(Error::DegenerateColumn(self.var_names[j].clone()));
            }
            for (v, r) in col.iter_mut().zip(ranks) {
                *v = normal.inverse_cdf((r - 0.5) / n);
            }
            center_in_place(col);
        }
        out.centered = true;
        Ok(out)
    }

    /// Population variance `|x_i|^2 / n` of a centered column.
    pub fn column_variance(&self, i: usize) -> Result<f64> {
        self.check_index(i)?;
        Ok(mean_square(self.column(i)))
    }

    /// Writes a header row of names followed by one row per sample.
    pub fn write_table(&self, path: &Path, format: TableFormat) -> Result<()> {
        fs::write(path, self.to_table_string(format)).map_err(|e| Error::from(e).in_file(path))
    }

    pub fn to_table_string(&self, format: TableFormat) -> String {
        let delim = format.delimiter();
        let mut out = String::with_capacity(self.values.len() * 20);
        out.push_str(&self.var_names.join(&delim.to_string()));
        out.push('\n');
        for row in 0..self.n_samples {
            for col in 0..self.n_vars {
                if col > 0 {
                    out.push(delim);
                }
                write!(out, "{}", self.value(row, col)).unwrap();
            }
            out.push('\n');
        }
        out
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.n_vars {
            return Err(Error::IndexOutOfRange {
                index: i,
                n_vars: self.n_vars,
            });
        }
        Ok(())
    }
}

/// Reads a delimited table with a header row of variable names.
///
/// Parse errors report 1-based data rows (the header is row 0) and 1-based
/// columns.
pub fn load_matrix(path: &Path, format: TableFormat) -> Result<DataMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
    parse_matrix(&text, format).map_err(|e| e.in_file(path))
}

pub fn parse_matrix(text: &str, format: TableFormat) -> Result<DataMatrix> {
    let delim = format.delimiter();
    let mut lines = text
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());

    let (_, header) = lines.next().ok_or(Error::EmptyInput)?;
    let names: Vec<String> = header.split(delim).map(|s| s.trim().to_string()).collect();
    if let Some(pos) = names.iter().position(|n| n.is_empty()) {
        return Err(Error::Parse {
            row: 0,
            col: pos + 1,
            msg: "empty variable name".into(),
        });
    }

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    let mut n_rows = 0;
    for (row, line) in lines.map(|(_, l)| l).enumerate().map(|(i, l)| (i + 1, l)) {
        let fields: Vec<&str> = line.split(delim).collect();
        if fields.len() != names.len() {
            return Err(Error::RaggedRow {
                row,
                expected: names.len(),
                found: fields.len(),
            });
        }
        for (col, field) in fields.iter().enumerate() {
            let field = field.trim();
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                col: col + 1,
                msg: if field.is_empty() {
                    "missing value".into()
                } else {
                    format!("non-numeric value `{field}`")
                },
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    col: col + 1,
                    msg: format!("non-finite value `{field}`"),
                });
            }
            columns[col].push(v);
        }
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(Error::EmptyInput);
    }
    DataMatrix::from_columns(names, columns)
}

pub(crate) fn center_in_place(col: &mut [f64]) {
    let mean = col.iter().sum::<f64>() / col.len() as f64;
    for v in col.iter_mut() {
        *v -= mean;
    }
}

pub(crate) fn mean_square(col: &[f64]) -> f64 {
    col.iter().map(|v| v * v).sum::<f64>() / col.len() as f64
}

pub(crate) fn column_is_centered(col: &[f64]) -> bool {
    let scale = col.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let mean = col.iter().sum::<f64>() / col.len() as f64;
    mean.abs() <= CENTER_TOL * scale
}

/// 1-based ranks, ties receiving the average of the ranks they span.
pub(crate) fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end share their mean
        let avg = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    ranks
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single(col: Vec<f64>) -> DataMatrix {
        DataMatrix::from_columns(vec!["a".into()], vec![col]).unwrap()
    }

    #[test]
    fn parses_shape() {
        let m = parse_matrix("a\tb\n1\t2\n3\t4\n5\t6\n", TableFormat::Tsv).unwrap();
        assert_eq!((m.n_samples(), m.n_vars()), (3, 2));
        assert_eq!(m.column(1), &[2.0, 4.0, 6.0]);
        assert!(!m.is_centered());
    }

    #[test]
    fn parses_csv_with_crlf() {
        let m = parse_matrix("x,y\r\n1.5,2\r\n-3,4e2\r\n", TableFormat::Csv).unwrap();
        assert_eq!(m.column(1), &[2.0, 400.0]);
    }

    #[test]
    fn non_numeric_cell_is_located() {
        let err = parse_matrix("a\tb\n1\t2\nfoo\t4\n", TableFormat::Tsv).unwrap_err();
        match err {
            Error::Parse { row, col, .. } => assert_eq!((row, col), (2, 1)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_cell_is_parse_error() {
        let err = parse_matrix("a\tb\n1\t\n3\t4\n", TableFormat::Tsv).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 1, col: 2, .. }), "{err}");
    }

    #[test]
    fn ragged_rows_rejected() {
        let err = parse_matrix("a\tb\n1\t2\n3\n", TableFormat::Tsv).unwrap_err();
        assert!(matches!(err, Error::RaggedRow { row: 2, expected: 2, found: 1 }));
    }

    #[test]
    fn empty_file() {
        let err = parse_matrix("", TableFormat::Tsv).unwrap_err();
        assert_eq!(err.to_string(), "empty input");
        assert!(matches!(parse_matrix("a\tb\n", TableFormat::Tsv), Err(Error::EmptyInput)));
    }

    #[test]
    fn load_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "a,b\n1,2\n3,4\n").unwrap();
        let m = load_matrix(&path, TableFormat::from_path(&path)).unwrap();
        assert_eq!(m.n_samples(), 2);
        let err = load_matrix(&dir.path().join("nope.tsv"), TableFormat::Tsv).unwrap_err();
        assert!(err.to_string().contains("nope.tsv"));
    }

    #[test]
    fn table_round_trip() {
        let m = single(vec![0.1, -2.5, 1e-300]);
        let back = parse_matrix(&m.to_table_string(TableFormat::Tsv), TableFormat::Tsv).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn centering() {
        let m = single(vec![1.0, 2.0, 3.0]).center_columns();
        assert_eq!(m.column(0), &[-1.0, 0.0, 1.0]);
        assert!(m.is_centered());
        let twice = m.center_columns();
        for (a, b) in twice.column(0).iter().zip(m.column(0)) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert_eq!(single(vec![5.0, 5.0]).center_columns().column(0), &[0.0, 0.0]);
    }

    #[test]
    fn variance_uses_population_divisor() {
        let m = single(vec![-1.0, 0.0, 1.0]);
        assert_abs_diff_eq!(m.column_variance(0).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(single(vec![-2.0, 2.0]).column_variance(0).unwrap(), 4.0);
        assert_eq!(single(vec![0.0, 0.0]).column_variance(0).unwrap(), 0.0);
        assert!(matches!(
            m.column_variance(1),
            Err(Error::IndexOutOfRange { index: 1, n_vars: 1 })
        ));
    }

    #[test]
    fn average_ranks_with_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn rank_transform_rejects_constant_column() {
        let err = single(vec![2.0, 2.0, 2.0]).rank_inverse_normal().unwrap_err();
        assert!(matches!(err, Error::DegenerateColumn(ref n) if n == "a"));
    }

    #[test]
    fn rank_transform_is_odd() {
        let col = vec![0.3, -4.0, 2.0, 2.0, 9.0, -1.0];
        let neg: Vec<f64> = col.iter().map(|v| -v).collect();
        let a = single(col).rank_inverse_normal().unwrap();
        let b = single(neg).rank_inverse_normal().unwrap();
        for (x, y) in a.column(0).iter().zip(b.column(0)) {
            assert_abs_diff_eq!(*x, -*y, epsilon = 1e-12);
        }
    }
}
