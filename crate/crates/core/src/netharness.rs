//! Network scaffolding for batched selection experiments: greedy maximal
//! DAGs from scored edges, one regression task per node with parents,
//! degree-based dataset reduction and null data generation.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{center_in_place, DataMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEdge {
    pub source: String,
    pub target: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoredEdgeList {
    edges: Vec<ScoredEdge>,
}

impl ScoredEdgeList {
    pub fn new(edges: Vec<ScoredEdge>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &edges {
            if !e.score.is_finite() {
                return Err(Error::invalid(format!("edge {} -> {} has non-finite score", e.source, e.target)));
            }
            if e.source == e.target {
                return Err(Error::invalid(format!("self-loop on `{}`", e.source)));
            }
            if !seen.insert((e.source.as_str(), e.target.as_str())) {
                return Err(Error::invalid(format!("duplicate edge {} -> {}", e.source, e.target)));
            }
        }
        Ok(ScoredEdgeList { edges })
    }

    pub fn edges(&self) -> &[ScoredEdge] {
        &self.edges
    }

    /// Tab-separated `source, target, score` with a header row.
    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        for (row, fields) in data_rows(text, 3)? {
            let score = fields[2].parse::<f64>().map_err(|_| Error::Parse {
                row,
                col: 3,
                msg: format!("`{}` is not a number", fields[2]),
            })?;
            edges.push(ScoredEdge {
                source: fields[0].to_string(),
                target: fields[1].to_string(),
                score,
            });
        }
        Self::new(edges)
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        Self::parse_tsv(&text).map_err(|e| e.in_file(path))
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("source\ttarget\tscore\n");
        for e in &self.edges {
            writeln!(out, "{}\t{}\t{}", e.source, e.target, e.score).unwrap();
        }
        out
    }
}

/// Header-checked rows of exactly `width` tab-separated fields, numbered
/// from 1 after the header.
fn data_rows(text: &str, width: usize) -> Result<Vec<(usize, Vec<&str>)>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or(Error::EmptyInput)?;
    let found = header.split('\t').count();
    if found != width {
        return Err(Error::RaggedRow {
            row: 0,
            expected: width,
            found,
        });
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if fields.len() != width {
                return Err(Error::RaggedRow {
                    row: i + 1,
                    expected: width,
                    found: fields.len(),
                });
            }
            Ok((i + 1, fields))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dag {
    nodes: Vec<String>,
    /// Parents of each node, sorted by node index.
    preds: Vec<Vec<usize>>,
    /// Edges in acceptance order.
    edges: Vec<(usize, usize)>,
}

impl Dag {
    /// Builds a DAG over `nodes` from edges given as node indices, rejecting
    /// cycles.
    pub fn from_edges(nodes: Vec<String>, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, name) in nodes.iter().enumerate() {
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!("duplicate node `{name}` (index {i})")));
            }
        }
        let mut preds = vec![Vec::new(); nodes.len()];
        let mut pairs = HashSet::new();
        for &(s, t) in &edges {
            if s >= nodes.len() || t >= nodes.len() {
                return Err(Error::IndexOutOfRange {
                    index: s.max(t),
                    n_vars: nodes.len(),
                });
            }
            if s == t {
                return Err(Error::Cycle(nodes[s].clone()));
            }
            if !pairs.insert((s, t)) {
                return Err(Error::invalid(format!("duplicate edge {} -> {}", nodes[s], nodes[t])));
            }
            preds[t].push(s);
        }
        for p in &mut preds {
            p.sort_unstable();
        }
        let dag = Dag { nodes, preds, edges };
        dag.topological_order()?;
        Ok(dag)
    }

    pub fn empty() -> Self {
        Dag {
            nodes: Vec::new(),
            preds: Vec::new(),
            edges: Vec::new(),
        }
    }

    /// Complete DAG over a uniformly random ordering of `names`: every node
    /// has all earlier nodes as parents. Node order is kept as given.
    pub fn complete_random_order(names: &[String], seed: u64) -> Result<Self> {
        let mut order: Vec<usize> = (0..names.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut edges = Vec::with_capacity(names.len() * names.len().saturating_sub(1) / 2);
        for j in 1..order.len() {
            for i in 0..j {
                edges.push((order[i], order[j]));
            }
        }
        Self::from_edges(names.to_vec(), edges)
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == name)
    }

    pub fn predecessors(&self, node: usize) -> &[usize] {
        &self.preds[node]
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degree(&self, node: usize) -> usize {
        self.degrees()[node]
    }

    fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.nodes.len()];
        for &(s, t) in &self.edges {
            deg[s] += 1;
            deg[t] += 1;
        }
        deg
    }

    /// Kahn's algorithm; smallest available index first.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let n = self.nodes.len();
        let mut indeg: Vec<usize> = self.preds.iter().map(Vec::len).collect();
        let mut succ = vec![Vec::new(); n];
        for &(s, t) in &self.edges {
            succ[s].push(t);
        }
        let mut ready: std::collections::BinaryHeap<std::cmp::Reverse<usize>> =
            (0..n).filter(|&i| indeg[i] == 0).map(std::cmp::Reverse).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(std::cmp::Reverse(v)) = ready.pop() {
            order.push(v);
            for &t in &succ[v] {
                indeg[t] -= 1;
                if indeg[t] == 0 {
                    ready.push(std::cmp::Reverse(t));
                }
            }
        }
        if order.len() < n {
            let stuck = (0..n).find(|&i| indeg[i] > 0).unwrap();
            return Err(Error::Cycle(self.nodes[stuck].clone()));
        }
        Ok(order)
    }

    /// `source\ttarget` rows in acceptance order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("source\ttarget\n");
        for &(s, t) in &self.edges {
            writeln!(out, "{}\t{}", self.nodes[s], self.nodes[t]).unwrap();
        }
        out
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::from(e).in_file(path))
    }

    /// Reads an edge file; nodes are numbered in order of first appearance.
    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut nodes: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut edges = Vec::new();
        for (_, fields) in data_rows(text, 2)? {
            let mut id = |name: &str| {
                *index.entry(name.to_string()).or_insert_with(|| {
                    nodes.push(name.to_string());
                    nodes.len() - 1
                })
            };
            let s = id(fields[0]);
            let t = id(fields[1]);
            edges.push((s, t));
        }
        Self::from_edges(nodes, edges)
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        Self::parse_tsv(&text).map_err(|e| e.in_file(path))
    }
}

/// Adds edges in descending score order, ties broken by `(source, target)`,
/// skipping any edge that would close a directed cycle. Nodes are sorted by
/// name.
pub fn greedy_max_dag(e: &ScoredEdgeList) -> Dag {
    let mut names: Vec<&str> = e
        .edges
        .iter()
        .flat_map(|x| [x.source.as_str(), x.target.as_str()])
        .collect();
    names.sort_unstable();
    names.dedup();
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (*n, i)).collect();

    let mut order: Vec<&ScoredEdge> = e.edges.iter().collect();
    order.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.source.cmp(&b.source))
            .then_with(|| a.target.cmp(&b.target))
    });

    let n = names.len();
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut edges = Vec::new();
    let mut mark = vec![0u32; n];
    let mut stamp = 0u32;
    let mut stack = Vec::new();
    for edge in order {
        let (s, t) = (index[edge.source.as_str()], index[edge.target.as_str()]);
        stamp += 1;
        // does t already reach s?
        stack.clear();
        stack.push(t);
        mark[t] = stamp;
        let mut cycle = false;
        while let Some(v) = stack.pop() {
            if v == s {
                cycle = true;
                break;
            }
            for &w in &succ[v] {
                if mark[w] != stamp {
                    mark[w] = stamp;
                    stack.push(w);
                }
            }
        }
        if cycle {
            log::debug!("discarding {} -> {}: closes a cycle", edge.source, edge.target);
            continue;
        }
        succ[s].push(t);
        preds[t].push(s);
        edges.push((s, t));
    }
    for p in &mut preds {
        p.sort_unstable();
    }
    Dag {
        nodes: names.into_iter().map(String::from).collect(),
        preds,
        edges,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTask {
    /// Batch id; the target variable's name.
    pub target: String,
    pub target_column: usize,
    pub predictor_columns: Vec<usize>,
}

/// One task per DAG node with at least one parent, in node order.
pub fn batches_from_dag(d: &Dag, m: &DataMatrix) -> Result<Vec<RegressionTask>> {
    let columns = column_map(d, m)?;
    Ok((0..d.nodes.len())
        .filter(|&v| !d.preds[v].is_empty())
        .map(|v| RegressionTask {
            target: d.nodes[v].clone(),
            target_column: columns[v],
            predictor_columns: d.preds[v].iter().map(|&p| columns[p]).collect(),
        })
        .collect())
}

fn column_map(d: &Dag, m: &DataMatrix) -> Result<Vec<usize>> {
    let lookup: HashMap<&str, usize> = m.var_names().iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    d.nodes
        .iter()
        .map(|n| lookup.get(n.as_str()).copied().ok_or_else(|| Error::UnknownVariable(n.clone())))
        .collect()
}

/// Keeps the `k` nodes of highest degree (ties by name), with the induced
/// sub-DAG and the matching matrix columns in node order.
pub fn reduce_dataset(d: &Dag, m: &DataMatrix, k: usize) -> Result<(Dag, DataMatrix)> {
    if k == 0 {
        return Err(Error::invalid("reduction size must be positive"));
    }
    if k > d.nodes.len() {
        return Err(Error::invalid(format!(
            "cannot keep {k} of {} DAG nodes",
            d.nodes.len()
        )));
    }
    let columns = column_map(d, m)?;
    let deg = d.degrees();
    let mut ranked: Vec<usize> = (0..d.nodes.len()).collect();
    ranked.sort_by(|&a, &b| deg[b].cmp(&deg[a]).then_with(|| d.nodes[a].cmp(&d.nodes[b])));
    let mut keep = ranked[..k].to_vec();
    keep.sort_unstable();

    let mut new_index = vec![usize::MAX; d.nodes.len()];
    for (i, &v) in keep.iter().enumerate() {
        new_index[v] = i;
    }
    let edges: Vec<(usize, usize)> = d
        .edges
        .iter()
        .filter(|&&(s, t)| new_index[s] != usize::MAX && new_index[t] != usize::MAX)
        .map(|&(s, t)| (new_index[s], new_index[t]))
        .collect();
    let sub = Dag::from_edges(keep.iter().map(|&v| d.nodes[v].clone()).collect(), edges)?;
    let matrix = m.select_columns(&keep.iter().map(|&v| columns[v]).collect::<Vec<_>>())?;
    Ok((sub, matrix))
}

/// Names `v1..vK`, zero-padded so lexicographic and numeric order agree.
pub fn null_names(n_vars: usize) -> Vec<String> {
    let width = n_vars.to_string().len();
    (1..=n_vars).map(|i| format!("v{i:0width$}")).collect()
}

/// Iid standard normal matrix, centered per column, filled column by column
/// from a ChaCha stream seeded with `seed`.
pub fn generate_null(n_samples: usize, n_vars: usize, seed: u64) -> Result<DataMatrix> {
    if n_samples < 2 || n_vars == 0 {
        return Err(Error::invalid(format!(
            "null data needs at least 2 samples and 1 variable, got {n_samples} x {n_vars}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values: Vec<f64> = (0..n_samples * n_vars).map(|_| rng.sample(StandardNormal)).collect();
    for col in values.chunks_mut(n_samples) {
        center_in_place(col);
    }
    DataMatrix::from_column_major(null_names(n_vars), n_samples, values)
}
