//! News proximity graph: active-user engagement matrix B, its projection
//! A_n = BᵀB onto articles, and the symmetric normalization
//! A_T = D^{-1/2} A_n D^{-1/2} with D the row sums of A_n.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ActivityMeasure, Dataset};
use crate::matrix::{fmt_f64, Matrix};

/// Sparse |U'|×N matrix of repost counts for active users.
#[derive(Debug, Clone, PartialEq)]
pub struct EngagementMatrix {
    n_articles: usize,
    users: Vec<String>,
    rows: Vec<Vec<(usize, u64)>>,
}

impl EngagementMatrix {
    /// Rows of (article column, count); duplicate columns within a row are summed.
    pub fn from_rows(n_articles: usize, rows: Vec<Vec<(usize, u64)>>) -> Result<Self> {
        let rows = rows
            .into_iter()
            .map(|row| {
                let mut merged: Vec<(usize, u64)> = Vec::with_capacity(row.len());
                let mut row = row;
                row.sort_unstable();
                for (col, v) in row {
                    if col >= n_articles {
                        return Err(Error::DimensionMismatch(format!(
                            "column {col} out of range for {n_articles} articles"
                        )));
                    }
                    match merged.last_mut() {
                        Some((c, acc)) if *c == col => *acc += v,
                        _ => merged.push((col, v)),
                    }
                }
                merged.retain(|&(_, v)| v > 0);
                Ok(merged)
            })
            .collect::<Result<Vec<_>>>()?;
        let users = (0..rows.len()).map(|k| format!("row{k}")).collect();
        Ok(Self {
            n_articles,
            users,
            rows,
        })
    }

    pub fn n_users(&self) -> usize {
        self.rows.len()
    }

    pub fn n_articles(&self) -> usize {
        self.n_articles
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn row(&self, k: usize) -> &[(usize, u64)] {
        &self.rows[k]
    }

    pub fn get(&self, user: usize, article: usize) -> u64 {
        self.rows[user]
            .binary_search_by_key(&article, |&(c, _)| c)
            .map_or(0, |p| self.rows[user][p].1)
    }

    /// Every count multiplied by `factor`.
    pub fn scaled(&self, factor: u64) -> Self {
        Self {
            n_articles: self.n_articles,
            users: self.users.clone(),
            rows: self
                .rows
                .iter()
                .map(|r| r.iter().map(|&(c, v)| (c, v * factor)).collect())
                .collect(),
        }
    }
}

/// Keeps users whose activity is at least `t_u`; columns always span all N articles.
pub fn filter_active_users(dataset: &Dataset, t_u: u64, measure: ActivityMeasure) -> Result<EngagementMatrix> {
    if t_u < 1 {
        return Err(Error::InvalidParameter("t_u must be at least 1".into()));
    }
    let activity = dataset.user_activity(measure);
    let mut rows: Vec<Vec<(usize, u64)>> = vec![Vec::new(); dataset.n_users()];
    for l in dataset.links() {
        rows[l.user].push((l.article, l.reposts));
    }
    let mut users = Vec::new();
    let mut kept = Vec::new();
    for ((user, mut row), act) in dataset.users().iter().zip(rows).zip(activity) {
        if act >= t_u {
            row.sort_unstable();
            users.push(user.clone());
            kept.push(row);
        }
    }
    Ok(EngagementMatrix {
        n_articles: dataset.n_articles(),
        users,
        rows: kept,
    })
}

/// Symmetric sparse matrix holding each unordered pair once (i ≤ j).
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    n: usize,
    upper: Vec<(usize, usize, f64)>,
}

impl SymmetricMatrix {
    /// Upper-triangle entries; (j, i) with j > i is folded to (i, j). Repeats are rejected.
    pub fn from_upper(n: usize, entries: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut upper: Vec<(usize, usize, f64)> = entries
            .into_iter()
            .map(|(i, j, v)| if i <= j { (i, j, v) } else { (j, i, v) })
            .collect();
        upper.sort_by_key(|a| (a.0, a.1));
        for w in upper.windows(2) {
            if (w[0].0, w[0].1) == (w[1].0, w[1].1) {
                return Err(Error::DimensionMismatch(format!(
                    "entry ({}, {}) given twice",
                    w[0].0, w[0].1
                )));
            }
        }
        if let Some(&(i, j, _)) = upper.iter().find(|e| e.1 >= n) {
            return Err(Error::DimensionMismatch(format!("entry ({i}, {j}) outside {n}x{n}")));
        }
        upper.retain(|e| e.2 != 0.0);
        Ok(Self { n, upper })
    }

    /// From a dense square matrix that must be exactly symmetric.
    pub fn from_dense(dense: &[Vec<f64>]) -> Result<Self> {
        let n = dense.len();
        let mut upper = Vec::new();
        for (i, row) in dense.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch(format!("row {i} is not length {n}")));
            }
            for j in i..n {
                if row[j] != dense[j][i] {
                    return Err(Error::DimensionMismatch(format!("asymmetric at ({i}, {j})")));
                }
                if row[j] != 0.0 {
                    upper.push((i, j, row[j]));
                }
            }
        }
        Ok(Self { n, upper })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Stored (i ≤ j) entries in row-major order.
    pub fn upper(&self) -> &[(usize, usize, f64)] {
        &self.upper
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let key = if i <= j { (i, j) } else { (j, i) };
        self.upper
            .binary_search_by_key(&key, |e| (e.0, e.1))
            .map_or(0.0, |p| self.upper[p].2)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n];
        for &(i, j, v) in &self.upper {
            sums[i] += v;
            if i != j {
                sums[j] += v;
            }
        }
        sums
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for &(i, j, v) in &self.upper {
            d[i][j] = v;
            d[j][i] = v;
        }
        d
    }
}

/// A_n = BᵀB, accumulated from each user's outer product over their nonzero columns.
pub fn project(b: &EngagementMatrix) -> SymmetricMatrix {
    let mut acc: HashMap<(usize, usize), u64> = HashMap::new();
    for row in &b.rows {
        for (p, &(i, vi)) in row.iter().enumerate() {
            for &(j, vj) in &row[p..] {
                *acc.entry((i, j)).or_default() += vi * vj;
            }
        }
    }
    let mut upper: Vec<(usize, usize, f64)> = acc.into_iter().map(|((i, j), v)| (i, j, v as f64)).collect();
    upper.sort_by_key(|a| (a.0, a.1));
    SymmetricMatrix { n: b.n_articles, upper }
}

/// Treatment of articles whose degree is zero after projection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IsolatedPolicy {
    /// A_T[i][i] = 1, so propagation keeps the article's own scores.
    #[default]
    SelfLoop,
    /// Leave the row empty.
    Zero,
}

impl IsolatedPolicy {
    fn as_str(self) -> &'static str {
        match self {
            IsolatedPolicy::SelfLoop => "self-loop",
            IsolatedPolicy::Zero => "zero",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizeOptions {
    /// Drop A_n's diagonal (self-readership mass) before normalizing.
    #[serde(default)]
    pub zero_diagonal: bool,
    #[serde(default)]
    pub isolated: IsolatedPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphMeta {
    pub t_u: Option<u64>,
    pub measure: ActivityMeasure,
    pub options: NormalizeOptions,
}

/// Normalized symmetric article graph A_T, kept in CSR form for propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct ProximityGraph {
    weights: SymmetricMatrix,
    degrees: Vec<f64>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    pub meta: GraphMeta,
}

pub fn normalize(a_n: &SymmetricMatrix, options: NormalizeOptions) -> Result<ProximityGraph> {
    if let Some(&(row, col, value)) = a_n.upper.iter().find(|e| e.2 < 0.0 || e.2.is_nan()) {
        return Err(Error::NegativeEntry { row, col, value });
    }
    let source = if options.zero_diagonal {
        SymmetricMatrix {
            n: a_n.n,
            upper: a_n.upper.iter().copied().filter(|e| e.0 != e.1).collect(),
        }
    } else {
        a_n.clone()
    };
    let degrees = source.row_sums();
    let mut upper: Vec<(usize, usize, f64)> = source
        .upper
        .iter()
        .map(|&(i, j, v)| (i, j, v / (degrees[i] * degrees[j]).sqrt()))
        .collect();
    if options.isolated == IsolatedPolicy::SelfLoop {
        upper.extend(
            degrees
                .iter()
                .enumerate()
                .filter(|(_, &d)| d == 0.0)
                .map(|(i, _)| (i, i, 1.0)),
        );
        upper.sort_by_key(|a| (a.0, a.1));
    }
    let weights = SymmetricMatrix { n: a_n.n, upper };
    Ok(ProximityGraph::assemble(
        weights,
        degrees,
        GraphMeta {
            t_u: None,
            measure: ActivityMeasure::default(),
            options,
        },
    ))
}

/// Everything needed to go from a dataset to A_T.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphConfig {
    #[serde(default = "default_t_u")]
    pub t_u: u64,
    #[serde(default)]
    pub measure: ActivityMeasure,
    #[serde(default, flatten)]
    pub options: NormalizeOptions,
}

fn default_t_u() -> u64 {
    5
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            t_u: default_t_u(),
            measure: ActivityMeasure::ByArticle,
            options: NormalizeOptions::default(),
        }
    }
}

pub fn build_graph(dataset: &Dataset, config: &GraphConfig) -> Result<ProximityGraph> {
    let b = filter_active_users(dataset, config.t_u, config.measure)?;
    let mut graph = normalize(&project(&b), config.options)?;
    graph.meta.t_u = Some(config.t_u);
    graph.meta.measure = config.measure;
    Ok(graph)
}

impl ProximityGraph {
    fn assemble(weights: SymmetricMatrix, degrees: Vec<f64>, meta: GraphMeta) -> Self {
        let n = weights.n;
        let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in &weights.upper {
            adjacency[i].push((j, v));
            if i != j {
                adjacency[j].push((i, v));
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in adjacency {
            row.sort_by_key(|e| e.0);
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Self {
            weights,
            degrees,
            row_ptr,
            cols,
            vals,
            meta,
        }
    }

    pub fn n(&self) -> usize {
        self.weights.n
    }

    /// Row sums of A_n (after the optional diagonal removal).
    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn weights(&self) -> &SymmetricMatrix {
        &self.weights
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights.get(i, j)
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.vals[range].iter().copied())
    }

    pub fn edge_count(&self) -> usize {
        self.weights.upper.len()
    }

    /// A_T · H, one output row per article, computed in parallel.
    pub fn mul(&self, h: &Matrix) -> Result<Matrix> {
        if h.rows() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "graph has {} nodes, matrix has {} rows",
                self.n(),
                h.rows()
            )));
        }
        let c = h.cols();
        let mut out = Matrix::zeros(h.rows(), c);
        if c == 0 {
            return Ok(out);
        }
        out.as_mut_slice().par_chunks_mut(c).enumerate().for_each(|(i, dst)| {
            for (j, w) in self.neighbors(i) {
                for (d, s) in dst.iter_mut().zip(h.row(j)) {
                    *d += w * s;
                }
            }
        });
        Ok(out)
    }

    /// Coordinate-list dump: a `#` header with N, t_u and policies, a `#`
    /// degree line, then "i,j,value" rows for i ≤ j.
    pub fn write(&self, mut w: impl Write) -> std::io::Result<()> {
        let t_u = self.meta.t_u.map_or_else(|| "none".to_string(), |t| t.to_string());
        let measure = match self.meta.measure {
            ActivityMeasure::ByArticle => "by-article",
            ActivityMeasure::ByRepost => "by-repost",
        };
        let diagonal = if self.meta.options.zero_diagonal {
            "zero"
        } else {
            "keep"
        };
        writeln!(
            w,
            "# n={} t_u={t_u} measure={measure} diagonal={diagonal} isolated={}",
            self.n(),
            self.meta.options.isolated.as_str()
        )?;
        let degrees: Vec<String> = self.degrees.iter().map(|&d| fmt_f64(d)).collect();
        writeln!(w, "# degrees {}", degrees.join(" "))?;
        writeln!(w, "i,j,value")?;
        for &(i, j, v) in &self.weights.upper {
            writeln!(w, "{i},{j},{}", fmt_f64(v))?;
        }
        Ok(())
    }

    pub fn read(reader: impl BufRead, context: &str) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, Ok(l))) => Ok((i + 1, l)),
                Some((i, Err(e))) => Err(Error::parse(context, i + 1, e)),
                None => Err(Error::parse(context, 0, format!("missing {what}"))),
            }
        };

        let (lno, header) = next("header")?;
        let header = header
            .strip_prefix("# ")
            .ok_or_else(|| Error::parse(context, lno, "expected '# ' header"))?;
        let fields: HashMap<&str, &str> = header.split_whitespace().filter_map(|kv| kv.split_once('=')).collect();
        let field = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::parse(context, lno, format!("header lacks {k}")))
        };
        let n: usize = field("n")?
            .parse()
            .map_err(|e| Error::parse(context, lno, format!("n: {e}")))?;
        let t_u = match field("t_u")? {
            "none" => None,
            t => Some(t.parse().map_err(|e| Error::parse(context, lno, format!("t_u: {e}")))?),
        };
        let measure = match field("measure")? {
            "by-article" => ActivityMeasure::ByArticle,
            "by-repost" => ActivityMeasure::ByRepost,
            m => return Err(Error::parse(context, lno, format!("unknown measure {m}"))),
        };
        let zero_diagonal = match field("diagonal")? {
            "keep" => false,
            "zero" => true,
            d => return Err(Error::parse(context, lno, format!("unknown diagonal policy {d}"))),
        };
        let isolated = match field("isolated")? {
            "self-loop" => IsolatedPolicy::SelfLoop,
            "zero" => IsolatedPolicy::Zero,
            p => return Err(Error::parse(context, lno, format!("unknown isolated policy {p}"))),
        };

        let (lno, deg_line) = next("degree line")?;
        let deg_line = deg_line
            .strip_prefix("# degrees")
            .ok_or_else(|| Error::parse(context, lno, "expected '# degrees' line"))?;
        let degrees = deg_line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| Error::parse(context, lno, e)))
            .collect::<Result<Vec<_>>>()?;
        if degrees.len() != n {
            return Err(Error::parse(
                context,
                lno,
                format!("{} degrees for n={n}", degrees.len()),
            ));
        }

        let (lno, cols) = next("column header")?;
        if cols.trim() != "i,j,value" {
            return Err(Error::parse(context, lno, "expected 'i,j,value'"));
        }
        let mut upper = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| Error::parse(context, i + 1, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            let bad = |m: String| Error::parse(context, i + 1, m);
            if parts.len() != 3 {
                return Err(bad(format!("expected 3 fields, got {}", parts.len())));
            }
            let r: usize = parts[0].parse().map_err(|e| bad(format!("i: {e}")))?;
            let c: usize = parts[1].parse().map_err(|e| bad(format!("j: {e}")))?;
            let v: f64 = parts[2].parse().map_err(|e| bad(format!("value: {e}")))?;
            if r > c {
                return Err(bad("rows must satisfy i <= j".into()));
            }
            upper.push((r, c, v));
        }
        let weights = SymmetricMatrix::from_upper(n, upper)?;
        Ok(Self::assemble(
            weights,
            degrees,
            GraphMeta {
                t_u,
                measure,
                options: NormalizeOptions {
                    zero_diagonal,
                    isolated,
                },
            },
        ))
    }
}
