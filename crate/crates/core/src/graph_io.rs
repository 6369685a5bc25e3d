//! Graph loading, GraphSage neighbor sampling and aggregation weights.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Undirected graph over dense node ids `0..num_nodes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    /// Canonical `(u, v)` with `u < v`, sorted, deduplicated.
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a canonical graph. Self-loops are dropped and `(u, v)` / `(v, u)`
    /// collapse into one edge.
    pub fn new(num_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut canon = BTreeSet::new();
        for (u, v) in edges {
            for id in [u, v] {
                if id >= num_nodes {
                    return Err(Error::NodeOutOfRange {
                        id,
                        num_nodes,
                        line: 0,
                    });
                }
            }
            if u != v {
                canon.insert((u.min(v), u.max(v)));
            }
        }
        let edges: Vec<_> = canon.into_iter().collect();
        let mut adjacency = vec![Vec::new(); num_nodes];
        for &(u, v) in &edges {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Self {
            num_nodes,
            edges,
            adjacency,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn average_degree(&self) -> f64 {
        if self.num_nodes == 0 {
            return 0.0;
        }
        2.0 * self.edges.len() as f64 / self.num_nodes as f64
    }
}

/// Parses an edge list: whitespace separated id pairs, `#` comments, and an
/// optional leading `N <count>` header fixing the node count.
pub fn parse_edge_list(text: &str, origin: &Path) -> Result<Graph> {
    let mut declared = None;
    let mut edges = Vec::new();
    let mut max_id = None;
    let mut seen_data = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if !seen_data && fields.len() == 2 && fields[0] == "N" {
            let n = fields[1].parse::<usize>().map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: line_no,
                msg: format!("bad node count {:?}: {e}", fields[1]),
            })?;
            declared = Some(n);
            seen_data = true;
            continue;
        }
        seen_data = true;
        if fields.len() != 2 {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: line_no,
                msg: format!("expected two node ids, found {} fields", fields.len()),
            });
        }
        let mut ids = [0usize; 2];
        for (slot, field) in ids.iter_mut().zip(&fields) {
            *slot = field.parse().map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: line_no,
                msg: format!("bad node id {field:?}: {e}"),
            })?;
            if let Some(n) = declared {
                if *slot >= n {
                    return Err(Error::NodeOutOfRange {
                        id: *slot,
                        num_nodes: n,
                        line: line_no,
                    });
                }
            }
            max_id = Some(max_id.map_or(*slot, |m: usize| m.max(*slot)));
        }
        edges.push((ids[0], ids[1]));
    }
    let num_nodes = declared.unwrap_or_else(|| max_id.map_or(0, |m| m + 1));
    Graph::new(num_nodes, edges)
}

pub fn load_graph(path: &Path) -> Result<Graph> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_edge_list(&text, path)
}

pub fn write_edge_list(graph: &Graph, path: &Path) -> Result<()> {
    let mut out = format!("N {}\n", graph.num_nodes());
    for (u, v) in graph.edges() {
        out.push_str(&format!("{u} {v}\n"));
    }
    std::fs::write(path, out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a headerless numeric CSV (row per node, or row per input feature
/// for weight matrices).
pub fn load_matrix_csv(path: &Path) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })?;
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        let row = record
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    msg: format!("bad number {f:?}: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Matrix::from_rows(&rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationRule {
    /// GraphSage MEAN over `{v} ∪ sampled(v)`.
    Mean,
    /// Symmetric normalization `D^-1/2 (A + I) D^-1/2` over the full graph.
    GcnNormalized,
}

/// Fixed-width neighbor lists with aggregation coefficients. The self term is
/// kept apart from the `n` neighbor entries; padded entries point at `v`
/// itself and carry weight zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledAdjacency {
    n: usize,
    rule: AggregationRule,
    neighbors: Vec<Vec<usize>>,
    weights: Vec<Vec<f64>>,
    self_weights: Vec<f64>,
}

impl SampledAdjacency {
    /// Assembles an adjacency from explicit lists. Every row must hold exactly
    /// `n` entries.
    pub fn from_parts(
        rule: AggregationRule,
        neighbors: Vec<Vec<usize>>,
        weights: Vec<Vec<f64>>,
        self_weights: Vec<f64>,
    ) -> Result<Self> {
        let n = neighbors.first().map_or(0, Vec::len);
        let num_nodes = neighbors.len();
        if weights.len() != num_nodes || self_weights.len() != num_nodes {
            return Err(Error::Dimension("adjacency row counts differ".into()));
        }
        for (v, (nb, w)) in neighbors.iter().zip(&weights).enumerate() {
            if nb.len() != n || w.len() != n {
                return Err(Error::Dimension(format!(
                    "node {v} does not have {n} entries"
                )));
            }
            if let Some(&u) = nb.iter().find(|&&u| u >= num_nodes) {
                return Err(Error::NodeOutOfRange {
                    id: u,
                    num_nodes,
                    line: 0,
                });
            }
        }
        Ok(Self {
            n,
            rule,
            neighbors,
            weights,
            self_weights,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn rule(&self) -> AggregationRule {
        self.rule
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn weights(&self, v: usize) -> &[f64] {
        &self.weights[v]
    }

    pub fn self_weight(&self, v: usize) -> f64 {
        self.self_weights[v]
    }

    /// Total coefficient with which `u` contributes to `v`'s aggregate.
    pub fn weight(&self, v: usize, u: usize) -> f64 {
        let mut w = if u == v { self.self_weights[v] } else { 0.0 };
        for (&nb, &wk) in self.neighbors[v].iter().zip(&self.weights[v]) {
            if nb == u {
                w += wk;
            }
        }
        w
    }

    /// Dense `N x N` aggregation matrix.
    pub fn dense(&self) -> Matrix {
        let n = self.num_nodes();
        let mut a = Matrix::zeros(n, n);
        for v in 0..n {
            a[(v, v)] += self.self_weights[v];
            for (&u, &w) in self.neighbors[v].iter().zip(&self.weights[v]) {
                a[(v, u)] += w;
            }
        }
        a
    }

    /// Plaintext aggregation `Â · X` using the sampled lists.
    pub fn aggregate(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.num_nodes() {
            return Err(Error::Dimension(format!(
                "feature matrix has {} rows for {} nodes",
                x.rows(),
                self.num_nodes()
            )));
        }
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for v in 0..self.num_nodes() {
            for f in 0..x.cols() {
                out[(v, f)] = self.self_weights[v] * x[(v, f)];
            }
            for (&u, &w) in self.neighbors[v].iter().zip(&self.weights[v]) {
                if w == 0.0 {
                    continue;
                }
                for f in 0..x.cols() {
                    out[(v, f)] += w * x[(u, f)];
                }
            }
        }
        Ok(out)
    }

    /// Returns a copy whose neighbor-to-slot assignment per node is permuted.
    /// `perm[v][k]` is the old index feeding new index `k`.
    pub fn permuted(&self, perm: &[Vec<usize>]) -> Self {
        let mut out = self.clone();
        for (v, p) in perm.iter().enumerate() {
            out.neighbors[v] = p.iter().map(|&k| self.neighbors[v][k]).collect();
            out.weights[v] = p.iter().map(|&k| self.weights[v][k]).collect();
        }
        out
    }
}

/// GraphSage sampling: `n` neighbors per node drawn uniformly without
/// replacement. Nodes with fewer than `n` neighbors keep all of them, are
/// padded with themselves, and average uniformly over the distinct
/// participants (padding entries get weight zero).
pub fn sample_neighbors(g: &Graph, n: usize, seed: u64) -> Result<SampledAdjacency> {
    if n == 0 {
        return Err(Error::Config(
            "sampled neighbor count must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_nodes = g.num_nodes();
    let mut neighbors = Vec::with_capacity(num_nodes);
    let mut weights = Vec::with_capacity(num_nodes);
    let mut self_weights = Vec::with_capacity(num_nodes);
    for v in 0..num_nodes {
        let nb = g.neighbors(v);
        let mut picked: Vec<usize> = if nb.len() > n {
            nb.choose_multiple(&mut rng, n).copied().collect()
        } else {
            nb.to_vec()
        };
        let real = picked.len();
        let w = 1.0 / (real + 1) as f64;
        let mut row_w = vec![w; real];
        picked.resize(n, v);
        row_w.resize(n, 0.0);
        neighbors.push(picked);
        weights.push(row_w);
        self_weights.push(w);
    }
    SampledAdjacency::from_parts(AggregationRule::Mean, neighbors, weights, self_weights).map(
        |mut a| {
            a.n = n;
            a
        },
    )
}

/// Full symmetric-normalized adjacency with self loops. Rows are padded to the
/// maximum degree (at least one entry) with zero-weight self entries.
pub fn normalize_gcn(g: &Graph) -> SampledAdjacency {
    let num_nodes = g.num_nodes();
    let n = g.max_degree().max(1);
    let inv_sqrt: Vec<f64> = (0..num_nodes)
        .map(|v| 1.0 / ((g.degree(v) + 1) as f64).sqrt())
        .collect();
    let mut neighbors = Vec::with_capacity(num_nodes);
    let mut weights = Vec::with_capacity(num_nodes);
    let mut self_weights = Vec::with_capacity(num_nodes);
    for v in 0..num_nodes {
        let mut nb = g.neighbors(v).to_vec();
        let mut w: Vec<f64> = nb.iter().map(|&u| inv_sqrt[v] * inv_sqrt[u]).collect();
        nb.resize(n, v);
        w.resize(n, 0.0);
        neighbors.push(nb);
        weights.push(w);
        self_weights.push(inv_sqrt[v] * inv_sqrt[v]);
    }
    SampledAdjacency {
        n,
        rule: AggregationRule::GcnNormalized,
        neighbors,
        weights,
        self_weights,
    }
}

/// Synthetic graph generators used by tests, benches and the CLI.
pub mod synthetic {
    use super::*;

    /// Preferential attachment: every new node links to `m` existing nodes
    /// chosen proportionally to degree. Average degree approaches `2m`.
    /// Node ids are shuffled so that id order carries no locality.
    pub fn power_law(num_nodes: usize, m: usize, seed: u64) -> Graph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = m.max(1);
        let mut edges = Vec::new();
        let mut endpoints: Vec<usize> = Vec::new();
        let core = (m + 1).min(num_nodes);
        for u in 0..core {
            for v in (u + 1)..core {
                edges.push((u, v));
                endpoints.extend([u, v]);
            }
        }
        for v in core..num_nodes {
            let mut chosen = BTreeSet::new();
            while chosen.len() < m.min(v) {
                let u = if endpoints.is_empty() {
                    rng.gen_range(0..v)
                } else {
                    endpoints[rng.gen_range(0..endpoints.len())]
                };
                chosen.insert(u);
            }
            for u in chosen {
                edges.push((u, v));
                endpoints.extend([u, v]);
            }
        }
        let mut relabel: Vec<usize> = (0..num_nodes).collect();
        relabel.shuffle(&mut rng);
        Graph::new(
            num_nodes,
            edges.into_iter().map(|(u, v)| (relabel[u], relabel[v])),
        )
        .expect("generated ids are in range")
    }

    /// Erdős–Rényi style graph with the requested expected average degree.
    pub fn random(num_nodes: usize, avg_degree: f64, seed: u64) -> Graph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = ((avg_degree * num_nodes as f64) / 2.0).round() as usize;
        let max_edges = num_nodes * num_nodes.saturating_sub(1) / 2;
        let target = target.min(max_edges);
        let mut edges = BTreeSet::new();
        while edges.len() < target {
            let u = rng.gen_range(0..num_nodes);
            let v = rng.gen_range(0..num_nodes);
            if u != v {
                edges.insert((u.min(v), u.max(v)));
            }
        }
        Graph::new(num_nodes, edges).expect("generated ids are in range")
    }

    /// Cycle `0 - 1 - ... - (N-1) - 0`.
    pub fn ring(num_nodes: usize) -> Graph {
        Graph::new(num_nodes, (0..num_nodes).map(|v| (v, (v + 1) % num_nodes)))
            .expect("ids in range")
    }

    /// Path `0 - 1 - ... - (N-1)`.
    pub fn path(num_nodes: usize) -> Graph {
        Graph::new(num_nodes, (1..num_nodes).map(|v| (v - 1, v))).expect("ids in range")
    }

    /// Star with center 0.
    pub fn star(leaves: usize) -> Graph {
        Graph::new(leaves + 1, (1..=leaves).map(|v| (0, v))).expect("ids in range")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Graph> {
        parse_edge_list(text, Path::new("<test>"))
    }

    #[test]
    fn parses_simple_edge_list() {
        let g = parse("0 1\n1 2").unwrap();
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn duplicate_edges_collapse() {
        let g = parse("0 1\n1 0").unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
    }

    #[test]
    fn header_bounds_ids() {
        let err = parse("N 3\n0 5").unwrap_err();
        assert!(matches!(
            err,
            Error::NodeOutOfRange {
                id: 5,
                num_nodes: 3,
                line: 2
            }
        ));
    }

    #[test]
    fn header_adds_isolated_nodes_and_comments_are_skipped() {
        let g = parse("# toy\nN 5\n0 1 # trailing\n\n3 3\n").unwrap();
        assert_eq!(g.num_nodes(), 5);
        assert_eq!(g.edges(), &[(0, 1)]);
    }

    #[test]
    fn parse_error_names_line() {
        match parse("0 1\n1 x\n").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse("0 1 2").unwrap_err(),
            Error::Parse { line: 1, .. }
        ));
    }

    #[test]
    fn star_sampling_is_degree_forced() {
        let g = synthetic::star(3);
        let adj = sample_neighbors(&g, 2, 7).unwrap();
        let center = adj.neighbors(0);
        assert_eq!(center.len(), 2);
        assert_ne!(center[0], center[1]);
        assert!(center.iter().all(|&u| (1..=3).contains(&u)));
        for leaf in 1..=3 {
            assert_eq!(adj.neighbors(leaf), &[0, leaf]);
            assert_eq!(adj.weights(leaf), &[0.5, 0.0]);
            assert_eq!(adj.self_weight(leaf), 0.5);
        }
        assert!(adj.weights(0).iter().all(|&w| w == 1.0 / 3.0));
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = synthetic::power_law(200, 2, 11);
        assert_eq!(
            sample_neighbors(&g, 3, 5).unwrap(),
            sample_neighbors(&g, 3, 5).unwrap()
        );
    }

    #[test]
    fn sampling_rejects_zero_width() {
        assert!(sample_neighbors(&synthetic::ring(4), 0, 1).is_err());
    }

    #[test]
    fn isolated_node_is_fully_self_padded() {
        let g = Graph::new(3, [(0, 1)]).unwrap();
        let adj = sample_neighbors(&g, 2, 1).unwrap();
        assert_eq!(adj.neighbors(2), &[2, 2]);
        assert_eq!(adj.self_weight(2), 1.0);
        assert_eq!(adj.weight(2, 2), 1.0);
        let gcn = normalize_gcn(&g);
        assert_eq!(gcn.weight(2, 2), 1.0);
    }

    #[test]
    fn gcn_single_edge_by_hand() {
        // A + I = [[1,1],[1,1]], D = diag(2,2): every entry is 1/2.
        let g = Graph::new(2, [(0, 1)]).unwrap();
        let adj = normalize_gcn(&g);
        assert!((adj.weight(0, 1) - 0.5).abs() < 1e-15);
        assert!((adj.weight(0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gcn_path_rows_match_dense_construction() {
        let g = synthetic::path(3);
        let adj = normalize_gcn(&g);
        // Dense oracle built directly from D^-1/2 (A + I) D^-1/2.
        let a_hat = [[1.0, 1.0, 0.0], [1.0, 1.0, 1.0], [0.0, 1.0, 1.0]];
        let deg: Vec<f64> = a_hat.iter().map(|r| r.iter().sum()).collect();
        let dense = adj.dense();
        for i in 0..3 {
            let expected: f64 = (0..3).map(|j| a_hat[i][j] / (deg[i] * deg[j]).sqrt()).sum();
            let got: f64 = (0..3).map(|j| dense[(i, j)]).sum();
            assert!(
                (expected - got).abs() < 1e-12,
                "row {i}: {expected} vs {got}"
            );
        }
    }

    #[test]
    fn power_law_average_degree_near_twice_m() {
        let g = synthetic::power_law(1024, 2, 3);
        let d = g.average_degree();
        assert!((3.8..=4.1).contains(&d), "avg degree {d}");
    }

    #[test]
    fn sampled_count_tracks_average_degree() {
        let g = synthetic::power_law(1024, 2, 9);
        let adj = sample_neighbors(&g, 4, 1).unwrap();
        let real: usize = (0..g.num_nodes())
            .map(|v| adj.weights(v).iter().filter(|&&w| w > 0.0).count())
            .sum();
        let mean = real as f64 / g.num_nodes() as f64;
        assert!(mean > 2.5 && mean <= 4.0, "mean sampled {mean}");
    }
}
