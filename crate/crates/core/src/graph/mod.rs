//! Contiguity neighborhood structure over K areal units.

mod contiguity;
mod io;

pub use contiguity::{build_contiguity, AreaPolygon, ContiguityKind, ContiguityRule};
pub use io::{
    read_edge_csv, read_geojson_polygons, read_graph_summary, write_edge_csv, GraphSummary,
};

use std::cmp::Ordering;
use std::collections::{HashMap, VecDeque};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orders area ids numerically when both parse as integers, lexically otherwise.
pub fn compare_ids(a: &str, b: &str) -> Ordering {
    match (a.trim().parse::<i64>(), b.trim().parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        _ => a.cmp(b),
    }
}

/// Symmetric binary neighborhood structure W over an ordered set of units.
///
/// Adjacency is kept sparse: an undirected edge list (`from < to` by unit
/// index) plus a CSR neighbor index. The graph is immutable after
/// construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArealGraph {
    unit_ids: Vec<String>,
    edges: Vec<(usize, usize)>,
    row_ptr: Vec<usize>,
    neighbors: Vec<usize>,
    components: Vec<Vec<usize>>,
}

impl ArealGraph {
    /// Builds a graph from unit ids and undirected edges given as index pairs.
    /// Duplicate and reversed edges collapse; self-loops are rejected.
    pub fn from_edges(unit_ids: Vec<String>, edges: &[(usize, usize)]) -> Result<Self> {
        if unit_ids.is_empty() {
            return Err(Error::Geometry("graph needs at least one unit".into()));
        }
        let k = unit_ids.len();
        let mut seen = HashMap::with_capacity(k);
        for (i, id) in unit_ids.iter().enumerate() {
            if seen.insert(id.as_str(), i).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        let mut list: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= k || b >= k {
                return Err(Error::Dimension(format!("edge ({a}, {b}) out of range for K = {k}")));
            }
            if a == b {
                return Err(Error::Geometry(format!("self-loop on unit `{}`", unit_ids[a])));
            }
            list.push((a.min(b), a.max(b)));
        }
        list.sort_unstable();
        list.dedup();

        let mut degree = vec![0usize; k];
        for &(a, b) in &list {
            degree[a] += 1;
            degree[b] += 1;
        }
        let mut row_ptr = vec![0usize; k + 1];
        for i in 0..k {
            row_ptr[i + 1] = row_ptr[i] + degree[i];
        }
        let mut fill = row_ptr.clone();
        let mut neighbors = vec![0usize; row_ptr[k]];
        for &(a, b) in &list {
            neighbors[fill[a]] = b;
            fill[a] += 1;
            neighbors[fill[b]] = a;
            fill[b] += 1;
        }
        for i in 0..k {
            neighbors[row_ptr[i]..row_ptr[i + 1]].sort_unstable();
        }

        let mut graph = ArealGraph {
            unit_ids,
            edges: list,
            row_ptr,
            neighbors,
            components: Vec::new(),
        };
        graph.components = graph.compute_components();
        for island in graph.islands() {
            log::warn!("area `{}` has no neighbors", graph.unit_ids[island]);
        }
        Ok(graph)
    }

    /// Builds a graph from id pairs, e.g. a `from_id,to_id` edge list.
    /// Units are ordered with [`compare_ids`].
    pub fn from_id_pairs(unit_ids: &[String], pairs: &[(String, String)]) -> Result<Self> {
        let mut ids = unit_ids.to_vec();
        ids.sort_by(|a, b| compare_ids(a, b));
        let index: HashMap<&str, usize> =
            ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut edges = Vec::with_capacity(pairs.len());
        for (a, b) in pairs {
            let ia = *index.get(a.as_str()).ok_or_else(|| Error::UnknownVariable(a.clone()))?;
            let ib = *index.get(b.as_str()).ok_or_else(|| Error::UnknownVariable(b.clone()))?;
            edges.push((ia, ib));
        }
        ArealGraph::from_edges(ids, &edges)
    }

    /// Rectangular `rows × cols` lattice; unit ids are `1..=rows*cols` in
    /// row-major order.
    pub fn lattice(rows: usize, cols: usize, kind: ContiguityKind) -> Self {
        let idx = |r: usize, c: usize| r * cols + c;
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    edges.push((idx(r, c), idx(r, c + 1)));
                }
                if r + 1 < rows {
                    edges.push((idx(r, c), idx(r + 1, c)));
                }
                if kind == ContiguityKind::Queen && r + 1 < rows {
                    if c + 1 < cols {
                        edges.push((idx(r, c), idx(r + 1, c + 1)));
                    }
                    if c > 0 {
                        edges.push((idx(r, c), idx(r + 1, c - 1)));
                    }
                }
            }
        }
        let ids = (1..=rows * cols).map(|i| i.to_string()).collect();
        ArealGraph::from_edges(ids, &edges).expect("lattice construction is valid")
    }

    pub fn len(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unit_ids.is_empty()
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.unit_ids.iter().position(|u| u == id)
    }

    /// Undirected edges, each once with `from < to` (unit indices).
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, k: usize) -> &[usize] {
        &self.neighbors[self.row_ptr[k]..self.row_ptr[k + 1]]
    }

    pub fn degree(&self, k: usize) -> usize {
        self.row_ptr[k + 1] - self.row_ptr[k]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.len()).map(|k| self.degree(k)).collect()
    }

    pub fn is_adjacent(&self, a: usize, b: usize) -> bool {
        self.neighbors(a).binary_search(&b).is_ok()
    }

    /// Units with degree zero.
    pub fn islands(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.degree(k) == 0).collect()
    }

    pub fn components(&self) -> &[Vec<usize>] {
        &self.components
    }

    fn compute_components(&self) -> Vec<Vec<usize>> {
        let k = self.len();
        let mut label = vec![usize::MAX; k];
        let mut out = Vec::new();
        for start in 0..k {
            if label[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut members = vec![start];
            label[start] = id;
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &v in self.neighbors(u) {
                    if label[v] == usize::MAX {
                        label[v] = id;
                        members.push(v);
                        queue.push_back(v);
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }

    /// Dense binary adjacency matrix W.
    pub fn dense_adjacency(&self) -> DMatrix<f64> {
        let k = self.len();
        let mut w = DMatrix::zeros(k, k);
        for &(a, b) in &self.edges {
            w[(a, b)] = 1.0;
            w[(b, a)] = 1.0;
        }
        w
    }

    /// Dense graph Laplacian D − W.
    pub fn dense_laplacian(&self) -> DMatrix<f64> {
        let mut l = -self.dense_adjacency();
        for k in 0..self.len() {
            l[(k, k)] = self.degree(k) as f64;
        }
        l
    }

    /// Quadratic form xᵀ(D − W)x = Σ_edges (x_a − x_b)².
    pub fn laplacian_form(&self, x: &[f64]) -> f64 {
        self.edges.iter().map(|&(a, b)| (x[a] - x[b]).powi(2)).sum()
    }

    /// Bilinear form xᵀ(D − W)y.
    pub fn laplacian_bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        self.edges
            .iter()
            .map(|&(a, b)| (x[a] - x[b]) * (y[a] - y[b]))
            .sum()
    }

    /// Σ_{i ~ k} x_i.
    pub fn neighbor_sum(&self, k: usize, x: &[f64]) -> f64 {
        self.neighbors(k).iter().map(|&i| x[i]).sum()
    }

    /// Eigenvalues of D − W in ascending order.
    pub fn laplacian_eigenvalues(&self) -> Result<Vec<f64>> {
        let k = self.len();
        let eig = SymmetricEigen::try_new(self.dense_laplacian(), f64::EPSILON, 10_000)
            .ok_or(Error::EigenFailure(k))?;
        let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        values.sort_by(|a, b| a.total_cmp(b));
        Ok(values)
    }

    pub fn summary(&self) -> GraphSummary {
        let degrees = self.degrees();
        GraphSummary {
            k: self.len(),
            edge_count: self.edge_count(),
            components: self.components.len(),
            min_degree: degrees.iter().copied().min().unwrap_or(0),
            max_degree: degrees.iter().copied().max().unwrap_or(0),
            islands: self.islands().into_iter().map(|i| self.unit_ids[i].clone()).collect(),
            unit_ids: self.unit_ids.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path2() -> ArealGraph {
        ArealGraph::from_edges(vec!["a".into(), "b".into()], &[(0, 1)]).unwrap()
    }

    #[test]
    fn single_unit_graph() {
        let g = ArealGraph::from_edges(vec!["1".into()], &[]).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.components().len(), 1);
        assert_eq!(g.laplacian_eigenvalues().unwrap(), vec![0.0]);
    }

    #[test]
    fn path_eigenvalues() {
        let ev = path2().laplacian_eigenvalues().unwrap();
        assert!(ev[0].abs() < 1e-12);
        assert!((ev[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn components_of_small_graphs() {
        assert_eq!(path2().components(), &[vec![0, 1]]);
        let g = ArealGraph::from_edges(vec!["a".into(), "b".into()], &[]).unwrap();
        assert_eq!(g.components(), &[vec![0], vec![1]]);
        assert_eq!(g.islands(), vec![0, 1]);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = ArealGraph::from_edges(vec!["a".into(), "a".into()], &[]).unwrap_err();
        assert!(matches!(err, Error::DuplicateId(ref id) if id == "a"));
    }

    #[test]
    fn self_loop_rejected() {
        assert!(ArealGraph::from_edges(vec!["a".into()], &[(0, 0)]).is_err());
    }

    #[test]
    fn edges_are_deduplicated() {
        let g = ArealGraph::from_edges(vec!["a".into(), "b".into()], &[(0, 1), (1, 0)]).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.degrees(), vec![1, 1]);
    }

    #[test]
    fn lattice_degrees() {
        let rook = ArealGraph::lattice(3, 3, ContiguityKind::Rook);
        assert_eq!(rook.degrees(), vec![2, 3, 2, 3, 4, 3, 2, 3, 2]);
        let queen = ArealGraph::lattice(3, 3, ContiguityKind::Queen);
        assert_eq!(queen.degrees(), vec![3, 5, 3, 5, 8, 5, 3, 5, 3]);
    }

    #[test]
    fn ids_order_naturally() {
        let mut ids = vec!["10", "9", "77", "1"];
        ids.sort_by(|a, b| compare_ids(a, b));
        assert_eq!(ids, vec!["1", "9", "10", "77"]);
    }

    #[test]
    fn laplacian_forms_match_dense() {
        let g = ArealGraph::lattice(3, 4, ContiguityKind::Queen);
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let y: Vec<f64> = (0..12).map(|i| (i as f64 * 0.3).cos()).collect();
        let l = g.dense_laplacian();
        let xv = nalgebra::DVector::from_vec(x.clone());
        let yv = nalgebra::DVector::from_vec(y.clone());
        assert!((g.laplacian_form(&x) - xv.dot(&(&l * &xv))).abs() < 1e-12);
        assert!((g.laplacian_bilinear(&x, &y) - xv.dot(&(&l * &yv))).abs() < 1e-12);
    }
}
