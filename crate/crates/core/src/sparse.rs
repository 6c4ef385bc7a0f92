//! Envelope (skyline) Cholesky factorization for graph-structured precision
//! matrices of the form `A = diag(d) + c·W`, with W the binary adjacency of an
//! [`ArealGraph`]. Rows are reordered by reverse Cuthill–McKee so the
//! envelope stays narrow; the symbolic structure is built once per graph and
//! reused for every numeric factorization.

use std::collections::VecDeque;

use crate::graph::ArealGraph;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PivotFailure {
    /// Unit index (original ordering) whose pivot was non-positive.
    pub unit: usize,
    pub pivot: f64,
}

#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    n: usize,
    /// perm[new] = old
    perm: Vec<usize>,
    /// inv[old] = new
    inv: Vec<usize>,
    /// Lower-triangle edges in permuted indices: (row, col) with col < row.
    lower_edges: Vec<(usize, usize)>,
    first: Vec<usize>,
    row_start: Vec<usize>,
    values: Vec<f64>,
    factored: bool,
}

impl EnvelopeCholesky {
    pub fn for_graph(graph: &ArealGraph) -> Self {
        let n = graph.len();
        let perm = reverse_cuthill_mckee(graph);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        let mut lower_edges = Vec::with_capacity(graph.edge_count());
        for &(a, b) in graph.edges() {
            let (pa, pb) = (inv[a], inv[b]);
            let (row, col) = (pa.max(pb), pa.min(pb));
            first[row] = first[row].min(col);
            lower_edges.push((row, col));
        }
        let mut row_start = vec![0; n + 1];
        for i in 0..n {
            row_start[i + 1] = row_start[i] + (i - first[i] + 1);
        }
        let values = vec![0.0; row_start[n]];
        EnvelopeCholesky {
            n,
            perm,
            inv,
            lower_edges,
            first,
            row_start,
            values,
            factored: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored entries of the factor.
    pub fn envelope_size(&self) -> usize {
        self.values.len()
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        self.row_start[i] + (j - self.first[i])
    }

    /// Factors `A = diag(diag) + offdiag·W` into L·Lᵀ.
    pub fn factor(&mut self, diag: &[f64], offdiag: f64) -> Result<(), PivotFailure> {
        assert_eq!(diag.len(), self.n);
        self.factored = false;
        self.values.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n {
            let p = self.at(i, i);
            self.values[p] = diag[self.perm[i]];
        }
        for idx in 0..self.lower_edges.len() {
            let (r, c) = self.lower_edges[idx];
            let p = self.at(r, c);
            self.values[p] = offdiag;
        }
        for i in 0..self.n {
            let fi = self.first[i];
            for j in fi..i {
                let fj = self.first[j];
                let start = fi.max(fj);
                let mut s = self.values[self.at(i, j)];
                let (ri, rj) = (self.at(i, start), self.at(j, start));
                for k in 0..(j - start) {
                    s -= self.values[ri + k] * self.values[rj + k];
                }
                let d = self.values[self.at(j, j)];
                let p = self.at(i, j);
                self.values[p] = s / d;
            }
            let row = &self.values[self.at(i, fi)..self.at(i, i)];
            let a_ii = self.values[self.at(i, i)];
            let s: f64 = a_ii - row.iter().map(|v| v * v).sum::<f64>();
            // pivots lost to cancellation mean A is singular to working precision
            if !(s > 1e-12 * a_ii.abs()) || !s.is_finite() {
                return Err(PivotFailure { unit: self.perm[i], pivot: s });
            }
            let p = self.at(i, i);
            self.values[p] = s.sqrt();
        }
        self.factored = true;
        Ok(())
    }

    /// log|A| of the last factored matrix.
    pub fn log_det(&self) -> f64 {
        assert!(self.factored, "matrix not factored");
        2.0 * (0..self.n).map(|i| self.values[self.at(i, i)].ln()).sum::<f64>()
    }

    /// Solves L x = b in permuted space, in place.
    fn forward(&self, x: &mut [f64]) {
        for i in 0..self.n {
            let fi = self.first[i];
            let base = self.at(i, fi);
            let mut s = x[i];
            for (k, j) in (fi..i).enumerate() {
                s -= self.values[base + k] * x[j];
            }
            x[i] = s / self.values[self.at(i, i)];
        }
    }

    /// Solves Lᵀ x = b in permuted space, in place.
    fn backward(&self, x: &mut [f64]) {
        for i in (0..self.n).rev() {
            x[i] /= self.values[self.at(i, i)];
            let xi = x[i];
            let fi = self.first[i];
            let base = self.at(i, fi);
            for (k, j) in (fi..i).enumerate() {
                x[j] -= self.values[base + k] * xi;
            }
        }
    }

    /// Solves A x = b (original ordering).
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert!(self.factored, "matrix not factored");
        let mut x: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        self.forward(&mut x);
        self.backward(&mut x);
        self.unpermute(&x)
    }

    /// Returns `A⁻¹ b + L⁻ᵀ z`, a draw from N(A⁻¹b, A⁻¹) when z is standard
    /// normal. `z` is consumed in factor order.
    pub fn gaussian_draw(&self, b: &[f64], z: &[f64]) -> Vec<f64> {
        assert!(self.factored, "matrix not factored");
        let mut x: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        self.forward(&mut x);
        for (xi, zi) in x.iter_mut().zip(z) {
            *xi += zi;
        }
        self.backward(&mut x);
        self.unpermute(&x)
    }

    fn unpermute(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|old| x[self.inv[old]]).collect()
    }
}

/// Reverse Cuthill–McKee ordering, component by component.
fn reverse_cuthill_mckee(graph: &ArealGraph) -> Vec<usize> {
    let n = graph.len();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&k| (graph.degree(k), k));
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut next: Vec<usize> =
                graph.neighbors(u).iter().copied().filter(|&v| !visited[v]).collect();
            next.sort_by_key(|&v| (graph.degree(v), v));
            for v in next {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    }
    order.reverse();
    order
}
