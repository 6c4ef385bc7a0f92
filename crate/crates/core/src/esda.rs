//! Exploratory spatial statistics: Pearson screening and global Moran's I
//! with permutation inference.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ArealGraph;
use crate::rng::{fisher_yates, stream_rng};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScheme {
    Binary,
    #[default]
    RowStandardized,
}

impl std::str::FromStr for WeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" | "B" => Ok(WeightScheme::Binary),
            "row-standardized" | "row" | "W" => Ok(WeightScheme::RowStandardized),
            other => Err(Error::Config(format!("unknown weight scheme `{other}`"))),
        }
    }
}

impl std::fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WeightScheme::Binary => "binary",
            WeightScheme::RowStandardized => "row-standardized",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    /// Positive spatial autocorrelation.
    #[default]
    Greater,
    Less,
    TwoSided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoranResult {
    pub statistic: f64,
    pub expected_null: f64,
    pub p_value: f64,
    pub n_permutations: usize,
    pub weight_scheme: WeightScheme,
    pub alternative: Alternative,
}

/// Correlation matrix of named columns.
pub fn pearson_matrix(columns: &[(String, Vec<f64>)]) -> Result<DMatrix<f64>> {
    for (name, col) in columns {
        if col.len() < 2 || col.iter().all(|&v| v == col[0]) {
            return Err(Error::ConstantInput(format!("column `{name}` is constant")));
        }
    }
    let p = columns.len();
    let mut r = DMatrix::identity(p, p);
    for i in 0..p {
        for j in 0..i {
            let v = stats::pearson(&columns[i].1, &columns[j].1);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    Ok(r)
}

/// Precomputed pieces for repeated evaluation on permutations of one field.
struct MoranKernel<'a> {
    graph: &'a ArealGraph,
    scheme: WeightScheme,
    scale: f64,
    row_weight: Vec<f64>,
}

impl<'a> MoranKernel<'a> {
    fn new(graph: &'a ArealGraph, scheme: WeightScheme, sum_sq: f64) -> Self {
        let k = graph.len();
        let row_weight: Vec<f64> = (0..k)
            .map(|i| match (scheme, graph.degree(i)) {
                (WeightScheme::Binary, _) => 1.0,
                (WeightScheme::RowStandardized, 0) => 0.0,
                (WeightScheme::RowStandardized, d) => 1.0 / d as f64,
            })
            .collect();
        let s0 = match scheme {
            WeightScheme::Binary => 2.0 * graph.edge_count() as f64,
            WeightScheme::RowStandardized => (0..k).filter(|&i| graph.degree(i) > 0).count() as f64,
        };
        MoranKernel {
            graph,
            scheme,
            scale: k as f64 / (s0 * sum_sq),
            row_weight,
        }
    }

    /// I for centered values z.
    fn statistic(&self, z: &[f64]) -> f64 {
        let cross = match self.scheme {
            WeightScheme::Binary => {
                2.0 * self.graph.edges().iter().map(|&(a, b)| z[a] * z[b]).sum::<f64>()
            }
            WeightScheme::RowStandardized => (0..z.len())
                .map(|k| self.row_weight[k] * z[k] * self.graph.neighbor_sum(k, z))
                .sum(),
        };
        self.scale * cross
    }
}

fn centered(values: &[f64], graph: &ArealGraph) -> Result<(Vec<f64>, f64)> {
    if values.len() != graph.len() {
        return Err(Error::Dimension(format!(
            "{} values for a graph of {} units",
            values.len(),
            graph.len()
        )));
    }
    if graph.edge_count() == 0 {
        return Err(Error::EdgelessGraph);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Moran input".into()));
    }
    if values.iter().all(|&v| v == values[0]) {
        return Err(Error::ConstantInput("Moran's I of a constant field".into()));
    }
    let m = stats::mean(values);
    let z: Vec<f64> = values.iter().map(|v| v - m).collect();
    let ss = z.iter().map(|v| v * v).sum();
    Ok((z, ss))
}

/// Global Moran's I, `(K/S0)·ΣΣ w_ki z_k z_i / Σ z_k²`.
pub fn morans_i(values: &[f64], graph: &ArealGraph, scheme: WeightScheme) -> Result<f64> {
    let (z, ss) = centered(values, graph)?;
    Ok(MoranKernel::new(graph, scheme, ss).statistic(&z))
}

/// Moran's I with a random-permutation p-value. Permutation `i` shuffles with
/// its own stream `(seed, i)`, so results do not depend on thread count.
pub fn permutation_pvalue(
    values: &[f64],
    graph: &ArealGraph,
    scheme: WeightScheme,
    n_permutations: usize,
    seed: u64,
    alternative: Alternative,
) -> Result<MoranResult> {
    if n_permutations < 99 {
        return Err(Error::Config(format!(
            "n_permutations must be at least 99, got {n_permutations}"
        )));
    }
    let (z, ss) = centered(values, graph)?;
    let kernel = MoranKernel::new(graph, scheme, ss);
    let observed = kernel.statistic(&z);
    let (above, below) = (0..n_permutations)
        .into_par_iter()
        .map(|i| {
            let mut perm = z.clone();
            fisher_yates(&mut perm, &mut stream_rng(seed, i as u64));
            let stat = kernel.statistic(&perm);
            (usize::from(stat >= observed), usize::from(stat <= observed))
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let denom = (n_permutations + 1) as f64;
    let p_hi = (1 + above) as f64 / denom;
    let p_lo = (1 + below) as f64 / denom;
    let p_value = match alternative {
        Alternative::Greater => p_hi,
        Alternative::Less => p_lo,
        Alternative::TwoSided => (2.0 * p_hi.min(p_lo)).min(1.0),
    };
    Ok(MoranResult {
        statistic: observed,
        expected_null: -1.0 / (graph.len() as f64 - 1.0),
        p_value,
        n_permutations,
        weight_scheme: scheme,
        alternative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::ContiguityKind;
    use proptest::prelude::*;

    fn cycle4() -> ArealGraph {
        let ids = (1..=4).map(|i| i.to_string()).collect();
        ArealGraph::from_edges(ids, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap()
    }

    #[test]
    fn alternating_cycle_is_minus_one() {
        let v = [1.0, -1.0, 1.0, -1.0];
        assert_eq!(morans_i(&v, &cycle4(), WeightScheme::Binary).unwrap(), -1.0);
        assert_eq!(morans_i(&v, &cycle4(), WeightScheme::RowStandardized).unwrap(), -1.0);
    }

    #[test]
    fn errors() {
        let g = cycle4();
        assert!(matches!(morans_i(&[1.0; 4], &g, WeightScheme::Binary), Err(Error::ConstantInput(_))));
        let lonely = ArealGraph::from_edges(vec!["a".into(), "b".into()], &[]).unwrap();
        assert!(matches!(morans_i(&[1.0, 2.0], &lonely, WeightScheme::Binary), Err(Error::EdgelessGraph)));
        let cols = vec![("a".to_string(), vec![1.0, 2.0]), ("b".to_string(), vec![3.0, 3.0])];
        match pearson_matrix(&cols) {
            Err(Error::ConstantInput(msg)) => assert!(msg.contains("`b`")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pearson_matrix_properties() {
        let cols = vec![
            ("x".to_string(), vec![1.0, 2.0, 3.0, 5.0]),
            ("y".to_string(), vec![2.0, 1.0, 7.0, 3.0]),
            ("z".to_string(), vec![-1.0, -2.0, -3.0, -5.0]),
        ];
        let r = pearson_matrix(&cols).unwrap();
        assert_eq!(r, r.transpose());
        assert!(r.diagonal().iter().all(|&d| d == 1.0));
        assert!((r[(0, 2)] + 1.0).abs() < 1e-15);
        assert!(r.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn minimum_pvalue_when_observed_exceeds_all() {
        // smooth gradient on a long path: no permutation matches it
        let g = ArealGraph::lattice(1, 40, ContiguityKind::Rook);
        let v: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let r = permutation_pvalue(&v, &g, WeightScheme::Binary, 99, 1, Alternative::Greater).unwrap();
        assert_eq!(r.p_value, 0.01);
        let r = permutation_pvalue(&v, &g, WeightScheme::Binary, 999, 1, Alternative::Greater).unwrap();
        assert_eq!(r.p_value, 0.001);
        assert!(r.p_value >= 1.0 / 1000.0);
        assert!(permutation_pvalue(&v, &g, WeightScheme::Binary, 98, 1, Alternative::Greater).is_err());
    }

    #[test]
    fn seeded_pvalue_is_reproducible() {
        let g = ArealGraph::lattice(5, 5, ContiguityKind::Queen);
        let v: Vec<f64> = (0..25).map(|i| ((i * 7919) % 13) as f64).collect();
        let a = permutation_pvalue(&v, &g, WeightScheme::RowStandardized, 499, 42, Alternative::TwoSided).unwrap();
        let b = permutation_pvalue(&v, &g, WeightScheme::RowStandardized, 499, 42, Alternative::TwoSided).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.expected_null, -1.0 / 24.0);
    }

    fn brute_force(values: &[f64], graph: &ArealGraph) -> f64 {
        let k = values.len();
        let w = graph.dense_adjacency();
        let m = values.iter().sum::<f64>() / k as f64;
        let (mut num, mut s0, mut den) = (0.0, 0.0, 0.0);
        for a in 0..k {
            den += (values[a] - m).powi(2);
            for b in 0..k {
                num += w[(a, b)] * (values[a] - m) * (values[b] - m);
                s0 += w[(a, b)];
            }
        }
        k as f64 / s0 * num / den
    }

    proptest! {
        #[test]
        fn affine_invariance(vals in proptest::collection::vec(-10.0f64..10.0, 16), a in 0.1f64..5.0, b in -5.0f64..5.0, neg in any::<bool>()) {
            let g = ArealGraph::lattice(4, 4, ContiguityKind::Queen);
            prop_assume!(vals.iter().any(|&v| (v - vals[0]).abs() > 1e-3));
            let a = if neg { -a } else { a };
            let shifted: Vec<f64> = vals.iter().map(|v| a * v + b).collect();
            for scheme in [WeightScheme::Binary, WeightScheme::RowStandardized] {
                let i0 = morans_i(&vals, &g, scheme).unwrap();
                let i1 = morans_i(&shifted, &g, scheme).unwrap();
                prop_assert!((i0 - i1).abs() < 1e-12, "{i0} vs {i1}");
            }
        }

        #[test]
        fn binary_matches_double_loop(vals in proptest::collection::vec(-3.0f64..3.0, 12)) {
            prop_assume!(vals.iter().any(|&v| (v - vals[0]).abs() > 1e-3));
            let g = ArealGraph::lattice(3, 4, ContiguityKind::Rook);
            let ours = morans_i(&vals, &g, WeightScheme::Binary).unwrap();
            prop_assert!((ours - brute_force(&vals, &g)).abs() < 1e-12);
        }
    }
}
