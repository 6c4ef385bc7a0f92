use std::collections::BTreeSet;

use areal::graph::{build_contiguity, AreaPolygon, ArealGraph, ContiguityKind, ContiguityRule};
use areal::rng::{fisher_yates, stream_rng};
use proptest::prelude::*;

/// Unit squares on a grid with some cells left empty.
fn grid_polygons(rows: usize, cols: usize, keep: &[bool]) -> Vec<AreaPolygon> {
    let mut out = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if keep[r * cols + c] {
                out.push(AreaPolygon::square(format!("{}", r * cols + c + 1), c as f64, r as f64, 1.0));
            }
        }
    }
    out
}

fn rule(kind: ContiguityKind) -> ContiguityRule {
    ContiguityRule { kind, ..ContiguityRule::default() }
}

fn id_edges(g: &ArealGraph) -> BTreeSet<(String, String)> {
    g.edges()
        .iter()
        .map(|&(a, b)| {
            let (a, b) = (g.unit_ids()[a].clone(), g.unit_ids()[b].clone());
            if a < b {
                (a, b)
            } else {
                (b, a)
            }
        })
        .collect()
}

/// Union-find labelling as an independent component oracle.
fn component_oracle(g: &ArealGraph) -> BTreeSet<Vec<usize>> {
    let k = g.len();
    let mut parent: Vec<usize> = (0..k).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for &(a, b) in g.edges() {
        let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
        parent[ra] = rb;
    }
    let mut groups = std::collections::BTreeMap::<usize, Vec<usize>>::new();
    for i in 0..k {
        let r = root(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

fn random_graph(k: usize, p: f64, seed: u64) -> ArealGraph {
    use rand::Rng;
    let mut rng = stream_rng(seed, 0);
    let mut edges = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            if rng.random::<f64>() < p {
                edges.push((a, b));
            }
        }
    }
    ArealGraph::from_edges((0..k).map(|i| i.to_string()).collect(), &edges).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn contiguity_ignores_input_order(rows in 1usize..5, cols in 1usize..6, mask in any::<u64>(), seed in any::<u64>()) {
        let keep: Vec<bool> = (0..rows * cols).map(|i| i == 0 || mask >> (i % 64) & 1 == 1).collect();
        let polys = grid_polygons(rows, cols, &keep);
        let mut shuffled = polys.clone();
        fisher_yates(&mut shuffled, &mut stream_rng(seed, 0));
        for kind in [ContiguityKind::Queen, ContiguityKind::Rook] {
            let a = build_contiguity(&polys, rule(kind)).unwrap();
            let b = build_contiguity(&shuffled, rule(kind)).unwrap();
            prop_assert_eq!(a.unit_ids(), b.unit_ids());
            prop_assert_eq!(id_edges(&a), id_edges(&b));
        }
    }

    #[test]
    fn queen_contains_rook(rows in 1usize..5, cols in 1usize..6, mask in any::<u64>()) {
        let keep: Vec<bool> = (0..rows * cols).map(|i| i == 0 || mask >> (i % 64) & 1 == 1).collect();
        let polys = grid_polygons(rows, cols, &keep);
        let queen = id_edges(&build_contiguity(&polys, rule(ContiguityKind::Queen)).unwrap());
        let rook = id_edges(&build_contiguity(&polys, rule(ContiguityKind::Rook)).unwrap());
        prop_assert!(rook.is_subset(&queen));
    }

    #[test]
    fn laplacian_trace_identity(k in 1usize..40, p in 0.0f64..0.7, seed in any::<u64>()) {
        let g = random_graph(k, p, seed);
        let eig = g.laplacian_eigenvalues().unwrap();
        let sum: f64 = eig.iter().sum();
        let degrees: usize = g.degrees().iter().sum();
        prop_assert!((sum - degrees as f64).abs() <= 1e-10 * (degrees as f64).max(1.0));
        prop_assert!(eig.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(eig[0].abs() < 1e-9);
    }

    #[test]
    fn components_match_union_find(k in 1usize..40, p in 0.0f64..0.15, seed in any::<u64>()) {
        let g = random_graph(k, p, seed);
        let ours: BTreeSet<Vec<usize>> = g.components().iter().map(|c| {
            let mut c = c.clone();
            c.sort();
            c
        }).collect();
        prop_assert_eq!(ours, component_oracle(&g));
        let islands: Vec<usize> = (0..k).filter(|&i| g.degree(i) == 0).collect();
        prop_assert_eq!(g.islands(), islands);
    }
}

#[test]
fn seven_by_eleven_lattice_is_connected() {
    let g = ArealGraph::lattice(7, 11, ContiguityKind::Queen);
    assert_eq!(g.len(), 77);
    assert_eq!(g.components().len(), 1);
    // corners have 3 queen neighbours, interior cells 8
    assert_eq!(g.degree(0), 3);
    assert_eq!(g.degree(12), 8);
}
