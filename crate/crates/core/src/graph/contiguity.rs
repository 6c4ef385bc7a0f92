//! Polygon contiguity under queen or rook rules.
//!
//! Boundaries are compared segment by segment with a snapping tolerance:
//! two units are queen-contiguous when some pair of their boundary segments
//! lies within `snap_tolerance` of each other, and rook-contiguous when some
//! pair is collinear (within tolerance) and overlaps over a positive length.
//! Candidate segment pairs come from a uniform grid hash.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{compare_ids, ArealGraph};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContiguityKind {
    /// Any shared boundary point.
    Queen,
    /// A shared boundary segment of positive length.
    Rook,
}

impl std::str::FromStr for ContiguityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "queen" => Ok(ContiguityKind::Queen),
            "rook" => Ok(ContiguityKind::Rook),
            other => Err(Error::Config(format!("unknown contiguity rule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContiguityRule {
    pub kind: ContiguityKind,
    pub snap_tolerance: f64,
}

impl Default for ContiguityRule {
    fn default() -> Self {
        ContiguityRule {
            kind: ContiguityKind::Queen,
            snap_tolerance: 1e-9,
        }
    }
}

/// One areal unit: an id and the rings of all its (multi)polygon parts.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaPolygon {
    pub id: String,
    pub rings: Vec<Vec<[f64; 2]>>,
}

impl AreaPolygon {
    pub fn new(id: impl Into<String>, rings: Vec<Vec<[f64; 2]>>) -> Self {
        AreaPolygon { id: id.into(), rings }
    }

    /// Axis-aligned square with lower-left corner `(x, y)` and side `size`.
    pub fn square(id: impl Into<String>, x: f64, y: f64, size: f64) -> Self {
        AreaPolygon::new(
            id,
            vec![vec![[x, y], [x + size, y], [x + size, y + size], [x, y + size], [x, y]]],
        )
    }

    fn vertex_count(&self) -> usize {
        self.rings.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    unit: usize,
    a: [f64; 2],
    b: [f64; 2],
}

/// Builds the contiguity graph of a set of polygons. Units are ordered by id.
pub fn build_contiguity(polygons: &[AreaPolygon], rule: ContiguityRule) -> Result<ArealGraph> {
    if polygons.is_empty() {
        return Err(Error::Geometry("no polygons supplied".into()));
    }
    if !(rule.snap_tolerance >= 0.0) {
        return Err(Error::Config("snap_tolerance must be non-negative".into()));
    }
    let mut order: Vec<&AreaPolygon> = polygons.iter().collect();
    order.sort_by(|a, b| compare_ids(&a.id, &b.id));
    for pair in order.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(Error::DuplicateId(pair[0].id.clone()));
        }
    }
    for poly in &order {
        if poly.vertex_count() == 0 {
            return Err(Error::DegeneratePolygon(poly.id.clone()));
        }
    }

    let segments = collect_segments(&order);
    let tol = rule.snap_tolerance;
    let mut pairs: HashSet<(usize, usize)> = HashSet::new();

    if !segments.is_empty() {
        let cell = cell_size(&segments, tol);
        let grid = grid_index(&segments, cell, tol);
        for bucket in grid.values() {
            for (i, &si) in bucket.iter().enumerate() {
                for &sj in &bucket[i + 1..] {
                    let (s, t) = (&segments[si], &segments[sj]);
                    if s.unit == t.unit {
                        continue;
                    }
                    let key = (s.unit.min(t.unit), s.unit.max(t.unit));
                    if pairs.contains(&key) {
                        continue;
                    }
                    let touching = match rule.kind {
                        ContiguityKind::Queen => segment_distance(s, t) <= tol,
                        ContiguityKind::Rook => shares_edge(s, t, tol),
                    };
                    if touching {
                        pairs.insert(key);
                    }
                }
            }
        }
    }

    let ids = order.iter().map(|p| p.id.clone()).collect();
    let mut edges: Vec<(usize, usize)> = pairs.into_iter().collect();
    edges.sort_unstable();
    ArealGraph::from_edges(ids, &edges)
}

fn collect_segments(order: &[&AreaPolygon]) -> Vec<Segment> {
    let mut out = Vec::new();
    for (unit, poly) in order.iter().enumerate() {
        for ring in &poly.rings {
            if ring.len() == 1 {
                out.push(Segment { unit, a: ring[0], b: ring[0] });
                continue;
            }
            let n = ring.len();
            let closed = ring[0] == ring[n - 1];
            let last = if closed { n - 1 } else { n };
            for i in 0..last {
                let a = ring[i];
                let b = ring[(i + 1) % n];
                if a != b || last == 1 {
                    out.push(Segment { unit, a, b });
                }
            }
        }
    }
    out
}

fn cell_size(segments: &[Segment], tol: f64) -> f64 {
    let mut lengths: Vec<f64> = segments.iter().map(|s| dist(s.a, s.b)).collect();
    lengths.sort_by(|a, b| a.total_cmp(b));
    let median = lengths[lengths.len() / 2];
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for s in segments {
        for p in [s.a, s.b] {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
    }
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    // at least ~1/4096 of the extent so the grid stays bounded
    (2.0 * median).max(4.0 * tol).max(extent / 4096.0).max(1e-12)
}

fn grid_index(segments: &[Segment], cell: f64, tol: f64) -> HashMap<(i64, i64), Vec<usize>> {
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, s) in segments.iter().enumerate() {
        let x0 = ((s.a[0].min(s.b[0]) - tol) / cell).floor() as i64;
        let x1 = ((s.a[0].max(s.b[0]) + tol) / cell).floor() as i64;
        let y0 = ((s.a[1].min(s.b[1]) - tol) / cell).floor() as i64;
        let y1 = ((s.a[1].max(s.b[1]) + tol) / cell).floor() as i64;
        for gx in x0..=x1 {
            for gy in y0..=y1 {
                grid.entry((gx, gy)).or_default().push(i);
            }
        }
    }
    grid
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = sub(a, b);
    dot(d, d).sqrt()
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0);
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

fn segments_cross(s: &Segment, t: &Segment) -> bool {
    let d1 = cross(sub(s.b, s.a), sub(t.a, s.a));
    let d2 = cross(sub(s.b, s.a), sub(t.b, s.a));
    let d3 = cross(sub(t.b, t.a), sub(s.a, t.a));
    let d4 = cross(sub(t.b, t.a), sub(s.b, t.a));
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

fn segment_distance(s: &Segment, t: &Segment) -> f64 {
    if segments_cross(s, t) {
        return 0.0;
    }
    point_segment_distance(s.a, t.a, t.b)
        .min(point_segment_distance(s.b, t.a, t.b))
        .min(point_segment_distance(t.a, s.a, s.b))
        .min(point_segment_distance(t.b, s.a, s.b))
}

/// Collinear (within `tol`) with an overlap longer than `tol`.
fn shares_edge(s: &Segment, t: &Segment, tol: f64) -> bool {
    let (long, short) = if dist(s.a, s.b) >= dist(t.a, t.b) { (s, t) } else { (t, s) };
    let dir = sub(long.b, long.a);
    let len = dot(dir, dir).sqrt();
    if len == 0.0 {
        return false;
    }
    let u = [dir[0] / len, dir[1] / len];
    let off_a = cross(u, sub(short.a, long.a)).abs();
    let off_b = cross(u, sub(short.b, long.a)).abs();
    if off_a > tol || off_b > tol {
        return false;
    }
    let ta = dot(sub(short.a, long.a), u);
    let tb = dot(sub(short.b, long.a), u);
    let overlap = len.min(ta.max(tb)) - 0.0f64.max(ta.min(tb));
    let scale = len.max(long.a[0].abs()).max(long.a[1].abs());
    overlap > tol.max(64.0 * f64::EPSILON * scale)
}
