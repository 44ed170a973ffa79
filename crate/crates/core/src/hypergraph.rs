//! Directed triangle hypergraphs built from Delaunay triangulations.
//!
//! The triangulation is built by a lexicographic sweep (every new point lies
//! outside the current hull and is fanned to the visible hull edges), followed
//! by Lawson edge flips until every edge is locally Delaunay. Orientation and
//! in-circle tests use adaptive exact predicates. Exactly cocircular quads are
//! resolved by a symbolic perturbation that lowers each lifted point by an
//! infinitesimal ranked by landmark id, so the diagonal through the smallest
//! id wins. The result does not depend on insertion order.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use robust::Coord;
use serde::Serialize;

use crate::error::{FusionError, Result};
use crate::geom::Point2;
use crate::mapmodel::{Landmark, LandmarkId, StochasticMap};

/// Relative tolerance under which two triangle edges count as equal.
pub const EDGE_TIE_RTOL: f64 = 1e-9;

#[inline]
fn coord(p: Point2) -> Coord<f64> {
    Coord { x: p.x, y: p.y }
}

#[inline]
fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    robust::orient2d(coord(a), coord(b), coord(c))
}

/// Delaunay triangulation over point indices. Triangles are returned in
/// counter-clockwise vertex order. `rank` drives the cocircular tie-break.
pub(crate) fn delaunay_indices(points: &[Point2], rank: &[u64]) -> Result<Vec<[usize; 3]>> {
    let n = points.len();
    debug_assert_eq!(rank.len(), n);
    if n < 3 {
        return Err(FusionError::InvalidParameter(format!(
            "triangulation needs at least 3 points, got {n}"
        )));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(FusionError::NonFinite("triangulation input"));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| lex_cmp(points[i], points[j]).then(rank[i].cmp(&rank[j])));
    for w in order.windows(2) {
        if points[w[0]] == points[w[1]] {
            return Err(FusionError::DuplicatePoint(
                LandmarkId(rank[w[0]]),
                LandmarkId(rank[w[1]]),
            ));
        }
    }

    // Leading run of collinear points, then the first point off that line.
    let p0 = points[order[0]];
    let p1 = points[order[1]];
    let apex_pos = (2..n)
        .find(|&k| orient(p0, p1, points[order[k]]) != 0.0)
        .ok_or(FusionError::Collinear(n))?;
    let apex = order[apex_pos];
    let chain = &order[..apex_pos];

    let mut mesh = Mesh::default();
    let left = orient(p0, p1, points[apex]) > 0.0;
    for w in chain.windows(2) {
        if left {
            mesh.add([w[0], w[1], apex]);
        } else {
            mesh.add([w[1], w[0], apex]);
        }
    }
    let mut hull: Vec<usize> = if left {
        chain.iter().copied().chain(std::iter::once(apex)).collect()
    } else {
        chain
            .iter()
            .rev()
            .copied()
            .chain(std::iter::once(apex))
            .collect()
    };

    for &p in &order[apex_pos + 1..] {
        let pp = points[p];
        let h = hull.len();
        let visible: Vec<bool> = (0..h)
            .map(|i| orient(points[hull[i]], points[hull[(i + 1) % h]], pp) < 0.0)
            .collect();
        // The visible edges form one cyclic run; find where it starts.
        let start = (0..h)
            .find(|&i| visible[i] && !visible[(i + h - 1) % h])
            .expect("a point beyond the sweep line sees at least one hull edge");
        let mut k = start;
        while visible[k] {
            let (u, v) = (hull[k], hull[(k + 1) % h]);
            mesh.add([v, u, p]);
            k = (k + 1) % h;
        }
        // hull[start] .. hull[k] are now joined through p.
        let mut next = Vec::with_capacity(h + 1);
        let mut i = k;
        loop {
            next.push(hull[i]);
            if i == start {
                break;
            }
            i = (i + 1) % h;
        }
        next.push(p);
        hull = next;
    }

    mesh.legalize(points, rank);
    Ok(mesh.tris)
}

fn lex_cmp(a: Point2, b: Point2) -> Ordering {
    a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y))
}

#[derive(Default)]
struct Mesh {
    tris: Vec<[usize; 3]>,
    /// Directed edge (u, v) -> triangle holding it in CCW order.
    edges: HashMap<(usize, usize), usize>,
}

impl Mesh {
    fn add(&mut self, t: [usize; 3]) {
        let idx = self.tris.len();
        self.tris.push(t);
        self.index(idx);
    }

    fn index(&mut self, idx: usize) {
        let t = self.tris[idx];
        for k in 0..3 {
            self.edges.insert((t[k], t[(k + 1) % 3]), idx);
        }
    }

    fn unindex(&mut self, idx: usize) {
        let t = self.tris[idx];
        for k in 0..3 {
            self.edges.remove(&(t[k], t[(k + 1) % 3]));
        }
    }

    fn legalize(&mut self, points: &[Point2], rank: &[u64]) {
        let mut stack: Vec<(usize, usize)> = self
            .edges
            .keys()
            .filter(|&&(u, v)| u < v && self.edges.contains_key(&(v, u)))
            .copied()
            .collect();
        stack.sort_unstable();

        while let Some((u, v)) = stack.pop() {
            let (Some(&t1), Some(&t2)) = (self.edges.get(&(u, v)), self.edges.get(&(v, u))) else {
                continue;
            };
            let w = third(self.tris[t1], u, v);
            let x = third(self.tris[t2], v, u);
            if !flip_needed(points, rank, u, v, w, x) {
                continue;
            }
            self.unindex(t1);
            self.unindex(t2);
            self.tris[t1] = [w, u, x];
            self.tris[t2] = [x, v, w];
            self.index(t1);
            self.index(t2);
            stack.extend([(u, x), (x, v), (v, w), (w, u)]);
        }
    }
}

/// Vertex of CCW triangle `t` that follows the directed edge `(u, v)`.
fn third(t: [usize; 3], u: usize, v: usize) -> usize {
    for k in 0..3 {
        if t[k] == u && t[(k + 1) % 3] == v {
            return t[(k + 2) % 3];
        }
    }
    unreachable!("edge not in triangle")
}

/// Edge `(u, v)` shared by CCW triangles `(u, v, w)` and `(v, u, x)` must be
/// flipped when `x` lies inside the circumcircle of `(u, v, w)`.
fn flip_needed(points: &[Point2], rank: &[u64], u: usize, v: usize, w: usize, x: usize) -> bool {
    let det = robust::incircle(
        coord(points[u]),
        coord(points[v]),
        coord(points[w]),
        coord(points[x]),
    );
    if det != 0.0 {
        return det > 0.0;
    }
    let lowest = [u, v, w, x].into_iter().min_by_key(|&i| rank[i]).unwrap();
    lowest == w || lowest == x
}

/// Delaunay triangle set of the landmarks as id triples (CCW order).
pub fn delaunay_triangulate(points: &[Landmark]) -> Result<Vec<[LandmarkId; 3]>> {
    let pos: Vec<Point2> = points.iter().map(|l| l.pos).collect();
    let rank: Vec<u64> = points.iter().map(|l| l.id.0).collect();
    let tris = delaunay_indices(&pos, &rank)?;
    Ok(tris.into_iter().map(|t| t.map(|i| points[i].id)).collect())
}

/// Unique undirected edges of a triangle list, as index pairs `(lo, hi)`.
pub(crate) fn unique_edges(tris: &[[usize; 3]]) -> Vec<(usize, usize)> {
    let mut set = BTreeSet::new();
    for t in tris {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            set.insert((a.min(b), a.max(b)));
        }
    }
    set.into_iter().collect()
}

/// Triangle with vertices labeled so that `|ab| < |bc| < |ca|`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectedTriangle {
    pub ids: [LandmarkId; 3],
    pub pos: [Point2; 3],
    /// `(|ab|, |bc|, |ca|)`
    pub edge_lengths: [f64; 3],
    pub perimeter: f64,
}

impl DirectedTriangle {
    pub fn a(&self) -> LandmarkId {
        self.ids[0]
    }
    pub fn b(&self) -> LandmarkId {
        self.ids[1]
    }
    pub fn c(&self) -> LandmarkId {
        self.ids[2]
    }
}

/// Labels three landmarks in Groth order. `b` is the vertex shared by the two
/// shortest edges, `a` closes the shortest edge and `c` the middle one.
pub fn groth_order(vertices: [(LandmarkId, Point2); 3]) -> Result<DirectedTriangle> {
    let [(i0, p0), (i1, p1), (i2, p2)] = vertices;
    if !(p0.is_finite() && p1.is_finite() && p2.is_finite()) {
        return Err(FusionError::NonFinite("triangle vertices"));
    }
    if p0 == p1 || p1 == p2 || p0 == p2 {
        return Err(FusionError::DegenerateGeometry(format!(
            "triangle ({i0}, {i1}, {i2}) has coincident vertices"
        )));
    }
    if orient(p0, p1, p2) == 0.0 {
        return Err(FusionError::DegenerateGeometry(format!(
            "triangle ({i0}, {i1}, {i2}) is collinear"
        )));
    }
    // Edge k is opposite vertex k.
    let opposite = [p1.dist(p2), p0.dist(p2), p0.dist(p1)];
    let mut by_len = [0usize, 1, 2];
    by_len.sort_by(|&x, &y| opposite[x].total_cmp(&opposite[y]));
    let [short, mid, long] = by_len.map(|k| opposite[k]);
    if mid - short <= EDGE_TIE_RTOL * mid || long - mid <= EDGE_TIE_RTOL * long {
        return Err(FusionError::EdgeTie(i0, i1, i2));
    }
    // The vertex opposite the longest edge joins the two shorter ones, and so on.
    let b = by_len[2];
    let a = by_len[1];
    let c = by_len[0];
    let ids = [i0, i1, i2];
    let pts = [p0, p1, p2];
    Ok(DirectedTriangle {
        ids: [ids[a], ids[b], ids[c]],
        pos: [pts[a], pts[b], pts[c]],
        edge_lengths: [short, mid, long],
        perimeter: short + mid + long,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TriangleHypergraph {
    pub vertices: BTreeSet<LandmarkId>,
    /// Sorted by perimeter, ties broken by the id triple.
    pub edges: Vec<DirectedTriangle>,
    /// Delaunay triangles discarded because two edges tie.
    pub dropped_ties: usize,
}

impl TriangleHypergraph {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

pub fn build_hypergraph(map: &StochasticMap) -> Result<TriangleHypergraph> {
    hypergraph_from_landmarks(map.landmarks())
}

pub(crate) fn hypergraph_from_landmarks(landmarks: &[Landmark]) -> Result<TriangleHypergraph> {
    let pos: Vec<Point2> = landmarks.iter().map(|l| l.pos).collect();
    let rank: Vec<u64> = landmarks.iter().map(|l| l.id.0).collect();
    let tris = delaunay_indices(&pos, &rank)?;

    let mut edges = Vec::with_capacity(tris.len());
    let mut dropped_ties = 0;
    for t in tris {
        let v = t.map(|i| (landmarks[i].id, landmarks[i].pos));
        match groth_order(v) {
            Ok(tri) => edges.push(tri),
            Err(FusionError::EdgeTie(..)) => dropped_ties += 1,
            Err(e) => return Err(e),
        }
    }
    edges.sort_by(|x, y| {
        x.perimeter
            .total_cmp(&y.perimeter)
            .then_with(|| x.ids.cmp(&y.ids))
    });
    Ok(TriangleHypergraph {
        vertices: landmarks.iter().map(|l| l.id).collect(),
        edges,
        dropped_ties,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lm(id: u64, x: f64, y: f64) -> Landmark {
        Landmark::new(LandmarkId(id), Point2::new(x, y))
    }

    #[test]
    fn groth_example() {
        let t = groth_order([
            (LandmarkId(1), Point2::new(0.0, 0.0)),
            (LandmarkId(2), Point2::new(1.0, 0.0)),
            (LandmarkId(3), Point2::new(0.0, 2.0)),
        ])
        .unwrap();
        assert_eq!(t.ids, [LandmarkId(2), LandmarkId(1), LandmarkId(3)]);
        assert_eq!(t.edge_lengths[0], 1.0);
        assert_eq!(t.edge_lengths[1], 2.0);
        assert!((t.edge_lengths[2] - 5f64.sqrt()).abs() < 1e-15);
        assert!((t.perimeter - (3.0 + 5f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn groth_brute_force_labeling() {
        // Exactly one of the six labelings satisfies the strict inequality.
        let pts = [
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(0.0, 2.0),
        ];
        let perms = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let ok: Vec<_> = perms
            .iter()
            .filter(|p| {
                let (a, b, c) = (pts[p[0]], pts[p[1]], pts[p[2]]);
                a.dist(b) < b.dist(c) && b.dist(c) < c.dist(a)
            })
            .collect();
        assert_eq!(ok, vec![&[1, 0, 2]]);
    }

    #[test]
    fn groth_equilateral_is_tie() {
        let h = 3f64.sqrt() / 2.0;
        let r = groth_order([
            (LandmarkId(1), Point2::new(0.0, 0.0)),
            (LandmarkId(2), Point2::new(1.0, 0.0)),
            (LandmarkId(3), Point2::new(0.5, h)),
        ]);
        assert!(matches!(r, Err(FusionError::EdgeTie(..))));
    }

    #[test]
    fn groth_rejects_collinear_and_duplicates() {
        let r = groth_order([
            (LandmarkId(1), Point2::new(0.0, 0.0)),
            (LandmarkId(2), Point2::new(1.0, 0.0)),
            (LandmarkId(3), Point2::new(3.0, 0.0)),
        ]);
        assert!(matches!(r, Err(FusionError::DegenerateGeometry(_))));
        let r = groth_order([
            (LandmarkId(1), Point2::new(0.0, 0.0)),
            (LandmarkId(2), Point2::new(0.0, 0.0)),
            (LandmarkId(3), Point2::new(3.0, 1.0)),
        ]);
        assert!(matches!(r, Err(FusionError::DegenerateGeometry(_))));
    }

    #[test]
    fn groth_rigid_invariance() {
        let raw = [
            (LandmarkId(1), Point2::new(0.0, 0.0)),
            (LandmarkId(2), Point2::new(1.0, 0.0)),
            (LandmarkId(3), Point2::new(0.0, 2.0)),
        ];
        let g = crate::geom::Rigid2::new(1.3, Point2::new(50.0, -20.0));
        let moved = raw.map(|(i, p)| (i, g.apply(p)));
        assert_eq!(
            groth_order(raw).unwrap().ids,
            groth_order(moved).unwrap().ids
        );
    }

    #[test]
    fn single_triangle() {
        let tris =
            delaunay_triangulate(&[lm(0, 0.0, 0.0), lm(1, 1.0, 0.0), lm(2, 0.3, 1.0)]).unwrap();
        assert_eq!(tris.len(), 1);
    }

    #[test]
    fn square_tie_break_uses_smallest_id() {
        let pts = [
            lm(1, 0.0, 0.0),
            lm(2, 1.0, 0.0),
            lm(3, 1.0, 1.0),
            lm(4, 0.0, 1.0),
        ];
        let tris = delaunay_triangulate(&pts).unwrap();
        assert_eq!(tris.len(), 2);
        for t in &tris {
            assert!(t.contains(&LandmarkId(1)) && t.contains(&LandmarkId(3)));
        }
        // Relabeling so that id 1 sits on the other diagonal flips the choice.
        let pts = [
            lm(2, 0.0, 0.0),
            lm(1, 1.0, 0.0),
            lm(3, 1.0, 1.0),
            lm(4, 0.0, 1.0),
        ];
        for t in delaunay_triangulate(&pts).unwrap() {
            assert!(t.contains(&LandmarkId(1)) && t.contains(&LandmarkId(4)));
        }
    }

    #[test]
    fn interior_point_gives_three_triangles() {
        let pts = [
            lm(0, 0.0, 0.0),
            lm(1, 2.0, 0.0),
            lm(2, 1.0, 2.0),
            lm(3, 1.0, 0.5),
        ];
        let tris = delaunay_triangulate(&pts).unwrap();
        assert_eq!(tris.len(), 3);
        for t in &tris {
            assert!(t.contains(&LandmarkId(3)));
        }
    }

    #[test]
    fn errors() {
        assert!(delaunay_triangulate(&[lm(0, 0.0, 0.0), lm(1, 1.0, 0.0)]).is_err());
        let line: Vec<_> = (0..6).map(|i| lm(i, i as f64, 2.0 * i as f64)).collect();
        assert!(matches!(
            delaunay_triangulate(&line),
            Err(FusionError::Collinear(6))
        ));
        let dup = [
            lm(0, 0.0, 0.0),
            lm(1, 1.0, 0.0),
            lm(2, 1.0, 0.0),
            lm(3, 0.0, 1.0),
        ];
        assert!(matches!(
            delaunay_triangulate(&dup),
            Err(FusionError::DuplicatePoint(..))
        ));
    }

    #[test]
    fn collinear_prefix_then_apex() {
        // Five points on x = 0 are swept before the first point off the line.
        let mut pts: Vec<_> = (0..5).map(|i| lm(i, 0.0, i as f64)).collect();
        pts.push(lm(10, 3.0, 0.5));
        pts.push(lm(11, 5.0, 2.2));
        let tris = delaunay_triangulate(&pts).unwrap();
        // all 7 points lie on the hull boundary
        assert_eq!(tris.len(), 7 - 2);
    }

    #[test]
    fn hypergraph_sorted_and_grid_ties_dropped() {
        let pts: Vec<_> = (0..16)
            .map(|i| lm(i, (i % 4) as f64, (i / 4) as f64))
            .collect();
        let map = StochasticMap::new("p", 0.0, pts).unwrap();
        let g = build_hypergraph(&map).unwrap();
        // every lattice triangle is right-isosceles
        assert_eq!(g.edges.len(), 0);
        assert_eq!(g.dropped_ties, 18);
    }
}
