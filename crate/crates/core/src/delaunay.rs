//! Exact Delaunay triangulation of 2D dyadic grid points.
//!
//! Coordinates are scaled to a common power-of-two denominator so the
//! orientation and in-circle predicates run in `i128` without rounding.
//! Points are inserted in lexicographic order into the two triangles of the
//! reference square, whose corners are added as extra vertices when the
//! input lacks them. Cocircular ties keep the earlier triangles, which makes
//! the result a deterministic function of the point set.

use std::collections::HashSet;

use thiserror::Error;

use crate::grid::{DyadicCoord, ParamPoint};

/// Largest common denominator exponent for which the in-circle determinant
/// fits in `i128`.
const MAX_LOG2_DEN: u32 = 29;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TriangulationError {
    #[error("expected 2D points, got dimension {0}")]
    Dimension(usize),
    #[error("duplicate point {0}")]
    Duplicate(ParamPoint),
    #[error("denominator 2^{0} is too fine for exact predicates")]
    TooFine(u32),
}

/// CCW vertex index triple.
pub type Triangle = [usize; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct Triangulation {
    /// The input points followed by any corners of `[-1, 1]²` they lacked.
    pub vertices: Vec<ParamPoint>,
    /// Sorted, each rotated to start at its smallest index.
    pub triangles: Vec<Triangle>,
}

fn orient(a: [i128; 2], b: [i128; 2], c: [i128; 2]) -> i128 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Positive iff `d` lies strictly inside the circumcircle of CCW `a, b, c`.
fn in_circle(a: [i128; 2], b: [i128; 2], c: [i128; 2], d: [i128; 2]) -> i128 {
    let row = |p: [i128; 2]| {
        let x = p[0] - d[0];
        let y = p[1] - d[1];
        (x, y, x * x + y * y)
    };
    let (ax, ay, aw) = row(a);
    let (bx, by, bw) = row(b);
    let (cx, cy, cw) = row(c);
    ax * (by * cw - bw * cy) - ay * (bx * cw - bw * cx) + aw * (bx * cy - by * cx)
}

fn scaled(points: &[ParamPoint]) -> Result<Vec<[i128; 2]>, TriangulationError> {
    let mut den = 0;
    for p in points {
        if p.dim() != 2 {
            return Err(TriangulationError::Dimension(p.dim()));
        }
        den = p.coords().iter().map(|c| c.log2_denominator()).fold(den, u32::max);
    }
    if den > MAX_LOG2_DEN {
        return Err(TriangulationError::TooFine(den));
    }
    Ok(points
        .iter()
        .map(|p| {
            let c = p.coords();
            let s = |k: usize| (c[k].numerator() as i128) << (den - c[k].log2_denominator());
            [s(0), s(1)]
        })
        .collect())
}

/// Delaunay triangulation of points in `[-1, 1]²`.
pub fn triangulate(points: &[ParamPoint]) -> Result<Triangulation, TriangulationError> {
    let mut vertices = points.to_vec();
    for p in &vertices {
        if p.dim() != 2 {
            return Err(TriangulationError::Dimension(p.dim()));
        }
    }
    let mut corners = Vec::with_capacity(4);
    for (x, y) in [(-1, -1), (1, -1), (1, 1), (-1, 1)] {
        let c = ParamPoint::new(vec![DyadicCoord::new(x, 0).expect("±1"), DyadicCoord::new(y, 0).expect("±1")]);
        match vertices.iter().position(|p| *p == c) {
            Some(i) => corners.push(i),
            None => {
                corners.push(vertices.len());
                vertices.push(c);
            }
        }
    }
    let xy = scaled(&vertices)?;
    let mut order: Vec<usize> = (0..vertices.len()).collect();
    order.sort_by(|&i, &j| vertices[i].cmp(&vertices[j]));
    for w in order.windows(2) {
        if vertices[w[0]] == vertices[w[1]] {
            return Err(TriangulationError::Duplicate(vertices[w[0]].clone()));
        }
    }
    let [c00, c10, c11, c01] = [corners[0], corners[1], corners[2], corners[3]];
    let mut tris: Vec<Triangle> = vec![[c00, c10, c11], [c00, c11, c01]];

    for &p in order.iter().filter(|i| !corners.contains(i)) {
        let (cavity, keep): (Vec<Triangle>, Vec<Triangle>) =
            tris.into_iter().partition(|t| in_circle(xy[t[0]], xy[t[1]], xy[t[2]], xy[p]) > 0);
        let directed: HashSet<(usize, usize)> =
            cavity.iter().flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])]).collect();
        tris = keep;
        for t in &cavity {
            for (u, v) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                if directed.contains(&(v, u)) {
                    continue;
                }
                // Skips the hull edge that `p` splits.
                if orient(xy[u], xy[v], xy[p]) > 0 {
                    tris.push([u, v, p]);
                }
            }
        }
    }
    let mut out: Vec<Triangle> = tris
        .into_iter()
        .map(|t| {
            let m = (0..3).min_by_key(|&k| t[k]).expect("three vertices");
            [t[m], t[(m + 1) % 3], t[(m + 2) % 3]]
        })
        .collect();
    out.sort_unstable();
    Ok(Triangulation { vertices, triangles: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::tensor_grid;
    use proptest::prelude::*;

    fn pt(x: (i64, u32), y: (i64, u32)) -> ParamPoint {
        ParamPoint::new(vec![DyadicCoord::new(x.0, x.1).unwrap(), DyadicCoord::new(y.0, y.1).unwrap()])
    }

    fn area2(xy: &[[i128; 2]], t: &Triangle) -> i128 {
        orient(xy[t[0]], xy[t[1]], xy[t[2]])
    }

    fn check_delaunay(points: &[ParamPoint]) {
        let t = triangulate(points).unwrap();
        assert_eq!(&t.vertices[..points.len()], points);
        let (points, tris) = (&t.vertices, &t.triangles);
        let xy = scaled(points).unwrap();
        let total: i128 = tris.iter().map(|t| area2(&xy, t)).sum();
        let one = xy.iter().map(|p| p[0].abs()).max().unwrap();
        assert_eq!(total, 2 * (2 * one) * (2 * one), "triangles must tile the square");
        for t in tris {
            assert!(area2(&xy, t) > 0);
            for (k, &q) in xy.iter().enumerate() {
                if !t.contains(&k) {
                    assert!(in_circle(xy[t[0]], xy[t[1]], xy[t[2]], q) <= 0, "empty circumcircle");
                }
            }
        }
        let used: HashSet<usize> = tris.iter().flatten().copied().collect();
        assert_eq!(used.len(), points.len(), "every point is a vertex");
    }

    #[test]
    fn single_point_gets_the_corners() {
        let t = triangulate(&tensor_grid(0, 2)).unwrap();
        assert_eq!(t.vertices.len(), 5);
        assert_eq!(t.triangles.len(), 4);
        assert!(t.triangles.iter().all(|tri| tri.contains(&0)));
    }

    #[test]
    fn tensor_lattice_counts() {
        let pts = tensor_grid(2, 2);
        let t = triangulate(&pts).unwrap();
        assert_eq!(t.vertices.len(), pts.len());
        assert_eq!(t.triangles.len(), 2 * 16);
        check_delaunay(&pts);
    }

    #[test]
    fn order_of_input_does_not_matter() {
        let mut pts = tensor_grid(1, 2);
        pts.push(pt((1, 2), (-1, 2)));
        pts.push(pt((3, 4), (1, 4)));
        let a: Vec<[ParamPoint; 3]> =
            triangulate(&pts).unwrap().triangles.iter().map(|t| t.map(|i| pts[i].clone())).collect();
        pts.reverse();
        let mut b: Vec<[ParamPoint; 3]> =
            triangulate(&pts).unwrap().triangles.iter().map(|t| t.map(|i| pts[i].clone())).collect();
        let canon = |v: &mut Vec<[ParamPoint; 3]>| {
            for t in v.iter_mut() {
                let m = (0..3).min_by(|&i, &j| t[i].cmp(&t[j])).unwrap();
                t.rotate_left(m);
            }
            v.sort();
        };
        let mut a = a;
        canon(&mut a);
        canon(&mut b);
        assert_eq!(a, b);
    }


    #[test]
    fn duplicates_are_rejected() {
        let mut pts = tensor_grid(0, 2);
        pts.push(pts[0].clone());
        assert!(matches!(triangulate(&pts), Err(TriangulationError::Duplicate(_))));
    }

    proptest! {
        #[test]
        fn random_dyadic_sets_are_delaunay(raw in proptest::collection::btree_set((-16i64..=16, -16i64..=16), 0..40)) {
            let pts: Vec<ParamPoint> = raw.into_iter().map(|(x, y)| pt((x, 4), (y, 4))).collect();
            check_delaunay(&pts);
        }
    }
}
