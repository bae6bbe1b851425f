//! Piecewise-linear surrogate of each labeled eigenvalue surface.
//!
//! The cells are built once over the whole final grid: consecutive points in
//! 1D, a Delaunay triangulation in 2D. A cell interpolates a surface only when
//! the surface is present at every vertex, so entry into and exit from the
//! window leave the surrogate undefined instead of bridging the gap. For
//! three or more parameters no cells are built and every surface is
//! point-only.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::delaunay::{triangulate, TriangulationError};
use crate::grid::{DyadicCoord, ParamBox, ParamPoint};
use crate::propagation::SurfaceLabeling;
use crate::snapshot::{SnapshotError, SnapshotSource};

/// Reference-coordinate distance below which a query counts as hitting a
/// sample, and the barycentric slack for cell membership.
const SNAP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("query {0:?} lies outside the parameter box")]
    OutsideBox(Vec<f64>),
    #[error("expected {expected} coordinates, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("unknown surface id {0}")]
    UnknownSurface(u32),
    #[error("surface {surface} has a sample at {point}, which is not a grid point")]
    NotOnGrid { surface: u32, point: ParamPoint },
    #[error("surface {surface} has two samples at {point}")]
    DuplicateSample { surface: u32, point: ParamPoint },
    #[error(transparent)]
    Triangulation(#[from] TriangulationError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("surrogate CSV line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    param_box: ParamBox,
    /// Grid points, sorted; in 2D followed by any added box corners.
    vertices: Vec<ParamPoint>,
    grid_len: usize,
    /// Segments (1D) or triangles (2D) as vertex index lists.
    cells: Vec<Vec<usize>>,
    /// Per surface id, the sampled eigenvalue at each vertex.
    surfaces: BTreeMap<u32, Vec<Option<f64>>>,
}

impl Surrogate {
    /// Builds from a labeling and the snapshots it was made from.
    pub fn build(labeling: &SurfaceLabeling, src: &dyn SnapshotSource) -> Result<Self, SurrogateError> {
        let mut samples = Vec::new();
        for (node, p) in labeling.points.iter().enumerate() {
            let snap = src.snapshot(p)?;
            for (local, &id) in labeling.labels[node].iter().enumerate() {
                samples.push((id, p.clone(), snap.values[local]));
            }
        }
        Self::from_samples(src.param_box().clone(), labeling.points.clone(), samples)
    }

    /// Builds from explicit `(surface id, point, λ)` samples on `grid`.
    pub fn from_samples(
        param_box: ParamBox,
        mut grid: Vec<ParamPoint>,
        samples: impl IntoIterator<Item = (u32, ParamPoint, f64)>,
    ) -> Result<Self, SurrogateError> {
        let dim = param_box.dim();
        if let Some(p) = grid.iter().find(|p| p.dim() != dim) {
            return Err(SurrogateError::Dimension { expected: dim, got: p.dim() });
        }
        grid.sort();
        grid.dedup();
        let grid_len = grid.len();
        let (vertices, cells) = match dim {
            1 => {
                let cells = (1..grid_len).map(|i| vec![i - 1, i]).collect();
                (grid, cells)
            }
            2 => {
                let t = triangulate(&grid)?;
                (t.vertices, t.triangles.iter().map(|c| c.to_vec()).collect())
            }
            _ => (grid, Vec::new()),
        };
        let mut surfaces: BTreeMap<u32, Vec<Option<f64>>> = BTreeMap::new();
        for (surface, point, lambda) in samples {
            let Ok(v) = vertices[..grid_len].binary_search(&point) else {
                return Err(SurrogateError::NotOnGrid { surface, point });
            };
            let slot = &mut surfaces.entry(surface).or_insert_with(|| vec![None; vertices.len()])[v];
            if slot.is_some() {
                return Err(SurrogateError::DuplicateSample { surface, point });
            }
            *slot = Some(lambda);
        }
        Ok(Surrogate { param_box, vertices, grid_len, cells, surfaces })
    }

    pub fn param_box(&self) -> &ParamBox {
        &self.param_box
    }

    pub fn grid(&self) -> &[ParamPoint] {
        &self.vertices[..self.grid_len]
    }

    pub fn surface_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.surfaces.keys().copied()
    }

    /// `(point, λ)` samples of one surface in grid order.
    pub fn samples(&self, surface: u32) -> Result<Vec<(&ParamPoint, f64)>, SurrogateError> {
        let values = self.surfaces.get(&surface).ok_or(SurrogateError::UnknownSurface(surface))?;
        Ok(self.vertices.iter().zip(values).filter_map(|(p, v)| v.map(|v| (p, v))).collect())
    }

    fn active(&self, values: &[Option<f64>], cell: &[usize]) -> bool {
        cell.iter().all(|&v| values[v].is_some())
    }

    /// True if the surface has no cell to interpolate over.
    pub fn is_point_only(&self, surface: u32) -> Result<bool, SurrogateError> {
        let values = self.surfaces.get(&surface).ok_or(SurrogateError::UnknownSurface(surface))?;
        Ok(!self.cells.iter().any(|c| self.active(values, c)))
    }

    /// Interpolated eigenvalue of `surface` at the physical point `mu`, or
    /// `None` where the surface has no coverage.
    pub fn eval(&self, surface: u32, mu: &[f64]) -> Result<Option<f64>, SurrogateError> {
        let dim = self.param_box.dim();
        if mu.len() != dim {
            return Err(SurrogateError::Dimension { expected: dim, got: mu.len() });
        }
        if !self.param_box.contains(mu) {
            return Err(SurrogateError::OutsideBox(mu.to_vec()));
        }
        let values = self.surfaces.get(&surface).ok_or(SurrogateError::UnknownSurface(surface))?;
        let r = self.param_box.to_reference(mu);
        for (v, p) in self.vertices.iter().enumerate() {
            let hit = p.coords().iter().zip(&r).all(|(c, x)| (c.value() - x).abs() <= SNAP);
            if hit {
                return Ok(values[v]);
            }
        }
        for cell in self.cells.iter().filter(|c| self.active(values, c)) {
            let xs: Vec<Vec<f64>> = cell.iter().map(|&v| self.vertices[v].reference()).collect();
            if let Some(w) = barycentric(&xs, &r) {
                let lambda = cell.iter().zip(&w).map(|(&v, wk)| wk * values[v].expect("active")).sum();
                return Ok(Some(lambda));
            }
        }
        Ok(None)
    }

    /// CSV with one `grid` row per grid point and one `sample` row per
    /// `(surface, point)`. Points are stored exactly as dyadic numerators and
    /// denominator exponents; the physical columns are for plotting.
    pub fn to_csv(&self) -> String {
        let dim = self.param_box.dim();
        let mut out = String::from("kind,surface_id");
        for k in 1..=dim {
            let _ = write!(out, ",num_{k},log2den_{k}");
        }
        for k in 1..=dim {
            let _ = write!(out, ",mu_{k}");
        }
        out.push_str(",lambda\n");
        let row = |out: &mut String, kind: &str, id: Option<u32>, p: &ParamPoint, lambda: Option<f64>| {
            out.push_str(kind);
            out.push(',');
            if let Some(id) = id {
                let _ = write!(out, "{id}");
            }
            for c in p.coords() {
                let _ = write!(out, ",{},{}", c.numerator(), c.log2_denominator());
            }
            for x in self.param_box.to_physical(p) {
                let _ = write!(out, ",{x:.16e}");
            }
            out.push(',');
            if let Some(l) = lambda {
                let _ = write!(out, "{l:.16e}");
            }
            out.push('\n');
        };
        for p in self.grid() {
            row(&mut out, "grid", None, p, None);
        }
        for (&id, values) in &self.surfaces {
            for (p, v) in self.vertices.iter().zip(values) {
                if let Some(v) = v {
                    row(&mut out, "sample", Some(id), p, Some(*v));
                }
            }
        }
        out
    }

    pub fn from_csv(text: &str, param_box: ParamBox) -> Result<Self, SurrogateError> {
        let dim = param_box.dim();
        let width = 3 + 3 * dim;
        let mut grid = Vec::new();
        let mut samples = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            let line_no = i + 1;
            let err = |reason: String| SurrogateError::Parse { line: line_no, reason };
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != width {
                return Err(err(format!("expected {width} fields, got {}", fields.len())));
            }
            let mut coords = Vec::with_capacity(dim);
            for k in 0..dim {
                let num: i64 = fields[2 + 2 * k].parse().map_err(|e| err(format!("numerator: {e}")))?;
                let den: u32 = fields[3 + 2 * k].parse().map_err(|e| err(format!("denominator: {e}")))?;
                coords.push(DyadicCoord::new(num, den).ok_or_else(|| err(format!("{num}/2^{den} leaves [-1, 1]")))?);
            }
            let p = ParamPoint::new(coords);
            match fields[0] {
                "grid" => grid.push(p),
                "sample" => {
                    let id: u32 = fields[1].parse().map_err(|e| err(format!("surface id: {e}")))?;
                    let lambda: f64 = fields[width - 1].parse().map_err(|e| err(format!("lambda: {e}")))?;
                    samples.push((id, p, lambda));
                }
                other => return Err(err(format!("unknown row kind {other:?}"))),
            }
        }
        Self::from_samples(param_box, grid, samples)
    }
}

/// Barycentric weights of `x` in the simplex `xs` (1 or 2 dimensions), or
/// `None` if `x` lies outside it.
fn barycentric(xs: &[Vec<f64>], x: &[f64]) -> Option<Vec<f64>> {
    let w = match xs.len() {
        2 => {
            let (a, b) = (xs[0][0], xs[1][0]);
            let t = (x[0] - a) / (b - a);
            vec![1.0 - t, t]
        }
        3 => {
            let (a, b, c) = (&xs[0], &xs[1], &xs[2]);
            let det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
            let l1 = ((x[0] - a[0]) * (c[1] - a[1]) - (x[1] - a[1]) * (c[0] - a[0])) / det;
            let l2 = ((b[0] - a[0]) * (x[1] - a[1]) - (b[1] - a[1]) * (x[0] - a[0])) / det;
            vec![1.0 - l1 - l2, l1, l2]
        }
        _ => return None,
    };
    w.iter().all(|&v| v >= -SNAP).then_some(w)
}
