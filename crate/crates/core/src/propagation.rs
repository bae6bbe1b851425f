//! Global surface labels from local matchings.
//!
//! Grid points become graph nodes and checked subintervals become edges
//! weighted by physical distance. Labels are transported along a minimum
//! spanning tree in breadth-first order from the root.

use std::collections::{BTreeMap, HashMap, VecDeque};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::RunConfig;
use crate::grid::{uniform_lattice, ParamBox, ParamPoint};
use crate::matching::{apriori_match, MatchError, MatchedPair};
use crate::refinement::RunState;
use crate::snapshot::{SnapshotError, SnapshotSource};

#[derive(Debug, Error)]
pub enum PropagationError {
    #[error("match graph has {count} components (sizes {sizes:?}); labels cannot cross the gaps")]
    Disconnected { count: usize, sizes: Vec<usize> },
    #[error("root {0} is not a graph node")]
    UnknownRoot(ParamPoint),
    #[error("reference lattice needs 2^k + 1 points per axis, got {0}")]
    BadResolution(usize),
    #[error("no reference point within half a cell of {0}")]
    GridIncompatible(ParamPoint),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error(transparent)]
    Match(#[from] MatchError),
}

/// An edge between nodes `a < b`. `pair.order_a` indexes the snapshot at
/// node `a`, `pair.order_b` the one at node `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
    pub pair: MatchedPair,
    pub clusters: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchGraph {
    /// Nodes in lexicographic order.
    pub points: Vec<ParamPoint>,
    pub edges: Vec<Edge>,
}

/// Physical distance computed from the exact dyadic differences, so that
/// congruent edges get bitwise equal weights and ties break by index.
fn distance(param_box: &ParamBox, p: &ParamPoint, q: &ParamPoint) -> f64 {
    p.reference()
        .iter()
        .zip(q.reference())
        .enumerate()
        .map(|(k, (x, y))| ((y - x) * 0.5 * (param_box.upper[k] - param_box.lower[k])).powi(2))
        .sum::<f64>()
        .sqrt()
}

impl MatchGraph {
    /// Graph on `points` using the checked subintervals of `state` whose
    /// endpoints are both nodes, optionally only the certified ones.
    pub fn from_run<'a>(
        state: &RunState,
        points: impl IntoIterator<Item = &'a ParamPoint>,
        param_box: &ParamBox,
        certified_only: bool,
    ) -> Self {
        let mut points: Vec<ParamPoint> = points.into_iter().cloned().collect();
        points.sort();
        points.dedup();
        let index: HashMap<&ParamPoint, usize> = points.iter().enumerate().map(|(i, p)| (p, i)).collect();
        let mut edges = Vec::new();
        for s in &state.checked {
            if certified_only && !s.certified() {
                continue;
            }
            let (Some(&i), Some(&j)) = (index.get(&s.p), index.get(&s.q)) else {
                continue;
            };
            let (a, b, pair) = if i < j {
                (i, j, s.pair.clone())
            } else {
                let swapped = MatchedPair {
                    order_a: s.pair.order_b.clone(),
                    order_b: s.pair.order_a.clone(),
                    matched: s.pair.matched,
                };
                (j, i, swapped)
            };
            edges.push(Edge { a, b, weight: distance(param_box, &s.p, &s.q), pair, clusters: s.report.clusters.clone() });
        }
        MatchGraph { points, edges }
    }

    /// The final labeling graph: final grid points and certified edges.
    pub fn certified(state: &RunState, param_box: &ParamBox) -> Self {
        Self::from_run(state, state.final_points(), param_box, true)
    }

    pub fn node(&self, p: &ParamPoint) -> Option<usize> {
        self.points.binary_search(p).ok()
    }

    /// Kruskal with ties broken by `(weight, a, b)`. Returns edge indices.
    pub fn spanning_forest(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.edges.len()).collect();
        order.sort_by(|&i, &j| {
            let (e, f) = (&self.edges[i], &self.edges[j]);
            e.weight.total_cmp(&f.weight).then((e.a, e.b).cmp(&(f.a, f.b)))
        });
        let mut dsu = Dsu::new(self.points.len());
        order.into_iter().filter(|&i| dsu.union(self.edges[i].a, self.edges[i].b)).collect()
    }

    /// Connected components, each sorted, listed by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut dsu = Dsu::new(self.points.len());
        for e in &self.edges {
            dsu.union(e.a, e.b);
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..self.points.len() {
            groups.entry(dsu.find(i)).or_default().push(i);
        }
        let mut out: Vec<Vec<usize>> = groups.into_values().collect();
        out.sort();
        out
    }
}

struct Dsu {
    parent: Vec<usize>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, x: usize, y: usize) -> bool {
        let (rx, ry) = (self.find(x), self.find(y));
        if rx == ry {
            return false;
        }
        // Smaller index becomes the representative so results are order-free.
        let (lo, hi) = if rx < ry { (rx, ry) } else { (ry, rx) };
        self.parent[hi] = lo;
        true
    }
}

/// Surface ids per node and local eigenindex.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceLabeling {
    pub points: Vec<ParamPoint>,
    /// `labels[node][local]` is the surface id (ids start at 1).
    pub labels: Vec<Vec<u32>>,
    /// Nodes in propagation order; each component starts at its root.
    pub visit_order: Vec<usize>,
    pub surface_count: u32,
}

impl SurfaceLabeling {
    pub fn node(&self, p: &ParamPoint) -> Option<usize> {
        self.points.binary_search(p).ok()
    }

    /// Local eigenindex of `surface` at `node`, if present there.
    pub fn local_index(&self, node: usize, surface: u32) -> Option<usize> {
        self.labels[node].iter().position(|&s| s == surface)
    }

    pub fn presence(&self, surface: u32) -> Vec<bool> {
        self.labels.iter().map(|l| l.contains(&surface)).collect()
    }
}

/// Transports the labels of `near` across an edge. `near_order` and
/// `far_order` map matched positions to local indices on each side.
fn transport(
    near: &[u32],
    near_order: &[usize],
    far_order: &[usize],
    matched: usize,
    clusters: &[Vec<usize>],
    next_id: &mut u32,
) -> Vec<u32> {
    let mut far: Vec<Option<u32>> = vec![None; far_order.len()];
    let in_cluster = |k: usize| clusters.iter().any(|c| c.contains(&k));
    for k in 0..matched {
        if !in_cluster(k) {
            far[far_order[k]] = Some(near[near_order[k]]);
        }
    }
    for c in clusters {
        // Local indices are in ascending eigenvalue order on both sides.
        let mut near_locals: Vec<usize> = c.iter().filter(|&&k| k < near_order.len()).map(|&k| near_order[k]).collect();
        let mut far_locals: Vec<usize> = c.iter().filter(|&&k| k < far_order.len()).map(|&k| far_order[k]).collect();
        near_locals.sort_unstable();
        far_locals.sort_unstable();
        for (n, f) in near_locals.iter().zip(&far_locals) {
            far[*f] = Some(near[*n]);
        }
    }
    far.into_iter()
        .map(|id| {
            id.unwrap_or_else(|| {
                *next_id += 1;
                *next_id
            })
        })
        .collect()
}

/// Propagates labels over a spanning forest; each component is rooted at
/// its smallest node, except the one containing `root`.
pub fn propagate_forest(
    g: &MatchGraph,
    counts: &[usize],
    root: Option<usize>,
) -> SurfaceLabeling {
    assert_eq!(counts.len(), g.points.len());
    let tree = g.spanning_forest();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); g.points.len()];
    for &ei in &tree {
        let e = &g.edges[ei];
        adj[e.a].push((e.b, ei));
        adj[e.b].push((e.a, ei));
    }
    adj.iter_mut().for_each(|v| v.sort_unstable());
    let mut labels: Vec<Option<Vec<u32>>> = vec![None; g.points.len()];
    let mut visit_order = Vec::with_capacity(g.points.len());
    let mut next_id = 0u32;
    let mut starts: Vec<usize> = g.components().into_iter().map(|c| c[0]).collect();
    if let Some(r) = root {
        let pos = g.components().iter().position(|c| c.contains(&r)).expect("root is a node");
        starts[pos] = r;
        let first = starts.remove(pos);
        starts.insert(0, first);
    }
    for start in starts {
        labels[start] = Some((0..counts[start]).map(|_| {
            next_id += 1;
            next_id
        }).collect());
        let mut queue = VecDeque::from([start]);
        visit_order.push(start);
        while let Some(x) = queue.pop_front() {
            for &(y, ei) in &adj[x] {
                if labels[y].is_some() {
                    continue;
                }
                let e = &g.edges[ei];
                let (near_order, far_order) =
                    if e.a == x { (&e.pair.order_a, &e.pair.order_b) } else { (&e.pair.order_b, &e.pair.order_a) };
                let near = labels[x].as_ref().expect("visited");
                let far = transport(near, near_order, far_order, e.pair.matched, &e.clusters, &mut next_id);
                labels[y] = Some(far);
                visit_order.push(y);
                queue.push_back(y);
            }
        }
    }
    SurfaceLabeling {
        points: g.points.clone(),
        labels: labels.into_iter().map(|l| l.expect("every node is visited")).collect(),
        visit_order,
        surface_count: next_id,
    }
}

/// Labels a connected graph from `root`; errors if the graph is disconnected.
pub fn propagate_labels(
    g: &MatchGraph,
    counts: &[usize],
    root: &ParamPoint,
) -> Result<SurfaceLabeling, PropagationError> {
    let r = g.node(root).ok_or_else(|| PropagationError::UnknownRoot(root.clone()))?;
    let comps = g.components();
    if comps.len() > 1 {
        return Err(PropagationError::Disconnected { count: comps.len(), sizes: comps.iter().map(Vec::len).collect() });
    }
    Ok(propagate_forest(g, counts, Some(r)))
}

fn snapshot_counts(src: &dyn SnapshotSource, points: &[ParamPoint]) -> Result<Vec<usize>, SnapshotError> {
    points.iter().map(|p| src.snapshot(p).map(|s| s.len())).collect()
}

/// Final labeling of a finished run: certified edges over the final grid,
/// rooted at the lexicographically smallest point.
pub fn label_run(state: &RunState, src: &dyn SnapshotSource) -> Result<SurfaceLabeling, PropagationError> {
    let g = MatchGraph::certified(state, src.param_box());
    let counts = snapshot_counts(src, &g.points)?;
    let root = g.points[0].clone();
    propagate_labels(&g, &counts, &root)
}

/// Dense reference labeling on a uniform lattice: every lattice edge is
/// matched a priori and nothing is verified.
pub fn reference_solution(
    cfg: &RunConfig,
    src: &dyn SnapshotSource,
    points_per_axis: usize,
) -> Result<SurfaceLabeling, PropagationError> {
    let lattice = uniform_lattice(points_per_axis, cfg.dim()).ok_or(PropagationError::BadResolution(points_per_axis))?;
    src.prefetch(&lattice)?;
    let step = 2.0 / (points_per_axis - 1) as f64;
    let mut pairs = Vec::new();
    for (i, p) in lattice.iter().enumerate() {
        let rp = p.reference();
        for (j, q) in lattice.iter().enumerate().skip(i + 1) {
            let rq = q.reference();
            let diffs: Vec<f64> = rp.iter().zip(&rq).map(|(x, y)| (y - x).abs()).collect();
            let along = diffs.iter().filter(|&&d| (d - step).abs() < 1e-12).count();
            let zero = diffs.iter().filter(|&&d| d == 0.0).count();
            if along == 1 && zero + 1 == diffs.len() {
                pairs.push((i, j));
            }
        }
    }
    let edges = pairs
        .par_iter()
        .map(|&(i, j)| -> Result<Edge, PropagationError> {
            let a = src.snapshot(&lattice[i])?;
            let b = src.snapshot(&lattice[j])?;
            let m = apriori_match(&a, &b, src.mass(), cfg.w1, cfg.w2)?;
            Ok(Edge {
                a: i,
                b: j,
                weight: distance(src.param_box(), &lattice[i], &lattice[j]),
                pair: m.pair,
                clusters: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let g = MatchGraph { points: lattice, edges };
    let counts = snapshot_counts(src, &g.points)?;
    let root = g.points[0].clone();
    propagate_labels(&g, &counts, &root)
}

/// Reference surface ids for each local eigenindex at `p`; `None` where the
/// reference has no counterpart. Points off the reference lattice borrow
/// labels from the nearest lattice point through one a priori matching.
fn reference_labels_at(
    reference: &SurfaceLabeling,
    p: &ParamPoint,
    src: &dyn SnapshotSource,
    cfg: &RunConfig,
) -> Result<Vec<Option<u32>>, PropagationError> {
    if let Some(i) = reference.node(p) {
        return Ok(reference.labels[i].iter().map(|&s| Some(s)).collect());
    }
    let rp = p.reference();
    let per_axis = (reference.points.len() as f64).powf(1.0 / rp.len() as f64).round();
    let half_cell = 1.0 / (per_axis - 1.0).max(1.0);
    let (best, dist) = reference
        .points
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let d = q.reference().iter().zip(&rp).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            (i, d)
        })
        .min_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)))
        .ok_or_else(|| PropagationError::GridIncompatible(p.clone()))?;
    if dist > half_cell + 1e-12 {
        return Err(PropagationError::GridIncompatible(p.clone()));
    }
    let a = src.snapshot(&reference.points[best])?;
    let b = src.snapshot(p)?;
    let m = apriori_match(&a, &b, src.mass(), cfg.w1, cfg.w2)?;
    let mut out = vec![None; b.len()];
    for k in 0..m.pair.matched {
        out[m.pair.order_b[k]] = Some(reference.labels[best][m.pair.order_a[k]]);
    }
    Ok(out)
}

/// Number of nodes of `adaptive` whose pairing disagrees with the reference.
///
/// Nodes are visited in propagation order while adaptive ids are bound to
/// reference ids found at the same local index. A node is wrong when one of
/// its eigenpairs carries adaptive id `a` and reference id `r` while
///
/// * `a` is already bound to another reference id that is also present at
///   this node, or
/// * `r` is already bound to another adaptive id that is also present here.
///
/// Otherwise the binding is extended. Window entry mints fresh ids, so one
/// physical surface can carry several ids on either side; binding more than
/// one id is only a contradiction when both labelings speak about the same
/// node.
pub fn count_wrongly_matched(
    adaptive: &SurfaceLabeling,
    reference: &SurfaceLabeling,
    src: &dyn SnapshotSource,
    cfg: &RunConfig,
) -> Result<usize, PropagationError> {
    let mut bound: HashMap<u32, Vec<u32>> = HashMap::new();
    let mut owners: HashMap<u32, Vec<u32>> = HashMap::new();
    let mut wrong = 0;
    for &node in &adaptive.visit_order {
        let refs = reference_labels_at(reference, &adaptive.points[node], src, cfg)?;
        let here_a = &adaptive.labels[node];
        let here_r: Vec<u32> = refs.iter().flatten().copied().collect();
        let mut bad = false;
        for (local, &a) in here_a.iter().enumerate() {
            let Some(r) = refs.get(local).copied().flatten() else {
                continue;
            };
            let clash_r = bound.get(&a).is_some_and(|rs| rs.iter().any(|&x| x != r && here_r.contains(&x)));
            let clash_a = owners.get(&r).is_some_and(|as_| as_.iter().any(|&x| x != a && here_a.contains(&x)));
            if clash_r || clash_a {
                bad = true;
                continue;
            }
            let rs = bound.entry(a).or_default();
            if !rs.contains(&r) {
                rs.push(r);
            }
            let as_ = owners.entry(r).or_default();
            if !as_.contains(&a) {
                as_.push(a);
            }
        }
        if bad {
            wrong += 1;
        }
    }
    Ok(wrong)
}

/// Labeling of an intermediate grid from every subinterval checked among
/// its points, certified or not. Disconnected parts get their own ids.
pub fn level_labeling<'a>(
    state: &RunState,
    points: impl IntoIterator<Item = &'a ParamPoint>,
    src: &dyn SnapshotSource,
) -> Result<SurfaceLabeling, PropagationError> {
    let g = MatchGraph::from_run(state, points, src.param_box(), false);
    let counts = snapshot_counts(src, &g.points)?;
    Ok(propagate_forest(&g, &counts, Some(0)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ErrorRow {
    pub level: u32,
    pub points: usize,
    pub wrongly_matched: usize,
    pub subintervals_checked: usize,
    pub subintervals_uncertified: usize,
}

/// Per-level comparison against a reference labeling. Level `l` is labeled
/// using every subinterval checked between points of `P^(l)`, certified or
/// not, since intermediate levels are not yet fully certified.
pub fn error_table(
    state: &RunState,
    reference: &SurfaceLabeling,
    src: &dyn SnapshotSource,
    cfg: &RunConfig,
) -> Result<Vec<ErrorRow>, PropagationError> {
    let mut rows = Vec::new();
    for (lvl, rec) in state.levels.iter().zip(&state.records) {
        let labeling = level_labeling(state, &lvl.points, src)?;
        rows.push(ErrorRow {
            level: lvl.level,
            points: lvl.points.len(),
            wrongly_matched: count_wrongly_matched(&labeling, reference, src, cfg)?,
            subintervals_checked: rec.subintervals_checked,
            subintervals_uncertified: rec.subintervals_uncertified,
        });
    }
    Ok(rows)
}
