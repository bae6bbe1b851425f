//! Level-by-level adaptive refinement of the parameter grid.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::RunConfig;
use crate::grid::{midpoint_toward, neighbours, tensor_grid, LevelState, ParamPoint};
use crate::matching::{apriori_match, Assignment, MatchError, MatchedPair};
use crate::snapshot::{SnapshotError, SnapshotSource};
use crate::verification::{verify, CertificationReport};

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("level {level}: {source}")]
    Snapshot { level: u32, source: SnapshotError },
    #[error("level {level}: {source}")]
    Match { level: u32, source: MatchError },
}

/// One checked pair of neighbouring grid points.
#[derive(Debug, Clone, PartialEq)]
pub struct Subinterval {
    pub p: ParamPoint,
    pub q: ParamPoint,
    pub level: u32,
    pub assignment: Assignment,
    pub pair: MatchedPair,
    pub report: CertificationReport,
}

impl Subinterval {
    pub fn certified(&self) -> bool {
        self.report.certified()
    }

    /// Unordered endpoint key.
    pub fn key(&self) -> (ParamPoint, ParamPoint) {
        pair_key(&self.p, &self.q)
    }
}

pub fn pair_key(p: &ParamPoint, q: &ParamPoint) -> (ParamPoint, ParamPoint) {
    if p <= q {
        (p.clone(), q.clone())
    } else {
        (q.clone(), p.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxLevel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LevelRecord {
    pub level: u32,
    pub points_total: usize,
    pub points_new: usize,
    pub subintervals_checked: usize,
    pub subintervals_uncertified: usize,
}

#[derive(Debug, Clone, Default)]
pub struct RunState {
    pub levels: Vec<LevelState>,
    /// Every checked subinterval, in check order.
    pub checked: Vec<Subinterval>,
    index: BTreeMap<(ParamPoint, ParamPoint), usize>,
    pub records: Vec<LevelRecord>,
    pub termination: Option<Termination>,
    /// Points marked at the last level but not added because of the level cap.
    pub pending: BTreeSet<ParamPoint>,
}

impl RunState {
    pub fn new(initial: impl IntoIterator<Item = ParamPoint>) -> Self {
        RunState { levels: vec![LevelState::initial(initial)], ..Default::default() }
    }

    pub fn current(&self) -> &LevelState {
        self.levels.last().expect("a run always has level 0")
    }

    pub fn final_points(&self) -> &BTreeSet<ParamPoint> {
        &self.current().points
    }

    pub fn find(&self, p: &ParamPoint, q: &ParamPoint) -> Option<&Subinterval> {
        self.index.get(&pair_key(p, q)).map(|&i| &self.checked[i])
    }

    fn insert(&mut self, s: Subinterval) {
        let key = s.key();
        debug_assert!(!self.index.contains_key(&key), "pair checked twice");
        self.index.insert(key, self.checked.len());
        self.checked.push(s);
    }
}

/// Matches and verifies one subinterval.
pub fn check_subinterval(
    src: &dyn SnapshotSource,
    cfg: &RunConfig,
    p: &ParamPoint,
    q: &ParamPoint,
    level: u32,
) -> Result<Subinterval, RefineError> {
    let snap_err = |source| RefineError::Snapshot { level, source };
    let match_err = |source| RefineError::Match { level, source };
    let a = src.snapshot(p).map_err(snap_err)?;
    let b = src.snapshot(q).map_err(snap_err)?;
    let m = apriori_match(&a, &b, src.mass(), cfg.w1, cfg.w2).map_err(match_err)?;
    let report = verify(&a, &b, &m.pair, src.mass(), cfg.t_pi, cfg.t_lambda).map_err(match_err)?;
    Ok(Subinterval { p: p.clone(), q: q.clone(), level, assignment: m.assignment, pair: m.pair, report })
}

/// Checks every unchecked subinterval between a new point of the current
/// level and its neighbours. Returns the marked midpoints that are not yet
/// in the grid.
pub fn refine_level(
    state: &mut RunState,
    src: &dyn SnapshotSource,
    cfg: &RunConfig,
) -> Result<BTreeSet<ParamPoint>, RefineError> {
    let current = state.current().clone();
    let level = current.level;
    let mut todo: Vec<(ParamPoint, ParamPoint)> = Vec::new();
    let mut seen = BTreeSet::new();
    for p in &current.new_points {
        for q in neighbours(p) {
            let key = pair_key(p, &q);
            if state.index.contains_key(&key) || !seen.insert(key) {
                continue;
            }
            todo.push((p.clone(), q));
        }
    }
    let mut needed: Vec<ParamPoint> = todo.iter().flat_map(|(p, q)| [p.clone(), q.clone()]).collect();
    needed.sort();
    needed.dedup();
    src.prefetch(&needed).map_err(|source| RefineError::Snapshot { level, source })?;

    let results: Vec<Subinterval> = todo
        .par_iter()
        .map(|(p, q)| check_subinterval(src, cfg, p, q, level))
        .collect::<Result<_, _>>()?;

    let mut marked = BTreeSet::new();
    let mut uncertified = 0;
    let checked = results.len();
    for s in results {
        if !s.certified() {
            uncertified += 1;
            let mid = midpoint_toward(&s.p, &s.q).expect("checked pairs are neighbours");
            if !current.points.contains(&mid) {
                marked.insert(mid);
            }
        }
        state.insert(s);
    }
    state.records.push(LevelRecord {
        level,
        points_total: current.points.len(),
        points_new: current.new_points.len(),
        subintervals_checked: checked,
        subintervals_uncertified: uncertified,
    });
    log::info!(
        "level {level}: {} points, {checked} subintervals checked, {uncertified} uncertified, {} marked",
        current.points.len(),
        marked.len()
    );
    Ok(marked)
}

/// Runs refinement from the initial tensor lattice until a level adds no
/// points or the level cap is reached.
pub fn run_adaptive(cfg: &RunConfig, src: &dyn SnapshotSource) -> Result<RunState, RefineError> {
    let mut state = RunState::new(tensor_grid(cfg.initial_level, cfg.dim()));
    loop {
        let marked = refine_level(&mut state, src, cfg)?;
        let level = state.current().level;
        if marked.is_empty() {
            state.termination = Some(Termination::Converged);
            break;
        }
        if level >= cfg.max_level {
            log::warn!("stopping at max_level {} with {} marked points", cfg.max_level, marked.len());
            state.termination = Some(Termination::MaxLevel);
            state.pending = marked;
            break;
        }
        let next = state.current().next(marked);
        state.levels.push(next);
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;
    use crate::config::tests::PAPER_1D;
    use crate::grid::are_neighbours;
    use crate::snapshot::SnapshotStore;

    fn coarse_cfg() -> RunConfig {
        let mut cfg = parse_config(PAPER_1D).unwrap();
        cfg.mesh_n = 17;
        cfg
    }

    #[test]
    fn every_added_point_comes_from_an_uncertified_check() {
        let cfg = coarse_cfg();
        let store = SnapshotStore::new(&cfg, None).unwrap();
        let state = run_adaptive(&cfg, &store).unwrap();
        for w in state.levels.windows(2) {
            assert!(w[0].points.is_subset(&w[1].points));
            for p in &w[1].new_points {
                let parent = state.checked.iter().find(|s| {
                    !s.certified() && s.level == w[0].level && midpoint_toward(&s.p, &s.q).unwrap() == *p
                });
                assert!(parent.is_some(), "{p} has no marking subinterval");
            }
        }
        let mut keys: Vec<_> = state.checked.iter().map(Subinterval::key).collect();
        let n = keys.len();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), n);
        assert!(state.checked.iter().all(|s| s.p != s.q && are_neighbours(&s.p, &s.q)));
    }

    #[test]
    fn level_cap_stops_with_pending_points() {
        let mut cfg = coarse_cfg();
        cfg.max_level = 0;
        let store = SnapshotStore::new(&cfg, None).unwrap();
        let state = run_adaptive(&cfg, &store).unwrap();
        assert_eq!(state.termination, Some(Termination::MaxLevel));
        assert_eq!(state.levels.len(), 1);
        assert!(!state.pending.is_empty());
    }

    #[test]
    fn loose_tolerance_certifies_everything() {
        let mut cfg = coarse_cfg();
        cfg.t_pi = 1e-9;
        let store = SnapshotStore::new(&cfg, None).unwrap();
        let state = run_adaptive(&cfg, &store).unwrap();
        assert_eq!(state.termination, Some(Termination::Converged));
        assert_eq!(state.records.len(), 1);
        assert_eq!(state.records[0].subintervals_uncertified, 0);
    }
}
