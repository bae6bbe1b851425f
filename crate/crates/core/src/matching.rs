//! A priori matching of two snapshots: cost matrix, exact rectangular
//! assignment and the induced reordering.

use thiserror::Error;

use crate::fem::SymmetricSparseMatrix;
use crate::grid::ParamPoint;
use crate::snapshot::Snapshot;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("snapshots at {a} and {b} were computed for different problems")]
    MeshMismatch { a: ParamPoint, b: ParamPoint },
    #[error("eigenvector length {got} does not match the mass matrix dimension {expected}")]
    VectorLength { expected: usize, got: usize },
}

/// `D[j, l]` compares eigenpair `j` of snapshot A with eigenpair `l` of B.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries.
    pub entries: Vec<f64>,
    pub point_a: ParamPoint,
    pub point_b: ParamPoint,
    /// Midpoint of the subinterval in reference coordinates. The mass
    /// matrix is parameter-independent here, so it only documents where the
    /// `b`-norm is taken.
    pub midpoint: Vec<f64>,
    pub w1: f64,
    pub w2: f64,
}

impl CostMatrix {
    pub fn get(&self, j: usize, l: usize) -> f64 {
        self.entries[j * self.cols + l]
    }
}

fn check_pair(a: &Snapshot, b: &Snapshot, mass: &SymmetricSparseMatrix) -> Result<(), MatchError> {
    if a.fingerprint != b.fingerprint {
        return Err(MatchError::MeshMismatch { a: a.point.clone(), b: b.point.clone() });
    }
    for u in a.vectors.iter().chain(&b.vectors) {
        if u.len() != mass.dim() {
            return Err(MatchError::VectorLength { expected: mass.dim(), got: u.len() });
        }
    }
    Ok(())
}

/// `b`-norm of `u - s v` with `s = ±1`, formed from the explicit difference
/// so that sign-flipped inputs give bitwise identical results.
fn diff_norm(mass: &SymmetricSparseMatrix, u: &[f64], v: &[f64], s: f64, buf: &mut Vec<f64>) -> f64 {
    buf.clear();
    buf.extend(u.iter().zip(v).map(|(x, y)| x - s * y));
    mass.norm(buf)
}

pub fn cost_matrix(
    a: &Snapshot,
    b: &Snapshot,
    mass: &SymmetricSparseMatrix,
    w1: f64,
    w2: f64,
) -> Result<CostMatrix, MatchError> {
    check_pair(a, b, mass)?;
    let (rows, cols) = (a.len(), b.len());
    let mut entries = Vec::with_capacity(rows * cols);
    let mut buf = Vec::with_capacity(mass.dim());
    for j in 0..rows {
        for l in 0..cols {
            let dl = (a.values[j] - b.values[l]).abs();
            let minus = diff_norm(mass, &a.vectors[j], &b.vectors[l], 1.0, &mut buf);
            let plus = diff_norm(mass, &a.vectors[j], &b.vectors[l], -1.0, &mut buf);
            entries.push(w1 * dl + w2 * minus.min(plus));
        }
    }
    let midpoint = a
        .point
        .reference()
        .iter()
        .zip(b.point.reference())
        .map(|(x, y)| 0.5 * (x + y))
        .collect();
    Ok(CostMatrix {
        rows,
        cols,
        entries,
        point_a: a.point.clone(),
        point_b: b.point.clone(),
        midpoint,
        w1,
        w2,
    })
}

/// Which side of the cost matrix has fewer entries (ties count as rows).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShortSide {
    Rows,
    Cols,
}

/// Optimal injective map from the shorter side into the longer side.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub short_side: ShortSide,
    /// `sigma[j]` is the long-side index matched with short-side index `j`.
    pub sigma: Vec<usize>,
    /// Sum of the selected entries in short-side order.
    pub total_cost: f64,
}

impl Assignment {
    /// `(row, col)` pairs in short-side order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.sigma
            .iter()
            .enumerate()
            .map(|(j, &l)| match self.short_side {
                ShortSide::Rows => (j, l),
                ShortSide::Cols => (l, j),
            })
            .collect()
    }
}

/// Hungarian algorithm with row and column potentials for `n ≤ m`.
/// `cost(i, j)` is queried for `i < n`, `j < m`. Returns the column chosen
/// for each row.
fn hungarian(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    debug_assert!(n <= m);
    let inf = f64::INFINITY;
    // 1-based internally; column 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut ans = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            ans[p[j] - 1] = j - 1;
        }
    }
    ans
}

fn sum_selected(sigma: &[usize], cost: &impl Fn(usize, usize) -> f64) -> f64 {
    sigma.iter().enumerate().map(|(i, &j)| cost(i, j)).sum()
}

/// Minimum-cost injection of `n` rows into `m ≥ n` columns, choosing the
/// lexicographically smallest optimal `sigma` when several exist.
fn lexicographic_assignment(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let mut best = hungarian(n, m, &cost);
    let optimum = sum_selected(&best, &cost);
    let tol = 1e-12 * optimum.abs().max(1.0);
    let mut fixed: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        // Any optimal completion of `fixed` is a candidate; try smaller columns first.
        for j in 0..best[i] {
            if fixed.contains(&j) {
                continue;
            }
            let mut prefix = fixed.clone();
            prefix.push(j);
            let free_cols: Vec<usize> = (0..m).filter(|c| !prefix.contains(c)).collect();
            let rest_rows = n - prefix.len();
            let tail = hungarian(rest_rows, free_cols.len(), |r, c| cost(prefix.len() + r, free_cols[c]));
            let mut candidate = prefix.clone();
            candidate.extend(tail.iter().map(|&c| free_cols[c]));
            if sum_selected(&candidate, &cost) <= optimum + tol {
                best = candidate;
                break;
            }
        }
        fixed.push(best[i]);
    }
    best
}

pub fn solve_assignment(d: &CostMatrix) -> Assignment {
    solve_dense_assignment(d.rows, d.cols, &d.entries)
}

/// Assignment for a raw row-major `rows × cols` matrix.
pub fn solve_dense_assignment(rows: usize, cols: usize, entries: &[f64]) -> Assignment {
    assert_eq!(entries.len(), rows * cols, "cost matrix shape");
    let at = |j: usize, l: usize| entries[j * cols + l];
    if rows <= cols {
        let sigma = lexicographic_assignment(rows, cols, at);
        let total_cost = sum_selected(&sigma, &at);
        Assignment { short_side: ShortSide::Rows, sigma, total_cost }
    } else {
        let t = |l: usize, j: usize| at(j, l);
        let sigma = lexicographic_assignment(cols, rows, t);
        let total_cost = sum_selected(&sigma, &t);
        Assignment { short_side: ShortSide::Cols, sigma, total_cost }
    }
}

/// Position-aligned view of two snapshots after matching: position `k` of
/// side A is original index `order_a[k]`, likewise for B. Positions below
/// `matched` are pairs selected by the assignment; later positions hold the
/// longer side's unmatched eigenpairs in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedPair {
    pub order_a: Vec<usize>,
    pub order_b: Vec<usize>,
    pub matched: usize,
}

impl MatchedPair {
    fn from_assignment(n_a: usize, n_b: usize, asg: &Assignment) -> Self {
        let short: Vec<usize> = (0..asg.sigma.len()).collect();
        let long_len = if asg.short_side == ShortSide::Rows { n_b } else { n_a };
        let mut long = asg.sigma.clone();
        long.extend((0..long_len).filter(|l| !asg.sigma.contains(l)));
        let (order_a, order_b) = match asg.short_side {
            ShortSide::Rows => (short, long),
            ShortSide::Cols => (long, short),
        };
        MatchedPair { order_a, order_b, matched: asg.sigma.len() }
    }

    /// Applies the orders to produce reordered copies of both snapshots.
    pub fn reordered(&self, a: &Snapshot, b: &Snapshot) -> (Snapshot, Snapshot) {
        (permute(a, &self.order_a), permute(b, &self.order_b))
    }
}

fn permute(s: &Snapshot, order: &[usize]) -> Snapshot {
    Snapshot {
        point: s.point.clone(),
        values: order.iter().map(|&i| s.values[i]).collect(),
        vectors: order.iter().map(|&i| s.vectors[i].clone()).collect(),
        fingerprint: s.fingerprint,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    pub cost: CostMatrix,
    pub assignment: Assignment,
    pub pair: MatchedPair,
}

pub fn apriori_match(
    a: &Snapshot,
    b: &Snapshot,
    mass: &SymmetricSparseMatrix,
    w1: f64,
    w2: f64,
) -> Result<MatchOutcome, MatchError> {
    let cost = cost_matrix(a, b, mass, w1, w2)?;
    let assignment = solve_assignment(&cost);
    let pair = MatchedPair::from_assignment(a.len(), b.len(), &assignment);
    Ok(MatchOutcome { cost, assignment, pair })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive minimum over all injections, visited in lexicographic order
    /// so the first minimizer is the lexicographically smallest.
    type CostFn<'a> = Box<dyn Fn(usize, usize) -> f64 + 'a>;

    pub(crate) fn brute_force(rows: usize, cols: usize, e: &[f64]) -> (f64, Vec<usize>) {
        fn rec(
            i: usize,
            n: usize,
            m: usize,
            cost: &dyn Fn(usize, usize) -> f64,
            used: &mut Vec<bool>,
            cur: &mut Vec<usize>,
            best: &mut (f64, Vec<usize>),
        ) {
            if i == n {
                let c: f64 = cur.iter().enumerate().map(|(r, &c)| cost(r, c)).sum();
                if c < best.0 {
                    *best = (c, cur.clone());
                }
                return;
            }
            for j in 0..m {
                if !used[j] {
                    used[j] = true;
                    cur.push(j);
                    rec(i + 1, n, m, cost, used, cur, best);
                    cur.pop();
                    used[j] = false;
                }
            }
        }
        let (n, m, cost): (usize, usize, CostFn<'_>) = if rows <= cols {
            (rows, cols, Box::new(|r, c| e[r * cols + c]))
        } else {
            (cols, rows, Box::new(|r, c| e[c * cols + r]))
        };
        let mut best = (f64::INFINITY, Vec::new());
        if n == 0 {
            return (0.0, Vec::new());
        }
        rec(0, n, m, &*cost, &mut vec![false; m], &mut Vec::new(), &mut best);
        best
    }

    #[test]
    fn trivial_cases() {
        let a = solve_dense_assignment(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(a.sigma, vec![0, 1]);
        assert_eq!(a.total_cost, 0.0);
        let a = solve_dense_assignment(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(a.sigma, vec![1, 0]);
        let e = solve_dense_assignment(0, 5, &[]);
        assert!(e.sigma.is_empty());
        assert_eq!(e.total_cost, 0.0);
    }

    #[test]
    fn ties_pick_lexicographically_smallest() {
        let a = solve_dense_assignment(2, 3, &[1.0; 6]);
        assert_eq!(a.sigma, vec![0, 1]);
        // Zero-cost optima (1, 0) and (1, 2).
        let a = solve_dense_assignment(2, 3, &[1.0, 0.0, 5.0, 0.0, 5.0, 0.0]);
        assert_eq!(a.total_cost, 0.0);
        assert_eq!(a.sigma, vec![1, 0]);
        let a = solve_dense_assignment(2, 3, &[0.0, 0.0, 5.0, 0.0, 5.0, 0.0]);
        assert_eq!(a.sigma, vec![0, 2]);
    }

    #[test]
    fn tall_matrices_are_transposed() {
        let e = [3.0, 0.0, 1.0, 2.0, 0.0, 4.0];
        let a = solve_dense_assignment(3, 2, &e);
        assert_eq!(a.short_side, ShortSide::Cols);
        assert_eq!(a.pairs(), vec![(2, 0), (0, 1)]);
        assert_eq!(a.total_cost, 0.0);
    }

    #[test]
    fn random_unit_matrices_match_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let e: Vec<f64> = (0..15).map(|_| rng.random::<f64>()).collect();
            let a = solve_dense_assignment(3, 5, &e);
            let (best, sigma) = brute_force(3, 5, &e);
            assert_eq!(a.total_cost, best);
            assert_eq!(a.sigma, sigma);
        }
    }

    #[test]
    fn matched_pair_layout() {
        // 2 rows into 4 columns: rows take columns 3 and 1.
        let asg = Assignment { short_side: ShortSide::Rows, sigma: vec![3, 1], total_cost: 0.0 };
        let p = MatchedPair::from_assignment(2, 4, &asg);
        assert_eq!(p.order_a, vec![0, 1]);
        assert_eq!(p.order_b, vec![3, 1, 0, 2]);
        let asg = Assignment { short_side: ShortSide::Cols, sigma: vec![2], total_cost: 0.0 };
        let p = MatchedPair::from_assignment(3, 1, &asg);
        assert_eq!(p.order_a, vec![2, 0, 1]);
        assert_eq!(p.order_b, vec![0]);
    }

    fn int_matrix() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
        (0usize..=6, 0usize..=8).prop_flat_map(|(r, c)| {
            proptest::collection::vec(0u32..=100, r * c)
                .prop_map(move |v| (r, c, v.into_iter().map(f64::from).collect()))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn integer_matrices_are_exact((r, c, e) in int_matrix()) {
            let a = solve_dense_assignment(r, c, &e);
            let (best, sigma) = brute_force(r, c, &e);
            prop_assert_eq!(a.total_cost, best);
            prop_assert_eq!(a.sigma, sigma);
        }

        #[test]
        fn positive_scaling_keeps_sigma((r, c, e) in int_matrix(), k in 0.01f64..100.0) {
            let scaled: Vec<f64> = e.iter().map(|x| x * k).collect();
            prop_assert_eq!(
                solve_dense_assignment(r, c, &e).sigma,
                solve_dense_assignment(r, c, &scaled).sigma
            );
            let seven: Vec<f64> = e.iter().map(|x| x * 7.3).collect();
            prop_assert_eq!(
                solve_dense_assignment(r, c, &e).sigma,
                solve_dense_assignment(r, c, &seven).sigma
            );
        }

        #[test]
        fn sigma_is_injective((r, c, e) in int_matrix()) {
            let a = solve_dense_assignment(r, c, &e);
            let mut seen = a.sigma.clone();
            seen.sort_unstable();
            seen.dedup();
            prop_assert_eq!(seen.len(), r.min(c));
            let sum: f64 = a.pairs().iter().map(|&(j, l)| e[j * c + l]).sum();
            prop_assert_eq!(sum, a.total_cost);
        }
    }
}
