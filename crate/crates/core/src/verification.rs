//! A posteriori verification of a matched subinterval.
//!
//! The projection matrix `Π[j, l] = |u_jᵀ B v_l|` is formed in the matched
//! frame, truncated in place row by row with `t_pi`, and the surviving
//! sparsity pattern decides between certification, a cluster, or refinement.

use serde::Serialize;

use crate::fem::SymmetricSparseMatrix;
use crate::matching::{MatchError, MatchedPair};
use crate::snapshot::Snapshot;

/// Dense row-major matrix of projection magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<f64>,
}

impl ProjectionMatrix {
    pub fn get(&self, j: usize, l: usize) -> f64 {
        self.entries[j * self.cols + l]
    }

    fn set(&mut self, j: usize, l: usize, v: f64) {
        self.entries[j * self.cols + l] = v;
    }

    pub fn max_entry(&self) -> f64 {
        self.entries.iter().copied().fold(0.0, f64::max)
    }

    pub fn transpose(&self) -> ProjectionMatrix {
        let mut entries = Vec::with_capacity(self.entries.len());
        for l in 0..self.cols {
            for j in 0..self.rows {
                entries.push(self.get(j, l));
            }
        }
        ProjectionMatrix { rows: self.cols, cols: self.rows, entries }
    }
}

pub fn projection_matrix(
    a: &Snapshot,
    b: &Snapshot,
    pair: &MatchedPair,
    mass: &SymmetricSparseMatrix,
) -> Result<ProjectionMatrix, MatchError> {
    if a.fingerprint != b.fingerprint {
        return Err(MatchError::MeshMismatch { a: a.point.clone(), b: b.point.clone() });
    }
    let bv: Vec<Vec<f64>> = pair.order_b.iter().map(|&l| mass.mul_vec(&b.vectors[l])).collect();
    let mut entries = Vec::with_capacity(pair.order_a.len() * bv.len());
    for &j in &pair.order_a {
        let u = &a.vectors[j];
        if u.len() != mass.dim() {
            return Err(MatchError::VectorLength { expected: mass.dim(), got: u.len() });
        }
        for w in &bv {
            entries.push(u.iter().zip(w).map(|(x, y)| x * y).sum::<f64>().abs());
        }
    }
    Ok(ProjectionMatrix { rows: pair.order_a.len(), cols: pair.order_b.len(), entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Certified,
    Refine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    /// Both patterns are the single diagonal entry.
    Pass,
    /// Equal-size patterns whose eigenvalues are within `t_lambda`.
    Cluster,
    /// Row and column patterns have different sizes.
    PatternMismatch,
    /// Equal-size patterns but eigenvalues too far apart to be a cluster.
    GapTooLarge { gap: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub position: usize,
    /// Surviving columns of row `position`.
    pub r1: Vec<usize>,
    /// Surviving rows of column `position`.
    pub r2: Vec<usize>,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificationReport {
    pub verdict: Verdict,
    pub diagnostics: Vec<Diagnostic>,
    /// Disjoint sets of matched positions that cannot be told apart.
    pub clusters: Vec<Vec<usize>>,
    pub projection: ProjectionMatrix,
    pub truncated: ProjectionMatrix,
    pub failed_at: Option<usize>,
}

impl CertificationReport {
    pub fn certified(&self) -> bool {
        self.verdict == Verdict::Certified
    }
}

fn relative_gap(values: &[f64], set: &[usize], j: usize) -> f64 {
    let base = values[j].abs().max(f64::MIN_POSITIVE);
    set.iter().map(|&g| (values[g] - values[j]).abs() / base).fold(0.0, f64::max)
}

/// Runs the truncation and cluster test on a projection matrix whose rows
/// and columns carry the eigenvalues `lambda_a` and `lambda_b`.
pub fn verify_projection(
    projection: ProjectionMatrix,
    lambda_a: &[f64],
    lambda_b: &[f64],
    t_pi: f64,
    t_lambda: f64,
) -> CertificationReport {
    assert_eq!(projection.rows, lambda_a.len());
    assert_eq!(projection.cols, lambda_b.len());
    let mut pi = projection.clone();
    let mut diagnostics = Vec::new();
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut failed_at = None;
    for j in 0..pi.rows.min(pi.cols) {
        let d = pi.get(j, j);
        for l in 0..pi.cols {
            if d >= pi.get(j, l) + t_pi {
                pi.set(j, l, 0.0);
            }
        }
        for l in 0..pi.rows {
            if d >= pi.get(l, j) + t_pi {
                pi.set(l, j, 0.0);
            }
        }
        let r1: Vec<usize> = (0..pi.cols).filter(|&l| pi.get(j, l) != 0.0).collect();
        let r2: Vec<usize> = (0..pi.rows).filter(|&l| pi.get(l, j) != 0.0).collect();
        let outcome = if r1.len() == 1 && r2.len() == 1 {
            Outcome::Pass
        } else if r1.len() != r2.len() || r1.len() < 2 {
            Outcome::PatternMismatch
        } else {
            let gap = relative_gap(lambda_a, &r2, j).max(relative_gap(lambda_b, &r1, j));
            if gap > t_lambda {
                Outcome::GapTooLarge { gap }
            } else {
                Outcome::Cluster
            }
        };
        if outcome == Outcome::Cluster {
            let mut members: Vec<usize> = r1.iter().chain(&r2).copied().collect();
            let (overlapping, rest): (Vec<_>, Vec<_>) =
                clusters.drain(..).partition(|c| c.iter().any(|m| members.contains(m)));
            clusters = rest;
            members.extend(overlapping.into_iter().flatten());
            members.sort_unstable();
            members.dedup();
            clusters.push(members);
        }
        let failed = matches!(outcome, Outcome::PatternMismatch | Outcome::GapTooLarge { .. });
        diagnostics.push(Diagnostic { position: j, r1, r2, outcome });
        if failed {
            failed_at = Some(j);
            break;
        }
    }
    clusters.sort();
    CertificationReport {
        verdict: if failed_at.is_some() { Verdict::Refine } else { Verdict::Certified },
        diagnostics,
        clusters,
        projection,
        truncated: pi,
        failed_at,
    }
}

pub fn verify(
    a: &Snapshot,
    b: &Snapshot,
    pair: &MatchedPair,
    mass: &SymmetricSparseMatrix,
    t_pi: f64,
    t_lambda: f64,
) -> Result<CertificationReport, MatchError> {
    let projection = projection_matrix(a, b, pair, mass)?;
    let lambda_a: Vec<f64> = pair.order_a.iter().map(|&j| a.values[j]).collect();
    let lambda_b: Vec<f64> = pair.order_b.iter().map(|&l| b.values[l]).collect();
    Ok(verify_projection(projection, &lambda_a, &lambda_b, t_pi, t_lambda))
}
