//! Generalized symmetric eigensolver restricted to a spectral window.
//!
//! Small problems go through a dense Cholesky reduction. Larger ones use
//! shift-invert block subspace iteration with Rayleigh-Ritz, and completeness
//! is certified by Sylvester inertia counts at both window ends.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::banded::BandedLdl;
use crate::config::Window;
use crate::fem::SymmetricSparseMatrix;

/// Problems up to this many unknowns are solved densely.
pub const DENSE_LIMIT: usize = 300;
/// Target relative residual `‖Au - λBu‖ / ‖Au‖`.
pub const RESIDUAL_TOL: f64 = 1e-10;
const MAX_ITERATIONS: usize = 1000;
const KRYLOV_BLOCK: usize = 3;
const SEED: u64 = 0x5eed_e16e;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("matrix dimensions differ: A is {a}, B is {b}")]
    DimensionMismatch { a: usize, b: usize },
    #[error("mass matrix is not positive definite")]
    MassNotSpd,
    #[error("invalid window [{min}, {max}]")]
    BadWindow { min: f64, max: f64 },
    #[error("could not factor A - σB near σ = {shift}")]
    Breakdown { shift: f64 },
    #[error("subspace iteration did not converge after {iterations} iterations (worst residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("window completeness not certified: inertia reports {expected} eigenvalues, solver found {found}")]
    Incomplete { expected: usize, found: usize },
}

/// Eigenpairs inside a window, ascending, with `B`-orthonormal vectors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WindowSpectrum {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

impl WindowSpectrum {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Number of eigenvalues of `(A, B)` strictly below `shift`, together with
/// the factorization used to count them. The shift is nudged upward when the
/// factorization hits a zero pivot, so the count is for a value within a few
/// ulps-times-scale of `shift`.
pub fn inertia_below(
    a: &SymmetricSparseMatrix,
    b: &SymmetricSparseMatrix,
    shift: f64,
) -> Result<(usize, BandedLdl, f64), SolverError> {
    let mut s = shift;
    let step = 1e-9 * shift.abs().max(1.0);
    for attempt in 0..8 {
        match BandedLdl::factor(a, b, s) {
            Ok(f) => return Ok((f.negative_pivots(), f, s)),
            Err(_) => s = shift + step * f64::from(1u32 << attempt),
        }
    }
    Err(SolverError::Breakdown { shift })
}

pub fn solve_window(
    a: &SymmetricSparseMatrix,
    b: &SymmetricSparseMatrix,
    window: Window,
) -> Result<WindowSpectrum, SolverError> {
    if a.dim() != b.dim() {
        return Err(SolverError::DimensionMismatch { a: a.dim(), b: b.dim() });
    }
    if !(window.min.is_finite() && window.max.is_finite() && window.min <= window.max) {
        return Err(SolverError::BadWindow { min: window.min, max: window.max });
    }
    if a.dim() == 0 {
        return Ok(WindowSpectrum::default());
    }
    if a.dim() <= DENSE_LIMIT {
        solve_dense(a, b, window)
    } else {
        solve_subspace(a, b, window)
    }
}

fn solve_dense(
    a: &SymmetricSparseMatrix,
    b: &SymmetricSparseMatrix,
    window: Window,
) -> Result<WindowSpectrum, SolverError> {
    let n = a.dim();
    let to_dense = |m: &SymmetricSparseMatrix| {
        let mut d = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for (j, v) in m.row(i) {
                d[(i, j)] = v;
            }
        }
        d
    };
    let chol = to_dense(b).cholesky().ok_or(SolverError::MassNotSpd)?;
    let l = chol.l();
    // C = L^{-1} A L^{-T}
    let linv_a = l.solve_lower_triangular(&to_dense(a)).ok_or(SolverError::MassNotSpd)?;
    let c = l
        .solve_lower_triangular(&linv_a.transpose())
        .ok_or(SolverError::MassNotSpd)?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let lt = l.transpose();
    let mut pairs: Vec<(f64, Vec<f64>)> = Vec::new();
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if window.contains(lam) {
            let y = eig.eigenvectors.column(k).into_owned();
            let u = lt.solve_upper_triangular(&y).ok_or(SolverError::MassNotSpd)?;
            pairs.push((lam, u.iter().copied().collect()));
        }
    }
    Ok(finish(b, pairs))
}

fn finish(b: &SymmetricSparseMatrix, mut pairs: Vec<(f64, Vec<f64>)>) -> WindowSpectrum {
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut out = WindowSpectrum::default();
    for (lam, mut u) in pairs {
        let nrm = b.norm(&u);
        u.iter_mut().for_each(|x| *x /= nrm);
        out.values.push(lam);
        out.vectors.push(u);
    }
    out
}

fn solve_subspace(
    a: &SymmetricSparseMatrix,
    b: &SymmetricSparseMatrix,
    window: Window,
) -> Result<WindowSpectrum, SolverError> {
    let (n_lo, lo_factor, _) = inertia_below(a, b, window.min)?;
    let (n_hi, hi_factor, _) = inertia_below(a, b, window.max)?;
    // Inertia counts eigenvalues strictly below each end, so one sitting
    // exactly on `max` is not counted. The Ritz filter uses the closed window;
    // a coincidence at that precision shows up as an `Incomplete` error.
    let k = n_hi.saturating_sub(n_lo);
    if k == 0 {
        return Ok(WindowSpectrum::default());
    }
    let (factor, shift) = if n_lo == 0 {
        drop(hi_factor);
        (lo_factor, window.min)
    } else {
        drop(lo_factor);
        drop(hi_factor);
        let (_, f, s) = inertia_below(a, b, 0.5 * (window.min + window.max))?;
        (f, s)
    };
    let op = ShiftInvert { a, b, factor: &factor, window, k };
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    if let Some(result) = op.block_krylov(&mut rng) {
        return result;
    }
    log::debug!("block Krylov space exhausted for k = {k}, shift {shift}; falling back to subspace iteration");
    op.subspace_iteration(&mut rng)
}

/// The operator `(A - σB)^{-1} B` together with what is needed to judge
/// Ritz pairs against the window.
struct ShiftInvert<'a> {
    a: &'a SymmetricSparseMatrix,
    b: &'a SymmetricSparseMatrix,
    factor: &'a BandedLdl,
    window: Window,
    k: usize,
}

/// Outcome of a Rayleigh-Ritz step.
enum RitzCheck {
    Done(Vec<(f64, Vec<f64>)>),
    Extra(usize),
    Pending(f64),
}

impl ShiftInvert<'_> {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.b.mul_vec(x);
        self.factor.solve_in_place(&mut y);
        y
    }

    /// Rayleigh-Ritz on a `B`-orthonormal basis `q` with `aq = A q`,
    /// `bq = B q` and projected matrix `h = qᵀ A q`.
    fn rayleigh_ritz(&self, q: &[Vec<f64>], aq: &[Vec<f64>], bq: &[Vec<f64>], h: DMatrix<f64>) -> RitzCheck {
        let eig = SymmetricEigen::new(h);
        let in_window: Vec<usize> =
            (0..q.len()).filter(|&i| self.window.contains(eig.eigenvalues[i])).collect();
        if in_window.len() < self.k {
            return RitzCheck::Pending(f64::INFINITY);
        }
        let mut worst = 0.0f64;
        let mut pairs = Vec::with_capacity(in_window.len());
        for &i in &in_window {
            let lam = eig.eigenvalues[i];
            let z = eig.eigenvectors.column(i);
            let mut u = vec![0.0; q[0].len()];
            let mut au = vec![0.0; u.len()];
            let mut r = vec![0.0; u.len()];
            for (c, w) in z.iter().enumerate() {
                for t in 0..u.len() {
                    u[t] += w * q[c][t];
                    au[t] += w * aq[c][t];
                    r[t] += w * bq[c][t];
                }
            }
            let num = au.iter().zip(&r).map(|(x, y)| (x - lam * y).powi(2)).sum::<f64>().sqrt();
            let den = dot(&au, &au).sqrt().max(f64::MIN_POSITIVE);
            worst = worst.max(num / den);
            pairs.push((lam, u));
        }
        if worst > RESIDUAL_TOL {
            RitzCheck::Pending(worst)
        } else if pairs.len() > self.k {
            RitzCheck::Extra(pairs.len())
        } else {
            RitzCheck::Done(pairs)
        }
    }

    /// Block Krylov space of the shift-invert operator with full
    /// reorthogonalization. Returns `None` if the space grows past its cap
    /// without converging.
    fn block_krylov(&self, rng: &mut ChaCha8Rng) -> Option<Result<WindowSpectrum, SolverError>> {
        let n = self.a.dim();
        let block = KRYLOV_BLOCK.min(n);
        let cap = n.min((6 * self.k + 60).max(120));
        let mut q: Vec<Vec<f64>> = Vec::new();
        let mut aq: Vec<Vec<f64>> = Vec::new();
        let mut bq: Vec<Vec<f64>> = Vec::new();
        let mut h: Vec<Vec<f64>> = Vec::new();
        let mut last: Vec<usize> = Vec::new();
        while q.len() < cap {
            let candidates: Vec<Vec<f64>> = if last.is_empty() {
                (0..block).map(|_| random_vector(n, rng)).collect()
            } else {
                last.iter().map(|&i| self.apply(&q[i])).collect()
            };
            last.clear();
            for mut v in candidates {
                if q.len() >= cap {
                    break;
                }
                if !orthogonalize_against(&mut v, &q, &bq, self.b) {
                    // The Krylov block lost rank; restart that direction randomly.
                    v = random_vector(n, rng);
                    if !orthogonalize_against(&mut v, &q, &bq, self.b) {
                        continue;
                    }
                }
                let av = self.a.mul_vec(&v);
                let row: Vec<f64> = q.iter().map(|qi| dot(qi, &av)).chain([dot(&v, &av)]).collect();
                h.push(row);
                bq.push(self.b.mul_vec(&v));
                aq.push(av);
                q.push(v);
                last.push(q.len() - 1);
            }
            if last.is_empty() {
                break;
            }
            if q.len() < self.k + block {
                continue;
            }
            let m = q.len();
            let hm = DMatrix::from_fn(m, m, |i, j| if j <= i { h[i][j] } else { h[j][i] });
            match self.rayleigh_ritz(&q, &aq, &bq, hm) {
                RitzCheck::Done(pairs) => return Some(Ok(finish(self.b, pairs))),
                RitzCheck::Extra(found) => {
                    return Some(Err(SolverError::Incomplete { expected: self.k, found }))
                }
                RitzCheck::Pending(_) => {}
            }
        }
        None
    }

    fn subspace_iteration(&self, rng: &mut ChaCha8Rng) -> Result<WindowSpectrum, SolverError> {
        let n = self.a.dim();
        let p = (self.k + self.k.max(8)).min(n);
        let mut x: Vec<Vec<f64>> = (0..p).map(|_| random_vector(n, rng)).collect();
        let mut worst = f64::INFINITY;
        for _ in 0..MAX_ITERATIONS {
            for col in x.iter_mut() {
                *col = self.apply(col);
            }
            b_orthonormalize(self.b, &mut x, rng);
            let ax: Vec<Vec<f64>> = x.iter().map(|v| self.a.mul_vec(v)).collect();
            let bx: Vec<Vec<f64>> = x.iter().map(|v| self.b.mul_vec(v)).collect();
            let h = DMatrix::from_fn(p, p, |i, j| dot(&x[i.min(j)], &ax[i.max(j)]));
            match self.rayleigh_ritz(&x, &ax, &bx, h.clone()) {
                RitzCheck::Done(pairs) => return Ok(finish(self.b, pairs)),
                RitzCheck::Extra(found) => return Err(SolverError::Incomplete { expected: self.k, found }),
                RitzCheck::Pending(w) => worst = w,
            }
            x = combine(&x, &SymmetricEigen::new(h).eigenvectors);
        }
        Err(SolverError::NotConverged { iterations: MAX_ITERATIONS, residual: worst })
    }
}

fn random_vector(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Two passes of classical Gram-Schmidt against a `B`-orthonormal basis,
/// then `B`-normalization. Returns `false` if `v` was (numerically) in the
/// span of the basis.
fn orthogonalize_against(v: &mut [f64], q: &[Vec<f64>], bq: &[Vec<f64>], b: &SymmetricSparseMatrix) -> bool {
    let before = b.norm(v);
    if before == 0.0 || !before.is_finite() {
        return false;
    }
    for _ in 0..2 {
        let coeffs: Vec<f64> = bq.iter().map(|w| dot(w, v)).collect();
        for (c, qi) in coeffs.iter().zip(q) {
            v.iter_mut().zip(qi).for_each(|(x, y)| *x -= c * y);
        }
    }
    let nrm = b.norm(v);
    if nrm <= 1e-8 * before {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= nrm);
    true
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn combine(cols: &[Vec<f64>], z: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let n = cols[0].len();
    (0..z.ncols())
        .map(|j| {
            let mut out = vec![0.0; n];
            for (i, c) in cols.iter().enumerate() {
                let w = z[(i, j)];
                if w != 0.0 {
                    out.iter_mut().zip(c).for_each(|(o, v)| *o += w * v);
                }
            }
            out
        })
        .collect()
}

/// `B`-orthonormalizes the columns of `x` in order. Columns that collapse
/// numerically are replaced by fresh random vectors.
fn b_orthonormalize(b: &SymmetricSparseMatrix, x: &mut Vec<Vec<f64>>, rng: &mut ChaCha8Rng) {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(x.len());
    let mut bq: Vec<Vec<f64>> = Vec::with_capacity(x.len());
    for mut v in x.drain(..) {
        while !orthogonalize_against(&mut v, &q, &bq, b) {
            v = random_vector(b.dim(), rng);
        }
        bq.push(b.mul_vec(&v));
        q.push(v);
    }
    *x = q;
}
