//! Banded `LDLᵀ` factorization of `A - σB` without pivoting.
//!
//! Used for shift-invert solves and for Sylvester inertia counts (the number
//! of negative pivots equals the number of eigenvalues of `(A, B)` below σ
//! when `B` is positive definite).

use crate::fem::SymmetricSparseMatrix;

#[derive(Debug, Clone)]
pub struct BandedLdl {
    n: usize,
    bw: usize,
    /// Row `i` holds `L[i, i-bw .. i]` at `l[i*bw .. (i+1)*bw]`, left-padded with zeros.
    l: Vec<f64>,
    d: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularPivot {
    pub row: usize,
    pub value: f64,
}

impl BandedLdl {
    /// Factors `a - shift * b`. Fails when a pivot is tiny relative to the
    /// matrix scale; callers nudge the shift and retry.
    pub fn factor(a: &SymmetricSparseMatrix, b: &SymmetricSparseMatrix, shift: f64) -> Result<Self, SingularPivot> {
        let n = a.dim();
        let bw = a.bandwidth().max(b.bandwidth()).max(1);
        let mut l = vec![0.0; n * bw];
        let mut d = vec![0.0; n];
        let mut diag = vec![0.0; n];
        for i in 0..n {
            let base = i * bw;
            for (j, v) in a.row(i) {
                if j < i {
                    l[base + bw - (i - j)] += v;
                } else if j == i {
                    diag[i] += v;
                }
            }
            if shift != 0.0 {
                for (j, v) in b.row(i) {
                    if j < i {
                        l[base + bw - (i - j)] -= shift * v;
                    } else if j == i {
                        diag[i] -= shift * v;
                    }
                }
            }
        }
        let scale = diag.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
        let mut w = vec![0.0; bw];
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let base = i * bw;
            // l[base + bw - (i - j)] currently holds the original entry (i, j).
            for j in lo..i {
                let off_i = bw - (i - j);
                let mut s = l[base + off_i];
                let jbase = j * bw;
                let klo = lo.max(j.saturating_sub(bw));
                for k in klo..j {
                    s -= w[k - lo] * l[jbase + bw - (j - k)];
                }
                let lij = s / d[j];
                l[base + off_i] = lij;
                w[j - lo] = lij * d[j];
            }
            let mut s = diag[i];
            for j in lo..i {
                s -= w[j - lo] * l[base + bw - (i - j)];
            }
            if !s.is_finite() || s.abs() <= 1e-13 * scale {
                return Err(SingularPivot { row: i, value: s });
            }
            d[i] = s;
        }
        Ok(BandedLdl { n, bw, l, d })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn negative_pivots(&self) -> usize {
        self.d.iter().filter(|&&x| x < 0.0).count()
    }

    /// Solves `(A - σB) x = rhs` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let row = &self.l[i * bw..(i + 1) * bw];
            let mut s = x[i];
            for j in lo..i {
                s -= row[bw - (i - j)] * x[j];
            }
            x[i] = s;
        }
        for (xi, d) in x.iter_mut().zip(&self.d) {
            *xi /= d;
        }
        for i in (0..n).rev() {
            let xi = x[i];
            let lo = i.saturating_sub(bw);
            let row = &self.l[i * bw..(i + 1) * bw];
            for j in lo..i {
                x[j] -= row[bw - (i - j)] * xi;
            }
        }
    }
}
