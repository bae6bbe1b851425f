//! P1 finite elements on a structured triangulation of the unit square with
//! homogeneous Dirichlet conditions.
//!
//! Each grid cell is split along its `(0,0)-(1,1)` diagonal. Boundary nodes
//! are eliminated, so the assembled matrices act on interior nodes only,
//! numbered row by row (x fastest).

use thiserror::Error;

use crate::config::SymMat2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FemError {
    #[error("mesh needs at least 3 nodes per side, got {0}")]
    MeshTooSmall(usize),
    #[error("coefficient matrix is not positive definite: {0:?}")]
    NotSpd(SymMat2),
}

#[derive(Debug, Clone)]
pub struct Mesh {
    n_side: usize,
    coords: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    dof_of_node: Vec<Option<usize>>,
    n_dofs: usize,
}

impl Mesh {
    pub fn nodes_per_side(&self) -> usize {
        self.n_side
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    /// Interior degree of freedom carried by a node, `None` on the boundary.
    pub fn dof(&self, node: usize) -> Option<usize> {
        self.dof_of_node[node]
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (p, q, r) = (self.coords[a], self.coords[b], self.coords[c]);
        0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
    }

    /// Gradients of the three barycentric basis functions of triangle `t`.
    fn gradients(&self, t: usize) -> ([[f64; 2]; 3], f64) {
        let [a, b, c] = self.triangles[t];
        let (p, q, r) = (self.coords[a], self.coords[b], self.coords[c]);
        let area = self.signed_area(t);
        let s = 1.0 / (2.0 * area);
        let g = [
            [(q[1] - r[1]) * s, (r[0] - q[0]) * s],
            [(r[1] - p[1]) * s, (p[0] - r[0]) * s],
            [(p[1] - q[1]) * s, (q[0] - p[0]) * s],
        ];
        (g, area)
    }

    /// Element stiffness `|T| ∇φ_aᵀ C ∇φ_b`.
    pub fn element_stiffness(&self, t: usize, c: &SymMat2) -> [[f64; 3]; 3] {
        let (g, area) = self.gradients(t);
        let mut k = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                k[a][b] = area * c.bilinear(g[a], g[b]);
            }
        }
        k
    }

    /// Exact element mass `|T|/12 (1 + δ_ab)`.
    pub fn element_mass(&self, t: usize) -> [[f64; 3]; 3] {
        let area = self.signed_area(t);
        let mut m = [[area / 12.0; 3]; 3];
        for (a, row) in m.iter_mut().enumerate() {
            row[a] = area / 6.0;
        }
        m
    }
}

/// Structured mesh of `[0,1]^2` with `mesh_n` nodes per side.
pub fn build_mesh(mesh_n: usize) -> Result<Mesh, FemError> {
    if mesh_n < 3 {
        return Err(FemError::MeshTooSmall(mesh_n));
    }
    let h = 1.0 / (mesh_n - 1) as f64;
    let mut coords = Vec::with_capacity(mesh_n * mesh_n);
    for j in 0..mesh_n {
        for i in 0..mesh_n {
            coords.push([i as f64 * h, j as f64 * h]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * (mesh_n - 1) * (mesh_n - 1));
    for j in 0..mesh_n - 1 {
        for i in 0..mesh_n - 1 {
            let a = j * mesh_n + i;
            let b = a + 1;
            let c = a + mesh_n;
            let d = c + 1;
            triangles.push([a, b, d]);
            triangles.push([a, d, c]);
        }
    }
    let mut dof_of_node = vec![None; mesh_n * mesh_n];
    let mut n_dofs = 0;
    for j in 1..mesh_n - 1 {
        for i in 1..mesh_n - 1 {
            dof_of_node[j * mesh_n + i] = Some(n_dofs);
            n_dofs += 1;
        }
    }
    Ok(Mesh { n_side: mesh_n, coords, triangles, dof_of_node, n_dofs })
}

/// Symmetric matrix in compressed sparse row form with the full pattern
/// stored. Values are assembled on the upper triangle and mirrored, so
/// symmetry is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricSparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SymmetricSparseMatrix {
    /// Builds from upper-triangle triplets `(i, j, v)` with `i <= j`;
    /// duplicates are summed in input order.
    pub fn from_upper_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|&(i, j, _)| (i, j));
        let mut upper: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for (i, j, v) in triplets {
            debug_assert!(i <= j);
            match upper.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => upper.push((i, j, v)),
            }
        }
        let mut full: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * upper.len());
        for &(i, j, v) in &upper {
            full.push((i, j, v));
            if i != j {
                full.push((j, i, v));
            }
        }
        full.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0; n + 1];
        for &(i, _, _) in &full {
            row_ptr[i + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col_idx = full.iter().map(|t| t.1).collect();
        let values = full.iter().map(|t| t.2).collect();
        SymmetricSparseMatrix { n, row_ptr, col_idx, values }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn pattern(&self) -> (&[usize], &[usize]) {
        (&self.row_ptr, &self.col_idx)
    }

    /// Maximum `|i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `xᵀ M y`.
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut total = 0.0;
        for (i, xi) in x.iter().enumerate().take(self.n) {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * y[self.col_idx[k]];
            }
            total += xi * s;
        }
        total
    }

    /// `(xᵀ M x)^(1/2)`, clamped at zero against rounding.
    pub fn norm(&self, x: &[f64]) -> f64 {
        self.inner(x, x).max(0.0).sqrt()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| self.get(j, i) == v))
    }
}

fn assemble(mesh: &Mesh, element: impl Fn(usize) -> [[f64; 3]; 3]) -> SymmetricSparseMatrix {
    let mut triplets = Vec::with_capacity(mesh.triangles.len() * 6);
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let k = element(t);
        for a in 0..3 {
            let Some(p) = mesh.dof(tri[a]) else { continue };
            for b in 0..3 {
                let Some(q) = mesh.dof(tri[b]) else { continue };
                if p <= q {
                    triplets.push((p, q, k[a][b]));
                }
            }
        }
    }
    SymmetricSparseMatrix::from_upper_triplets(mesh.n_dofs, triplets)
}

/// Stiffness matrix of `∫ C ∇u · ∇v` for a spatially constant SPD `C`.
pub fn assemble_stiffness(mesh: &Mesh, c: &SymMat2) -> Result<SymmetricSparseMatrix, FemError> {
    if !c.is_spd() {
        return Err(FemError::NotSpd(*c));
    }
    Ok(assemble(mesh, |t| mesh.element_stiffness(t, c)))
}

/// Mass matrix of `∫ u v`.
pub fn assemble_mass(mesh: &Mesh) -> SymmetricSparseMatrix {
    assemble(mesh, |t| mesh.element_mass(t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mesh_sizes() {
        assert!(matches!(build_mesh(2), Err(FemError::MeshTooSmall(2))));
        let m = build_mesh(3).unwrap();
        assert_eq!(m.n_dofs(), 1);
        let centre = (0..m.coords().len()).find(|&n| m.dof(n).is_some()).unwrap();
        assert_eq!(m.coords()[centre], [0.5, 0.5]);
        assert_eq!(build_mesh(4).unwrap().n_dofs(), 4);
        let m = build_mesh(65).unwrap();
        assert_eq!(m.n_dofs(), 3969);
        assert_eq!(m.triangles().len(), 2 * 64 * 64);
        assert!((0..m.triangles().len()).all(|t| m.signed_area(t) > 0.0));
    }

    #[test]
    fn single_node_laplacian_and_mass() {
        // Hand assembly: the centre node of a 2x2-cell mesh touches 6 of the 8
        // triangles; the P1 Laplacian gives the 5-point stencil value 4 and the
        // mass is 6 * |T| / 6 with |T| = 1/8.
        let m = build_mesh(3).unwrap();
        let a = assemble_stiffness(&m, &SymMat2::IDENTITY).unwrap();
        assert!((a.get(0, 0) - 4.0).abs() < 1e-14);
        let b = assemble_mass(&m);
        assert!((b.get(0, 0) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn stiffness_is_linear_in_coefficient() {
        let m = build_mesh(6).unwrap();
        let a1 = assemble_stiffness(&m, &SymMat2::IDENTITY).unwrap();
        let a2 = assemble_stiffness(&m, &SymMat2::IDENTITY.scale(2.0)).unwrap();
        for i in 0..a1.dim() {
            for (j, v) in a1.row(i) {
                assert_eq!(a2.get(i, j), 2.0 * v);
            }
        }
    }

    #[test]
    fn off_diagonal_coefficient_keeps_pattern_and_symmetry() {
        let m = build_mesh(7).unwrap();
        let a = assemble_stiffness(&m, &SymMat2::new(1.0, 0.8, 1.0)).unwrap();
        let i = assemble_stiffness(&m, &SymMat2::IDENTITY).unwrap();
        assert!(a.is_symmetric());
        assert_eq!(a.pattern(), i.pattern());
        assert_eq!(a.pattern(), assemble_mass(&m).pattern());
    }

    #[test]
    fn non_spd_coefficient_rejected() {
        let m = build_mesh(4).unwrap();
        assert!(assemble_stiffness(&m, &SymMat2::new(1.0, 2.0, 1.0)).is_err());
    }

    #[test]
    fn mass_partition_of_unity() {
        let m = build_mesh(9).unwrap();
        let total: f64 = (0..m.triangles().len()).map(|t| m.element_mass(t).iter().flatten().sum::<f64>()).sum();
        assert!((total - 1.0).abs() < 1e-13);
        let b = assemble_mass(&build_mesh(33).unwrap());
        assert!((0..b.dim()).all(|i| b.get(i, i) > 0.0));
    }

    #[test]
    fn bandwidth_of_natural_ordering() {
        let m = build_mesh(65).unwrap();
        let a = assemble_stiffness(&m, &SymMat2::new(2.0, 1.0, 2.0)).unwrap();
        assert_eq!(a.bandwidth(), 64);
    }

    #[test]
    fn galerkin_energy_of_linear_function() {
        // Quadrature oracle: v interpolates x on interior nodes and vanishes on
        // the boundary; ∫|∇v|² summed triangle by triangle with exact P1
        // gradients (independent of the assembled matrix).
        let m = build_mesh(5).unwrap();
        let nodal = |node: usize| if m.dof(node).is_some() { m.coords()[node][0] } else { 0.0 };
        let mut oracle = 0.0;
        for t in 0..m.triangles().len() {
            let tri = m.triangles()[t];
            let (g, area) = m.gradients(t);
            let mut grad = [0.0; 2];
            for a in 0..3 {
                grad[0] += nodal(tri[a]) * g[a][0];
                grad[1] += nodal(tri[a]) * g[a][1];
            }
            oracle += area * (grad[0] * grad[0] + grad[1] * grad[1]);
        }
        let a = assemble_stiffness(&m, &SymMat2::IDENTITY).unwrap();
        let mut v = vec![0.0; m.n_dofs()];
        for node in 0..m.coords().len() {
            if let Some(p) = m.dof(node) {
                v[p] = m.coords()[node][0];
            }
        }
        let energy = a.inner(&v, &v);
        assert!((energy - oracle).abs() < 1e-13, "{energy} vs {oracle}");
        // Hand value: sum of squared differences over the 5-point stencil edges.
        assert!((energy - 4.0).abs() < 1e-12, "{energy}");
    }
}
