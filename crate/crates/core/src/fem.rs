//! Conforming Q1 finite elements on the fine mesh.

use crate::coefficients::CoefficientField;
use crate::error::{LodError, Result};
use crate::linalg::{dot, solve_spd, SparseMatrix};
use crate::mesh::{CartesianMesh, CellRect, ElementId, NodeRect};

/// Q1 element stiffness on a square cell (independent of the cell size in 2D).
/// Local nodes are ordered `(0,0), (1,0), (0,1), (1,1)`.
pub const Q1_STIFFNESS: [[f64; 4]; 4] = {
    const D: f64 = 2.0 / 3.0;
    const E: f64 = -1.0 / 6.0;
    const O: f64 = -1.0 / 3.0;
    [[D, E, E, O], [E, D, O, E], [E, O, D, E], [O, E, E, D]]
};

/// Q1 mass matrix on the unit cell; scale by `h^2`.
pub const Q1_MASS: [[f64; 4]; 4] = {
    const D: f64 = 1.0 / 9.0;
    const E: f64 = 1.0 / 18.0;
    const O: f64 = 1.0 / 36.0;
    [[D, E, E, O], [E, D, O, E], [E, O, D, E], [O, E, E, D]]
};

/// Nodal values of a fine Q1 function on the full node set.
#[derive(Debug, Clone, PartialEq)]
pub struct FineField {
    mesh: CartesianMesh,
    values: Vec<f64>,
}

impl FineField {
    pub fn zeros(mesh: CartesianMesh) -> Self {
        Self {
            mesh,
            values: vec![0.0; mesh.node_count()],
        }
    }

    pub fn from_values(mesh: CartesianMesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.node_count() {
            return Err(LodError::arg(format!(
                "field has {} values, mesh has {} nodes",
                values.len(),
                mesh.node_count()
            )));
        }
        Ok(Self { mesh, values })
    }

    /// Nodal interpolant of `f`.
    pub fn from_fn(mesh: CartesianMesh, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let s = mesh.nodes_per_side();
        let values = (0..mesh.node_count())
            .map(|k| {
                let (x, y) = mesh.node_point(k % s, k / s);
                f(x, y)
            })
            .collect();
        Self { mesh, values }
    }

    /// Nodal interpolant of `f` with zero boundary values.
    pub fn from_fn_zero_trace(mesh: CartesianMesh, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut v = Self::from_fn(mesh, f);
        v.zero_boundary();
        v
    }

    pub fn mesh(&self) -> &CartesianMesh {
        &self.mesh
    }

    pub fn level(&self) -> u32 {
        self.mesh.level()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.mesh.node_index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.mesh.node_index(i, j);
        self.values[k] = v;
    }

    pub fn zero_boundary(&mut self) {
        let n = self.mesh.n();
        for t in 0..=n {
            for (i, j) in [(t, 0), (t, n), (0, t), (n, t)] {
                self.set(i, j, 0.0);
            }
        }
    }

    pub fn axpy(&mut self, a: f64, other: &FineField) {
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += a * y;
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            mesh: self.mesh,
            values: self.values.iter().map(|v| a * v).collect(),
        }
    }

    pub fn sub(&self, other: &FineField) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// A fine Q1 function that vanishes at every node outside `rect`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalField {
    pub rect: NodeRect,
    pub values: Vec<f64>,
}

impl LocalField {
    pub fn zeros(rect: NodeRect) -> Self {
        Self {
            rect,
            values: vec![0.0; rect.len()],
        }
    }

    /// Copies `field` on `rect`; values outside are dropped.
    pub fn crop(field: &FineField, rect: NodeRect) -> Self {
        let mut out = Self::zeros(rect);
        for j in 0..rect.ny {
            for i in 0..rect.nx {
                out.values[j * rect.nx + i] = field.get(rect.i0 + i, rect.j0 + j);
            }
        }
        out
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.rect.contains(i, j) {
            self.values[self.rect.offset(i, j)]
        } else {
            0.0
        }
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        let k = self.rect.offset(i, j);
        &mut self.values[k]
    }

    /// `self += a * other`, where `other.rect` must lie inside `self.rect`.
    pub fn add_scaled(&mut self, a: f64, other: &LocalField) {
        let r = other.rect;
        assert!(
            self.rect.contains(r.i0, r.j0) && self.rect.contains(r.i0 + r.nx - 1, r.j0 + r.ny - 1),
            "local field does not fit"
        );
        for j in 0..r.ny {
            let dst = self.rect.offset(r.i0, r.j0 + j);
            let src = &other.values[j * r.nx..(j + 1) * r.nx];
            for (d, s) in self.values[dst..dst + r.nx].iter_mut().zip(src) {
                *d += a * s;
            }
        }
    }

    pub fn add_to(&self, a: f64, field: &mut FineField) {
        for j in 0..self.rect.ny {
            for i in 0..self.rect.nx {
                let (gi, gj) = (self.rect.i0 + i, self.rect.j0 + j);
                let k = field.mesh().node_index(gi, gj);
                field.values_mut()[k] += a * self.values[j * self.rect.nx + i];
            }
        }
    }

    pub fn to_fine_field(&self, mesh: CartesianMesh) -> FineField {
        let mut f = FineField::zeros(mesh);
        self.add_to(1.0, &mut f);
        f
    }

    /// Same function on a larger rectangle.
    pub fn extended(&self, rect: NodeRect) -> LocalField {
        let mut out = LocalField::zeros(rect);
        out.add_scaled(1.0, self);
        out
    }

    /// Euclidean inner product of nodal values over the common nodes.
    pub fn nodal_dot(&self, other: &LocalField) -> f64 {
        let Some(r) = self.rect.intersect(&other.rect) else {
            return 0.0;
        };
        (0..r.ny)
            .map(|j| {
                let a = self.rect.offset(r.i0, r.j0 + j);
                let b = other.rect.offset(r.i0, r.j0 + j);
                dot(&self.values[a..a + r.nx], &other.values[b..b + r.nx])
            })
            .sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Coefficient values on each fine cell together with the fine mesh.
#[derive(Debug, Clone)]
pub struct FineCoefficient {
    pub mesh: CartesianMesh,
    pub cells: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
}

impl FineCoefficient {
    pub fn new(a: &CoefficientField, fine: CartesianMesh) -> Result<Self> {
        Ok(Self {
            mesh: fine,
            cells: a.on_mesh(&fine)?,
            alpha: a.alpha(),
            beta: a.beta(),
        })
    }

    pub fn cell(&self, e: ElementId) -> f64 {
        self.cells[self.mesh.cell_index(e)]
    }
}

/// Adds `sum_{c in cells} A_c K_e v|_c` into `out`; every node of the cells
/// must lie in `out.rect`.
pub fn apply_stiffness_on_cells(coeff: &FineCoefficient, v: &LocalField, cells: CellRect, out: &mut LocalField) {
    for c in cells.cells() {
        let a = coeff.cell(c);
        let loc = [
            v.get(c.i, c.j),
            v.get(c.i + 1, c.j),
            v.get(c.i, c.j + 1),
            v.get(c.i + 1, c.j + 1),
        ];
        if loc.iter().all(|&x| x == 0.0) {
            continue;
        }
        let nodes = [(c.i, c.j), (c.i + 1, c.j), (c.i, c.j + 1), (c.i + 1, c.j + 1)];
        for (r, &(i, j)) in nodes.iter().enumerate() {
            let y: f64 = (0..4).map(|s| Q1_STIFFNESS[r][s] * loc[s]).sum();
            *out.get_mut(i, j) += a * y;
        }
    }
}

/// Cells whose nodes touch `rect`, clipped to the mesh.
pub fn cells_touching(rect: &NodeRect, mesh: &CartesianMesh) -> CellRect {
    CellRect {
        i0: rect.i0.saturating_sub(1),
        j0: rect.j0.saturating_sub(1),
        i1: (rect.i0 + rect.nx).min(mesh.n()),
        j1: (rect.j0 + rect.ny).min(mesh.n()),
    }
}

/// `K v` for a local field, returned on the rectangle grown by one node.
pub fn apply_stiffness_local(coeff: &FineCoefficient, v: &LocalField) -> LocalField {
    let cells = cells_touching(&v.rect, &coeff.mesh);
    let mut out = LocalField::zeros(cells.node_rect());
    apply_stiffness_on_cells(coeff, v, cells, &mut out);
    out
}

/// `a(u, v)` for local fields.
pub fn energy_product_local(coeff: &FineCoefficient, u: &LocalField, v: &LocalField) -> f64 {
    apply_stiffness_local(coeff, u).nodal_dot(v)
}

/// Unconstrained stiffness matrix on all fine nodes.
pub fn assemble_stiffness(fine: &CartesianMesh, a: &CoefficientField) -> Result<SparseMatrix> {
    let cells = a.on_mesh(fine)?;
    Ok(assemble_cellwise(fine, |e| cells[fine.cell_index(e)], &Q1_STIFFNESS))
}

/// Consistent mass matrix on all fine nodes.
pub fn assemble_mass(fine: &CartesianMesh) -> SparseMatrix {
    let h2 = fine.h() * fine.h();
    assemble_cellwise(fine, |_| h2, &Q1_MASS)
}

fn assemble_cellwise(mesh: &CartesianMesh, scale: impl Fn(ElementId) -> f64, ke: &[[f64; 4]; 4]) -> SparseMatrix {
    let mut t = Vec::with_capacity(16 * mesh.cell_count());
    for e in mesh.elements() {
        let s = scale(e);
        let nodes = mesh.cell_nodes(e);
        for a in 0..4 {
            for b in 0..4 {
                t.push((nodes[a], nodes[b], s * ke[a][b]));
            }
        }
    }
    SparseMatrix::from_triplets(mesh.node_count(), mesh.node_count(), t)
}

/// Interior (Dirichlet-free) node indices, row-major.
pub fn interior_dofs(mesh: &CartesianMesh) -> Vec<usize> {
    let n = mesh.n();
    (1..n)
        .flat_map(|j| (1..n).map(move |i| (i, j)))
        .map(|(i, j)| mesh.node_index(i, j))
        .collect()
}

/// Everything needed to solve and measure on the fine mesh for one coefficient.
#[derive(Debug, Clone)]
pub struct FineProblem {
    pub coeff: FineCoefficient,
    pub stiffness: SparseMatrix,
    pub mass: SparseMatrix,
    pub dofs: Vec<usize>,
}

impl FineProblem {
    pub fn new(a: &CoefficientField, fine: CartesianMesh) -> Result<Self> {
        Ok(Self {
            coeff: FineCoefficient::new(a, fine)?,
            stiffness: assemble_stiffness(&fine, a)?,
            mass: assemble_mass(&fine),
            dofs: interior_dofs(&fine),
        })
    }

    pub fn mesh(&self) -> CartesianMesh {
        self.coeff.mesh
    }

    /// Load vector `(f, phi_z)` for the nodal interpolant of `f`.
    pub fn load(&self, f: &FineField) -> Vec<f64> {
        self.mass.matvec(f.values())
    }

    pub fn energy_norm(&self, v: &FineField) -> Result<f64> {
        energy_norm(v, &self.stiffness)
    }

    pub fn l2_norm(&self, v: &FineField) -> Result<f64> {
        l2_norm(v, &self.mass)
    }

    /// Galerkin Q1 solution with homogeneous Dirichlet data.
    pub fn solve(&self, f: &FineField) -> Result<FineField> {
        let load = self.load(f);
        self.solve_load(&load)
    }

    pub fn solve_load(&self, load: &[f64]) -> Result<FineField> {
        let k = self.stiffness.restrict(&self.dofs);
        let b: Vec<f64> = self.dofs.iter().map(|&d| load[d]).collect();
        let x = solve_spd(&k, &b).map_err(|e| e.annotate("reference solve"))?;
        let mut u = FineField::zeros(self.mesh());
        for (&d, v) in self.dofs.iter().zip(x) {
            u.values_mut()[d] = v;
        }
        Ok(u)
    }
}

/// Fine reference solution for the forcing `f` (nodal interpolant).
pub fn reference_solve(a: &CoefficientField, f: &FineField, fine: CartesianMesh) -> Result<FineField> {
    FineProblem::new(a, fine)?.solve(f)
}

fn sqrt_form(q: f64, what: &str) -> Result<f64> {
    if q < -1e-12 {
        return Err(LodError::numeric(format!("{what} quadratic form is negative ({q:.3e})")));
    }
    Ok(q.max(0.0).sqrt())
}

/// `sqrt(v^T K v)`.
pub fn energy_norm(v: &FineField, k: &SparseMatrix) -> Result<f64> {
    sqrt_form(k.quadratic_form(v.values()), "energy")
}

/// `sqrt(v^T M v)`.
pub fn l2_norm(v: &FineField, mass: &SparseMatrix) -> Result<f64> {
    sqrt_form(mass.quadratic_form(v.values()), "mass")
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use std::f64::consts::PI;

    /// Analytic integration of bilinear hat products on the unit square.
    fn unit_element_oracle() -> ([[f64; 4]; 4], [[f64; 4]; 4]) {
        // hat_a(x, y) = px(x) py(y) with px in {1 - x, x}
        // int_0^1 p p' = 1/3 (same) or 1/6 (different); int p'q' = +-1
        let m1 = |a: usize, b: usize| if a == b { 1.0 / 3.0 } else { 1.0 / 6.0 };
        let k1 = |a: usize, b: usize| if a == b { 1.0 } else { -1.0 };
        let mut k = [[0.0; 4]; 4];
        let mut m = [[0.0; 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                let (ax, ay, bx, by) = (a % 2, a / 2, b % 2, b / 2);
                k[a][b] = k1(ax, bx) * m1(ay, by) + m1(ax, bx) * k1(ay, by);
                m[a][b] = m1(ax, bx) * m1(ay, by);
            }
        }
        (k, m)
    }

    #[test]
    fn element_matrices_match_analytic_integration() {
        let (k, m) = unit_element_oracle();
        for a in 0..4 {
            for b in 0..4 {
                assert!((k[a][b] - Q1_STIFFNESS[a][b]).abs() < 1e-15);
                assert!((m[a][b] - Q1_MASS[a][b]).abs() < 1e-15);
            }
        }
        assert!((Q1_STIFFNESS[0][0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((Q1_STIFFNESS[0][3] + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn stiffness_properties() {
        let mesh = CartesianMesh::new(3).unwrap();
        let a = crate::coefficients::gen_a1(5, 3).unwrap();
        let k = assemble_stiffness(&mesh, &a).unwrap();
        for r in 0..k.nrows() {
            assert!(k.row(r).1.iter().sum::<f64>().abs() < 1e-13);
        }
        assert!(k.symmetry_defect() <= 1e-13 * k.max_abs());
        let two = CoefficientField::from_cells(3, 0, a.cells().iter().map(|v| 2.0 * v).collect()).unwrap();
        let k2 = assemble_stiffness(&mesh, &two).unwrap();
        for (r, c, v) in k.triplets() {
            assert!((k2.get(r, c) - 2.0 * v).abs() < 1e-14);
        }
        let fine_coeff = crate::coefficients::gen_a1(5, 4).unwrap();
        assert!(assemble_stiffness(&mesh, &fine_coeff).is_err());
    }

    #[test]
    fn mass_properties() {
        let single = assemble_mass(&CartesianMesh::new(0).unwrap());
        assert!((single.get(0, 0) - 1.0 / 9.0).abs() < 1e-15);
        assert!((single.get(0, 1) - 1.0 / 18.0).abs() < 1e-15);
        assert!((single.get(0, 3) - 1.0 / 36.0).abs() < 1e-15);
        let mesh = CartesianMesh::new(3).unwrap();
        let m = assemble_mass(&mesh);
        let total: f64 = m.triplets().map(|t| t.2).sum();
        assert!((total - 1.0).abs() < 1e-13);
        let dense = DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m.get(r, c));
        let eig = dense.symmetric_eigenvalues();
        assert!(eig.min() > 0.0);
    }

    #[test]
    fn zero_load_gives_zero_solution() {
        let a = CoefficientField::constant(2, 1.0).unwrap();
        let mesh = CartesianMesh::new(4).unwrap();
        let u = reference_solve(&a, &FineField::zeros(mesh), mesh).unwrap();
        assert!(u.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn energy_norm_of_interpolant() {
        // v = x(1-x)y(1-y): the Q1 interpolant's energy is a separable sum of
        // 1D terms, each computable exactly from nodal values
        let mesh = CartesianMesh::new(4).unwrap();
        let a = CoefficientField::constant(0, 1.0).unwrap();
        let p = FineProblem::new(&a, mesh).unwrap();
        let g = |t: f64| t * (1.0 - t);
        let v = FineField::from_fn(mesh, |x, y| g(x) * g(y));
        let n = mesh.n();
        let h = mesh.h();
        let nodes: Vec<f64> = (0..=n).map(|k| g(k as f64 * h)).collect();
        // 1D Q1 stiffness and mass quadratic forms
        let k1: f64 = (0..n).map(|k| (nodes[k + 1] - nodes[k]).powi(2) / h).sum();
        let m1: f64 = (0..n)
            .map(|k| h / 3.0 * (nodes[k].powi(2) + nodes[k] * nodes[k + 1] + nodes[k + 1].powi(2)))
            .sum();
        let expect = (2.0 * k1 * m1).sqrt();
        assert!((p.energy_norm(&v).unwrap() - expect).abs() < 1e-13);
        assert_eq!(p.energy_norm(&FineField::zeros(mesh)).unwrap(), 0.0);
        assert!((p.energy_norm(&v.scaled(2.0)).unwrap() - 2.0 * expect).abs() < 1e-13);
    }

    #[test]
    fn galerkin_orthogonality_and_stability() {
        let mesh = CartesianMesh::new(5).unwrap();
        let a = crate::coefficients::gen_a1(11, 4).unwrap();
        let p = FineProblem::new(&a, mesh).unwrap();
        let f = FineField::from_fn(mesh, |x, y| (x + (3.0 * PI * x).cos()) * y.powi(3));
        let u = p.solve(&f).unwrap();
        let load = p.load(&f);
        let ku = p.stiffness.matvec(u.values());
        let mut rng = crate::coefficients::SplitMix64::new(1);
        for _ in 0..20 {
            let mut w = FineField::from_fn(mesh, |_, _| rng.next_f64() - 0.5);
            w.zero_boundary();
            let lhs = dot(&ku, w.values());
            let rhs = dot(&load, w.values());
            let scale = p.energy_norm(&u).unwrap() * p.energy_norm(&w).unwrap();
            assert!((lhs - rhs).abs() <= 1e-9 * scale);
        }
        // |grad u| <= C_F / alpha |f| with C_F = 1 / (sqrt(2) pi)
        let grad = (p.energy_norm(&u).unwrap().powi(2) / a.alpha()).sqrt();
        let cf = 1.0 / (2.0f64.sqrt() * PI);
        assert!(grad <= cf / a.alpha() * p.l2_norm(&f).unwrap());
    }

    #[test]
    fn poincare_constant_oracle() {
        // smallest Dirichlet eigenvalue of the discrete Laplacian approaches 2 pi^2
        let mesh = CartesianMesh::new(4).unwrap();
        let a = CoefficientField::constant(0, 1.0).unwrap();
        let p = FineProblem::new(&a, mesh).unwrap();
        let k = p.stiffness.restrict(&p.dofs);
        let m = p.mass.restrict(&p.dofs);
        let kd = DMatrix::from_fn(k.nrows(), k.ncols(), |r, c| k.get(r, c));
        let md = DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m.get(r, c));
        let l = md.cholesky().unwrap();
        let linv = l.l().try_inverse().unwrap();
        let sym = &linv * kd * linv.transpose();
        let lam = sym.symmetric_eigenvalues().min();
        // Q1 overestimates the continuous eigenvalue, so 1/sqrt(lam) <= C_F
        assert!(lam >= 2.0 * PI * PI);
        assert!((lam - 2.0 * PI * PI).abs() / (2.0 * PI * PI) < 0.01);
    }

    #[test]
    fn local_stiffness_matches_global() {
        let mesh = CartesianMesh::new(4).unwrap();
        let a = crate::coefficients::gen_a1(2, 3).unwrap();
        let p = FineProblem::new(&a, mesh).unwrap();
        let rect = NodeRect {
            i0: 3,
            j0: 5,
            nx: 6,
            ny: 4,
        };
        let mut rng = crate::coefficients::SplitMix64::new(4);
        let mut v = LocalField::zeros(rect);
        v.values.iter_mut().for_each(|x| *x = rng.next_f64());
        let y = apply_stiffness_local(&p.coeff, &v);
        let yg = p.stiffness.matvec(v.to_fine_field(mesh).values());
        let yl = y.to_fine_field(mesh);
        for (a, b) in yl.values().iter().zip(&yg) {
            assert!((a - b).abs() < 1e-13);
        }
    }
}
