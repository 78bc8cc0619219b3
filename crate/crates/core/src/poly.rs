//! Element-wise tensor-product Legendre spaces and the L2 projections onto them.
//!
//! On an element `T = [x0, x0 + H] x [y0, y0 + H]` the basis function with
//! degrees `(a, b)` is `H^-1 * l_a(xi) * l_b(eta)`, where `xi, eta` are the
//! local coordinates in `[0, 1]` and `l_n(t) = sqrt(2n + 1) P_n(2t - 1)` is the
//! shifted Legendre polynomial normalised in `L2(0, 1)`. Functions are indexed
//! lexicographically in `(a, b)`, so index 0 is the constant `1/H`.

use crate::error::{LodError, Result};
use crate::fem::FineField;
use crate::mesh::{CartesianMesh, CellRect, ElementId, NodeRect};

/// Gauss-Legendre points and weights on `[0, 1]`.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        // Chebyshev initial guess, then Newton on P_n
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, z);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, z);
        x[i] = 0.5 * (1.0 - z);
        w[i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, dp)
}

/// `sqrt(2n + 1) P_n(2t - 1)`, orthonormal on `[0, 1]`.
pub fn shifted_legendre(n: usize, t: f64) -> f64 {
    let z = 2.0 * t - 1.0;
    let (mut p0, mut p1) = (1.0, z);
    let pn = match n {
        0 => 1.0,
        1 => z,
        _ => {
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            p1
        }
    };
    ((2 * n + 1) as f64).sqrt() * pn
}

/// Tensor Legendre basis of coordinate degree `p` on every element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LegendreBasis {
    p: usize,
}

impl LegendreBasis {
    pub fn new(p: usize) -> Self {
        Self { p }
    }

    pub fn degree(&self) -> usize {
        self.p
    }

    /// Functions per element, `(p + 1)^2`.
    pub fn len(&self) -> usize {
        (self.p + 1) * (self.p + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `(deg_x, deg_y)` of function `k` (0-based).
    pub fn degrees(&self, k: usize) -> (usize, usize) {
        (k / (self.p + 1), k % (self.p + 1))
    }

    pub fn index(&self, deg_x: usize, deg_y: usize) -> usize {
        deg_x * (self.p + 1) + deg_y
    }

    /// Value of function `k` at local coordinates `(xi, eta)` of an element of side `h`.
    pub fn eval_local(&self, k: usize, h: f64, xi: f64, eta: f64) -> f64 {
        let (a, b) = self.degrees(k);
        shifted_legendre(a, xi) * shifted_legendre(b, eta) / h
    }
}

/// Value of `Lambda_{k,T}` at the physical point `x` of the closed element `t`.
pub fn legendre_eval(
    basis: &LegendreBasis,
    k: usize,
    t: ElementId,
    coarse: &CartesianMesh,
    x: (f64, f64),
) -> Result<f64> {
    coarse.check_element(t)?;
    if k >= basis.len() {
        return Err(LodError::arg(format!("Legendre index {k} >= {}", basis.len())));
    }
    let h = coarse.h();
    let (x0, y0) = coarse.cell_origin(t);
    let xi = (x.0 - x0) / h;
    let eta = (x.1 - y0) / h;
    let eps = 1e-12;
    if !(-eps..=1.0 + eps).contains(&xi) || !(-eps..=1.0 + eps).contains(&eta) {
        return Err(LodError::arg(format!(
            "point ({}, {}) outside element ({}, {})",
            x.0, x.1, t.i, t.j
        )));
    }
    Ok(basis.eval_local(k, h, xi.clamp(0.0, 1.0), eta.clamp(0.0, 1.0)))
}

/// Legendre coefficients, blocked by element (row-major) then by function index.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseCoeffVector {
    pub funcs_per_element: usize,
    pub values: Vec<f64>,
}

impl CoarseCoeffVector {
    pub fn zeros(elements: usize, funcs_per_element: usize) -> Self {
        Self {
            funcs_per_element,
            values: vec![0.0; elements * funcs_per_element],
        }
    }

    /// The unit vector `e_{k,T}`.
    pub fn unit(elements: usize, funcs_per_element: usize, element: usize, k: usize) -> Self {
        let mut c = Self::zeros(elements, funcs_per_element);
        c.values[element * funcs_per_element + k] = 1.0;
        c
    }

    pub fn element_count(&self) -> usize {
        self.values.len() / self.funcs_per_element
    }

    pub fn block(&self, element: usize) -> &[f64] {
        let n = self.funcs_per_element;
        &self.values[element * n..(element + 1) * n]
    }

    pub fn block_mut(&mut self, element: usize) -> &mut [f64] {
        let n = self.funcs_per_element;
        &mut self.values[element * n..(element + 1) * n]
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &CoarseCoeffVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Coarse mesh, fine mesh and Legendre degree together with the exact moment
/// weights `int_T phi_z Lambda_{k,T}` of the fine Q1 hat functions.
#[derive(Debug, Clone)]
pub struct CoarseSpace {
    pub coarse: CartesianMesh,
    pub fine: CartesianMesh,
    pub basis: LegendreBasis,
    ratio: usize,
    /// `w1[a][s] = int_0^1 hat_s(t) l_a(t) dt` on the `ratio`-cell subdivision.
    w1: Vec<Vec<f64>>,
}

impl CoarseSpace {
    pub fn new(coarse: CartesianMesh, fine: CartesianMesh, p: usize) -> Result<Self> {
        let ratio = coarse.ratio_to(&fine).map_err(|_| {
            LodError::arg(format!(
                "fine level {} must not be coarser than coarse level {}",
                fine.level(),
                coarse.level()
            ))
        })?;
        let basis = LegendreBasis::new(p);
        // exact for hat * l_a, degree <= p + 1 per axis
        let npts = (p + 2).div_ceil(2) + 1;
        let (gx, gw) = gauss_legendre_unit(npts);
        let dt = 1.0 / ratio as f64;
        let mut w1 = vec![vec![0.0; ratio + 1]; p + 1];
        for (a, row) in w1.iter_mut().enumerate() {
            for cell in 0..ratio {
                for (q, wq) in gx.iter().zip(&gw) {
                    let t = (cell as f64 + q) * dt;
                    let la = shifted_legendre(a, t) * wq * dt;
                    row[cell] += (1.0 - q) * la;
                    row[cell + 1] += q * la;
                }
            }
        }
        Ok(Self {
            coarse,
            fine,
            basis,
            ratio,
            w1,
        })
    }

    pub fn from_levels(coarse_level: u32, fine_level: u32, p: usize) -> Result<Self> {
        Self::new(CartesianMesh::new(coarse_level)?, CartesianMesh::new(fine_level)?, p)
    }

    /// Fine cells per coarse cell side.
    pub fn ratio(&self) -> usize {
        self.ratio
    }

    pub fn funcs(&self) -> usize {
        self.basis.len()
    }

    pub fn element_count(&self) -> usize {
        self.coarse.cell_count()
    }

    /// Total coarse dimension `M * N`.
    pub fn dim(&self) -> usize {
        self.element_count() * self.funcs()
    }

    /// Closed fine-node rectangle of a coarse element.
    pub fn element_nodes(&self, t: ElementId) -> NodeRect {
        CellRect::of_element(t).refine(self.ratio).node_rect()
    }

    /// Fine-node rectangle covering a rectangle of coarse cells.
    pub fn rect_nodes(&self, r: &CellRect) -> NodeRect {
        r.refine(self.ratio).node_rect()
    }

    /// `int_T phi_z Lambda_{k,T}` for the local node `(s, t)` of the element.
    pub fn moment_weight(&self, k: usize, s: usize, t: usize) -> f64 {
        let (a, b) = self.basis.degrees(k);
        self.coarse.h() * self.w1[a][s] * self.w1[b][t]
    }

    /// Moment weights of function `k` over the `(ratio + 1)^2` local nodes, row-major.
    pub fn moment_row(&self, k: usize) -> Vec<f64> {
        let n = self.ratio + 1;
        (0..n * n).map(|z| self.moment_weight(k, z % n, z / n)).collect()
    }

    /// Legendre moments of a nodal field on one element, given by local node values.
    pub fn element_moments_with(&self, value: impl Fn(usize, usize) -> f64) -> Vec<f64> {
        let n = self.ratio + 1;
        let p1 = self.basis.degree() + 1;
        let h = self.coarse.h();
        // separable contraction: first along x, then along y
        let mut tmp = vec![0.0; p1 * n];
        for t in 0..n {
            for s in 0..n {
                let v = value(s, t);
                if v != 0.0 {
                    for a in 0..p1 {
                        tmp[a * n + t] += self.w1[a][s] * v;
                    }
                }
            }
        }
        let mut out = vec![0.0; self.funcs()];
        for a in 0..p1 {
            for b in 0..p1 {
                out[self.basis.index(a, b)] =
                    h * (0..n).map(|t| self.w1[b][t] * tmp[a * n + t]).sum::<f64>();
            }
        }
        out
    }

    fn check_field(&self, v: &FineField) -> Result<()> {
        if v.level() != self.fine.level() {
            return Err(LodError::arg(format!(
                "field lives on level {}, space expects fine level {}",
                v.level(),
                self.fine.level()
            )));
        }
        Ok(())
    }

    /// Legendre moments of `v` on element `t`.
    pub fn moments_on(&self, v: &FineField, t: ElementId) -> Vec<f64> {
        let r = self.element_nodes(t);
        self.element_moments_with(|s, q| v.get(r.i0 + s, r.j0 + q))
    }

    /// Values of `sum_k c_k Lambda_{k,T}` at the local fine nodes of `t`, row-major.
    pub fn element_polynomial_values(&self, coeffs: &[f64]) -> Vec<f64> {
        let n = self.ratio + 1;
        let h = self.coarse.h();
        let mut out = vec![0.0; n * n];
        for (k, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let (a, b) = self.basis.degrees(k);
            for t in 0..n {
                let lb = shifted_legendre(b, t as f64 / self.ratio as f64);
                for s in 0..n {
                    out[t * n + s] += c * shifted_legendre(a, s as f64 / self.ratio as f64) * lb / h;
                }
            }
        }
        out
    }
}

/// `Pi_H v`: element-wise L2 projection onto the Legendre space.
pub fn project_l2(v: &FineField, space: &CoarseSpace) -> Result<CoarseCoeffVector> {
    space.check_field(v)?;
    let mut out = CoarseCoeffVector::zeros(space.element_count(), space.funcs());
    for (idx, t) in space.coarse.elements().enumerate() {
        out.block_mut(idx).copy_from_slice(&space.moments_on(v, t));
    }
    Ok(out)
}

/// `Pi_H^0 v`: element means.
pub fn project_pw_const(v: &FineField, space: &CoarseSpace) -> Result<Vec<f64>> {
    space.check_field(v)?;
    let h = space.coarse.h();
    let n = space.ratio() + 1;
    Ok(space
        .coarse
        .elements()
        .map(|t| {
            let r = space.element_nodes(t);
            // Lambda_1 = 1/H, so the mean is (1/H^2) int v = c_1 / H
            let c1 = h * (0..n * n)
                .map(|z| space.w1[0][z % n] * space.w1[0][z / n] * v.get(r.i0 + z % n, r.j0 + z / n))
                .sum::<f64>();
            c1 / h
        })
        .collect())
}

/// Element-wise nodal values: `values[element][local node]`, duplicated on
/// shared element boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct BrokenField {
    pub nodes_per_side: usize,
    pub values: Vec<Vec<f64>>,
}

impl BrokenField {
    /// Collapses to a single nodal field; a node shared by several elements
    /// takes the value of the element with the largest index among those
    /// containing it (the upper-right one).
    pub fn to_fine_field(&self, space: &CoarseSpace) -> FineField {
        let mut out = FineField::zeros(space.fine);
        for (idx, t) in space.coarse.elements().enumerate() {
            let r = space.element_nodes(t);
            for (z, &v) in self.values[idx].iter().enumerate() {
                out.set(r.i0 + z % r.nx, r.j0 + z / r.nx, v);
            }
        }
        out
    }
}

/// Fine Q1 interpolant of a `V_H` function, kept per element.
pub fn embed_vh(c: &CoarseCoeffVector, space: &CoarseSpace) -> Result<BrokenField> {
    if c.funcs_per_element != space.funcs() || c.element_count() != space.element_count() {
        return Err(LodError::arg("coefficient vector does not match the coarse space"));
    }
    Ok(BrokenField {
        nodes_per_side: space.ratio() + 1,
        values: (0..space.element_count())
            .map(|e| space.element_polynomial_values(c.block(e)))
            .collect(),
    })
}

/// `Pi_H` applied to an element-wise field.
pub fn project_l2_broken(v: &BrokenField, space: &CoarseSpace) -> Result<CoarseCoeffVector> {
    let n = space.ratio() + 1;
    if v.nodes_per_side != n || v.values.len() != space.element_count() {
        return Err(LodError::arg("broken field does not match the coarse space"));
    }
    let mut out = CoarseCoeffVector::zeros(space.element_count(), space.funcs());
    for e in 0..space.element_count() {
        let vals = &v.values[e];
        let m = space.element_moments_with(|s, t| vals[t * n + s]);
        out.block_mut(e).copy_from_slice(&m);
    }
    Ok(out)
}
