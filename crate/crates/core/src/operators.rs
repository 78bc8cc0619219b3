//! Bubble functions and the coarse operators built from them: the bubble
//! operator `B_H`, the averaging quasi-interpolation `I_H = E_H Pi_H^0` and the
//! stabilising projection `P_H = I_H + B_H (1 - I_H)`.

use crate::error::{LodError, Result};
use crate::fem::{FineField, LocalField};
use crate::linalg::dense_lu_solve;
use crate::mesh::{CellRect, ElementId, NodeRect};
use crate::poly::{CoarseCoeffVector, CoarseSpace};

/// Largest accepted 1-norm condition number of the bubble moment matrix.
pub const MAX_BUBBLE_CONDITION: f64 = 1e12;

/// Discrete bubbles `b_{k,T}` with `Pi_H b_{k,T} = Lambda_{k,T}`.
///
/// On a uniform mesh the bubbles of all elements are translates of each
/// other, so only one set of local nodal values is stored.
#[derive(Debug, Clone)]
pub struct BubbleSet {
    space: CoarseSpace,
    /// `local[k]`: nodal values on the `(ratio + 1)^2` element nodes.
    local: Vec<Vec<f64>>,
    /// Column `k` holds the coefficients of `b_k` in the ansatz `theta * Lambda_i`.
    coefficients: Vec<Vec<f64>>,
    condition: f64,
}

impl BubbleSet {
    pub fn new(space: &CoarseSpace) -> Result<Self> {
        let r = space.ratio();
        if r < 2 {
            return Err(LodError::arg(
                "bubbles need the fine mesh to be strictly finer than the coarse mesh",
            ));
        }
        let n = r + 1;
        let nf = space.funcs();
        let theta: Vec<f64> = (0..n * n)
            .map(|z| {
                let (xi, eta) = ((z % n) as f64 / r as f64, (z / n) as f64 / r as f64);
                // product of the four corner hats of the element
                (xi * (1.0 - xi) * eta * (1.0 - eta)).powi(2)
            })
            .collect();
        let ansatz: Vec<Vec<f64>> = (0..nf)
            .map(|i| {
                let mut c = vec![0.0; nf];
                c[i] = 1.0;
                space
                    .element_polynomial_values(&c)
                    .iter()
                    .zip(&theta)
                    .map(|(l, t)| l * t)
                    .collect()
            })
            .collect();
        // G[k][i] = int interp(theta Lambda_i) Lambda_k
        let mut g = vec![0.0; nf * nf];
        for (i, psi) in ansatz.iter().enumerate() {
            let m = space.element_moments_with(|s, t| psi[t * n + s]);
            for k in 0..nf {
                g[k * nf + i] = m[k];
            }
        }
        let rhs: Vec<Vec<f64>> = (0..nf)
            .map(|k| {
                let mut e = vec![0.0; nf];
                e[k] = 1.0;
                e
            })
            .collect();
        let singular = || {
            LodError::numeric(format!(
                "bubble moment matrix is singular for p = {} with {} fine cells per coarse cell; use a finer fine mesh",
                space.basis.degree(),
                r
            ))
        };
        let (coefficients, condition) = dense_lu_solve(&g, nf, &rhs).map_err(|_| singular())?;
        if !(condition <= MAX_BUBBLE_CONDITION) {
            return Err(singular());
        }
        let local = coefficients
            .iter()
            .map(|c| {
                (0..n * n)
                    .map(|z| c.iter().zip(&ansatz).map(|(ci, psi)| ci * psi[z]).sum())
                    .collect()
            })
            .collect();
        Ok(Self {
            space: space.clone(),
            local,
            coefficients,
            condition,
        })
    }

    pub fn space(&self) -> &CoarseSpace {
        &self.space
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Coefficients of bubble `k` in the `theta * Lambda_i` ansatz.
    pub fn ansatz_coefficients(&self, k: usize) -> &[f64] {
        &self.coefficients[k]
    }

    /// `b_{k,T}` on the closed node rectangle of `t`.
    pub fn bubble(&self, t: ElementId, k: usize) -> LocalField {
        LocalField {
            rect: self.space.element_nodes(t),
            values: self.local[k].clone(),
        }
    }

    /// `Lambda_{k,T}` moments of a local field on element `t`.
    pub fn moments_local(&self, v: &LocalField, t: ElementId) -> Vec<f64> {
        let r = self.space.element_nodes(t);
        self.space
            .element_moments_with(|s, q| v.get(r.i0 + s, r.j0 + q))
    }

    /// Coarse cells whose closure carries a nonzero value of `v`.
    pub fn coarse_support(&self, v: &LocalField) -> Option<CellRect> {
        let n = v.rect.nx;
        let (mut lo_i, mut lo_j, mut hi_i, mut hi_j) = (usize::MAX, usize::MAX, 0, 0);
        for (z, &val) in v.values.iter().enumerate() {
            if val != 0.0 {
                let (i, j) = (v.rect.i0 + z % n, v.rect.j0 + z / n);
                lo_i = lo_i.min(i);
                lo_j = lo_j.min(j);
                hi_i = hi_i.max(i);
                hi_j = hi_j.max(j);
            }
        }
        if lo_i == usize::MAX {
            return None;
        }
        // fine cells touching the nonzero nodes, mapped to coarse cells
        let r = self.space.ratio();
        let nc = self.space.coarse.n();
        let nf = self.space.fine.n();
        Some(CellRect {
            i0: lo_i.saturating_sub(1) / r,
            j0: lo_j.saturating_sub(1) / r,
            i1: (hi_i.min(nf - 1) / r + 1).min(nc),
            j1: (hi_j.min(nf - 1) / r + 1).min(nc),
        })
    }

    /// `Pi_H` restricted to the cells of `rect`, as `(element, moments)` pairs.
    pub fn moments_on_cells(&self, v: &LocalField, rect: CellRect) -> Vec<(ElementId, Vec<f64>)> {
        rect.cells().map(|t| (t, self.moments_local(v, t))).collect()
    }

    /// `B_H v = sum_{T,k} (int_T v Lambda_{k,T}) b_{k,T}` for a local field.
    pub fn apply_bh_local(&self, v: &LocalField) -> LocalField {
        let Some(support) = self.coarse_support(v) else {
            return LocalField::zeros(v.rect);
        };
        let mut out = LocalField::zeros(self.space.rect_nodes(&support));
        for (t, m) in self.moments_on_cells(v, support) {
            self.add_bubbles(&mut out, t, &m);
        }
        out
    }

    /// Adds `sum_k m_k b_{k,T}` to `out`.
    pub fn add_bubbles(&self, out: &mut LocalField, t: ElementId, m: &[f64]) {
        let r = self.space.element_nodes(t);
        let n = r.nx;
        for (k, &mk) in m.iter().enumerate() {
            if mk == 0.0 {
                continue;
            }
            for (z, &b) in self.local[k].iter().enumerate() {
                *out.get_mut(r.i0 + z % n, r.j0 + z / n) += mk * b;
            }
        }
    }

    /// `I_H v` for a local field, supported one coarse layer beyond `v`.
    pub fn apply_ih_local(&self, v: &LocalField) -> LocalField {
        let Some(support) = self.coarse_support(v) else {
            return LocalField::zeros(v.rect);
        };
        let coarse = &self.space.coarse;
        let h = coarse.h();
        // element means on the support; zero elsewhere
        let means: Vec<(ElementId, f64)> = support
            .cells()
            .map(|t| (t, self.moments_local(v, t)[0] / h))
            .collect();
        let window = support.grow(1, coarse);
        let nodes = window.node_rect();
        let mut nodal = vec![0.0; nodes.len()];
        for &(t, m) in &means {
            for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let (i, j) = (t.i + di, t.j + dj);
                if !coarse.is_boundary_node(i, j) {
                    // every interior coarse node touches four elements
                    nodal[nodes.offset(i, j)] += 0.25 * m;
                }
            }
        }
        self.interpolate_coarse_nodal(&nodes, &nodal)
    }

    /// Fine nodal interpolant of a coarse Q1 function given on `nodes`
    /// (coarse node rectangle); the result lives on the covered fine nodes.
    fn interpolate_coarse_nodal(&self, nodes: &NodeRect, nodal: &[f64]) -> LocalField {
        let r = self.space.ratio();
        let fine_rect = NodeRect {
            i0: nodes.i0 * r,
            j0: nodes.j0 * r,
            nx: (nodes.nx - 1) * r + 1,
            ny: (nodes.ny - 1) * r + 1,
        };
        let mut out = LocalField::zeros(fine_rect);
        let inv = 1.0 / r as f64;
        for fj in 0..fine_rect.ny {
            let (cj, sj) = ((fj / r).min(nodes.ny - 2), fj as f64 * inv - (fj / r).min(nodes.ny - 2) as f64);
            for fi in 0..fine_rect.nx {
                let ci = (fi / r).min(nodes.nx - 2);
                let si = fi as f64 * inv - ci as f64;
                let v00 = nodal[cj * nodes.nx + ci];
                let v10 = nodal[cj * nodes.nx + ci + 1];
                let v01 = nodal[(cj + 1) * nodes.nx + ci];
                let v11 = nodal[(cj + 1) * nodes.nx + ci + 1];
                out.values[fj * fine_rect.nx + fi] = (1.0 - si) * (1.0 - sj) * v00
                    + si * (1.0 - sj) * v10
                    + (1.0 - si) * sj * v01
                    + si * sj * v11;
            }
        }
        out
    }

    /// `P_H v = I_H v + B_H (v - I_H v)` for a local field.
    pub fn apply_ph_local(&self, v: &LocalField) -> LocalField {
        if self.coarse_support(v).is_none() {
            return LocalField::zeros(v.rect);
        }
        let ih = self.apply_ih_local(v);
        // v - I_H v on a rectangle that holds both
        let rect = union_rect(&ih.rect, &v.rect);
        let mut diff = ih.extended(rect);
        diff.values.iter_mut().for_each(|x| *x = -*x);
        diff.add_scaled(1.0, &v.extended(rect));
        let bh = self.apply_bh_local(&diff);
        let out_rect = union_rect(&ih.rect, &bh.rect);
        let mut out = ih.extended(out_rect);
        out.add_scaled(1.0, &bh);
        out
    }

    /// `P_H b_{k,T}`; equal to the bubble itself for `k > 0`.
    pub fn stabilized_bubble(&self, t: ElementId, k: usize) -> LocalField {
        let b = self.bubble(t, k);
        if k > 0 {
            return b;
        }
        self.apply_ph_local(&b)
    }

    pub fn apply_bh(&self, v: &FineField) -> Result<FineField> {
        self.global(v, |f| self.apply_bh_local(f))
    }

    /// `B_H` on a coefficient vector: `sum c_{k,T} b_{k,T}`.
    pub fn apply_bh_coeffs(&self, c: &CoarseCoeffVector) -> Result<FineField> {
        if c.funcs_per_element != self.space.funcs() || c.element_count() != self.space.element_count() {
            return Err(LodError::arg("coefficient vector does not match the bubble set"));
        }
        let all = CellRect {
            i0: 0,
            j0: 0,
            i1: self.space.coarse.n(),
            j1: self.space.coarse.n(),
        };
        let mut out = LocalField::zeros(self.space.rect_nodes(&all));
        for (idx, t) in self.space.coarse.elements().enumerate() {
            self.add_bubbles(&mut out, t, c.block(idx));
        }
        Ok(out.to_fine_field(self.space.fine))
    }

    pub fn apply_ih(&self, v: &FineField) -> Result<FineField> {
        self.global(v, |f| self.apply_ih_local(f))
    }

    pub fn apply_ph(&self, v: &FineField) -> Result<FineField> {
        self.global(v, |f| self.apply_ph_local(f))
    }

    fn global(&self, v: &FineField, op: impl Fn(&LocalField) -> LocalField) -> Result<FineField> {
        if v.level() != self.space.fine.level() {
            return Err(LodError::arg("field does not live on the fine mesh of the bubble set"));
        }
        let n = self.space.fine.nodes_per_side();
        let all = NodeRect {
            i0: 0,
            j0: 0,
            nx: n,
            ny: n,
        };
        Ok(op(&LocalField::crop(v, all)).to_fine_field(self.space.fine))
    }
}

/// Smallest node rectangle containing both.
pub fn union_rect(a: &NodeRect, b: &NodeRect) -> NodeRect {
    let i0 = a.i0.min(b.i0);
    let j0 = a.j0.min(b.j0);
    NodeRect {
        i0,
        j0,
        nx: (a.i0 + a.nx).max(b.i0 + b.nx) - i0,
        ny: (a.j0 + a.ny).max(b.j0 + b.ny) - j0,
    }
}

pub fn build_bubbles(space: &CoarseSpace) -> Result<BubbleSet> {
    BubbleSet::new(space)
}
