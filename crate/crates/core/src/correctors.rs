//! Fine-scale correctors.
//!
//! The fine-scale space `W = ker Pi_H` is enforced with Lagrange multipliers
//! on the Legendre moments of every coarse cell of a patch. A [`PatchSolver`]
//! factors the resulting saddle system once and then serves every source
//! whose corrector lives on the same patch: element correctors
//! `a(C_T v, w) = a_T(v, w)` and the constrained energy minimisers `R v_H`.

use crate::error::{LodError, Result};
use crate::fem::{apply_stiffness_on_cells, FineCoefficient, FineField, LocalField, Q1_STIFFNESS};
use crate::linalg::{SaddleSolver, SparseMatrix};
use crate::mesh::{patch, CellRect, ElementId, NodeRect};
use crate::operators::BubbleSet;
use crate::poly::{CoarseCoeffVector, CoarseSpace};

/// Moment constraints of a patch: one row per `(coarse cell, Legendre index)`,
/// one column per interior fine node.
#[derive(Debug, Clone)]
pub struct ConstraintBlock {
    pub elements: Vec<ElementId>,
    pub matrix: SparseMatrix,
}

impl ConstraintBlock {
    pub fn new(space: &CoarseSpace, rect: CellRect, dofs: NodeRect) -> Self {
        let nf = space.funcs();
        let elements: Vec<ElementId> = rect.cells().collect();
        let mut trip = Vec::new();
        for (e, &t) in elements.iter().enumerate() {
            let nodes = space.element_nodes(t);
            for k in 0..nf {
                for q in 0..nodes.ny {
                    for s in 0..nodes.nx {
                        let (i, j) = (nodes.i0 + s, nodes.j0 + q);
                        if dofs.contains(i, j) {
                            trip.push((e * nf + k, dofs.offset(i, j), space.moment_weight(k, s, q)));
                        }
                    }
                }
            }
        }
        Self {
            matrix: SparseMatrix::from_triplets(elements.len() * nf, dofs.len(), trip),
            elements,
        }
    }
}

/// Corrector together with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectorField {
    pub center: ElementId,
    pub ell: usize,
    pub source: String,
    pub field: LocalField,
}

/// Factored saddle system on the interior fine nodes of a rectangle of coarse cells.
#[derive(Debug, Clone)]
pub struct PatchSolver {
    rect: CellRect,
    dofs: NodeRect,
    closure: NodeRect,
    constraints: ConstraintBlock,
    solver: SaddleSolver,
}

impl PatchSolver {
    pub fn new(space: &CoarseSpace, coeff: &FineCoefficient, rect: CellRect) -> Result<Self> {
        let r = space.ratio();
        let closure = space.rect_nodes(&rect);
        if rect.width() == 0 || rect.height() == 0 {
            return Err(LodError::arg("patch is empty"));
        }
        let dofs = NodeRect {
            i0: closure.i0 + 1,
            j0: closure.j0 + 1,
            nx: rect.width() * r - 1,
            ny: rect.height() * r - 1,
        };
        if dofs.nx == 0 || dofs.ny == 0 {
            return Err(LodError::arg("patch has no interior fine nodes"));
        }
        let k = patch_stiffness(coeff, rect.refine(r), dofs);
        let constraints = ConstraintBlock::new(space, rect, dofs);
        let solver = SaddleSolver::new(&k, &constraints.matrix)?;
        Ok(Self {
            rect,
            dofs,
            closure,
            constraints,
            solver,
        })
    }

    pub fn rect(&self) -> CellRect {
        self.rect
    }

    pub fn dof_count(&self) -> usize {
        self.dofs.len()
    }

    pub fn constraints(&self) -> &ConstraintBlock {
        &self.constraints
    }

    /// `a_cells(v, phi_z)` for every interior node `z`, with the form
    /// restricted to the given fine cells.
    pub fn load(&self, coeff: &FineCoefficient, v: &LocalField, cells: CellRect) -> Vec<f64> {
        let Some(cells) = cells.intersect(&self.rect.refine(self.closure_ratio())) else {
            return vec![0.0; self.dofs.len()];
        };
        let mut out = LocalField::zeros(cells.node_rect());
        apply_stiffness_on_cells(coeff, v, cells, &mut out);
        let mut rhs = vec![0.0; self.dofs.len()];
        let nr = out.rect;
        for j in 0..nr.ny {
            for i in 0..nr.nx {
                let (gi, gj) = (nr.i0 + i, nr.j0 + j);
                if self.dofs.contains(gi, gj) {
                    rhs[self.dofs.offset(gi, gj)] = out.values[j * nr.nx + i];
                }
            }
        }
        rhs
    }

    fn closure_ratio(&self) -> usize {
        (self.closure.nx - 1) / self.rect.width()
    }

    /// Solves the saddle system and returns the primal part on the closed patch.
    pub fn solve(&self, r: &[f64], g: &[f64]) -> Result<LocalField> {
        let (x, _) = self.solver.solve(r, g)?;
        Ok(self.to_local(&x))
    }

    fn to_local(&self, x: &[f64]) -> LocalField {
        let mut out = LocalField::zeros(self.closure);
        for j in 0..self.dofs.ny {
            for i in 0..self.dofs.nx {
                *out.get_mut(self.dofs.i0 + i, self.dofs.j0 + j) = x[j * self.dofs.nx + i];
            }
        }
        out
    }

    /// Corrector `w` with `a(w, .) = a_T(v, .)` on this patch.
    pub fn element_corrector(&self, coeff: &FineCoefficient, t: ElementId, v: &LocalField) -> Result<LocalField> {
        let r = self.closure_ratio();
        let rhs = self.load(coeff, v, CellRect::of_element(t).refine(r));
        self.solve(&rhs, &vec![0.0; self.constraints.matrix.nrows()])
    }

    /// Energy minimiser with prescribed moments `v_H` on every coarse cell of the patch.
    pub fn constrained_minimizer(&self, v_h: &CoarseCoeffVector, space: &CoarseSpace) -> Result<LocalField> {
        let nf = space.funcs();
        let mut g = vec![0.0; self.constraints.matrix.nrows()];
        for (e, &t) in self.constraints.elements.iter().enumerate() {
            g[e * nf..(e + 1) * nf].copy_from_slice(v_h.block(space.coarse.cell_index(t)));
        }
        self.solve(&vec![0.0; self.dofs.len()], &g)
    }
}

/// Stiffness on the nodes of `dofs` assembled from the fine cells in `cells`.
fn patch_stiffness(coeff: &FineCoefficient, cells: CellRect, dofs: NodeRect) -> SparseMatrix {
    let mut trip = Vec::with_capacity(cells.width() * cells.height() * 16);
    for c in cells.cells() {
        let a = coeff.cell(c);
        let nodes = [(c.i, c.j), (c.i + 1, c.j), (c.i, c.j + 1), (c.i + 1, c.j + 1)];
        let idx = nodes.map(|(i, j)| dofs.contains(i, j).then(|| dofs.offset(i, j)));
        for r in 0..4 {
            let Some(ri) = idx[r] else { continue };
            for s in 0..4 {
                if let Some(si) = idx[s] {
                    trip.push((ri, si, a * Q1_STIFFNESS[r][s]));
                }
            }
        }
    }
    SparseMatrix::from_triplets(dofs.len(), dofs.len(), trip)
}

fn annotated<T>(res: Result<T>, what: impl std::fmt::Display) -> Result<T> {
    res.map_err(|e| e.annotate(what))
}

/// Rectangle of the patch `N^ell(T)`.
pub fn patch_rect(space: &CoarseSpace, t: ElementId, ell: usize) -> Result<CellRect> {
    Ok(patch(&space.coarse, t, ell)?.rect)
}

/// Localized element corrector `C_T^ell v`.
pub fn element_corrector(
    space: &CoarseSpace,
    coeff: &FineCoefficient,
    t: ElementId,
    v: &LocalField,
    ell: usize,
) -> Result<CorrectorField> {
    if ell == 0 {
        return Err(LodError::arg("corrector patches need ell >= 1"));
    }
    let ctx = format!("element corrector T = ({}, {}), ell = {ell}", t.i, t.j);
    let rect = annotated(patch_rect(space, t, ell), &ctx)?;
    let solver = annotated(PatchSolver::new(space, coeff, rect), &ctx)?;
    let field = annotated(solver.element_corrector(coeff, t, v), &ctx)?;
    Ok(CorrectorField {
        center: t,
        ell,
        source: "field".into(),
        field,
    })
}

/// Coarse cells `K` with `a_K(v, .) != 0` possible, i.e. touching the support of `v`.
pub fn active_elements(bubbles: &BubbleSet, v: &LocalField) -> Vec<ElementId> {
    match bubbles.coarse_support(v) {
        Some(r) => r.cells().collect(),
        None => Vec::new(),
    }
}

/// `C^ell v = sum_T C_T^ell v`, restricted to elements touching the support of `v`.
pub fn corrector_sum(
    bubbles: &BubbleSet,
    coeff: &FineCoefficient,
    v: &LocalField,
    ell: usize,
) -> Result<LocalField> {
    let space = bubbles.space();
    let elements = active_elements(bubbles, v);
    let mut parts = Vec::with_capacity(elements.len());
    for t in elements {
        parts.push(element_corrector(space, coeff, t, v, ell)?.field);
    }
    Ok(sum_fields(&parts, v.rect))
}

/// Sum of local fields on the smallest rectangle holding all of them and `base`.
pub fn sum_fields(parts: &[LocalField], base: NodeRect) -> LocalField {
    let rect = parts
        .iter()
        .fold(base, |acc, p| crate::operators::union_rect(&acc, &p.rect));
    let mut out = LocalField::zeros(rect);
    for p in parts {
        out.add_scaled(1.0, p);
    }
    out
}

/// Whole-domain corrector solving `a(C v, w) = a(v, w)` for all `w` in `W`.
pub fn global_corrector(space: &CoarseSpace, coeff: &FineCoefficient, v: &FineField) -> Result<FineField> {
    let all = whole_domain(space);
    let solver = annotated(PatchSolver::new(space, coeff, all), "global corrector")?;
    let vl = LocalField::crop(v, space.rect_nodes(&all));
    let rhs = solver.load(coeff, &vl, all.refine(space.ratio()));
    let m = solver.constraints.matrix.nrows();
    Ok(solver.solve(&rhs, &vec![0.0; m])?.to_fine_field(space.fine))
}

pub fn whole_domain(space: &CoarseSpace) -> CellRect {
    CellRect {
        i0: 0,
        j0: 0,
        i1: space.coarse.n(),
        j1: space.coarse.n(),
    }
}

/// `R v_H` on a region: the energy minimiser whose moments equal `v_H` on
/// every coarse cell of the region; `v_H` must vanish outside it.
pub fn solve_r(
    space: &CoarseSpace,
    coeff: &FineCoefficient,
    v_h: &CoarseCoeffVector,
    region: CellRect,
) -> Result<LocalField> {
    if v_h.funcs_per_element != space.funcs() || v_h.element_count() != space.element_count() {
        return Err(LodError::arg("coarse vector does not match the space"));
    }
    for t in space.coarse.elements() {
        if !region.contains(t) && v_h.block(space.coarse.cell_index(t)).iter().any(|&x| x != 0.0) {
            return Err(LodError::arg(format!(
                "coarse vector is nonzero on ({}, {}) outside the region",
                t.i, t.j
            )));
        }
    }
    let solver = PatchSolver::new(space, coeff, region)?;
    solver.constrained_minimizer(v_h, space)
}

/// `a(v, v)` restricted to fine cells outside `rect` (given in fine cells).
pub fn energy_outside(coeff: &FineCoefficient, v: &LocalField, rect: CellRect) -> f64 {
    let total = local_energy(coeff, v, crate::fem::cells_touching(&v.rect, &coeff.mesh));
    let inside = local_energy(coeff, v, rect);
    (total - inside).max(0.0)
}

/// `a_cells(v, v)` over the fine cells of `cells`.
pub fn local_energy(coeff: &FineCoefficient, v: &LocalField, cells: CellRect) -> f64 {
    let mut out = LocalField::zeros(cells.node_rect());
    apply_stiffness_on_cells(coeff, v, cells, &mut out);
    out.nodal_dot(v)
}

/// Tail energy norms `||grad C_T v||_{L2(D \ N^k(T))}` for `k = 0..=max_k`.
pub fn tail_norms(space: &CoarseSpace, coeff: &FineCoefficient, c: &CorrectorField, max_k: usize) -> Vec<f64> {
    (0..=max_k)
        .map(|k| {
            let rect = CellRect::of_element(c.center).grow(k, &space.coarse).refine(space.ratio());
            energy_outside(coeff, &c.field, rect).sqrt()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{gen_a1, SplitMix64};
    use crate::fem::energy_product_local;
    use crate::poly::project_l2;

    struct Setup {
        space: CoarseSpace,
        bubbles: BubbleSet,
        coeff: FineCoefficient,
    }

    fn setup(cl: u32, fl: u32, p: usize) -> Setup {
        let space = CoarseSpace::from_levels(cl, fl, p).unwrap();
        let a = gen_a1(7, fl.min(5)).unwrap();
        Setup {
            bubbles: BubbleSet::new(&space).unwrap(),
            coeff: FineCoefficient::new(&a, space.fine).unwrap(),
            space,
        }
    }

    fn random_field(s: &Setup, seed: u64) -> FineField {
        let mut rng = SplitMix64::new(seed);
        let mut f = FineField::from_fn(s.space.fine, |_, _| rng.next_f64() - 0.5);
        f.zero_boundary();
        f
    }

    fn energy(s: &Setup, v: &FineField) -> f64 {
        let all = LocalField::crop(v, s.space.rect_nodes(&whole_domain(&s.space)));
        energy_product_local(&s.coeff, &all, &all).max(0.0).sqrt()
    }

    fn full_ell(s: &Setup) -> usize {
        2 * s.space.coarse.n()
    }

    #[test]
    fn correctors_lie_in_fine_scale_space() {
        let s = setup(2, 5, 1);
        let v = random_field(&s, 1);
        let vl = LocalField::crop(&v, s.space.rect_nodes(&whole_domain(&s.space)));
        for t in s.space.coarse.elements() {
            for ell in [1, 2] {
                let c = element_corrector(&s.space, &s.coeff, t, &vl, ell).unwrap();
                let m = project_l2(&c.field.to_fine_field(s.space.fine), &s.space).unwrap();
                assert!(m.values.iter().all(|x| x.abs() < 1e-9), "T={t:?} ell={ell}");
                // zero outside the patch
                let closure = s.space.rect_nodes(&patch_rect(&s.space, t, ell).unwrap());
                assert_eq!(c.field.rect, closure);
            }
        }
    }

    #[test]
    fn full_patches_reproduce_global_corrector() {
        let s = setup(2, 5, 1);
        let v = random_field(&s, 2);
        let vl = LocalField::crop(&v, s.space.rect_nodes(&whole_domain(&s.space)));
        let parts: Vec<_> = s
            .space
            .coarse
            .elements()
            .map(|t| element_corrector(&s.space, &s.coeff, t, &vl, full_ell(&s)).unwrap().field)
            .collect();
        let sum = sum_fields(&parts, vl.rect).to_fine_field(s.space.fine);
        let global = global_corrector(&s.space, &s.coeff, &v).unwrap();
        let err = energy(&s, &sum.sub(&global));
        assert!(err <= 1e-8 * energy(&s, &global), "{err}");
    }

    #[test]
    fn zero_source_gives_zero() {
        let s = setup(2, 5, 0);
        let zero = LocalField::zeros(s.space.element_nodes(ElementId::new(1, 1)));
        assert_eq!(corrector_sum(&s.bubbles, &s.coeff, &zero, 2).unwrap().max_abs(), 0.0);
        let vh = CoarseCoeffVector::zeros(s.space.element_count(), s.space.funcs());
        assert_eq!(
            solve_r(&s.space, &s.coeff, &vh, whole_domain(&s.space)).unwrap().max_abs(),
            0.0
        );
    }

    #[test]
    fn ell_zero_is_rejected() {
        let s = setup(2, 5, 0);
        let v = s.bubbles.bubble(ElementId::new(0, 0), 0);
        assert!(element_corrector(&s.space, &s.coeff, ElementId::new(0, 0), &v, 0).is_err());
    }

    #[test]
    fn tail_norms_decay() {
        let s = setup(4, 7, 0);
        let t = ElementId::new(7, 8);
        let b = s.bubbles.stabilized_bubble(t, 0);
        let c = element_corrector(&s.space, &s.coeff, t, &b, 6).unwrap();
        let tails = tail_norms(&s.space, &s.coeff, &c, 4);
        for w in tails.windows(2) {
            assert!(w[1] < w[0], "{tails:?}");
        }
        let ks: Vec<f64> = (1..=4).map(|k| k as f64).collect();
        let ys: Vec<f64> = tails[1..].iter().map(|x| x.ln()).collect();
        assert!(fit_slope(&ks, &ys) < 0.0);
    }

    fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        sxy / sxx
    }

    #[test]
    fn localization_error_decreases_with_ell() {
        let s = setup(4, 7, 0);
        let v = random_field(&s, 5);
        let vl = LocalField::crop(&v, s.space.rect_nodes(&whole_domain(&s.space)));
        // a handful of elements keeps the runtime small
        let ts = [ElementId::new(3, 4), ElementId::new(10, 9)];
        let full: Vec<_> = ts
            .iter()
            .map(|&t| element_corrector(&s.space, &s.coeff, t, &vl, 16).unwrap().field)
            .collect();
        let mut prev = f64::INFINITY;
        for ell in 1..=4 {
            let parts: Vec<_> = ts
                .iter()
                .map(|&t| element_corrector(&s.space, &s.coeff, t, &vl, ell).unwrap().field)
                .collect();
            let d = sum_fields(&full, vl.rect).to_fine_field(s.space.fine).sub(&sum_fields(&parts, vl.rect).to_fine_field(s.space.fine));
            let e = energy(&s, &d);
            assert!(e < prev, "ell={ell}: {e} vs {prev}");
            prev = e;
        }
    }

    #[test]
    fn global_corrector_is_a_orthogonal_to_fine_scales() {
        let s = setup(2, 5, 1);
        let t = ElementId::new(1, 2);
        let b = s.bubbles.bubble(t, 0).to_fine_field(s.space.fine);
        let cb = global_corrector(&s.space, &s.coeff, &b).unwrap();
        let phi = b.sub(&cb);
        let all = s.space.rect_nodes(&whole_domain(&s.space));
        let phl = LocalField::crop(&phi, all);
        for seed in 0..20 {
            let v = random_field(&s, 100 + seed);
            let w = v.sub(&s.bubbles.apply_bh(&v).unwrap());
            let wl = LocalField::crop(&w, all);
            let lhs = energy_product_local(&s.coeff, &phl, &wl).abs();
            assert!(lhs <= 1e-8 * energy(&s, &b) * energy(&s, &w), "{lhs}");
        }
    }

    #[test]
    fn element_energy_bound() {
        let s = setup(3, 6, 1);
        let v = random_field(&s, 9);
        let vl = LocalField::crop(&v, s.space.rect_nodes(&whole_domain(&s.space)));
        let ratio = s.coeff.beta / s.coeff.alpha;
        for t in [ElementId::new(0, 0), ElementId::new(4, 3)] {
            let c = element_corrector(&s.space, &s.coeff, t, &vl, 2).unwrap();
            let unit = FineCoefficient {
                cells: vec![1.0; s.coeff.cells.len()],
                ..s.coeff.clone()
            };
            let grad_c = local_energy(&unit, &c.field, whole_domain(&s.space).refine(s.space.ratio())).sqrt();
            let grad_v = local_energy(&unit, &vl, CellRect::of_element(t).refine(s.space.ratio())).sqrt();
            assert!(grad_c <= ratio * grad_v, "{grad_c} vs {}", ratio * grad_v);
        }
    }

    #[test]
    fn global_r_equals_corrected_bubbles() {
        let s = setup(2, 5, 1);
        let mut rng = SplitMix64::new(3);
        let mut vh = CoarseCoeffVector::zeros(s.space.element_count(), s.space.funcs());
        vh.values.iter_mut().for_each(|x| *x = rng.next_f64() - 0.5);
        let rv = solve_r(&s.space, &s.coeff, &vh, whole_domain(&s.space)).unwrap().to_fine_field(s.space.fine);
        let m = project_l2(&rv, &s.space).unwrap();
        assert!(m.max_abs_diff(&vh) < 1e-9);
        let b = s.bubbles.apply_bh_coeffs(&vh).unwrap();
        let other = b.sub(&global_corrector(&s.space, &s.coeff, &b).unwrap());
        assert!(energy(&s, &rv.sub(&other)) <= 1e-8 * energy(&s, &rv));
    }

    #[test]
    fn solve_r_rejects_data_outside_region() {
        let s = setup(2, 5, 0);
        let vh = CoarseCoeffVector::unit(s.space.element_count(), 1, 0, 0);
        let region = CellRect::of_element(ElementId::new(3, 3));
        assert!(solve_r(&s.space, &s.coeff, &vh, region).is_err());
    }

    #[test]
    fn patch_restriction_consistency() {
        let s = setup(3, 6, 0);
        let t = ElementId::new(3, 4);
        let b = s.bubbles.stabilized_bubble(t, 0);
        let c2 = element_corrector(&s.space, &s.coeff, t, &b, 2).unwrap();
        let c3 = element_corrector(&s.space, &s.coeff, t, &b, 3).unwrap();
        let c8 = element_corrector(&s.space, &s.coeff, t, &b, 8).unwrap();
        let inner = CellRect::of_element(t).grow(1, &s.space.coarse).refine(s.space.ratio());
        let d23 = sum_fields(std::slice::from_ref(&c3.field), c2.field.rect);
        let mut diff = d23.clone();
        diff.add_scaled(-1.0, &c2.field);
        let change = local_energy(&s.coeff, &diff, inner).sqrt();
        let mut loc = sum_fields(std::slice::from_ref(&c8.field), c2.field.rect);
        loc.add_scaled(-1.0, &c2.field.extended(loc.rect));
        let scale = local_energy(&s.coeff, &loc, whole_domain(&s.space).refine(s.space.ratio())).sqrt();
        assert!(change <= scale * (1.0 + 1e-9), "{change} vs {scale}");
    }
}
