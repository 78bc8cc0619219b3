//! Multiscale bases and the coarse Galerkin solve.
//!
//! Four bases share one solve path:
//! - `Splod`: `(1 - C^ell) P_H b_{j,T}`;
//! - `Plod`: `R e_{j,T}` on the patch `N^ell(T)`;
//! - `Prototype`: the s`p`-LOD basis with patches covering the domain;
//! - `Fem`: plain coarse Q1 hats, used as a reference point.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::coefficients::CoefficientField;
use crate::correctors::{active_elements, patch_rect, whole_domain, PatchSolver};
use crate::error::{LodError, Result};
use crate::fem::{apply_stiffness_local, FineCoefficient, FineField, FineProblem, LocalField};
use crate::linalg::{BandCholesky, SparseMatrix};
use crate::mesh::{CellRect, ElementId, NodeRect};
use crate::operators::{union_rect, BubbleSet};
use crate::poly::{CoarseCoeffVector, CoarseSpace};

/// Largest accepted condition estimate of the coarse stiffness matrix.
pub const MAX_COARSE_CONDITION: f64 = 1e14;

/// Patches handled per parallel batch; fixed so results do not depend on the thread count.
const BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MethodKind {
    Prototype,
    Plod,
    Splod,
    Fem,
}

impl MethodKind {
    pub fn name(&self) -> &'static str {
        match self {
            MethodKind::Prototype => "prototype",
            MethodKind::Plod => "plod",
            MethodKind::Splod => "splod",
            MethodKind::Fem => "fem",
        }
    }
}

impl std::str::FromStr for MethodKind {
    type Err = LodError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prototype" => Ok(MethodKind::Prototype),
            "plod" => Ok(MethodKind::Plod),
            "splod" => Ok(MethodKind::Splod),
            "fem" => Ok(MethodKind::Fem),
            other => Err(LodError::arg(format!(
                "unknown method '{other}' (expected splod, plod, prototype or fem)"
            ))),
        }
    }
}

impl std::fmt::Display for MethodKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Shared immutable data for one coefficient and one pair of meshes.
#[derive(Debug, Clone)]
pub struct LodContext {
    pub space: CoarseSpace,
    pub bubbles: BubbleSet,
    pub problem: FineProblem,
}

impl LodContext {
    pub fn new(a: &CoefficientField, coarse_level: u32, fine_level: u32, p: usize) -> Result<Self> {
        let space = CoarseSpace::from_levels(coarse_level, fine_level, p)?;
        Self::with_problem(space, FineProblem::new(a, crate::mesh::CartesianMesh::new(fine_level)?)?)
    }

    /// Reuses an assembled fine problem, e.g. across coarse levels.
    pub fn with_problem(space: CoarseSpace, problem: FineProblem) -> Result<Self> {
        if problem.mesh() != space.fine {
            return Err(LodError::arg("fine problem and coarse space use different fine meshes"));
        }
        Ok(Self {
            bubbles: BubbleSet::new(&space)?,
            space,
            problem,
        })
    }

    pub fn coeff(&self) -> &FineCoefficient {
        &self.problem.coeff
    }

    pub fn p(&self) -> usize {
        self.space.basis.degree()
    }

    /// Patch order that makes every patch the whole domain.
    pub fn full_ell(&self) -> usize {
        2 * self.space.coarse.n()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisFunction {
    pub center: ElementId,
    /// Legendre index for LOD bases; 0 for coarse hats.
    pub index: usize,
    pub field: LocalField,
}

#[derive(Debug, Clone)]
pub struct MultiscaleBasis {
    pub method: MethodKind,
    pub p: usize,
    pub ell: usize,
    pub functions: Vec<BasisFunction>,
    pub corrector_solves: usize,
}

impl MultiscaleBasis {
    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    /// Basis function of `(T, j)`, for the element-indexed bases.
    pub fn get(&self, space: &CoarseSpace, t: ElementId, j: usize) -> Option<&BasisFunction> {
        if self.method == MethodKind::Fem {
            return None;
        }
        self.functions.get(space.coarse.cell_index(t) * space.funcs() + j)
    }
}

/// Patch order coupled to the coarse level: `ceil((p + 2) L / 3)`.
pub fn ell_rule(p: usize, coarse_level: u32) -> usize {
    ((p + 2) * coarse_level as usize).div_ceil(3).max(1)
}

/// Solves `g_s - sum_K C_K^ell g_s` for sources `g_s`, where `K` runs over the
/// elements touching the support of `g_s`.
fn correct_sources(ctx: &LodContext, sources: &[LocalField], ell: usize) -> Result<(Vec<LocalField>, usize)> {
    let space = &ctx.space;
    let coeff = ctx.coeff();
    // K -> sources it acts on, and K grouped by patch rectangle
    let mut by_element: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (s, g) in sources.iter().enumerate() {
        for k in active_elements(&ctx.bubbles, g) {
            by_element.entry(space.coarse.cell_index(k)).or_default().push(s);
        }
    }
    let mut groups: BTreeMap<CellRect, Vec<usize>> = BTreeMap::new();
    for &k in by_element.keys() {
        groups
            .entry(patch_rect(space, space.coarse.element(k), ell)?)
            .or_default()
            .push(k);
    }
    let groups: Vec<(CellRect, Vec<usize>)> = groups.into_iter().collect();

    let mut out: Vec<LocalField> = sources
        .iter()
        .enumerate()
        .map(|(s, g)| {
            let rect = by_element
                .iter()
                .filter(|(_, srcs)| srcs.contains(&s))
                .fold(g.rect, |acc, (&k, _)| {
                    let pr = patch_rect(space, space.coarse.element(k), ell).expect("valid element");
                    union_rect(&acc, &space.rect_nodes(&pr))
                });
            g.extended(rect)
        })
        .collect();
    let mut solves = 0;
    for batch in groups.chunks(BATCH) {
        let results: Vec<Result<Vec<(usize, usize, LocalField)>>> = batch
            .par_iter()
            .map(|(rect, elements)| {
                let solver = PatchSolver::new(space, coeff, *rect)?;
                let mut res = Vec::new();
                for &k in elements {
                    let t = space.coarse.element(k);
                    for &s in &by_element[&k] {
                        let c = solver.element_corrector(coeff, t, &sources[s]).map_err(|e| {
                            e.annotate(format!("corrector on K = ({}, {}), ell = {ell}", t.i, t.j))
                        })?;
                        res.push((k, s, c));
                    }
                }
                Ok(res)
            })
            .collect();
        let mut merged = Vec::new();
        for r in results {
            merged.extend(r?);
        }
        merged.sort_by_key(|(k, s, _)| (*k, *s));
        for (_, s, c) in merged {
            out[s].add_scaled(-1.0, &c);
            solves += 1;
        }
    }
    Ok((out, solves))
}

fn element_sources(ctx: &LodContext) -> Vec<(ElementId, usize)> {
    let nf = ctx.space.funcs();
    ctx.space
        .coarse
        .elements()
        .flat_map(|t| (0..nf).map(move |j| (t, j)))
        .collect()
}

/// s`p`-LOD basis `(1 - C^ell) P_H b_{j,T}`.
pub fn build_basis_splod(ctx: &LodContext, ell: usize) -> Result<MultiscaleBasis> {
    build_corrected(ctx, ell, MethodKind::Splod)
}

/// Ideal basis: element correctors on the whole domain.
pub fn build_basis_prototype(ctx: &LodContext) -> Result<MultiscaleBasis> {
    build_corrected(ctx, ctx.full_ell(), MethodKind::Prototype)
}

fn build_corrected(ctx: &LodContext, ell: usize, method: MethodKind) -> Result<MultiscaleBasis> {
    if ell == 0 {
        return Err(LodError::arg("patch order ell must be at least 1"));
    }
    let ids = element_sources(ctx);
    let sources: Vec<LocalField> = ids
        .iter()
        .map(|&(t, j)| ctx.bubbles.stabilized_bubble(t, j))
        .collect();
    let (fields, corrector_solves) = correct_sources(ctx, &sources, ell)?;
    Ok(MultiscaleBasis {
        method,
        p: ctx.p(),
        ell,
        functions: ids
            .into_iter()
            .zip(fields)
            .map(|((center, index), field)| BasisFunction { center, index, field })
            .collect(),
        corrector_solves,
    })
}

/// `(1 - C^ell) b_{j,T}` without the stabilising projection.
pub fn build_basis_bubble_corrected(ctx: &LodContext, ell: usize) -> Result<MultiscaleBasis> {
    let ids = element_sources(ctx);
    let sources: Vec<LocalField> = ids.iter().map(|&(t, j)| ctx.bubbles.bubble(t, j)).collect();
    let (fields, corrector_solves) = correct_sources(ctx, &sources, ell)?;
    Ok(MultiscaleBasis {
        method: MethodKind::Prototype,
        p: ctx.p(),
        ell,
        functions: ids
            .into_iter()
            .zip(fields)
            .map(|((center, index), field)| BasisFunction { center, index, field })
            .collect(),
        corrector_solves,
    })
}

/// p-LOD basis `R e_{j,T}` with the constraints of all coarse cells in `N^ell(T)`.
pub fn build_basis_plod(ctx: &LodContext, ell: usize) -> Result<MultiscaleBasis> {
    if ell == 0 {
        return Err(LodError::arg("patch order ell must be at least 1"));
    }
    let space = &ctx.space;
    let nf = space.funcs();
    let elements: Vec<ElementId> = space.coarse.elements().collect();
    let mut groups: BTreeMap<CellRect, Vec<ElementId>> = BTreeMap::new();
    for &t in &elements {
        groups.entry(patch_rect(space, t, ell)?).or_default().push(t);
    }
    let groups: Vec<(CellRect, Vec<ElementId>)> = groups.into_iter().collect();
    let mut slots: Vec<Option<LocalField>> = vec![None; elements.len() * nf];
    let mut solves = 0;
    for batch in groups.chunks(BATCH) {
        let results: Vec<Result<Vec<(usize, LocalField)>>> = batch
            .par_iter()
            .map(|(rect, ts)| {
                let solver = PatchSolver::new(space, ctx.coeff(), *rect)?;
                let mut res = Vec::new();
                for &t in ts {
                    let idx = space.coarse.cell_index(t);
                    for j in 0..nf {
                        let e = CoarseCoeffVector::unit(space.element_count(), nf, idx, j);
                        let f = solver.constrained_minimizer(&e, space).map_err(|err| {
                            err.annotate(format!("p-LOD basis T = ({}, {}), j = {j}, ell = {ell}", t.i, t.j))
                        })?;
                        res.push((idx * nf + j, f));
                    }
                }
                Ok(res)
            })
            .collect();
        for r in results {
            for (slot, f) in r? {
                slots[slot] = Some(f);
                solves += 1;
            }
        }
    }
    let functions = slots
        .into_iter()
        .enumerate()
        .map(|(a, f)| BasisFunction {
            center: space.coarse.element(a / nf),
            index: a % nf,
            field: f.expect("every slot solved"),
        })
        .collect();
    Ok(MultiscaleBasis {
        method: MethodKind::Plod,
        p: ctx.p(),
        ell,
        functions,
        corrector_solves: solves,
    })
}

/// A single basis function `(T, j)` of an element-indexed basis.
pub fn basis_function(ctx: &LodContext, method: MethodKind, t: ElementId, j: usize, ell: usize) -> Result<LocalField> {
    ctx.space.coarse.check_element(t)?;
    if j >= ctx.space.funcs() {
        return Err(LodError::arg(format!("Legendre index {j} out of range for p = {}", ctx.p())));
    }
    let ell = if method == MethodKind::Prototype { ctx.full_ell() } else { ell };
    if ell == 0 {
        return Err(LodError::arg("patch order ell must be at least 1"));
    }
    match method {
        MethodKind::Splod | MethodKind::Prototype => {
            let (mut f, _) = correct_sources(ctx, &[ctx.bubbles.stabilized_bubble(t, j)], ell)?;
            Ok(f.pop().expect("one source"))
        }
        MethodKind::Plod => {
            let solver = PatchSolver::new(&ctx.space, ctx.coeff(), patch_rect(&ctx.space, t, ell)?)?;
            let e = CoarseCoeffVector::unit(
                ctx.space.element_count(),
                ctx.space.funcs(),
                ctx.space.coarse.cell_index(t),
                j,
            );
            solver.constrained_minimizer(&e, &ctx.space)
        }
        MethodKind::Fem => Err(LodError::arg("the fem basis is indexed by coarse nodes, not elements")),
    }
}

/// Coarse Q1 hats at the interior coarse nodes, interpolated on the fine mesh.
pub fn build_basis_fem(ctx: &LodContext) -> MultiscaleBasis {
    let coarse = ctx.space.coarse;
    let r = ctx.space.ratio();
    let mut functions = Vec::new();
    for j in 1..coarse.n() {
        for i in 1..coarse.n() {
            let rect = NodeRect {
                i0: (i - 1) * r,
                j0: (j - 1) * r,
                nx: 2 * r + 1,
                ny: 2 * r + 1,
            };
            let hat = |t: usize| 1.0 - (t as f64 / r as f64 - 1.0).abs();
            let values = (0..rect.len()).map(|z| hat(z % rect.nx) * hat(z / rect.nx)).collect();
            functions.push(BasisFunction {
                center: ElementId::new(i, j),
                index: 0,
                field: LocalField { rect, values },
            });
        }
    }
    MultiscaleBasis {
        method: MethodKind::Fem,
        p: 1,
        ell: 0,
        functions,
        corrector_solves: 0,
    }
}

/// Builds the basis of `method`; `ell` is ignored for `Prototype` and `Fem`.
pub fn build_basis(ctx: &LodContext, method: MethodKind, ell: usize) -> Result<MultiscaleBasis> {
    match method {
        MethodKind::Splod => build_basis_splod(ctx, ell),
        MethodKind::Plod => build_basis_plod(ctx, ell),
        MethodKind::Prototype => build_basis_prototype(ctx),
        MethodKind::Fem => Ok(build_basis_fem(ctx)),
    }
}

#[derive(Debug, Clone)]
pub struct MultiscaleSolution {
    pub method: MethodKind,
    pub p: usize,
    pub ell: usize,
    pub coefficients: Vec<f64>,
    pub field: FineField,
    pub condition: f64,
    /// `||G c - F|| / ||F||`.
    pub residual: f64,
}

/// Coarse stiffness `G_ab = a(phi_a, phi_b)`.
pub fn coarse_matrix(ctx: &LodContext, basis: &MultiscaleBasis) -> SparseMatrix {
    let coeff = ctx.coeff();
    let fns = &basis.functions;
    let kphi: Vec<LocalField> = fns.par_iter().map(|f| apply_stiffness_local(coeff, &f.field)).collect();
    let rows: Vec<Vec<(usize, usize, f64)>> = (0..fns.len())
        .into_par_iter()
        .map(|a| {
            let ka = &kphi[a];
            (0..fns.len())
                .filter(|&b| ka.rect.intersect(&fns[b].field.rect).is_some())
                .map(|b| (a, b, ka.nodal_dot(&fns[b].field)))
                .filter(|&(_, _, v)| v != 0.0)
                .collect()
        })
        .collect();
    let n = fns.len();
    let trips: Vec<(usize, usize, f64)> = rows.into_iter().flatten().collect();
    // symmetrize to remove rounding asymmetry
    let g = SparseMatrix::from_triplets(n, n, trips);
    let gt = g.transpose();
    let mut sym = Vec::with_capacity(g.nnz());
    for (r, c, v) in g.triplets() {
        sym.push((r, c, 0.5 * (v + gt.get(r, c))));
    }
    for (r, c, v) in gt.triplets() {
        if g.get(r, c) == 0.0 {
            sym.push((r, c, 0.5 * v));
        }
    }
    SparseMatrix::from_triplets(n, n, sym)
}

/// Galerkin solve in the span of `basis` for the load `(f, .)`.
pub fn coarse_solve(ctx: &LodContext, basis: &MultiscaleBasis, f: &FineField) -> Result<MultiscaleSolution> {
    let expected = match basis.method {
        MethodKind::Fem => (ctx.space.coarse.n() - 1).pow(2),
        _ => ctx.space.dim(),
    };
    if basis.len() != expected {
        return Err(LodError::arg(format!(
            "basis has {} functions, expected {expected}",
            basis.len()
        )));
    }
    let load = FineField::from_values(ctx.space.fine, ctx.problem.load(f))?;
    let rhs: Vec<f64> = basis
        .functions
        .iter()
        .map(|phi| phi.field.nodal_dot(&LocalField::crop(&load, phi.field.rect)))
        .collect();
    let g = coarse_matrix(ctx, basis);
    let chol = BandCholesky::factor(&g).map_err(|_| {
        LodError::numeric(format!(
            "coarse matrix is not positive definite for {} with ell = {}; try a larger ell",
            basis.method, basis.ell
        ))
    })?;
    let condition = chol.condition_estimate();
    if !(condition <= MAX_COARSE_CONDITION) {
        return Err(LodError::numeric(format!(
            "coarse matrix condition estimate {condition:.3e} exceeds {MAX_COARSE_CONDITION:.0e}; try a larger ell"
        )));
    }
    let coefficients = chol.solve(&rhs);
    let gc = g.matvec(&coefficients);
    let rn = crate::linalg::norm2(&rhs);
    let residual = if rn > 0.0 {
        crate::linalg::norm2(&gc.iter().zip(&rhs).map(|(a, b)| a - b).collect::<Vec<_>>()) / rn
    } else {
        0.0
    };
    let mut field = FineField::zeros(ctx.space.fine);
    for (c, phi) in coefficients.iter().zip(&basis.functions) {
        phi.field.add_to(*c, &mut field);
    }
    Ok(MultiscaleSolution {
        method: basis.method,
        p: basis.p,
        ell: basis.ell,
        coefficients,
        field,
        condition,
        residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRecord {
    pub energy_abs: f64,
    pub energy_rel: f64,
    pub l2_abs: f64,
    pub l2_rel: f64,
}

/// Relative energy and L2 errors of `u` against `u_ref`.
pub fn evaluate_errors(ctx: &LodContext, u: &FineField, u_ref: &FineField) -> Result<ErrorRecord> {
    if u.level() != u_ref.level() || u.level() != ctx.space.fine.level() {
        return Err(LodError::arg("solutions live on different fine meshes"));
    }
    let e_ref = ctx.problem.energy_norm(u_ref)?;
    if e_ref == 0.0 {
        return Err(LodError::arg("reference solution has zero energy norm"));
    }
    let l_ref = ctx.problem.l2_norm(u_ref)?;
    let d = u_ref.sub(u);
    let energy_abs = ctx.problem.energy_norm(&d)?;
    let l2_abs = ctx.problem.l2_norm(&d)?;
    Ok(ErrorRecord {
        energy_abs,
        energy_rel: energy_abs / e_ref,
        l2_abs,
        l2_rel: l2_abs / l_ref,
    })
}

/// Least-squares slope of `-log(err)` against `log(1/H)`.
pub fn fitted_order(h: &[f64], err: &[f64]) -> f64 {
    let x: Vec<f64> = h.iter().map(|v| -v.ln()).collect();
    let y: Vec<f64> = err.iter().map(|v| -v.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Convenience: the full region as patch for `solve_r`.
pub fn full_region(ctx: &LodContext) -> CellRect {
    whole_domain(&ctx.space)
}
