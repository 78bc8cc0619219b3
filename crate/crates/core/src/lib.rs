//! Stabilized high-order localized orthogonal decomposition (sp-LOD) for
//! scalar elliptic problems with rough coefficients on the unit square.

pub mod coefficients;
pub mod correctors;
pub mod error;
pub mod fem;
pub mod linalg;
pub mod mesh;
pub mod method;
pub mod operators;
pub mod poly;

pub use error::{LodError, Result};
pub use coefficients::{gen_a1, gen_a2, load_coefficient, save_coefficient, CoefficientField};
pub use correctors::{element_corrector, global_corrector, solve_r, CorrectorField, PatchSolver};
pub use fem::{FineField, FineProblem, LocalField};
pub use mesh::{CartesianMesh, CellRect, ElementId, NodeRect};
pub use method::{
    build_basis, coarse_solve, ell_rule, evaluate_errors, ErrorRecord, LodContext, MethodKind, MultiscaleBasis,
    MultiscaleSolution,
};
pub use operators::BubbleSet;
pub use poly::{CoarseCoeffVector, CoarseSpace};
