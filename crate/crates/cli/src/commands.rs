//! Subcommand implementations, independent of argument parsing.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use lod_core::method::{basis_function, build_basis};
use lod_core::{
    coarse_solve, evaluate_errors, gen_a1, gen_a2, load_coefficient, save_coefficient, CartesianMesh,
    CoarseSpace, CoefficientField, ElementId, FineField, FineProblem, LodContext, LodError, MethodKind,
};

use crate::config::{EllChoice, ExperimentConfig, Family, Rhs};
use crate::dump::{FieldDump, FieldKind};

pub const CSV_HEADER: &str =
    "method,p,ell,H,fine_h,err_energy_rel,err_l2_rel,coarse_dofs,corrector_solves,wall_ms,seed";
pub const DECAY_HEADER: &str = "p,ell,err_energy_rel";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(LodError),
    /// Some rows failed; the CSV holds a failure row for each.
    Failed(usize),
}

impl CliError {
    /// 2 for usage errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(LodError::Argument(_) | LodError::Validation(_) | LodError::Parse { .. }) => 2,
            CliError::Core(_) | CliError::Failed(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Failed(n) => write!(f, "{n} run(s) failed"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<LodError> for CliError {
    fn from(e: LodError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(LodError::Io(e))
    }
}

impl From<crate::config::ConfigError> for CliError {
    fn from(e: crate::config::ConfigError) -> Self {
        CliError::Usage(e.0)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: MethodKind,
    pub p: usize,
    pub ell: usize,
    pub h: f64,
    pub fine_h: f64,
    pub err_energy_rel: f64,
    pub err_l2_rel: f64,
    pub coarse_dofs: usize,
    pub corrector_solves: usize,
    pub wall_ms: u128,
    pub seed: u64,
}

impl ResultRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{:e},{:e},{},{},{},{}",
            self.method,
            self.p,
            self.ell,
            self.h,
            self.fine_h,
            self.err_energy_rel,
            self.err_l2_rel,
            self.coarse_dofs,
            self.corrector_solves,
            self.wall_ms,
            self.seed
        )
    }

    pub fn failed(&self) -> bool {
        self.err_energy_rel.is_nan()
    }
}

/// Coefficient from the configured file or generator.
pub fn coefficient(cfg: &ExperimentConfig) -> CliResult<CoefficientField> {
    Ok(match &cfg.coefficient_file {
        Some(path) => load_coefficient(path)?,
        None => match cfg.family {
            Family::A1 => gen_a1(cfg.seed, cfg.coefficient_level)?,
            Family::A2 => gen_a2(cfg.seed, cfg.coefficient_level)?,
        },
    })
}

fn forcing(mesh: CartesianMesh, rhs: Rhs) -> FineField {
    FineField::from_fn(mesh, |x, y| rhs.eval(x, y))
}

/// Shared fine data for a study.
pub struct Study {
    pub problem: FineProblem,
    pub f: FineField,
    pub reference: FineField,
}

impl Study {
    pub fn new(cfg: &ExperimentConfig, rhs: Rhs) -> CliResult<Self> {
        let a = coefficient(cfg)?;
        let fine = CartesianMesh::new(cfg.fine_level)?;
        let problem = FineProblem::new(&a, fine)?;
        let f = forcing(fine, rhs);
        let reference = problem.solve(&f)?;
        Ok(Self { problem, f, reference })
    }

    pub fn context(&self, coarse_level: u32, p: usize) -> CliResult<LodContext> {
        let space = CoarseSpace::from_levels(coarse_level, self.problem.mesh().level(), p)?;
        Ok(LodContext::with_problem(space, self.problem.clone())?)
    }
}

/// Builds and solves one configuration; the returned row carries NaN errors on failure.
pub fn run_one(
    study: &Study,
    ctx: &LodContext,
    method: MethodKind,
    ell: usize,
    seed: u64,
) -> (ResultRow, Option<LodError>, Option<FineField>) {
    let start = Instant::now();
    let ell = match method {
        MethodKind::Prototype => ctx.full_ell(),
        MethodKind::Fem => 0,
        _ => ell,
    };
    let mut row = ResultRow {
        method,
        p: if method == MethodKind::Fem { 1 } else { ctx.p() },
        ell,
        h: ctx.space.coarse.h(),
        fine_h: ctx.space.fine.h(),
        err_energy_rel: f64::NAN,
        err_l2_rel: f64::NAN,
        coarse_dofs: match method {
            MethodKind::Fem => (ctx.space.coarse.n() - 1).pow(2),
            _ => ctx.space.dim(),
        },
        corrector_solves: 0,
        wall_ms: 0,
        seed,
    };
    let result = build_basis(ctx, method, ell).and_then(|basis| {
        row.corrector_solves = basis.corrector_solves;
        coarse_solve(ctx, &basis, &study.f)
    });
    row.wall_ms = start.elapsed().as_millis();
    match result.and_then(|sol| Ok((evaluate_errors(ctx, &sol.field, &study.reference)?, sol))) {
        Ok((err, sol)) => {
            row.err_energy_rel = err.energy_rel;
            row.err_l2_rel = err.l2_rel;
            (row, None, Some(sol.field))
        }
        Err(e) => (row, Some(e), None),
    }
}

fn failure_row(cfg: &ExperimentConfig, method: MethodKind, p: usize, ell: usize, level: u32) -> ResultRow {
    let n = 1usize << level;
    let funcs = (p + 1) * (p + 1);
    ResultRow {
        method,
        p,
        ell,
        h: 1.0 / n as f64,
        fine_h: 1.0 / (1u64 << cfg.fine_level) as f64,
        err_energy_rel: f64::NAN,
        err_l2_rel: f64::NAN,
        coarse_dofs: if method == MethodKind::Fem { (n - 1).pow(2) } else { n * n * funcs },
        corrector_solves: 0,
        wall_ms: 0,
        seed: cfg.seed,
    }
}

/// Convergence study: one row per `(p, coarse level, ell, method)`, written as produced.
pub fn convergence(cfg: &ExperimentConfig, out: &mut dyn Write) -> CliResult<Vec<ResultRow>> {
    let study = Study::new(cfg, cfg.rhs)?;
    writeln!(out, "{CSV_HEADER}")?;
    out.flush()?;
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    let mut failures = 0;
    for &p in &cfg.p {
        for &level in &cfg.coarse_levels {
            let ctx = study.context(level, p);
            for choice in &cfg.ell {
                for &method in &cfg.methods {
                    let ell = match (&ctx, method) {
                        (Ok(c), MethodKind::Prototype) => c.full_ell(),
                        (Err(_), MethodKind::Prototype) => 2 << level,
                        (_, MethodKind::Fem) => 0,
                        _ => choice.resolve(p, level),
                    };
                    if !seen.insert((method.name(), p, level, ell)) {
                        continue;
                    }
                    let (row, err) = match &ctx {
                        Ok(c) => {
                            let (row, err, _) = run_one(&study, c, method, ell, cfg.seed);
                            (row, err.map(|e| e.to_string()))
                        }
                        Err(e) => (failure_row(cfg, method, p, ell, level), Some(e.to_string())),
                    };
                    if let Some(e) = err {
                        eprintln!("{method} p={p} H=2^-{level} ell={ell}: {e}");
                        failures += 1;
                    }
                    writeln!(out, "{}", row.to_csv())?;
                    out.flush()?;
                    rows.push(row);
                }
            }
        }
    }
    if failures > 0 {
        return Err(CliError::Failed(failures));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayRow {
    pub p: usize,
    pub ell: usize,
    pub err_energy_rel: f64,
}

/// Localization study at `H = 2^-decay_level` with `f = 1`: s`p`-LOD against
/// its own whole-domain solution.
pub fn decay(cfg: &ExperimentConfig, ells: &[EllChoice], out: &mut dyn Write) -> CliResult<Vec<DecayRow>> {
    let study = Study::new(cfg, Rhs::One)?;
    writeln!(out, "{DECAY_HEADER}")?;
    let level = cfg.decay_level;
    let mut rows = Vec::new();
    for &p in &cfg.p {
        let ctx = study.context(level, p)?;
        let full = coarse_solve(&ctx, &build_basis(&ctx, MethodKind::Prototype, 0)?, &study.f)?;
        for choice in ells {
            let ell = choice.resolve(p, level);
            let sol = coarse_solve(&ctx, &build_basis(&ctx, MethodKind::Splod, ell)?, &study.f)?;
            let err = evaluate_errors(&ctx, &sol.field, &full.field)?;
            let row = DecayRow {
                p,
                ell,
                err_energy_rel: err.energy_rel,
            };
            writeln!(out, "{},{},{:e}", row.p, row.ell, row.err_energy_rel)?;
            out.flush()?;
            rows.push(row);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportWhat {
    Basis,
    Bubble,
    Coefficient,
    Solution,
}

impl std::str::FromStr for ExportWhat {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Ok(match s {
            "basis" => ExportWhat::Basis,
            "bubble" => ExportWhat::Bubble,
            "coefficient" => ExportWhat::Coefficient,
            "solution" => ExportWhat::Solution,
            _ => {
                return Err(CliError::Usage(format!(
                    "unknown export selector '{s}' (expected basis, bubble, coefficient or solution)"
                )))
            }
        })
    }
}

/// Which object to export; coarse level, `p`, `ell` and method come from the config.
#[derive(Debug, Clone, Copy)]
pub struct ExportRequest {
    pub what: ExportWhat,
    pub element: (usize, usize),
    pub index: usize,
}

fn node_dump(kind: FieldKind, ctx: &LodContext, req: &ExportRequest, field: &FineField) -> FieldDump {
    let n = ctx.space.fine.nodes_per_side() as u32;
    FieldDump {
        kind,
        coarse_level: ctx.space.coarse.level(),
        fine_level: ctx.space.fine.level(),
        element: (req.element.0 as u32, req.element.1 as u32),
        index: req.index as u32,
        p: ctx.p() as u32,
        rows: n,
        cols: n,
        values: field.values().to_vec(),
    }
}

pub fn export(cfg: &ExperimentConfig, req: &ExportRequest, path: &Path) -> CliResult<FieldDump> {
    let a = coefficient(cfg)?;
    let dump = if req.what == ExportWhat::Coefficient {
        let n = 1u32 << a.level();
        FieldDump {
            kind: FieldKind::Coefficient,
            coarse_level: 0,
            fine_level: a.level(),
            element: (0, 0),
            index: 0,
            p: 0,
            rows: n,
            cols: n,
            values: a.cells().to_vec(),
        }
    } else {
        let level = cfg.coarse_levels[0];
        let p = cfg.p[0];
        let fine = CartesianMesh::new(cfg.fine_level)?;
        let space = CoarseSpace::from_levels(level, cfg.fine_level, p)?;
        let t = ElementId::new(req.element.0, req.element.1);
        match req.what {
            ExportWhat::Bubble => {
                space.coarse.check_element(t)?;
                if req.index >= space.funcs() {
                    return Err(CliError::Usage(format!("Legendre index {} out of range", req.index)));
                }
                let bubbles = lod_core::BubbleSet::new(&space)?;
                let ctx_like = bubbles.bubble(t, req.index).to_fine_field(fine);
                FieldDump {
                    kind: FieldKind::Bubble,
                    coarse_level: level,
                    fine_level: cfg.fine_level,
                    element: (t.i as u32, t.j as u32),
                    index: req.index as u32,
                    p: p as u32,
                    rows: fine.nodes_per_side() as u32,
                    cols: fine.nodes_per_side() as u32,
                    values: ctx_like.into_values(),
                }
            }
            ExportWhat::Basis => {
                let ctx = LodContext::with_problem(space, FineProblem::new(&a, fine)?)?;
                let method = cfg.methods[0];
                let ell = cfg.ell[0].resolve(p, level);
                let f = basis_function(&ctx, method, t, req.index, ell)?.to_fine_field(fine);
                node_dump(FieldKind::Basis, &ctx, req, &f)
            }
            ExportWhat::Solution => {
                let study = Study::new(cfg, cfg.rhs)?;
                let ctx = study.context(level, p)?;
                let method = cfg.methods[0];
                let (_, err, field) = run_one(&study, &ctx, method, cfg.ell[0].resolve(p, level), cfg.seed);
                if let Some(e) = err {
                    return Err(e.into());
                }
                node_dump(FieldKind::Solution, &ctx, req, &field.expect("solved"))
            }
            ExportWhat::Coefficient => unreachable!(),
        }
    };
    dump.write(path)?;
    Ok(dump)
}

pub fn gen_coefficient(family: Family, seed: u64, level: u32, path: &Path) -> CliResult<CoefficientField> {
    let a = match family {
        Family::A1 => gen_a1(seed, level)?,
        Family::A2 => gen_a2(seed, level)?,
    };
    save_coefficient(&a, path)?;
    Ok(a)
}

/// Single solve for the first configured method, `p`, coarse level and `ell`.
pub fn solve(cfg: &ExperimentConfig, dump: Option<&Path>) -> CliResult<ResultRow> {
    let study = Study::new(cfg, cfg.rhs)?;
    let (level, p) = (cfg.coarse_levels[0], cfg.p[0]);
    let ctx = study.context(level, p)?;
    let (row, err, field) = run_one(&study, &ctx, cfg.methods[0], cfg.ell[0].resolve(p, level), cfg.seed);
    if let Some(e) = err {
        return Err(e.into());
    }
    if let Some(path) = dump {
        let req = ExportRequest {
            what: ExportWhat::Solution,
            element: (0, 0),
            index: 0,
        };
        node_dump(FieldKind::Solution, &ctx, &req, &field.expect("solved")).write(path)?;
    }
    Ok(row)
}
