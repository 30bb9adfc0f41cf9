//! Benchmark cases with exact solutions, run orchestration and report files.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_8};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{Point2, Vector2};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::adaptivity::{adapt_loop, uniform_sequence, AdaptConfig, Analysis, ExactReference, GoalProblem, SingularSetup};
use crate::elasticity::{equilibrium_residual, finite_difference_gradient, traction_projection, MaterialModel, UnitNormal};
use crate::error::{Error, Result};
use crate::estimators::CSV_HEADER;
use crate::exact::{lshape_solution, LameCylinder, ReferenceSolution};
use crate::fem::{DirichletSet, LoadSet, Prescribed};
use crate::geometry::{tags, GeometryMap};
use crate::mesh::{build_initial_mesh, QuadtreeMesh, Region};
use crate::qoi::{evaluate_qoi, QoiKind, QuantityOfInterest, QOI_ORDER};
use crate::quadrature::gauss_legendre;
use crate::singular::{CornerConfig, ExtractionDomain, GsifExtractor, Mode};
use crate::spr::{RecoveryMode, RecoveryOptions};

pub const YOUNGS_MODULUS: f64 = 1000.0;
pub const POISSON_RATIO: f64 = 0.3;
pub const CYLINDER_INNER: f64 = 5.0;
pub const CYLINDER_OUTER: f64 = 20.0;
pub const PRESSURE: f64 = 1.0;
pub const LSHAPE_LEG: f64 = 1.0;
pub const EXTRACTION_R1: f64 = 0.6;
pub const EXTRACTION_R2: f64 = 0.8;
/// Annulus for the dual amplitudes, inside the extraction annulus.
pub const DUAL_R1: f64 = 0.2;
pub const DUAL_R2: f64 = 0.4;
/// Patches closer than this to the reentrant corner have the singular part split off.
pub const SPLIT_RADIUS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CaseId {
    Cyl1aMeanUnGammaO,
    Cyl1bMeanUxDomain,
    Cyl1cMeanSxDomain,
    Cyl2MeanTnDirichlet,
    LshapeKI,
    LshapeKII,
}

impl CaseId {
    pub const ALL: [CaseId; 6] = [
        CaseId::Cyl1aMeanUnGammaO,
        CaseId::Cyl1bMeanUxDomain,
        CaseId::Cyl1cMeanSxDomain,
        CaseId::Cyl2MeanTnDirichlet,
        CaseId::LshapeKI,
        CaseId::LshapeKII,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CaseId::Cyl1aMeanUnGammaO => "cyl_1a_mean_un_Gamma_o",
            CaseId::Cyl1bMeanUxDomain => "cyl_1b_mean_ux_domain",
            CaseId::Cyl1cMeanSxDomain => "cyl_1c_mean_sx_domain",
            CaseId::Cyl2MeanTnDirichlet => "cyl_2_mean_tn_dirichlet",
            CaseId::LshapeKI => "lshape_KI",
            CaseId::LshapeKII => "lshape_KII",
        }
    }

    pub fn is_cylinder(self) -> bool {
        !matches!(self, CaseId::LshapeKI | CaseId::LshapeKII)
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CaseId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CaseId::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown case '{s}'")))
    }
}

pub fn material() -> MaterialModel {
    MaterialModel::plane_strain(YOUNGS_MODULUS, POISSON_RATIO).expect("valid constants")
}

/// Pressurised thick cylinder.
pub fn exact_cylinder() -> LameCylinder {
    LameCylinder::pressurised(CYLINDER_INNER, CYLINDER_OUTER, PRESSURE, 0.0, material()).expect("valid cylinder")
}

/// L-shape field with unit mode I and II amplitudes.
pub fn exact_lshape() -> ReferenceSolution {
    lshape_solution(material(), 1.0, 1.0).expect("reentrant corner")
}

/// Angular sector `[π/8, 3π/8]` between radii `a + (b − a)/4` and `a + (b − a)/2`,
/// symmetric about the diagonal; two root cells of the 4×4 cylinder grid.
pub fn cylinder_region(mesh: &QuadtreeMesh) -> Region {
    Region::from_roots([mesh.root_index(1, 1), mesh.root_index(1, 2)])
}

fn region_radii() -> (f64, f64) {
    let d = CYLINDER_OUTER - CYLINDER_INNER;
    (CYLINDER_INNER + 0.25 * d, CYLINDER_INNER + 0.5 * d)
}

/// Mean of `f(r, φ)` over the cylinder sector by polar Gauss quadrature.
fn sector_mean(f: impl Fn(f64, f64) -> f64) -> f64 {
    let (r1, r2) = region_radii();
    let (t1, t2) = (FRAC_PI_8, 3.0 * FRAC_PI_8);
    let g = gauss_legendre(16);
    let mut total = 0.0;
    for &(xr, wr) in g {
        let r = r1 + 0.5 * (xr + 1.0) * (r2 - r1);
        for &(xt, wt) in g {
            let th = t1 + 0.5 * (xt + 1.0) * (t2 - t1);
            total += 0.25 * (r2 - r1) * (t2 - t1) * wr * wt * r * f(r, th);
        }
    }
    total / (0.5 * (r2 * r2 - r1 * r1) * (t2 - t1))
}

/// One benchmark: mesh, loads, constraints, quantity of interest and exact data.
#[derive(Debug, Clone)]
pub struct BenchmarkCase {
    pub id: CaseId,
    pub material: MaterialModel,
    pub mesh: Arc<QuadtreeMesh>,
    pub loads: Arc<LoadSet>,
    pub dirichlet: DirichletSet,
    pub qoi: QuantityOfInterest,
    pub interface: Option<Region>,
    pub singular: Option<SingularSetup>,
    pub exact: ExactReference,
}

impl BenchmarkCase {
    pub fn new(id: CaseId) -> Result<Self> {
        let mat = material();
        if id.is_cylinder() {
            Self::cylinder(id, mat)
        } else {
            Self::lshape(id, mat)
        }
    }

    fn cylinder(id: CaseId, mat: MaterialModel) -> Result<Self> {
        let mesh = Arc::new(build_initial_mesh(GeometryMap::annulus_quarter(CYLINDER_INNER, CYLINDER_OUTER)?, 4, 4)?.uniformly_refined());
        let cyl = exact_cylinder();
        let region = cylinder_region(&mesh);
        let symmetry = DirichletSet::new().with_symmetry(tags::BOTTOM, 1).with_symmetry(tags::LEFT, 0);
        let pressure = LoadSet::new().with_traction(tags::INNER, |_, n| -n.as_vector() * PRESSURE);
        let outer_length = FRAC_PI_2 * CYLINDER_OUTER;
        let inner_length = FRAC_PI_2 * CYLINDER_INNER;
        let (loads, dirichlet, kind, value, dual, interface) = match id {
            CaseId::Cyl1aMeanUnGammaO => (
                pressure,
                symmetry,
                QoiKind::MeanDisplacementBoundary { extractor: Vector2::new(1.0, 0.0), tag: tags::OUTER.into(), normal_frame: true },
                cyl.radial_displacement(CYLINDER_OUTER)?,
                Some(LameCylinder::pressurised(CYLINDER_INNER, CYLINDER_OUTER, 0.0, -1.0 / outer_length, mat)?.solution()),
                None,
            ),
            CaseId::Cyl1bMeanUxDomain => (
                pressure,
                symmetry,
                QoiKind::MeanDisplacementDomain { extractor: Vector2::new(1.0, 0.0), region: region.clone() },
                sector_mean(|r, th| cyl.radial_displacement(r).expect("inside") * th.cos()),
                None,
                Some(region),
            ),
            CaseId::Cyl1cMeanSxDomain => (
                pressure,
                symmetry,
                QoiKind::MeanStressDomain { extractor: nalgebra::Vector3::new(1.0, 0.0, 0.0), region: region.clone() },
                sector_mean(|r, th| {
                    let (sr, sp) = cyl.polar_stress(r).expect("inside");
                    sr * th.cos().powi(2) + sp * th.sin().powi(2)
                }),
                None,
                Some(region),
            ),
            _ => {
                let ua = cyl.radial_displacement(CYLINDER_INNER)?;
                (
                    LoadSet::new(),
                    symmetry.with_tag(tags::INNER, Prescribed::new([true, true], move |_, n| -n.as_vector() * ua)),
                    QoiKind::MeanTractionDirichlet { extractor: Vector2::new(-1.0, 0.0), tag: tags::INNER.into() },
                    PRESSURE,
                    Some(LameCylinder::inner_displacement(CYLINDER_INNER, CYLINDER_OUTER, -1.0 / inner_length, 0.0, mat)?.solution()),
                    None,
                )
            }
        };
        Ok(Self {
            id,
            material: mat,
            mesh,
            loads: Arc::new(loads),
            dirichlet,
            qoi: QuantityOfInterest::new(kind)?,
            interface,
            singular: None,
            exact: ExactReference { value, primal: Some(cyl.solution()), dual },
        })
    }

    fn lshape(id: CaseId, mat: MaterialModel) -> Result<Self> {
        let mesh = Arc::new(build_initial_mesh(GeometryMap::l_shape(LSHAPE_LEG)?, 4, 4)?.uniformly_refined());
        let exact = exact_lshape();
        let mut loads = LoadSet::new();
        for tag in ["s1", "s2", "s3", "s4"] {
            let u = exact.clone();
            loads = loads.with_traction(tag, move |x, n| traction_projection(u.stress(x), n));
        }
        let l = LSHAPE_LEG;
        let (u0, u1) = (exact.clone(), exact.clone());
        let dirichlet = DirichletSet::new()
            .with_point(Point2::new(-l, l), Prescribed::new([true, true], move |x, _| u0.displacement(x)))
            .with_point(Point2::new(l, l), Prescribed::new([false, true], move |x, _| u1.displacement(x)));
        let config = CornerConfig::l_shape(mat);
        let domain = ExtractionDomain::new(EXTRACTION_R1, EXTRACTION_R2)?;
        let mode = if id == CaseId::LshapeKI { Mode::I } else { Mode::II };
        Ok(Self {
            id,
            material: mat,
            mesh,
            loads: Arc::new(loads),
            dirichlet,
            qoi: QuantityOfInterest::new(QoiKind::Gsif(GsifExtractor::new(config, mode, domain)?))?,
            interface: None,
            singular: Some(SingularSetup { config, domain, dual_domain: ExtractionDomain::new(DUAL_R1, DUAL_R2)?, radius: SPLIT_RADIUS }),
            exact: ExactReference { value: 1.0, primal: Some(exact), dual: None },
        })
    }

    /// Goal-oriented problem with the given recovery options.
    pub fn problem(&self, mut recovery: RecoveryOptions) -> GoalProblem {
        recovery.interface = self.interface.clone();
        GoalProblem {
            material: self.material,
            loads: self.loads.clone(),
            dirichlet: self.dirichlet.clone(),
            qoi: self.qoi.clone(),
            recovery,
            singular: self.singular,
            exact: Some(self.exact.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineMode {
    Uniform,
    Adaptive,
}

impl FromStr for RefineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(RefineMode::Uniform),
            "adaptive" => Ok(RefineMode::Adaptive),
            _ => Err(Error::Config(format!("unknown refinement '{s}'"))),
        }
    }
}

impl RefineMode {
    pub fn name(self) -> &'static str {
        match self {
            RefineMode::Uniform => "uniform",
            RefineMode::Adaptive => "adaptive",
        }
    }
}

pub fn parse_recovery(s: &str) -> Result<RecoveryMode> {
    match s {
        "spr-cx" | "spr_cx" => Ok(RecoveryMode::SprCx),
        "spr" => Ok(RecoveryMode::Spr),
        _ => Err(Error::Config(format!("unknown recovery '{s}'"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub case: CaseId,
    pub recovery: RecoveryMode,
    pub degree: usize,
    pub refine: RefineMode,
    pub adapt: AdaptConfig,
    /// Extra uniform refinements of the case's initial mesh.
    pub initial_refinements: usize,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn new(case: CaseId) -> Self {
        Self {
            case,
            recovery: RecoveryMode::SprCx,
            degree: 1,
            refine: RefineMode::Adaptive,
            adapt: AdaptConfig::default(),
            initial_refinements: 0,
            out: PathBuf::from("out"),
        }
    }

    /// Applies one `key = value` setting. `target` is a percentage.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("bad value '{v}' for {key}")))
        }
        match key {
            "case" => self.case = value.parse()?,
            "recovery" => self.recovery = parse_recovery(value)?,
            "degree" => self.degree = num(key, value)?,
            "refine" => self.refine = value.parse()?,
            "target" => self.adapt.target = num::<f64>(key, value)? / 100.0,
            "max_iter" | "max-iter" => self.adapt.max_iterations = num(key, value)?,
            "max_level" | "max-level" => self.adapt.max_level = num(key, value)?,
            "rate" => self.adapt.rate = num(key, value)?,
            "max_dofs" | "max-dofs" => self.adapt.max_dofs = Some(num(key, value)?),
            "step_reduction" | "step-reduction" => self.adapt.step_reduction = num(key, value)?,
            "initial_refinements" | "initial-refinements" => self.initial_refinements = num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.degree) {
            return Err(Error::Config(format!("degree must be 1 or 2, got {}", self.degree)));
        }
        if self.adapt.max_iterations == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        self.adapt.validate()
    }

    /// File stem shared by every report of this run.
    pub fn stem(&self) -> String {
        format!("{}_{}_{}", self.case.name(), self.recovery.name(), self.refine.name())
    }
}

/// `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", k + 1)))?;
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// Result of a benchmark run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: RunConfig,
    pub iterations: Vec<Analysis>,
    pub converged: bool,
}

impl RunOutput {
    pub fn csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for a in &self.iterations {
            s.push_str(&a.report.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "case {}  recovery {}  refine {}  converged {}\n",
            self.config.case,
            self.config.recovery.name(),
            self.config.refine.name(),
            self.converged
        );
        s.push_str(&format!(
            "{:>8} {:>24} {:>24} {:>24} {:>24} {:>24}\n",
            "dof", "Qees", "Qe", "theta", "thetaQoI", "etaes"
        ));
        let f = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| format!("{x:.16e}"));
        for a in &self.iterations {
            let r = &a.report;
            s.push_str(&format!(
                "{:>8} {:>24} {:>24} {:>24} {:>24} {:>24}\n",
                r.dof,
                f(Some(r.estimates.e1)),
                f(r.exact_error()),
                f(r.effectivities.theta),
                f(r.effectivities.theta_qoi),
                f(r.effectivities.eta_estimated),
            ));
        }
        s
    }

    /// Two-column `dof value` series for each plotted quantity.
    pub fn plot_series(&self) -> Vec<(&'static str, String)> {
        let mut series: Vec<(&'static str, String)> =
            ["theta", "etaes", "eta", "meanD", "sigD"].iter().map(|&n| (n, format!("# dof {n}\n"))).collect();
        for a in &self.iterations {
            let r = &a.report;
            let values = [
                r.effectivities.theta,
                r.effectivities.eta_estimated,
                r.effectivities.eta_exact,
                r.local.as_ref().map(|l| l.mean_abs),
                r.local.as_ref().map(|l| l.std_dev),
            ];
            for ((_, text), v) in series.iter_mut().zip(values) {
                if let Some(v) = v {
                    text.push_str(&format!("{} {v:.16e}\n", r.dof));
                }
            }
        }
        series
    }

    /// Writes the CSV, the summary table and the plot data under `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let stem = self.config.stem();
        let mut files = vec![
            (dir.join(format!("{stem}.csv")), self.csv()),
            (dir.join(format!("{stem}_summary.txt")), self.summary()),
        ];
        for (name, text) in self.plot_series() {
            files.push((dir.join(format!("{stem}_{name}.dat")), text));
        }
        for (path, text) in &files {
            fs::write(path, text)?;
        }
        Ok(files.into_iter().map(|(p, _)| p).collect())
    }
}

/// Runs the configured sequence; fails if any mesh violates the estimate ordering.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    let case = BenchmarkCase::new(config.case)?;
    let problem = case.problem(RecoveryOptions::new(config.recovery).with_degree(config.degree));
    let mut mesh = case.mesh.clone();
    for _ in 0..config.initial_refinements {
        mesh = Arc::new(mesh.uniformly_refined());
    }
    let (iterations, converged) = match config.refine {
        RefineMode::Adaptive => {
            let r = adapt_loop(&problem, mesh, &config.adapt)?;
            (r.iterations, r.converged)
        }
        RefineMode::Uniform => {
            let it = uniform_sequence(&problem, mesh, config.adapt.max_iterations)?;
            let converged = it
                .last()
                .and_then(|a| a.report.effectivities.eta_estimated)
                .is_some_and(|e| e <= config.adapt.target);
            (it, converged)
        }
    };
    for a in &iterations {
        if !a.report.estimates.is_ordered(1e-12) {
            return Err(Error::Config(format!("estimate ordering violated at {} dof", a.report.dof)));
        }
    }
    Ok(RunOutput { config: config.clone(), iterations, converged })
}

/// One pre-flight check on the exact solutions.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.value.abs() <= self.tolerance
    }
}

fn check(name: impl Into<String>, value: f64, tolerance: f64) -> Check {
    Check { name: name.into(), value, tolerance }
}

/// Largest scaled equilibrium defect of `sol` at `points`.
fn equilibrium_defect(sol: &ReferenceSolution, points: &[Point2<f64>], length: f64, scale: f64) -> f64 {
    let step = 1e-5 * length;
    points
        .iter()
        .map(|p| {
            let g = finite_difference_gradient(|x, y| sol.stress(&Point2::new(x, y)), p.x, p.y, step);
            equilibrium_residual(&g, Vector2::zeros()).norm() * length / scale
        })
        .fold(0.0, f64::max)
}

/// Exact-solution suite run before any benchmark: equilibrium, boundary data and
/// the exact quantity values.
pub fn verify() -> Result<Vec<Check>> {
    let mut rng = StdRng::seed_from_u64(7);
    let mut checks = Vec::new();
    let cyl = exact_cylinder();
    let (a, b) = (CYLINDER_INNER, CYLINDER_OUTER);
    let polar = |rng: &mut StdRng, r0: f64, r1: f64| {
        let (r, th) = (rng.random_range(r0..r1), rng.random_range(0.01..FRAC_PI_2 - 0.01));
        Point2::new(r * th.cos(), r * th.sin())
    };
    let inside: Vec<Point2<f64>> = (0..50).map(|_| polar(&mut rng, a + 0.1, b - 0.1)).collect();
    checks.push(check("cylinder equilibrium", equilibrium_defect(&cyl.solution(), &inside, a, PRESSURE), 1e-8));

    let sol = cyl.solution();
    let mut inner_defect: f64 = 0.0;
    let mut outer_defect: f64 = 0.0;
    let mut symmetry_defect: f64 = 0.0;
    for _ in 0..50 {
        let th = rng.random_range(0.0..FRAC_PI_2);
        let (c, s) = (th.cos(), th.sin());
        let n_in = UnitNormal::new(-c, -s)?;
        let p_in = Point2::new(a * c, a * s);
        inner_defect = inner_defect.max((traction_projection(sol.stress(&p_in), n_in) + n_in.as_vector() * PRESSURE).norm());
        let n_out = UnitNormal::new(c, s)?;
        outer_defect = outer_defect.max(traction_projection(sol.stress(&Point2::new(b * c, b * s)), n_out).norm());
        let r = rng.random_range(a..b);
        let (pb, pl) = (Point2::new(r, 0.0), Point2::new(0.0, r));
        symmetry_defect = symmetry_defect
            .max(sol.displacement(&pb).y.abs() * 1e3)
            .max(sol.displacement(&pl).x.abs() * 1e3)
            .max(sol.stress(&pb).xy.abs())
            .max(sol.stress(&pl).xy.abs());
    }
    checks.push(check("cylinder inner pressure", inner_defect, 1e-8));
    checks.push(check("cylinder outer traction free", outer_defect, 1e-8));
    checks.push(check("cylinder symmetry planes", symmetry_defect, 1e-8));
    checks.push(check("cylinder sigma_r(a) = -P", cyl.polar_stress(a)?.0 + PRESSURE, 1e-12));
    checks.push(check("cylinder sigma_r(b) = 0", cyl.polar_stress(b)?.0, 1e-12));

    let po = -1.0 / (FRAC_PI_2 * b);
    let dual = LameCylinder::pressurised(a, b, 0.0, po, material())?;
    checks.push(check("dual sigma_r(b) = -Po", dual.polar_stress(b)?.0 + po, 1e-12));
    checks.push(check("dual sigma_r(a) = 0", dual.polar_stress(a)?.0, 1e-12));

    // Exact quantity values, and their direct quadrature on a mesh.
    let fine = Arc::new(
        build_initial_mesh(GeometryMap::annulus_quarter(a, b)?, 4, 4)?.uniformly_refined().uniformly_refined().uniformly_refined(),
    );
    let field = sol.on_mesh(fine.clone());
    let un = cyl.radial_displacement(b)?;
    checks.push(check("mean u_n on outer arc = 2.42666e-3", (un - 2.42666e-3) / 2.42666e-3, 5e-6));
    for id in [CaseId::Cyl1aMeanUnGammaO, CaseId::Cyl1bMeanUxDomain, CaseId::Cyl1cMeanSxDomain] {
        let case = BenchmarkCase::new(id)?;
        let q = evaluate_qoi(&case.qoi, &field)?;
        checks.push(check(format!("{id} quadrature of exact field"), (q - case.exact.value) / case.exact.value, 1e-8));
    }
    let sx = BenchmarkCase::new(CaseId::Cyl1cMeanSxDomain)?.exact.value;
    checks.push(check("mean sigma_x over sector = 1/15", sx - 1.0 / 15.0, 1e-12));
    let mut tn = 0.0;
    let mut len = 0.0;
    for e in fine.boundary_with_tag(tags::INNER) {
        for p in fine.edge_quadrature(e.element, e.side, QOI_ORDER) {
            let x = fine.element_point(e.element, p.s, p.t);
            tn += -p.weight * traction_projection(sol.stress(&x), p.normal).dot(&p.normal.as_vector());
            len += p.weight;
        }
    }
    checks.push(check("mean normal reaction on inner arc = 1", tn / len - 1.0, 1e-8));

    // L-shape.
    let ls = exact_lshape();
    let lpts: Vec<Point2<f64>> = (0..50)
        .map(|_| loop {
            let p = Point2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * LSHAPE_LEG;
            if !(p.x > 0.0 && p.y < 0.0) && p.coords.norm() > 0.05 {
                break p;
            }
        })
        .collect();
    let scale = ls.stress(&Point2::new(0.5, 0.5)).max_abs();
    checks.push(check("L-shape equilibrium", equilibrium_defect(&ls, &lpts, 0.05, scale), 1e-6));
    let mut face_defect: f64 = 0.0;
    for _ in 0..50 {
        let r = rng.random_range(0.01..LSHAPE_LEG);
        let t0 = traction_projection(ls.stress(&Point2::new(r, 0.0)), UnitNormal::new(0.0, -1.0)?);
        let t5 = traction_projection(ls.stress(&Point2::new(0.0, -r)), UnitNormal::new(1.0, 0.0)?);
        face_defect = face_defect.max(t0.norm().max(t5.norm()) * r.powf(1.0 - 0.5444837));
    }
    checks.push(check("L-shape corner faces traction free", face_defect, 1e-10));
    let config = CornerConfig::l_shape(material());
    for (mode, r) in [(Mode::I, (EXTRACTION_R1, EXTRACTION_R2)), (Mode::II, (EXTRACTION_R1, EXTRACTION_R2)), (Mode::I, (0.3, 0.9))] {
        let ex = GsifExtractor::new(config, mode, ExtractionDomain::new(r.0, r.1)?)?;
        let k = ex.integrate_polar(|p| Ok((ls.displacement(p), ls.stress(p))))?;
        checks.push(check(format!("L-shape K_{} = 1 on annulus ({}, {})", mode.name(), r.0, r.1), k - 1.0, 1e-3));
    }
    Ok(checks)
}
