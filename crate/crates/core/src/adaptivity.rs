//! Goal-oriented analysis of one mesh and the h-adaptive loop around it.

use std::sync::Arc;

use crate::elasticity::MaterialModel;
use crate::error::{Error, Result};
use crate::estimators::{local_effectivity_stats, qoi_estimates, ElementProducts, ErrorReport};
use crate::exact::ReferenceSolution;
use crate::fem::{solve_problem, DirichletSet, FEField, LoadSet};
use crate::mesh::{QuadtreeMesh, MAX_LEVEL};
use crate::qoi::{QoiKind, QuantityOfInterest};
use crate::singular::{corner_eigenvalue, CornerConfig, ExtractionDomain, Mode, SingularPart};
use crate::spr::{recover, RecoveredField, RecoveryDiagnostics, RecoveryMode, RecoveryOptions};

/// Corner whose singular part is split off during recovery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularSetup {
    pub config: CornerConfig,
    /// Extraction annulus for the primal amplitudes.
    pub domain: ExtractionDomain,
    /// Extraction annulus for the dual amplitudes, clear of the dual loads.
    pub dual_domain: ExtractionDomain,
    /// Patches with vertices closer than this to the apex are split.
    pub radius: f64,
}

impl SingularSetup {
    /// Smallest singular exponent of the corner.
    pub fn min_exponent(&self) -> Result<f64> {
        let mut lambda = f64::INFINITY;
        for mode in [Mode::I, Mode::II] {
            match corner_eigenvalue(self.config.opening, mode) {
                Ok(l) => lambda = lambda.min(l),
                Err(Error::NonSingular { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(lambda.min(1.0))
    }
}

/// Exact data available for benchmarks.
#[derive(Debug, Clone)]
pub struct ExactReference {
    pub value: f64,
    pub primal: Option<ReferenceSolution>,
    pub dual: Option<ReferenceSolution>,
}

/// Primal problem together with the quantity of interest.
#[derive(Debug, Clone)]
pub struct GoalProblem {
    pub material: MaterialModel,
    pub loads: Arc<LoadSet>,
    pub dirichlet: DirichletSet,
    pub qoi: QuantityOfInterest,
    pub recovery: RecoveryOptions,
    pub singular: Option<SingularSetup>,
    pub exact: Option<ExactReference>,
}

/// Everything computed on one mesh.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub primal: FEField,
    pub dual: FEField,
    pub primal_recovered: RecoveredField,
    pub dual_recovered: RecoveredField,
    pub report: ErrorReport,
}

impl Analysis {
    pub fn mesh(&self) -> &Arc<QuadtreeMesh> {
        self.primal.mesh()
    }

    pub fn diagnostics(&self) -> (RecoveryDiagnostics, RecoveryDiagnostics) {
        (self.primal_recovered.diagnostics(), self.dual_recovered.diagnostics())
    }
}

impl GoalProblem {
    fn recovery_for(&self, field: &FEField, dual: bool) -> Result<RecoveryOptions> {
        let mut options = self.recovery.clone();
        if let (RecoveryMode::SprCx, Some(s)) = (options.mode, &self.singular) {
            let domain = if dual { s.dual_domain } else { s.domain };
            options.singular = Some(SingularPart::from_field(field, s.config, domain, s.radius)?);
        }
        Ok(options)
    }

    /// Solves primal and dual, recovers both and evaluates the estimates.
    pub fn analyse(&self, mesh: &Arc<QuadtreeMesh>) -> Result<Analysis> {
        let primal = solve_problem(mesh, &self.material, &self.loads, &self.dirichlet)?;
        let dual = crate::qoi::dual_solve(&self.qoi, mesh, &self.material, &self.dirichlet)?;
        let primal_recovered = recover(&primal, &self.recovery_for(&primal, false)?)?;
        let dual_recovered = recover(&dual, &self.recovery_for(&dual, true)?)?;
        let estimates = qoi_estimates(&primal, &primal_recovered, &dual, &dual_recovered)?;
        let q_fe = self.qoi.value(&primal)?;
        let local = match &self.exact {
            Some(ExactReference { primal: Some(u), dual: Some(z), .. }) => {
                let exact = ElementProducts::integrate(
                    mesh,
                    &self.material,
                    |e, s, t| u.stress(&mesh.element_point(e, s, t)) - primal.stress_at(e, s, t),
                    |e, s, t| z.stress(&mesh.element_point(e, s, t)) - dual.stress_at(e, s, t),
                )?;
                Some(local_effectivity_stats(&estimates.contributions, &exact.cross)?)
            }
            _ => None,
        };
        let q_exact = match &self.exact {
            // Reaction and extraction functionals depend on the mesh (lifting, cut
            // elements), so the reference is the same functional on the exact field.
            Some(ExactReference { primal: Some(u), .. })
                if matches!(self.qoi.kind, QoiKind::MeanTractionDirichlet { .. } | QoiKind::Gsif(_)) =>
            {
                Some(self.qoi.evaluate(&u.on_mesh(mesh.clone()))?)
            }
            Some(x) => Some(x.value),
            None => None,
        };
        let report = ErrorReport::new(primal.num_dofs(), estimates, q_fe, q_exact, local);
        Ok(Analysis { primal, dual, primal_recovered, dual_recovered, report })
    }

    /// Convergence exponent per element: the corner exponent on elements touching
    /// the singular apex, `default` elsewhere.
    pub fn element_rates(&self, mesh: &QuadtreeMesh, default: f64) -> Result<Vec<f64>> {
        let singular = match &self.singular {
            Some(s) => Some((s.config.apex, s.min_exponent()?)),
            None => None,
        };
        Ok((0..mesh.num_elements())
            .map(|e| match singular {
                Some((apex, lambda))
                    if mesh.element(e).nodes.iter().any(|&n| (mesh.nodes()[n] - apex).norm() < 1e-10) =>
                {
                    lambda.min(default)
                }
                _ => default,
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptConfig {
    /// Target relative error `η^Q(e_es)`.
    pub target: f64,
    pub max_iterations: usize,
    pub max_level: u8,
    /// Exponent `r` of `ē_e ∝ h^r` in smooth regions.
    pub rate: f64,
    /// Largest error reduction requested in one step.
    pub step_reduction: f64,
    /// Stop once a mesh has at least this many DOFs.
    pub max_dofs: Option<usize>,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self { target: 0.01, max_iterations: 10, max_level: 18, rate: 2.0, step_reduction: 0.85, max_dofs: None }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target > 0.0) {
            return Err(Error::Config(format!("target error must be positive, got {}", self.target)));
        }
        if !(self.rate > 0.0) || !(self.step_reduction > 0.0 && self.step_reduction < 1.0) {
            return Err(Error::Config("rate must be positive and step reduction in (0, 1)".into()));
        }
        if self.max_level > MAX_LEVEL {
            return Err(Error::Config(format!("max level above {MAX_LEVEL}")));
        }
        Ok(())
    }
}

/// New element sizes `h (ē_target / ē_e)^(1/r)` with `ē_e = sqrt|E_e|` and
/// `ē_target` the equidistributed share of `target_total` over the current elements.
pub fn size_map(contributions: &[f64], sizes: &[f64], rates: &[f64], target_total: f64) -> Vec<f64> {
    let n = contributions.len().max(1) as f64;
    let e_target = (target_total.abs() / n).sqrt();
    contributions
        .iter()
        .zip(sizes)
        .zip(rates)
        .map(|((&c, &h), &r)| {
            let e = c.abs().sqrt();
            if e == 0.0 || !e.is_finite() {
                h
            } else {
                h * (e_target / e).powf(1.0 / r)
            }
        })
        .collect()
}

/// Number of halvings `⌈log2(h / h_new)⌉` per element, capped at `max_level`.
pub fn refinement_depths(mesh: &QuadtreeMesh, sizes: &[f64], new_sizes: &[f64], max_level: u8) -> Vec<u8> {
    sizes
        .iter()
        .zip(new_sizes)
        .enumerate()
        .map(|(e, (&h, &hn))| {
            let room = max_level.saturating_sub(mesh.element(e).level());
            if hn >= h || hn <= 0.0 {
                0
            } else {
                ((h / hn).log2() - 1e-9).ceil().clamp(0.0, room as f64) as u8
            }
        })
        .collect()
}

/// Outcome of a refinement sequence.
#[derive(Debug, Clone)]
pub struct AdaptResult {
    pub iterations: Vec<Analysis>,
    pub converged: bool,
}

/// Adaptive loop: analyse, stop at the target or the iteration cap, else refine by
/// the size map.
pub fn adapt_loop(problem: &GoalProblem, initial: Arc<QuadtreeMesh>, config: &AdaptConfig) -> Result<AdaptResult> {
    config.validate()?;
    let mut mesh = initial;
    let mut iterations = Vec::new();
    for it in 0..config.max_iterations.max(1) {
        let analysis = problem.analyse(&mesh)?;
        let eta = analysis.report.effectivities.eta_estimated.unwrap_or(f64::INFINITY);
        let est = analysis.report.estimates.clone();
        iterations.push(analysis);
        if eta <= config.target {
            return Ok(AdaptResult { iterations, converged: true });
        }
        let dofs = iterations.last().map_or(0, |a| a.report.dof);
        if it + 1 == config.max_iterations.max(1) || config.max_dofs.is_some_and(|m| dofs >= m) {
            break;
        }
        let step_target = config.target.max(eta * config.step_reduction);
        let sizes: Vec<f64> = (0..mesh.num_elements()).map(|e| mesh.element_size(e)).collect();
        let rates = problem.element_rates(&mesh, config.rate)?;
        let new_sizes = size_map(&est.contributions, &sizes, &rates, est.e2 * step_target / eta);
        let depths = refinement_depths(&mesh, &sizes, &new_sizes, config.max_level);
        if depths.iter().all(|&d| d == 0) {
            break;
        }
        mesh = Arc::new(mesh.refine_by_depth(&depths));
    }
    Ok(AdaptResult { iterations, converged: false })
}

/// Sequence of `steps` uniformly refined meshes starting from `initial`.
pub fn uniform_sequence(problem: &GoalProblem, initial: Arc<QuadtreeMesh>, steps: usize) -> Result<Vec<Analysis>> {
    let mut mesh = initial;
    let mut out = Vec::with_capacity(steps);
    for k in 0..steps {
        out.push(problem.analyse(&mesh)?);
        if k + 1 < steps {
            mesh = Arc::new(mesh.uniformly_refined());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equidistributed_error_is_a_fixed_point() {
        let c = vec![0.04; 8];
        let h = vec![0.5; 8];
        let sizes = size_map(&c, &h, &[1.0; 8], 0.32);
        assert!(sizes.iter().all(|s| (s - 0.5).abs() < 1e-15));
    }

    #[test]
    fn halved_target_scales_sizes_uniformly() {
        let c = vec![0.01, 0.01, 0.01, 0.01];
        let h = vec![1.0, 2.0, 0.5, 0.25];
        let sizes = size_map(&c, &h, &[1.0; 4], 0.02);
        // ē_target / ē_e = sqrt(0.02 / 4) / 0.1
        let factor = (0.005f64).sqrt() / 0.1;
        for (s, h) in sizes.iter().zip(&h) {
            assert!((s / h - factor).abs() < 1e-14);
        }
        assert!(factor < 1.0);
    }

    #[test]
    fn zero_contribution_keeps_size() {
        let sizes = size_map(&[0.0, 1.0, 0.0], &[1.0, 1.0, 1.0], &[1.0; 3], 1e-6);
        assert_eq!((sizes[0], sizes[2]), (1.0, 1.0));
        assert!(sizes[1] < 1.0);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(AdaptConfig { target: 0.0, ..Default::default() }.validate().is_err());
        assert!(AdaptConfig { step_reduction: 1.5, ..Default::default() }.validate().is_err());
        assert!(AdaptConfig::default().validate().is_ok());
    }
}
