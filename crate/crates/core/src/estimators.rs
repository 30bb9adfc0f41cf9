//! Energy-norm and quantity-of-interest error estimates built from recovered
//! stresses, effectivity indices and local effectivity statistics.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;

use crate::elasticity::{MaterialModel, VoigtStress};
use crate::error::{Error, Result};
use crate::fem::FEField;
use crate::mesh::QuadtreeMesh;
use crate::spr::RecoveredField;

/// Gauss points per direction for all estimator integrals.
pub const ESTIMATOR_ORDER: usize = 4;

/// Elements with an exact local error below this are left out of the `D` statistics.
pub const LOCAL_ERROR_FLOOR: f64 = 1e-14;

/// Per-element integrals of the primal and dual stress error fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementProducts {
    /// `∫_e eᵀ D⁻¹ ẽ`.
    pub cross: Vec<f64>,
    /// `∫_e eᵀ D⁻¹ e`.
    pub primal: Vec<f64>,
    /// `∫_e ẽᵀ D⁻¹ ẽ`.
    pub dual: Vec<f64>,
}

impl ElementProducts {
    /// Integrates two stress error samplers element by element.
    pub fn integrate<F, G>(mesh: &QuadtreeMesh, material: &MaterialModel, primal: F, dual: G) -> Result<Self>
    where
        F: Fn(usize, f64, f64) -> VoigtStress + Sync,
        G: Fn(usize, f64, f64) -> VoigtStress + Sync,
    {
        let rows: Vec<[f64; 3]> = (0..mesh.num_elements())
            .into_par_iter()
            .map(|e| -> Result<[f64; 3]> {
                let mut acc = [0.0; 3];
                for q in mesh.element_quadrature(e, ESTIMATOR_ORDER)? {
                    let (a, b) = (primal(e, q.s, q.t), dual(e, q.s, q.t));
                    acc[0] += q.weight * material.energy_product(a, b);
                    acc[1] += q.weight * material.energy_product(a, a);
                    acc[2] += q.weight * material.energy_product(b, b);
                }
                Ok(acc)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            cross: rows.iter().map(|r| r[0]).collect(),
            primal: rows.iter().map(|r| r[1]).collect(),
            dual: rows.iter().map(|r| r[2]).collect(),
        })
    }
}

/// `E1..E4` with the element contributions of `E1`.
#[derive(Debug, Clone, PartialEq)]
pub struct QoiEstimates {
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
    pub e4: f64,
    pub contributions: Vec<f64>,
    /// Squared energy norms of the primal and dual error estimates.
    pub primal_energy: f64,
    pub dual_energy: f64,
}

impl QoiEstimates {
    pub fn from_products(p: ElementProducts) -> Self {
        let primal_energy: f64 = p.primal.iter().sum();
        let dual_energy: f64 = p.dual.iter().sum();
        Self {
            e1: p.cross.iter().sum(),
            e2: p.cross.iter().map(|c| c.abs()).sum(),
            e3: p.primal.iter().zip(&p.dual).map(|(a, b)| (a * b).sqrt()).sum(),
            e4: (primal_energy * dual_energy).sqrt(),
            contributions: p.cross,
            primal_energy,
            dual_energy,
        }
    }

    /// `|E1| ≤ E2 ≤ E3 ≤ E4` with relative slack `tol`.
    pub fn is_ordered(&self, tol: f64) -> bool {
        let slack = tol * self.e4.max(f64::MIN_POSITIVE);
        self.e1.abs() <= self.e2 + slack && self.e2 <= self.e3 + slack && self.e3 <= self.e4 + slack
    }
}

fn check_mesh(a: &Arc<QuadtreeMesh>, b: &Arc<QuadtreeMesh>) -> Result<()> {
    if Arc::ptr_eq(a, b) || (a.num_elements() == b.num_elements() && a.nodes() == b.nodes()) {
        Ok(())
    } else {
        Err(Error::InvalidInput("fields live on different meshes".into()))
    }
}

/// `σ* − σ^h` at a local point.
fn stress_error<'a>(field: &'a FEField, recovered: &'a RecoveredField) -> impl Fn(usize, f64, f64) -> VoigtStress + Sync + 'a {
    move |e, s, t| recovered.stress_at(e, s, t) - field.stress_at(e, s, t)
}

/// Zienkiewicz–Zhu estimate `‖σ* − σ^h‖` in the energy norm.
pub fn zz_energy_estimate(field: &FEField, recovered: &RecoveredField) -> Result<f64> {
    check_mesh(field.mesh(), recovered.mesh())?;
    Ok(element_zz_energies(field, recovered)?.iter().sum::<f64>().sqrt())
}

/// Squared ZZ estimate on each element.
pub fn element_zz_energies(field: &FEField, recovered: &RecoveredField) -> Result<Vec<f64>> {
    check_mesh(field.mesh(), recovered.mesh())?;
    let err = stress_error(field, recovered);
    Ok(ElementProducts::integrate(field.mesh(), field.material(), &err, &err)?.primal)
}

/// `E1 = ∫ e*ᵀ D⁻¹ ẽ*` and the bounds `E2..E4` from primal and dual recoveries.
pub fn qoi_estimates(
    primal: &FEField,
    primal_recovered: &RecoveredField,
    dual: &FEField,
    dual_recovered: &RecoveredField,
) -> Result<QoiEstimates> {
    check_mesh(primal.mesh(), dual.mesh())?;
    check_mesh(primal.mesh(), primal_recovered.mesh())?;
    check_mesh(dual.mesh(), dual_recovered.mesh())?;
    let products = ElementProducts::integrate(
        primal.mesh(),
        primal.material(),
        stress_error(primal, primal_recovered),
        stress_error(dual, dual_recovered),
    )?;
    Ok(QoiEstimates::from_products(products))
}

/// Effectivity and relative error measures; `None` where a denominator vanishes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Effectivities {
    /// `E / Q(e)`.
    pub theta: Option<f64>,
    /// `(Q(u^h) + E) / Q(u)`.
    pub theta_qoi: Option<f64>,
    /// `|Q(e)| / |Q(u)|`.
    pub eta_exact: Option<f64>,
    /// `|E| / |Q(u^h) + E|`.
    pub eta_estimated: Option<f64>,
}

fn ratio(a: f64, b: f64) -> Option<f64> {
    (b != 0.0 && b.is_finite() && a.is_finite()).then(|| a / b)
}

pub fn effectivities(estimate: f64, q_fe: f64, q_exact: Option<f64>) -> Effectivities {
    let corrected = q_fe + estimate;
    let exact_error = q_exact.map(|q| q - q_fe);
    Effectivities {
        theta: exact_error.and_then(|qe| ratio(estimate, qe)),
        theta_qoi: q_exact.and_then(|q| ratio(corrected, q)),
        eta_exact: exact_error.zip(q_exact).and_then(|(qe, q)| ratio(qe.abs(), q.abs())),
        eta_estimated: ratio(estimate.abs(), corrected.abs()),
    }
}

/// `D = θ^e − 1` for `θ^e ≥ 1`, `1 − 1/θ^e` otherwise.
pub fn local_effectivity(theta: f64) -> f64 {
    if theta >= 1.0 {
        theta - 1.0
    } else {
        1.0 - 1.0 / theta
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalEffectivity {
    /// `D` per element, `None` for excluded elements.
    pub d: Vec<Option<f64>>,
    /// `m(|D|)`.
    pub mean_abs: f64,
    /// `σ(D)`, population standard deviation.
    pub std_dev: f64,
    pub excluded: usize,
}

pub fn local_effectivity_stats(estimated: &[f64], exact: &[f64]) -> Result<LocalEffectivity> {
    if estimated.len() != exact.len() {
        return Err(Error::InvalidInput(format!(
            "{} estimated against {} exact element errors",
            estimated.len(),
            exact.len()
        )));
    }
    let d: Vec<Option<f64>> = estimated
        .iter()
        .zip(exact)
        .map(|(&est, &ex)| {
            if ex.abs() < LOCAL_ERROR_FLOOR {
                return None;
            }
            let d = local_effectivity(est / ex);
            d.is_finite().then_some(d)
        })
        .collect();
    let kept: Vec<f64> = d.iter().flatten().copied().collect();
    let n = kept.len().max(1) as f64;
    let mean: f64 = kept.iter().sum::<f64>() / n;
    let mean_abs = kept.iter().map(|v| v.abs()).sum::<f64>() / n;
    let std_dev = (kept.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(LocalEffectivity { excluded: d.len() - kept.len(), d, mean_abs, std_dev })
}

/// Estimates and metrics of one mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub dof: usize,
    pub estimates: QoiEstimates,
    /// ZZ estimates of the primal and dual problems.
    pub primal_zz: f64,
    pub dual_zz: f64,
    pub q_fe: f64,
    pub q_exact: Option<f64>,
    pub effectivities: Effectivities,
    pub local: Option<LocalEffectivity>,
}

pub const CSV_HEADER: &str = "dof,Qees,Qe,theta,thetaQoI,etaes,eta,E2,E3,E4,meanD,sigD";

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| format!("{x:.16e}"))
}

impl ErrorReport {
    pub fn new(
        dof: usize,
        estimates: QoiEstimates,
        q_fe: f64,
        q_exact: Option<f64>,
        local: Option<LocalEffectivity>,
    ) -> Self {
        let effectivities = effectivities(estimates.e1, q_fe, q_exact);
        Self {
            dof,
            primal_zz: estimates.primal_energy.sqrt(),
            dual_zz: estimates.dual_energy.sqrt(),
            estimates,
            q_fe,
            q_exact,
            effectivities,
            local,
        }
    }

    /// `Q(e) = Q(u) − Q(u^h)`.
    pub fn exact_error(&self) -> Option<f64> {
        self.q_exact.map(|q| q - self.q_fe)
    }

    pub fn csv_row(&self) -> String {
        let e = &self.effectivities;
        let mut row = format!("{}", self.dof);
        for v in [
            Some(self.estimates.e1),
            self.exact_error(),
            e.theta,
            e.theta_qoi,
            e.eta_estimated,
            e.eta_exact,
            Some(self.estimates.e2),
            Some(self.estimates.e3),
            Some(self.estimates.e4),
            self.local.as_ref().map(|l| l.mean_abs),
            self.local.as_ref().map(|l| l.std_dev),
        ] {
            let _ = write!(row, ",{}", fmt_opt(v));
        }
        row
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn products(cross: &[f64], primal: &[f64], dual: &[f64]) -> ElementProducts {
        ElementProducts { cross: cross.to_vec(), primal: primal.to_vec(), dual: dual.to_vec() }
    }

    #[test]
    fn local_effectivity_formula() {
        assert_eq!(local_effectivity(2.0), 1.0);
        assert_eq!(local_effectivity(0.5), -1.0);
        assert_eq!(local_effectivity(1.0), 0.0);
        let perfect = local_effectivity_stats(&[1.0, -2.0, 3.0], &[1.0, -2.0, 3.0]).unwrap();
        assert_eq!((perfect.mean_abs, perfect.std_dev, perfect.excluded), (0.0, 0.0, 0));
    }

    #[test]
    fn tiny_exact_errors_are_excluded() {
        let stats = local_effectivity_stats(&[2.0, 1.0, 0.5], &[1.0, 1e-16, 1.0]).unwrap();
        assert_eq!(stats.excluded, 1);
        assert_eq!(stats.d, vec![Some(1.0), None, Some(-1.0)]);
        assert_eq!(stats.mean_abs, 1.0);
        assert_eq!(stats.std_dev, 1.0);
        assert!(local_effectivity_stats(&[1.0], &[]).is_err());
    }

    #[test]
    fn single_element_bounds_coincide() {
        let est = QoiEstimates::from_products(products(&[-0.3], &[0.4], &[0.9]));
        assert_eq!(est.e2, 0.3);
        assert_eq!(est.e3, est.e4);
        assert!(est.is_ordered(1e-12));
    }

    #[test]
    fn effectivities_of_exact_estimate() {
        let e = effectivities(0.25, 1.0, Some(1.25));
        assert_eq!(e.theta, Some(1.0));
        assert_eq!(e.theta_qoi, Some(1.0));
        assert_eq!(e.eta_exact, Some(0.2));
        assert_eq!(e.eta_estimated, Some(0.2));
        let undefined = effectivities(0.1, 1.0, Some(1.0));
        assert_eq!(undefined.theta, None);
        assert_eq!(effectivities(0.1, 1.0, Some(0.0)).theta_qoi, None);
        assert_eq!(effectivities(-1.0, 1.0, None), Effectivities { eta_estimated: None, ..Default::default() });
    }

    #[test]
    fn csv_row_has_all_columns() {
        let est = QoiEstimates::from_products(products(&[0.1, -0.05], &[0.2, 0.1], &[0.3, 0.05]));
        let r = ErrorReport::new(42, est, 1.0, None, None);
        let row = r.csv_row();
        assert_eq!(row.split(',').count(), CSV_HEADER.split(',').count());
        assert!(row.starts_with("42,5.0000000000000003e-2,nan,"));
    }
}
