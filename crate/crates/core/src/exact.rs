//! Closed-form reference solutions and a common sampling interface shared with
//! FE fields.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Point2, Vector2};

use crate::elasticity::{MaterialModel, PlaneMode, VoigtStrain, VoigtStress};
use crate::error::{Error, Result};
use crate::fem::FEField;
use crate::mesh::QuadtreeMesh;
use crate::singular::{corner_eigenvalue, CornerConfig, Eigenfield, Mode};

/// Displacement, strain and stress at local points of mesh elements.
pub trait FieldSampler: Sync {
    fn mesh(&self) -> &QuadtreeMesh;
    fn displacement(&self, e: usize, s: f64, t: f64) -> Vector2<f64>;
    fn strain(&self, e: usize, s: f64, t: f64) -> VoigtStrain;
    fn stress(&self, e: usize, s: f64, t: f64) -> VoigtStress;
}

impl FieldSampler for FEField {
    fn mesh(&self) -> &QuadtreeMesh {
        FEField::mesh(self)
    }

    fn displacement(&self, e: usize, s: f64, t: f64) -> Vector2<f64> {
        self.displacement_at(e, s, t)
    }

    fn strain(&self, e: usize, s: f64, t: f64) -> VoigtStrain {
        self.strain_at(e, s, t)
    }

    fn stress(&self, e: usize, s: f64, t: f64) -> VoigtStress {
        self.stress_at(e, s, t)
    }
}

pub type PointFn<T> = Arc<dyn Fn(&Point2<f64>) -> T + Send + Sync>;

/// Displacement and stress as functions of position, free of initial fields.
#[derive(Clone)]
pub struct ReferenceSolution {
    material: MaterialModel,
    displacement: PointFn<Vector2<f64>>,
    stress: PointFn<VoigtStress>,
}

impl fmt::Debug for ReferenceSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReferenceSolution").field("material", &self.material).finish()
    }
}

impl ReferenceSolution {
    pub fn new(
        material: MaterialModel,
        displacement: impl Fn(&Point2<f64>) -> Vector2<f64> + Send + Sync + 'static,
        stress: impl Fn(&Point2<f64>) -> VoigtStress + Send + Sync + 'static,
    ) -> Self {
        Self { material, displacement: Arc::new(displacement), stress: Arc::new(stress) }
    }

    pub fn material(&self) -> &MaterialModel {
        &self.material
    }

    pub fn displacement(&self, p: &Point2<f64>) -> Vector2<f64> {
        (self.displacement)(p)
    }

    pub fn stress(&self, p: &Point2<f64>) -> VoigtStress {
        (self.stress)(p)
    }

    pub fn strain(&self, p: &Point2<f64>) -> VoigtStrain {
        self.material.invert(self.stress(p))
    }

    /// Field multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let (u, s) = (self.displacement.clone(), self.stress.clone());
        Self::new(self.material, move |p| u(p) * factor, move |p| s(p) * factor)
    }

    pub fn on_mesh(&self, mesh: Arc<QuadtreeMesh>) -> ExactField {
        ExactField { mesh, solution: self.clone() }
    }
}

/// A [`ReferenceSolution`] sampled through the element maps of a mesh.
#[derive(Debug, Clone)]
pub struct ExactField {
    mesh: Arc<QuadtreeMesh>,
    solution: ReferenceSolution,
}

impl ExactField {
    pub fn solution(&self) -> &ReferenceSolution {
        &self.solution
    }
}

impl FieldSampler for ExactField {
    fn mesh(&self) -> &QuadtreeMesh {
        &self.mesh
    }

    fn displacement(&self, e: usize, s: f64, t: f64) -> Vector2<f64> {
        self.solution.displacement(&self.mesh.element_point(e, s, t))
    }

    fn strain(&self, e: usize, s: f64, t: f64) -> VoigtStrain {
        self.solution.strain(&self.mesh.element_point(e, s, t))
    }

    fn stress(&self, e: usize, s: f64, t: f64) -> VoigtStress {
        self.solution.stress(&self.mesh.element_point(e, s, t))
    }
}

/// Thick cylinder `a ≤ r ≤ b` in the Lamé form `σ_r = C₁ − C₂/r²`,
/// `σ_φ = C₁ + C₂/r²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LameCylinder {
    pub inner: f64,
    pub outer: f64,
    pub c1: f64,
    pub c2: f64,
    pub material: MaterialModel,
}

impl LameCylinder {
    pub fn from_constants(inner: f64, outer: f64, c1: f64, c2: f64, material: MaterialModel) -> Result<Self> {
        if !(inner > 0.0 && outer > inner) {
            return Err(Error::InvalidGeometry(format!("cylinder needs 0 < a < b, got {inner}, {outer}")));
        }
        Ok(Self { inner, outer, c1, c2, material })
    }

    /// Pressure `p_i` on `r = a` and `p_o` on `r = b`.
    pub fn pressurised(inner: f64, outer: f64, p_inner: f64, p_outer: f64, material: MaterialModel) -> Result<Self> {
        let (a2, b2) = (inner * inner, outer * outer);
        let c1 = (p_inner * a2 - p_outer * b2) / (b2 - a2);
        let c2 = (p_inner - p_outer) * a2 * b2 / (b2 - a2);
        Self::from_constants(inner, outer, c1, c2, material)
    }

    /// Radial displacement `u_a` on `r = a` and pressure `p_o` on `r = b`.
    pub fn inner_displacement(inner: f64, outer: f64, u_inner: f64, p_outer: f64, material: MaterialModel) -> Result<Self> {
        // σ_r(b) = −p_o gives C₂ = (C₁ + p_o) b²; u_r(a) = α C₁ a + β C₂ / a.
        let probe = Self::from_constants(inner, outer, 1.0, 0.0, material)?;
        let (alpha, beta) = probe.displacement_factors();
        let b2 = outer * outer;
        let c1 = (u_inner - beta * p_outer * b2 / inner) / (alpha * inner + beta * b2 / inner);
        Self::from_constants(inner, outer, c1, (c1 + p_outer) * b2, material)
    }

    /// `(α, β)` with `u_r = α C₁ r + β C₂ / r`.
    fn displacement_factors(&self) -> (f64, f64) {
        let e = self.material.youngs_modulus();
        let nu = self.material.poisson_ratio();
        match self.material.mode() {
            PlaneMode::PlaneStrain => ((1.0 + nu) * (1.0 - 2.0 * nu) / e, (1.0 + nu) / e),
            PlaneMode::PlaneStress => ((1.0 - nu) / e, (1.0 + nu) / e),
        }
    }

    fn check(&self, r: f64) -> Result<()> {
        let tol = 1e-12 * self.outer;
        if r < self.inner - tol || r > self.outer + tol {
            return Err(Error::InvalidInput(format!(
                "r = {r} outside the cylinder [{}, {}]",
                self.inner, self.outer
            )));
        }
        Ok(())
    }

    pub fn radial_displacement(&self, r: f64) -> Result<f64> {
        self.check(r)?;
        let (alpha, beta) = self.displacement_factors();
        Ok(alpha * self.c1 * r + beta * self.c2 / r)
    }

    /// `(σ_r, σ_φ)`.
    pub fn polar_stress(&self, r: f64) -> Result<(f64, f64)> {
        self.check(r)?;
        let q = self.c2 / (r * r);
        Ok((self.c1 - q, self.c1 + q))
    }

    pub fn solution(&self) -> ReferenceSolution {
        let (alpha, beta) = self.displacement_factors();
        let (c1, c2) = (self.c1, self.c2);
        ReferenceSolution::new(
            self.material,
            move |p| {
                let r = p.coords.norm();
                p.coords * ((alpha * c1 * r + beta * c2 / r) / r)
            },
            move |p| {
                let r = p.coords.norm();
                let q = c2 / (r * r);
                VoigtStress::from_polar(c1 - q, c1 + q, 0.0, p.y.atan2(p.x))
            },
        )
    }
}

/// Superposition of the two singular modes of the L-shaped corner with
/// amplitudes `k_i` and `k_ii`. Stresses are not finite at the apex.
pub fn lshape_solution(material: MaterialModel, k_i: f64, k_ii: f64) -> Result<ReferenceSolution> {
    let config = CornerConfig::l_shape(material);
    let modes = [
        (Eigenfield::new(config, Mode::I, corner_eigenvalue(config.opening, Mode::I)?), k_i),
        (Eigenfield::new(config, Mode::II, corner_eigenvalue(config.opening, Mode::II)?), k_ii),
    ];
    let eval = move |p: &Point2<f64>| {
        modes.iter().try_fold((Vector2::zeros(), VoigtStress::ZERO), |(u, s), (f, k)| {
            f.eval(p).map(|(fu, fs)| (u + fu * *k, s + fs * *k))
        })
    };
    Ok(ReferenceSolution::new(
        material,
        move |p| eval(p).map_or(Vector2::zeros(), |(u, _)| u),
        move |p| eval(p).map_or(VoigtStress::new(f64::NAN, f64::NAN, f64::NAN), |(_, s)| s),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elasticity::{equilibrium_residual, finite_difference_gradient, traction_projection, UnitNormal};

    fn steel() -> MaterialModel {
        MaterialModel::plane_strain(1000.0, 0.3).unwrap()
    }

    #[test]
    fn cylinder_outer_displacement() {
        let c = LameCylinder::pressurised(5.0, 20.0, 1.0, 0.0, steel()).unwrap();
        let ub = c.radial_displacement(20.0).unwrap();
        assert!((ub - 2.42666e-3).abs() < 1e-8, "{ub}");
        let (sa, _) = c.polar_stress(5.0).unwrap();
        let (sb, _) = c.polar_stress(20.0).unwrap();
        assert!((sa + 1.0).abs() < 1e-14 && sb.abs() < 1e-14);
        assert!(c.radial_displacement(4.0).is_err());
        assert!(c.polar_stress(20.5).is_err());
    }

    #[test]
    fn external_pressure_boundary_values() {
        let po = 0.7;
        let c = LameCylinder::pressurised(5.0, 20.0, 0.0, po, steel()).unwrap();
        assert!((c.polar_stress(20.0).unwrap().0 + po).abs() < 1e-14);
        assert!(c.polar_stress(5.0).unwrap().0.abs() < 1e-14);
    }

    #[test]
    fn prescribed_inner_displacement() {
        let c = LameCylinder::inner_displacement(5.0, 20.0, -0.3, 0.0, steel()).unwrap();
        assert!((c.radial_displacement(5.0).unwrap() + 0.3).abs() < 1e-14);
        assert!(c.polar_stress(20.0).unwrap().0.abs() < 1e-12);
        // Consistency with the pressure form: impose the pressurised solution's u_r(a).
        let p = LameCylinder::pressurised(5.0, 20.0, 1.0, 0.0, steel()).unwrap();
        let d = LameCylinder::inner_displacement(5.0, 20.0, p.radial_displacement(5.0).unwrap(), 0.0, steel()).unwrap();
        assert!((d.c1 - p.c1).abs() < 1e-12 && (d.c2 - p.c2).abs() < 1e-10);
    }

    #[test]
    fn cylinder_field_is_equilibrated_and_consistent() {
        for mode in [PlaneMode::PlaneStrain, PlaneMode::PlaneStress] {
            let mat = MaterialModel::new(1000.0, 0.3, mode).unwrap();
            let sol = LameCylinder::pressurised(5.0, 20.0, 1.0, 0.2, mat).unwrap().solution();
            for &(x, y) in &[(6.0, 1.0), (3.0, 9.0), (12.0, 12.0)] {
                let g = finite_difference_gradient(|a, b| sol.stress(&Point2::new(a, b)), x, y, 1e-5);
                assert!(equilibrium_residual(&g, Vector2::zeros()).norm() < 1e-8);
                // Strain from the displacement gradient against D⁻¹σ.
                let h = 1e-6;
                let du_dx = (sol.displacement(&Point2::new(x + h, y)) - sol.displacement(&Point2::new(x - h, y))) / (2.0 * h);
                let du_dy = (sol.displacement(&Point2::new(x, y + h)) - sol.displacement(&Point2::new(x, y - h))) / (2.0 * h);
                let eps = VoigtStrain::new(du_dx.x, du_dy.y, du_dx.y + du_dy.x);
                assert!((eps - sol.strain(&Point2::new(x, y))).max_abs() < 1e-9);
            }
            let p = Point2::new(5.0 * 0.6, 5.0 * 0.8);
            let n = UnitNormal::new(-0.6, -0.8).unwrap();
            assert!((traction_projection(sol.stress(&p), n) - n.as_vector() * -1.0).norm() < 1e-12);
        }
    }

    #[test]
    fn lshape_faces_are_free() {
        let sol = lshape_solution(steel(), 1.0, 1.0).unwrap();
        for x in [0.1, 0.5, 0.9] {
            let bottom = traction_projection(sol.stress(&Point2::new(x, 0.0)), UnitNormal::new(0.0, -1.0).unwrap());
            let right = traction_projection(sol.stress(&Point2::new(0.0, -x)), UnitNormal::new(1.0, 0.0).unwrap());
            assert!(bottom.norm() < 1e-10 && right.norm() < 1e-10);
        }
        assert!(!sol.stress(&Point2::origin()).is_finite());
        assert_eq!(sol.displacement(&Point2::origin()), Vector2::zeros());
    }
}
