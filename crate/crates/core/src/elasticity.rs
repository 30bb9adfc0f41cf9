//! Voigt-notation tensors, the isotropic constitutive law and the small set of
//! differential and projection operators shared by every other module.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

/// Symmetric 2D stress in Voigt order `(xx, yy, xy)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VoigtStress {
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
}

/// Symmetric 2D strain in Voigt order with engineering shear (`xy` is `2 ε_xy`).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VoigtStrain {
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
}

macro_rules! voigt_ops {
    ($t:ident) => {
        impl $t {
            pub const ZERO: $t = $t { xx: 0.0, yy: 0.0, xy: 0.0 };

            pub const fn new(xx: f64, yy: f64, xy: f64) -> Self {
                Self { xx, yy, xy }
            }

            pub fn from_vector(v: &Vector3<f64>) -> Self {
                Self::new(v[0], v[1], v[2])
            }

            pub fn to_vector(self) -> Vector3<f64> {
                Vector3::new(self.xx, self.yy, self.xy)
            }

            pub fn is_finite(&self) -> bool {
                self.xx.is_finite() && self.yy.is_finite() && self.xy.is_finite()
            }

            pub fn max_abs(&self) -> f64 {
                self.xx.abs().max(self.yy.abs()).max(self.xy.abs())
            }
        }

        impl Add for $t {
            type Output = $t;
            fn add(self, o: $t) -> $t {
                $t::new(self.xx + o.xx, self.yy + o.yy, self.xy + o.xy)
            }
        }

        impl Sub for $t {
            type Output = $t;
            fn sub(self, o: $t) -> $t {
                $t::new(self.xx - o.xx, self.yy - o.yy, self.xy - o.xy)
            }
        }

        impl AddAssign for $t {
            fn add_assign(&mut self, o: $t) {
                *self = *self + o;
            }
        }

        impl SubAssign for $t {
            fn sub_assign(&mut self, o: $t) {
                *self = *self - o;
            }
        }

        impl Neg for $t {
            type Output = $t;
            fn neg(self) -> $t {
                $t::new(-self.xx, -self.yy, -self.xy)
            }
        }

        impl Mul<f64> for $t {
            type Output = $t;
            fn mul(self, s: f64) -> $t {
                $t::new(self.xx * s, self.yy * s, self.xy * s)
            }
        }

        impl Mul<$t> for f64 {
            type Output = $t;
            fn mul(self, v: $t) -> $t {
                v * self
            }
        }
    };
}

voigt_ops!(VoigtStress);
voigt_ops!(VoigtStrain);

impl VoigtStress {
    /// Rotates a stress given in a frame whose x-axis sits at angle `angle`
    /// (counter-clockwise from global x) into the global frame.
    pub fn rotated(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let (c2, s2, cs) = (c * c, s * s, c * s);
        VoigtStress::new(
            c2 * self.xx + s2 * self.yy - 2.0 * cs * self.xy,
            s2 * self.xx + c2 * self.yy + 2.0 * cs * self.xy,
            cs * (self.xx - self.yy) + (c2 - s2) * self.xy,
        )
    }

    /// Stress from polar components `(σ_r, σ_φ, σ_rφ)` at polar angle `phi`.
    pub fn from_polar(srr: f64, spp: f64, srp: f64, phi: f64) -> Self {
        VoigtStress::new(srr, spp, srp).rotated(phi)
    }
}

/// Plane idealisation of the out-of-plane direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaneMode {
    PlaneStrain,
    PlaneStress,
}

/// Linear isotropic material.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialModel {
    youngs_modulus: f64,
    poisson_ratio: f64,
    mode: PlaneMode,
}

impl MaterialModel {
    pub fn new(youngs_modulus: f64, poisson_ratio: f64, mode: PlaneMode) -> Result<Self> {
        if !(youngs_modulus > 0.0 && youngs_modulus.is_finite()) {
            return Err(Error::InvalidMaterial(format!(
                "Young's modulus must be positive, got {youngs_modulus}"
            )));
        }
        if !(0.0..0.5).contains(&poisson_ratio) {
            return Err(Error::InvalidMaterial(format!(
                "Poisson ratio must lie in [0, 0.5), got {poisson_ratio}"
            )));
        }
        Ok(Self {
            youngs_modulus,
            poisson_ratio,
            mode,
        })
    }

    pub fn plane_strain(youngs_modulus: f64, poisson_ratio: f64) -> Result<Self> {
        Self::new(youngs_modulus, poisson_ratio, PlaneMode::PlaneStrain)
    }

    pub fn youngs_modulus(&self) -> f64 {
        self.youngs_modulus
    }

    pub fn poisson_ratio(&self) -> f64 {
        self.poisson_ratio
    }

    pub fn mode(&self) -> PlaneMode {
        self.mode
    }

    pub fn shear_modulus(&self) -> f64 {
        self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))
    }

    /// Kolosov constant.
    pub fn kolosov(&self) -> f64 {
        let nu = self.poisson_ratio;
        match self.mode {
            PlaneMode::PlaneStrain => 3.0 - 4.0 * nu,
            PlaneMode::PlaneStress => (3.0 - nu) / (1.0 + nu),
        }
    }

    /// Coefficients `(k, q)` of the stress form of the compatibility equation.
    pub fn compatibility_coefficients(&self) -> (f64, f64) {
        let nu = self.poisson_ratio;
        match self.mode {
            PlaneMode::PlaneStrain => (1.0 - nu * nu, 1.0 + nu),
            PlaneMode::PlaneStress => (1.0, 1.0),
        }
    }

    pub fn elasticity_matrix(&self) -> Matrix3<f64> {
        elasticity_matrix(self)
    }

    pub fn compliance_matrix(&self) -> Matrix3<f64> {
        let e = self.youngs_modulus;
        let nu = self.poisson_ratio;
        let g = self.shear_modulus();
        match self.mode {
            PlaneMode::PlaneStrain => {
                let f = (1.0 + nu) / e;
                Matrix3::new(
                    f * (1.0 - nu),
                    -f * nu,
                    0.0,
                    -f * nu,
                    f * (1.0 - nu),
                    0.0,
                    0.0,
                    0.0,
                    1.0 / g,
                )
            }
            PlaneMode::PlaneStress => Matrix3::new(
                1.0 / e,
                -nu / e,
                0.0,
                -nu / e,
                1.0 / e,
                0.0,
                0.0,
                0.0,
                1.0 / g,
            ),
        }
    }

    pub fn apply(&self, strain: VoigtStrain) -> VoigtStress {
        VoigtStress::from_vector(&(self.elasticity_matrix() * strain.to_vector()))
    }

    pub fn invert(&self, stress: VoigtStress) -> VoigtStrain {
        VoigtStrain::from_vector(&(self.compliance_matrix() * stress.to_vector()))
    }

    /// Energy pairing `s1ᵀ D⁻¹ s2`.
    pub fn energy_product(&self, s1: VoigtStress, s2: VoigtStress) -> f64 {
        s1.to_vector().dot(&(self.compliance_matrix() * s2.to_vector()))
    }
}

/// Isotropic plane elasticity matrix `D`.
pub fn elasticity_matrix(mat: &MaterialModel) -> Matrix3<f64> {
    let e = mat.youngs_modulus;
    let nu = mat.poisson_ratio;
    match mat.mode {
        PlaneMode::PlaneStrain => {
            let f = e / ((1.0 + nu) * (1.0 - 2.0 * nu));
            Matrix3::new(
                f * (1.0 - nu),
                f * nu,
                0.0,
                f * nu,
                f * (1.0 - nu),
                0.0,
                0.0,
                0.0,
                f * (1.0 - 2.0 * nu) / 2.0,
            )
        }
        PlaneMode::PlaneStress => {
            let f = e / (1.0 - nu * nu);
            Matrix3::new(f, f * nu, 0.0, f * nu, f, 0.0, 0.0, 0.0, f * (1.0 - nu) / 2.0)
        }
    }
}

/// `σ = D(ε − ε₀) + σ₀`.
pub fn stress_from_strain(
    mat: &MaterialModel,
    strain: VoigtStrain,
    eps0: VoigtStrain,
    sig0: VoigtStress,
) -> VoigtStress {
    mat.apply(strain - eps0) + sig0
}

/// `ε = D⁻¹(σ − σ₀) + ε₀`.
pub fn strain_from_stress(
    mat: &MaterialModel,
    stress: VoigtStress,
    eps0: VoigtStrain,
    sig0: VoigtStress,
) -> VoigtStrain {
    mat.invert(stress - sig0) + eps0
}

/// Unit vector, typically an outward boundary normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitNormal {
    nx: f64,
    ny: f64,
}

impl UnitNormal {
    /// Normalises `(nx, ny)`; fails on a zero vector.
    pub fn new(nx: f64, ny: f64) -> Result<Self> {
        let len = nx.hypot(ny);
        if !(len > 0.0 && len.is_finite()) {
            return Err(Error::InvalidInput(format!("cannot normalise ({nx}, {ny})")));
        }
        Ok(Self {
            nx: nx / len,
            ny: ny / len,
        })
    }

    pub fn from_angle(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self { nx: c, ny: s }
    }

    pub fn nx(&self) -> f64 {
        self.nx
    }

    pub fn ny(&self) -> f64 {
        self.ny
    }

    pub fn as_vector(&self) -> Vector2<f64> {
        Vector2::new(self.nx, self.ny)
    }

    /// Tangent obtained by a counter-clockwise quarter turn.
    pub fn tangent(&self) -> Vector2<f64> {
        Vector2::new(-self.ny, self.nx)
    }
}

/// Traction `G σ` on a facet with normal `n`.
pub fn traction_projection(sigma: VoigtStress, n: UnitNormal) -> Vector2<f64> {
    Vector2::new(
        n.nx * sigma.xx + n.ny * sigma.xy,
        n.ny * sigma.yy + n.nx * sigma.xy,
    )
}

/// Spatial gradient of a stress field at a point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StressGradient {
    pub d_dx: VoigtStress,
    pub d_dy: VoigtStress,
}

/// `Lᵀσ + b` at a point.
pub fn equilibrium_residual(grad: &StressGradient, body_force: Vector2<f64>) -> Vector2<f64> {
    Vector2::new(
        grad.d_dx.xx + grad.d_dy.xy + body_force.x,
        grad.d_dx.xy + grad.d_dy.yy + body_force.y,
    )
}

/// Central-difference gradient of an arbitrary stress field.
pub fn finite_difference_gradient<F>(field: F, x: f64, y: f64, step: f64) -> StressGradient
where
    F: Fn(f64, f64) -> VoigtStress,
{
    let inv = 0.5 / step;
    StressGradient {
        d_dx: (field(x + step, y) - field(x - step, y)) * inv,
        d_dy: (field(x, y + step) - field(x, y - step)) * inv,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn steel() -> MaterialModel {
        MaterialModel::plane_strain(1000.0, 0.3).unwrap()
    }

    #[test]
    fn plane_strain_matrix_matches_closed_form() {
        let d = steel().elasticity_matrix();
        assert!((d[(0, 0)] - 1346.153846153846).abs() < 1e-9);
        assert!((d[(1, 1)] - 1346.153846153846).abs() < 1e-9);
        assert!((d[(0, 1)] - 576.9230769230769).abs() < 1e-9);
        assert!((d[(2, 2)] - 384.6153846153846).abs() < 1e-9);
    }

    #[test]
    fn zero_poisson_decouples() {
        let d = MaterialModel::plane_strain(1.0, 0.0).unwrap().elasticity_matrix();
        assert_eq!(d, Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.5)));
    }

    #[test]
    fn rejects_incompressible_limit() {
        assert!(MaterialModel::plane_strain(1.0, 0.5).is_err());
        assert!(MaterialModel::plane_strain(-1.0, 0.2).is_err());
    }

    #[test]
    fn compatibility_coefficients_plane_strain() {
        // Oracle: E times the compliance entries, E·C11 = k and E·C12 = −ν q.
        let m = steel();
        let c = m.compliance_matrix() * m.youngs_modulus();
        let (k, q) = m.compatibility_coefficients();
        assert!((k - c[(0, 0)]).abs() < 1e-13 && (k - 0.91).abs() < 1e-15);
        assert!((-0.3 * q - c[(0, 1)]).abs() < 1e-13);
        assert!((2.0 * q - c[(2, 2)]).abs() < 1e-13);
        let ps = MaterialModel::new(1.0, 0.3, PlaneMode::PlaneStress).unwrap();
        assert_eq!(ps.compatibility_coefficients(), (1.0, 1.0));
    }

    #[test]
    fn constitutive_offsets() {
        let m = steel();
        let e = VoigtStrain::new(1e-3, -2e-3, 5e-4);
        assert!(stress_from_strain(&m, e, e, VoigtStress::ZERO).max_abs() < 1e-14);
        let s = VoigtStress::new(1.0, 2.0, 3.0);
        assert_eq!(
            stress_from_strain(&m, VoigtStrain::ZERO, VoigtStrain::ZERO, s),
            s
        );
        let unit = MaterialModel::plane_strain(1.0, 0.0).unwrap();
        let out = stress_from_strain(
            &unit,
            VoigtStrain::new(1.0, 0.0, 0.0),
            VoigtStrain::ZERO,
            VoigtStress::ZERO,
        );
        assert_eq!(out, VoigtStress::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn axis_aligned_tractions() {
        let s = VoigtStress::new(1.5, -2.0, 0.25);
        let t = traction_projection(s, UnitNormal::new(1.0, 0.0).unwrap());
        assert_eq!(t, Vector2::new(1.5, 0.25));
        let t = traction_projection(s, UnitNormal::new(0.0, 1.0).unwrap());
        assert_eq!(t, Vector2::new(0.25, -2.0));
    }

    #[test]
    fn cylinder_inner_traction_is_unit_pressure() {
        // Lamé solution with a = 5, b = 20, P = 1: σ_r = A(1 − b²/r²), σ_φ = A(1 + b²/r²)
        let a_coef: f64 = 1.0 / 15.0;
        let phi: f64 = 0.3;
        let r: f64 = 5.0;
        let srr = a_coef * (1.0 - 400.0 / (r * r));
        let spp = a_coef * (1.0 + 400.0 / (r * r));
        assert!((srr + 1.0).abs() < 1e-14);
        let s = VoigtStress::from_polar(srr, spp, 0.0, phi);
        let inward = UnitNormal::from_angle(phi + std::f64::consts::PI);
        let t = traction_projection(s, inward);
        assert!((t.norm() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn equilibrium_of_simple_fields() {
        let g = StressGradient::default();
        assert_eq!(equilibrium_residual(&g, Vector2::zeros()), Vector2::zeros());
        let g = StressGradient {
            d_dx: VoigtStress::new(1.0, 0.0, 0.0),
            d_dy: VoigtStress::ZERO,
        };
        assert_eq!(
            equilibrium_residual(&g, Vector2::new(-1.0, 0.0)),
            Vector2::zeros()
        );
    }

    #[test]
    fn cylinder_stress_is_divergence_free() {
        // Cartesian form: σxx = A − B(x²−y²)/r⁴, σyy = A + B(x²−y²)/r⁴, σxy = −2Bxy/r⁴
        let a = 1.0 / 15.0;
        let b = a * 400.0;
        let grad = |x: f64, y: f64| {
            let r2 = x * x + y * y;
            let r6 = r2 * r2 * r2;
            let d = x * x - y * y;
            // ∂/∂x [d/r⁴] = (2x r² − 4x d)/r⁶, ∂/∂y [d/r⁴] = (−2y r² − 4y d)/r⁶
            let ddx = (2.0 * x * r2 - 4.0 * x * d) / r6;
            let ddy = (-2.0 * y * r2 - 4.0 * y * d) / r6;
            // ∂/∂x [xy/r⁴] = (y r² − 4x²y)/r⁶, ∂/∂y [xy/r⁴] = (x r² − 4xy²)/r⁶
            let pdx = (y * r2 - 4.0 * x * x * y) / r6;
            let pdy = (x * r2 - 4.0 * x * y * y) / r6;
            StressGradient {
                d_dx: VoigtStress::new(-b * ddx, b * ddx, -2.0 * b * pdx),
                d_dy: VoigtStress::new(-b * ddy, b * ddy, -2.0 * b * pdy),
            }
        };
        for &(x, y) in &[(5.0, 0.1), (3.0, 9.0), (12.0, 7.5), (0.5, 19.0)] {
            let r = equilibrium_residual(&grad(x, y), Vector2::zeros());
            assert!(r.norm() < 1e-10, "{r:?}");
        }
    }

    proptest! {
        #[test]
        fn elasticity_matrix_is_spd(e in 1e-3f64..1e6, nu in 0.0f64..0.499, strain in prop::bool::ANY) {
            let mode = if strain { PlaneMode::PlaneStrain } else { PlaneMode::PlaneStress };
            let m = MaterialModel::new(e, nu, mode).unwrap();
            let d = m.elasticity_matrix();
            prop_assert!((d - d.transpose()).norm() <= 1e-12 * d.norm());
            prop_assert!(d.cholesky().is_some());
        }

        #[test]
        fn strain_stress_round_trip(
            e in 1.0f64..1e4, nu in 0.0f64..0.49,
            s in prop::array::uniform3(-10.0f64..10.0),
            e0 in prop::array::uniform3(-1e-2f64..1e-2),
            s0 in prop::array::uniform3(-10.0f64..10.0),
        ) {
            let m = MaterialModel::plane_strain(e, nu).unwrap();
            let strain = VoigtStrain::new(s[0] / e, s[1] / e, s[2] / e);
            let eps0 = VoigtStrain::new(e0[0], e0[1], e0[2]);
            let sig0 = VoigtStress::new(s0[0], s0[1], s0[2]);
            let sigma = stress_from_strain(&m, strain, eps0, sig0);
            let back = strain_from_stress(&m, sigma, eps0, sig0);
            prop_assert!((back - strain).max_abs() <= 1e-12 * (1.0 + strain.max_abs() + eps0.max_abs()));
        }

        #[test]
        fn traction_is_linear(
            a in prop::array::uniform3(-5.0f64..5.0),
            b in prop::array::uniform3(-5.0f64..5.0),
            k in -3.0f64..3.0, ang in 0.0f64..6.3,
        ) {
            let n = UnitNormal::from_angle(ang);
            let sa = VoigtStress::new(a[0], a[1], a[2]);
            let sb = VoigtStress::new(b[0], b[1], b[2]);
            let lhs = traction_projection(sa * k + sb, n);
            let rhs = traction_projection(sa, n) * k + traction_projection(sb, n);
            prop_assert!((lhs - rhs).norm() < 1e-12);
        }
    }
}
