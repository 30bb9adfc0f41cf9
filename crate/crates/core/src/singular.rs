//! Corner eigenfields, generalised stress intensity factor extraction and the
//! singular part used to split recovered stresses near a reentrant corner.

use std::f64::consts::PI;

use nalgebra::{Point2, Rotation2, Vector2};

use crate::elasticity::{MaterialModel, VoigtStrain, VoigtStress};
use crate::error::{Error, Result};
use crate::fem::{FEField, LoadSet, Site};
use crate::mesh::QuadtreeMesh;
use crate::quadrature::gauss_legendre;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    /// Symmetric about the corner bisector.
    I,
    /// Antisymmetric about the corner bisector.
    II,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::I => "I",
            Mode::II => "II",
        }
    }
}

fn characteristic(lambda: f64, omega: f64, mode: Mode) -> f64 {
    let sign = if mode == Mode::I { 1.0 } else { -1.0 };
    (lambda * omega).sin() + sign * lambda * omega.sin()
}

/// Smallest root in `(0, 1]` of `sin(λω) ± λ sin ω = 0` (`+` for mode I).
/// The rigid-rotation root `λ = 1` of mode II is not a singular mode and is skipped.
pub fn corner_eigenvalue(omega: f64, mode: Mode) -> Result<f64> {
    if !(omega > 0.0 && omega <= 2.0 * PI + 1e-12) {
        return Err(Error::InvalidInput(format!("opening angle {omega} outside (0, 2π]")));
    }
    let f = |l: f64| characteristic(l, omega, mode);
    let steps = 4000;
    let upper = if mode == Mode::II { 1.0 - 1e-9 } else { 1.0 };
    let mut a = 1e-9;
    let mut fa = f(a);
    for k in 1..=steps {
        let b = 1e-9 + (upper - 1e-9) * k as f64 / steps as f64;
        let fb = f(b);
        if fb == 0.0 {
            return Ok(b);
        }
        if fa * fb < 0.0 {
            let (mut lo, mut hi, mut flo) = (a, b, fa);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let fm = f(mid);
                if (fm < 0.0) == (flo < 0.0) {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-16 {
                    break;
                }
            }
            return Ok(0.5 * (lo + hi));
        }
        a = b;
        fa = fb;
    }
    if mode == Mode::I && f(1.0).abs() < 1e-12 {
        return Ok(1.0);
    }
    Err(Error::NonSingular { opening: omega, mode: mode.name() })
}

/// Reentrant or crack corner with faces at `±ω/2` about the bisector direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerConfig {
    pub apex: Point2<f64>,
    pub opening: f64,
    /// Global angle of the bisector pointing into the material.
    pub bisector: f64,
    pub material: MaterialModel,
}

impl CornerConfig {
    pub fn new(apex: Point2<f64>, opening: f64, bisector: f64, material: MaterialModel) -> Result<Self> {
        if !(opening > 0.0 && opening <= 2.0 * PI + 1e-12) {
            return Err(Error::InvalidInput(format!("opening angle {opening} outside (0, 2π]")));
        }
        Ok(Self { apex, opening, bisector, material })
    }

    /// Corner at the origin of the L-shaped domain (material over angles `[0, 3π/2]`).
    pub fn l_shape(material: MaterialModel) -> Self {
        Self { apex: Point2::origin(), opening: 1.5 * PI, bisector: 0.75 * PI, material }
    }

    /// Distance to the apex and angle from the bisector in `(-π, π]`.
    pub fn local_polar(&self, p: &Point2<f64>) -> (f64, f64) {
        let d = p - self.apex;
        let mut theta = d.y.atan2(d.x) - self.bisector;
        while theta > PI {
            theta -= 2.0 * PI;
        }
        while theta <= -PI {
            theta += 2.0 * PI;
        }
        (d.norm(), theta)
    }
}

/// One eigenfunction of the corner with exponent `λ` (singular or auxiliary).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigenfield {
    pub mode: Mode,
    pub lambda: f64,
    q: f64,
    config: CornerConfig,
}

impl Eigenfield {
    pub fn new(config: CornerConfig, mode: Mode, lambda: f64) -> Self {
        let alpha = 0.5 * config.opening;
        let (lm, lp) = ((lambda - 1.0) * alpha, (lambda + 1.0) * alpha);
        // Either face condition determines the coefficient; use the better conditioned one.
        let (num1, den1, num2, den2) = match mode {
            Mode::I => (-lm.cos(), lp.cos(), -(lambda - 1.0) * lm.sin(), (lambda + 1.0) * lp.sin()),
            Mode::II => (-lm.sin(), lp.sin(), -(lambda - 1.0) * lm.cos(), (lambda + 1.0) * lp.cos()),
        };
        let q = if den1.abs() >= den2.abs() { num1 / den1 } else { num2 / den2 };
        Self { mode, lambda, q, config }
    }

    /// Displacement and stress of unit amplitude in the global frame.
    pub fn eval(&self, p: &Point2<f64>) -> Result<(Vector2<f64>, VoigtStress)> {
        let (r, th) = self.config.local_polar(p);
        if r <= 1e-14 * (1.0 + self.config.apex.coords.norm()) {
            return Err(Error::AtSingularPoint);
        }
        let (l, q) = (self.lambda, self.q);
        let mat = &self.config.material;
        let kappa = mat.kolosov();
        let g2 = 2.0 * mat.shear_modulus();
        let ru = r.powf(l) / g2;
        let rs = l * r.powf(l - 1.0);
        let (u, s) = match self.mode {
            Mode::I => (
                Vector2::new(
                    ru * ((kappa - q * (l + 1.0)) * (l * th).cos() - l * ((l - 2.0) * th).cos()),
                    ru * ((kappa + q * (l + 1.0)) * (l * th).sin() + l * ((l - 2.0) * th).sin()),
                ),
                VoigtStress::new(
                    rs * ((2.0 - q * (l + 1.0)) * ((l - 1.0) * th).cos() - (l - 1.0) * ((l - 3.0) * th).cos()),
                    rs * ((2.0 + q * (l + 1.0)) * ((l - 1.0) * th).cos() + (l - 1.0) * ((l - 3.0) * th).cos()),
                    rs * ((l - 1.0) * ((l - 3.0) * th).sin() + q * (l + 1.0) * ((l - 1.0) * th).sin()),
                ),
            ),
            Mode::II => (
                Vector2::new(
                    ru * ((kappa - q * (l + 1.0)) * (l * th).sin() - l * ((l - 2.0) * th).sin()),
                    -ru * ((kappa + q * (l + 1.0)) * (l * th).cos() + l * ((l - 2.0) * th).cos()),
                ),
                VoigtStress::new(
                    rs * ((2.0 - q * (l + 1.0)) * ((l - 1.0) * th).sin() - (l - 1.0) * ((l - 3.0) * th).sin()),
                    rs * ((2.0 + q * (l + 1.0)) * ((l - 1.0) * th).sin() + (l - 1.0) * ((l - 3.0) * th).sin()),
                    -rs * ((l - 1.0) * ((l - 3.0) * th).cos() + q * (l + 1.0) * ((l - 1.0) * th).cos()),
                ),
            ),
        };
        let rot = Rotation2::new(self.config.bisector);
        Ok((rot * u, s.rotated(self.config.bisector)))
    }
}

/// Singular mode with GSIF `k` at point `p`.
pub fn asymptotic_fields(
    config: &CornerConfig,
    mode: Mode,
    k: f64,
    p: &Point2<f64>,
) -> Result<(Vector2<f64>, VoigtStress)> {
    let lambda = corner_eigenvalue(config.opening, mode)?;
    let (u, s) = Eigenfield::new(*config, mode, lambda).eval(p)?;
    Ok((u * k, s * k))
}

/// Quartic plateau `q(s) = 1 − 6s² + 8s³ − 3s⁴` on `s ∈ [0, 1]`.
pub fn plateau(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    1.0 - s * s * (6.0 - 8.0 * s + 3.0 * s * s)
}

fn plateau_derivative(s: f64) -> f64 {
    if !(0.0..=1.0).contains(&s) {
        return 0.0;
    }
    -12.0 * s * (1.0 - s) * (1.0 - s)
}

/// Annulus `r1 < r < r2` carrying the gradient of the plateau weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractionDomain {
    pub r1: f64,
    pub r2: f64,
}

impl ExtractionDomain {
    pub fn new(r1: f64, r2: f64) -> Result<Self> {
        if !(r1 > 0.0 && r2 > r1) {
            return Err(Error::InvalidInput(format!("extraction radii need 0 < r1 < r2, got {r1}, {r2}")));
        }
        Ok(Self { r1, r2 })
    }

    /// Weight `q` at distance `r` from the apex.
    pub fn weight(&self, r: f64) -> f64 {
        plateau((r - self.r1) / (self.r2 - self.r1))
    }

    pub fn weight_derivative(&self, r: f64) -> f64 {
        plateau_derivative((r - self.r1) / (self.r2 - self.r1)) / (self.r2 - self.r1)
    }

    fn gradient(&self, config: &CornerConfig, p: &Point2<f64>) -> Vector2<f64> {
        let d = p - config.apex;
        let r = d.norm();
        if r <= self.r1 || r >= self.r2 {
            return Vector2::zeros();
        }
        d * (self.weight_derivative(r) / r)
    }
}

/// Interaction-integral extractor for one mode, normalised so that the unit
/// eigenfield returns exactly one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GsifExtractor {
    pub config: CornerConfig,
    pub mode: Mode,
    pub domain: ExtractionDomain,
    pub lambda: f64,
    constant: f64,
    aux: Eigenfield,
}

/// Element quadrature points per direction for extraction integrals.
pub const EXTRACTION_ORDER: usize = 10;

impl GsifExtractor {
    pub fn new(config: CornerConfig, mode: Mode, domain: ExtractionDomain) -> Result<Self> {
        let lambda = corner_eigenvalue(config.opening, mode)?;
        let aux = Eigenfield::new(config, mode, -lambda);
        let mut ex = Self { config, mode, domain, lambda, constant: 1.0, aux };
        let unit = Eigenfield::new(config, mode, lambda);
        // The integral is independent of the annulus, so calibrate on a fixed one.
        let calib = Self { domain: ExtractionDomain::new(1.0, 2.0)?, ..ex };
        ex.constant = calib.integrate_polar(|p| unit.eval(p))?;
        Ok(ex)
    }

    /// Extraction constant `C`.
    pub fn constant(&self) -> f64 {
        self.constant
    }

    fn integrand(&self, p: &Point2<f64>, u: Vector2<f64>, s: VoigtStress) -> Result<f64> {
        let g = self.domain.gradient(&self.config, p);
        if g == Vector2::zeros() {
            return Ok(0.0);
        }
        let (ua, sa) = self.aux.eval(p)?;
        // (σ_jk u_k^aux − σ^aux_jk u_k) q_,j
        let w = |s: &VoigtStress, u: &Vector2<f64>| {
            g.x * (s.xx * u.x + s.xy * u.y) + g.y * (s.xy * u.x + s.yy * u.y)
        };
        Ok(-(w(&s, &ua) - w(&sa, &u)) / self.constant)
    }

    /// Extraction on an arbitrary field by polar Gauss quadrature over the
    /// annulus restricted to the material wedge.
    pub fn integrate_polar<F>(&self, field: F) -> Result<f64>
    where
        F: Fn(&Point2<f64>) -> Result<(Vector2<f64>, VoigtStress)>,
    {
        let alpha = 0.5 * self.config.opening;
        let g = gauss_legendre(16);
        let (r1, r2) = (self.domain.r1, self.domain.r2);
        let segments = 16;
        let mut total = 0.0;
        for seg in 0..segments {
            let t0 = -alpha + 2.0 * alpha * seg as f64 / segments as f64;
            let dt = 2.0 * alpha / segments as f64;
            for &(xr, wr) in g {
                let r = r1 + 0.5 * (xr + 1.0) * (r2 - r1);
                for &(xt, wt) in g {
                    let th = t0 + 0.5 * (xt + 1.0) * dt + self.config.bisector;
                    let p = self.config.apex + Vector2::new(th.cos(), th.sin()) * r;
                    let (u, s) = field(&p)?;
                    total += self.integrand(&p, u, s)? * r * wr * wt * 0.25 * (r2 - r1) * dt;
                }
            }
        }
        Ok(total)
    }

    /// Elements of `mesh` whose sample points reach into the annulus.
    pub fn elements_in_annulus(&self, mesh: &QuadtreeMesh) -> Vec<usize> {
        (0..mesh.num_elements())
            .filter(|&e| {
                let (mut rmin, mut rmax) = (f64::INFINITY, 0.0_f64);
                for k in 0..=4 {
                    for l in 0..=4 {
                        let p = mesh.element_point(e, -1.0 + 0.5 * k as f64, -1.0 + 0.5 * l as f64);
                        let r = (p - self.config.apex).norm();
                        rmin = rmin.min(r);
                        rmax = rmax.max(r);
                    }
                }
                let h = mesh.element_size(e);
                rmax + h > self.domain.r1 && rmin - h < self.domain.r2
            })
            .collect()
    }

    /// Checks that the annulus lies inside the meshed domain.
    pub fn check_domain(&self, mesh: &QuadtreeMesh) -> Result<()> {
        let alpha = 0.5 * self.config.opening;
        let geo = mesh.geometry();
        for k in 0..=32 {
            let th = self.config.bisector - alpha + 2.0 * alpha * k as f64 / 32.0;
            let p = self.config.apex + Vector2::new(th.cos(), th.sin()) * self.domain.r2;
            let inside = mesh.nodes().iter().any(|n| (n - p).norm() < 1e-9)
                || point_inside(geo, &p, &self.config);
            if !inside {
                return Err(Error::ExtractionDomain(format!(
                    "point ({:.4}, {:.4}) at r2 = {} is outside the mesh",
                    p.x, p.y, self.domain.r2
                )));
            }
        }
        Ok(())
    }

    /// Extraction from element samplers with a tensor rule of [`EXTRACTION_ORDER`].
    pub fn integrate_mesh<F>(&self, mesh: &QuadtreeMesh, field: F) -> Result<f64>
    where
        F: Fn(usize, f64, f64) -> (Vector2<f64>, VoigtStress),
    {
        self.check_domain(mesh)?;
        let mut total = 0.0;
        for e in self.elements_in_annulus(mesh) {
            for q in mesh.element_quadrature(e, EXTRACTION_ORDER)? {
                let (u, s) = field(e, q.s, q.t);
                total += q.weight * self.integrand(&q.x, u, s)?;
            }
        }
        Ok(total)
    }

    /// GSIF of an FE solution, using `σ(u^h) = D ε(u^h)`.
    pub fn extract(&self, field: &FEField) -> Result<f64> {
        let mat = *field.material();
        self.integrate_mesh(field.mesh(), |e, s, t| {
            (field.displacement_at(e, s, t), mat.apply(field.strain_at(e, s, t)))
        })
    }

    /// Dual loads whose work on `v` equals the extraction integral of `v`.
    pub fn dual_loads(&self) -> LoadSet {
        let ex = *self;
        let ex2 = *self;
        LoadSet::new()
            .with_initial_strain(move |site: &Site| {
                let g = ex.domain.gradient(&ex.config, &site.x);
                if g == Vector2::zeros() {
                    return VoigtStrain::ZERO;
                }
                let (ua, _) = ex.aux.eval(&site.x).expect("annulus excludes the apex");
                VoigtStrain::new(ua.x * g.x, ua.y * g.y, ua.y * g.x + ua.x * g.y) * (-1.0 / ex.constant)
            })
            .with_body_force(move |site: &Site| {
                let g = ex2.domain.gradient(&ex2.config, &site.x);
                if g == Vector2::zeros() {
                    return Vector2::zeros();
                }
                let (_, sa) = ex2.aux.eval(&site.x).expect("annulus excludes the apex");
                Vector2::new(sa.xx * g.x + sa.xy * g.y, sa.xy * g.x + sa.yy * g.y) / ex2.constant
            })
            .with_quadrature_order(EXTRACTION_ORDER)
    }
}

fn point_inside(geo: &crate::geometry::GeometryMap, p: &Point2<f64>, config: &CornerConfig) -> bool {
    match geo.kind() {
        crate::geometry::GeometryKind::PolygonIdentity { vertices } => {
            let xmin = vertices.iter().map(|v| v.x).fold(f64::INFINITY, f64::min);
            let xmax = vertices.iter().map(|v| v.x).fold(f64::NEG_INFINITY, f64::max);
            let ymin = vertices.iter().map(|v| v.y).fold(f64::INFINITY, f64::min);
            let ymax = vertices.iter().map(|v| v.y).fold(f64::NEG_INFINITY, f64::max);
            let eps = 1e-12;
            let in_box = p.x >= xmin - eps && p.x <= xmax + eps && p.y >= ymin - eps && p.y <= ymax + eps;
            let (_, th) = config.local_polar(p);
            in_box && th.abs() <= 0.5 * config.opening + 1e-12
        }
        crate::geometry::GeometryKind::AnnulusQuarter { inner, outer } => {
            let r = p.coords.norm();
            r >= inner - 1e-12 && r <= outer + 1e-12 && p.x >= -1e-12 && p.y >= -1e-12
        }
    }
}

/// Singular stress `Σ K_m σ_m` subtracted before, and restored after, smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularPart {
    pub config: CornerConfig,
    pub modes: Vec<(Eigenfield, f64)>,
    /// Only patches whose vertex lies within this distance of the apex are split.
    pub radius: f64,
}

impl SingularPart {
    /// Estimates the GSIFs of `field` and builds the singular part.
    pub fn from_field(
        field: &FEField,
        config: CornerConfig,
        domain: ExtractionDomain,
        radius: f64,
    ) -> Result<Self> {
        let mut modes = Vec::new();
        for mode in [Mode::I, Mode::II] {
            match GsifExtractor::new(config, mode, domain) {
                Ok(ex) => modes.push((Eigenfield::new(config, mode, ex.lambda), ex.extract(field)?)),
                Err(Error::NonSingular { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(Self { config, modes, radius })
    }

    pub fn with_factors(config: CornerConfig, factors: &[(Mode, f64)], radius: f64) -> Result<Self> {
        let modes = factors
            .iter()
            .map(|&(m, k)| Ok((Eigenfield::new(config, m, corner_eigenvalue(config.opening, m)?), k)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, modes, radius })
    }

    pub fn factor(&self, mode: Mode) -> Option<f64> {
        self.modes.iter().find(|(f, _)| f.mode == mode).map(|&(_, k)| k)
    }

    /// Singular stress at `p`; zero at the apex itself.
    pub fn stress(&self, p: &Point2<f64>) -> VoigtStress {
        self.modes
            .iter()
            .map(|(f, k)| f.eval(p).map(|(_, s)| s * *k).unwrap_or(VoigtStress::ZERO))
            .fold(VoigtStress::ZERO, |a, b| a + b)
    }

    pub fn applies_to(&self, p: &Point2<f64>) -> bool {
        (p - self.config.apex).norm() <= self.radius
    }
}

/// FE stress minus the singular part inside the splitting radius.
pub fn split_singular_smooth<'a>(field: &'a FEField, part: &'a SingularPart) -> impl Fn(usize, f64, f64) -> VoigtStress + 'a {
    move |e, s, t| {
        let sigma = field.stress_at(e, s, t);
        let p = field.mesh().element_point(e, s, t);
        if part.applies_to(&p) {
            sigma - part.stress(&p)
        } else {
            sigma
        }
    }
}
