//! Patch recovery of a continuous stress field from an FE solution.
//!
//! Each vertex patch gets a polynomial fitted by least squares to the FE stresses
//! at the Gauss points of its elements. In [`RecoveryMode::SprCx`] the fit is
//! subject to equilibrium, boundary traction and compatibility constraints, initial
//! stresses and strains are removed before fitting and restored afterwards, and a
//! known singular part can be split off near a corner. The patch polynomials are
//! blended with the constrained vertex shape functions.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Point2, Vector2};
use rayon::prelude::*;

use crate::elasticity::{
    equilibrium_residual, finite_difference_gradient, traction_projection, MaterialModel, StressGradient,
    UnitNormal, VoigtStress,
};
use crate::error::{Error, Result};
use crate::fem::{FEField, LoadSet, Site, TractionFn};
use crate::mesh::{bilinear, Patch, QuadPoint, QuadtreeMesh, Region};
use crate::quadrature::tensor_rule;
use crate::singular::SingularPart;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecoveryMode {
    /// Constrained fits with initial-field removal, interface and singular splitting.
    SprCx,
    /// Unconstrained least squares on the raw FE stresses.
    Spr,
}

impl RecoveryMode {
    pub fn name(self) -> &'static str {
        match self {
            RecoveryMode::SprCx => "spr-cx",
            RecoveryMode::Spr => "spr",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RecoveryOptions {
    pub mode: RecoveryMode,
    /// Polynomial degree, 1 or 2.
    pub degree: usize,
    /// Root cells on one side of a material or load interface; patches crossing
    /// it get one polynomial per side.
    pub interface: Option<Region>,
    pub singular: Option<SingularPart>,
}

impl RecoveryOptions {
    pub fn new(mode: RecoveryMode) -> Self {
        Self { mode, degree: 1, interface: None, singular: None }
    }

    pub fn spr_cx() -> Self {
        Self::new(RecoveryMode::SprCx)
    }

    pub fn spr() -> Self {
        Self::new(RecoveryMode::Spr)
    }

    pub fn with_degree(mut self, degree: usize) -> Self {
        self.degree = degree;
        self
    }

    pub fn with_interface(mut self, region: Region) -> Self {
        self.interface = Some(region);
        self
    }

    pub fn with_singular(mut self, part: SingularPart) -> Self {
        self.singular = Some(part);
        self
    }
}

/// Complete monomial basis of degree `p` in coordinates centred on a patch vertex
/// and scaled by the patch half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalBasis {
    pub degree: usize,
    pub center: Point2<f64>,
    pub scale: f64,
}

impl LocalBasis {
    pub fn new(degree: usize, center: Point2<f64>, scale: f64) -> Result<Self> {
        if !(1..=2).contains(&degree) {
            return Err(Error::InvalidInput(format!("recovery degree {degree} not in 1..=2")));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidInput(format!("patch scale {scale} must be positive")));
        }
        Ok(Self { degree, center, scale })
    }

    pub fn size(&self) -> usize {
        (self.degree + 1) * (self.degree + 2) / 2
    }

    fn local(&self, x: &Point2<f64>) -> (f64, f64) {
        ((x.x - self.center.x) / self.scale, (x.y - self.center.y) / self.scale)
    }

    pub fn values(&self, x: &Point2<f64>) -> Vec<f64> {
        let (u, v) = self.local(x);
        let mut out = vec![1.0, u, v];
        if self.degree == 2 {
            out.extend_from_slice(&[u * u, u * v, v * v]);
        }
        out
    }

    /// Physical `∂/∂x` and `∂/∂y` of every basis function.
    pub fn gradients(&self, x: &Point2<f64>) -> (Vec<f64>, Vec<f64>) {
        let (u, v) = self.local(x);
        let h = 1.0 / self.scale;
        let mut dx = vec![0.0, h, 0.0];
        let mut dy = vec![0.0, 0.0, h];
        if self.degree == 2 {
            dx.extend_from_slice(&[2.0 * u * h, v * h, 0.0]);
            dy.extend_from_slice(&[0.0, u * h, 2.0 * v * h]);
        }
        (dx, dy)
    }

    /// Second derivatives `(∂xx, ∂xy, ∂yy)`; constant for these degrees.
    pub fn hessians(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let m = self.size();
        let (mut xx, mut xy, mut yy) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        if self.degree == 2 {
            let h2 = 1.0 / (self.scale * self.scale);
            xx[3] = 2.0 * h2;
            xy[4] = h2;
            yy[5] = 2.0 * h2;
        }
        (xx, xy, yy)
    }
}

/// Stress polynomial `σ̂(x) = P(x) A` with `A = (a_xx, a_yy, a_xy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPolynomial {
    pub basis: LocalBasis,
    pub coefficients: DVector<f64>,
}

impl PatchPolynomial {
    pub fn new(basis: LocalBasis, coefficients: DVector<f64>) -> Result<Self> {
        if coefficients.len() != 3 * basis.size() {
            return Err(Error::InvalidInput(format!(
                "{} coefficients for a basis of size {}",
                coefficients.len(),
                basis.size()
            )));
        }
        Ok(Self { basis, coefficients })
    }

    fn component(&self, c: usize, w: &[f64]) -> f64 {
        let m = w.len();
        self.coefficients.rows(c * m, m).iter().zip(w).map(|(a, b)| a * b).sum()
    }

    fn combine(&self, w: &[f64]) -> VoigtStress {
        VoigtStress::new(self.component(0, w), self.component(1, w), self.component(2, w))
    }

    pub fn eval(&self, x: &Point2<f64>) -> VoigtStress {
        self.combine(&self.basis.values(x))
    }

    pub fn gradient(&self, x: &Point2<f64>) -> StressGradient {
        let (dx, dy) = self.basis.gradients(x);
        StressGradient { d_dx: self.combine(&dx), d_dy: self.combine(&dy) }
    }

    /// Value of the compatibility operator of [`compatibility_rows`].
    pub fn compatibility_residual(&self, material: &MaterialModel) -> f64 {
        compatibility_rows(&self.basis, material)
            .first()
            .map_or(0.0, |row| row.coefficients.iter().zip(self.coefficients.iter()).map(|(a, b)| a * b).sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    Internal,
    Boundary,
    Interface,
    Compatibility,
}

/// One linear condition `coefficients · A = rhs` on a patch polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub kind: ConstraintKind,
    pub coefficients: Vec<f64>,
    pub rhs: f64,
}

fn stress_row(m: usize, weights: [(usize, &[f64], f64); 2]) -> Vec<f64> {
    let mut row = vec![0.0; 3 * m];
    for (c, w, f) in weights {
        for j in 0..m {
            row[c * m + j] += f * w[j];
        }
    }
    row
}

fn collinear(points: &[Point2<f64>], scale: f64) -> bool {
    let a = points[0];
    let Some(b) = points.iter().skip(1).find(|p| (*p - a).norm() > 1e-9 * scale) else {
        return true;
    };
    points.iter().all(|p| {
        let (u, v) = (b - a, p - a);
        (u.x * v.y - u.y * v.x).abs() <= 1e-9 * scale * scale
    })
}

/// Rows `Lᵀσ̂(x_k) = d_k`, two per point. `divergence` is the required divergence of
/// the fitted part, i.e. `−(b̂ + Lᵀs₀)`.
pub fn internal_equilibrium_rows(
    basis: &LocalBasis,
    points: &[Point2<f64>],
    divergence: &[Vector2<f64>],
) -> Result<Vec<ConstraintRow>> {
    if points.len() != divergence.len() {
        return Err(Error::InvalidInput("one divergence value per point".into()));
    }
    if points.len() >= 3 && collinear(points, basis.scale) {
        return Err(Error::InvalidInput("internal equilibrium points are aligned".into()));
    }
    let m = basis.size();
    let mut rows = Vec::with_capacity(2 * points.len());
    for (x, d) in points.iter().zip(divergence) {
        let (dx, dy) = basis.gradients(x);
        rows.push(ConstraintRow {
            kind: ConstraintKind::Internal,
            coefficients: stress_row(m, [(0, &dx, 1.0), (2, &dy, 1.0)]),
            rhs: d.x,
        });
        rows.push(ConstraintRow {
            kind: ConstraintKind::Internal,
            coefficients: stress_row(m, [(2, &dx, 1.0), (1, &dy, 1.0)]),
            rhs: d.y,
        });
    }
    Ok(rows)
}

/// A collocation point where some traction components of `σ̂` are prescribed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TractionPoint {
    pub x: Point2<f64>,
    pub normal: UnitNormal,
    pub traction: [Option<f64>; 2],
}

/// Rows `(σ̂ n)_c = t_c` for every known component.
pub fn boundary_equilibrium_rows(basis: &LocalBasis, points: &[TractionPoint]) -> Vec<ConstraintRow> {
    let m = basis.size();
    let mut rows = Vec::new();
    for p in points {
        let w = basis.values(&p.x);
        let (nx, ny) = (p.normal.nx(), p.normal.ny());
        for (c, t) in p.traction.iter().enumerate() {
            let Some(t) = t else { continue };
            let coefficients = if c == 0 {
                stress_row(m, [(0, &w, nx), (2, &w, ny)])
            } else {
                stress_row(m, [(2, &w, nx), (1, &w, ny)])
            };
            rows.push(ConstraintRow { kind: ConstraintKind::Boundary, coefficients, rhs: *t });
        }
    }
    rows
}

/// Compatibility in stresses,
/// `∂yy(kσxx − νqσyy) + ∂xx(kσyy − νqσxx) − 2(1+ν)∂xyσxy = 0`.
/// Linear fields satisfy it identically, so degree 1 gives no rows and degree 2
/// gives one.
pub fn compatibility_rows(basis: &LocalBasis, material: &MaterialModel) -> Vec<ConstraintRow> {
    if basis.degree < 2 {
        return Vec::new();
    }
    let (k, q) = material.compatibility_coefficients();
    let nu = material.poisson_ratio();
    let (xx, xy, yy) = basis.hessians();
    let m = basis.size();
    let mut row = vec![0.0; 3 * m];
    for j in 0..m {
        row[j] = k * yy[j] - nu * q * xx[j];
        row[m + j] = k * xx[j] - nu * q * yy[j];
        row[2 * m + j] = -2.0 * (1.0 + nu) * xy[j];
    }
    vec![ConstraintRow { kind: ConstraintKind::Compatibility, coefficients: row, rhs: 0.0 }]
}

/// Thin SVD `(U, s, V)` of `a`.
fn thin_svd(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let svd = faer::Mat::<f64>::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
        .thin_svd()
        .map_err(|e| Error::SingularSystem(format!("svd did not converge: {e:?}")))?;
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    Ok((
        DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)]),
        DVector::from_fn(s.nrows(), |i, _| s[i]),
        DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)]),
    ))
}

/// Minimum-norm least-squares solution, singular values below `1e-12·s_max` dropped.
fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let mut x = DVector::zeros(a.ncols());
    if a.ncols() == 0 || a.nrows() == 0 {
        return Ok(x);
    }
    let (u, s, v) = thin_svd(a)?;
    let tol = 1e-12 * s.max().max(f64::MIN_POSITIVE);
    for i in 0..s.len() {
        if s[i] > tol {
            x += v.column(i) * (u.column(i).dot(b) / s[i]);
        }
    }
    Ok(x)
}

/// Minimises `|design·a − data|²` subject to `constraints·a = rhs`. The constraint
/// rows must be linearly independent; the solution is unique when the design
/// matrix has full rank on the constraint null space and minimum-norm otherwise.
pub fn constrained_least_squares(
    design: &DMatrix<f64>,
    data: &DVector<f64>,
    constraints: &DMatrix<f64>,
    rhs: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = design.ncols();
    let m = constraints.nrows();
    if m == 0 {
        return lstsq(design, data);
    }
    if m > n {
        return Err(Error::SingularSystem(format!("{m} constraints on {n} unknowns")));
    }
    let mut square = DMatrix::zeros(n, n);
    square.rows_mut(0, m).copy_from(constraints);
    let mut rhs_sq = DVector::zeros(n);
    rhs_sq.rows_mut(0, m).copy_from(rhs);
    let (u, sv, v) = thin_svd(&square)?;
    let tol = 1e-10 * sv.max();
    let rank = sv.iter().filter(|&&s| s > tol).count();
    if rank < m {
        return Err(Error::SingularSystem(format!("constraint rank {rank} < {m}")));
    }
    let mut particular = DVector::zeros(n);
    let mut null = Vec::new();
    for i in 0..n {
        if sv[i] > tol {
            particular += v.column(i) * (u.column(i).dot(&rhs_sq) / sv[i]);
        } else {
            null.push(v.column(i).into_owned());
        }
    }
    if null.is_empty() {
        return Ok(particular);
    }
    let z = DMatrix::from_columns(&null);
    let y = lstsq(&(design * &z), &(data - design * &particular))?;
    Ok(particular + z * y)
}

/// Result of fitting one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFit {
    pub vertex: usize,
    /// One polynomial, or two (inside then outside the interface region).
    pub polynomials: Vec<PatchPolynomial>,
    /// Whether the singular part was subtracted before fitting.
    pub singular: bool,
    pub constraints: usize,
    /// Steps of the fallback sequence taken: compatibility dropped, internal points reduced.
    pub fallbacks: usize,
    /// Largest violation of a unit-normalised active constraint row.
    pub constraint_residual: f64,
    /// Largest deviation of the body force from its polynomial fit at the samples.
    pub body_fit_residual: f64,
}

impl PatchFit {
    fn polynomial_for(&self, inside: bool) -> &PatchPolynomial {
        if self.polynomials.len() == 2 && !inside {
            &self.polynomials[1]
        } else {
            &self.polynomials[0]
        }
    }
}

enum Known {
    Full(TractionFn),
    Zero(usize),
}

fn known_traction(field: &FEField, tag: &str) -> Option<Known> {
    if let Some(f) = field.loads().tractions.get(tag) {
        return Some(Known::Full(f.clone()));
    }
    match field.dirichlet().tags.get(tag) {
        None => Some(Known::Full(Arc::new(|_, _| Vector2::zeros()))),
        Some(p) => match p.mask {
            [true, false] => Some(Known::Zero(1)),
            [false, true] => Some(Known::Zero(0)),
            _ => None,
        },
    }
}

/// `σ₀ − Dε₀` at a site.
fn initial_part(loads: &LoadSet, material: &MaterialModel, site: &Site) -> VoigtStress {
    if !loads.has_initial_fields() {
        return VoigtStress::ZERO;
    }
    loads.initial_stress_at(site) - material.apply(loads.initial_strain_at(site))
}

/// Local point of edge `side` at fraction `u` in the direction of increasing
/// parametric coordinate.
fn edge_point(side: usize, u: f64) -> (f64, f64) {
    let l = -1.0 + 2.0 * u;
    match side {
        0 => (l, -1.0),
        1 => (1.0, l),
        2 => (l, 1.0),
        _ => (-1.0, l),
    }
}

/// Piece of a parametric line covered by edge `side` of `element`.
#[derive(Debug, Clone, Copy)]
struct Interval {
    element: usize,
    side: usize,
    other: Option<usize>,
    lo: f64,
    hi: f64,
}

fn interval(mesh: &QuadtreeMesh, element: usize, side: usize, other: Option<usize>) -> (Interval, (u8, i64)) {
    let [a, b] = QuadtreeMesh::edge_corners(side);
    let pa = mesh.element_param(element, a.0, a.1);
    let pb = mesh.element_param(element, b.0, b.1);
    let (lo, hi, key) = if side % 2 == 0 {
        (pa.0.min(pb.0), pa.0.max(pb.0), (0, (pa.1 * 2f64.powi(40)).round() as i64))
    } else {
        (pa.1.min(pb.1), pa.1.max(pb.1), (1, (pa.0 * 2f64.powi(40)).round() as i64))
    };
    (Interval { element, side, other, lo, hi }, key)
}

/// `count` points at arclength fractions `(k + ½)/count` of a chain of intervals on
/// one parametric line, as `(interval, local s, local t)`.
fn spread(intervals: &mut [Interval], count: usize) -> Vec<(Interval, f64, f64)> {
    intervals.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    let total: f64 = intervals.iter().map(|i| i.hi - i.lo).sum();
    (0..count)
        .map(|k| {
            let mut target = (k as f64 + 0.5) / count as f64 * total;
            let mut chosen = intervals[intervals.len() - 1];
            for iv in intervals.iter() {
                let len = iv.hi - iv.lo;
                if target <= len {
                    chosen = *iv;
                    break;
                }
                target -= len;
            }
            let u = (target / (chosen.hi - chosen.lo)).clamp(0.0, 1.0);
            let (s, t) = edge_point(chosen.side, u);
            (chosen, s, t)
        })
        .collect()
}

struct FitContext<'a> {
    field: &'a FEField,
    options: &'a RecoveryOptions,
    inside: Option<&'a [bool]>,
    neighbors: Option<&'a [[Vec<usize>; 4]]>,
}

struct PendingRow {
    row: ConstraintRow,
    side: usize,
    /// Interface rows act on side 0 with `+` and on side 1 with `−`.
    coupled: bool,
}

fn fit_patch_with(patch: &Patch, ctx: &FitContext<'_>) -> Result<PatchFit> {
    let field = ctx.field;
    let mesh = field.mesh();
    let material = field.material();
    let loads = field.loads();
    let cx = ctx.options.mode == RecoveryMode::SprCx;
    let basis = LocalBasis::new(ctx.options.degree, patch.center, patch.half_size)?;
    let m = basis.size();

    let mut sides: Vec<Vec<usize>> = vec![patch.elements.clone()];
    let mut side_of: BTreeMap<usize, usize> = patch.elements.iter().map(|&e| (e, 0)).collect();
    if let (true, Some(inside)) = (cx, ctx.inside) {
        let (a, b): (Vec<usize>, Vec<usize>) = patch.elements.iter().partition(|&&e| inside[e]);
        if !a.is_empty() && !b.is_empty() {
            for &e in &b {
                side_of.insert(e, 1);
            }
            sides = vec![a, b];
        }
    }
    let nsides = sides.len();
    let width = 3 * m * nsides;
    let singular = if cx { ctx.options.singular.as_ref().filter(|p| p.applies_to(&patch.center)) } else { None };
    let sing = |x: &Point2<f64>| singular.map_or(VoigtStress::ZERO, |p| p.stress(x));
    let s0 = |site: &Site| if cx { initial_part(loads, material, site) } else { VoigtStress::ZERO };

    let rule: Vec<((f64, f64), f64)> = tensor_rule(ctx.options.degree + 1).collect();
    let mut design_rows = Vec::new();
    let mut data = Vec::new();
    let mut body_samples: Vec<Vec<(Point2<f64>, Vector2<f64>)>> = vec![Vec::new(); nsides];
    for (side, elems) in sides.iter().enumerate() {
        for &e in elems {
            let root = mesh.element(e).root;
            for ((s, t), _) in rule.iter().copied() {
                let x = mesh.element_point(e, s, t);
                let site = Site { x, root };
                let target = field.stress_at(e, s, t) - s0(&site) - sing(&x);
                let w = basis.values(&x);
                for (c, value) in [target.xx, target.yy, target.xy].into_iter().enumerate() {
                    let mut row = vec![0.0; width];
                    row[side * 3 * m + c * m..side * 3 * m + (c + 1) * m].copy_from_slice(&w);
                    design_rows.push(row);
                    data.push(value);
                }
                if cx {
                    body_samples[side].push((x, loads.body_force_at(&site)));
                }
            }
        }
    }
    let design = DMatrix::from_fn(design_rows.len(), width, |i, j| design_rows[i][j]);
    let data = DVector::from_vec(data);

    let mut internal: Vec<Vec<PendingRow>> = vec![Vec::new(), Vec::new(), Vec::new()];
    let mut fixed = Vec::new();
    let mut compat = Vec::new();
    let mut body_fit_residual: f64 = 0.0;
    if cx {
        for (side, elems) in sides.iter().enumerate() {
            let root = mesh.element(elems[0]).root;
            let (b_hat, res) = fit_body_force(&basis, &body_samples[side])?;
            body_fit_residual = body_fit_residual.max(res);
            let div_at = |x: &Point2<f64>| {
                let step = 1e-4 * basis.scale;
                let grad = if loads.has_initial_fields() {
                    finite_difference_gradient(|a, b| s0(&Site { x: Point2::new(a, b), root }), x.x, x.y, step)
                } else {
                    StressGradient::default()
                };
                -equilibrium_residual(&grad, b_hat(x))
            };
            let mut points = vec![patch.center];
            if basis.degree == 2 {
                let centroids: Vec<Point2<f64>> = elems.iter().map(|&e| mesh.element_centroid(e)).collect();
                if let Some(c1) = centroids.iter().find(|c| (*c - patch.center).norm() > 1e-6 * basis.scale) {
                    if let Some(c2) = centroids.iter().find(|c| !collinear(&[patch.center, *c1, **c], basis.scale)) {
                        points.extend_from_slice(&[*c1, *c2]);
                    }
                }
            }
            // Nested subsets: all points, vertex only, none.
            let subsets: [&[Point2<f64>]; 3] = [&points, &points[..1], &[]];
            for (level, subset) in subsets.iter().enumerate() {
                let div: Vec<Vector2<f64>> = subset.iter().map(div_at).collect();
                for row in internal_equilibrium_rows(&basis, subset, &div)? {
                    internal[level].push(PendingRow { row, side, coupled: false });
                }
            }
            for row in compatibility_rows(&basis, material) {
                compat.push(PendingRow { row, side, coupled: false });
            }
        }
        boundary_rows(patch, ctx, &basis, &side_of, &s0, &sing, &mut fixed)?;
        if nsides == 2 {
            interface_rows(patch, ctx, &basis, &s0, &mut fixed);
        }
    }

    let embed = |rows: &[&PendingRow]| {
        let mut c = DMatrix::zeros(rows.len(), width);
        let mut d = DVector::zeros(rows.len());
        for (i, p) in rows.iter().enumerate() {
            let norm = p.row.coefficients.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            for j in 0..3 * m {
                let v = p.row.coefficients[j] / norm;
                c[(i, p.side * 3 * m + j)] = v;
                if p.coupled {
                    c[(i, 3 * m + j)] = -v;
                }
            }
            d[i] = p.row.rhs / norm;
        }
        (c, d)
    };

    let attempts: Vec<Vec<&PendingRow>> = if cx {
        vec![
            fixed.iter().chain(&internal[0]).chain(&compat).collect(),
            fixed.iter().chain(&internal[0]).collect(),
            fixed.iter().chain(&internal[1]).collect(),
            fixed.iter().chain(&internal[2]).collect(),
        ]
    } else {
        vec![Vec::new()]
    };
    let mut last_err = None;
    for (fallbacks, rows) in attempts.iter().enumerate() {
        if fallbacks > 0 && rows.len() == attempts[fallbacks - 1].len() {
            continue;
        }
        let (c, d) = embed(rows);
        match constrained_least_squares(&design, &data, &c, &d) {
            Ok(a) => {
                let constraint_residual = (&c * &a - &d).amax();
                let polynomials = (0..nsides)
                    .map(|s| PatchPolynomial::new(basis, a.rows(s * 3 * m, 3 * m).into_owned()))
                    .collect::<Result<Vec<_>>>()?;
                return Ok(PatchFit {
                    vertex: patch.vertex,
                    polynomials,
                    singular: singular.is_some(),
                    constraints: rows.len(),
                    fallbacks,
                    constraint_residual,
                    body_fit_residual,
                });
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(Error::PatchFit {
        node: patch.vertex,
        reason: last_err.map_or_else(|| "no admissible constraint set".into(), |e| e.to_string()),
    })
}

/// Least-squares fit of degree `p − 1` to the body force samples; returns the fit
/// and its largest deviation at the samples.
fn fit_body_force<'a>(
    basis: &'a LocalBasis,
    samples: &[(Point2<f64>, Vector2<f64>)],
) -> Result<(Box<dyn Fn(&Point2<f64>) -> Vector2<f64> + 'a>, f64)> {
    if samples.is_empty() {
        return Ok((Box::new(|_| Vector2::zeros()), 0.0));
    }
    let terms = |x: &Point2<f64>| -> Vec<f64> {
        let v = basis.values(x);
        if basis.degree == 1 { vec![1.0] } else { v[..3].to_vec() }
    };
    let k = terms(&samples[0].0).len();
    let a = DMatrix::from_fn(samples.len(), k, |i, j| terms(&samples[i].0)[j]);
    let bx = lstsq(&a, &DVector::from_iterator(samples.len(), samples.iter().map(|s| s.1.x)))?;
    let by = lstsq(&a, &DVector::from_iterator(samples.len(), samples.iter().map(|s| s.1.y)))?;
    let eval = move |x: &Point2<f64>| {
        let w = DVector::from_vec(terms(x));
        Vector2::new(w.dot(&bx), w.dot(&by))
    };
    let res = samples.iter().map(|(x, b)| (eval(x) - b).amax()).fold(0.0, f64::max);
    Ok((Box::new(eval), res))
}

#[allow(clippy::too_many_arguments)]
fn boundary_rows(
    patch: &Patch,
    ctx: &FitContext<'_>,
    basis: &LocalBasis,
    side_of: &BTreeMap<usize, usize>,
    s0: &dyn Fn(&Site) -> VoigtStress,
    sing: &dyn Fn(&Point2<f64>) -> VoigtStress,
    out: &mut Vec<PendingRow>,
) -> Result<()> {
    let mesh = ctx.field.mesh();
    let mut by_tag: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &b in &patch.boundary_edges {
        by_tag.entry(mesh.boundary()[b].tag.as_str()).or_default().push(b);
    }
    let mut best: Option<(bool, f64, &str, Known)> = None;
    for (tag, edges) in &by_tag {
        let Some(known) = known_traction(ctx.field, tag) else { continue };
        let full = matches!(known, Known::Full(_));
        let length: f64 = edges
            .iter()
            .map(|&b| {
                let be = &mesh.boundary()[b];
                mesh.edge_quadrature(be.element, be.side, 1)[0].weight
            })
            .sum();
        let better = match &best {
            None => true,
            Some((bf, bl, _, _)) => (full, length) > (*bf, *bl * (1.0 + 1e-12)),
        };
        if better {
            best = Some((full, length, tag, known));
        }
    }
    let Some((_, _, tag, known)) = best else { return Ok(()) };
    let mut intervals: Vec<Interval> = by_tag[tag]
        .iter()
        .map(|&b| {
            let be = &mesh.boundary()[b];
            interval(mesh, be.element, be.side, None).0
        })
        .collect();
    for (iv, s, t) in spread(&mut intervals, basis.degree + 1) {
        let x = mesh.element_point(iv.element, s, t);
        let n = mesh.edge_normal(iv.element, iv.side, s, t);
        let site = Site { x, root: mesh.element(iv.element).root };
        let other = traction_projection(s0(&site) + sing(&x), n);
        let traction = match &known {
            Known::Full(f) => {
                let t = f(&x, n) - other;
                [Some(t.x), Some(t.y)]
            }
            Known::Zero(c) => {
                let mut t = [None, None];
                t[*c] = Some(-other[*c]);
                t
            }
        };
        let side = side_of[&iv.element];
        for row in boundary_equilibrium_rows(basis, &[TractionPoint { x, normal: n, traction }]) {
            out.push(PendingRow { row, side, coupled: false });
        }
    }
    Ok(())
}

fn interface_rows(
    patch: &Patch,
    ctx: &FitContext<'_>,
    basis: &LocalBasis,
    s0: &dyn Fn(&Site) -> VoigtStress,
    out: &mut Vec<PendingRow>,
) {
    let (Some(inside), Some(neighbors)) = (ctx.inside, ctx.neighbors) else { return };
    let mesh = ctx.field.mesh();
    let mut groups: BTreeMap<(u8, i64), Vec<Interval>> = BTreeMap::new();
    for &e in patch.elements.iter().filter(|&&e| inside[e]) {
        for side in 0..4 {
            for &n in &neighbors[e][side] {
                if inside[n] || !patch.elements.contains(&n) {
                    continue;
                }
                let (iv, key) = if mesh.element(n).level() > mesh.element(e).level() {
                    interval(mesh, n, (side + 2) % 4, Some(e))
                } else {
                    interval(mesh, e, side, Some(n))
                };
                groups.entry(key).or_default().push(iv);
            }
        }
    }
    for intervals in groups.values_mut() {
        for (iv, s, t) in spread(intervals, basis.degree + 1) {
            let x = mesh.element_point(iv.element, s, t);
            let n = mesh.edge_normal(iv.element, iv.side, s, t);
            let other = iv.other.expect("interface interval has two sides");
            let (e_in, e_out) = if inside[iv.element] { (iv.element, other) } else { (other, iv.element) };
            let jump = s0(&Site { x, root: mesh.element(e_in).root }) - s0(&Site { x, root: mesh.element(e_out).root });
            let t = -traction_projection(jump, n);
            for row in boundary_equilibrium_rows(basis, &[TractionPoint { x, normal: n, traction: [Some(t.x), Some(t.y)] }]) {
                out.push(PendingRow {
                    row: ConstraintRow { kind: ConstraintKind::Interface, ..row },
                    side: 0,
                    coupled: true,
                });
            }
        }
    }
}

/// Fits a single patch; see [`recover`] for the field-level operation.
pub fn fit_patch(patch: &Patch, field: &FEField, options: &RecoveryOptions) -> Result<PatchFit> {
    let mesh = field.mesh();
    let inside = options.interface.as_ref().map(|r| {
        (0..mesh.num_elements()).map(|e| r.contains_element(mesh, e)).collect::<Vec<_>>()
    });
    let neighbors = inside.as_ref().map(|_| mesh.neighbor_table());
    let ctx = FitContext {
        field,
        options,
        inside: inside.as_deref(),
        neighbors: neighbors.as_deref(),
    };
    fit_patch_with(patch, &ctx)
}

/// Summary of a recovery over all patches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryDiagnostics {
    pub patches: usize,
    pub split_patches: usize,
    pub singular_patches: usize,
    pub fallbacks: usize,
    pub max_constraint_residual: f64,
}

/// Blended recovered stress over a whole mesh.
#[derive(Debug, Clone)]
pub struct RecoveredField {
    mesh: Arc<QuadtreeMesh>,
    material: MaterialModel,
    loads: Arc<LoadSet>,
    options: RecoveryOptions,
    fits: Vec<PatchFit>,
    /// Per element and corner: `(fit index, constraint weight)`.
    weights: Vec<[Vec<(usize, f64)>; 4]>,
    inside: Vec<bool>,
}

/// Recovers a continuous stress field from `field`.
pub fn recover(field: &FEField, options: &RecoveryOptions) -> Result<RecoveredField> {
    let mesh = field.mesh().clone();
    let inside: Vec<bool> = match &options.interface {
        Some(r) => (0..mesh.num_elements()).map(|e| r.contains_element(&mesh, e)).collect(),
        None => vec![false; mesh.num_elements()],
    };
    let neighbors = options.interface.as_ref().map(|_| mesh.neighbor_table());
    let ctx = FitContext {
        field,
        options,
        inside: options.interface.as_ref().map(|_| inside.as_slice()),
        neighbors: neighbors.as_deref(),
    };
    let patches = mesh.build_patches();
    let fits = patches.par_iter().map(|p| fit_patch_with(p, &ctx)).collect::<Result<Vec<_>>>()?;
    let mut fit_of = vec![usize::MAX; mesh.num_nodes()];
    for (k, f) in fits.iter().enumerate() {
        fit_of[f.vertex] = k;
    }
    let weights = mesh
        .elements()
        .iter()
        .map(|el| {
            std::array::from_fn(|c| {
                mesh.constraint_expansion(el.nodes[c]).into_iter().map(|(n, w)| (fit_of[n], w)).collect()
            })
        })
        .collect();
    Ok(RecoveredField {
        mesh,
        material: *field.material(),
        loads: field.loads().clone(),
        options: options.clone(),
        fits,
        weights,
        inside,
    })
}

impl RecoveredField {
    pub fn mesh(&self) -> &Arc<QuadtreeMesh> {
        &self.mesh
    }

    pub fn mode(&self) -> RecoveryMode {
        self.options.mode
    }

    pub fn fits(&self) -> &[PatchFit] {
        &self.fits
    }

    /// Recovered stress at local point `(s, t)` of element `e`.
    pub fn stress_at(&self, e: usize, s: f64, t: f64) -> VoigtStress {
        let x = self.mesh.element_point(e, s, t);
        let (n, _) = bilinear(s, t);
        let inside = self.inside[e];
        let mut sigma = VoigtStress::ZERO;
        let mut singular_weight = 0.0;
        for c in 0..4 {
            for &(f, w) in &self.weights[e][c] {
                let fit = &self.fits[f];
                sigma += fit.polynomial_for(inside).eval(&x) * (n[c] * w);
                if fit.singular {
                    singular_weight += n[c] * w;
                }
            }
        }
        if self.options.mode == RecoveryMode::SprCx {
            let site = Site { x, root: self.mesh.element(e).root };
            sigma += initial_part(&self.loads, &self.material, &site);
            if let (Some(part), true) = (&self.options.singular, singular_weight != 0.0) {
                sigma += part.stress(&x) * singular_weight;
            }
        }
        sigma
    }

    /// Sampler suitable for energy integrals.
    pub fn sampler(&self) -> impl Fn(usize, &QuadPoint) -> VoigtStress + Sync + '_ {
        move |e, q| self.stress_at(e, q.s, q.t)
    }

    /// `Σ_J σ̂_J ∇N_J`, the equilibrium defect introduced by blending.
    pub fn blending_residual(&self, e: usize, s: f64, t: f64) -> Vector2<f64> {
        let ev = self.mesh.shape_eval(e, s, t);
        let inside = self.inside[e];
        let mut r = Vector2::zeros();
        for c in 0..4 {
            for &(f, w) in &self.weights[e][c] {
                let fit = &self.fits[f];
                let mut sigma = fit.polynomial_for(inside).eval(&ev.x);
                if fit.singular {
                    if let Some(part) = &self.options.singular {
                        sigma += part.stress(&ev.x);
                    }
                }
                let g = ev.dn_dx[c] * w;
                r += Vector2::new(sigma.xx * g.x + sigma.xy * g.y, sigma.xy * g.x + sigma.yy * g.y);
            }
        }
        r
    }

    pub fn diagnostics(&self) -> RecoveryDiagnostics {
        RecoveryDiagnostics {
            patches: self.fits.len(),
            split_patches: self.fits.iter().filter(|f| f.polynomials.len() == 2).count(),
            singular_patches: self.fits.iter().filter(|f| f.singular).count(),
            fallbacks: self.fits.iter().filter(|f| f.fallbacks > 0).count(),
            max_constraint_residual: self.fits.iter().map(|f| f.constraint_residual).fold(0.0, f64::max),
        }
    }

    /// One line per patch polynomial: vertex, side, centre, scale, coefficients.
    pub fn write_coefficients<W: Write>(&self, mut out: W) -> Result<()> {
        for f in &self.fits {
            for (side, p) in f.polynomials.iter().enumerate() {
                write!(
                    out,
                    "{} {side} {:.16e} {:.16e} {:.16e}",
                    f.vertex, p.basis.center.x, p.basis.center.y, p.basis.scale
                )?;
                for a in p.coefficients.iter() {
                    write!(out, " {a:.16e}")?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elasticity::VoigtStrain;
    use crate::fem::{solve_problem, DirichletSet, Prescribed};
    use crate::geometry::{tags, GeometryMap};
    use crate::mesh::build_initial_mesh;
    use proptest::prelude::*;

    fn steel() -> MaterialModel {
        MaterialModel::plane_strain(1000.0, 0.3).unwrap()
    }

    fn square(n: usize) -> QuadtreeMesh {
        let g = GeometryMap::polygon(vec![
            Point2::new(0.0, 0.0),
            Point2::new(2.0, 0.0),
            Point2::new(2.0, 2.0),
            Point2::new(0.0, 2.0),
        ])
        .unwrap();
        build_initial_mesh(g, n, n).unwrap()
    }

    /// Uniform stress state loaded by its own tractions, on a mesh with hanging nodes.
    fn uniform_stress_field(sigma: VoigtStress) -> FEField {
        let mesh = Arc::new(square(2).refine(&[0]).refine(&[1, 2]));
        let loads = Arc::new(
            ["s0", "s1", "s2"]
                .into_iter()
                .fold(LoadSet::new(), |l, tag| l.with_traction(tag, move |_, n| traction_projection(sigma, n))),
        );
        let u0 = steel().invert(sigma);
        let exact = move |p: &Point2<f64>| Vector2::new(u0.xx * p.x + 0.5 * u0.xy * p.y, u0.yy * p.y + 0.5 * u0.xy * p.x);
        let bc = DirichletSet::new().with_tag("s3", Prescribed::new([true, true], move |p, _| exact(p)));
        solve_problem(&mesh, &steel(), &loads, &bc).unwrap()
    }

    fn pressurised_annulus(levels: usize) -> FEField {
        let mut mesh = build_initial_mesh(GeometryMap::annulus_quarter(5.0, 20.0).unwrap(), 4, 4).unwrap();
        for _ in 0..levels {
            mesh = mesh.uniformly_refined();
        }
        let loads = Arc::new(LoadSet::new().with_traction(tags::INNER, |_, n| -n.as_vector()));
        let bc = DirichletSet::new().with_symmetry(tags::BOTTOM, 1).with_symmetry(tags::LEFT, 0);
        solve_problem(&Arc::new(mesh), &steel(), &loads, &bc).unwrap()
    }

    #[test]
    fn uniform_stress_is_recovered_exactly() {
        let sigma = VoigtStress::new(3.0, -1.0, 0.5);
        let field = uniform_stress_field(sigma);
        for options in [RecoveryOptions::spr_cx(), RecoveryOptions::spr(), RecoveryOptions::spr_cx().with_degree(2)] {
            let rec = recover(&field, &options).unwrap();
            for e in 0..field.mesh().num_elements() {
                for (s, t) in [(0.3, -0.8), (-1.0, 1.0), (0.0, 0.0)] {
                    assert!((rec.stress_at(e, s, t) - sigma).max_abs() < 1e-10, "{:?}", options.mode);
                }
            }
            assert!(rec.diagnostics().max_constraint_residual < 1e-9);
        }
    }

    #[test]
    fn basis_sizes() {
        let b1 = LocalBasis::new(1, Point2::origin(), 1.0).unwrap();
        let b2 = LocalBasis::new(2, Point2::origin(), 1.0).unwrap();
        assert_eq!((b1.size(), b2.size()), (3, 6));
        assert!(LocalBasis::new(3, Point2::origin(), 1.0).is_err());
        assert!(LocalBasis::new(1, Point2::origin(), 0.0).is_err());
    }

    #[test]
    fn linear_admissible_stress_is_reproduced() {
        // σ with divergence (−2, 1) and known tractions on the line y = 0.
        let sigma = |p: &Point2<f64>| VoigtStress::new(1.0 - 2.0 * p.x + 0.5 * p.y, 3.0 + p.x + 2.0 * p.y, 0.2 - p.x - 1.0 * p.y);
        let basis = LocalBasis::new(1, Point2::new(0.3, 0.0), 0.5).unwrap();
        let samples: Vec<Point2<f64>> = (0..12).map(|k| Point2::new(0.3 + 0.1 * (k % 4) as f64, 0.1 * (k / 4) as f64)).collect();
        let design = DMatrix::from_fn(3 * samples.len(), 9, |i, j| {
            let (c, w) = (i % 3, basis.values(&samples[i / 3]));
            if j / 3 == c { w[j % 3] } else { 0.0 }
        });
        let data = DVector::from_iterator(
            3 * samples.len(),
            samples.iter().flat_map(|p| {
                let s = sigma(p);
                [s.xx, s.yy, s.xy]
            }),
        );
        let n = UnitNormal::new(0.0, -1.0).unwrap();
        let mut rows = internal_equilibrium_rows(&basis, &[basis.center], &[Vector2::new(-2.0 - 1.0, -1.0 + 2.0)]).unwrap();
        let pts: Vec<TractionPoint> = [0.2, 0.6]
            .iter()
            .map(|&x| {
                let p = Point2::new(x, 0.0);
                let t = traction_projection(sigma(&p), n);
                TractionPoint { x: p, normal: n, traction: [Some(t.x), Some(t.y)] }
            })
            .collect();
        rows.extend(boundary_equilibrium_rows(&basis, &pts));
        let c = DMatrix::from_fn(rows.len(), 9, |i, j| rows[i].coefficients[j]);
        let d = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.rhs));
        let a = constrained_least_squares(&design, &data, &c, &d).unwrap();
        let poly = PatchPolynomial::new(basis, a).unwrap();
        for p in &samples {
            assert!((poly.eval(p) - sigma(p)).max_abs() < 1e-10);
        }
    }

    #[test]
    fn divergence_free_interior_fit() {
        let field = pressurised_annulus(1);
        let rec = recover(&field, &RecoveryOptions::spr_cx()).unwrap();
        let patches = field.mesh().build_patches();
        for (fit, patch) in rec.fits().iter().zip(&patches) {
            let g = fit.polynomials[0].gradient(&patch.center);
            let div = equilibrium_residual(&g, Vector2::zeros());
            let scale = fit.polynomials[0].eval(&patch.center).max_abs() / patch.half_size;
            assert!(div.amax() < 1e-9 * scale.max(1.0), "{div}");
        }
    }

    #[test]
    fn traction_free_edge_is_enforced() {
        let field = pressurised_annulus(1);
        let rec = recover(&field, &RecoveryOptions::spr_cx()).unwrap();
        let mesh = field.mesh();
        let patches = mesh.build_patches();
        let mut checked = 0;
        for (fit, patch) in rec.fits().iter().zip(&patches) {
            let tags: Vec<&str> = patch.boundary_edges.iter().map(|&b| mesh.boundary()[b].tag.as_str()).collect();
            if tags.is_empty() || tags.iter().any(|t| *t != tags::OUTER) {
                continue;
            }
            // Along the arc the traction of a linear field is not linear, so check the
            // collocation points themselves.
            let mut intervals: Vec<Interval> = patch
                .boundary_edges
                .iter()
                .map(|&b| interval(mesh, mesh.boundary()[b].element, mesh.boundary()[b].side, None).0)
                .collect();
            for (iv, s, t) in spread(&mut intervals, 2) {
                let x = mesh.element_point(iv.element, s, t);
                let n = mesh.edge_normal(iv.element, iv.side, s, t);
                assert!(traction_projection(fit.polynomials[0].eval(&x), n).amax() < 1e-10);
            }
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn inner_pressure_collocation_and_improvement_over_spr() {
        let field = pressurised_annulus(2);
        let cx = recover(&field, &RecoveryOptions::spr_cx()).unwrap();
        let spr = recover(&field, &RecoveryOptions::spr()).unwrap();
        assert!(cx.diagnostics().max_constraint_residual < 1e-9);
        let mesh = field.mesh();
        let error = |rec: &RecoveredField| {
            mesh.boundary_with_tag(tags::INNER)
                .flat_map(|b| mesh.edge_quadrature(b.element, b.side, 3).into_iter().map(move |q| (b.element, q)))
                .map(|(e, q)| (traction_projection(rec.stress_at(e, q.s, q.t), q.normal) + q.normal.as_vector()).norm())
                .fold(0.0, f64::max)
        };
        let (e_cx, e_spr) = (error(&cx), error(&spr));
        assert!(e_cx < 0.5 * e_spr, "cx {e_cx} spr {e_spr}");
    }

    #[test]
    fn blended_field_is_continuous() {
        let field = pressurised_annulus(0);
        let mesh = Arc::new(field.mesh().refine(&[0, 5]).refine(&[1]));
        let loads = field.loads().clone();
        let bc = DirichletSet::new().with_symmetry(tags::BOTTOM, 1).with_symmetry(tags::LEFT, 0);
        let field = solve_problem(&mesh, &steel(), &loads, &bc).unwrap();
        let rec = recover(&field, &RecoveryOptions::spr_cx()).unwrap();
        let table = mesh.neighbor_table();
        let mut rng = 0x2545F4914F6CDD1Du64;
        let mut next = || {
            rng ^= rng << 13;
            rng ^= rng >> 7;
            rng ^= rng << 17;
            (rng >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut count = 0;
        while count < 1000 {
            let e = (next() * mesh.num_elements() as f64) as usize;
            let side = (next() * 4.0) as usize;
            for &n in &table[e][side] {
                let (s, t) = edge_point(side, next());
                let x = mesh.element_point(e, s, t);
                // Locate x in the neighbour through its parametric coordinates.
                let (xi, eta) = mesh.element_param(e, s, t);
                let (a0, a1) = mesh.element_param(n, -1.0, -1.0);
                let (b0, b1) = mesh.element_param(n, 1.0, 1.0);
                let (sn, tn) = (2.0 * (xi - a0) / (b0 - a0) - 1.0, 2.0 * (eta - a1) / (b1 - a1) - 1.0);
                if sn.abs() > 1.0 + 1e-12 || tn.abs() > 1.0 + 1e-12 {
                    continue;
                }
                assert!((mesh.element_point(n, sn, tn) - x).norm() < 1e-12);
                let d = (rec.stress_at(e, s, t) - rec.stress_at(n, sn, tn)).max_abs();
                assert!(d < 1e-12 * rec.stress_at(e, s, t).max_abs().max(1.0), "{d}");
                count += 1;
            }
        }
    }

    #[test]
    fn blended_identical_polynomials_and_vertex_values() {
        let sigma = VoigtStress::new(3.0, -1.0, 0.5);
        let rec = recover(&uniform_stress_field(sigma), &RecoveryOptions::spr()).unwrap();
        let mesh = rec.mesh().clone();
        let el = mesh.element(0);
        let fit = rec.fits().iter().find(|f| f.vertex == el.nodes[0]).unwrap();
        assert!((rec.stress_at(0, -1.0, -1.0) - fit.polynomials[0].eval(&mesh.nodes()[el.nodes[0]])).max_abs() < 1e-12);
        assert!(rec.blending_residual(0, 0.3, 0.1).norm() < 1e-10);
    }

    #[test]
    fn compatibility_rows() {
        let b1 = LocalBasis::new(1, Point2::origin(), 1.0).unwrap();
        assert!(super::compatibility_rows(&b1, &steel()).is_empty());
        // Quadratic stresses of the cubic displacement u = (x³ + x y², x² y − y³).
        let mat = steel();
        let sigma = |p: &Point2<f64>| {
            let (x, y) = (p.x, p.y);
            mat.apply(VoigtStrain::new(3.0 * x * x + y * y, x * x - 3.0 * y * y, 2.0 * x * y + 2.0 * x * y))
        };
        let basis = LocalBasis::new(2, Point2::new(0.5, -0.2), 0.7).unwrap();
        let pts: Vec<Point2<f64>> = (0..9).map(|k| Point2::new(0.1 * k as f64, 0.3 * (k % 3) as f64 - 0.4)).collect();
        let design = DMatrix::from_fn(27, 18, |i, j| {
            let (c, w) = (i % 3, basis.values(&pts[i / 3]));
            if j / 6 == c { w[j % 6] } else { 0.0 }
        });
        let data = DVector::from_iterator(27, pts.iter().flat_map(|p| sigma(p).to_vector().iter().copied().collect::<Vec<_>>()));
        let fitted = PatchPolynomial::new(basis, lstsq(&design, &data).unwrap()).unwrap();
        let scale = fitted.coefficients.amax() / (basis.scale * basis.scale);
        assert!(fitted.compatibility_residual(&mat).abs() < 1e-9 * scale);
        // σ_xx = y² alone is incompatible.
        let mut bad = DVector::zeros(18);
        bad[5] = 1.0;
        assert!(PatchPolynomial::new(basis, bad).unwrap().compatibility_residual(&mat).abs() > 0.1);
    }

    #[test]
    fn aligned_internal_points_rejected() {
        let basis = LocalBasis::new(2, Point2::origin(), 1.0).unwrap();
        let pts = [Point2::new(0.0, 0.0), Point2::new(1.0, 1.0), Point2::new(2.0, 2.0)];
        assert!(internal_equilibrium_rows(&basis, &pts, &[Vector2::zeros(); 3]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn constrained_solution_is_stationary(seed in 0u64..1_000_000) {
            let mut rng = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407) | 1;
            let mut next = move || {
                rng ^= rng << 13;
                rng ^= rng >> 7;
                rng ^= rng << 17;
                (rng >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            };
            let design = DMatrix::from_fn(24, 9, |_, _| next());
            let data = DVector::from_fn(24, |_, _| next());
            let c = DMatrix::from_fn(4, 9, |_, _| next());
            let d = DVector::from_fn(4, |_, _| next());
            let a = constrained_least_squares(&design, &data, &c, &d).unwrap();
            prop_assert!((&c * &a - &d).amax() < 1e-10);
            // KKT: the gradient lies in the row space of the constraints.
            let g = design.transpose() * (&design * &a - &data);
            let lambda = lstsq(&c.transpose(), &g).unwrap();
            prop_assert!((c.transpose() * lambda - &g).amax() < 1e-9 * g.amax().max(1.0));
        }
    }
}

