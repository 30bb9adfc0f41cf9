//! Parametric maps from the unit square onto the benchmark domains.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix2, Point2};

use crate::error::{Error, Result};

/// Boundary tags produced by [`GeometryMap::annulus_quarter`].
pub mod tags {
    /// Arc `r = a`.
    pub const INNER: &str = "inner";
    /// Arc `r = b`.
    pub const OUTER: &str = "outer";
    /// Straight edge on `y = 0`.
    pub const BOTTOM: &str = "bottom";
    /// Straight edge on `x = 0`.
    pub const LEFT: &str = "left";
}

#[derive(Debug, Clone, PartialEq)]
pub enum GeometryKind {
    /// Quarter of the annulus `a ≤ r ≤ b` in the first quadrant; `ξ` runs radially
    /// and `η` sweeps the angle from 0 to π/2.
    AnnulusQuarter { inner: f64, outer: f64 },
    /// Axis-aligned polygon mapped by the identity from its bounding box.
    PolygonIdentity { vertices: Vec<Point2<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryMap {
    kind: GeometryKind,
    origin: Point2<f64>,
    extent: (f64, f64),
}

impl GeometryMap {
    pub fn annulus_quarter(inner: f64, outer: f64) -> Result<Self> {
        if !(inner > 0.0 && outer > inner && outer.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "annulus needs 0 < a < b, got a = {inner}, b = {outer}"
            )));
        }
        Ok(Self {
            kind: GeometryKind::AnnulusQuarter { inner, outer },
            origin: Point2::origin(),
            extent: (1.0, 1.0),
        })
    }

    /// Counter-clockwise polygon whose edges are parallel to the axes.
    pub fn polygon(vertices: Vec<Point2<f64>>) -> Result<Self> {
        if vertices.len() < 4 {
            return Err(Error::InvalidGeometry("polygon needs at least 4 vertices".into()));
        }
        for k in 0..vertices.len() {
            let a = vertices[k];
            let b = vertices[(k + 1) % vertices.len()];
            let axis_aligned = (a.x - b.x).abs() < 1e-14 || (a.y - b.y).abs() < 1e-14;
            if !axis_aligned || (a - b).norm() < 1e-14 {
                return Err(Error::InvalidGeometry(format!(
                    "polygon side {k} is degenerate or not axis-aligned"
                )));
            }
        }
        if signed_area(&vertices) <= 0.0 {
            return Err(Error::InvalidGeometry("polygon must be counter-clockwise".into()));
        }
        let xmin = vertices.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let xmax = vertices.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
        let ymin = vertices.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let ymax = vertices.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            kind: GeometryKind::PolygonIdentity { vertices },
            origin: Point2::new(xmin, ymin),
            extent: (xmax - xmin, ymax - ymin),
        })
    }

    /// L-shaped domain `[-L, L]² \ (0, L] × [-L, 0)` with the reentrant corner at the
    /// origin. Sides `s0` (along +x) and `s5` (along −y) are the corner faces.
    pub fn l_shape(leg: f64) -> Result<Self> {
        let l = leg;
        Self::polygon(vec![
            Point2::new(0.0, 0.0),
            Point2::new(l, 0.0),
            Point2::new(l, l),
            Point2::new(-l, l),
            Point2::new(-l, -l),
            Point2::new(0.0, -l),
        ])
    }

    pub fn kind(&self) -> &GeometryKind {
        &self.kind
    }

    /// Whether the map is affine, in which case bilinear elements are exactly
    /// integrated by a 2×2 rule.
    pub fn is_affine(&self) -> bool {
        matches!(self.kind, GeometryKind::PolygonIdentity { .. })
    }

    pub fn map(&self, xi: f64, eta: f64) -> Point2<f64> {
        match self.kind {
            GeometryKind::AnnulusQuarter { inner, outer } => {
                let r = inner + xi * (outer - inner);
                let (s, c) = (eta * FRAC_PI_2).sin_cos();
                Point2::new(r * c, r * s)
            }
            GeometryKind::PolygonIdentity { .. } => Point2::new(
                self.origin.x + xi * self.extent.0,
                self.origin.y + eta * self.extent.1,
            ),
        }
    }

    /// Columns are `∂x/∂ξ` and `∂x/∂η`.
    pub fn jacobian(&self, xi: f64, eta: f64) -> Matrix2<f64> {
        match self.kind {
            GeometryKind::AnnulusQuarter { inner, outer } => {
                let dr = outer - inner;
                let r = inner + xi * dr;
                let (s, c) = (eta * FRAC_PI_2).sin_cos();
                Matrix2::new(dr * c, -r * s * FRAC_PI_2, dr * s, r * c * FRAC_PI_2)
            }
            GeometryKind::PolygonIdentity { .. } => {
                Matrix2::new(self.extent.0, 0.0, 0.0, self.extent.1)
            }
        }
    }

    /// Whether the root cell with parametric centroid `(xi, eta)` belongs to the domain.
    pub fn contains_param(&self, xi: f64, eta: f64) -> bool {
        match &self.kind {
            GeometryKind::AnnulusQuarter { .. } => {
                (0.0..=1.0).contains(&xi) && (0.0..=1.0).contains(&eta)
            }
            GeometryKind::PolygonIdentity { vertices } => {
                point_in_polygon(&self.map(xi, eta), vertices)
            }
        }
    }

    /// Checks that every polygon vertex falls on a line of an `nx × ny` root grid.
    pub fn check_grid(&self, nx: usize, ny: usize) -> Result<()> {
        if let GeometryKind::PolygonIdentity { vertices } = &self.kind {
            for v in vertices {
                let gx = (v.x - self.origin.x) / self.extent.0 * nx as f64;
                let gy = (v.y - self.origin.y) / self.extent.1 * ny as f64;
                if (gx - gx.round()).abs() > 1e-9 || (gy - gy.round()).abs() > 1e-9 {
                    return Err(Error::InvalidGeometry(format!(
                        "vertex ({}, {}) is not on the {nx}×{ny} root grid",
                        v.x, v.y
                    )));
                }
            }
        }
        Ok(())
    }

    /// Tag of the boundary piece through the parametric point `(xi, eta)`.
    pub fn boundary_tag(&self, xi: f64, eta: f64) -> String {
        match &self.kind {
            GeometryKind::AnnulusQuarter { .. } => {
                let tol = 1e-12;
                if xi.abs() < tol {
                    tags::INNER.into()
                } else if (xi - 1.0).abs() < tol {
                    tags::OUTER.into()
                } else if eta.abs() < tol {
                    tags::BOTTOM.into()
                } else {
                    tags::LEFT.into()
                }
            }
            GeometryKind::PolygonIdentity { vertices } => {
                let p = self.map(xi, eta);
                let scale = self.extent.0.max(self.extent.1);
                let mut best = (f64::INFINITY, 0);
                for k in 0..vertices.len() {
                    let d = segment_distance(&p, &vertices[k], &vertices[(k + 1) % vertices.len()]);
                    if d < best.0 {
                        best = (d, k);
                    }
                }
                debug_assert!(best.0 < 1e-9 * scale);
                format!("s{}", best.1)
            }
        }
    }

    /// Exact area of the mapped domain (of the full unit square for the annulus).
    pub fn area(&self) -> f64 {
        match &self.kind {
            GeometryKind::AnnulusQuarter { inner, outer } => {
                FRAC_PI_2 * 0.5 * (outer * outer - inner * inner)
            }
            GeometryKind::PolygonIdentity { vertices } => signed_area(vertices),
        }
    }
}

fn signed_area(v: &[Point2<f64>]) -> f64 {
    let n = v.len();
    0.5 * (0..n)
        .map(|k| {
            let a = v[k];
            let b = v[(k + 1) % n];
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
}

fn point_in_polygon(p: &Point2<f64>, v: &[Point2<f64>]) -> bool {
    let mut inside = false;
    let n = v.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (v[i], v[j]);
        if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn segment_distance(p: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}
