//! Quantities of interest, their direct evaluation and the loads of the dual
//! problem that extracts them.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{Vector2, Vector3};

use crate::elasticity::{traction_projection, MaterialModel, UnitNormal, VoigtStrain, VoigtStress};
use crate::error::{Error, Result};
use crate::exact::FieldSampler;
use crate::fem::{b_matrix, solve_problem, stiffness_order, DirichletSet, FEField, LoadSet, Prescribed};
use crate::mesh::{bilinear, QuadtreeMesh, Region};
use crate::singular::GsifExtractor;

/// Gauss points per direction for region and boundary functionals; the dual loads
/// use the same rule so both sides of the duality are the same quadrature.
pub const QOI_ORDER: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub enum QoiKind {
    /// `(1/|Ω_I|) ∫_Ω_I c_uᵀ u`.
    MeanDisplacementDomain { extractor: Vector2<f64>, region: Region },
    /// `(1/|Γ_I|) ∫_Γ_I c_uᵀ u`, or `c_uᵀ R u` with `R u = (u·n, u·t)` when
    /// `normal_frame` is set.
    MeanDisplacementBoundary { extractor: Vector2<f64>, tag: String, normal_frame: bool },
    /// `(1/|Ω_I|) ∫_Ω_I c_εᵀ ε(u)`, engineering shear strain.
    MeanStrainDomain { extractor: Vector3<f64>, region: Region },
    /// `(1/|Ω_I|) ∫_Ω_I c_σᵀ σ(u)`.
    MeanStressDomain { extractor: Vector3<f64>, region: Region },
    /// `(1/|Γ_I|) ∫_Γ_I c_Rᵀ R T_R` for the reaction `T_R` on a Dirichlet tag, with
    /// `c_R` in the (normal, tangential) frame.
    MeanTractionDirichlet { extractor: Vector2<f64>, tag: String },
    /// Generalised stress intensity factor.
    Gsif(GsifExtractor),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantityOfInterest {
    pub kind: QoiKind,
}

/// Loads and Dirichlet data of the dual problem.
#[derive(Debug, Clone)]
pub struct DualProblem {
    pub loads: LoadSet,
    pub dirichlet: DirichletSet,
}

fn rotate_back(c: Vector2<f64>, n: UnitNormal) -> Vector2<f64> {
    n.as_vector() * c.x + n.tangent() * c.y
}

impl QuantityOfInterest {
    pub fn new(kind: QoiKind) -> Result<Self> {
        let region_empty = match &kind {
            QoiKind::MeanDisplacementDomain { region, .. }
            | QoiKind::MeanStrainDomain { region, .. }
            | QoiKind::MeanStressDomain { region, .. } => region.is_empty(),
            _ => false,
        };
        if region_empty {
            return Err(Error::Region("quantity of interest over an empty region".into()));
        }
        Ok(Self { kind })
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            QoiKind::MeanDisplacementDomain { .. } => "mean-displacement-domain",
            QoiKind::MeanDisplacementBoundary { .. } => "mean-displacement-boundary",
            QoiKind::MeanStrainDomain { .. } => "mean-strain-domain",
            QoiKind::MeanStressDomain { .. } => "mean-stress-domain",
            QoiKind::MeanTractionDirichlet { .. } => "mean-traction-dirichlet",
            QoiKind::Gsif(_) => "gsif",
        }
    }

    /// Region of the domain kinds.
    pub fn region(&self) -> Option<&Region> {
        match &self.kind {
            QoiKind::MeanDisplacementDomain { region, .. }
            | QoiKind::MeanStrainDomain { region, .. }
            | QoiKind::MeanStressDomain { region, .. } => Some(region),
            _ => None,
        }
    }

    /// `|Ω_I|` or `|Γ_I|` on `mesh`; 1 for the GSIF.
    pub fn measure(&self, mesh: &QuadtreeMesh) -> Result<f64> {
        let m = match &self.kind {
            QoiKind::MeanDisplacementDomain { region, .. }
            | QoiKind::MeanStrainDomain { region, .. }
            | QoiKind::MeanStressDomain { region, .. } => {
                for root in region.roots() {
                    if !mesh.elements().iter().any(|el| el.root == root) {
                        return Err(Error::Region(format!("root cell {root} is not in the mesh")));
                    }
                }
                region.area(mesh)
            }
            QoiKind::MeanDisplacementBoundary { tag, .. } | QoiKind::MeanTractionDirichlet { tag, .. } => mesh
                .boundary_with_tag(tag)
                .flat_map(|b| mesh.edge_quadrature(b.element, b.side, QOI_ORDER))
                .map(|p| p.weight)
                .sum(),
            QoiKind::Gsif(_) => 1.0,
        };
        if m > 0.0 {
            Ok(m)
        } else {
            Err(Error::Region(format!("{} has zero measure on this mesh", self.name())))
        }
    }

    fn region_integral(
        &self,
        mesh: &QuadtreeMesh,
        region: &Region,
        f: impl Fn(usize, f64, f64) -> f64,
    ) -> Result<f64> {
        let mut total = 0.0;
        for e in region.elements(mesh) {
            for q in mesh.element_quadrature(e, QOI_ORDER)? {
                total += q.weight * f(e, q.s, q.t);
            }
        }
        Ok(total / self.measure(mesh)?)
    }

    /// Lifting `δ` of the extractor: values at the non-hanging nodes of the
    /// Dirichlet tag, zero elsewhere.
    pub fn lifting(&self, mesh: &QuadtreeMesh) -> Result<BTreeMap<usize, Vector2<f64>>> {
        let QoiKind::MeanTractionDirichlet { extractor, tag } = &self.kind else {
            return Ok(BTreeMap::new());
        };
        let measure = self.measure(mesh)?;
        Ok(mesh
            .node_normals(tag)
            .into_iter()
            .filter(|(node, _)| !mesh.is_hanging(*node))
            .map(|(node, n)| (node, rotate_back(*extractor, n) / measure))
            .collect())
    }

    fn lifting_at(mesh: &QuadtreeMesh, delta: &BTreeMap<usize, Vector2<f64>>, node: usize) -> Vector2<f64> {
        mesh.constraint_expansion(node)
            .into_iter()
            .filter_map(|(m, w)| delta.get(&m).map(|v| v * w))
            .sum()
    }

    /// Direct quadrature of the defining functional on any sampler. For the
    /// reaction kind this is `∫_Γ_I δᵀ σ n` with the nodal lifting `δ`.
    pub fn evaluate(&self, field: &dyn FieldSampler) -> Result<f64> {
        let mesh = field.mesh();
        match &self.kind {
            QoiKind::MeanDisplacementDomain { extractor, region } => {
                self.region_integral(mesh, region, |e, s, t| extractor.dot(&field.displacement(e, s, t)))
            }
            QoiKind::MeanStrainDomain { extractor, region } => {
                self.region_integral(mesh, region, |e, s, t| extractor.dot(&field.strain(e, s, t).to_vector()))
            }
            QoiKind::MeanStressDomain { extractor, region } => {
                self.region_integral(mesh, region, |e, s, t| extractor.dot(&field.stress(e, s, t).to_vector()))
            }
            QoiKind::MeanDisplacementBoundary { extractor, tag, normal_frame } => {
                let mut total = 0.0;
                for b in mesh.boundary_with_tag(tag) {
                    for p in mesh.edge_quadrature(b.element, b.side, QOI_ORDER) {
                        let c = if *normal_frame { rotate_back(*extractor, p.normal) } else { *extractor };
                        total += p.weight * c.dot(&field.displacement(b.element, p.s, p.t));
                    }
                }
                Ok(total / self.measure(mesh)?)
            }
            QoiKind::MeanTractionDirichlet { tag, .. } => {
                let delta = self.lifting(mesh)?;
                let mut total = 0.0;
                for b in mesh.boundary_with_tag(tag) {
                    let nodes = mesh.element(b.element).nodes;
                    for p in mesh.edge_quadrature(b.element, b.side, QOI_ORDER) {
                        let (n, _) = bilinear(p.s, p.t);
                        let d: Vector2<f64> =
                            (0..4).map(|a| Self::lifting_at(mesh, &delta, nodes[a]) * n[a]).sum();
                        total += p.weight * d.dot(&traction_projection(field.stress(b.element, p.s, p.t), p.normal));
                    }
                }
                Ok(total)
            }
            QoiKind::Gsif(ex) => {
                ex.integrate_mesh(mesh, |e, s, t| (field.displacement(e, s, t), field.stress(e, s, t)))
            }
        }
    }

    /// `Q(u^h)` for an FE solution: reactions for the Dirichlet kind, the
    /// extraction integral on `D ε(u^h)` for the GSIF, direct quadrature otherwise.
    pub fn value(&self, field: &FEField) -> Result<f64> {
        match &self.kind {
            QoiKind::MeanTractionDirichlet { .. } => {
                let delta = self.lifting(field.mesh())?;
                let r = field.nodal_residual();
                Ok(delta.iter().map(|(&n, d)| d.dot(&r[n])).sum())
            }
            QoiKind::Gsif(ex) => ex.extract(field),
            _ => self.evaluate(field),
        }
    }

    /// Linear part `Q̃(v)`, which the dual loads reproduce.
    pub fn linearized(&self, field: &FEField) -> Result<f64> {
        let mesh = field.mesh();
        let mat = field.material();
        match &self.kind {
            QoiKind::MeanStressDomain { extractor, region } => self.region_integral(mesh, region, |e, s, t| {
                extractor.dot(&mat.apply(field.strain_at(e, s, t)).to_vector())
            }),
            QoiKind::MeanTractionDirichlet { .. } => {
                let delta = self.lifting(mesh)?;
                let d = mat.elasticity_matrix();
                let order = stiffness_order(mesh);
                let mut total = 0.0;
                for (e, el) in mesh.elements().iter().enumerate() {
                    let de = nalgebra::SVector::<f64, 8>::from_fn(|i, _| {
                        Self::lifting_at(mesh, &delta, el.nodes[i / 2])[i % 2]
                    });
                    if de.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    for q in mesh.element_quadrature(e, order)? {
                        let ev = mesh.shape_eval(e, q.s, q.t);
                        let b = b_matrix(&ev);
                        let eps_delta = b * de;
                        let eps_v = field.strain_at(e, q.s, q.t).to_vector();
                        total += q.weight * eps_v.dot(&(d * eps_delta));
                    }
                }
                Ok(total)
            }
            QoiKind::Gsif(ex) => ex.extract(field),
            _ => self.evaluate(field),
        }
    }

    /// Loads and Dirichlet data of the dual problem. The dual Dirichlet data are
    /// the primal constraints made homogeneous, except for the reaction kind whose
    /// tag carries `−δ`.
    pub fn dual_problem(&self, mesh: &QuadtreeMesh, primal: &DirichletSet) -> Result<DualProblem> {
        let mut dirichlet = DirichletSet::new();
        for (tag, p) in &primal.tags {
            dirichlet = dirichlet.with_tag(tag, Prescribed::zero(p.mask));
        }
        for (x, p) in &primal.points {
            dirichlet = dirichlet.with_point(*x, Prescribed::zero(p.mask));
        }
        let measure = self.measure(mesh)?;
        let loads = LoadSet::new().with_quadrature_order(QOI_ORDER);
        let loads = match self.kind.clone() {
            QoiKind::MeanDisplacementDomain { extractor, region } => {
                let b = extractor / measure;
                loads.with_body_force(move |site| if region.contains_root(site.root) { b } else { Vector2::zeros() })
            }
            QoiKind::MeanDisplacementBoundary { extractor, tag, normal_frame } => {
                let c = extractor / measure;
                loads.with_traction(&tag, move |_, n| if normal_frame { rotate_back(c, n) } else { c })
            }
            QoiKind::MeanStrainDomain { extractor, region } => {
                let s0 = VoigtStress::from_vector(&(-extractor / measure));
                loads.with_initial_stress(move |site| if region.contains_root(site.root) { s0 } else { VoigtStress::ZERO })
            }
            QoiKind::MeanStressDomain { extractor, region } => {
                let e0 = VoigtStrain::from_vector(&(extractor / measure));
                loads.with_initial_strain(move |site| if region.contains_root(site.root) { e0 } else { VoigtStrain::ZERO })
            }
            QoiKind::MeanTractionDirichlet { extractor, tag } => {
                match primal.tags.get(&tag) {
                    Some(p) if p.mask == [true, true] => {}
                    _ => {
                        return Err(Error::InvalidInput(format!(
                            "reaction quantity needs both components prescribed on '{tag}'"
                        )))
                    }
                }
                let c = extractor / measure;
                dirichlet = dirichlet.with_tag(&tag, Prescribed::new([true, true], move |_, n| -rotate_back(c, n)));
                loads
            }
            QoiKind::Gsif(ex) => {
                ex.check_domain(mesh)?;
                ex.dual_loads()
            }
        };
        Ok(DualProblem { loads, dirichlet })
    }
}

/// FE solution of the dual problem on the primal mesh.
pub fn dual_solve(
    qoi: &QuantityOfInterest,
    mesh: &Arc<QuadtreeMesh>,
    material: &MaterialModel,
    primal_dirichlet: &DirichletSet,
) -> Result<FEField> {
    let dual = qoi.dual_problem(mesh, primal_dirichlet)?;
    solve_problem(mesh, material, &Arc::new(dual.loads), &dual.dirichlet)
}

/// `Q` evaluated by direct quadrature on a sampler.
pub fn evaluate_qoi(qoi: &QuantityOfInterest, field: &dyn FieldSampler) -> Result<f64> {
    qoi.evaluate(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble, Site};
    use crate::geometry::{tags, GeometryMap};
    use crate::mesh::build_initial_mesh;
    use nalgebra::Point2;

    fn steel() -> MaterialModel {
        MaterialModel::plane_strain(1000.0, 0.3).unwrap()
    }

    fn square() -> Arc<QuadtreeMesh> {
        let g = GeometryMap::polygon(vec![
            Point2::new(0.0, 0.0),
            Point2::new(2.0, 0.0),
            Point2::new(2.0, 2.0),
            Point2::new(0.0, 2.0),
        ])
        .unwrap();
        Arc::new(build_initial_mesh(g, 2, 2).unwrap().uniformly_refined())
    }

    fn annulus() -> Arc<QuadtreeMesh> {
        let g = GeometryMap::annulus_quarter(5.0, 20.0).unwrap();
        Arc::new(build_initial_mesh(g, 4, 4).unwrap().refine(&[3, 9]))
    }

    fn clamped() -> DirichletSet {
        DirichletSet::new().with_symmetry("s0", 1).with_symmetry("s3", 0)
    }

    #[test]
    fn domain_load_instantiation() {
        let mesh = square();
        let region = Region::from_roots([0, 1]);
        let q = QuantityOfInterest::new(QoiKind::MeanDisplacementDomain { extractor: Vector2::new(1.0, 0.0), region }).unwrap();
        assert!((q.measure(&mesh).unwrap() - 2.0).abs() < 1e-14);
        let dual = q.dual_problem(&mesh, &clamped()).unwrap();
        let inside = dual.loads.body_force_at(&Site { x: Point2::new(0.5, 0.5), root: 0 });
        let outside = dual.loads.body_force_at(&Site { x: Point2::new(0.5, 1.5), root: 2 });
        assert_eq!((inside, outside), (Vector2::new(0.5, 0.0), Vector2::zeros()));
        assert!(dual.loads.tractions.is_empty() && !dual.loads.has_initial_fields());
    }

    #[test]
    fn mean_stress_gives_initial_strain() {
        let mesh = square();
        let q = QuantityOfInterest::new(QoiKind::MeanStressDomain {
            extractor: Vector3::new(1.0, 0.0, 0.0),
            region: Region::from_roots([3]),
        })
        .unwrap();
        let a = q.measure(&mesh).unwrap();
        let dual = q.dual_problem(&mesh, &clamped()).unwrap();
        let e0 = dual.loads.initial_strain_at(&Site { x: Point2::new(1.5, 1.5), root: 3 });
        assert_eq!(e0, VoigtStrain::new(1.0 / a, 0.0, 0.0));
        assert!(dual.loads.body_force.is_none() && dual.loads.initial_stress.is_none());
    }

    #[test]
    fn reaction_kind_prescribes_minus_lifting() {
        let mesh = annulus();
        let primal = DirichletSet::new()
            .with_tag(tags::INNER, Prescribed::new([true, true], |_, n| -n.as_vector()))
            .with_symmetry(tags::BOTTOM, 1)
            .with_symmetry(tags::LEFT, 0);
        let q = QuantityOfInterest::new(QoiKind::MeanTractionDirichlet { extractor: Vector2::new(1.0, 0.0), tag: tags::INNER.into() }).unwrap();
        let gamma = q.measure(&mesh).unwrap();
        assert!((gamma - 2.5 * std::f64::consts::PI).abs() < 1e-12);
        let dual = q.dual_problem(&mesh, &primal).unwrap();
        let p = Point2::new(5.0, 0.0);
        let n = UnitNormal::new(-1.0, 0.0).unwrap();
        let v = (dual.dirichlet.tags[tags::INNER].value)(&p, n);
        assert!((v - Vector2::new(1.0 / gamma, 0.0)).norm() < 1e-15);
        assert!((dual.dirichlet.tags[tags::BOTTOM].value)(&p, n) == Vector2::zeros());
        let partial = DirichletSet::new().with_symmetry(tags::INNER, 0);
        assert!(q.dual_problem(&mesh, &partial).is_err());
    }

    #[test]
    fn zero_extractor_gives_zero_dual() {
        let mesh = square();
        let q = QuantityOfInterest::new(QoiKind::MeanStrainDomain { extractor: Vector3::zeros(), region: Region::from_roots([0]) }).unwrap();
        let u = dual_solve(&q, &mesh, &steel(), &clamped()).unwrap();
        assert!(u.displacements().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn empty_region_rejected() {
        let err = QuantityOfInterest::new(QoiKind::MeanStressDomain { extractor: Vector3::x(), region: Region::default() });
        assert!(err.is_err());
        let q = QuantityOfInterest::new(QoiKind::MeanStressDomain { extractor: Vector3::x(), region: Region::from_roots([99]) }).unwrap();
        assert!(q.measure(&square()).is_err());
    }

    #[test]
    fn rotated_extractor_is_mean_radial_displacement() {
        let mesh = annulus();
        let u = crate::fem::FEField::from_nodal(
            mesh.clone(),
            steel(),
            Arc::new(LoadSet::new()),
            Arc::new(DirichletSet::new()),
            mesh.nodes().iter().map(|p| p.coords * (0.01 * (1.0 + p.y / 20.0))).collect(),
        )
        .unwrap();
        let q = QuantityOfInterest::new(QoiKind::MeanDisplacementBoundary {
            extractor: Vector2::new(1.0, 0.0),
            tag: tags::OUTER.into(),
            normal_frame: true,
        })
        .unwrap();
        // Oracle: polar quadrature of u_r along each outer edge, on which the FE
        // field is linear in the angle.
        let mut oracle = 0.0;
        for b in mesh.boundary_with_tag(tags::OUTER) {
            let [c0, c1] = QuadtreeMesh::edge_corners(b.side);
            let (p0, p1) = (mesh.element_point(b.element, c0.0, c0.1), mesh.element_point(b.element, c1.0, c1.1));
            let (t0, t1) = (p0.y.atan2(p0.x), p1.y.atan2(p1.x));
            for k in 0..200 {
                let f = (k as f64 + 0.5) / 200.0;
                let th = t0 + f * (t1 - t0);
                let (s, t) = (c0.0 + f * (c1.0 - c0.0), c0.1 + f * (c1.1 - c0.1));
                let uu = u.displacement_at(b.element, s, t);
                oracle += (uu.x * th.cos() + uu.y * th.sin()) * 20.0 * (t1 - t0).abs() / 200.0;
            }
        }
        oracle /= 10.0 * std::f64::consts::PI;
        assert!((q.value(&u).unwrap() - oracle).abs() < 1e-6 * oracle.abs());
    }

    #[test]
    fn dual_rhs_equals_linearized_functional() {
        let mesh = annulus();
        let primal = DirichletSet::new()
            .with_tag(tags::INNER, Prescribed::zero([true, true]))
            .with_symmetry(tags::BOTTOM, 1)
            .with_symmetry(tags::LEFT, 0);
        let region = Region::from_roots([5, 6]);
        let kinds = vec![
            QoiKind::MeanDisplacementDomain { extractor: Vector2::new(0.3, -1.0), region: region.clone() },
            QoiKind::MeanDisplacementBoundary { extractor: Vector2::new(1.0, 0.5), tag: tags::OUTER.into(), normal_frame: true },
            QoiKind::MeanStrainDomain { extractor: Vector3::new(1.0, 2.0, -0.5), region: region.clone() },
            QoiKind::MeanStressDomain { extractor: Vector3::new(0.0, 1.0, 0.5), region },
            QoiKind::MeanTractionDirichlet { extractor: Vector2::new(-1.0, 0.2), tag: tags::INNER.into() },
        ];
        for kind in kinds {
            let q = QuantityOfInterest::new(kind).unwrap();
            let dual = q.dual_problem(&mesh, &primal).unwrap();
            let sys = assemble(&mesh, &steel(), &Arc::new(dual.loads.clone()), &dual.dirichlet).unwrap();
            let homog = assemble(&mesh, &steel(), &Arc::new(LoadSet::new()), &q.dual_problem(&mesh, &primal).map(|d| {
                let mut h = DirichletSet::new();
                for (t, p) in &d.dirichlet.tags {
                    h = h.with_tag(t, Prescribed::zero(p.mask));
                }
                h
            }).unwrap()).unwrap();
            let x: Vec<f64> = (0..sys.num_unknowns()).map(|i| ((i * 7919) % 101) as f64 / 101.0 - 0.5).collect();
            let v = crate::fem::FEField::from_nodal(
                mesh.clone(),
                steel(),
                Arc::new(LoadSet::new()),
                Arc::new(DirichletSet::new()),
                homog.expand(&x),
            )
            .unwrap();
            let rhs: f64 = sys.rhs().iter().zip(&x).map(|(a, b)| a * b).sum();
            let direct = q.linearized(&v).unwrap();
            assert!((rhs - direct).abs() <= 1e-10 * direct.abs(), "{}: {rhs} vs {direct}", q.name());
        }
    }
}
