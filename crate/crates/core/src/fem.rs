//! Assembly and direct solution of the discrete elasticity problem.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use nalgebra::{Point2, SMatrix, SVector, Vector2};
use rayon::prelude::*;

use crate::elasticity::{MaterialModel, UnitNormal, VoigtStrain, VoigtStress};
use crate::error::{Error, Result};
use crate::mesh::{QuadPoint, QuadtreeMesh, ShapeEval};
use crate::quadrature::tensor_rule;

/// A point of the domain together with the root cell of the element it was
/// sampled from, so that region-restricted data can be evaluated unambiguously.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Site {
    pub x: Point2<f64>,
    pub root: usize,
}

pub type VectorFn = Arc<dyn Fn(&Site) -> Vector2<f64> + Send + Sync>;
pub type StressFn = Arc<dyn Fn(&Site) -> VoigtStress + Send + Sync>;
pub type StrainFn = Arc<dyn Fn(&Site) -> VoigtStrain + Send + Sync>;
/// Traction as a function of position and outward normal.
pub type TractionFn = Arc<dyn Fn(&Point2<f64>, UnitNormal) -> Vector2<f64> + Send + Sync>;
/// Prescribed displacement as a function of position and outward normal.
pub type DisplacementFn = Arc<dyn Fn(&Point2<f64>, UnitNormal) -> Vector2<f64> + Send + Sync>;

/// Body force, tractions and initial stress/strain driving one problem.
#[derive(Clone, Default)]
pub struct LoadSet {
    pub body_force: Option<VectorFn>,
    pub tractions: BTreeMap<String, TractionFn>,
    pub initial_stress: Option<StressFn>,
    pub initial_strain: Option<StrainFn>,
    /// Gauss points per direction for load integrals; defaults to the stiffness rule.
    pub quadrature_order: Option<usize>,
}

impl fmt::Debug for LoadSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LoadSet")
            .field("body_force", &self.body_force.is_some())
            .field("tractions", &self.tractions.keys().collect::<Vec<_>>())
            .field("initial_stress", &self.initial_stress.is_some())
            .field("initial_strain", &self.initial_strain.is_some())
            .field("quadrature_order", &self.quadrature_order)
            .finish()
    }
}

impl LoadSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_body_force(mut self, f: impl Fn(&Site) -> Vector2<f64> + Send + Sync + 'static) -> Self {
        self.body_force = Some(Arc::new(f));
        self
    }

    pub fn with_traction(
        mut self,
        tag: &str,
        f: impl Fn(&Point2<f64>, UnitNormal) -> Vector2<f64> + Send + Sync + 'static,
    ) -> Self {
        self.tractions.insert(tag.to_string(), Arc::new(f));
        self
    }

    pub fn with_initial_stress(mut self, f: impl Fn(&Site) -> VoigtStress + Send + Sync + 'static) -> Self {
        self.initial_stress = Some(Arc::new(f));
        self
    }

    pub fn with_initial_strain(mut self, f: impl Fn(&Site) -> VoigtStrain + Send + Sync + 'static) -> Self {
        self.initial_strain = Some(Arc::new(f));
        self
    }

    pub fn with_quadrature_order(mut self, order: usize) -> Self {
        self.quadrature_order = Some(order);
        self
    }

    pub fn body_force_at(&self, site: &Site) -> Vector2<f64> {
        self.body_force.as_ref().map_or(Vector2::zeros(), |f| f(site))
    }

    pub fn initial_stress_at(&self, site: &Site) -> VoigtStress {
        self.initial_stress.as_ref().map_or(VoigtStress::ZERO, |f| f(site))
    }

    pub fn initial_strain_at(&self, site: &Site) -> VoigtStrain {
        self.initial_strain.as_ref().map_or(VoigtStrain::ZERO, |f| f(site))
    }

    pub fn has_initial_fields(&self) -> bool {
        self.initial_stress.is_some() || self.initial_strain.is_some()
    }
}

/// Displacement components prescribed on part of the boundary.
#[derive(Clone)]
pub struct Prescribed {
    /// Which Cartesian components are fixed.
    pub mask: [bool; 2],
    pub value: DisplacementFn,
}

impl Prescribed {
    pub fn new(mask: [bool; 2], value: impl Fn(&Point2<f64>, UnitNormal) -> Vector2<f64> + Send + Sync + 'static) -> Self {
        Self { mask, value: Arc::new(value) }
    }

    pub fn zero(mask: [bool; 2]) -> Self {
        Self::new(mask, |_, _| Vector2::zeros())
    }
}

impl fmt::Debug for Prescribed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Prescribed").field("mask", &self.mask).finish()
    }
}

/// Dirichlet data on tagged boundary pieces and on isolated nodes.
#[derive(Debug, Clone, Default)]
pub struct DirichletSet {
    pub tags: BTreeMap<String, Prescribed>,
    pub points: Vec<(Point2<f64>, Prescribed)>,
}

impl DirichletSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_tag(mut self, tag: &str, prescribed: Prescribed) -> Self {
        self.tags.insert(tag.to_string(), prescribed);
        self
    }

    /// Zero normal displacement on an edge lying along a coordinate axis direction
    /// (`component` 0 fixes `u_x`, 1 fixes `u_y`).
    pub fn with_symmetry(self, tag: &str, component: usize) -> Self {
        let mut mask = [false; 2];
        mask[component] = true;
        self.with_tag(tag, Prescribed::zero(mask))
    }

    pub fn with_point(mut self, p: Point2<f64>, prescribed: Prescribed) -> Self {
        self.points.push((p, prescribed));
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Dof {
    Free(usize),
    Fixed(f64),
}

/// Mapping from node components to unknowns or prescribed values.
#[derive(Debug, Clone)]
pub struct DofMap {
    node_dofs: Vec<[Option<Dof>; 2]>,
    num_free: usize,
}

impl DofMap {
    fn build(mesh: &QuadtreeMesh, dirichlet: &DirichletSet) -> Result<Self> {
        let mut fixed: Vec<[Option<f64>; 2]> = vec![[None; 2]; mesh.num_nodes()];
        // Fully prescribed tags win at nodes shared with partially prescribed ones.
        let mut ordered: Vec<_> = dirichlet.tags.iter().collect();
        ordered.sort_by_key(|(_, p)| p.mask.iter().filter(|m| **m).count());
        for (tag, p) in ordered {
            let normals = mesh.node_normals(tag);
            if normals.is_empty() {
                return Err(Error::InvalidInput(format!("Dirichlet tag '{tag}' is not on the mesh")));
            }
            for (node, n) in normals {
                let v = (p.value)(&mesh.nodes()[node], n);
                for c in 0..2 {
                    if p.mask[c] {
                        fixed[node][c] = Some(v[c]);
                    }
                }
            }
        }
        for (x, p) in &dirichlet.points {
            let tol = 1e-9 * (1.0 + x.coords.norm());
            let node = mesh
                .find_node(x, tol)
                .ok_or_else(|| Error::InvalidInput(format!("no node at ({}, {})", x.x, x.y)))?;
            if mesh.is_hanging(node) {
                return Err(Error::InvalidInput(format!("node at ({}, {}) is hanging", x.x, x.y)));
            }
            let v = (p.value)(x, UnitNormal::from_angle(0.0));
            for c in 0..2 {
                if p.mask[c] {
                    fixed[node][c] = Some(v[c]);
                }
            }
        }
        let mut num_free = 0;
        let node_dofs = (0..mesh.num_nodes())
            .map(|n| {
                if mesh.is_hanging(n) {
                    return [None, None];
                }
                let mut d = [None; 2];
                for c in 0..2 {
                    d[c] = Some(match fixed[n][c] {
                        Some(v) => Dof::Fixed(v),
                        None => {
                            num_free += 1;
                            Dof::Free(num_free - 1)
                        }
                    });
                }
                d
            })
            .collect();
        Ok(Self { node_dofs, num_free })
    }

    pub fn num_free(&self) -> usize {
        self.num_free
    }

    /// Unknown index of component `c` of a non-hanging node, if free.
    pub fn free_index(&self, node: usize, c: usize) -> Option<usize> {
        match self.node_dofs[node][c] {
            Some(Dof::Free(k)) => Some(k),
            _ => None,
        }
    }

    /// Prescribed value of component `c` of a node, if fixed.
    pub fn fixed_value(&self, node: usize, c: usize) -> Option<f64> {
        match self.node_dofs[node][c] {
            Some(Dof::Fixed(v)) => Some(v),
            _ => None,
        }
    }

    fn dof(&self, node: usize, c: usize) -> Dof {
        self.node_dofs[node][c].expect("free node")
    }
}

/// Stiffness rule: exact for bilinear elements on affine maps, higher on curved maps.
pub fn stiffness_order(mesh: &QuadtreeMesh) -> usize {
    if mesh.geometry().is_affine() {
        2
    } else {
        4
    }
}

type ElementMatrix = SMatrix<f64, 8, 8>;
type ElementVector = SVector<f64, 8>;

/// Strain-displacement matrix at a shape evaluation.
pub fn b_matrix(ev: &ShapeEval) -> SMatrix<f64, 3, 8> {
    let mut b = SMatrix::<f64, 3, 8>::zeros();
    for (a, g) in ev.dn_dx.iter().enumerate() {
        b[(0, 2 * a)] = g.x;
        b[(1, 2 * a + 1)] = g.y;
        b[(2, 2 * a)] = g.y;
        b[(2, 2 * a + 1)] = g.x;
    }
    b
}

fn element_stiffness(mesh: &QuadtreeMesh, material: &MaterialModel, e: usize, order: usize) -> ElementMatrix {
    let d = material.elasticity_matrix();
    let mut k = ElementMatrix::zeros();
    for ((s, t), w) in tensor_rule(order) {
        let ev = mesh.shape_eval(e, s, t);
        let b = b_matrix(&ev);
        k += b.transpose() * d * b * (w * ev.det_j);
    }
    k
}

fn element_load(
    mesh: &QuadtreeMesh,
    material: &MaterialModel,
    loads: &LoadSet,
    edges: &[(usize, &str)],
    e: usize,
    order: usize,
) -> ElementVector {
    let mut f = ElementVector::zeros();
    let root = mesh.element(e).root;
    let volume_terms = loads.body_force.is_some() || loads.has_initial_fields();
    if volume_terms {
        let d = material.elasticity_matrix();
        for ((s, t), w) in tensor_rule(order) {
            let ev = mesh.shape_eval(e, s, t);
            let site = Site { x: ev.x, root };
            let wj = w * ev.det_j;
            let b = loads.body_force_at(&site);
            for a in 0..4 {
                f[2 * a] += ev.n[a] * b.x * wj;
                f[2 * a + 1] += ev.n[a] * b.y * wj;
            }
            if loads.has_initial_fields() {
                let s0 = loads.initial_stress_at(&site).to_vector();
                let e0 = loads.initial_strain_at(&site).to_vector();
                f += b_matrix(&ev).transpose() * (d * e0 - s0) * wj;
            }
        }
    }
    for &(side, tag) in edges {
        if let Some(tf) = loads.tractions.get(tag) {
            for p in mesh.edge_quadrature(e, side, order) {
                let (n, _) = crate::mesh::bilinear(p.s, p.t);
                let tv = tf(&p.x, p.normal);
                for a in 0..4 {
                    f[2 * a] += n[a] * tv.x * p.weight;
                    f[2 * a + 1] += n[a] * tv.y * p.weight;
                }
            }
        }
    }
    f
}

fn boundary_edges_by_element(mesh: &QuadtreeMesh) -> Vec<Vec<(usize, &str)>> {
    let mut out = vec![Vec::new(); mesh.num_elements()];
    for b in mesh.boundary() {
        out[b.element].push((b.side, b.tag.as_str()));
    }
    out
}

/// Load integrals gathered per node before any constraint is applied, so that
/// `Σ_n F_n · v_n` is the load functional of a conforming field `v`.
pub fn nodal_load_vector(
    mesh: &QuadtreeMesh,
    material: &MaterialModel,
    loads: &LoadSet,
) -> Vec<Vector2<f64>> {
    let order = loads.quadrature_order.unwrap_or_else(|| stiffness_order(mesh));
    let edges = boundary_edges_by_element(mesh);
    let per_element: Vec<ElementVector> = (0..mesh.num_elements())
        .into_par_iter()
        .map(|e| element_load(mesh, material, loads, &edges[e], e, order))
        .collect();
    let mut out = vec![Vector2::zeros(); mesh.num_nodes()];
    for (e, f) in per_element.iter().enumerate() {
        for (a, &n) in mesh.element(e).nodes.iter().enumerate() {
            out[n] += Vector2::new(f[2 * a], f[2 * a + 1]);
        }
    }
    out
}

/// Reduced symmetric positive definite system after eliminating prescribed and
/// hanging degrees of freedom.
pub struct LinearSystem {
    mesh: Arc<QuadtreeMesh>,
    material: MaterialModel,
    loads: Arc<LoadSet>,
    dirichlet: Arc<DirichletSet>,
    dofs: DofMap,
    matrix: SparseColMat<usize, f64>,
    entries: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
}

impl fmt::Debug for LinearSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearSystem")
            .field("unknowns", &self.dofs.num_free)
            .field("nonzeros", &self.entries.len())
            .finish()
    }
}

impl LinearSystem {
    pub fn num_unknowns(&self) -> usize {
        self.dofs.num_free
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn dofs(&self) -> &DofMap {
        &self.dofs
    }

    pub fn mesh(&self) -> &Arc<QuadtreeMesh> {
        &self.mesh
    }

    /// `K x` for the reduced matrix.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for &(i, j, v) in &self.entries {
            y[i] += v * x[j];
        }
        y
    }

    /// Reduced unknowns of a conforming nodal field.
    pub fn restrict(&self, displacements: &[Vector2<f64>]) -> Vec<f64> {
        let mut x = vec![0.0; self.dofs.num_free];
        for (n, u) in displacements.iter().enumerate() {
            for c in 0..2 {
                if let Some(k) = self.dofs.free_index(n, c) {
                    x[k] = u[c];
                }
            }
        }
        x
    }

    /// Nodal field from reduced unknowns, filling prescribed and hanging values.
    pub fn expand(&self, x: &[f64]) -> Vec<Vector2<f64>> {
        let mesh = &self.mesh;
        let mut u = vec![Vector2::zeros(); mesh.num_nodes()];
        for n in 0..mesh.num_nodes() {
            for (m, w) in mesh.constraint_expansion(n) {
                for c in 0..2 {
                    u[n][c] += w * match self.dofs.dof(m, c) {
                        Dof::Free(k) => x[k],
                        Dof::Fixed(v) => v,
                    };
                }
            }
        }
        u
    }
}

/// Assembles stiffness and load with constraint elimination.
pub fn assemble(
    mesh: &Arc<QuadtreeMesh>,
    material: &MaterialModel,
    loads: &Arc<LoadSet>,
    dirichlet: &DirichletSet,
) -> Result<LinearSystem> {
    for tag in dirichlet.tags.keys() {
        if loads.tractions.contains_key(tag) {
            return Err(Error::InvalidInput(format!(
                "boundary '{tag}' carries both traction and Dirichlet data"
            )));
        }
    }
    let dofs = DofMap::build(mesh, dirichlet)?;
    let order = stiffness_order(mesh);
    let load_order = loads.quadrature_order.unwrap_or(order);
    let edges = boundary_edges_by_element(mesh);

    let blocks: Vec<(ElementMatrix, ElementVector)> = (0..mesh.num_elements())
        .into_par_iter()
        .map(|e| {
            (
                element_stiffness(mesh, material, e, order),
                element_load(mesh, material, loads, &edges[e], e, load_order),
            )
        })
        .collect();

    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(mesh.num_elements() * 64);
    let mut rhs = vec![0.0; dofs.num_free];
    let mut local: Vec<Vec<(Dof, f64)>> = vec![Vec::new(); 8];
    for (e, (ke, fe)) in blocks.iter().enumerate() {
        for (a, &n) in mesh.element(e).nodes.iter().enumerate() {
            let expansion = mesh.constraint_expansion(n);
            for c in 0..2 {
                local[2 * a + c] = expansion.iter().map(|&(m, w)| (dofs.dof(m, c), w)).collect();
            }
        }
        for i in 0..8 {
            for &(di, wi) in &local[i] {
                let Dof::Free(gi) = di else { continue };
                rhs[gi] += wi * fe[i];
                for j in 0..8 {
                    let kij = ke[(i, j)];
                    for &(dj, wj) in &local[j] {
                        match dj {
                            Dof::Free(gj) => triplets.push((gi, gj, wi * wj * kij)),
                            Dof::Fixed(v) => rhs[gi] -= wi * wj * kij * v,
                        }
                    }
                }
            }
        }
    }
    let entries = merge_triplets(triplets);
    let faer_triplets: Vec<Triplet<usize, usize, f64>> =
        entries.iter().map(|&(i, j, v)| Triplet::new(i, j, v)).collect();
    let matrix = SparseColMat::try_new_from_triplets(dofs.num_free, dofs.num_free, &faer_triplets)
        .map_err(|e| Error::SingularSystem(format!("sparse matrix construction failed: {e:?}")))?;
    Ok(LinearSystem {
        mesh: mesh.clone(),
        material: *material,
        loads: loads.clone(),
        dirichlet: Arc::new(dirichlet.clone()),
        dofs,
        matrix,
        entries,
        rhs,
    })
}

fn merge_triplets(mut t: Vec<(usize, usize, f64)>) -> Vec<(usize, usize, f64)> {
    t.par_sort_unstable_by_key(|&(i, j, _)| (j, i));
    let mut out: Vec<(usize, usize, f64)> = Vec::with_capacity(t.len() / 4);
    for (i, j, v) in t {
        match out.last_mut() {
            Some(last) if last.0 == i && last.1 == j => last.2 += v,
            _ => out.push((i, j, v)),
        }
    }
    out
}

const RESIDUAL_TOLERANCE: f64 = 1e-10;

/// Solves by sparse Cholesky factorisation.
pub fn solve(system: &LinearSystem) -> Result<FEField> {
    let n = system.dofs.num_free;
    let x = if n == 0 {
        Vec::new()
    } else {
        let llt = system.matrix.sp_cholesky(Side::Lower).map_err(|_| {
            Error::SingularSystem(format!(
                "factorisation of {n} unknowns failed; prescribe enough displacement \
                 components to remove both translations and the rotation"
            ))
        })?;
        let b = Mat::from_fn(n, 1, |i, _| system.rhs[i]);
        let sol = llt.solve(&b);
        (0..n).map(|i| sol[(i, 0)]).collect::<Vec<f64>>()
    };
    let kx = system.apply(&x);
    let res: f64 = kx.iter().zip(&system.rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = system.rhs.iter().map(|v| v * v).sum::<f64>().sqrt()
        + kx.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !res.is_finite() || (scale > 0.0 && res > RESIDUAL_TOLERANCE * scale) {
        return Err(Error::SolverAccuracy { residual: res / scale.max(f64::MIN_POSITIVE), tolerance: RESIDUAL_TOLERANCE });
    }
    Ok(FEField {
        mesh: system.mesh.clone(),
        material: system.material,
        loads: system.loads.clone(),
        dirichlet: system.dirichlet.clone(),
        displacements: system.expand(&x),
        num_dofs: n,
    })
}

/// Convenience wrapper around [`assemble`] and [`solve`].
pub fn solve_problem(
    mesh: &Arc<QuadtreeMesh>,
    material: &MaterialModel,
    loads: &Arc<LoadSet>,
    dirichlet: &DirichletSet,
) -> Result<FEField> {
    solve(&assemble(mesh, material, loads, dirichlet)?)
}

/// Nodal displacements together with the data needed to evaluate stresses.
#[derive(Debug, Clone)]
pub struct FEField {
    mesh: Arc<QuadtreeMesh>,
    material: MaterialModel,
    loads: Arc<LoadSet>,
    dirichlet: Arc<DirichletSet>,
    displacements: Vec<Vector2<f64>>,
    num_dofs: usize,
}

impl FEField {
    /// Field with given nodal values; hanging values are overwritten by interpolation.
    pub fn from_nodal(
        mesh: Arc<QuadtreeMesh>,
        material: MaterialModel,
        loads: Arc<LoadSet>,
        dirichlet: Arc<DirichletSet>,
        mut displacements: Vec<Vector2<f64>>,
    ) -> Result<Self> {
        if displacements.len() != mesh.num_nodes() {
            return Err(Error::InvalidInput(format!(
                "{} nodal values for {} nodes",
                displacements.len(),
                mesh.num_nodes()
            )));
        }
        for h in mesh.hanging_constraints() {
            let v: Vector2<f64> = mesh
                .constraint_expansion(h.slave)
                .iter()
                .map(|&(m, w)| displacements[m] * w)
                .sum();
            displacements[h.slave] = v;
        }
        let num_dofs = 2 * (mesh.num_nodes() - mesh.hanging_constraints().len());
        Ok(Self { mesh, material, loads, dirichlet, displacements, num_dofs })
    }

    pub fn mesh(&self) -> &Arc<QuadtreeMesh> {
        &self.mesh
    }

    pub fn material(&self) -> &MaterialModel {
        &self.material
    }

    pub fn loads(&self) -> &Arc<LoadSet> {
        &self.loads
    }

    pub fn dirichlet(&self) -> &Arc<DirichletSet> {
        &self.dirichlet
    }

    pub fn displacements(&self) -> &[Vector2<f64>] {
        &self.displacements
    }

    /// Number of unknowns of the solved system.
    pub fn num_dofs(&self) -> usize {
        self.num_dofs
    }

    pub fn displacement_at(&self, e: usize, s: f64, t: f64) -> Vector2<f64> {
        let (n, _) = crate::mesh::bilinear(s, t);
        let nodes = self.mesh.element(e).nodes;
        (0..4).map(|a| self.displacements[nodes[a]] * n[a]).sum()
    }

    /// `ε(u^h)` without initial strain.
    pub fn strain_at(&self, e: usize, s: f64, t: f64) -> VoigtStrain {
        let ev = self.mesh.shape_eval(e, s, t);
        self.strain_from_eval(e, &ev)
    }

    fn strain_from_eval(&self, e: usize, ev: &ShapeEval) -> VoigtStrain {
        let nodes = self.mesh.element(e).nodes;
        let mut eps = VoigtStrain::ZERO;
        for a in 0..4 {
            let u = self.displacements[nodes[a]];
            let g = ev.dn_dx[a];
            eps.xx += g.x * u.x;
            eps.yy += g.y * u.y;
            eps.xy += g.y * u.x + g.x * u.y;
        }
        eps
    }

    /// FE stress `D(ε(u^h) − ε₀) + σ₀`.
    pub fn stress_at(&self, e: usize, s: f64, t: f64) -> VoigtStress {
        let ev = self.mesh.shape_eval(e, s, t);
        let site = Site { x: ev.x, root: self.mesh.element(e).root };
        let eps = self.strain_from_eval(e, &ev);
        crate::elasticity::stress_from_strain(
            &self.material,
            eps,
            self.loads.initial_strain_at(&site),
            self.loads.initial_stress_at(&site),
        )
    }

    /// `a(u^h, u^h)` integrated with the stiffness rule.
    pub fn strain_energy(&self) -> f64 {
        let order = stiffness_order(&self.mesh);
        energy_inner_product(
            &self.mesh,
            &self.material,
            0..self.mesh.num_elements(),
            order,
            |e, q| self.material.apply(self.strain_at(e, q.s, q.t)),
            |e, q| self.material.apply(self.strain_at(e, q.s, q.t)),
        )
    }

    /// Per-node `K u − f` before constraint elimination, hanging contributions
    /// passed to their masters. Nonzero entries are reactions at prescribed DOFs.
    pub fn nodal_residual(&self) -> Vec<Vector2<f64>> {
        let mesh = &self.mesh;
        let order = stiffness_order(mesh);
        let load_order = self.loads.quadrature_order.unwrap_or(order);
        let edges = boundary_edges_by_element(mesh);
        let per_element: Vec<ElementVector> = (0..mesh.num_elements())
            .into_par_iter()
            .map(|e| {
                let ke = element_stiffness(mesh, &self.material, e, order);
                let fe = element_load(mesh, &self.material, &self.loads, &edges[e], e, load_order);
                let nodes = mesh.element(e).nodes;
                let ue = ElementVector::from_fn(|i, _| self.displacements[nodes[i / 2]][i % 2]);
                ke * ue - fe
            })
            .collect();
        let mut out = vec![Vector2::zeros(); mesh.num_nodes()];
        for (e, r) in per_element.iter().enumerate() {
            for (a, &n) in mesh.element(e).nodes.iter().enumerate() {
                for (m, w) in mesh.constraint_expansion(n) {
                    out[m] += Vector2::new(r[2 * a], r[2 * a + 1]) * w;
                }
            }
        }
        out
    }

    /// Writes `node x y ux uy`, one node per line.
    pub fn write_nodal_table<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# node x y ux uy")?;
        for (k, (p, u)) in self.mesh.nodes().iter().zip(&self.displacements).enumerate() {
            writeln!(out, "{k} {:.16e} {:.16e} {:.16e} {:.16e}", p.x, p.y, u.x, u.y)?;
        }
        Ok(())
    }
}

/// `fe_stress` as a free function.
pub fn fe_stress(field: &FEField, e: usize, s: f64, t: f64) -> VoigtStress {
    field.stress_at(e, s, t)
}

/// Per-element `∫ s1ᵀ D⁻¹ s2` with an `order`-point tensor rule.
pub fn element_energy_products<F, G>(
    mesh: &QuadtreeMesh,
    material: &MaterialModel,
    elements: impl IntoIterator<Item = usize>,
    order: usize,
    s1: F,
    s2: G,
) -> Vec<f64>
where
    F: Fn(usize, &QuadPoint) -> VoigtStress + Sync,
    G: Fn(usize, &QuadPoint) -> VoigtStress + Sync,
{
    let elements: Vec<usize> = elements.into_iter().collect();
    elements
        .par_iter()
        .map(|&e| {
            mesh.element_quadrature(e, order)
                .expect("valid mesh")
                .iter()
                .map(|q| q.weight * material.energy_product(s1(e, q), s2(e, q)))
                .sum()
        })
        .collect()
}

/// `∫ s1ᵀ D⁻¹ s2` over the given elements, summed in element order.
pub fn energy_inner_product<F, G>(
    mesh: &QuadtreeMesh,
    material: &MaterialModel,
    elements: impl IntoIterator<Item = usize>,
    order: usize,
    s1: F,
    s2: G,
) -> f64
where
    F: Fn(usize, &QuadPoint) -> VoigtStress + Sync,
    G: Fn(usize, &QuadPoint) -> VoigtStress + Sync,
{
    element_energy_products(mesh, material, elements, order, s1, s2).iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GeometryMap;
    use crate::mesh::build_initial_mesh;

    fn square_mesh(n: usize) -> Arc<QuadtreeMesh> {
        let g = GeometryMap::polygon(vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
        ])
        .unwrap();
        Arc::new(build_initial_mesh(g, n, n).unwrap())
    }

    fn unit_material() -> MaterialModel {
        MaterialModel::plane_strain(1.0, 0.0).unwrap()
    }

    #[test]
    fn single_element_tension() {
        // Square edges of the unit square polygon: s0 bottom, s1 right, s2 top, s3 left.
        let mesh = square_mesh(1);
        let loads = Arc::new(LoadSet::new().with_traction("s1", |_, n| n.as_vector()));
        let bc = DirichletSet::new()
            .with_symmetry("s3", 0)
            .with_point(Point2::new(0.0, 0.0), Prescribed::zero([false, true]));
        let u = solve_problem(&mesh, &unit_material(), &loads, &bc).unwrap();
        for e in 0..mesh.num_elements() {
            let s = u.stress_at(e, 0.2, -0.7);
            assert!((s.xx - 1.0).abs() < 1e-12 && s.yy.abs() < 1e-12 && s.xy.abs() < 1e-12);
        }
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let mesh = square_mesh(3);
        let bc = DirichletSet::new().with_symmetry("s3", 0).with_symmetry("s0", 1);
        let u = solve_problem(&mesh, &unit_material(), &Arc::new(LoadSet::new()), &bc).unwrap();
        assert!(u.displacements().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn free_eigenstrain_is_stress_free() {
        let mesh = Arc::new(square_mesh(2).refine(&[0]));
        let mat = MaterialModel::plane_strain(1000.0, 0.3).unwrap();
        let e0 = VoigtStrain::new(1e-3, -2e-3, 5e-4);
        let loads = Arc::new(LoadSet::new().with_initial_strain(move |_| e0));
        let bc = DirichletSet::new()
            .with_point(Point2::new(0.0, 0.0), Prescribed::zero([true, true]))
            .with_point(Point2::new(1.0, 0.0), Prescribed::zero([false, true]));
        let u = solve_problem(&mesh, &mat, &loads, &bc).unwrap();
        for e in 0..mesh.num_elements() {
            assert!(u.stress_at(e, 0.5, 0.1).max_abs() < 1e-10);
            let eps = u.strain_at(e, -0.3, 0.4);
            assert!((eps - e0).max_abs() < 1e-12);
        }
    }

    #[test]
    fn rigid_body_modes_are_reported() {
        let mesh = square_mesh(2);
        let bc = DirichletSet::new().with_symmetry("s3", 0);
        let loads = Arc::new(LoadSet::new().with_traction("s1", |_, n| n.as_vector()));
        let err = solve_problem(&mesh, &unit_material(), &loads, &bc).unwrap_err();
        assert!(matches!(err, Error::SingularSystem(_)), "{err}");
    }

    #[test]
    fn patch_test_on_graded_mesh() {
        let mesh = Arc::new(square_mesh(2).refine(&[0]).refine(&[0, 1]));
        let mat = MaterialModel::plane_strain(1000.0, 0.3).unwrap();
        let exact = |p: &Point2<f64>| Vector2::new(1e-3 * (1.0 + 2.0 * p.x - p.y), 1e-3 * (0.5 * p.x + 3.0 * p.y));
        let mut bc = DirichletSet::new();
        for tag in ["s0", "s1", "s2", "s3"] {
            bc = bc.with_tag(tag, Prescribed::new([true, true], move |p, _| exact(p)));
        }
        let u = solve_problem(&mesh, &mat, &Arc::new(LoadSet::new()), &bc).unwrap();
        for (p, v) in mesh.nodes().iter().zip(u.displacements()) {
            assert!((v - exact(p)).norm() < 1e-13);
        }
        let s = u.stress_at(3, 0.1, 0.2);
        let want = mat.apply(VoigtStrain::new(2e-3, 3e-3, -1e-3 + 0.5e-3));
        assert!((s - want).max_abs() < 1e-10);
    }

    #[test]
    fn reactions_balance_applied_load() {
        let mesh = Arc::new(square_mesh(3).refine(&[4]));
        let mat = MaterialModel::plane_strain(1000.0, 0.3).unwrap();
        let loads = Arc::new(
            LoadSet::new()
                .with_traction("s1", |p, _| Vector2::new(1.0 + p.y, 0.3))
                .with_body_force(|s| Vector2::new(0.0, -2.0 * s.x.x)),
        );
        let bc = DirichletSet::new().with_tag("s3", Prescribed::zero([true, true]));
        let u = solve_problem(&mesh, &mat, &loads, &bc).unwrap();
        let reaction: Vector2<f64> = u.nodal_residual().iter().sum();
        // Applied: traction 1.5 in x and 0.3 in y; body force −1 in y.
        let applied = Vector2::new(1.5, 0.3 - 1.0);
        assert!((reaction + applied).norm() < 1e-9 * applied.norm());
    }

    #[test]
    fn initial_stress_with_fixed_boundary() {
        let mesh = square_mesh(1);
        let mat = unit_material();
        let s0 = VoigtStress::new(2.0, -1.0, 0.5);
        let loads = Arc::new(LoadSet::new().with_initial_stress(move |_| s0));
        let mut bc = DirichletSet::new();
        for tag in ["s0", "s1", "s2", "s3"] {
            bc = bc.with_tag(tag, Prescribed::zero([true, true]));
        }
        let u = solve_problem(&mesh, &mat, &loads, &bc).unwrap();
        assert_eq!(u.num_dofs(), 0);
        assert!((u.stress_at(0, 0.0, 0.0) - s0).max_abs() < 1e-15);
    }

    #[test]
    fn energy_inner_product_is_bilinear() {
        let mesh = square_mesh(2);
        let mat = MaterialModel::plane_strain(1000.0, 0.3).unwrap();
        let f = |_: usize, q: &QuadPoint| VoigtStress::new(q.x.x, q.x.y, 1.0);
        let g = |_: usize, q: &QuadPoint| VoigtStress::new(1.0, q.x.x * q.x.y, 0.0);
        let a = energy_inner_product(&mesh, &mat, 0..4, 3, f, g);
        let b = energy_inner_product(&mesh, &mat, 0..4, 3, |e, q| f(e, q) * 2.5, g);
        assert!((b - 2.5 * a).abs() < 1e-14 * b.abs());
        let ba = energy_inner_product(&mesh, &mat, 0..4, 3, g, f);
        assert!((a - ba).abs() < 1e-15 * a.abs().max(1e-300));
        let z = energy_inner_product(&mesh, &mat, 0..4, 3, |_, _| VoigtStress::ZERO, g);
        assert_eq!(z, 0.0);
    }

    #[test]
    fn traction_and_dirichlet_on_same_tag_rejected() {
        let mesh = square_mesh(1);
        let loads = Arc::new(LoadSet::new().with_traction("s1", |_, _| Vector2::zeros()));
        let bc = DirichletSet::new().with_symmetry("s1", 0);
        assert!(assemble(&mesh, &unit_material(), &loads, &bc).is_err());
    }
}
