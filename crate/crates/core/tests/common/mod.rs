//! Helpers shared by the integration tests.

#![allow(dead_code)]

use std::sync::Arc;

use goalfem::elasticity::{traction_projection, MaterialModel, VoigtStrain};
use goalfem::estimators::{qoi_estimates, zz_energy_estimate};
use goalfem::fem::{energy_inner_product, solve_problem, DirichletSet, LoadSet, Prescribed};
use goalfem::geometry::GeometryMap;
use goalfem::mesh::{build_initial_mesh, QuadtreeMesh, Region};
use goalfem::qoi::{dual_solve, QoiKind, QuantityOfInterest};
use goalfem::spr::{recover, RecoveryOptions};
use nalgebra::{Matrix2, Point2, Vector2};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn steel() -> MaterialModel {
    MaterialModel::plane_strain(1000.0, 0.3).unwrap()
}

pub fn square(side: f64) -> GeometryMap {
    GeometryMap::polygon(vec![
        Point2::new(0.0, 0.0),
        Point2::new(side, 0.0),
        Point2::new(side, side),
        Point2::new(0.0, side),
    ])
    .unwrap()
}

/// `mesh` refined `rounds` times at randomly chosen elements.
pub fn randomly_refined(mesh: QuadtreeMesh, rounds: usize, seed: u64) -> QuadtreeMesh {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut mesh = mesh;
    for _ in 0..rounds {
        let n = mesh.num_elements();
        let marked: Vec<usize> = (0..1 + n / 4).map(|_| rng.random_range(0..n)).collect();
        mesh = mesh.refine(&marked);
    }
    mesh
}

/// Largest relative defects of a patch test with a linear displacement field:
/// FE displacement error, ZZ estimate and `E1` for SPR-CX and SPR.
#[derive(Debug, Clone, Copy)]
pub struct PatchDefects {
    pub displacement: f64,
    pub stress: f64,
    pub zz: f64,
    pub e1: f64,
}

impl PatchDefects {
    pub fn max(&self) -> f64 {
        self.displacement.max(self.stress).max(self.zz).max(self.e1)
    }
}

pub fn patch_test(mesh: Arc<QuadtreeMesh>, neumann: &[&str], dirichlet: &[&str], region: &[usize]) -> PatchDefects {
    let mat = steel();
    let grad = Matrix2::new(1e-3, -4e-4, 7e-4, -2e-3);
    let exact = move |p: &Point2<f64>| grad * p.coords + Vector2::new(2e-3, -1e-3);
    let eps = VoigtStrain::new(grad[(0, 0)], grad[(1, 1)], grad[(0, 1)] + grad[(1, 0)]);
    let sigma = mat.apply(eps);
    let mut loads = LoadSet::new();
    for tag in neumann {
        loads = loads.with_traction(tag, move |_, n| traction_projection(sigma, n));
    }
    let mut bc = DirichletSet::new();
    for tag in dirichlet {
        bc = bc.with_tag(tag, Prescribed::new([true, true], move |p, _| exact(p)));
    }
    let u = solve_problem(&mesh, &mat, &Arc::new(loads), &bc).unwrap();
    let u_scale = mesh.nodes().iter().map(|p| exact(p).norm()).fold(0.0, f64::max);
    let displacement = mesh.nodes().iter().zip(u.displacements()).map(|(p, v)| (v - exact(p)).norm()).fold(0.0, f64::max) / u_scale;
    let mut stress: f64 = 0.0;
    for e in 0..mesh.num_elements() {
        for (s, t) in [(-1.0, -1.0), (0.3, -0.6), (1.0, 1.0)] {
            stress = stress.max((u.stress_at(e, s, t) - sigma).max_abs() / sigma.max_abs());
        }
    }
    let energy = energy_inner_product(&mesh, &mat, 0..mesh.num_elements(), 2, |_, _| sigma, |_, _| sigma).sqrt();
    let qoi = QuantityOfInterest::new(QoiKind::MeanDisplacementDomain {
        extractor: Vector2::new(1.0, 0.5),
        region: Region::from_roots(region.iter().copied()),
    })
    .unwrap();
    let z = dual_solve(&qoi, &mesh, &mat, &bc).unwrap();
    let mut zz: f64 = 0.0;
    let mut e1: f64 = 0.0;
    for options in [RecoveryOptions::spr_cx(), RecoveryOptions::spr()] {
        let ur = recover(&u, &options).unwrap();
        let zr = recover(&z, &options).unwrap();
        zz = zz.max(zz_energy_estimate(&u, &ur).unwrap() / energy);
        let est = qoi_estimates(&u, &ur, &z, &zr).unwrap();
        e1 = e1.max(est.e1.abs() / (energy * est.dual_energy.sqrt()).max(f64::MIN_POSITIVE));
    }
    PatchDefects { displacement, stress, zz, e1 }
}

pub fn square_patch_mesh(rounds: usize, seed: u64) -> Arc<QuadtreeMesh> {
    Arc::new(randomly_refined(build_initial_mesh(square(2.0), 2, 2).unwrap(), rounds, seed))
}

pub fn lshape_patch_mesh(rounds: usize, seed: u64) -> Arc<QuadtreeMesh> {
    Arc::new(randomly_refined(build_initial_mesh(GeometryMap::l_shape(1.0).unwrap(), 2, 2).unwrap(), rounds, seed))
}
