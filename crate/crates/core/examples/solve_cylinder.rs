//! Pressurised quarter cylinder: FE radial displacement against the closed form.

use std::sync::Arc;

use goalfem::bench::{exact_cylinder, material, CYLINDER_INNER, CYLINDER_OUTER, PRESSURE};
use goalfem::fem::{solve_problem, DirichletSet, LoadSet};
use goalfem::geometry::{tags, GeometryMap};
use goalfem::mesh::build_initial_mesh;

fn main() -> goalfem::Result<()> {
    let exact = exact_cylinder();
    let loads = Arc::new(LoadSet::new().with_traction(tags::INNER, |_, n| -n.as_vector() * PRESSURE));
    let bc = DirichletSet::new().with_symmetry(tags::BOTTOM, 1).with_symmetry(tags::LEFT, 0);
    let mut mesh = build_initial_mesh(GeometryMap::annulus_quarter(CYLINDER_INNER, CYLINDER_OUTER)?, 4, 4)?;
    for _ in 0..4 {
        let u = solve_problem(&Arc::new(mesh.clone()), &material(), &loads, &bc)?;
        let (k, node) = mesh.nodes().iter().enumerate().find(|(_, p)| p.y.abs() < 1e-12 && (p.x - CYLINDER_OUTER).abs() < 1e-12).unwrap();
        let fe = u.displacements()[k].x;
        let ex = exact.radial_displacement(node.x)?;
        println!("dof {:>6}  u_r(b) {fe:.16e}  exact {ex:.16e}  rel {:.3e}", u.num_dofs(), (fe - ex) / ex);
        mesh = mesh.uniformly_refined();
    }
    Ok(())
}
