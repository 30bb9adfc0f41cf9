//! ZZ energy estimate with SPR and SPR-CX against the true energy error.

use goalfem::bench::{BenchmarkCase, CaseId};
use goalfem::estimators::zz_energy_estimate;
use goalfem::fem::{energy_inner_product, solve_problem};
use goalfem::spr::{recover, RecoveryOptions};

fn main() -> goalfem::Result<()> {
    let case = BenchmarkCase::new(CaseId::Cyl1aMeanUnGammaO)?;
    let exact = case.exact.primal.clone().unwrap();
    let mut mesh = case.mesh.clone();
    for _ in 0..4 {
        let u = solve_problem(&mesh, &case.material, &case.loads, &case.dirichlet)?;
        let diff = |e: usize, q: &goalfem::mesh::QuadPoint| exact.stress(&q.x) - u.stress_at(e, q.s, q.t);
        let err = energy_inner_product(&mesh, &case.material, 0..mesh.num_elements(), 6, diff, diff).sqrt();
        print!("dof {:>6}  |e| {err:.16e}", u.num_dofs());
        for opt in [RecoveryOptions::spr(), RecoveryOptions::spr_cx()] {
            let zz = zz_energy_estimate(&u, &recover(&u, &opt)?)?;
            print!("  {:?} {:.16e}", opt.mode, zz / err);
        }
        println!();
        mesh = std::sync::Arc::new(mesh.uniformly_refined());
    }
    Ok(())
}
