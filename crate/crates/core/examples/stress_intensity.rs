//! Corner eigenvalues of the L-shape and the GSIF extracted from FE solutions.

use std::f64::consts::PI;

use goalfem::bench::{BenchmarkCase, CaseId};
use goalfem::fem::solve_problem;
use goalfem::qoi::QoiKind;
use goalfem::singular::{corner_eigenvalue, Mode};

fn main() -> goalfem::Result<()> {
    for mode in [Mode::I, Mode::II] {
        println!("lambda_{} {:.16e}", mode.name(), corner_eigenvalue(1.5 * PI, mode)?);
    }
    for id in [CaseId::LshapeKI, CaseId::LshapeKII] {
        let case = BenchmarkCase::new(id)?;
        let QoiKind::Gsif(extractor) = &case.qoi.kind else { unreachable!() };
        let mut mesh = case.mesh.clone();
        for _ in 0..4 {
            let u = solve_problem(&mesh, &case.material, &case.loads, &case.dirichlet)?;
            println!("{} dof {:>6}  K {:.16e}", id.name(), u.num_dofs(), extractor.extract(&u)?);
            mesh = std::sync::Arc::new(mesh.uniformly_refined());
        }
    }
    Ok(())
}
