//! Goal-oriented h-adaptivity on the L-shape, mode I stress intensity.

use goalfem::adaptivity::{adapt_loop, AdaptConfig};
use goalfem::bench::{BenchmarkCase, CaseId};
use goalfem::spr::RecoveryOptions;

fn main() -> goalfem::Result<()> {
    let case = BenchmarkCase::new(CaseId::LshapeKI)?;
    let config = AdaptConfig { target: 1e-4, max_iterations: 8, max_dofs: Some(20_000), ..AdaptConfig::default() };
    let result = adapt_loop(&case.problem(RecoveryOptions::spr_cx()), case.mesh.clone(), &config)?;
    for a in &result.iterations {
        let r = &a.report;
        println!(
            "dof {:>6}  elements {:>5}  eta_es {:.16e}  theta {:.16e}",
            r.dof,
            a.mesh().num_elements(),
            r.effectivities.eta_estimated.unwrap(),
            r.effectivities.theta.unwrap()
        );
    }
    println!("converged {}", result.converged);
    Ok(())
}
