//! Primal and dual solutions, recovered stresses and the E1..E4 error bounds.

use goalfem::bench::{BenchmarkCase, CaseId};
use goalfem::spr::RecoveryOptions;

fn main() -> goalfem::Result<()> {
    for id in [CaseId::Cyl1aMeanUnGammaO, CaseId::Cyl1bMeanUxDomain, CaseId::Cyl1cMeanSxDomain, CaseId::Cyl2MeanTnDirichlet] {
        let case = BenchmarkCase::new(id)?;
        let a = case.problem(RecoveryOptions::spr_cx()).analyse(&case.mesh)?;
        let r = &a.report;
        println!("{}", id.name());
        println!("  Q(e)  {:.16e}", r.exact_error().unwrap());
        println!("  E1..4 {:.16e} {:.16e} {:.16e} {:.16e}", r.estimates.e1, r.estimates.e2, r.estimates.e3, r.estimates.e4);
        println!("  theta {:.16e}  ordered {}", r.effectivities.theta.unwrap(), r.estimates.is_ordered(1e-12));
    }
    Ok(())
}
