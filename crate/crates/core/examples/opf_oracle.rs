//! Solves the bundled three-bus power-flow instance and labels a few
//! perturbed load profiles.

use ldf::data::Sample;
use ldf::domains::fixtures::opf_mini;
use ldf::domains::opf::{opf_problem, opf_violation_vector};
use ldf::oracle::{generate_dataset, solve_with, SolverOptions};

fn main() -> ldf::Result<()> {
    let inst = opf_mini();
    let problem = opf_problem(&inst)?;
    let sol = solve_with(&problem, &SolverOptions::default())?;
    println!(
        "nominal load: cost {:.6}, max residual {:.2e}",
        sol.objective, sol.max_residual
    );
    for (name, r) in [
        ("pg", inst.pg_range()),
        ("qg", inst.qg_range()),
        ("v", inst.v_range()),
        ("theta", inst.theta_range()),
    ] {
        println!(
            "  {name:<5} {:?}",
            sol.y[r].iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>()
        );
    }
    let nu = opf_violation_vector(&inst, &sol.y, &Sample::new(vec![], vec![], inst.nominal_demand()))?;
    println!("  violation of the optimum: {:.2e}", nu.total());

    let data = generate_dataset(&problem, 5, 0.2, 17)?;
    println!("\n{} labelled samples, {} rejected", data.points.len(), data.rejected);
    for p in &data.points {
        println!(
            "  pd {:.3}  qd {:.3}  cost {:.4}  residual {:.1e}",
            p.d[2], p.d[5], p.objective, p.residual
        );
    }
    Ok(())
}
