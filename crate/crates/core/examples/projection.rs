//! Perturbs an optimal dispatch and projects it back onto the feasible set.

use ldf::domains::fixtures::opf_mini;
use ldf::domains::opf::opf_problem;
use ldf::oracle::{project_feasible, solve_with, SolverOptions};

fn main() -> ldf::Result<()> {
    let inst = opf_mini();
    let problem = opf_problem(&inst)?;
    let sol = solve_with(&problem, &SolverOptions::default())?;
    let same = project_feasible(&sol.y, &problem, 60)?;
    println!("feasible point: distance {:.2e}", same.distance);

    for scale in [0.01, 0.05, 0.2] {
        let mut y_hat = sol.y.clone();
        for (k, v) in y_hat.iter_mut().enumerate() {
            *v += scale * if k % 2 == 0 { 1.0 } else { -0.5 };
        }
        let p = project_feasible(&y_hat, &problem, 60)?;
        println!(
            "perturbation {scale:<4}: residual {:.2e} -> {:.2e}, distance {:.4}, {:.3}% of the prediction",
            problem.max_residual(&y_hat)?,
            problem.max_residual(&p.y)?,
            p.distance,
            p.percent
        );
    }
    Ok(())
}
