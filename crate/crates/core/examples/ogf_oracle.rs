//! Labels the bundled gas network and shows how the violation families
//! react to a corrupted prediction.

use ldf::domains::fixtures::ogf_mini;
use ldf::domains::ogf::{ogf_problem, ogf_samples, ogf_violation_vector};
use ldf::oracle::generate_dataset;

fn main() -> ldf::Result<()> {
    let inst = ogf_mini();
    let problem = ogf_problem(&inst)?;
    let data = generate_dataset(&problem, 4, 0.2, 3)?;
    let samples = ogf_samples(&inst, &data.points)?;
    for (p, s) in data.points.iter().zip(&samples.samples) {
        let nu = ogf_violation_vector(&inst, &p.y, s)?;
        println!(
            "demand {:.3}  R {:.4}  p {:?}  cost {:.4}  violation {:.1e}",
            p.d[2],
            p.y[inst.r_range()][0],
            p.y[inst.p_range()]
                .iter()
                .map(|v| format!("{v:.3}"))
                .collect::<Vec<_>>(),
            p.objective,
            nu.total()
        );
    }

    let mut bad = data.points[0].y.clone();
    bad[inst.r_range().start] = 0.8;
    bad[inst.p_range().start + 2] += 2.0;
    let nu = ogf_violation_vector(&inst, &bad, &samples.samples[0])?;
    println!("\ncorrupted prediction: {nu:?}");
    Ok(())
}
