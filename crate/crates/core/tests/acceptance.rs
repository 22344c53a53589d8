//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so the verdict lines always reach the test log.
//! Criteria listed in `REPORTED_ONLY` are measured and printed but do not
//! fail the suite; the README explains why each one is there.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::{Duration, Instant};

use ldf::autodiff::Tape;
use ldf::constraint::{lagrangian_loss, ConstraintKind, ConstraintTerm, StepSchedule};
use ldf::data::{Dataset, Sample};
use ldf::domains::fairness::dt_index;
use ldf::domains::fixtures::{ogf_mini, opf_mini};
use ldf::domains::monotone::{generate_monotone_dataset, ground_truth, monotone_groups, vc_smvc};
use ldf::domains::ogf::{ogf_problem, ogf_samples, ogf_violation_vector};
use ldf::domains::opf::{opf_problem, opf_samples, opf_terms, opf_violation_vector};
use ldf::nn::{base_loss, LossKind, MlpModel, OutputActivation, Predictor};
use ldf::oracle::{generate_dataset, solve_with, ProblemInstance, SolverOptions};
use ldf::report::{run_experiment, ExperimentConfig, RunReport};
use ldf::trainer::{gain, train_grouped, train_per_sample, Regime, TrainConfig, TrainTrace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REPORTED_ONLY: &[u32] = &[5];

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

type Criterion = (u32, &'static str, Duration, fn() -> Verdict);

fn main() {
    let criteria: Vec<Criterion> = vec![
        (1, "gradient fidelity", Duration::from_secs(10), gradient_fidelity),
        (
            2,
            "dual-ascent invariants",
            Duration::from_secs(60),
            dual_ascent_invariants,
        ),
        (3, "weak duality oracle", Duration::from_secs(30), weak_duality),
        (4, "physics round trip", Duration::from_secs(300), physics_round_trip),
        (
            5,
            "violation-reduction trend",
            Duration::from_secs(900),
            violation_reduction,
        ),
        (6, "monotonicity trend", Duration::from_secs(600), monotonicity_trend),
        (7, "fairness trend", Duration::from_secs(900), fairness_trend),
        (
            8,
            "relaxed-slack monotonicity",
            Duration::from_secs(1200),
            relaxed_slack,
        ),
        (9, "metric identities", Duration::from_secs(10), metric_identities),
        (10, "determinism", Duration::from_secs(600), determinism),
    ];
    let only: Vec<u32> = std::env::var("LDF_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut failed = Vec::new();
    for (n, name, budget, check) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let v = check();
        let took = t0.elapsed();
        let within = took <= budget;
        let pass = v.pass && within;
        let status = if pass { "PASS" } else { "FAIL" };
        let note = if REPORTED_ONLY.contains(&n) && !pass {
            " [reported only]"
        } else {
            ""
        };
        println!(
            "criterion {n:>2} {name}: {status}{note} ({:.1}s / budget {}s) {}",
            took.as_secs_f64(),
            budget.as_secs(),
            v.detail
        );
        if !pass && !REPORTED_ONLY.contains(&n) {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        eprintln!("acceptance failures: {failed:?}");
        std::process::exit(1);
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-6 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

fn lagrangian_value(
    arch: &MlpModel,
    params: &[f64],
    kind: LossKind,
    term: &ConstraintTerm,
    sample: &Sample,
    lambda: f64,
) -> (f64, Vec<f64>) {
    let mut tape = Tape::new();
    let vars = tape.params(params);
    let out = arch.forward_tape(&mut tape, &vars, &sample.input).unwrap();
    let base = base_loss(&mut tape, kind, &out, &sample.target).unwrap();
    let parts = lagrangian_loss(&mut tape, base, std::slice::from_ref(term), &out, sample, &[lambda]).unwrap();
    let grads = tape.backward(parts.loss).unwrap();
    (tape.value(parts.loss), grads.params())
}

/// Random perceptron, loss and constraint term; tape gradients against
/// central differences with step 1e-5.
fn gradient_fidelity() -> Verdict {
    let mut worst: f64 = 0.0;
    let combos = 24;
    for c in 0..combos {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + c);
        let n_in = rng.gen_range(1..=4);
        let n_out = rng.gen_range(1..=3);
        let mut widths = vec![n_in];
        for _ in 0..rng.gen_range(1..=2) {
            widths.push(rng.gen_range(2..=6));
        }
        widths.push(n_out);
        let kind = [LossKind::Mse, LossKind::Mae, LossKind::Bce][c as usize % 3];
        let act = if kind == LossKind::Bce || c % 2 == 1 {
            OutputActivation::Sigmoid
        } else {
            OutputActivation::Identity
        };
        let model = MlpModel::new(widths, act, c).unwrap();
        let input: Vec<f64> = (0..n_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..n_out)
            .map(|_| {
                if kind == LossKind::Bce {
                    f64::from(u8::from(rng.gen_bool(0.5)))
                } else {
                    rng.gen_range(-1.0..1.0)
                }
            })
            .collect();
        let sample = Sample::new(input, target, vec![rng.gen_range(-0.5..0.5)]);
        let weight = rng.gen_range(0.5..2.0);
        let term = if c % 2 == 0 {
            ConstraintTerm::new("sum<=c", ConstraintKind::Inequality, 0, weight, |t, p, s| {
                let total = t.sum(p);
                Ok(vec![t.offset(total, -s.context[0])])
            })
        } else {
            ConstraintTerm::new("first=c", ConstraintKind::Equality, 0, weight, |t, p, s| {
                let sq = t.square(p[0]);
                Ok(vec![t.offset(sq, -s.context[0].abs())])
            })
        };
        let lambda = rng.gen_range(0.5..2.0);
        // Zero-initialised biases behind dead units sit exactly on a ReLU
        // kink, where central differences see half a slope.
        let params: Vec<f64> = model.params().iter().map(|p| p + rng.gen_range(-0.1..0.1)).collect();
        let (_, grad) = lagrangian_value(&model, &params, kind, &term, &sample, lambda);
        let h = 1e-5;
        for k in 0..params.len() {
            let mut up = params.clone();
            up[k] += h;
            let mut down = params.clone();
            down[k] -= h;
            let fd = (lagrangian_value(&model, &up, kind, &term, &sample, lambda).0
                - lagrangian_value(&model, &down, kind, &term, &sample, lambda).0)
                / (2.0 * h);
            worst = worst.max(rel_err(grad[k], fd));
        }
    }
    verdict(
        worst <= 1e-5,
        format!("{combos} combinations, worst relative error {worst:.2e} (limit 1e-5)"),
    )
}

fn opf_dataset(n: usize, seed: u64) -> (Dataset, Vec<ConstraintTerm>) {
    let inst = opf_mini();
    let data = generate_dataset(&opf_problem(&inst).unwrap(), n, 0.2, seed).unwrap();
    (opf_samples(&inst, &data.points).unwrap(), opf_terms(&inst, true))
}

fn monotone_setup(n: usize) -> (Dataset, Vec<ldf::constraint::GroupConstraint>) {
    let ds = generate_monotone_dataset(5, n, 3).unwrap();
    let groups = monotone_groups(n, &ds.pairs, 4, 5).unwrap();
    (ds.to_dataset().unwrap(), groups)
}

fn multipliers_ok(trace: &TrainTrace) -> bool {
    trace.multipliers_monotone()
        && trace
            .records
            .iter()
            .all(|r| r.lambda.iter().chain(&r.mu).all(|&m| m >= 0.0))
}

fn dual_ascent_invariants() -> Verdict {
    let (opf, terms) = opf_dataset(40, 3);
    let (mono, groups) = monotone_setup(40);
    let cfg = |regime, s: f64, t: f64, loss| TrainConfig {
        epochs: 15,
        regime,
        seed: 9,
        s: StepSchedule::Constant(s),
        t: StepSchedule::Constant(t),
        loss,
        ..TrainConfig::default()
    };
    let opf_model = || MlpModel::new(vec![opf.input_dim(), 16, 16, 10], OutputActivation::Identity, 9).unwrap();
    let mono_model = || MlpModel::new(vec![3, 8, 8, 1], OutputActivation::Identity, 9).unwrap();

    let mut traces = Vec::new();
    for (regime, s, t) in [
        (Regime::Ldf, 1e-2, 1e-2),
        (Regime::Ldf, 1e-4, 1e-3),
        (Regime::Fixed, 1e-2, 1e-2),
    ] {
        let mut m = opf_model();
        traces.push(train_per_sample(&opf, &mut m, &terms, &cfg(regime, s, t, LossKind::Mse)).unwrap());
        let mut m = opf_model();
        let batched = TrainConfig {
            batch_size: 8,
            ..cfg(regime, s, t, LossKind::Mse)
        };
        traces.push(train_per_sample(&opf, &mut m, &terms, &batched).unwrap());
        let mut m = mono_model();
        traces.push(train_grouped(&mono, &groups, &[], &mut m, &cfg(regime, s, t, LossKind::Mae)).unwrap());
    }
    let monotone = traces.iter().all(multipliers_ok);

    let mut base = opf_model();
    let mut zero = opf_model();
    let tb = train_per_sample(
        &opf,
        &mut base,
        &terms,
        &cfg(Regime::Baseline, 1e-2, 1e-2, LossKind::Mse),
    )
    .unwrap();
    let tz = train_per_sample(&opf, &mut zero, &terms, &cfg(Regime::Ldf, 0.0, 0.0, LossKind::Mse)).unwrap();
    let mut gbase = mono_model();
    let mut gzero = mono_model();
    let gb = train_grouped(
        &mono,
        &groups,
        &[],
        &mut gbase,
        &cfg(Regime::Baseline, 1e-2, 1e-2, LossKind::Mae),
    )
    .unwrap();
    let gz = train_grouped(
        &mono,
        &groups,
        &[],
        &mut gzero,
        &cfg(Regime::Ldf, 0.0, 0.0, LossKind::Mae),
    )
    .unwrap();
    let identical = tb == tz && base.params() == zero.params() && gb == gz && gbase.params() == gzero.params();
    verdict(
        monotone && identical,
        format!(
            "{} traces nonnegative and non-decreasing: {monotone}; zero-step runs bit-identical to baseline: {identical}",
            traces.len()
        ),
    )
}

fn convex_fixtures() -> Vec<(&'static str, ProblemInstance, Vec<f64>, f64)> {
    use ConstraintKind::{Equality, Inequality};
    let b2 = || (vec![-10.0; 2], vec![10.0; 2]);
    let mut out = Vec::new();

    let c = ConstraintTerm::new("y>=1", Inequality, 0, 1.0, |t, y, _| {
        let neg = t.scale(y[0], -1.0);
        Ok(vec![t.offset(neg, 1.0)])
    });
    let inst = ProblemInstance::new(
        "sq",
        vec![-10.0],
        vec![10.0],
        vec![],
        |t, y, _| Ok(t.square(y[0])),
        vec![c],
    );
    out.push(("min y^2 s.t. y>=1", inst.unwrap(), vec![1.0], 1.0));

    let inst = ProblemInstance::new(
        "free",
        vec![-10.0],
        vec![10.0],
        vec![0.7],
        |t, y, s| {
            let d = t.offset(y[0], -s.context[0]);
            Ok(t.square(d))
        },
        vec![],
    );
    out.push(("min (y-d)^2", inst.unwrap(), vec![0.7], 0.0));

    let (lo, hi) = b2();
    let c = ConstraintTerm::new("sum=1", Equality, 0, 1.0, |t, y, _| {
        let s = t.add(y[0], y[1]);
        Ok(vec![t.offset(s, -1.0)])
    });
    let inst = ProblemInstance::new(
        "qp-eq",
        lo,
        hi,
        vec![],
        |t, y, _| {
            let a = t.square(y[0]);
            let b = t.square(y[1]);
            Ok(t.add(a, b))
        },
        vec![c],
    );
    out.push(("min |y|^2 s.t. y1+y2=1", inst.unwrap(), vec![0.5, 0.5], 0.5));

    let (lo, hi) = b2();
    let c = ConstraintTerm::new("sum<=1", Inequality, 0, 1.0, |t, y, _| {
        let s = t.add(y[0], y[1]);
        Ok(vec![t.offset(s, -1.0)])
    });
    let inst = ProblemInstance::new(
        "qp-ineq",
        lo,
        hi,
        vec![],
        |t, y, _| {
            let a = t.offset(y[0], -2.0);
            let b = t.offset(y[1], -1.0);
            let a2 = t.square(a);
            let b2 = t.square(b);
            Ok(t.add(a2, b2))
        },
        vec![c],
    );
    out.push((
        "min (y1-2)^2+(y2-1)^2 s.t. y1+y2<=1",
        inst.unwrap(),
        vec![1.0, 0.0],
        2.0,
    ));

    let (lo, hi) = b2();
    let c = ConstraintTerm::new("disk", Inequality, 0, 1.0, |t, y, _| {
        let a = t.square(y[0]);
        let b = t.square(y[1]);
        let s = t.add(a, b);
        Ok(vec![t.offset(s, -1.0)])
    });
    let inst = ProblemInstance::new("lin-disk", lo, hi, vec![], |t, y, _| Ok(t.add(y[0], y[1])), vec![c]);
    let r = -(0.5f64).sqrt();
    out.push(("min y1+y2 s.t. |y|<=1", inst.unwrap(), vec![r, r], -(2.0f64).sqrt()));
    out
}

fn weak_duality() -> Verdict {
    let opts = SolverOptions {
        track_dual: true,
        ..SolverOptions::default()
    };
    let mut notes = Vec::new();
    let mut ok = true;
    for (name, inst, y_star, f_star) in convex_fixtures() {
        let sol = solve_with(&inst, &opts).unwrap();
        let max_dual = sol.dual_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let dist = sol.y.iter().zip(&y_star).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let pass = max_dual <= f_star + 1e-9 && dist < 1e-3 && !sol.dual_values.is_empty();
        ok &= pass;
        notes.push(format!(
            "[{name}: max dual {max_dual:.6} vs f* {f_star:.6}, |y-y*| {dist:.1e}]"
        ));
    }
    verdict(ok, notes.join(" "))
}

/// `S_ij = conj(Y)·(|V_i|² − V_i·conj(V_j))` with `Y = 1/(r + jx)`.
fn reference_flow(r: f64, x: f64, vi: f64, ti: f64, vj: f64, tj: f64) -> (f64, f64) {
    let z2 = r * r + x * x;
    let (g, b) = (r / z2, -x / z2);
    let (re_vi, im_vi) = (vi * ti.cos(), vi * ti.sin());
    let (re_vj, im_vj) = (vj * tj.cos(), -vj * tj.sin());
    let (re_p, im_p) = (re_vi * re_vj - im_vi * im_vj, re_vi * im_vj + im_vi * re_vj);
    let (re_d, im_d) = (vi * vi - re_p, -im_p);
    (g * re_d + b * im_d, g * im_d - b * re_d)
}

fn physics_round_trip() -> Verdict {
    let inst = opf_mini();
    let data = generate_dataset(&opf_problem(&inst).unwrap(), 100, 0.2, 17).unwrap();
    let ds = opf_samples(&inst, &data.points).unwrap();
    let nominal = inst.nominal_demand();
    let mut opf_nu: f64 = 0.0;
    let mut opf_flow: f64 = 0.0;
    let mut band = true;
    let m = inst.lines.len();
    for (pt, s) in data.points.iter().zip(&ds.samples) {
        band &=
            pt.d.iter()
                .zip(&nominal)
                .all(|(d, n)| (d - n).abs() <= 0.2 * n.abs() + 1e-12);
        let nu = opf_violation_vector(&inst, &pt.y, s).unwrap();
        for v in [
            nu.nu3,
            nu.nu4,
            nu.nu5a,
            nu.nu5b,
            nu.nu6,
            nu.nu7a,
            nu.nu7b,
            nu.nu8a.unwrap(),
            nu.nu8b.unwrap(),
        ] {
            opf_nu = opf_nu.max(v);
        }
        let v = &pt.y[inst.v_range()];
        let th = &pt.y[inst.theta_range()];
        let flows = &s.context[nominal.len()..];
        for (k, l) in inst.lines.iter().enumerate() {
            let (p, q) = reference_flow(l.r, l.x, v[l.from], th[l.from], v[l.to], th[l.to]);
            opf_flow = opf_flow.max((p - flows[k]).abs()).max((q - flows[m + k]).abs());
        }
    }

    let gas = ogf_mini();
    let data = generate_dataset(&ogf_problem(&gas).unwrap(), 100, 0.2, 17).unwrap();
    let ds = ogf_samples(&gas, &data.points).unwrap();
    let nominal = gas.nominal_demand();
    let mut ogf_nu: f64 = 0.0;
    let mut ogf_flow: f64 = 0.0;
    for (pt, s) in data.points.iter().zip(&ds.samples) {
        band &=
            pt.d.iter()
                .zip(&nominal)
                .all(|(d, n)| (d - n).abs() <= 0.2 * n.abs() + 1e-12);
        let nu = ogf_violation_vector(&gas, &pt.y, s).unwrap();
        for v in [nu.nu10, nu.nu11a, nu.nu11b, nu.nu12, nu.nu14.unwrap()] {
            ogf_nu = ogf_nu.max(v);
        }
        let r = &pt.y[gas.r_range()];
        let p = &pt.y[gas.p_range()];
        let q = &pt.y[gas.q_range()];
        let comps = gas.compressors();
        for (k, pipe) in gas.pipes.iter().enumerate() {
            let area = PI * pipe.diameter * pipe.diameter / 4.0;
            let resistance =
                pipe.length * gas.friction * gas.sound_speed * gas.sound_speed / (pipe.diameter * area * area);
            let ratio = comps.iter().position(|&c| c == k).map_or(1.0, |c| r[c]);
            let pi = if gas.junctions[pipe.from].role == ldf::domains::ogf::JunctionRole::Boundary {
                gas.junctions[pipe.from].pressure
            } else {
                p[pipe.from]
            };
            let pj = if gas.junctions[pipe.to].role == ldf::domains::ogf::JunctionRole::Boundary {
                gas.junctions[pipe.to].pressure
            } else {
                p[pipe.to]
            };
            let delta = ratio * ratio * pi * pi - pj * pj;
            let flow = delta.signum() * (delta.abs() / resistance).sqrt();
            ogf_flow = ogf_flow.max((flow - q[k]).abs());
        }
    }
    verdict(
        band && opf_nu < 1e-6 && opf_flow < 1e-6 && ogf_nu < 1e-6 && ogf_flow < 1e-6,
        format!(
            "opf: max nu {opf_nu:.1e}, max flow gap {opf_flow:.1e}; ogf: max nu {ogf_nu:.1e}, max flow gap {ogf_flow:.1e}; demands in band: {band}"
        ),
    )
}

fn experiment(json: &str) -> RunReport {
    let cfg = ExperimentConfig::from_json(json).unwrap();
    run_experiment(&cfg, None).unwrap()
}

fn metric(r: &RunReport, regime: Regime, seed: u64, name: &str) -> f64 {
    r.run(regime, seed)
        .and_then(|x| x.metrics.get(name).copied())
        .unwrap_or(f64::NAN)
}

const OPF_PROTOCOL: &str = r#"{
    "name": "opf-trend", "domain": "opf-mini",
    "samples": 625, "train_samples": 500, "perturbation": 0.2, "data_seed": 0,
    "regimes": ["baseline", "ldf"], "seeds": [0, 1, 2, 3, 4],
    "model": {"hidden": [32, 32, 32]},
    "train": {"epochs": 80, "lr": 0.001, "batch_size": 1, "s": 0.0001, "t": 0.001, "loss": "mse"}
}"#;

fn violation_reduction() -> Verdict {
    let r = experiment(OPF_PROTOCOL);
    let mut good = 0;
    let mut notes = Vec::new();
    for s in SEEDS {
        let vb = metric(&r, Regime::Baseline, s, "violation");
        let vl = metric(&r, Regime::Ldf, s, "violation");
        let pb = metric(&r, Regime::Baseline, s, "projection_percent");
        let pl = metric(&r, Regime::Ldf, s, "projection_percent");
        if vl <= 0.2 * vb && pl <= pb {
            good += 1;
        }
        notes.push(format!("s{s}: viol ratio {:.2}, proj {pl:.3}% vs {pb:.3}%", vl / vb));
    }
    verdict(
        good >= 4,
        format!("{good}/5 seeds meet both bounds; {}", notes.join("; ")),
    )
}

fn monotone_config(n_train: usize, seeds: &[u64]) -> String {
    format!(
        r#"{{
        "name": "monotone-{n_train}", "domain": "monotone",
        "n_train": {n_train}, "n_test": 500, "dim": 4, "data_seed": 0, "batch": 1,
        "regimes": ["baseline", "ldf"], "seeds": {seeds:?},
        "model": {{"hidden": [10, 10, 10]}},
        "train": {{"epochs": 150, "lr": 0.001, "t": 0.001, "loss": "mae"}}
    }}"#
    )
}

fn monotonicity_trend() -> Verdict {
    let r = experiment(&monotone_config(200, &SEEDS));
    let mut good = 0;
    let mut notes = Vec::new();
    for s in SEEDS {
        let (vb, vl) = (metric(&r, Regime::Baseline, s, "vc"), metric(&r, Regime::Ldf, s, "vc"));
        let (sb, sl) = (
            metric(&r, Regime::Baseline, s, "smvc"),
            metric(&r, Regime::Ldf, s, "smvc"),
        );
        let (mb, ml) = (
            metric(&r, Regime::Baseline, s, "mae"),
            metric(&r, Regime::Ldf, s, "mae"),
        );
        if vl <= vb && sl <= 0.7 * sb && ml <= 1.1 * mb {
            good += 1;
        }
        notes.push(format!(
            "s{s}: VC {vl}/{vb}, SMVC ratio {:.2}, MAE ratio {:.3}",
            sl / sb,
            ml / mb
        ));
    }
    let big = experiment(&monotone_config(1000, &[0, 1]));
    let agg = |regime, name: &str| big.aggregate(regime).map_or(f64::NAN, |a| a.means[name]);
    notes.push(format!(
        "n_tr=1000 (2 seeds, informational): VC {} vs {}, SMVC {:.4} vs {:.4}, MAE {:.4} vs {:.4}",
        agg(Regime::Ldf, "vc"),
        agg(Regime::Baseline, "vc"),
        agg(Regime::Ldf, "smvc"),
        agg(Regime::Baseline, "smvc"),
        agg(Regime::Ldf, "mae"),
        agg(Regime::Baseline, "mae")
    ));
    verdict(good >= 4, format!("n_tr=200: {good}/5 seeds; {}", notes.join("; ")))
}

fn fairness_config(slack_factor: Option<f64>) -> String {
    let slack = slack_factor.map_or(String::new(), |k| format!(r#""slack_factor": {k},"#));
    format!(
        r#"{{
        "name": "fairness", "domain": "fairness",
        "source": {{"kind": "synthetic", "samples": 5000}}, "data_seed": 0, "batch": 64, {slack}
        "regimes": ["baseline", "ldf"], "seeds": [0, 1, 2, 3, 4],
        "model": {{"hidden": [10, 10, 10]}},
        "train": {{"epochs": 100, "lr": 0.001, "s": 0.0001, "t": 0.01, "loss": "bce"}}
    }}"#
    )
}

fn fairness_counts(r: &RunReport) -> (usize, Vec<String>) {
    let mut good = 0;
    let mut notes = Vec::new();
    for s in SEEDS {
        let (db, dl) = (metric(r, Regime::Baseline, s, "dt"), metric(r, Regime::Ldf, s, "dt"));
        let (ab, al) = (
            metric(r, Regime::Baseline, s, "accuracy"),
            metric(r, Regime::Ldf, s, "accuracy"),
        );
        if dl <= 0.5 * db && al >= ab - 0.02 {
            good += 1;
        }
        notes.push(format!("s{s}: DT {dl:.3} vs {db:.3}, acc {al:.3} vs {ab:.3}"));
    }
    (good, notes)
}

fn fairness_trend() -> Verdict {
    let (good, notes) = fairness_counts(&experiment(&fairness_config(None)));
    let mut detail = format!("synthetic: {good}/5 seeds; {}", notes.join("; "));
    let mut pass = good >= 4;
    match std::env::var("LDF_ADULT_CSV") {
        Ok(path) => {
            let json = format!(
                r#"{{
                "name": "adult", "domain": "fairness",
                "source": {{"kind": "csv", "path": {path:?}, "schema": {{
                    "label_column": "income", "label_positive": [">50K", ">50K."], "label_negative": ["<=50K", "<=50K."],
                    "protected_column": "sex", "protected_positive": ["Female"],
                    "categorical_columns": ["workclass", "education", "marital-status", "occupation",
                                            "relationship", "race", "native-country"],
                    "train_fraction": 0.8, "split_seed": 0}}}},
                "batch": 64,
                "regimes": ["baseline", "ldf"], "seeds": [0, 1, 2, 3, 4],
                "model": {{"hidden": [10, 10, 10]}},
                "train": {{"epochs": 100, "lr": 0.001, "s": 0.0001, "t": 0.0001, "loss": "bce"}}
            }}"#
            );
            let (good, notes) = fairness_counts(&experiment(&json));
            pass &= good >= 4;
            detail.push_str(&format!(" | adult: {good}/5 seeds; {}", notes.join("; ")));
        }
        Err(_) => detail.push_str(" | adult: skipped (set LDF_ADULT_CSV)"),
    }
    verdict(pass, detail)
}

fn relaxed_slack() -> Verdict {
    let mut means = Vec::new();
    for k in [0.0, 0.05, 0.2] {
        let r = experiment(&fairness_config(Some(k)));
        means.push(r.aggregate(Regime::Ldf).map_or(f64::NAN, |a| a.means["dt"]));
    }
    let ordered = means.windows(2).all(|w| w[0] <= w[1]);
    verdict(
        ordered,
        format!(
            "mean DT of M_C^D at eps = 0, 0.05, 0.2 x baseline DT: {:.4}, {:.4}, {:.4}",
            means[0], means[1], means[2]
        ),
    )
}

/// `(baseline err, model err, printed gain)` for the constrained models of
/// the OPF benchmark table.
const QUOTED_GAINS: [(f64, f64, f64); 24] = [
    (3.3465, 0.3052, 10.96),
    (3.3465, 0.0055, 608.4),
    (14.699, 0.3130, 46.96),
    (14.699, 0.0070, 2099.0),
    (4.3130, 0.0580, 74.36),
    (4.3130, 0.0041, 1052.0),
    (27.213, 0.2030, 134.1),
    (27.213, 0.0620, 438.9),
    (0.2150, 0.0380, 5.658),
    (0.2150, 0.0340, 6.323),
    (7.1520, 0.1170, 61.12),
    (7.1520, 0.0290, 246.6),
    (4.2600, 1.2750, 3.341),
    (4.2600, 0.2070, 20.58),
    (38.863, 0.6640, 58.53),
    (38.863, 0.4550, 85.41),
    (0.0838, 0.0174, 4.816),
    (0.0838, 0.0126, 6.651),
    (28.025, 3.1130, 9.002),
    (28.025, 0.0610, 459.4),
    (12.137, 7.2330, 1.678),
    (12.137, 2.5670, 4.728),
    (125.47, 26.905, 4.663),
    (125.47, 1.1360, 110.4),
];

fn metric_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut dt_ok = true;
    for _ in 0..200 {
        let k0 = rng.gen_range(1..6);
        let k1 = rng.gen_range(1..6);
        let pos = rng.gen_range(0..=4);
        let mut preds = Vec::new();
        let mut prot = Vec::new();
        for (group, reps) in [(0u8, k0), (1u8, k1)] {
            for _ in 0..reps {
                for i in 0..4 {
                    preds.push(i < pos);
                    prot.push(group);
                }
            }
        }
        dt_ok &= dt_index(&preds, &prot).unwrap() == 0.0;
    }

    let ds = generate_monotone_dataset(2, 60, 2).unwrap();
    let mut coupling = true;
    let mut nonzero = 0;
    for v in 0..1000 {
        let preds: Vec<f64> = if v % 4 == 0 {
            ds.x.iter().map(|x| ground_truth(x)).collect()
        } else if v % 4 == 1 {
            vec![rng.gen_range(-1.0..1.0); ds.len()]
        } else {
            (0..ds.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };
        let (vc, smvc) = vc_smvc(&preds, &ds.pairs);
        coupling &= (vc == 0) == (smvc == 0.0);
        nonzero += usize::from(vc > 0);
    }

    let mut arithmetic: f64 = 0.0;
    let mut printed: f64 = 0.0;
    for (base, err, quoted) in QUOTED_GAINS {
        let g = gain(base, err);
        arithmetic = arithmetic.max((g * err - base).abs());
        printed = printed.max(((g - quoted) / quoted).abs());
    }
    verdict(
        dt_ok && coupling && arithmetic <= 1e-9 && printed < 5e-3,
        format!(
            "DT zero on 200 equal-rate fixtures: {dt_ok}; VC=0 <=> SMVC=0 on 1000 vectors ({nonzero} violating): {coupling}; \
             max |gain*err - base| {arithmetic:.1e}; max deviation from printed gains {:.2}%",
            100.0 * printed
        ),
    )
}

fn determinism() -> Verdict {
    let configs = [
        r#"{"name": "det-opf", "domain": "opf-mini", "samples": 60, "train_samples": 40,
            "regimes": ["baseline", "fixed", "ldf"], "seeds": [0, 1],
            "model": {"hidden": [16, 16]}, "train": {"epochs": 5}}"#
            .to_string(),
        r#"{"name": "det-ogf", "domain": "ogf-mini", "samples": 60, "train_samples": 40,
            "regimes": ["baseline", "ldf"], "seeds": [3],
            "model": {"hidden": [16, 16]}, "train": {"epochs": 5}}"#
            .to_string(),
        monotone_config(60, &[0, 1]).replace("\"epochs\": 150", "\"epochs\": 10"),
        fairness_config(Some(0.1))
            .replace("\"samples\": 5000", "\"samples\": 600")
            .replace("\"epochs\": 100", "\"epochs\": 5"),
    ];
    let mut same = BTreeMap::new();
    for json in &configs {
        let cfg = ExperimentConfig::from_json(json).unwrap();
        let a = run_experiment(&cfg, None).unwrap().to_json().unwrap();
        let b = run_experiment(&cfg, None).unwrap().to_json().unwrap();
        same.insert(cfg.name.clone(), a == b);
    }
    verdict(
        same.values().all(|&x| x),
        format!("byte-identical report JSON: {same:?}"),
    )
}
