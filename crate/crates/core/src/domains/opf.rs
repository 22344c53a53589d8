//! Miniature AC optimal power flow.
//!
//! Predictions are laid out as `[p^g (G), q^g (G), v (N), θ (N)]`. Line flows
//! are never predicted directly: they are recomputed from `(v, θ)` with
//! Ohm's law on every directed line, first the lines of `E` in file order,
//! then their reverses.
//!
//! Sample contexts hold `[p^d (N), q^d (N)]`, optionally followed by the
//! ground-truth flows `[p^f (E), q^f (E)]`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::constraint::{ConstraintKind, ConstraintTerm};
use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::oracle::{LabeledPoint, ProblemInstance};
use crate::trainer::OutputBlock;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusRole {
    Slack,
    Generator,
    Load,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub role: BusRole,
    pub v_min: f64,
    pub v_max: f64,
    /// Nominal active demand.
    pub pd: f64,
    /// Nominal reactive demand.
    pub qd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Bound on the angle difference across the line.
    pub theta_delta: f64,
    /// Limit on the squared apparent power.
    pub s_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpfInstance {
    pub schema_version: u32,
    pub name: String,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
}

/// Violation degrees of one prediction, one field per family.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OpfNu {
    pub nu3: f64,
    pub nu4: f64,
    pub nu5a: f64,
    pub nu5b: f64,
    pub nu6: f64,
    pub nu7a: f64,
    pub nu7b: f64,
    /// Present only when the sample carries ground-truth flows.
    pub nu8a: Option<f64>,
    pub nu8b: Option<f64>,
}

impl OpfNu {
    /// Sum of the physical families (`ν8` excluded).
    pub fn total(&self) -> f64 {
        self.nu3 + self.nu4 + self.nu5a + self.nu5b + self.nu6 + self.nu7a + self.nu7b
    }
}

/// Multiplier classes of the OPF terms, in order.
pub const OPF_CLASSES: [&str; 9] = ["nu3", "nu4", "nu5a", "nu5b", "nu6", "nu7a", "nu7b", "nu8a", "nu8b"];

/// Number of classes describing physical constraints (the rest compare
/// against ground truth and only make sense during training).
pub const OPF_PHYSICAL_CLASSES: usize = 7;

impl OpfInstance {
    pub fn from_json(text: &str) -> Result<Self> {
        let inst: OpfInstance = serde_json::from_str(text)?;
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InstanceData(format!("{}: {m}", self.name)));
        if self.schema_version != 1 {
            return bad(format!("unsupported schema version {}", self.schema_version));
        }
        let slack = self.buses.iter().filter(|b| b.role == BusRole::Slack).count();
        if slack != 1 {
            return bad(format!("expected exactly one slack bus, found {slack}"));
        }
        let n = self.buses.len();
        for (i, b) in self.buses.iter().enumerate() {
            if !(b.v_min <= b.v_max) || b.v_min <= 0.0 {
                return bad(format!("bus {i} has invalid voltage bounds"));
            }
        }
        for (k, l) in self.lines.iter().enumerate() {
            if l.from >= n || l.to >= n || l.from == l.to {
                return bad(format!("line {k} has invalid endpoints"));
            }
            if l.r * l.r + l.x * l.x == 0.0 {
                return bad(format!("line {k} has zero impedance"));
            }
            if l.theta_delta < 0.0 || l.s_max < 0.0 {
                return bad(format!("line {k} has a negative limit"));
            }
        }
        for (k, g) in self.generators.iter().enumerate() {
            if g.bus >= n || !(g.p_min <= g.p_max) || !(g.q_min <= g.q_max) {
                return bad(format!("generator {k} is malformed"));
            }
        }
        Ok(())
    }

    pub fn num_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn num_gens(&self) -> usize {
        self.generators.len()
    }

    pub fn slack_bus(&self) -> usize {
        self.buses.iter().position(|b| b.role == BusRole::Slack).unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        2 * self.num_gens() + 2 * self.num_buses()
    }

    pub fn pg_range(&self) -> std::ops::Range<usize> {
        0..self.num_gens()
    }

    pub fn qg_range(&self) -> std::ops::Range<usize> {
        self.num_gens()..2 * self.num_gens()
    }

    pub fn v_range(&self) -> std::ops::Range<usize> {
        let g = 2 * self.num_gens();
        g..g + self.num_buses()
    }

    pub fn theta_range(&self) -> std::ops::Range<usize> {
        let s = 2 * self.num_gens() + self.num_buses();
        s..s + self.num_buses()
    }

    pub fn output_blocks(&self) -> Vec<OutputBlock> {
        vec![
            OutputBlock::new("p", self.pg_range()),
            OutputBlock::new("q", self.qg_range()),
            OutputBlock::new("v", self.v_range()),
            OutputBlock::new("theta", self.theta_range()),
        ]
    }

    /// `[p^d (N), q^d (N)]` at nominal load.
    pub fn nominal_demand(&self) -> Vec<f64> {
        self.buses
            .iter()
            .map(|b| b.pd)
            .chain(self.buses.iter().map(|b| b.qd))
            .collect()
    }

    /// Indices into the demand vector that carry a nonzero nominal value.
    pub fn active_demands(&self) -> Vec<usize> {
        self.nominal_demand()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Network input: active demands scaled to `[-1, 1]` over a ±20% band.
    pub fn features(&self, demand: &[f64]) -> Vec<f64> {
        let nominal = self.nominal_demand();
        self.active_demands()
            .into_iter()
            .map(|i| (demand[i] - nominal[i]) / (0.2 * nominal[i]))
            .collect()
    }

    /// Series admittance `Y = 1/(r + jx)` as `(g, b)`.
    pub fn admittance(&self, line: usize) -> (f64, f64) {
        let l = &self.lines[line];
        let z2 = l.r * l.r + l.x * l.x;
        (l.r / z2, -l.x / z2)
    }

    /// Directed lines: `E` followed by `E^R`, as `(line, from, to)`.
    pub fn directed(&self) -> Vec<(usize, usize, usize)> {
        let fwd = self.lines.iter().enumerate().map(|(k, l)| (k, l.from, l.to));
        let rev = self.lines.iter().enumerate().map(|(k, l)| (k, l.to, l.from));
        fwd.chain(rev).collect()
    }
}

/// `S^f_ij = Y*|V_i|² − Y* V_i V_j*` on every directed line, split into
/// active and reactive parts.
pub fn opf_flows_from_state(inst: &OpfInstance, v: &[f64], theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut p = Vec::new();
    let mut q = Vec::new();
    for (k, i, j) in inst.directed() {
        let (g, b) = inst.admittance(k);
        let d = theta[i] - theta[j];
        let vv = v[i] * v[j];
        let a = v[i] * v[i] - vv * d.cos();
        let s = vv * d.sin();
        p.push(g * a - b * s);
        q.push(-g * s - b * a);
    }
    (p, q)
}

/// Tape version of [`opf_flows_from_state`].
pub fn flows_on_tape(inst: &OpfInstance, tape: &mut Tape, v: &[Var], theta: &[Var]) -> (Vec<Var>, Vec<Var>) {
    let mut p = Vec::new();
    let mut q = Vec::new();
    for (k, i, j) in inst.directed() {
        let (g, b) = inst.admittance(k);
        let d = tape.sub(theta[i], theta[j]);
        let vv = tape.mul(v[i], v[j]);
        let cos = tape.cos(d);
        let sin = tape.sin(d);
        let vi2 = tape.square(v[i]);
        let vvc = tape.mul(vv, cos);
        let a = tape.sub(vi2, vvc);
        let s = tape.mul(vv, sin);
        let ga = tape.scale(a, g);
        let bs = tape.scale(s, -b);
        p.push(tape.add(ga, bs));
        let gs = tape.scale(s, -g);
        let ba = tape.scale(a, -b);
        q.push(tape.add(gs, ba));
    }
    (p, q)
}

/// `Σ c2 p² + c1 p + c0` over generators.
pub fn opf_objective(inst: &OpfInstance, pg: &[f64]) -> f64 {
    inst.generators
        .iter()
        .zip(pg)
        .map(|(g, &p)| g.c2 * p * p + g.c1 * p + g.c0)
        .sum()
}

fn check_pred(inst: &OpfInstance, pred: &[Var]) -> Result<()> {
    if pred.len() != inst.output_dim() {
        return Err(Error::InputShape {
            expected: inst.output_dim(),
            actual: pred.len(),
        });
    }
    Ok(())
}

fn check_context(inst: &OpfInstance, ctx: &[f64], flows: bool) -> Result<()> {
    let n = inst.num_buses();
    let need = if flows { 2 * n + 2 * inst.lines.len() } else { 2 * n };
    if ctx.len() < need {
        return Err(if flows {
            Error::Config("ground-truth flows requested but missing from the sample".into())
        } else {
            Error::InputShape {
                expected: need,
                actual: ctx.len(),
            }
        });
    }
    Ok(())
}

/// Kirchhoff residual per bus: outgoing flow minus net injection.
fn kcl(inst: &OpfInstance, tape: &mut Tape, pred: &[Var], ctx: &[f64], reactive: bool) -> Vec<Var> {
    let n = inst.num_buses();
    let v = &pred[inst.v_range()];
    let th = &pred[inst.theta_range()];
    let (pf, qf) = flows_on_tape(inst, tape, v, th);
    let flows = if reactive { qf } else { pf };
    let gen_block = if reactive { inst.qg_range() } else { inst.pg_range() };
    let directed = inst.directed();
    (0..n)
        .map(|i| {
            let out: Vec<Var> = directed
                .iter()
                .zip(&flows)
                .filter(|((_, from, _), _)| *from == i)
                .map(|(_, &f)| f)
                .collect();
            let mut total = tape.sum(&out);
            for (k, g) in inst.generators.iter().enumerate() {
                if g.bus == i {
                    total = tape.sub(total, pred[gen_block.start + k]);
                }
            }
            let demand = if reactive { ctx[n + i] } else { ctx[i] };
            tape.offset(total, demand)
        })
        .collect()
}

/// Per-sample constraint terms, one class per family in [`OPF_CLASSES`]
/// order. `ν8` is only included when `flow_deviation` is set.
pub fn opf_terms(inst: &OpfInstance, flow_deviation: bool) -> Vec<ConstraintTerm> {
    use ConstraintKind::{Equality, Inequality};
    let n = inst.num_buses() as f64;
    let e = inst.lines.len() as f64;
    let mut terms = Vec::new();

    let i0 = inst.clone();
    terms.push(ConstraintTerm::new("nu3", Inequality, 0, 1.0 / n, move |t, p, s| {
        check_pred(&i0, p)?;
        check_context(&i0, &s.context, false)?;
        let mut out = Vec::new();
        for (k, b) in i0.buses.iter().enumerate() {
            let v = p[i0.v_range().start + k];
            let lo = t.scale(v, -1.0);
            out.push(t.offset(lo, b.v_min));
            out.push(t.offset(v, -b.v_max));
        }
        Ok(out)
    }));

    let i1 = inst.clone();
    terms.push(ConstraintTerm::new("nu4", Inequality, 1, 1.0 / e, move |t, p, _| {
        check_pred(&i1, p)?;
        let th = i1.theta_range().start;
        let mut out = Vec::new();
        for l in &i1.lines {
            let d = t.sub(p[th + l.to], p[th + l.from]);
            out.push(t.offset(d, -l.theta_delta));
            let r = t.scale(d, -1.0);
            out.push(t.offset(r, -l.theta_delta));
        }
        Ok(out)
    }));

    for (class, reactive) in [(2usize, false), (3, true)] {
        let ii = inst.clone();
        let id = if reactive { "nu5b" } else { "nu5a" };
        terms.push(ConstraintTerm::new(id, Inequality, class, 1.0 / n, move |t, p, _| {
            check_pred(&ii, p)?;
            let start = if reactive {
                ii.qg_range().start
            } else {
                ii.pg_range().start
            };
            let mut out = Vec::new();
            for (k, g) in ii.generators.iter().enumerate() {
                let (lo, hi) = if reactive {
                    (g.q_min, g.q_max)
                } else {
                    (g.p_min, g.p_max)
                };
                let x = p[start + k];
                let neg = t.scale(x, -1.0);
                out.push(t.offset(neg, lo));
                out.push(t.offset(x, -hi));
            }
            Ok(out)
        }));
    }

    let i6 = inst.clone();
    let directed = 2.0 * e;
    terms.push(ConstraintTerm::new(
        "nu6",
        Inequality,
        4,
        1.0 / directed,
        move |t, p, _| {
            check_pred(&i6, p)?;
            let (pf, qf) = flows_on_tape(&i6, t, &p[i6.v_range()], &p[i6.theta_range()]);
            let dir = i6.directed();
            Ok(pf
                .iter()
                .zip(&qf)
                .zip(&dir)
                .map(|((&a, &b), &(k, _, _))| {
                    let a2 = t.square(a);
                    let b2 = t.square(b);
                    let s = t.add(a2, b2);
                    t.offset(s, -i6.lines[k].s_max)
                })
                .collect())
        },
    ));

    for (class, reactive) in [(5usize, false), (6, true)] {
        let ii = inst.clone();
        let id = if reactive { "nu7b" } else { "nu7a" };
        terms.push(ConstraintTerm::new(id, Equality, class, 1.0 / n, move |t, p, s| {
            check_pred(&ii, p)?;
            check_context(&ii, &s.context, false)?;
            Ok(kcl(&ii, t, p, &s.context, reactive))
        }));
    }

    if flow_deviation {
        for (class, reactive) in [(7usize, false), (8, true)] {
            let ii = inst.clone();
            let id = if reactive { "nu8b" } else { "nu8a" };
            terms.push(ConstraintTerm::new(id, Equality, class, 1.0 / e, move |t, p, s| {
                check_pred(&ii, p)?;
                check_context(&ii, &s.context, true)?;
                let (pf, qf) = flows_on_tape(&ii, t, &p[ii.v_range()], &p[ii.theta_range()]);
                let m = ii.lines.len();
                let base = 2 * ii.num_buses() + if reactive { m } else { 0 };
                let flows = if reactive { qf } else { pf };
                Ok((0..m).map(|k| t.offset(flows[k], -s.context[base + k])).collect())
            }));
        }
    }
    terms
}

/// Evaluates every violation family at a plain prediction.
pub fn opf_violation_vector(inst: &OpfInstance, pred: &[f64], sample: &Sample) -> Result<OpfNu> {
    let flows = sample.context.len() >= 2 * inst.num_buses() + 2 * inst.lines.len();
    let terms = opf_terms(inst, flows);
    let mut v = [0.0; 9];
    for t in &terms {
        v[t.class] = t.violation_value(pred, sample)?;
    }
    Ok(OpfNu {
        nu3: v[0],
        nu4: v[1],
        nu5a: v[2],
        nu5b: v[3],
        nu6: v[4],
        nu7a: v[5],
        nu7b: v[6],
        nu8a: flows.then_some(v[7]),
        nu8b: flows.then_some(v[8]),
    })
}

/// The oracle problem: generator cost subject to Kirchhoff, angle and flow
/// limits; generator, voltage and slack-angle bounds live in the box.
pub fn opf_problem(inst: &OpfInstance) -> Result<ProblemInstance> {
    inst.validate()?;
    let n = inst.num_buses();
    let mut lower = Vec::with_capacity(inst.output_dim());
    let mut upper = Vec::with_capacity(inst.output_dim());
    for g in &inst.generators {
        lower.push(g.p_min);
        upper.push(g.p_max);
    }
    for g in &inst.generators {
        lower.push(g.q_min);
        upper.push(g.q_max);
    }
    for b in &inst.buses {
        lower.push(b.v_min);
        upper.push(b.v_max);
    }
    let slack = inst.slack_bus();
    for i in 0..n {
        let bound = if i == slack { 0.0 } else { PI / 2.0 };
        lower.push(-bound);
        upper.push(bound);
    }
    let mut start: Vec<f64> = lower.iter().zip(&upper).map(|(l, u)| 0.5 * (l + u)).collect();
    for i in inst.v_range() {
        start[i] = 1.0f64.clamp(lower[i], upper[i]);
    }
    for i in inst.theta_range() {
        start[i] = 0.0;
    }
    let terms = opf_terms(inst, false);
    // Bound families are enforced by the box; keep the rest.
    let constraints: Vec<ConstraintTerm> = terms
        .into_iter()
        .filter(|t| matches!(t.id.as_str(), "nu4" | "nu6" | "nu7a" | "nu7b"))
        .collect();
    let obj_inst = inst.clone();
    let mut mask = vec![false; inst.output_dim()];
    for i in inst.pg_range().chain(inst.v_range()) {
        mask[i] = true;
    }
    Ok(ProblemInstance::new(
        inst.name.clone(),
        lower,
        upper,
        inst.nominal_demand(),
        move |t, y, _| {
            let parts: Vec<Var> = obj_inst
                .generators
                .iter()
                .enumerate()
                .map(|(k, g)| {
                    let sq = t.square(y[k]);
                    let a = t.scale(sq, g.c2);
                    let b = t.scale(y[k], g.c1);
                    let s = t.add(a, b);
                    t.offset(s, g.c0)
                })
                .collect();
            Ok(t.sum(&parts))
        },
        constraints,
    )?
    .with_start(start)
    .with_projection_mask(mask))
}

/// Turns oracle labels into training samples.
pub fn opf_samples(inst: &OpfInstance, points: &[LabeledPoint]) -> Result<Dataset> {
    let samples = points
        .iter()
        .map(|pt| {
            if pt.y.len() != inst.output_dim() {
                return Err(Error::InputShape {
                    expected: inst.output_dim(),
                    actual: pt.y.len(),
                });
            }
            let (pf, qf) = opf_flows_from_state(inst, &pt.y[inst.v_range()], &pt.y[inst.theta_range()]);
            let m = inst.lines.len();
            let mut context = pt.d.clone();
            context.extend_from_slice(&pf[..m]);
            context.extend_from_slice(&qf[..m]);
            Ok(Sample::new(inst.features(&pt.d), pt.y.clone(), context))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::fixtures::opf_mini;

    #[test]
    fn equal_phasors_carry_no_flow() {
        let inst = opf_mini();
        let (p, q) = opf_flows_from_state(&inst, &[1.02; 3], &[0.1; 3]);
        assert!(p.iter().chain(&q).all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn objective_examples() {
        let inst = opf_mini();
        assert_eq!(opf_objective(&inst, &[0.0, 0.0]), 0.0);
        let mut one = inst.clone();
        one.generators.truncate(1);
        one.generators[0].c0 = 3.0;
        assert_eq!(opf_objective(&one, &[2.0]), 11.0);
    }

    #[test]
    fn tape_flows_match_plain_flows() {
        let inst = opf_mini();
        let v = [1.03, 0.98, 1.01];
        let th = [0.0, -0.05, 0.07];
        let (p, q) = opf_flows_from_state(&inst, &v, &th);
        let mut tape = Tape::new();
        let vv: Vec<Var> = v.iter().map(|&x| tape.constant(x)).collect();
        let tt: Vec<Var> = th.iter().map(|&x| tape.constant(x)).collect();
        let (tp, tq) = flows_on_tape(&inst, &mut tape, &vv, &tt);
        for k in 0..p.len() {
            assert!((tape.value(tp[k]) - p[k]).abs() < 1e-14);
            assert!((tape.value(tq[k]) - q[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn voltage_excess_is_averaged_over_buses() {
        let inst = opf_mini();
        let mut pred = vec![0.5, 0.5, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        pred[inst.v_range().start] = 1.06 + 0.1;
        let sample = Sample::new(vec![], vec![], vec![0.0; 6]);
        let nu = opf_violation_vector(&inst, &pred, &sample).unwrap();
        assert!((nu.nu3 - 0.1 / 3.0).abs() < 1e-12);
        assert!(nu.nu8a.is_none());
    }

    #[test]
    fn missing_flows_is_a_config_error() {
        let inst = opf_mini();
        let terms = opf_terms(&inst, true);
        let pred = vec![0.0; inst.output_dim()];
        let sample = Sample::new(vec![], vec![], vec![0.0; 6]);
        let nu8 = terms.iter().find(|t| t.id == "nu8a").unwrap();
        assert!(matches!(nu8.violation_value(&pred, &sample), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_two_slack_buses() {
        let mut inst = opf_mini();
        inst.buses[1].role = BusRole::Slack;
        assert!(matches!(inst.validate(), Err(Error::InstanceData(_))));
    }
}
