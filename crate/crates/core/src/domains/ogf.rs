//! Miniature steady-state gas flow with compressors.
//!
//! Predictions are laid out as `[R (C), p (J), q^f (P), supply (J^B)]`.
//! Boundary conditions are imposed by construction: boundary pressures are
//! replaced by their regulated value, transport junctions inject nothing and
//! demand junctions inject minus their consumption.
//!
//! Sample contexts hold the consumption of every junction, optionally
//! followed by the ground-truth pipe flows.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::constraint::{ConstraintKind, ConstraintTerm};
use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::oracle::{LabeledPoint, ProblemInstance};
use crate::trainer::OutputBlock;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JunctionRole {
    Boundary,
    Transport,
    Demand,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Junction {
    pub role: JunctionRole,
    pub p_min: f64,
    pub p_max: f64,
    /// Regulated pressure (boundary junctions only).
    #[serde(default)]
    pub pressure: f64,
    /// Nominal consumption (demand junctions only).
    #[serde(default)]
    pub demand: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Compressor {
    pub r_min: f64,
    pub r_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pipe {
    pub from: usize,
    pub to: usize,
    pub length: f64,
    pub diameter: f64,
    pub q_min: f64,
    pub q_max: f64,
    #[serde(default)]
    pub compressor: Option<Compressor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OgfInstance {
    pub schema_version: u32,
    pub name: String,
    /// Isentropic coefficient.
    pub gamma: f64,
    /// Compressor efficiency `μ_c`.
    pub efficiency: f64,
    pub sound_speed: f64,
    /// Friction factor `λ_f`.
    pub friction: f64,
    pub junctions: Vec<Junction>,
    pub pipes: Vec<Pipe>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OgfNu {
    pub nu10: f64,
    pub nu11a: f64,
    pub nu11b: f64,
    pub nu12: f64,
    /// Present only when the sample carries ground-truth flows.
    pub nu14: Option<f64>,
}

impl OgfNu {
    /// Sum of the physical families (`ν14` excluded).
    pub fn total(&self) -> f64 {
        self.nu10 + self.nu11a + self.nu11b + self.nu12
    }
}

pub const OGF_CLASSES: [&str; 5] = ["nu10", "nu11a", "nu11b", "nu12", "nu14"];
pub const OGF_PHYSICAL_CLASSES: usize = 4;

impl OgfInstance {
    pub fn from_json(text: &str) -> Result<Self> {
        let inst: OgfInstance = serde_json::from_str(text)?;
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InstanceData(format!("{}: {m}", self.name)));
        if self.schema_version != 1 {
            return bad(format!("unsupported schema version {}", self.schema_version));
        }
        if !(self.gamma > 1.0) || !(self.efficiency > 0.0) {
            return bad("gamma must exceed 1 and efficiency must be positive".into());
        }
        let n = self.junctions.len();
        for (i, j) in self.junctions.iter().enumerate() {
            if !(j.p_min <= j.p_max) || j.p_min <= 0.0 {
                return bad(format!("junction {i} has invalid pressure bounds"));
            }
            if j.role == JunctionRole::Boundary && !(j.p_min..=j.p_max).contains(&j.pressure) {
                return bad(format!("junction {i} regulates pressure outside its bounds"));
            }
        }
        for (k, p) in self.pipes.iter().enumerate() {
            if p.from >= n || p.to >= n || p.from == p.to {
                return bad(format!("pipe {k} has invalid endpoints"));
            }
            if !(p.q_min <= p.q_max) {
                return bad(format!("pipe {k} has invalid flow bounds"));
            }
            if let Some(c) = &p.compressor {
                if !(c.r_min <= c.r_max) {
                    return bad(format!("pipe {k} has invalid compression bounds"));
                }
            }
            self.resistance(k)?;
        }
        Ok(())
    }

    /// `K = L λ_f a² / (D A²)` with `A = π D² / 4`.
    pub fn resistance(&self, pipe: usize) -> Result<f64> {
        let p = &self.pipes[pipe];
        let area = std::f64::consts::PI * p.diameter * p.diameter / 4.0;
        let k = p.length * self.friction * self.sound_speed * self.sound_speed / (p.diameter * area * area);
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::InstanceData(format!(
                "{}: pipe {pipe} has non-positive resistance {k}",
                self.name
            )));
        }
        Ok(k)
    }

    /// Pipe indices carrying a compressor, in pipe order.
    pub fn compressors(&self) -> Vec<usize> {
        (0..self.pipes.len())
            .filter(|&k| self.pipes[k].compressor.is_some())
            .collect()
    }

    pub fn boundary(&self) -> Vec<usize> {
        self.role_indices(JunctionRole::Boundary)
    }

    pub fn demand_junctions(&self) -> Vec<usize> {
        self.role_indices(JunctionRole::Demand)
    }

    fn role_indices(&self, role: JunctionRole) -> Vec<usize> {
        (0..self.junctions.len())
            .filter(|&i| self.junctions[i].role == role)
            .collect()
    }

    pub fn r_range(&self) -> std::ops::Range<usize> {
        0..self.compressors().len()
    }

    pub fn p_range(&self) -> std::ops::Range<usize> {
        let s = self.compressors().len();
        s..s + self.junctions.len()
    }

    pub fn q_range(&self) -> std::ops::Range<usize> {
        let s = self.p_range().end;
        s..s + self.pipes.len()
    }

    pub fn supply_range(&self) -> std::ops::Range<usize> {
        let s = self.q_range().end;
        s..s + self.boundary().len()
    }

    pub fn output_dim(&self) -> usize {
        self.supply_range().end
    }

    pub fn output_blocks(&self) -> Vec<OutputBlock> {
        vec![
            OutputBlock::new("R", self.r_range()),
            OutputBlock::new("p", self.p_range()),
            OutputBlock::new("q", self.q_range()),
        ]
    }

    /// Consumption of every junction at nominal load.
    pub fn nominal_demand(&self) -> Vec<f64> {
        self.junctions
            .iter()
            .map(|j| if j.role == JunctionRole::Demand { j.demand } else { 0.0 })
            .collect()
    }

    /// Network input: demand-junction consumption scaled to `[-1, 1]` over a
    /// ±20% band.
    pub fn features(&self, demand: &[f64]) -> Vec<f64> {
        self.demand_junctions()
            .into_iter()
            .map(|i| {
                let nom = self.junctions[i].demand;
                (demand[i] - nom) / (0.2 * nom)
            })
            .collect()
    }
}

/// `q̃ = sign(Δ)·sqrt(|Δ|/K)` with `Δ = R² p_i² − p_j²` on compressor pipes
/// and `p_i² − p_j²` otherwise. `r` holds one ratio per compressor.
pub fn ogf_flow_from_pressures(inst: &OgfInstance, p: &[f64], r: &[f64], pipe: usize) -> Result<f64> {
    let k = inst.resistance(pipe)?;
    let pp = &inst.pipes[pipe];
    let ratio = match inst.compressors().iter().position(|&c| c == pipe) {
        Some(c) => r[c],
        None => 1.0,
    };
    let delta = ratio * ratio * p[pp.from] * p[pp.from] - p[pp.to] * p[pp.to];
    Ok(delta.signum() * (delta.abs() / k).sqrt())
}

/// `Σ_C μ_c⁻¹ |q| (max(R, 1)^{2(γ−1)/γ} − 1)`; `r` has one entry per
/// compressor and `q` one per pipe.
pub fn ogf_objective(inst: &OgfInstance, r: &[f64], q: &[f64]) -> f64 {
    let e = 2.0 * (inst.gamma - 1.0) / inst.gamma;
    inst.compressors()
        .iter()
        .zip(r)
        .map(|(&pipe, &ratio)| q[pipe].abs() * (ratio.max(1.0).powf(e) - 1.0) / inst.efficiency)
        .sum()
}

fn check_pred(inst: &OgfInstance, pred: &[Var]) -> Result<()> {
    if pred.len() != inst.output_dim() {
        return Err(Error::InputShape {
            expected: inst.output_dim(),
            actual: pred.len(),
        });
    }
    Ok(())
}

fn check_context(inst: &OgfInstance, ctx: &[f64], flows: bool) -> Result<()> {
    let need = inst.junctions.len() + if flows { inst.pipes.len() } else { 0 };
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

/// Pressures with boundary values substituted.
fn pressures(inst: &OgfInstance, tape: &mut Tape, pred: &[Var]) -> Vec<Var> {
    let start = inst.p_range().start;
    inst.junctions
        .iter()
        .enumerate()
        .map(|(i, j)| match j.role {
            JunctionRole::Boundary => tape.constant(j.pressure),
            _ => pred[start + i],
        })
        .collect()
}

/// Indirect flows recomputed from pressures and compression ratios.
fn indirect_flows(inst: &OgfInstance, tape: &mut Tape, pred: &[Var]) -> Result<Vec<Var>> {
    let p = pressures(inst, tape, pred);
    let comps = inst.compressors();
    let rs = inst.r_range().start;
    let mut out = Vec::with_capacity(inst.pipes.len());
    for (k, pipe) in inst.pipes.iter().enumerate() {
        let kk = inst.resistance(k)?;
        let pi2 = tape.square(p[pipe.from]);
        let pj2 = tape.square(p[pipe.to]);
        let head = match comps.iter().position(|&c| c == k) {
            Some(c) => {
                let r2 = tape.square(pred[rs + c]);
                tape.mul(r2, pi2)
            }
            None => pi2,
        };
        let delta = tape.sub(head, pj2);
        let scaled = tape.scale(delta, 1.0 / kk);
        out.push(tape.signed_sqrt(scaled));
    }
    Ok(out)
}

/// Net injection per junction.
fn injections(inst: &OgfInstance, tape: &mut Tape, pred: &[Var], ctx: &[f64]) -> Vec<Var> {
    let boundary = inst.boundary();
    let ss = inst.supply_range().start;
    inst.junctions
        .iter()
        .enumerate()
        .map(|(i, j)| match j.role {
            JunctionRole::Boundary => {
                let b = boundary.iter().position(|&x| x == i).unwrap_or(0);
                pred[ss + b]
            }
            JunctionRole::Transport => tape.constant(0.0),
            JunctionRole::Demand => tape.constant(-ctx[i]),
        })
        .collect()
}

fn conservation(inst: &OgfInstance, tape: &mut Tape, flows: &[Var], inj: &[Var]) -> Vec<Var> {
    (0..inst.junctions.len())
        .map(|i| {
            let mut parts = Vec::new();
            for (k, pipe) in inst.pipes.iter().enumerate() {
                if pipe.from == i {
                    parts.push(flows[k]);
                }
                if pipe.to == i {
                    parts.push(tape.neg(flows[k]));
                }
            }
            let out = tape.sum(&parts);
            tape.sub(out, inj[i])
        })
        .collect()
}

/// Per-sample constraint terms in [`OGF_CLASSES`] order; `ν14` only when
/// `flow_deviation` is set.
pub fn ogf_terms(inst: &OgfInstance, flow_deviation: bool) -> Vec<ConstraintTerm> {
    use ConstraintKind::{Equality, Inequality};
    let nj = inst.junctions.len() as f64;
    let np = inst.pipes.len() as f64;
    let nc = inst.compressors().len().max(1) as f64;
    let mut terms = Vec::new();

    let i0 = inst.clone();
    terms.push(ConstraintTerm::new("nu10", Equality, 0, 1.0 / nj, move |t, p, s| {
        check_pred(&i0, p)?;
        check_context(&i0, &s.context, false)?;
        let flows = indirect_flows(&i0, t, p)?;
        let inj = injections(&i0, t, p, &s.context);
        Ok(conservation(&i0, t, &flows, &inj))
    }));

    let i1 = inst.clone();
    terms.push(ConstraintTerm::new("nu11a", Inequality, 1, 1.0 / nj, move |t, p, _| {
        check_pred(&i1, p)?;
        let pr = pressures(&i1, t, p);
        let mut out = Vec::new();
        for (j, x) in i1.junctions.iter().zip(pr) {
            let neg = t.scale(x, -1.0);
            out.push(t.offset(neg, j.p_min));
            out.push(t.offset(x, -j.p_max));
        }
        Ok(out)
    }));

    let i2 = inst.clone();
    terms.push(ConstraintTerm::new("nu11b", Inequality, 2, 1.0 / np, move |t, p, _| {
        check_pred(&i2, p)?;
        let qs = i2.q_range().start;
        let mut out = Vec::new();
        for (k, pipe) in i2.pipes.iter().enumerate() {
            let q = p[qs + k];
            let neg = t.scale(q, -1.0);
            out.push(t.offset(neg, pipe.q_min));
            out.push(t.offset(q, -pipe.q_max));
        }
        Ok(out)
    }));

    let i3 = inst.clone();
    terms.push(ConstraintTerm::new("nu12", Inequality, 3, 1.0 / nc, move |t, p, _| {
        check_pred(&i3, p)?;
        let rs = i3.r_range().start;
        let mut out = Vec::new();
        for (c, &pipe) in i3.compressors().iter().enumerate() {
            let comp = i3.pipes[pipe].compressor.as_ref().expect("compressor pipe");
            let r = p[rs + c];
            let neg = t.scale(r, -1.0);
            out.push(t.offset(neg, comp.r_min));
            out.push(t.offset(r, -comp.r_max));
        }
        Ok(out)
    }));

    if flow_deviation {
        let i4 = inst.clone();
        terms.push(ConstraintTerm::new("nu14", Equality, 4, 1.0 / np, move |t, p, s| {
            check_pred(&i4, p)?;
            check_context(&i4, &s.context, true)?;
            let flows = indirect_flows(&i4, t, p)?;
            let base = i4.junctions.len();
            Ok(flows
                .iter()
                .enumerate()
                .map(|(k, &f)| t.offset(f, -s.context[base + k]))
                .collect())
        }));
    }
    terms
}

pub fn ogf_violation_vector(inst: &OgfInstance, pred: &[f64], sample: &Sample) -> Result<OgfNu> {
    let flows = sample.context.len() >= inst.junctions.len() + inst.pipes.len();
    let mut v = [0.0; 5];
    for t in ogf_terms(inst, flows) {
        v[t.class] = t.violation_value(pred, sample)?;
    }
    Ok(OgfNu {
        nu10: v[0],
        nu11a: v[1],
        nu11b: v[2],
        nu12: v[3],
        nu14: flows.then_some(v[4]),
    })
}

/// Oracle problem: compressor cost subject to conservation (with the direct
/// flows) and the pipe equations; bounds live in the box.
pub fn ogf_problem(inst: &OgfInstance) -> Result<ProblemInstance> {
    inst.validate()?;
    let mut lower = Vec::with_capacity(inst.output_dim());
    let mut upper = Vec::with_capacity(inst.output_dim());
    for &pipe in &inst.compressors() {
        let c = inst.pipes[pipe].compressor.as_ref().expect("compressor pipe");
        lower.push(c.r_min);
        upper.push(c.r_max);
    }
    for j in &inst.junctions {
        if j.role == JunctionRole::Boundary {
            lower.push(j.pressure);
            upper.push(j.pressure);
        } else {
            lower.push(j.p_min);
            upper.push(j.p_max);
        }
    }
    for p in &inst.pipes {
        lower.push(p.q_min);
        upper.push(p.q_max);
    }
    let supply_cap: f64 = inst.pipes.iter().map(|p| p.q_max.abs()).sum();
    for _ in inst.boundary() {
        lower.push(0.0);
        upper.push(supply_cap);
    }

    let ic = inst.clone();
    let conservation_term = ConstraintTerm::new("conservation", ConstraintKind::Equality, 0, 1.0, move |t, y, s| {
        let qs = ic.q_range().start;
        let flows: Vec<Var> = (0..ic.pipes.len()).map(|k| y[qs + k]).collect();
        let inj = injections(&ic, t, y, &s.context);
        Ok(conservation(&ic, t, &flows, &inj))
    });
    let ip = inst.clone();
    let pipe_term = ConstraintTerm::new("pipe", ConstraintKind::Equality, 1, 1.0, move |t, y, _| {
        let p = pressures(&ip, t, y);
        let comps = ip.compressors();
        let (rs, qs) = (ip.r_range().start, ip.q_range().start);
        let mut out = Vec::new();
        for (k, pipe) in ip.pipes.iter().enumerate() {
            let kk = ip.resistance(k)?;
            let pi2 = t.square(p[pipe.from]);
            let pj2 = t.square(p[pipe.to]);
            let head = match comps.iter().position(|&c| c == k) {
                Some(c) => {
                    let r2 = t.square(y[rs + c]);
                    t.mul(r2, pi2)
                }
                None => pi2,
            };
            let delta = t.sub(head, pj2);
            let q = y[qs + k];
            let aq = t.abs(q);
            let qq = t.mul(q, aq);
            let drop = t.scale(qq, kk);
            out.push(t.sub(delta, drop));
        }
        Ok(out)
    });

    let io = inst.clone();
    let mut mask = vec![false; inst.output_dim()];
    for i in inst.r_range() {
        mask[i] = true;
    }
    let mut start: Vec<f64> = lower.iter().zip(&upper).map(|(l, u)| 0.5 * (l + u)).collect();
    for i in inst.r_range() {
        start[i] = lower[i];
    }
    Ok(ProblemInstance::new(
        inst.name.clone(),
        lower,
        upper,
        inst.nominal_demand(),
        move |t, y, _| {
            let e = 2.0 * (io.gamma - 1.0) / io.gamma;
            let (rs, qs) = (io.r_range().start, io.q_range().start);
            let parts: Vec<Var> = io
                .compressors()
                .iter()
                .enumerate()
                .map(|(c, &pipe)| {
                    let excess = t.offset(y[rs + c], -1.0);
                    let excess = t.relu(excess);
                    let r = t.offset(excess, 1.0);
                    let powered = t.powf(r, e);
                    let gain = t.offset(powered, -1.0);
                    let q = t.abs(y[qs + pipe]);
                    let cost = t.mul(q, gain);
                    t.scale(cost, 1.0 / io.efficiency)
                })
                .collect();
            Ok(t.sum(&parts))
        },
        vec![conservation_term, pipe_term],
    )?
    .with_start(start)
    .with_projection_mask(mask))
}

pub fn ogf_samples(inst: &OgfInstance, points: &[LabeledPoint]) -> Result<Dataset> {
    let qs = inst.q_range();
    let samples = points
        .iter()
        .map(|pt| {
            if pt.y.len() != inst.output_dim() {
                return Err(Error::InputShape {
                    expected: inst.output_dim(),
                    actual: pt.y.len(),
                });
            }
            let mut context = pt.d.clone();
            context.extend_from_slice(&pt.y[qs.clone()]);
            Ok(Sample::new(inst.features(&pt.d), pt.y.clone(), context))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::fixtures::ogf_mini;

    #[test]
    fn equal_pressures_carry_no_flow() {
        let inst = ogf_mini();
        assert_eq!(
            ogf_flow_from_pressures(&inst, &[5.0, 5.0, 5.0], &[1.0], 1).unwrap(),
            0.0
        );
        assert_eq!(
            ogf_flow_from_pressures(&inst, &[5.0, 5.0, 5.0], &[1.0], 0).unwrap(),
            0.0
        );
    }

    #[test]
    fn unit_drop_gives_unit_flow() {
        let inst = ogf_mini();
        let k = inst.resistance(1).unwrap();
        let pj: f64 = 4.0;
        let pi = (pj * pj + k).sqrt();
        let q = ogf_flow_from_pressures(&inst, &[5.0, pi, pj], &[1.0], 1).unwrap();
        assert!((q - 1.0).abs() < 1e-12);
    }

    #[test]
    fn objective_examples() {
        let mut inst = ogf_mini();
        assert_eq!(ogf_objective(&inst, &[1.0], &[1.0, 1.0]), 0.0);
        assert_eq!(ogf_objective(&inst, &[0.7], &[1.0, 1.0]), 0.0);
        inst.gamma = 2.0;
        inst.efficiency = 1.0;
        assert!((ogf_objective(&inst, &[2.0], &[1.0, 1.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_resistance_is_instance_error() {
        let mut inst = ogf_mini();
        inst.friction = 0.0;
        assert!(matches!(inst.resistance(0), Err(Error::InstanceData(_))));
    }
}
