//! Ground-truth solver and feasibility projection.
//!
//! Problems are `min f(y, d)` over a box subject to per-family constraints
//! given as signed satisfiability degrees. The solver is a method of
//! multipliers: each outer iteration minimises the augmented Lagrangian by
//! projected gradient (Barzilai-Borwein steps with Armijo backtracking), then
//! moves the multipliers. With `rho = 0` it degrades to plain dual ascent on
//! the ordinary Lagrangian.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::constraint::{ConstraintKind, ConstraintTerm};
use crate::data::Sample;
use crate::error::{Error, Result};

pub type ObjectiveFn = Arc<dyn Fn(&mut Tape, &[Var], &Sample) -> Result<Var> + Send + Sync>;

/// A parametric problem `O(d)`. Constraint evaluators see the parameter
/// vector `d` as `sample.context`.
#[derive(Clone)]
pub struct ProblemInstance {
    pub id: String,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub param: Vec<f64>,
    pub constraints: Vec<ConstraintTerm>,
    /// Starting point of the first restart; the box midpoint when absent.
    pub start: Option<Vec<f64>>,
    /// Components that count towards projection distances; all when absent.
    pub projection_mask: Option<Vec<bool>>,
    objective: ObjectiveFn,
}

impl std::fmt::Debug for ProblemInstance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemInstance")
            .field("id", &self.id)
            .field("dim", &self.dim())
            .field("param", &self.param)
            .field("constraints", &self.constraints)
            .finish()
    }
}

impl ProblemInstance {
    pub fn new<F>(
        id: impl Into<String>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        param: Vec<f64>,
        objective: F,
        constraints: Vec<ConstraintTerm>,
    ) -> Result<Self>
    where
        F: Fn(&mut Tape, &[Var], &Sample) -> Result<Var> + Send + Sync + 'static,
    {
        let id = id.into();
        if lower.len() != upper.len() {
            return Err(Error::InputShape {
                expected: lower.len(),
                actual: upper.len(),
            });
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i])) {
            return Err(Error::InstanceData(format!(
                "{id}: bound {i} has lower {} above upper {}",
                lower[i], upper[i]
            )));
        }
        Ok(ProblemInstance {
            id,
            lower,
            upper,
            param,
            constraints,
            start: None,
            projection_mask: None,
            objective: Arc::new(objective),
        })
    }

    pub fn with_start(mut self, start: Vec<f64>) -> Self {
        self.start = Some(start);
        self
    }

    pub fn with_projection_mask(mut self, mask: Vec<bool>) -> Self {
        self.projection_mask = Some(mask);
        self
    }

    /// Same problem with a different parameter vector.
    pub fn with_param(&self, param: Vec<f64>) -> Self {
        let mut p = self.clone();
        p.param = param;
        p
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn context(&self) -> Sample {
        Sample::new(Vec::new(), Vec::new(), self.param.clone())
    }

    fn check_dim(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.dim() {
            return Err(Error::InputShape {
                expected: self.dim(),
                actual: y.len(),
            });
        }
        Ok(())
    }

    pub fn objective_value(&self, y: &[f64]) -> Result<f64> {
        self.check_dim(y)?;
        let mut tape = Tape::new();
        let vars: Vec<Var> = y.iter().map(|&v| tape.constant(v)).collect();
        let f = (self.objective)(&mut tape, &vars, &self.context())?;
        Ok(tape.value(f))
    }

    /// Every signed satisfiability degree at `y`, flattened in constraint
    /// order, with its kind.
    pub fn sigma_values(&self, y: &[f64]) -> Result<Vec<(ConstraintKind, f64)>> {
        self.check_dim(y)?;
        let mut tape = Tape::new();
        let vars: Vec<Var> = y.iter().map(|&v| tape.constant(v)).collect();
        let ctx = self.context();
        let mut out = Vec::new();
        for c in &self.constraints {
            for s in c.sigma(&mut tape, &vars, &ctx)? {
                out.push((c.kind, tape.value(s)));
            }
        }
        Ok(out)
    }

    /// Largest violation at `y`, including box bounds.
    pub fn max_residual(&self, y: &[f64]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (kind, s) in self.sigma_values(y)? {
            let v = match kind {
                ConstraintKind::Inequality => s.max(0.0),
                ConstraintKind::Equality => s.abs(),
            };
            if v.is_nan() {
                return Ok(f64::INFINITY);
            }
            worst = worst.max(v);
        }
        for ((v, lo), hi) in y.iter().zip(&self.lower).zip(&self.upper) {
            worst = worst.max(lo - v).max(v - hi);
        }
        Ok(worst)
    }

    fn clamp(&self, y: &mut [f64]) {
        for ((v, lo), hi) in y.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    fn initial_point(&self) -> Vec<f64> {
        let mut y = match &self.start {
            Some(s) => s.clone(),
            None => self
                .lower
                .iter()
                .zip(&self.upper)
                .map(|(&l, &u)| match (l.is_finite(), u.is_finite()) {
                    (true, true) => 0.5 * (l + u),
                    (true, false) => l,
                    (false, true) => u,
                    (false, false) => 0.0,
                })
                .collect(),
        };
        self.clamp(&mut y);
        y
    }

    fn random_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let base = self.initial_point();
        let mut y: Vec<f64> = (0..self.dim())
            .map(|i| {
                let (l, u) = (self.lower[i], self.upper[i]);
                if l.is_finite() && u.is_finite() {
                    if l == u {
                        l
                    } else {
                        rng.gen_range(l..=u)
                    }
                } else {
                    base[i] + rng.gen_range(-1.0..=1.0)
                }
            })
            .collect();
        self.clamp(&mut y);
        y
    }

    /// Value and gradient of `f + multiplier terms`. `rho > 0` gives the
    /// augmented Lagrangian, `rho = 0` the ordinary one.
    fn lagrangian(&self, y: &[f64], lambda: &[f64], rho: f64, proximal: Option<&Proximal>) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let vars = tape.params(y);
        let ctx = self.context();
        let mut parts = vec![match proximal {
            Some(p) => p.node(&mut tape, &vars),
            None => (self.objective)(&mut tape, &vars, &ctx)?,
        }];
        let mut k = 0;
        let mut constant = 0.0;
        for c in &self.constraints {
            for s in c.sigma(&mut tape, &vars, &ctx)? {
                let l = lambda[k];
                k += 1;
                match (c.kind, rho > 0.0) {
                    (ConstraintKind::Equality, true) => {
                        let sq = tape.square(s);
                        parts.push(tape.scale(sq, 0.5 * rho));
                        if l != 0.0 {
                            parts.push(tape.scale(s, l));
                        }
                    }
                    (ConstraintKind::Inequality, true) => {
                        let shifted = tape.scale(s, rho);
                        let shifted = tape.offset(shifted, l);
                        let pos = tape.relu(shifted);
                        let sq = tape.square(pos);
                        parts.push(tape.scale(sq, 0.5 / rho));
                        constant -= l * l * 0.5 / rho;
                    }
                    (_, false) => {
                        if l != 0.0 {
                            parts.push(tape.scale(s, l));
                        }
                    }
                }
            }
        }
        let total = tape.sum(&parts);
        let total = tape.offset(total, constant);
        let value = tape.value(total);
        let grad = tape.backward(total)?.params();
        Ok((value, grad))
    }

    fn sigma_count(&self) -> Result<usize> {
        Ok(self.sigma_values(&self.initial_point())?.len())
    }
}

struct Proximal {
    target: Vec<f64>,
    mask: Vec<bool>,
}

impl Proximal {
    fn node(&self, tape: &mut Tape, y: &[Var]) -> Var {
        let mut terms = Vec::new();
        for (i, &v) in y.iter().enumerate() {
            if self.mask[i] {
                let d = tape.offset(v, -self.target[i]);
                terms.push(tape.square(d));
            }
        }
        let s = tape.sum(&terms);
        tape.scale(s, 0.5)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub outer: usize,
    pub inner: usize,
    /// Initial penalty of the augmented Lagrangian; 0 selects plain dual
    /// ascent with `dual_step`.
    pub rho: f64,
    pub rho_max: f64,
    pub dual_step: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Largest violation accepted as feasible.
    pub tol: f64,
    /// Record the ordinary Lagrangian dual value at every outer iteration.
    pub track_dual: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            outer: 60,
            inner: 2000,
            rho: 10.0,
            rho_max: 1e8,
            dual_step: 1.0,
            restarts: 5,
            seed: 0,
            tol: 1e-6,
            track_dual: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub y: Vec<f64>,
    /// Multipliers, one per satisfiability component.
    pub lambda: Vec<f64>,
    pub objective: f64,
    /// Recomputed from scratch at `y`.
    pub max_residual: f64,
    /// Dual value per outer iteration (when tracked).
    pub dual_values: Vec<f64>,
    pub feasible: bool,
}

/// Solves `(A + τI) x = b` with the smallest `τ` from a geometric ladder
/// that makes the matrix positive definite.
fn regularized_solve(a: DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let rhs = DVector::from_column_slice(b);
    let scale = a.diagonal().amax().max(1e-12);
    let mut tau = 0.0;
    loop {
        let shifted = &a + DMatrix::<f64>::identity(n, n) * tau;
        if let Some(chol) = shifted.cholesky() {
            let x = chol.solve(&rhs);
            if x.iter().all(|v| v.is_finite()) {
                return x.as_slice().to_vec();
            }
        }
        tau = if tau == 0.0 { 1e-10 * scale } else { tau * 10.0 };
    }
}

/// Objective value and gradient at a point.
type ValueGrad<'a> = dyn Fn(&[f64]) -> Result<(f64, Vec<f64>)> + 'a;

/// Accepted point, its value and its gradient.
type Step = (Vec<f64>, f64, Vec<f64>);

/// Projected Newton minimisation over the box. Variables close to a bound
/// with the gradient pushing outwards are pinned to it; the rest take a
/// regularised Newton step on a finite-difference Hessian, followed by a
/// projected Armijo backtracking search.
fn minimize_box(
    inst: &ProblemInstance,
    fg: &ValueGrad<'_>,
    start: Vec<f64>,
    steps: usize,
    tol: f64,
) -> Result<(Vec<f64>, f64)> {
    let n = start.len();
    let mut y = start;
    inst.clamp(&mut y);
    let (mut fy, mut g) = fg(&y)?;
    if !fy.is_finite() {
        return Err(Error::SolverFailure {
            reason: "non-finite objective at the starting point".into(),
            iterate: y,
        });
    }
    for _ in 0..steps {
        let mut pg: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - b).collect();
        inst.clamp(&mut pg);
        let stationarity = pg.iter().zip(&y).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if stationarity < tol {
            break;
        }
        let width = stationarity.min(1e-3);
        let free: Vec<usize> = (0..n)
            .filter(|&i| {
                !(inst.lower[i] == inst.upper[i]
                    || (y[i] <= inst.lower[i] + width && g[i] > 0.0)
                    || (y[i] >= inst.upper[i] - width && g[i] < 0.0))
            })
            .collect();
        let m = free.len();
        let mut hess = DMatrix::<f64>::zeros(m, m);
        for (c, &j) in free.iter().enumerate() {
            let h = 1e-7 * (1.0 + y[j].abs());
            let h = if y[j] + h > inst.upper[j] { -h } else { h };
            let mut yp = y.clone();
            yp[j] += h;
            let (_, gp) = fg(&yp)?;
            for (r, &i) in free.iter().enumerate() {
                hess[(r, c)] = (gp[i] - g[i]) / h;
            }
        }
        let hess = (&hess + hess.transpose()) * 0.5;
        let rhs: Vec<f64> = free.iter().map(|&i| -g[i]).collect();
        let step = regularized_solve(hess, &rhs);
        let mut dir = vec![0.0; n];
        for i in 0..n {
            if g[i] > 0.0 {
                dir[i] = inst.lower[i] - y[i];
            } else if g[i] < 0.0 {
                dir[i] = inst.upper[i] - y[i];
            }
        }
        for (k, &i) in free.iter().enumerate() {
            dir[i] = step[k];
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut yn: Vec<f64> = y.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            inst.clamp(&mut yn);
            let decrease: f64 = g.iter().zip(yn.iter().zip(&y)).map(|(gi, (a, b))| gi * (a - b)).sum();
            if decrease < 0.0 {
                let (fn_, gn) = fg(&yn)?;
                if fn_.is_finite() && fn_ <= fy + 1e-4 * decrease {
                    accepted = Some((yn, fn_, gn));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((yn, fn_, gn)) = accepted.map_or_else(|| gradient_step(inst, fg, &y, fy, &g), |a| Ok(Some(a)))? else {
            break;
        };
        if fn_ < -1e30 {
            return Err(Error::SolverFailure {
                reason: "objective diverged to -inf".into(),
                iterate: yn,
            });
        }
        let moved = yn.iter().zip(&y).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        y = yn;
        fy = fn_;
        g = gn;
        if moved < 1e-15 {
            break;
        }
    }
    Ok((y, fy))
}

/// Projected steepest-descent fallback when the Newton direction fails.
fn gradient_step(inst: &ProblemInstance, fg: &ValueGrad<'_>, y: &[f64], fy: f64, g: &[f64]) -> Result<Option<Step>> {
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut a = 1.0 / gmax.max(1e-12);
    for _ in 0..60 {
        let mut yn: Vec<f64> = y.iter().zip(g).map(|(yi, gi)| yi - a * gi).collect();
        inst.clamp(&mut yn);
        let decrease: f64 = g.iter().zip(yn.iter().zip(y)).map(|(gi, (n, o))| gi * (n - o)).sum();
        let (fn_, gn) = fg(&yn)?;
        if fn_.is_finite() && fn_ <= fy + 1e-4 * decrease && decrease < 0.0 {
            return Ok(Some((yn, fn_, gn)));
        }
        a *= 0.5;
    }
    Ok(None)
}

fn run_from(
    inst: &ProblemInstance,
    start: Vec<f64>,
    opts: &SolverOptions,
    proximal: Option<&Proximal>,
) -> Result<OracleSolution> {
    let m = inst.sigma_count()?;
    let mut lambda = vec![0.0; m];
    let mut rho = opts.rho;
    let mut y = start;
    let mut dual_values = Vec::new();
    let mut prev_viol = f64::INFINITY;
    for _ in 0..opts.outer.max(1) {
        let prev_y = y.clone();
        let (yn, _) = minimize_box(
            inst,
            &|p: &[f64]| inst.lagrangian(p, &lambda, rho, proximal),
            y,
            opts.inner,
            1e-10,
        )?;
        y = yn;
        if opts.track_dual {
            let (_, q) = minimize_box(
                inst,
                &|p: &[f64]| inst.lagrangian(p, &lambda, 0.0, proximal),
                y.clone(),
                opts.inner,
                1e-10,
            )?;
            dual_values.push(q);
        }
        let sig = inst.sigma_values(&y)?;
        let mut viol: f64 = 0.0;
        for (k, (kind, s)) in sig.iter().enumerate() {
            let step = if rho > 0.0 { rho } else { opts.dual_step };
            match kind {
                ConstraintKind::Equality => {
                    lambda[k] += step * s;
                    viol = viol.max(s.abs());
                }
                ConstraintKind::Inequality => {
                    lambda[k] = (lambda[k] + step * s).max(0.0);
                    viol = viol.max(s.max(0.0));
                }
            }
        }
        if !viol.is_finite() || lambda.iter().any(|l| !l.is_finite()) {
            return Err(Error::SolverFailure {
                reason: "multipliers diverged".into(),
                iterate: y,
            });
        }
        let moved = y.iter().zip(&prev_y).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if viol <= opts.tol * 1e-3 && moved < 1e-10 {
            break;
        }
        if rho > 0.0 && viol > 0.25 * prev_viol {
            rho = (rho * 10.0).min(opts.rho_max);
        }
        prev_viol = viol;
    }
    let objective = match proximal {
        Some(p) => {
            let mut tape = Tape::new();
            let vars: Vec<Var> = y.iter().map(|&v| tape.constant(v)).collect();
            let n = p.node(&mut tape, &vars);
            tape.value(n)
        }
        None => inst.objective_value(&y)?,
    };
    let max_residual = inst.max_residual(&y)?;
    Ok(OracleSolution {
        feasible: max_residual <= opts.tol,
        y,
        lambda,
        objective,
        max_residual,
        dual_values,
    })
}

fn solve_impl(
    inst: &ProblemInstance,
    opts: &SolverOptions,
    proximal: Option<&Proximal>,
    first: Vec<f64>,
) -> Result<OracleSolution> {
    let mut best: Option<OracleSolution> = None;
    let mut last_err = None;
    for r in 0..opts.restarts.max(1) {
        let start = if r == 0 {
            first.clone()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(r as u64));
            inst.random_point(&mut rng)
        };
        let sol = match run_from(inst, start, opts, proximal) {
            Ok(s) => s,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        let better = match &best {
            None => true,
            Some(b) => match (sol.feasible, b.feasible) {
                (true, false) => true,
                (false, true) => false,
                (true, true) => sol.objective < b.objective,
                (false, false) => sol.max_residual < b.max_residual,
            },
        };
        if better {
            best = Some(sol);
        }
    }
    match (best, last_err) {
        (Some(b), _) => Ok(b),
        (None, Some(e)) => Err(e),
        (None, None) => unreachable!("at least one restart runs"),
    }
}

/// Solves `inst` with `iterations` outer and `inner_steps` inner iterations
/// and default options otherwise.
pub fn solve_lagrangian_dual(inst: &ProblemInstance, iterations: usize, inner_steps: usize) -> Result<OracleSolution> {
    solve_with(
        inst,
        &SolverOptions {
            outer: iterations,
            inner: inner_steps,
            ..SolverOptions::default()
        },
    )
}

pub fn solve_with(inst: &ProblemInstance, opts: &SolverOptions) -> Result<OracleSolution> {
    solve_impl(inst, opts, None, inst.initial_point())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub y: Vec<f64>,
    /// Euclidean distance over the masked components.
    pub distance: f64,
    /// `100 · distance / ‖ŷ‖₂` over the masked components.
    pub percent: f64,
}

/// Closest feasible point to `y_hat` (over the masked components).
pub fn project_feasible(y_hat: &[f64], inst: &ProblemInstance, iterations: usize) -> Result<Projection> {
    project_with(
        y_hat,
        inst,
        &SolverOptions {
            outer: iterations,
            ..SolverOptions::default()
        },
    )
}

pub fn project_with(y_hat: &[f64], inst: &ProblemInstance, opts: &SolverOptions) -> Result<Projection> {
    inst.check_dim(y_hat)?;
    let mask = inst.projection_mask.clone().unwrap_or_else(|| vec![true; inst.dim()]);
    let norm: f64 = y_hat
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m)
        .map(|(v, _)| v * v)
        .sum::<f64>()
        .sqrt();
    let finish = |y: Vec<f64>| {
        let distance = y
            .iter()
            .zip(y_hat)
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|((a, b), _)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let percent = if norm > 0.0 { 100.0 * distance / norm } else { 0.0 };
        Projection { y, distance, percent }
    };
    if inst.max_residual(y_hat)? <= opts.tol {
        return Ok(finish(y_hat.to_vec()));
    }
    let proximal = Proximal {
        target: y_hat.to_vec(),
        mask: mask.clone(),
    };
    let mut start = y_hat.to_vec();
    inst.clamp(&mut start);
    let sol = solve_impl(inst, opts, Some(&proximal), start)?;
    if !sol.feasible {
        return Err(Error::SolverFailure {
            reason: format!("projection left a residual of {:.3e}", sol.max_residual),
            iterate: sol.y,
        });
    }
    Ok(finish(sol.y))
}

/// One oracle-labelled sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub d: Vec<f64>,
    pub y: Vec<f64>,
    pub objective: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedDataset {
    pub instance: String,
    pub seed: u64,
    pub perturbation: f64,
    pub tolerance: f64,
    pub requested: usize,
    pub rejected: usize,
    pub points: Vec<LabeledPoint>,
}

/// Draws `n` parameter vectors uniformly in `nominal · (1 ± fraction)` and
/// labels each with the solver. Sample `l` uses the seed `seed + l`.
pub fn generate_dataset(template: &ProblemInstance, n: usize, fraction: f64, seed: u64) -> Result<GeneratedDataset> {
    generate_with(template, n, fraction, seed, &SolverOptions::default())
}

pub fn generate_with(
    template: &ProblemInstance,
    n: usize,
    fraction: f64,
    seed: u64,
    opts: &SolverOptions,
) -> Result<GeneratedDataset> {
    if n == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!(
            "perturbation must lie in [0, 1), got {fraction}"
        )));
    }
    let nominal = &template.param;
    let mut points = Vec::with_capacity(n);
    let mut rejected = 0;
    for l in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(l as u64));
        let d: Vec<f64> = nominal
            .iter()
            .map(|&v| {
                if fraction == 0.0 {
                    v
                } else {
                    v * (1.0 + rng.gen_range(-fraction..fraction))
                }
            })
            .collect();
        let inst = template.with_param(d.clone());
        match solve_with(&inst, &SolverOptions { seed, ..opts.clone() }) {
            Ok(sol) if sol.feasible => points.push(LabeledPoint {
                d,
                y: sol.y,
                objective: sol.objective,
                residual: sol.max_residual,
            }),
            _ => rejected += 1,
        }
    }
    if rejected * 10 > n {
        return Err(Error::GenerationFailure { rejected, requested: n });
    }
    Ok(GeneratedDataset {
        instance: template.id.clone(),
        seed,
        perturbation: fraction,
        tolerance: opts.tol,
        requested: n,
        rejected,
        points,
    })
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    instance: String,
    seed: u64,
    perturbation: f64,
    tolerance: f64,
    requested: usize,
    rejected: usize,
    samples: usize,
}

impl GeneratedDataset {
    /// CSV with columns `d_0.., y_0..`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let (nd, ny) = self.points.first().map_or((0, 0), |p| (p.d.len(), p.y.len()));
        let header: Vec<String> = (0..nd)
            .map(|i| format!("d_{i}"))
            .chain((0..ny).map(|i| format!("y_{i}")))
            .collect();
        w.write_record(&header)?;
        for p in &self.points {
            let row: Vec<String> = p.d.iter().chain(&p.y).map(|v| format!("{v:?}")).collect();
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<dataset>", e))?;
        Ok(())
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        self.write_csv(std::io::BufWriter::new(file))?;
        let meta = Metadata {
            instance: self.instance.clone(),
            seed: self.seed,
            perturbation: self.perturbation,
            tolerance: self.tolerance,
            requested: self.requested,
            rejected: self.rejected,
            samples: self.points.len(),
        };
        let json_path = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(&meta)?;
        std::fs::write(&json_path, text + "\n").map_err(|e| Error::io(&json_path, e))
    }
}

/// Reads a `d_*, y_*` CSV back into `(d, y)` pairs.
pub fn read_dataset_csv(path: &Path) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header = r.headers()?.clone();
    let nd = header.iter().filter(|h| h.starts_with("d_")).count();
    let ny = header.iter().filter(|h| h.starts_with("y_")).count();
    if nd + ny != header.len() {
        return Err(Error::Parse {
            line: 1,
            reason: "expected only d_* and y_* columns".into(),
        });
    }
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|v| {
                v.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: k + 2,
                    reason: format!("`{v}`: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        out.push((vals[..nd].to_vec(), vals[nd..].to_vec()));
    }
    Ok(out)
}
