//! Frank–Wolfe over the hull of logistic atoms and `−1`.
//!
//! Starting from `ψ⁰ = −1`, iteration `j` solves the linearized subproblem
//! `min_s E[s(X)·∇ℒ(ψʲ)(X)]`, then sets `ψʲ⁺¹ = (1 − γ_j)ψʲ + γ_j·s_j` with
//! `γ_j = 2/(j + 2)`. After `J` steps atom `s_{j−1}` carries weight
//! `2j / (J(J+1))`.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::criteria::{gradient_at, lagrangian_at, LagrangianProblem};
use crate::data::Covariates;
use crate::policy::{Atom, ScoreFunction};
use crate::{Error, Result};

/// Objectives closer than this are ties, resolved in favour of `MinusOne`.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SGDConfig {
    pub tolerance: f64,
    pub learning_rate: f64,
    pub batch_fraction: f64,
    pub max_iterations: usize,
    pub seed: u64,
    /// Start each solve from the previous solution instead of `θ = 0`.
    pub warm_start: bool,
    /// Fit a trailing intercept coefficient in every atom.
    pub intercept: bool,
}

impl Default for SGDConfig {
    fn default() -> Self {
        SGDConfig {
            tolerance: 1e-3,
            learning_rate: 1e-2,
            batch_fraction: 0.2,
            max_iterations: 1000,
            seed: 0,
            warm_start: false,
            intercept: true,
        }
    }
}

impl SGDConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tolerance > 0.0
            && self.learning_rate > 0.0
            && self.batch_fraction > 0.0
            && self.batch_fraction <= 1.0
            && self.max_iterations > 0;
        if !ok {
            return Err(Error::Invalid(format!("invalid SGD settings: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FWConfig {
    pub iterations: usize,
    pub sgd: SGDConfig,
    pub record_certificate: bool,
}

impl Default for FWConfig {
    fn default() -> Self {
        FWConfig {
            iterations: 40,
            sgd: SGDConfig::default(),
            record_certificate: false,
        }
    }
}

impl FWConfig {
    /// `J = ⌈1 / precision⌉`; a precision of 0.025 gives 40 iterations.
    pub fn from_precision(precision: f64) -> Result<Self> {
        Ok(FWConfig {
            iterations: iterations_for_precision(precision)?,
            ..Default::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Invalid("Frank-Wolfe needs at least one iteration".into()));
        }
        self.sgd.validate()
    }
}

pub fn iterations_for_precision(precision: f64) -> Result<usize> {
    if !(precision > 0.0 && precision <= 1.0) {
        return Err(Error::Invalid(format!("precision {precision} outside (0, 1]")));
    }
    // guard against 1/0.025 = 40.000000000000001
    Ok(((1.0 / precision) - 1e-9).ceil() as usize)
}

#[inline]
pub fn step_size(j: usize) -> f64 {
    2.0 / (j as f64 + 2.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateRecord {
    pub j: usize,
    pub gamma: f64,
    /// `ℒ(ψʲ)`.
    pub criterion: f64,
    /// `E[s_j·∇ℒ(ψʲ)]` for the atom the oracle returned.
    pub lin_obj: f64,
    /// `E[∇ℒ(ψʲ)·(ψʲ − s_j)]`, the duality-gap surrogate.
    pub gap: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CertificateTrace {
    pub records: Vec<CertificateRecord>,
}

impl CertificateTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["j", "gamma", "criterion", "lin_obj", "gap"])?;
        for r in &self.records {
            w.write_record([
                r.j.to_string(),
                r.gamma.to_string(),
                r.criterion.to_string(),
                r.lin_obj.to_string(),
                r.gap.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Dot product with two accumulators, which roughly halves its latency.
#[inline]
fn dot2(a: &[f64], b: &[f64]) -> f64 {
    let (mut s0, mut s1) = (0.0, 0.0);
    let mut pa = a.chunks_exact(2);
    let mut pb = b.chunks_exact(2);
    for (x, y) in (&mut pa).zip(&mut pb) {
        s0 += x[0] * y[0];
        s1 += x[1] * y[1];
    }
    for (x, y) in pa.remainder().iter().zip(pb.remainder()) {
        s0 += x * y;
    }
    s0 + s1
}

/// Solver for `min_s E[s(X)·g(X)]` over a family of atoms.
pub trait LinearOracle {
    fn minimize(&mut self, grad: &[f64], points: &Covariates) -> Result<Atom>;
}

fn atom_values(atom: &Atom, points: &Covariates) -> Vec<f64> {
    points.rows().map(|x| atom.eval_raw(x)).collect()
}

fn linear_objective(values: &[f64], grad: &[f64]) -> f64 {
    values.iter().zip(grad).map(|(s, g)| s * g).sum::<f64>() / grad.len() as f64
}

fn check_gradient(grad: &[f64], points: &Covariates) -> Result<()> {
    if grad.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    if grad.len() != points.len() {
        return Err(Error::Dimension {
            expected: points.len(),
            got: grad.len(),
        });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    Ok(())
}

/// Outcome of one SGD run on `θ ↦ E[s_θ(X)·g(X)]`.
#[derive(Clone, Debug)]
pub struct SgdRun {
    pub theta: Vec<f64>,
    pub steps: usize,
    /// Full-sample objective after each step, when tracking was requested.
    pub objectives: Vec<f64>,
}

/// Minibatch SGD from `init`, batches drawn without replacement within an
/// epoch and reshuffled between epochs. Stops once the minibatch gradient has
/// sup-norm below `cfg.tolerance`.
pub fn run_sgd(
    grad: &[f64],
    points: &Covariates,
    cfg: &SGDConfig,
    init: Vec<f64>,
    rng: &mut ChaCha8Rng,
    track: bool,
) -> Result<SgdRun> {
    check_gradient(grad, points)?;
    cfg.validate()?;
    let n = points.len();
    let d = points.d();
    let p = init.len();
    if p != d && p != d + 1 {
        return Err(Error::Dimension { expected: d, got: p });
    }
    let batch = ((cfg.batch_fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut cursor = 0;
    let mut theta = init;
    let mut g_theta = vec![0.0; p];
    let mut w = vec![0.0; batch];
    let mut objectives = Vec::new();
    let mut steps = 0;
    while steps < cfg.max_iterations {
        if cursor + batch > n {
            order.shuffle(rng);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + batch];
        let (slopes, intercept) = (&theta[..d], theta.get(d).copied().unwrap_or(0.0));
        // d/dz tanh(z/2) = 2·e^{−|z|}/(1 + e^{−|z|})², one exp instead of a tanh
        for (wi, &i) in w.iter_mut().zip(idx) {
            let z = dot2(slopes, points.row(i)) + intercept;
            let e = (-z.abs()).exp();
            *wi = 2.0 * e / ((1.0 + e) * (1.0 + e)) * grad[i];
        }
        g_theta.iter_mut().for_each(|v| *v = 0.0);
        let (gs, gi) = g_theta.split_at_mut(d);
        for (&wi, &i) in w.iter().zip(idx) {
            for (g, x) in gs.iter_mut().zip(points.row(i)) {
                *g += wi * x;
            }
        }
        if let Some(g) = gi.first_mut() {
            *g = w.iter().sum();
        }
        cursor += batch;
        let scale = 1.0 / batch as f64;
        let mut sup: f64 = 0.0;
        for k in 0..p {
            let gk = g_theta[k] * scale;
            theta[k] -= cfg.learning_rate * gk;
            sup = sup.max(gk.abs());
        }
        steps += 1;
        if track {
            let a = Atom::Logistic(theta.clone());
            objectives.push(linear_objective(&atom_values(&a, points), grad));
        }
        if sup < cfg.tolerance {
            break;
        }
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("SGD iterate"));
    }
    Ok(SgdRun {
        theta,
        steps,
        objectives,
    })
}

/// SGD over logistic atoms, compared against the constant `−1`.
pub struct SgdOracle {
    cfg: SGDConfig,
    rng: ChaCha8Rng,
    previous: Option<Vec<f64>>,
}

impl SgdOracle {
    pub fn new(cfg: SGDConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        SgdOracle {
            cfg,
            rng,
            previous: None,
        }
    }
}

impl LinearOracle for SgdOracle {
    fn minimize(&mut self, grad: &[f64], points: &Covariates) -> Result<Atom> {
        check_gradient(grad, points)?;
        let p = points.d() + usize::from(self.cfg.intercept);
        let init = match (&self.previous, self.cfg.warm_start) {
            (Some(prev), true) if prev.len() == p => prev.clone(),
            _ => vec![0.0; p],
        };
        let run = run_sgd(grad, points, &self.cfg, init, &mut self.rng, false)?;
        let logistic = Atom::Logistic(run.theta.clone());
        self.previous = Some(run.theta);
        let lin_logistic = linear_objective(&atom_values(&logistic, points), grad);
        let lin_minus = -grad.iter().sum::<f64>() / grad.len() as f64;
        Ok(if lin_minus <= lin_logistic + TIE_TOLERANCE {
            Atom::MinusOne
        } else {
            logistic
        })
    }
}

/// Exact minimization over a finite candidate list.
pub struct FiniteOracle {
    candidates: Vec<Atom>,
    values: Vec<Vec<f64>>,
}

impl FiniteOracle {
    /// Candidate values are cached on `points`; later calls must use the same points.
    pub fn new(candidates: Vec<Atom>, points: &Covariates) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Invalid("no candidate atoms".into()));
        }
        for c in &candidates {
            c.eval(points.row(0))?;
        }
        let values = candidates.iter().map(|c| atom_values(c, points)).collect();
        Ok(FiniteOracle { candidates, values })
    }

    pub fn candidates(&self) -> &[Atom] {
        &self.candidates
    }

    /// Index and objective of the best candidate; ties go to `MinusOne`, then to the earliest.
    pub fn best(&self, grad: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (k, v) in self.values.iter().enumerate() {
            let obj = linear_objective(v, grad);
            let better = obj < best.1 - TIE_TOLERANCE
                || (obj <= best.1 + TIE_TOLERANCE
                    && self.candidates[k] == Atom::MinusOne
                    && self.candidates[best.0] != Atom::MinusOne);
            if better {
                best = (k, obj);
            }
        }
        best
    }
}

impl LinearOracle for FiniteOracle {
    fn minimize(&mut self, grad: &[f64], points: &Covariates) -> Result<Atom> {
        check_gradient(grad, points)?;
        if self.values[0].len() != points.len() {
            return Err(Error::Dimension {
                expected: self.values[0].len(),
                got: points.len(),
            });
        }
        Ok(self.candidates[self.best(grad).0].clone())
    }
}

/// One SGD solve with a fresh generator seeded from `cfg.seed`.
pub fn solve_linear_subproblem(grad: &[f64], points: &Covariates, cfg: &SGDConfig) -> Result<Atom> {
    SgdOracle::new(cfg.clone()).minimize(grad, points)
}

#[derive(Clone, Debug)]
pub struct FwOutput {
    pub psi: ScoreFunction,
    /// `ψᴶ` at the problem's support points.
    pub values: Vec<f64>,
    /// Empty unless recording was requested; otherwise `J + 1` records.
    pub trace: CertificateTrace,
}

pub fn frank_wolfe(prob: &LagrangianProblem, cfg: &FWConfig) -> Result<FwOutput> {
    cfg.validate()?;
    let mut oracle = SgdOracle::new(cfg.sgd.clone());
    frank_wolfe_with(prob, cfg.iterations, &mut oracle, cfg.record_certificate)
}

/// Frank–Wolfe with an arbitrary linear oracle.
///
/// When recording, the oracle is queried once more at `ψᴶ` so the trace also
/// holds the final gap.
pub fn frank_wolfe_with(
    prob: &LagrangianProblem,
    iterations: usize,
    oracle: &mut dyn LinearOracle,
    record: bool,
) -> Result<FwOutput> {
    if iterations == 0 {
        return Err(Error::Invalid("Frank-Wolfe needs at least one iteration".into()));
    }
    let points = prob.ctx.points();
    let n = points.len();
    let mut psi = ScoreFunction::minus_one();
    let mut values = vec![-1.0; n];
    let mut trace = CertificateTrace::default();
    for j in 0..=iterations {
        if j == iterations && !record {
            break;
        }
        let grad = gradient_at(prob, &values);
        let s = oracle.minimize(&grad, points)?;
        let s_values = atom_values(&s, points);
        if record {
            let lin_obj = linear_objective(&s_values, &grad);
            trace.records.push(CertificateRecord {
                j,
                gamma: step_size(j),
                criterion: lagrangian_at(prob, &values),
                lin_obj,
                gap: linear_objective(&values, &grad) - lin_obj,
            });
        }
        if j == iterations {
            break;
        }
        let gamma = step_size(j);
        psi = psi.combine(s, gamma)?;
        for (v, sv) in values.iter_mut().zip(&s_values) {
            *v = (1.0 - gamma) * *v + gamma * sv;
        }
    }
    Ok(FwOutput { psi, values, trace })
}

/// `max_s E[∇ℒ(ψ)·(ψ − s)]` over the given candidates.
pub fn duality_gap(prob: &LagrangianProblem, psi: &ScoreFunction, candidates: &[Atom]) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::Invalid("no candidate atoms".into()));
    }
    let values = prob.ctx.score_values(psi)?;
    let grad = gradient_at(prob, &values);
    let base = linear_objective(&values, &grad);
    let mut best = f64::NEG_INFINITY;
    for c in candidates {
        c.eval(prob.ctx.points().row(0))?;
        best = best.max(base - linear_objective(&atom_values(c, prob.ctx.points()), &grad));
    }
    Ok(best)
}
