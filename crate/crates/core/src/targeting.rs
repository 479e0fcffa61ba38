//! The alternating procedure: fluctuate `μ` and `ν` so that the Lagrangian is
//! simultaneously targeted at every previously visited minimizer (the
//! landmarks), then re-minimize with Frank–Wolfe, until consecutive minimizers
//! agree on the evaluation fold.
//!
//! For landmarks `ψ⁰ … ψᵏ⁻¹` the fluctuation models are
//!
//! ```text
//! μᵏ(ε)(a,x) = expit(logit μ⁰(a,x) + (2a−1)/e(a,x) · Σ_ℓ ε_ℓ·ψˡ(x))
//! νᵏ(ε)(a,x) = expit(logit ν⁰(a,x) + (2a−1)/e(a,x) · Σ_ℓ ε_ℓ·σ_β(ψˡ(x)))
//! ```
//!
//! with `ε` minimizing the fold's cross-entropy. The propensity is never
//! fluctuated.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::criteria::{lagrangian_at, CriterionContext, LagrangianProblem};
use crate::data::{Dataset, EmpiricalMeasure};
use crate::frankwolfe::{frank_wolfe, FWConfig};
use crate::math::{derive_seed, expit, logit, softplus};
use crate::nuisance::Nuisance;
use crate::policy::ScoreFunction;
use crate::scaling::sigma_raw;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetingConfig {
    /// Stop once `Σ_{n2} (ψᵏ − ψᵏ⁻¹)²` falls to this level.
    pub gamma_tol: f64,
    /// Maximum number of correction steps `K`.
    pub max_iterations: usize,
    pub newton_max_iter: usize,
    /// Target sup-norm of the fluctuation score.
    pub newton_tol: f64,
}

impl Default for TargetingConfig {
    fn default() -> Self {
        TargetingConfig {
            gamma_tol: 0.025,
            max_iterations: 5,
            newton_max_iter: 100,
            newton_tol: 1e-11,
        }
    }
}

/// Scores above this after the Newton loop are a convergence failure.
const SCORE_ACCEPT: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub landmarks: Vec<ScoreFunction>,
    pub lambda: f64,
    pub beta: f64,
}

impl LandmarkSet {
    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }
}

/// Initial nuisances shifted along the landmark directions.
#[derive(Clone)]
pub struct FluctuatedNuisance {
    pub base: Arc<dyn Nuisance>,
    pub eps_mu: Vec<f64>,
    pub eps_nu: Vec<f64>,
    pub landmarks: LandmarkSet,
}

impl std::fmt::Debug for FluctuatedNuisance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FluctuatedNuisance")
            .field("eps_mu", &self.eps_mu)
            .field("eps_nu", &self.eps_nu)
            .field("landmarks", &self.landmarks.len())
            .finish()
    }
}

impl FluctuatedNuisance {
    fn offsets(&self, x: &[f64]) -> (f64, f64) {
        let mut m = 0.0;
        let mut v = 0.0;
        for (l, psi) in self.landmarks.landmarks.iter().enumerate() {
            let s = psi.eval_raw(x);
            m += self.eps_mu[l] * s;
            v += self.eps_nu[l] * sigma_raw(self.landmarks.beta, s);
        }
        (m, v)
    }

    pub fn fluctuated_mu(&self, a: bool, x: &[f64]) -> f64 {
        let w = sign(a) / self.base.e(a, x);
        expit(logit(self.base.mu(a, x)) + w * self.offsets(x).0)
    }

    pub fn fluctuated_nu(&self, a: bool, x: &[f64]) -> f64 {
        let w = sign(a) / self.base.e(a, x);
        expit(logit(self.base.nu(a, x)) + w * self.offsets(x).1)
    }
}

impl Nuisance for FluctuatedNuisance {
    fn mu(&self, a: bool, x: &[f64]) -> f64 {
        self.fluctuated_mu(a, x)
    }

    fn nu(&self, a: bool, x: &[f64]) -> f64 {
        self.fluctuated_nu(a, x)
    }

    fn propensity(&self, x: &[f64]) -> f64 {
        self.base.propensity(x)
    }
}

#[inline]
fn sign(a: bool) -> f64 {
    if a {
        1.0
    } else {
        -1.0
    }
}

/// Logistic loss with fixed offsets, `mean[softplus(o + hᵀε) − y(o + hᵀε)]`.
pub struct OffsetLogistic {
    pub offsets: Vec<f64>,
    /// Row-major `n × k` clever covariates.
    pub covariates: Vec<f64>,
    pub labels: Vec<f64>,
    pub k: usize,
}

impl OffsetLogistic {
    fn eta(&self, i: usize, eps: &[f64]) -> f64 {
        let h = &self.covariates[i * self.k..(i + 1) * self.k];
        self.offsets[i] + h.iter().zip(eps).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn loss(&self, eps: &[f64]) -> f64 {
        let n = self.labels.len();
        (0..n)
            .map(|i| {
                let e = self.eta(i, eps);
                softplus(e) - self.labels[i] * e
            })
            .sum::<f64>()
            / n as f64
    }

    /// `∂/∂ε_ℓ loss = −mean[h_ℓ·(y − expit(η))]`.
    pub fn gradient(&self, eps: &[f64]) -> Vec<f64> {
        let n = self.labels.len();
        let mut g = vec![0.0; self.k];
        for i in 0..n {
            let r = expit(self.eta(i, eps)) - self.labels[i];
            let h = &self.covariates[i * self.k..(i + 1) * self.k];
            for l in 0..self.k {
                g[l] += r * h[l];
            }
        }
        g.iter_mut().for_each(|v| *v /= n as f64);
        g
    }

    fn hessian(&self, eps: &[f64]) -> DMatrix<f64> {
        let n = self.labels.len();
        let k = self.k;
        let mut h = DMatrix::<f64>::zeros(k, k);
        for i in 0..n {
            let p = expit(self.eta(i, eps));
            let w = p * (1.0 - p);
            let c = &self.covariates[i * k..(i + 1) * k];
            for a in 0..k {
                for b in 0..=a {
                    h[(a, b)] += w * c[a] * c[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                h[(b, a)] = h[(a, b)];
            }
        }
        h / n as f64
    }

    /// Damped Newton from `init`. Singular directions (collinear or all-zero
    /// covariates) are regularized by a growing ridge.
    pub fn minimize(&self, init: Vec<f64>, max_iter: usize, tol: f64) -> Result<Vec<f64>> {
        let k = self.k;
        let mut eps = init;
        let mut loss = self.loss(&eps);
        for _ in 0..max_iter {
            let g = self.gradient(&eps);
            let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if gmax <= tol {
                return Ok(eps);
            }
            let h = self.hessian(&eps);
            let scale = (0..k).map(|i| h[(i, i)]).fold(0.0f64, f64::max).max(1e-300);
            let gv = DVector::from_column_slice(&g);
            let mut step = None;
            let mut ridge = 0.0;
            for _ in 0..8 {
                let m = &h + DMatrix::<f64>::identity(k, k) * ridge;
                if let Some(ch) = m.cholesky() {
                    step = Some(ch.solve(&gv));
                    break;
                }
                ridge = if ridge == 0.0 { 1e-12 * scale } else { ridge * 100.0 };
            }
            let step = step.unwrap_or(gv);
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let cand: Vec<f64> = eps.iter().zip(step.iter()).map(|(e, s)| e - t * s).collect();
                let l = self.loss(&cand);
                if l <= loss {
                    moved = cand != eps;
                    eps = cand;
                    loss = l;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        let gmax = self.gradient(&eps).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax <= SCORE_ACCEPT.max(tol) && eps.iter().all(|v| v.is_finite()) {
            Ok(eps)
        } else {
            Err(Error::NoConvergence {
                what: "fluctuation",
                grad_norm: gmax,
            })
        }
    }
}

/// Fits `ε_μ` and `ε_ν` on `fold`; `warm` pads a previous solution with zeros.
pub fn fit_fluctuation(
    base: Arc<dyn Nuisance>,
    landmarks: LandmarkSet,
    data: &Dataset,
    fold: &EmpiricalMeasure,
    warm: Option<(&[f64], &[f64])>,
    cfg: &TargetingConfig,
) -> Result<FluctuatedNuisance> {
    let k = landmarks.len();
    if k == 0 {
        return Err(Error::Invalid("no landmarks to target".into()));
    }
    let n = fold.len();
    let mut mu_problem = OffsetLogistic {
        offsets: Vec::with_capacity(n),
        covariates: Vec::with_capacity(n * k),
        labels: Vec::with_capacity(n),
        k,
    };
    let mut nu_problem = OffsetLogistic {
        offsets: Vec::with_capacity(n),
        covariates: Vec::with_capacity(n * k),
        labels: Vec::with_capacity(n),
        k,
    };
    for &i in fold.indices() {
        let o = data.get(i);
        let e = base.e(o.a, &o.x);
        if !(e > 0.0 && e < 1.0) {
            return Err(Error::Positivity(e));
        }
        let w = sign(o.a) / e;
        mu_problem.offsets.push(logit(base.mu(o.a, &o.x)));
        nu_problem.offsets.push(logit(base.nu(o.a, &o.x)));
        mu_problem.labels.push(o.y);
        nu_problem.labels.push(o.xi_f64());
        for psi in &landmarks.landmarks {
            let s = psi.eval_score(&o.x)?;
            mu_problem.covariates.push(w * s);
            nu_problem.covariates.push(w * sigma_raw(landmarks.beta, s));
        }
    }
    let pad = |prev: Option<&[f64]>| -> Vec<f64> {
        let mut v = prev.map(|p| p.to_vec()).unwrap_or_default();
        v.resize(k, 0.0);
        v
    };
    let (wm, wn) = match warm {
        Some((m, v)) => (Some(m), Some(v)),
        None => (None, None),
    };
    let eps_mu = mu_problem.minimize(pad(wm), cfg.newton_max_iter, cfg.newton_tol)?;
    let eps_nu = nu_problem.minimize(pad(wn), cfg.newton_max_iter, cfg.newton_tol)?;
    Ok(FluctuatedNuisance {
        base,
        eps_mu,
        eps_nu,
        landmarks,
    })
}

/// One row of the alternating procedure's diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetingStep {
    pub k: usize,
    pub eps_mu: Vec<f64>,
    pub eps_nu: Vec<f64>,
    /// `Σ_{n2} (ψᵏ − ψᵏ⁻¹)²`.
    pub stop_stat: f64,
    /// `ℒᵏ(ψᵏ)`.
    pub lagrangian: f64,
}

pub fn write_diagnostics<W: Write>(steps: &[TargetingStep], w: W) -> Result<()> {
    let width = steps.iter().map(|s| s.eps_mu.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(w);
    let mut header = vec!["k".to_string()];
    header.extend((1..=width).map(|l| format!("eps_mu_{l}")));
    header.extend((1..=width).map(|l| format!("eps_nu_{l}")));
    header.extend(["stop_stat".to_string(), "lagrangian".to_string()]);
    w.write_record(&header)?;
    for s in steps {
        let mut rec = vec![s.k.to_string()];
        for v in [&s.eps_mu, &s.eps_nu] {
            rec.extend((0..width).map(|l| v.get(l).map(|e| e.to_string()).unwrap_or_default()));
        }
        rec.push(s.stop_stat.to_string());
        rec.push(s.lagrangian.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct AlternatingOutcome {
    pub psi: ScoreFunction,
    /// Number of correction steps performed (at most `K`).
    pub iterations: usize,
    /// The fluctuated nuisance after each correction step.
    pub corrections: Vec<FluctuatedNuisance>,
    pub steps: Vec<TargetingStep>,
}

impl AlternatingOutcome {
    pub fn final_nuisance(&self) -> Option<&FluctuatedNuisance> {
        self.corrections.last()
    }
}

fn context_from(nuis: &dyn Nuisance, points: &crate::data::Covariates, alpha: f64) -> Result<CriterionContext> {
    CriterionContext::from_fns(points.clone(), |x| nuis.delta_mu(x), |x| nuis.delta_nu(x), alpha)
}

/// Alternates correction and minimization on the evaluation fold `n2`.
///
/// `ψ⁰` minimizes the initial Lagrangian with the seed in `fw`; step `k ≥ 1`
/// reseeds the linear oracle from `(seed, k)`.
#[allow(clippy::too_many_arguments)]
pub fn alternating_procedure(
    init: Arc<dyn Nuisance>,
    lambda: f64,
    beta: f64,
    alpha: f64,
    data: &Dataset,
    n2: &[usize],
    fw: &FWConfig,
    cfg: &TargetingConfig,
) -> Result<AlternatingOutcome> {
    let fold = EmpiricalMeasure::new(n2.to_vec())?;
    let points = data.covariates(n2);
    let prob0 = LagrangianProblem::new(context_from(init.as_ref(), &points, alpha)?, lambda, beta)?;
    let first = frank_wolfe(&prob0, fw).map_err(|e| Error::Iteration {
        k: 0,
        source: Box::new(e),
    })?;
    let mut stat: f64 = first.values.iter().map(|v| (v + 1.0) * (v + 1.0)).sum();
    let mut steps = vec![TargetingStep {
        k: 0,
        eps_mu: vec![],
        eps_nu: vec![],
        stop_stat: stat,
        lagrangian: lagrangian_at(&prob0, &first.values),
    }];
    let mut landmarks = vec![first.psi];
    let mut values = first.values;
    let mut corrections: Vec<FluctuatedNuisance> = Vec::new();
    let mut k = 0;
    while stat > cfg.gamma_tol && k < cfg.max_iterations {
        let step = k + 1;
        let wrap = move |e: Error| Error::Iteration {
            k: step,
            source: Box::new(e),
        };
        let set = LandmarkSet {
            landmarks: landmarks.clone(),
            lambda,
            beta,
        };
        let warm = corrections.last().map(|c| (c.eps_mu.as_slice(), c.eps_nu.as_slice()));
        let fl = fit_fluctuation(init.clone(), set, data, &fold, warm, cfg).map_err(wrap)?;
        k += 1;
        let prob = LagrangianProblem::new(context_from(&fl, &points, alpha).map_err(wrap)?, lambda, beta)?;
        let mut fw_k = fw.clone();
        fw_k.sgd.seed = derive_seed(fw.sgd.seed, k as u64);
        let out = frank_wolfe(&prob, &fw_k).map_err(wrap)?;
        stat = out.values.iter().zip(&values).map(|(a, b)| (a - b) * (a - b)).sum();
        steps.push(TargetingStep {
            k,
            eps_mu: fl.eps_mu.clone(),
            eps_nu: fl.eps_nu.clone(),
            stop_stat: stat,
            lagrangian: lagrangian_at(&prob, &out.values),
        });
        landmarks.push(out.psi);
        values = out.values;
        corrections.push(fl);
    }
    Ok(AlternatingOutcome {
        psi: landmarks.pop().expect("at least one minimizer"),
        iterations: k,
        corrections,
        steps,
    })
}
