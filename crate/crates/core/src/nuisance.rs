//! Nuisance models `μ(a,x)`, `ν(a,x)`, `e(a,x)`: a quasi-binomial logistic GLM,
//! oracle injection from a simulation scenario, and the positivity clamp.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Covariates, Dataset};
use crate::math::{expit, softplus};
use crate::synthdata::{MinMaxTransform, Scenario};
use crate::{Error, Result};

pub const CLAMP_LO: f64 = 0.01;
pub const CLAMP_HI: f64 = 0.99;

/// Evaluators for the outcome regression `μ`, adverse-event regression `ν`
/// and propensity score. Implementations return values inside `(0, 1)`.
pub trait Nuisance: Send + Sync {
    fn mu(&self, a: bool, x: &[f64]) -> f64;
    fn nu(&self, a: bool, x: &[f64]) -> f64;
    /// `e(1, x)`.
    fn propensity(&self, x: &[f64]) -> f64;

    fn e(&self, a: bool, x: &[f64]) -> f64 {
        let p = self.propensity(x);
        if a {
            p
        } else {
            1.0 - p
        }
    }

    fn delta_mu(&self, x: &[f64]) -> f64 {
        self.mu(true, x) - self.mu(false, x)
    }

    /// `ν(1,x) − ν(0,x)`, floored at zero to respect the monotone adverse effect.
    fn delta_nu(&self, x: &[f64]) -> f64 {
        (self.nu(true, x) - self.nu(false, x)).max(0.0)
    }
}

pub fn clamp01(p: f64) -> Result<f64> {
    clamp_to(p, CLAMP_LO, CLAMP_HI)
}

pub fn clamp_to(p: f64, lo: f64, hi: f64) -> Result<f64> {
    if !p.is_finite() {
        return Err(Error::NonFinite("probability"));
    }
    Ok(p.clamp(lo, hi))
}

/// Clamp bounds applied to every nuisance output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClampBounds {
    pub lo: f64,
    pub hi: f64,
}

impl Default for ClampBounds {
    fn default() -> Self {
        ClampBounds {
            lo: CLAMP_LO,
            hi: CLAMP_HI,
        }
    }
}

impl ClampBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo > 0.0 && self.lo < self.hi && self.hi < 1.0) {
            return Err(Error::Invalid(format!(
                "clamp bounds must satisfy 0 < lo < hi < 1, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, p: f64) -> f64 {
        p.clamp(self.lo, self.hi)
    }
}

/// Fitted logistic regression `p = expit(intercept + coefficientsᵀx)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub converged: bool,
    /// Training loss after each accepted iteration, starting from the zero model.
    #[serde(skip)]
    pub loss_trace: Vec<f64>,
}

impl GlmFit {
    #[inline]
    pub fn linear(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    #[inline]
    pub fn predict(&self, x: &[f64]) -> f64 {
        expit(self.linear(x))
    }
}

/// Mean cross-entropy `−[y·log p + (1−y)·log(1−p)]`, written as `softplus(η) − yη`.
fn cross_entropy(features: &Covariates, labels: &[f64], w: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, &y) in features.rows().zip(labels) {
        let eta = w[0] + w[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
        s += softplus(eta) - y * eta;
    }
    s / labels.len() as f64
}

/// Quasi-binomial logistic regression by damped Newton with backtracking.
///
/// Each accepted step does not increase the training loss. When the Hessian
/// cannot be factored the step falls back to the plain gradient.
pub fn fit_logistic(features: &Covariates, labels: &[f64], max_iter: usize, tol: f64) -> Result<GlmFit> {
    let n = features.len();
    let d = features.d();
    if labels.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: labels.len(),
        });
    }
    if n < d + 2 {
        return Err(Error::Invalid(format!("{n} rows cannot identify {} parameters", d + 1)));
    }
    if labels.iter().any(|y| !y.is_finite()) {
        return Err(Error::NonFinite("labels"));
    }
    if labels.iter().any(|y| !(0.0..=1.0).contains(y)) {
        return Err(Error::Invalid("labels must lie in [0, 1]".into()));
    }
    let p = d + 1;
    let mut w = vec![0.0; p];
    let mut loss = cross_entropy(features, labels, &w);
    let mut trace = vec![loss];
    let mut converged = false;
    for _ in 0..max_iter {
        let mut g = DVector::<f64>::zeros(p);
        let mut h = DMatrix::<f64>::zeros(p, p);
        let mut xt = vec![1.0; p];
        for (x, &y) in features.rows().zip(labels) {
            xt[1..].copy_from_slice(x);
            let eta = crate::math::dot(&w, &xt);
            let mu = expit(eta);
            let r = mu - y;
            let v = mu * (1.0 - mu);
            for j in 0..p {
                g[j] += r * xt[j];
                let vx = v * xt[j];
                for k in 0..=j {
                    h[(j, k)] += vx * xt[k];
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                h[(k, j)] = h[(j, k)];
            }
        }
        g /= n as f64;
        h /= n as f64;
        if g.amax() < tol {
            converged = true;
            break;
        }
        let step = match h.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => g.clone(),
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = w.iter().zip(step.iter()).map(|(wi, si)| wi - t * si).collect();
            let l = cross_entropy(features, labels, &cand);
            if l <= loss {
                w = cand;
                loss = l;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        trace.push(loss);
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logistic coefficients"));
    }
    Ok(GlmFit {
        intercept: w[0],
        coefficients: w[1..].to_vec(),
        converged,
        loss_trace: trace,
    })
}

pub const GLM_MAX_ITER: usize = 100;
pub const GLM_TOL: f64 = 1e-8;

/// Three logistic fits: `μ` and `ν` on `(x, a, a·x)`, the propensity on `x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlmNuisance {
    pub mu: GlmFit,
    pub nu: GlmFit,
    pub e: GlmFit,
    pub clamp: ClampBounds,
}

fn treatment_features(a: bool, x: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend_from_slice(x);
    let av = if a { 1.0 } else { 0.0 };
    out.push(av);
    out.extend(x.iter().map(|v| av * v));
}

impl GlmNuisance {
    pub fn fit(data: &Dataset, fold: &[usize], clamp: ClampBounds) -> Result<Self> {
        clamp.validate()?;
        if fold.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        let d = data.d();
        let mut feat = Vec::with_capacity(fold.len() * (2 * d + 1));
        let mut row = Vec::with_capacity(2 * d + 1);
        for &i in fold {
            let o = data.get(i);
            treatment_features(o.a, &o.x, &mut row);
            feat.extend_from_slice(&row);
        }
        let feat = Covariates::new(2 * d + 1, feat)?;
        let ys: Vec<f64> = fold.iter().map(|&i| data.get(i).y).collect();
        let xis: Vec<f64> = fold.iter().map(|&i| data.get(i).xi_f64()).collect();
        let arms: Vec<f64> = fold.iter().map(|&i| data.get(i).a_f64()).collect();
        let mu = fit_logistic(&feat, &ys, GLM_MAX_ITER, GLM_TOL)?;
        let nu = fit_logistic(&feat, &xis, GLM_MAX_ITER, GLM_TOL)?;
        let e = fit_logistic(&data.covariates(fold), &arms, GLM_MAX_ITER, GLM_TOL)?;
        Ok(GlmNuisance { mu, nu, e, clamp })
    }

    fn arm(&self, fit: &GlmFit, a: bool, x: &[f64]) -> f64 {
        let d = x.len();
        let av = if a { 1.0 } else { 0.0 };
        let c = &fit.coefficients;
        let mut eta = fit.intercept + c[d] * av;
        for j in 0..d {
            eta += (c[j] + av * c[d + 1 + j]) * x[j];
        }
        self.clamp.apply(expit(eta))
    }
}

impl Nuisance for GlmNuisance {
    fn mu(&self, a: bool, x: &[f64]) -> f64 {
        self.arm(&self.mu, a, x)
    }

    fn nu(&self, a: bool, x: &[f64]) -> f64 {
        self.arm(&self.nu, a, x)
    }

    fn propensity(&self, x: &[f64]) -> f64 {
        self.clamp.apply(self.e.predict(x))
    }
}

/// The scenario's true conditional means, clamped like any fitted model.
///
/// With a transform, inputs are preprocessed covariates and `μ` is reported
/// on the preprocessed outcome scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleNuisance {
    pub scenario: Scenario,
    pub transform: Option<MinMaxTransform>,
    pub clamp: ClampBounds,
}

impl OracleNuisance {
    pub fn new(scenario: Scenario) -> Self {
        OracleNuisance {
            scenario,
            transform: None,
            clamp: ClampBounds::default(),
        }
    }

    fn with_raw<T>(&self, x: &[f64], f: impl FnOnce(&[f64]) -> T) -> T {
        match &self.transform {
            None => f(x),
            Some(t) => f(&t.inverse_x(x)),
        }
    }
}

impl Nuisance for OracleNuisance {
    fn mu(&self, a: bool, x: &[f64]) -> f64 {
        let raw = self.with_raw(x, |r| self.scenario.mu0(a, r));
        let m = match &self.transform {
            None => raw,
            Some(t) => t.scale_y(raw),
        };
        self.clamp.apply(m)
    }

    fn nu(&self, a: bool, x: &[f64]) -> f64 {
        self.clamp.apply(self.with_raw(x, |r| self.scenario.nu0(a, r)))
    }

    fn propensity(&self, x: &[f64]) -> f64 {
        self.clamp.apply(self.with_raw(x, |r| self.scenario.propensity(r)))
    }
}

/// How nuisances are obtained for a fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NuisanceSpec {
    Glm,
    Oracle {
        scenario: Scenario,
        #[serde(default)]
        transform: Option<MinMaxTransform>,
    },
}

/// A fitted or injected nuisance model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NuisanceModel {
    Glm(GlmNuisance),
    Oracle(OracleNuisance),
}

impl Nuisance for NuisanceModel {
    fn mu(&self, a: bool, x: &[f64]) -> f64 {
        match self {
            NuisanceModel::Glm(m) => m.mu(a, x),
            NuisanceModel::Oracle(m) => m.mu(a, x),
        }
    }

    fn nu(&self, a: bool, x: &[f64]) -> f64 {
        match self {
            NuisanceModel::Glm(m) => m.nu(a, x),
            NuisanceModel::Oracle(m) => m.nu(a, x),
        }
    }

    fn propensity(&self, x: &[f64]) -> f64 {
        match self {
            NuisanceModel::Glm(m) => m.propensity(x),
            NuisanceModel::Oracle(m) => m.propensity(x),
        }
    }
}

pub fn estimate_nuisances(data: &Dataset, fold: &[usize], spec: &NuisanceSpec) -> Result<NuisanceModel> {
    estimate_nuisances_with(data, fold, spec, ClampBounds::default())
}

pub fn estimate_nuisances_with(
    data: &Dataset,
    fold: &[usize],
    spec: &NuisanceSpec,
    clamp: ClampBounds,
) -> Result<NuisanceModel> {
    clamp.validate()?;
    if fold.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    Ok(match spec {
        NuisanceSpec::Glm => NuisanceModel::Glm(GlmNuisance::fit(data, fold, clamp)?),
        NuisanceSpec::Oracle { scenario, transform } => NuisanceModel::Oracle(OracleNuisance {
            scenario: scenario.clone(),
            transform: transform.clone(),
            clamp,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate, Scenario};

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp01(0.999).unwrap(), 0.99);
        assert_eq!(clamp01(0.5).unwrap(), 0.5);
        assert_eq!(clamp01(-0.2).unwrap(), 0.01);
        assert!(clamp01(f64::NAN).is_err());
        assert!(ClampBounds { lo: 0.5, hi: 0.4 }.validate().is_err());
    }

    fn design(xs: &[f64]) -> Covariates {
        Covariates::new(1, xs.to_vec()).unwrap()
    }

    #[test]
    fn constant_half_labels_give_zero_model() {
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let fit = fit_logistic(&design(&x), &[0.5; 40], 50, 1e-10).unwrap();
        assert!(fit.intercept.abs() < 1e-8);
        assert!(fit.coefficients[0].abs() < 1e-8);
        assert!(fit.converged);
    }

    #[test]
    fn separable_toy_fits_labels() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
        let y: Vec<f64> = x.iter().map(|&v| if v > 0.5 { 1.0 } else { 0.0 }).collect();
        let fit = fit_logistic(&design(&x), &y, 100, 1e-10).unwrap();
        let constant = cross_entropy(&design(&x), &y, &[crate::math::logit(0.5), 0.0]);
        assert!(*fit.loss_trace.last().unwrap() < constant);
        for (&xi, &yi) in x.iter().zip(&y) {
            let p = clamp01(fit.predict(&[xi])).unwrap();
            assert!((p - yi).abs() <= 0.01 + 1e-12, "x={xi} p={p}");
        }
    }

    #[test]
    fn all_ones_clamp_to_upper_bound() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let fit = fit_logistic(&design(&x), &[1.0; 10], 100, 1e-10).unwrap();
        assert_eq!(clamp01(fit.predict(&[0.3])).unwrap(), 0.99);
    }

    #[test]
    fn loss_never_increases() {
        let x: Vec<f64> = (0..60).map(|i| ((i * 7) % 13) as f64 / 13.0).collect();
        let y: Vec<f64> = (0..60).map(|i| ((i * 5) % 11) as f64 / 10.0).collect();
        let fit = fit_logistic(&design(&x), &y, 100, 1e-12).unwrap();
        for w in fit.loss_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn fit_input_errors() {
        assert!(fit_logistic(&design(&[0.1, 0.2]), &[0.0, 1.0], 10, 1e-8).is_err());
        assert!(fit_logistic(&design(&[0.1, 0.2, 0.3]), &[0.0, f64::NAN, 1.0], 10, 1e-8).is_err());
    }

    #[test]
    fn oracle_linear_matches_formulas() {
        let sc = Scenario::linear();
        let m = estimate_nuisances(
            &generate(&sc, 10, 1).unwrap().0,
            &[0, 1],
            &NuisanceSpec::Oracle {
                scenario: sc,
                transform: None,
            },
        )
        .unwrap();
        let mut x = vec![0.3; 10];
        x[1] = 0.8;
        assert!((m.propensity(&x) - expit(4.0 * (0.8 - 0.5))).abs() < 1e-15);
        assert_eq!(m.nu(false, &x), 0.25);
    }

    #[test]
    fn glm_outputs_are_clamped() {
        let (data, _) = generate(&Scenario::linear(), 200, 3).unwrap();
        let idx: Vec<usize> = (0..200).collect();
        let m = estimate_nuisances(&data, &idx, &NuisanceSpec::Glm).unwrap();
        for o in data.observations() {
            for a in [false, true] {
                for v in [m.mu(a, &o.x), m.nu(a, &o.x), m.e(a, &o.x)] {
                    assert!((0.01..=0.99).contains(&v));
                }
            }
        }
        let json = serde_json::to_string(&m).unwrap();
        let back: NuisanceModel = serde_json::from_str(&json).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
    }
}
