//! Risk, constraint, value and Lagrangian criteria, their gradient, and the
//! efficient influence curves used for targeting and confidence bounds.
//!
//! Criteria are evaluated on a fixed set of covariate points carrying
//! materialized `Δμ` and `Δν` values, so oracle grids and data folds share a
//! single code path.

use crate::data::{Covariates, Observation};
use crate::nuisance::Nuisance;
use crate::policy::{PolicyEval, ScoreFunction, SmoothPolicy};
use crate::scaling::{sigma_prime_raw, sigma_raw, ScalingParams};
use crate::{Error, Result};

/// Empirical marginal of `X` together with `Δμ` and `Δν` at its support points.
#[derive(Clone, Debug)]
pub struct CriterionContext {
    points: Covariates,
    delta_mu: Vec<f64>,
    delta_nu: Vec<f64>,
    alpha: f64,
}

impl CriterionContext {
    pub fn new(points: Covariates, delta_mu: Vec<f64>, delta_nu: Vec<f64>, alpha: f64) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::EmptyMeasure);
        }
        for v in [&delta_mu, &delta_nu] {
            if v.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: v.len(),
                });
            }
        }
        if delta_mu.iter().any(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(Error::Invalid("delta_mu must lie in [-1, 1]".into()));
        }
        if delta_nu.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
            return Err(Error::Invalid(
                "delta_nu must lie in [0, 1]; monotone adverse effect required".into(),
            ));
        }
        check_alpha(alpha)?;
        Ok(CriterionContext {
            points,
            delta_mu,
            delta_nu,
            alpha,
        })
    }

    /// Materializes `Δμ` and `Δν` evaluators on `points`.
    pub fn from_fns<F, G>(points: Covariates, delta_mu: F, delta_nu: G, alpha: f64) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64,
        G: Fn(&[f64]) -> f64,
    {
        let dm = points.rows().map(&delta_mu).collect();
        let dn = points.rows().map(&delta_nu).collect();
        Self::new(points, dm, dn, alpha)
    }

    pub fn points(&self) -> &Covariates {
        &self.points
    }

    pub fn delta_mu(&self) -> &[f64] {
        &self.delta_mu
    }

    pub fn delta_nu(&self) -> &[f64] {
        &self.delta_nu
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.delta_mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta_mu.is_empty()
    }

    /// `ψ` evaluated at every support point.
    pub fn score_values(&self, psi: &ScoreFunction) -> Result<Vec<f64>> {
        psi.eval_score(self.points.row(0))?;
        Ok(self.points.rows().map(|x| psi.eval_raw(x)).collect())
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=0.5).contains(&alpha) {
        return Err(Error::Invalid(format!("alpha {alpha} outside [0, 1/2]")));
    }
    Ok(())
}

/// `(λ, β)` together with a criterion context.
#[derive(Clone, Debug)]
pub struct LagrangianProblem {
    pub ctx: CriterionContext,
    pub lambda: f64,
    pub beta: f64,
}

impl LagrangianProblem {
    pub fn new(ctx: CriterionContext, lambda: f64, beta: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::Invalid(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        ScalingParams::new(beta)?;
        Ok(LagrangianProblem { ctx, lambda, beta })
    }
}

/// `E[ψ² − 2ψΔμ]`.
pub fn risk(ctx: &CriterionContext, psi: &ScoreFunction) -> Result<f64> {
    Ok(risk_at(ctx, &ctx.score_values(psi)?))
}

pub fn risk_at(ctx: &CriterionContext, psi: &[f64]) -> f64 {
    let s: f64 = psi.iter().zip(&ctx.delta_mu).map(|(p, d)| p * p - 2.0 * p * d).sum();
    s / psi.len() as f64
}

/// `E[π̃Δν] − α`.
pub fn constraint(ctx: &CriterionContext, p: &SmoothPolicy) -> Result<f64> {
    let psi = ctx.score_values(&p.score)?;
    let pi: Vec<f64> = psi.iter().map(|&u| sigma_raw(p.beta, u)).collect();
    Ok(constraint_at(ctx, &pi))
}

pub fn constraint_at(ctx: &CriterionContext, pi: &[f64]) -> f64 {
    let s: f64 = pi.iter().zip(&ctx.delta_nu).map(|(p, d)| p * d).sum();
    s / pi.len() as f64 - ctx.alpha
}

/// `E[π̃·μ(1,X) + (1 − π̃)·μ(0,X)]` over aligned slices.
pub fn value(mu1: &[f64], mu0: &[f64], pi: &[f64]) -> Result<f64> {
    if pi.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    if mu1.len() != pi.len() || mu0.len() != pi.len() {
        return Err(Error::Dimension {
            expected: pi.len(),
            got: mu1.len().min(mu0.len()),
        });
    }
    let s: f64 = pi
        .iter()
        .zip(mu1.iter().zip(mu0))
        .map(|(p, (m1, m0))| p * m1 + (1.0 - p) * m0)
        .sum();
    Ok(s / pi.len() as f64)
}

/// `R(ψ) + λ·S(σ_β ∘ ψ)`.
pub fn lagrangian(prob: &LagrangianProblem, psi: &ScoreFunction) -> Result<f64> {
    Ok(lagrangian_at(prob, &prob.ctx.score_values(psi)?))
}

pub fn lagrangian_at(prob: &LagrangianProblem, psi: &[f64]) -> f64 {
    let ctx = &prob.ctx;
    let n = psi.len() as f64;
    let mut r = 0.0;
    let mut s = 0.0;
    for ((&p, m), v) in psi.iter().zip(&ctx.delta_mu).zip(&ctx.delta_nu) {
        r += p * p - 2.0 * p * m;
        s += sigma_raw(prob.beta, p) * v;
    }
    r / n + prob.lambda * (s / n - ctx.alpha)
}

/// `∇ℒ(ψ) = 2(ψ − Δμ) + λ·σ_β'(ψ)·Δν`, materialized at the support points.
pub fn lagrangian_gradient(prob: &LagrangianProblem, psi: &ScoreFunction) -> Result<Vec<f64>> {
    Ok(gradient_at(prob, &prob.ctx.score_values(psi)?))
}

pub fn gradient_at(prob: &LagrangianProblem, psi: &[f64]) -> Vec<f64> {
    let ctx = &prob.ctx;
    psi.iter()
        .enumerate()
        .map(|(i, &p)| 2.0 * (p - ctx.delta_mu[i]) + prob.lambda * sigma_prime_raw(prob.beta, p) * ctx.delta_nu[i])
        .collect()
}

fn checked_e(nuis: &dyn Nuisance, a: bool, x: &[f64]) -> Result<f64> {
    let e = nuis.e(a, x);
    if !(e > 0.0 && e < 1.0) {
        return Err(Error::Positivity(e));
    }
    Ok(e)
}

/// Efficient influence curve of the value at one observation.
pub fn eic_value(nuis: &dyn Nuisance, p: &dyn PolicyEval, v_hat: f64, o: &Observation) -> Result<f64> {
    let e = checked_e(nuis, o.a, &o.x)?;
    let pi = p.prob(&o.x)?;
    let plug = pi * nuis.mu(true, &o.x) + (1.0 - pi) * nuis.mu(false, &o.x);
    let w = if o.a { pi } else { 1.0 - pi };
    Ok(plug - v_hat + w / e * (o.y - nuis.mu(o.a, &o.x)))
}

/// Efficient influence curve of the constraint at one observation.
pub fn eic_constraint(nuis: &dyn Nuisance, p: &dyn PolicyEval, alpha: f64, s_hat: f64, o: &Observation) -> Result<f64> {
    let e = checked_e(nuis, o.a, &o.x)?;
    let pi = p.prob(&o.x)?;
    let dnu = nuis.nu(true, &o.x) - nuis.nu(false, &o.x);
    let sign = if o.a { 1.0 } else { -1.0 };
    Ok(pi * dnu - alpha - s_hat + sign / e * pi * (o.xi_f64() - nuis.nu(o.a, &o.x)))
}

/// The Lagrangian's bias term `D`, whose empirical mean targeting drives to zero.
pub fn score_d(nuis: &dyn Nuisance, psi: &ScoreFunction, lambda: f64, beta: f64, o: &Observation) -> Result<f64> {
    let e = checked_e(nuis, o.a, &o.x)?;
    let s = psi.eval_score(&o.x)?;
    let pi = sigma_raw(beta, s);
    let sign = if o.a { 1.0 } else { -1.0 };
    Ok(sign / e * (-2.0 * s * (o.y - nuis.mu(o.a, &o.x)) + lambda * pi * (o.xi_f64() - nuis.nu(o.a, &o.x))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Atom;

    /// Constant nuisance for hand-computed examples.
    struct Fixed {
        mu: [f64; 2],
        nu: [f64; 2],
        e1: f64,
    }

    impl Nuisance for Fixed {
        fn mu(&self, a: bool, _: &[f64]) -> f64 {
            self.mu[a as usize]
        }
        fn nu(&self, a: bool, _: &[f64]) -> f64 {
            self.nu[a as usize]
        }
        fn propensity(&self, _: &[f64]) -> f64 {
            self.e1
        }
    }

    fn ctx1(dm: f64, dn: f64, alpha: f64) -> CriterionContext {
        CriterionContext::new(Covariates::new(1, vec![0.5]).unwrap(), vec![dm], vec![dn], alpha).unwrap()
    }

    fn const_score(v: f64) -> ScoreFunction {
        // intercept-only atom with tanh(z/2) = v
        ScoreFunction::single(Atom::Logistic(vec![0.0, 2.0 * v.atanh()]))
    }

    #[test]
    fn risk_examples() {
        let c = ctx1(0.3, 0.0, 0.1);
        assert_eq!(risk_at(&c, &[0.0]), 0.0);
        assert!((risk_at(&c, &[1.0]) - 0.4).abs() < 1e-15);
        let two = CriterionContext::new(
            Covariates::new(1, vec![0.1, 0.2]).unwrap(),
            vec![0.5, -0.5],
            vec![0.0, 0.0],
            0.1,
        )
        .unwrap();
        assert!((risk_at(&two, &[0.5, -0.5]) + 0.25).abs() < 1e-15);
        assert_eq!(
            risk(&c, &ScoreFunction::single(Atom::Logistic(vec![0.0]))).unwrap(),
            0.0
        );
    }

    #[test]
    fn constraint_examples() {
        let c = ctx1(0.0, 0.3, 0.1);
        assert!((constraint(&c, &SmoothPolicy::never_treat()).unwrap() + 0.1).abs() < 1e-15);
        assert!((constraint_at(&c, &[1.0]) - 0.2).abs() < 1e-15);
        let z = ctx1(0.0, 0.0, 0.1);
        assert!((constraint_at(&z, &[0.7]) + 0.1).abs() < 1e-15);
    }

    #[test]
    fn value_examples() {
        let m1 = [0.8, 0.6];
        let m0 = [0.2, 0.1];
        assert!((value(&m1, &m0, &[1.0, 1.0]).unwrap() - 0.7).abs() < 1e-15);
        assert!((value(&m1, &m0, &[0.0, 0.0]).unwrap() - 0.15).abs() < 1e-15);
        assert!((value(&[0.8], &[0.2], &[0.5]).unwrap() - 0.5).abs() < 1e-15);
        assert!(value(&[], &[], &[]).is_err());
    }

    #[test]
    fn lagrangian_examples() {
        let c = ctx1(0.2, 0.4, 0.1);
        let psi = const_score(0.3);
        let prob0 = LagrangianProblem::new(c.clone(), 0.0, 0.5).unwrap();
        assert!((lagrangian(&prob0, &psi).unwrap() - risk(&c, &psi).unwrap()).abs() < 1e-15);
        let prob = LagrangianProblem::new(c, 3.0, 0.25).unwrap();
        let l = lagrangian(&prob, &ScoreFunction::minus_one()).unwrap();
        assert!((l - (1.0 + 2.0 * 0.2 - 3.0 * 0.1)).abs() < 1e-14);
        let prob = LagrangianProblem::new(ctx1(0.0, 0.4, 0.1), 2.0, 0.0).unwrap();
        assert!((lagrangian_at(&prob, &[0.0]) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn gradient_examples() {
        let prob = LagrangianProblem::new(ctx1(0.1, 0.4, 0.1), 0.0, 0.5).unwrap();
        assert!((gradient_at(&prob, &[0.6])[0] - 1.0).abs() < 1e-15);
        assert_eq!(gradient_at(&prob, &[0.1])[0], 0.0);
        let prob = LagrangianProblem::new(ctx1(0.1, 0.4, 0.1), 1.0, 0.0).unwrap();
        assert!(gradient_at(&prob, &[0.0])[0].abs() < 1e-15);
    }

    #[test]
    fn context_validation() {
        let pts = Covariates::new(1, vec![0.5]).unwrap();
        assert!(CriterionContext::new(pts.clone(), vec![0.0], vec![-0.1], 0.1).is_err());
        assert!(CriterionContext::new(pts.clone(), vec![0.0], vec![0.1], 0.6).is_err());
        assert!(CriterionContext::new(pts, vec![0.0, 0.1], vec![0.1], 0.1).is_err());
        assert!(LagrangianProblem::new(ctx1(0.0, 0.0, 0.1), -1.0, 0.0).is_err());
    }

    #[test]
    fn eic_examples() {
        let nuis = Fixed {
            mu: [0.3, 0.6],
            nu: [0.1, 0.3],
            e1: 0.5,
        };
        let o = Observation::new(vec![0.5], true, 0.8, true).unwrap();
        let all = |_: &[f64]| 1.0;
        let none = |_: &[f64]| 0.0;
        // treat-all, A = 1, e = 0.5, Y − μ = 0.2: plug-in 0.6 − v_hat, residual 0.4
        let v = eic_value(&nuis, &all, 0.5, &o).unwrap();
        assert!((v - (0.6 - 0.5 + 0.4)).abs() < 1e-15);
        // never-treat, A = 1: residual weight vanishes
        let v = eic_value(&nuis, &none, 0.3, &o).unwrap();
        assert!(v.abs() < 1e-15);
        assert!((eic_constraint(&nuis, &none, 0.1, 0.05, &o).unwrap() + 0.15).abs() < 1e-15);
        let o0 = Observation::new(vec![0.5], false, 0.3, true).unwrap();
        // A = 0: residual sign −1/e(0,x) = −2; ξ − ν(0) = 0.9
        let s = eic_constraint(&nuis, &all, 0.1, 0.1, &o0).unwrap();
        assert!((s - (0.2 - 0.1 - 0.1 - 2.0 * 0.9)).abs() < 1e-14);
        let bad = Fixed { e1: 1.0, ..nuis };
        assert!(matches!(eic_value(&bad, &all, 0.0, &o), Err(Error::Positivity(_))));
    }

    #[test]
    fn score_d_examples() {
        let nuis = Fixed {
            mu: [0.3, 0.5],
            nu: [0.1, 0.3],
            e1: 0.5,
        };
        let o = Observation::new(vec![0.5], true, 0.6, false).unwrap();
        let psi = const_score(1.0 - 1e-16);
        let d = score_d(&nuis, &psi, 0.0, 0.0, &o).unwrap();
        assert!((d + 0.4).abs() < 1e-12);
        let zero = ScoreFunction::single(Atom::Logistic(vec![0.0]));
        assert_eq!(score_d(&nuis, &zero, 0.0, 0.1, &o).unwrap(), 0.0);
        let exact = Observation::new(vec![0.5], true, 0.5, false).unwrap();
        let fitted = Fixed { nu: [0.1, 0.0], ..nuis };
        assert_eq!(score_d(&fitted, &psi, 2.0, 0.1, &exact).unwrap(), 0.0);
    }
}
