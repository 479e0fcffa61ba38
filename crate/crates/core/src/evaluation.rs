//! Targeted estimation of a fixed policy's value and constraint on the held-out
//! fold, with one-sided normal confidence bounds.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, EmpiricalMeasure, Observation};
use crate::math::{expit, logit, mean, softplus, variance};
use crate::nuisance::Nuisance;
use crate::policy::PolicyEval;
use crate::{Error, Result};

/// One-sided 95% normal quantile.
pub const Q95: f64 = 1.644_853_626_951_472_7;

const EPS_BRACKET: f64 = 10.0;
const EPS_LIMIT: f64 = 1e4;
const STATIONARITY: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyAssessment {
    pub s_star: f64,
    pub v_star: f64,
    pub var_s: f64,
    pub var_v: f64,
    pub s_upper: f64,
    pub v_lower: f64,
    pub eps_mu_star: f64,
    pub eps_nu_star: f64,
}

/// `Φ⁻¹(p)`: Acklam's rational approximation refined by one Halley step.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(p));
    }
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383_577_518_672_69e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996,
        3.754408661907416,
    ];
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let x = if p < 0.02425 {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - 0.02425 {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    let e = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    Ok(x - u / (1.0 + 0.5 * x * u))
}

/// Minimizes `mean[softplus(o + hε) − y(o + hε)]`, searching `ε ∈ [−10, 10]`
/// first and widening the bracket when the minimizer lies outside it.
///
/// The derivative is nondecreasing in `ε`, so Newton steps are kept inside a
/// shrinking sign-change bracket and replaced by bisection when they leave it.
pub fn fit_scalar_fluctuation(offsets: &[f64], h: &[f64], y: &[f64]) -> Result<f64> {
    let n = y.len() as f64;
    let deriv = |eps: f64| -> (f64, f64) {
        let mut g = 0.0;
        let mut c = 0.0;
        for i in 0..y.len() {
            let p = expit(offsets[i] + h[i] * eps);
            g += h[i] * (p - y[i]);
            c += h[i] * h[i] * p * (1.0 - p);
        }
        (g / n, c / n)
    };
    let (g0, c0) = deriv(0.0);
    if g0 == 0.0 || c0 == 0.0 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (-EPS_BRACKET, EPS_BRACKET);
    let (mut glo, mut ghi) = (deriv(lo).0, deriv(hi).0);
    // Widen geometrically while the score keeps one sign on the bracket.
    while (glo > 0.0 || ghi < 0.0) && hi < EPS_LIMIT {
        (lo, hi) = (4.0 * lo, 4.0 * hi);
        (glo, ghi) = (deriv(lo).0, deriv(hi).0);
    }
    // Still no sign change: the minimizer lies at infinity. The endpoint is
    // accepted when its score already meets the stationarity tolerance.
    if glo > 0.0 || ghi < 0.0 {
        let (edge, g) = if glo > 0.0 { (lo, glo) } else { (hi, ghi) };
        if g.abs() <= STATIONARITY {
            return Ok(edge);
        }
        return Err(Error::NoConvergence {
            what: "scalar fluctuation",
            grad_norm: g.abs(),
        });
    }
    let (mut eps, mut g, mut c) = (0.0, g0, c0);
    for _ in 0..200 {
        if g.abs() <= 1e-14 {
            break;
        }
        if g > 0.0 {
            hi = eps;
        } else {
            lo = eps;
        }
        let newton = eps - g / c;
        eps = if c > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-15 {
            break;
        }
        (g, c) = deriv(eps);
    }
    let g = deriv(eps).0;
    if g.abs() > STATIONARITY {
        return Err(Error::NoConvergence {
            what: "scalar fluctuation",
            grad_norm: g.abs(),
        });
    }
    Ok(eps)
}

fn loss(offsets: &[f64], h: &[f64], y: &[f64], eps: f64) -> f64 {
    let t: f64 = (0..y.len())
        .map(|i| {
            let e = offsets[i] + h[i] * eps;
            softplus(e) - y[i] * e
        })
        .sum();
    t / y.len() as f64
}

struct Row<'a> {
    o: &'a Observation,
    pi: f64,
    e: f64,
}

/// Targeted estimates and bounds for `policy` on `fold3`.
pub fn assess_policy(
    policy: &dyn PolicyEval,
    nuis3: &dyn Nuisance,
    data: &Dataset,
    fold3: &EmpiricalMeasure,
    alpha: f64,
) -> Result<PolicyAssessment> {
    let mut rows = Vec::with_capacity(fold3.len());
    for &i in fold3.indices() {
        let o = data.get(i);
        let e = nuis3.e(o.a, &o.x);
        if !(e > 0.0 && e < 1.0) {
            return Err(Error::Positivity(e));
        }
        let pi = policy.prob(&o.x)?;
        rows.push(Row { o, pi, e });
    }
    let h_mu = |pi: f64, a: bool, e: f64| if a { pi / e } else { (1.0 - pi) / e };
    let h_nu = |pi: f64, a: bool, e: f64| if a { pi / e } else { -pi / e };

    let off_mu: Vec<f64> = rows.iter().map(|r| logit(nuis3.mu(r.o.a, &r.o.x))).collect();
    let off_nu: Vec<f64> = rows.iter().map(|r| logit(nuis3.nu(r.o.a, &r.o.x))).collect();
    let hm: Vec<f64> = rows.iter().map(|r| h_mu(r.pi, r.o.a, r.e)).collect();
    let hn: Vec<f64> = rows.iter().map(|r| h_nu(r.pi, r.o.a, r.e)).collect();
    let ym: Vec<f64> = rows.iter().map(|r| r.o.y).collect();
    let yn: Vec<f64> = rows.iter().map(|r| r.o.xi_f64()).collect();
    let eps_mu = fit_scalar_fluctuation(&off_mu, &hm, &ym)?;
    let eps_nu = fit_scalar_fluctuation(&off_nu, &hn, &yn)?;
    debug_assert!(loss(&off_mu, &hm, &ym, eps_mu) <= loss(&off_mu, &hm, &ym, 0.0) + 1e-12);

    let mut phi_v = Vec::with_capacity(rows.len());
    let mut phi_s = Vec::with_capacity(rows.len());
    let mut plug_v = Vec::with_capacity(rows.len());
    let mut plug_s = Vec::with_capacity(rows.len());
    for r in &rows {
        let x = &r.o.x;
        let e1 = nuis3.e(true, x);
        let e0 = nuis3.e(false, x);
        let mu1 = expit(logit(nuis3.mu(true, x)) + eps_mu * h_mu(r.pi, true, e1));
        let mu0 = expit(logit(nuis3.mu(false, x)) + eps_mu * h_mu(r.pi, false, e0));
        let nu1 = expit(logit(nuis3.nu(true, x)) + eps_nu * h_nu(r.pi, true, e1));
        let nu0 = expit(logit(nuis3.nu(false, x)) + eps_nu * h_nu(r.pi, false, e0));
        let (mu_a, nu_a) = if r.o.a { (mu1, nu1) } else { (mu0, nu0) };
        let pv = r.pi * mu1 + (1.0 - r.pi) * mu0;
        let ps = r.pi * (nu1 - nu0);
        plug_v.push(pv);
        plug_s.push(ps);
        phi_v.push(pv + h_mu(r.pi, r.o.a, r.e) * (r.o.y - mu_a));
        phi_s.push(ps + h_nu(r.pi, r.o.a, r.e) * (r.o.xi_f64() - nu_a));
    }
    let v_star = mean(&plug_v);
    let s_star = mean(&plug_s) - alpha;
    phi_v.iter_mut().for_each(|v| *v -= v_star);
    phi_s.iter_mut().for_each(|v| *v -= s_star + alpha);
    let var_v = variance(&phi_v);
    let var_s = variance(&phi_s);
    let n3 = rows.len() as f64;
    Ok(PolicyAssessment {
        s_star,
        v_star,
        var_s,
        var_v,
        s_upper: s_star + Q95 * (var_s / n3).sqrt(),
        v_lower: v_star - Q95 * (var_v / n3).sqrt(),
        eps_mu_star: eps_mu,
        eps_nu_star: eps_nu,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssessmentRow {
    pub lambda: f64,
    pub beta: f64,
    #[serde(flatten)]
    pub assessment: PolicyAssessment,
}

pub fn write_assessments<W: Write>(rows: &[AssessmentRow], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record([
        "lambda", "beta", "s_star", "s_upper", "v_star", "v_lower", "var_s", "var_v",
    ])?;
    for r in rows {
        let a = &r.assessment;
        w.write_record(
            [
                r.lambda, r.beta, a.s_star, a.s_upper, a.v_star, a.v_lower, a.var_s, a.var_v,
            ]
            .map(|v| v.to_string()),
        )?;
    }
    w.flush()?;
    Ok(())
}
