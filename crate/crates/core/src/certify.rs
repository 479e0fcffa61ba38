//! Audits the Frank–Wolfe convergence bound on a small one-dimensional problem
//! whose linear subproblem can be solved exactly by enumeration.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::criteria::{gradient_at, lagrangian_at, CriterionContext, LagrangianProblem};
use crate::data::Covariates;
use crate::frankwolfe::{frank_wolfe_with, step_size, FiniteOracle, LinearOracle, SGDConfig, SgdOracle};
use crate::policy::Atom;
use crate::scaling::curvature_constant;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ToyOracle {
    /// Enumerate the candidate grid.
    Exact,
    /// Use the SGD oracle; the bound is then reported but not enforced.
    Sgd(SGDConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySpec {
    pub n_points: usize,
    pub lambda: f64,
    pub beta: f64,
    pub iterations: usize,
    /// `Δμ(x) = clamp(slope·(x − center), −1, 1)` on `x = i/(n−1)`.
    pub dmu_slope: f64,
    pub dmu_center: f64,
    /// `Δν(x) = dnu_level·x`.
    pub dnu_level: f64,
    /// Slopes and intercepts range over `[−w, w]` on a square grid.
    pub grid_half_width: f64,
    pub grid_steps: usize,
    /// Line-search Frank–Wolfe iterations used for the reference minimizer.
    pub reference_iterations: usize,
    pub oracle: ToyOracle,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            n_points: 50,
            lambda: 2.0,
            beta: 0.25,
            iterations: 40,
            dmu_slope: 1.6,
            dmu_center: 0.5,
            dnu_level: 0.6,
            grid_half_width: 20.0,
            grid_steps: 41,
            reference_iterations: 4000,
            oracle: ToyOracle::Exact,
        }
    }
}

impl ToySpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_points < 2 || self.iterations == 0 || self.grid_steps < 2 {
            return Err(Error::Invalid(
                "toy needs >= 2 points, >= 1 iteration and >= 2 grid steps".into(),
            ));
        }
        if !(self.dnu_level >= 0.0 && self.dnu_level <= 1.0) {
            return Err(Error::Invalid(format!(
                "dnu_level must lie in [0, 1], got {}",
                self.dnu_level
            )));
        }
        Ok(())
    }

    pub fn points(&self) -> Covariates {
        let m = (self.n_points - 1) as f64;
        Covariates::new(1, (0..self.n_points).map(|i| i as f64 / m).collect()).expect("one column")
    }

    pub fn problem(&self) -> Result<LagrangianProblem> {
        self.validate()?;
        let ctx = CriterionContext::from_fns(
            self.points(),
            |x| (self.dmu_slope * (x[0] - self.dmu_center)).clamp(-1.0, 1.0),
            |x| self.dnu_level * x[0],
            0.0,
        )?;
        LagrangianProblem::new(ctx, self.lambda, self.beta)
    }

    /// `θ = (slope, intercept)` over the grid, plus the constant −1.
    pub fn candidates(&self) -> Vec<Atom> {
        let w = self.grid_half_width;
        let step = 2.0 * w / (self.grid_steps - 1) as f64;
        let mut out = Vec::with_capacity(self.grid_steps * self.grid_steps + 1);
        for a in 0..self.grid_steps {
            for b in 0..self.grid_steps {
                out.push(Atom::Logistic(vec![-w + a as f64 * step, -w + b as f64 * step]));
            }
        }
        out.push(Atom::MinusOne);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifyRecord {
    pub j: usize,
    pub gamma: f64,
    pub criterion: f64,
    pub lin_obj: f64,
    pub gap: f64,
    /// `ℒ(ψʲ) − ℒ♭`, with `ℒ♭` a certified lower bound on the hull minimum.
    pub excess: f64,
    /// `4C(1 + δ/2)/(j + 2)`.
    pub bound: f64,
    pub bound_ok: bool,
    /// Descent inequality for the step `j → j+1`; absent on the last row.
    pub step_ok: Option<bool>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertifyReport {
    pub spec: ToySpec,
    pub curvature: f64,
    /// Largest measured oracle inexactness.
    pub delta: f64,
    /// Best criterion found by the reference solver.
    pub reference_value: f64,
    /// Its value minus its final duality gap.
    pub reference_lower: f64,
    pub records: Vec<CertifyRecord>,
}

impl CertifyReport {
    pub fn all_ok(&self) -> bool {
        self.records.iter().all(|r| r.bound_ok && r.step_ok.unwrap_or(true))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record([
            "j",
            "gamma",
            "criterion",
            "lin_obj",
            "gap",
            "excess",
            "bound",
            "bound_ok",
            "step_ok",
        ])?;
        for r in &self.records {
            w.write_record([
                r.j.to_string(),
                r.gamma.to_string(),
                r.criterion.to_string(),
                r.lin_obj.to_string(),
                r.gap.to_string(),
                r.excess.to_string(),
                r.bound.to_string(),
                r.bound_ok.to_string(),
                r.step_ok.map(|b| b.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the wrapped oracle while recording, per call, the exact minimum over the grid.
struct Audited<'a> {
    inner: Box<dyn LinearOracle + 'a>,
    exact: &'a FiniteOracle,
    minima: Vec<f64>,
}

impl LinearOracle for Audited<'_> {
    fn minimize(&mut self, grad: &[f64], points: &Covariates) -> Result<Atom> {
        self.minima.push(self.exact.best(grad).1);
        self.inner.minimize(grad, points)
    }
}

fn mean_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64
}

/// Line-search Frank–Wolfe over the candidate hull. Returns the best value
/// seen and the best certified lower bound `ℒ(ψ) − g(ψ)`.
pub fn reference_minimum(prob: &LagrangianProblem, cand_values: &[Vec<f64>], iterations: usize) -> (f64, f64) {
    let n = prob.ctx.len();
    let mut psi = vec![-1.0; n];
    let mut best = lagrangian_at(prob, &psi);
    let mut lower = f64::NEG_INFINITY;
    for _ in 0..iterations {
        let grad = gradient_at(prob, &psi);
        let (k, lin) = cand_values
            .iter()
            .enumerate()
            .map(|(k, v)| (k, mean_dot(v, &grad)))
            .fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b });
        let gap = mean_dot(&psi, &grad) - lin;
        let value = lagrangian_at(prob, &psi);
        best = best.min(value);
        lower = lower.max(value - gap);
        if gap <= 1e-14 {
            break;
        }
        // the criterion is convex along the segment; golden-section search on [0, 1]
        let s = &cand_values[k];
        let along = |g: f64| {
            let v: Vec<f64> = psi.iter().zip(s).map(|(p, q)| (1.0 - g) * p + g * q).collect();
            lagrangian_at(prob, &v)
        };
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (0.0, 1.0);
        for _ in 0..60 {
            let c = b - phi * (b - a);
            let d = a + phi * (b - a);
            if along(c) <= along(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let g = 0.5 * (a + b);
        psi.iter_mut().zip(s).for_each(|(p, q)| *p = (1.0 - g) * *p + g * q);
    }
    best = best.min(lagrangian_at(prob, &psi));
    (best, lower.min(best))
}

pub fn certify(spec: &ToySpec) -> Result<CertifyReport> {
    let prob = spec.problem()?;
    let points = prob.ctx.points().clone();
    let candidates = spec.candidates();
    let exact = FiniteOracle::new(candidates.clone(), &points)?;
    let cand_values: Vec<Vec<f64>> = candidates
        .iter()
        .map(|c| points.rows().map(|x| c.eval_raw(x)).collect())
        .collect();
    let inner: Box<dyn LinearOracle> = match &spec.oracle {
        ToyOracle::Exact => Box::new(FiniteOracle::new(candidates, &points)?),
        ToyOracle::Sgd(cfg) => Box::new(SgdOracle::new(cfg.clone())),
    };
    let mut audited = Audited {
        inner,
        exact: &exact,
        minima: Vec::new(),
    };
    let out = frank_wolfe_with(&prob, spec.iterations, &mut audited, true)?;
    let minima = audited.minima;
    let c = curvature_constant(spec.lambda, spec.beta);
    let delta = out
        .trace
        .records
        .iter()
        .zip(&minima)
        .map(|(r, m)| (2.0 * (r.lin_obj - m) / (r.gamma * c)).max(0.0))
        .fold(0.0f64, f64::max);
    let (reference_value, reference_lower) = reference_minimum(&prob, &cand_values, spec.reference_iterations);
    let slack = 1.0 + delta / 2.0;
    let recs = &out.trace.records;
    let records = recs
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let excess = r.criterion - reference_lower;
            let bound = 4.0 * c * slack / (r.j as f64 + 2.0);
            let step_ok = recs.get(i + 1).map(|next| {
                let gamma = step_size(r.j);
                next.criterion - r.criterion <= -gamma * r.gap + c * slack * gamma * gamma + 1e-12
            });
            CertifyRecord {
                j: r.j,
                gamma: r.gamma,
                criterion: r.criterion,
                lin_obj: r.lin_obj,
                gap: r.gap,
                excess,
                bound,
                bound_ok: excess <= bound,
                step_ok,
            }
        })
        .collect();
    Ok(CertifyReport {
        spec: spec.clone(),
        curvature: c,
        delta,
        reference_value,
        reference_lower,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(lambda: f64) -> ToySpec {
        ToySpec {
            lambda,
            grid_steps: 21,
            reference_iterations: 1500,
            ..ToySpec::default()
        }
    }

    #[test]
    fn exact_oracle_satisfies_bounds() {
        for lambda in [0.0, 2.0] {
            let rep = certify(&small(lambda)).unwrap();
            assert_eq!(rep.records.len(), 41);
            assert_eq!(rep.delta, 0.0);
            assert!(rep.all_ok());
            assert!(rep.records.iter().all(|r| r.gap >= -1e-15));
            assert!(rep.reference_lower <= rep.reference_value);
        }
    }

    #[test]
    fn reference_beats_plain_frank_wolfe() {
        let rep = certify(&small(1.0)).unwrap();
        let last = rep.records.last().unwrap();
        assert!(rep.reference_value <= last.criterion + 1e-12);
        assert!(last.criterion - last.gap <= rep.reference_value + 1e-12);
    }

    #[test]
    fn csv_layout() {
        let rep = certify(&ToySpec {
            iterations: 2,
            grid_steps: 5,
            reference_iterations: 10,
            ..ToySpec::default()
        })
        .unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "j,gamma,criterion,lin_obj,gap,excess,bound,bound_ok,step_ok");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].ends_with(','));
    }

    #[test]
    fn rejects_bad_spec() {
        assert!(certify(&ToySpec {
            n_points: 1,
            ..ToySpec::default()
        })
        .is_err());
        assert!(certify(&ToySpec {
            dnu_level: 2.0,
            ..ToySpec::default()
        })
        .is_err());
    }
}
