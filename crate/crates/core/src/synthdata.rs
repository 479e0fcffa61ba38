//! Simulation scenarios with counterfactuals, the Monte Carlo oracle for true
//! policy value and constraint, and min-max preprocessing for the realistic
//! scenario.
//!
//! Controlled scenarios draw `X ~ U[0,1]^10` and outcomes
//! `Y(a) = 0.95·expit(f(a,X)) + 0.05·expit(ε_a)` (or the variant with a
//! covariate-dependent baseline), with `ε_a` standard normal and independent
//! across arms and rows. Adverse events are monotone by construction:
//! `ξ(1) = 1` whenever `ξ(0) = 1`, otherwise `ξ(1) ~ Bernoulli(p(X))`.

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Observation};
use crate::math::{derive_seed, expit};
use crate::policy::PolicyEval;
use crate::{Error, Result};

/// `E[expit(ε)]` for standard normal `ε`; exactly one half because
/// `expit(ε) + expit(−ε) = 1` and `ε` is symmetric.
pub const MEAN_EXPIT_NOISE: f64 = 0.5;

/// Rows per independently seeded generation chunk.
const CHUNK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Linear,
    Threshold,
    SmallAdverse,
    Realistic,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityVariant {
    #[default]
    X2,
    X5,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    /// Adds `0.35·expit(3X₃ − X₄)` to the outcome mean (controlled scenarios only).
    #[serde(default)]
    pub with_baseline: bool,
    /// Which covariate drives the propensity (controlled scenarios only).
    #[serde(default)]
    pub propensity: PropensityVariant,
}

impl Scenario {
    pub fn new(kind: ScenarioKind) -> Self {
        Scenario {
            kind,
            with_baseline: false,
            propensity: PropensityVariant::X2,
        }
    }

    pub fn linear() -> Self {
        Self::new(ScenarioKind::Linear)
    }

    pub fn threshold() -> Self {
        Self::new(ScenarioKind::Threshold)
    }

    pub fn small_adverse() -> Self {
        Self::new(ScenarioKind::SmallAdverse)
    }

    pub fn realistic() -> Self {
        Self::new(ScenarioKind::Realistic)
    }

    /// Parses `linear`, `threshold`, `small_adverse` (or `small-adverse`) and `realistic`.
    pub fn from_name(name: &str) -> Result<Self> {
        match name.replace('-', "_").as_str() {
            "linear" => Ok(Self::linear()),
            "threshold" => Ok(Self::threshold()),
            "small_adverse" => Ok(Self::small_adverse()),
            "realistic" => Ok(Self::realistic()),
            other => Err(Error::Invalid(format!("unknown scenario {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ScenarioKind::Linear => "linear",
            ScenarioKind::Threshold => "threshold",
            ScenarioKind::SmallAdverse => "small_adverse",
            ScenarioKind::Realistic => "realistic",
        }
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            ScenarioKind::Realistic => 5,
            _ => 10,
        }
    }

    /// Treatment-effect function `f(a, x)`.
    pub fn effect(&self, a: bool, x: &[f64]) -> f64 {
        let s = if a { 1.0 } else { -1.0 };
        match self.kind {
            ScenarioKind::Linear | ScenarioKind::SmallAdverse => 2.0 * s * (1.0 - x[0] - x[1]),
            ScenarioKind::Threshold => {
                let v = if x[0] > 0.4 && x[1] > 0.6 {
                    1.1
                } else if x[0] <= 0.4 && x[1] <= 0.6 {
                    -0.9
                } else {
                    0.1
                };
                s * v
            }
            ScenarioKind::Realistic => s * (-4.0 + 0.1 * x[0]),
        }
    }

    /// Outcome mean with the noise integrated out.
    fn outcome(&self, a: bool, x: &[f64], noise_term: f64) -> f64 {
        let f = self.effect(a, x);
        match self.kind {
            ScenarioKind::Realistic => 0.4 * x[3] - 0.2 * x[4] + f + 0.5 * noise_term,
            _ if self.with_baseline => 0.55 * expit(f) + 0.35 * expit(3.0 * x[2] - x[3]) + 0.05 * noise_term,
            _ => 0.95 * expit(f) + 0.05 * noise_term,
        }
    }

    /// `μ₀(a, x) = E[Y | A = a, X = x]`.
    pub fn mu0(&self, a: bool, x: &[f64]) -> f64 {
        let noise_mean = match self.kind {
            ScenarioKind::Realistic => 0.0,
            _ => MEAN_EXPIT_NOISE,
        };
        self.outcome(a, x, noise_mean)
    }

    fn draw_outcome<R: Rng>(&self, a: bool, x: &[f64], rng: &mut R) -> f64 {
        let eps: f64 = StandardNormal.sample(rng);
        match self.kind {
            ScenarioKind::Realistic => self.outcome(a, x, eps),
            _ => self.outcome(a, x, expit(eps)),
        }
    }

    /// `ν₀(0, x)`.
    pub fn baseline_adverse(&self) -> f64 {
        match self.kind {
            ScenarioKind::Linear => 0.25,
            ScenarioKind::Threshold => 0.1,
            ScenarioKind::SmallAdverse | ScenarioKind::Realistic => 0.01,
        }
    }

    /// Probability that treatment triggers an adverse event absent at baseline.
    pub fn adverse_p(&self, x: &[f64]) -> f64 {
        match self.kind {
            ScenarioKind::Linear => expit(4.0 * (x[1] - 0.5)),
            ScenarioKind::Threshold => {
                let inside = x[2] > 0.2 && x[2] < 0.8 && x[3] > 0.25 && x[3] < 0.75;
                0.1 + if inside { 0.9 } else { 0.0 }
            }
            ScenarioKind::SmallAdverse => 0.04,
            ScenarioKind::Realistic => {
                if x[2] == 1.0 {
                    1.0
                } else if x[1] == 1.0 {
                    0.35
                } else {
                    0.0
                }
            }
        }
    }

    /// `ν₀(a, x) = P(ξ = 1 | A = a, X = x)`.
    pub fn nu0(&self, a: bool, x: &[f64]) -> f64 {
        let c = self.baseline_adverse();
        if a {
            c + (1.0 - c) * self.adverse_p(x)
        } else {
            c
        }
    }

    /// `e₀(x) = P(A = 1 | X = x)`.
    pub fn propensity(&self, x: &[f64]) -> f64 {
        match self.kind {
            ScenarioKind::Realistic => expit(-0.5 * x[1] + 0.2 * x[4] + 0.6 * (x[3] - 5.5)),
            _ => match self.propensity {
                PropensityVariant::X2 => expit(4.0 * (x[1] - 0.5)),
                PropensityVariant::X5 => expit(4.0 * (x[4] - 0.5)),
            },
        }
    }

    pub fn delta_mu(&self, x: &[f64]) -> f64 {
        self.mu0(true, x) - self.mu0(false, x)
    }

    pub fn delta_nu(&self, x: &[f64]) -> f64 {
        self.nu0(true, x) - self.nu0(false, x)
    }

    pub fn sample_covariates<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self.kind {
            ScenarioKind::Realistic => {
                let x1 = rng.random_range(16.0..65.0);
                let x2 = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
                let p3 = if (18.0..=45.0).contains(&x1) && x2 == 1.0 {
                    0.3
                } else {
                    0.0
                };
                let x3 = if rng.random_bool(p3) { 1.0 } else { 0.0 };
                let x4 = rng.random_range(0.0..10.0);
                let x5 = rng.random_range(0.0..10.0);
                vec![x1, x2, x3, x4, x5]
            }
            _ => (0..10).map(|_| rng.random::<f64>()).collect(),
        }
    }
}

/// Potential outcomes for one simulated unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualRow {
    pub x: Vec<f64>,
    pub y0: f64,
    pub y1: f64,
    pub xi0: bool,
    pub xi1: bool,
    pub a: bool,
    pub observed: Observation,
}

fn generate_chunk(sc: &Scenario, rows: usize, seed: u64) -> Vec<CounterfactualRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows)
        .map(|_| {
            let x = sc.sample_covariates(&mut rng);
            let a = rng.random_bool(sc.propensity(&x));
            let y0 = sc.draw_outcome(false, &x, &mut rng);
            let y1 = sc.draw_outcome(true, &x, &mut rng);
            let xi0 = rng.random_bool(sc.baseline_adverse());
            let p = sc.adverse_p(&x);
            let xi1 = xi0 || rng.random_bool(p);
            let observed = Observation {
                x: x.clone(),
                a,
                y: if a { y1 } else { y0 },
                xi: if a { xi1 } else { xi0 },
            };
            CounterfactualRow {
                x,
                y0,
                y1,
                xi0,
                xi1,
                a,
                observed,
            }
        })
        .collect()
}

/// Simulates `n` rows. Rows are produced in fixed-size chunks, each seeded
/// from `(seed, chunk index)`, so the output does not depend on threading.
pub fn generate(sc: &Scenario, n: usize, seed: u64) -> Result<(Dataset, Vec<CounterfactualRow>)> {
    if n == 0 {
        return Err(Error::Invalid("n must be at least 1".into()));
    }
    let chunks: Vec<(usize, usize)> = (0..n.div_ceil(CHUNK)).map(|c| (c, CHUNK.min(n - c * CHUNK))).collect();
    let make = |&(c, rows): &(usize, usize)| generate_chunk(sc, rows, derive_seed(seed, c as u64));
    #[cfg(feature = "parallel")]
    let parts: Vec<Vec<CounterfactualRow>> = {
        use rayon::prelude::*;
        chunks.par_iter().map(make).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Vec<CounterfactualRow>> = chunks.iter().map(make).collect();
    let rows: Vec<CounterfactualRow> = parts.into_iter().flatten().collect();
    let obs = rows.iter().map(|r| r.observed.clone()).collect();
    let data = match sc.kind {
        ScenarioKind::Realistic => Dataset::new_raw(obs)?,
        _ => Dataset::new(obs)?,
    };
    Ok((data, rows))
}

pub fn write_counterfactuals<W: Write>(rows: &[CounterfactualRow], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["y0", "y1", "xi0", "xi1"])?;
    for r in rows {
        w.write_record([
            r.y0.to_string(),
            r.y1.to_string(),
            u8::from(r.xi0).to_string(),
            u8::from(r.xi1).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleMetrics {
    pub value: f64,
    pub constraint: f64,
}

pub const DEFAULT_MC_N: usize = 100_000;

/// Monte Carlo value and constraint of `policy` under the scenario's true
/// conditional means, over `mc_n` fresh covariate draws.
pub fn oracle_metrics(
    sc: &Scenario,
    policy: &dyn PolicyEval,
    alpha: f64,
    mc_n: usize,
    seed: u64,
) -> Result<OracleMetrics> {
    oracle_metrics_with(sc, policy, alpha, mc_n, seed, None)
}

/// As [`oracle_metrics`], for policies that read preprocessed covariates. The
/// value is reported on the raw outcome scale.
pub fn oracle_metrics_with(
    sc: &Scenario,
    policy: &dyn PolicyEval,
    alpha: f64,
    mc_n: usize,
    seed: u64,
    transform: Option<&MinMaxTransform>,
) -> Result<OracleMetrics> {
    if mc_n == 0 {
        return Err(Error::Invalid("mc_n must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = 0.0;
    let mut s = 0.0;
    for _ in 0..mc_n {
        let x = sc.sample_covariates(&mut rng);
        let pi = match transform {
            None => policy.prob(&x)?,
            Some(t) => policy.prob(&t.scale_x(&x))?,
        };
        v += pi * sc.mu0(true, &x) + (1.0 - pi) * sc.mu0(false, &x);
        s += pi * sc.delta_nu(&x);
    }
    let n = mc_n as f64;
    Ok(OracleMetrics {
        value: v / n,
        constraint: s / n - alpha,
    })
}

/// Value of the unconstrained rule `1{Δμ₀ > 0}`.
pub fn oracle_unconstrained_value(sc: &Scenario, mc_n: usize, seed: u64) -> Result<f64> {
    let rule = |x: &[f64]| if sc.delta_mu(x) > 0.0 { 1.0 } else { 0.0 };
    Ok(oracle_metrics(sc, &rule, 0.0, mc_n, seed)?.value)
}

/// Per-column min-max scaling of covariates and outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxTransform {
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    pub y_min: f64,
    pub y_max: f64,
}

impl MinMaxTransform {
    pub fn scale_x(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, v)| (v - self.x_min[j]) / (self.x_max[j] - self.x_min[j]))
            .collect()
    }

    pub fn inverse_x(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, v)| self.x_min[j] + v * (self.x_max[j] - self.x_min[j]))
            .collect()
    }

    pub fn scale_y(&self, y: f64) -> f64 {
        (y - self.y_min) / (self.y_max - self.y_min)
    }

    pub fn inverse_y(&self, y: f64) -> f64 {
        self.y_min + y * (self.y_max - self.y_min)
    }

    /// Differences on the scaled outcome map back by the range alone.
    pub fn inverse_y_difference(&self, dy: f64) -> f64 {
        dy * (self.y_max - self.y_min)
    }
}

/// Min-max scales every covariate and the outcome into `[0, 1]` using the
/// statistics of `data` itself.
pub fn preprocess_realistic(data: &Dataset) -> Result<(Dataset, MinMaxTransform)> {
    let d = data.d();
    let mut x_min = vec![f64::INFINITY; d];
    let mut x_max = vec![f64::NEG_INFINITY; d];
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for o in data.observations() {
        for j in 0..d {
            x_min[j] = x_min[j].min(o.x[j]);
            x_max[j] = x_max[j].max(o.x[j]);
        }
        y_min = y_min.min(o.y);
        y_max = y_max.max(o.y);
    }
    for j in 0..d {
        if x_max[j] <= x_min[j] {
            return Err(Error::DegenerateColumn(format!("x{}", j + 1)));
        }
    }
    if y_max <= y_min {
        return Err(Error::DegenerateColumn("y".into()));
    }
    let t = MinMaxTransform {
        x_min,
        x_max,
        y_min,
        y_max,
    };
    let obs = data
        .observations()
        .iter()
        .map(|o| Observation {
            x: t.scale_x(&o.x).into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            a: o.a,
            y: t.scale_y(o.y).clamp(0.0, 1.0),
            xi: o.xi,
        })
        .collect();
    Ok((Dataset::new(obs)?, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_effect_vanishes_on_the_symmetry_axis() {
        let sc = Scenario::linear();
        let mut x = vec![0.5; 10];
        x[0] = 0.3;
        x[1] = 0.7;
        assert_eq!(sc.effect(true, &x), 0.0);
        assert_eq!(sc.effect(false, &x), 0.0);
        assert!(sc.delta_mu(&x).abs() < 1e-15);
    }

    #[test]
    fn linear_delta_nu_at_midpoint() {
        let mut x = vec![0.1; 10];
        x[1] = 0.5;
        assert!((Scenario::linear().delta_nu(&x) - 0.375).abs() < 1e-15);
    }

    #[test]
    fn threshold_regions() {
        let sc = Scenario::threshold();
        let mut x = vec![0.5; 10];
        x[0] = 0.5;
        x[1] = 0.7;
        assert_eq!(sc.effect(true, &x), 1.1);
        x[0] = 0.4;
        x[1] = 0.6;
        assert_eq!(sc.effect(true, &x), -0.9);
        x[1] = 0.61;
        assert_eq!(sc.effect(false, &x), -0.1);
        assert_eq!(sc.adverse_p(&x), 1.0);
        x[2] = 0.8;
        assert!((sc.adverse_p(&x) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn generation_is_deterministic_and_monotone() {
        for sc in [
            Scenario::linear(),
            Scenario::threshold(),
            Scenario::small_adverse(),
            Scenario::realistic(),
        ] {
            let (d1, r1) = generate(&sc, 5000, 11).unwrap();
            let (d2, _) = generate(&sc, 5000, 11).unwrap();
            assert_eq!(d1, d2);
            assert_eq!(d1.d(), sc.dim());
            assert!(r1.iter().all(|r| r.xi1 >= r.xi0));
            assert!(r1.iter().all(|r| r.observed.y == if r.a { r.y1 } else { r.y0 }));
        }
        let (d3, _) = generate(&Scenario::linear(), 5000, 12).unwrap();
        assert_ne!(d3, generate(&Scenario::linear(), 5000, 11).unwrap().0);
    }

    #[test]
    fn noise_expectation_by_quadrature() {
        // trapezoid on [−12, 12] against the normal density
        let h = 1e-3;
        let mut s = 0.0;
        let mut z: f64 = -12.0;
        while z <= 12.0 {
            s += expit(z) * (-0.5 * z * z).exp();
            z += h;
        }
        let v = s * h / (2.0 * std::f64::consts::PI).sqrt();
        assert!((v - MEAN_EXPIT_NOISE).abs() < 1e-9);
    }

    #[test]
    fn oracle_metric_examples() {
        let never = |_: &[f64]| 0.0;
        let all = |_: &[f64]| 1.0;
        let m = oracle_metrics(&Scenario::linear(), &never, 0.1, 1000, 1).unwrap();
        assert_eq!(m.constraint, -0.1);
        let m = oracle_metrics(&Scenario::small_adverse(), &all, 0.1, 1000, 1).unwrap();
        assert!((m.constraint - ((1.0 - 0.01) * 0.04 - 0.1)).abs() < 1e-15);
        let m = oracle_metrics(&Scenario::linear(), &all, 0.1, 400_000, 2).unwrap();
        assert!((m.constraint - 0.275).abs() < 1e-3, "{}", m.constraint);
        let again = oracle_metrics(&Scenario::linear(), &all, 0.1, 400_000, 2).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn preprocess_examples() {
        let obs = vec![
            Observation {
                x: vec![16.0, 0.0],
                a: true,
                y: -3.0,
                xi: false,
            },
            Observation {
                x: vec![40.5, 0.5],
                a: false,
                y: 1.0,
                xi: true,
            },
            Observation {
                x: vec![65.0, 1.0],
                a: true,
                y: 5.0,
                xi: false,
            },
        ];
        let raw = Dataset::new_raw(obs.clone()).unwrap();
        let (d, t) = preprocess_realistic(&raw).unwrap();
        assert!((d.get(1).x[0] - 0.5).abs() < 1e-15);
        assert_eq!(d.get(1).x[1], 0.5);
        assert!((d.get(1).y - 0.5).abs() < 1e-15);
        assert!((t.inverse_x(&d.get(1).x)[0] - 40.5).abs() < 1e-12);
        assert!((t.inverse_y(d.get(2).y) - 5.0).abs() < 1e-12);
        let mut flat = obs;
        for o in &mut flat {
            o.x[1] = 0.3;
        }
        let err = preprocess_realistic(&Dataset::new_raw(flat).unwrap()).unwrap_err();
        assert!(err.to_string().contains("x2"), "{err}");
    }

    #[test]
    fn counterfactual_csv_header() {
        let (_, rows) = generate(&Scenario::small_adverse(), 3, 0).unwrap();
        let mut buf = Vec::new();
        write_counterfactuals(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("y0,y1,xi0,xi1\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
