//! Score functions `ψ ∈ Ψ`, smooth policies `σ_β ∘ ψ` and threshold rules.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::scaling::{sigma, sigma_raw};
use crate::{Error, Result};

/// Weight sums may drift from 1 by at most this much.
pub const WEIGHT_TOLERANCE: f64 = 1e-10;

/// An extreme point of the working model.
///
/// `Logistic(θ)` evaluates `2·expit(θᵀx) − 1`. A `θ` one entry longer than `x`
/// carries a trailing intercept coefficient.
#[derive(Clone, Debug, PartialEq)]
pub enum Atom {
    Logistic(Vec<f64>),
    MinusOne,
}

impl Atom {
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        match self {
            Atom::MinusOne => Ok(-1.0),
            Atom::Logistic(theta) => {
                if theta.len() != x.len() && theta.len() != x.len() + 1 {
                    return Err(Error::Dimension {
                        expected: theta.len(),
                        got: x.len(),
                    });
                }
                Ok(logistic_score(theta, x))
            }
        }
    }

    /// Evaluation without the dimension check.
    #[inline]
    pub fn eval_raw(&self, x: &[f64]) -> f64 {
        match self {
            Atom::MinusOne => -1.0,
            Atom::Logistic(theta) => logistic_score(theta, x),
        }
    }

    fn same_as(&self, other: &Atom) -> bool {
        match (self, other) {
            (Atom::MinusOne, Atom::MinusOne) => true,
            (Atom::Logistic(a), Atom::Logistic(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }
}

/// `θᵀx` plus the trailing intercept when `θ` has one extra entry.
#[inline]
pub fn linear_predictor(theta: &[f64], x: &[f64]) -> f64 {
    let d = x.len();
    let mut z: f64 = theta[..d].iter().zip(x).map(|(t, v)| t * v).sum();
    if theta.len() > d {
        z += theta[d];
    }
    z
}

/// `2·expit(θᵀx) − 1`, computed as `tanh(θᵀx / 2)`.
#[inline]
pub fn logistic_score(theta: &[f64], x: &[f64]) -> f64 {
    (0.5 * linear_predictor(theta, x)).tanh()
}

/// A convex combination of atoms.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreFunction {
    atoms: Vec<Atom>,
    weights: Vec<f64>,
}

impl ScoreFunction {
    pub fn new(atoms: Vec<Atom>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(Error::Invalid(format!(
                "{} atoms with {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Invalid("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(Error::Invalid(format!("weights sum to {total}, not 1")));
        }
        for a in &atoms {
            if let Atom::Logistic(t) = a {
                if t.is_empty() || t.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Invalid("theta must be nonempty and finite".into()));
                }
            }
        }
        Ok(ScoreFunction { atoms, weights })
    }

    /// The never-treat score `ψ ≡ −1`.
    pub fn minus_one() -> Self {
        ScoreFunction {
            atoms: vec![Atom::MinusOne],
            weights: vec![1.0],
        }
    }

    pub fn single(atom: Atom) -> Self {
        ScoreFunction {
            atoms: vec![atom],
            weights: vec![1.0],
        }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn eval_score(&self, x: &[f64]) -> Result<f64> {
        let mut s = 0.0;
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            s += w * a.eval(x)?;
        }
        Ok(s.clamp(-1.0, 1.0))
    }

    #[inline]
    pub fn eval_raw(&self, x: &[f64]) -> f64 {
        let s: f64 = self
            .atoms
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| w * a.eval_raw(x))
            .sum();
        s.clamp(-1.0, 1.0)
    }

    /// `(1 − γ)·ψ + γ·s`. Bit-identical atoms merge; atoms whose weight
    /// becomes exactly zero are dropped.
    pub fn combine(&self, s: Atom, gamma: f64) -> Result<ScoreFunction> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Invalid(format!("step size {gamma} outside [0, 1]")));
        }
        if gamma == 0.0 {
            return Ok(self.clone());
        }
        let mut atoms = Vec::with_capacity(self.atoms.len() + 1);
        let mut weights = Vec::with_capacity(self.atoms.len() + 1);
        let mut merged = false;
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            let mut w = (1.0 - gamma) * w;
            if !merged && a.same_as(&s) {
                w += gamma;
                merged = true;
            }
            if w > 0.0 {
                atoms.push(a.clone());
                weights.push(w);
            }
        }
        if !merged {
            atoms.push(s);
            weights.push(gamma);
        }
        Ok(ScoreFunction { atoms, weights })
    }
}

#[derive(Serialize, Deserialize)]
struct AtomRecord {
    weight: f64,
    theta: ThetaRepr,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ThetaRepr {
    Coefficients(Vec<f64>),
    Tag(String),
}

const MINUS_ONE_TAG: &str = "minus_one";

impl Serialize for ScoreFunction {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        let recs: Vec<AtomRecord> = self
            .atoms
            .iter()
            .zip(&self.weights)
            .map(|(a, &weight)| AtomRecord {
                weight,
                theta: match a {
                    Atom::MinusOne => ThetaRepr::Tag(MINUS_ONE_TAG.into()),
                    Atom::Logistic(t) => ThetaRepr::Coefficients(t.clone()),
                },
            })
            .collect();
        recs.serialize(ser)
    }
}

impl<'de> Deserialize<'de> for ScoreFunction {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let recs = Vec::<AtomRecord>::deserialize(de)?;
        let mut atoms = Vec::with_capacity(recs.len());
        let mut weights = Vec::with_capacity(recs.len());
        for r in recs {
            atoms.push(match r.theta {
                ThetaRepr::Coefficients(t) => Atom::Logistic(t),
                ThetaRepr::Tag(s) if s == MINUS_ONE_TAG => Atom::MinusOne,
                ThetaRepr::Tag(s) => return Err(D::Error::custom(format!("unknown atom `{s}`"))),
            });
            weights.push(r.weight);
        }
        ScoreFunction::new(atoms, weights).map_err(D::Error::custom)
    }
}

/// Anything that maps covariates to a treatment probability.
pub trait PolicyEval {
    fn prob(&self, x: &[f64]) -> Result<f64>;
}

impl<F: Fn(&[f64]) -> f64> PolicyEval for F {
    fn prob(&self, x: &[f64]) -> Result<f64> {
        Ok(self(x))
    }
}

/// `π̃ = σ_β ∘ ψ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothPolicy {
    pub beta: f64,
    pub score: ScoreFunction,
}

impl SmoothPolicy {
    pub fn new(beta: f64, score: ScoreFunction) -> Result<Self> {
        crate::scaling::ScalingParams::new(beta)?;
        Ok(SmoothPolicy { beta, score })
    }

    pub fn never_treat() -> Self {
        SmoothPolicy {
            beta: 0.0,
            score: ScoreFunction::minus_one(),
        }
    }

    pub fn eval_policy(&self, x: &[f64]) -> Result<f64> {
        sigma(self.beta, self.score.eval_score(x)?)
    }

    #[inline]
    pub fn eval_raw(&self, x: &[f64]) -> f64 {
        sigma_raw(self.beta, self.score.eval_raw(x))
    }
}

impl PolicyEval for SmoothPolicy {
    fn prob(&self, x: &[f64]) -> Result<f64> {
        self.eval_policy(x)
    }
}

/// `π^t(x) = 1{π̃(x) ≥ t}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub base: SmoothPolicy,
    pub t: f64,
}

impl ThresholdPolicy {
    pub fn new(base: SmoothPolicy, t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Invalid(format!("threshold {t} outside [0, 1]")));
        }
        Ok(ThresholdPolicy { base, t })
    }

    pub fn eval_threshold(&self, x: &[f64]) -> Result<bool> {
        Ok(self.base.eval_policy(x)? >= self.t)
    }
}

impl PolicyEval for ThresholdPolicy {
    fn prob(&self, x: &[f64]) -> Result<f64> {
        Ok(if self.eval_threshold(x)? { 1.0 } else { 0.0 })
    }
}

/// Serializable union of the policy kinds the command line reads and writes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    Smooth(SmoothPolicy),
    Threshold(ThresholdPolicy),
    /// Treat with a fixed probability everywhere: 0 is never-treat, 1 treat-all.
    Constant {
        p: f64,
    },
}

impl PolicyEval for Policy {
    fn prob(&self, x: &[f64]) -> Result<f64> {
        match self {
            Policy::Smooth(p) => p.prob(x),
            Policy::Threshold(p) => p.prob(x),
            Policy::Constant { p } => Ok(*p),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_atom(d: usize) -> Atom {
        Atom::Logistic(vec![0.0; d])
    }

    #[test]
    fn eval_examples() {
        let x = [0.3, 0.9];
        assert_eq!(ScoreFunction::minus_one().eval_score(&x).unwrap(), -1.0);
        assert_eq!(ScoreFunction::single(zero_atom(2)).eval_score(&x).unwrap(), 0.0);
        let half = ScoreFunction::new(vec![Atom::MinusOne, zero_atom(2)], vec![0.5, 0.5]).unwrap();
        assert_eq!(half.eval_score(&x).unwrap(), -0.5);
    }

    #[test]
    fn dimension_mismatch() {
        let s = ScoreFunction::single(Atom::Logistic(vec![1.0, 2.0, 3.0, 4.0]));
        assert!(matches!(s.eval_score(&[0.1, 0.2]), Err(Error::Dimension { .. })));
        // one extra coefficient is an intercept
        let s = ScoreFunction::single(Atom::Logistic(vec![0.0, 0.0, 2.0]));
        assert!((s.eval_score(&[0.1, 0.2]).unwrap() - (2.0 * crate::math::expit(2.0) - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn policy_examples() {
        let x = [0.5];
        let never = SmoothPolicy::new(2.0, ScoreFunction::minus_one()).unwrap();
        assert_eq!(never.eval_policy(&x).unwrap(), 0.0);
        // a constant score of 0.2: weights 0.4 on −1 and 0.6 on an atom equal to 1 at this x
        // is awkward; use 0.6·0 + 0.4·(intercept atom with tanh = 0.5)
        let t = 2.0 * 0.5f64.atanh();
        let s = ScoreFunction::new(vec![Atom::Logistic(vec![0.0, t])], vec![1.0]).unwrap();
        let s = s.combine(Atom::Logistic(vec![0.0, -t]), 0.3).unwrap(); // 0.7·0.5 − 0.3·0.5 = 0.2
        let p0 = SmoothPolicy::new(0.0, s.clone()).unwrap();
        assert!((p0.eval_policy(&x).unwrap() - 0.6).abs() < 1e-12);
        let p1 = SmoothPolicy::new(1.0, ScoreFunction::single(zero_atom(1))).unwrap();
        assert!((p1.eval_policy(&x).unwrap() - 0.379_885_493_041_722_3).abs() < 1e-12);
    }

    #[test]
    fn threshold_examples() {
        let x = [0.5];
        let half = SmoothPolicy::new(0.0, ScoreFunction::single(zero_atom(1))).unwrap();
        assert!(ThresholdPolicy::new(half.clone(), 0.0)
            .unwrap()
            .eval_threshold(&x)
            .unwrap());
        assert!(ThresholdPolicy::new(half.clone(), 0.5)
            .unwrap()
            .eval_threshold(&x)
            .unwrap());
        assert!(!ThresholdPolicy::new(half, 0.51).unwrap().eval_threshold(&x).unwrap());
        // π̃ = 1 passes t = 1; π̃ = 0.999 does not
        let big = SmoothPolicy::new(0.0, ScoreFunction::single(Atom::Logistic(vec![0.0, 1e3]))).unwrap();
        assert_eq!(big.eval_policy(&x).unwrap(), 1.0);
        assert!(ThresholdPolicy::new(big, 1.0).unwrap().eval_threshold(&x).unwrap());
        let t = 2.0 * 0.998f64.atanh(); // σ₀ = (1 + 0.998)/2 = 0.999
        let near = SmoothPolicy::new(0.0, ScoreFunction::single(Atom::Logistic(vec![0.0, t]))).unwrap();
        assert!((near.eval_policy(&x).unwrap() - 0.999).abs() < 1e-12);
        assert!(!ThresholdPolicy::new(near, 1.0).unwrap().eval_threshold(&x).unwrap());
        assert!(ThresholdPolicy::new(SmoothPolicy::never_treat(), 1.5).is_err());
    }

    #[test]
    fn combine_examples() {
        let psi = ScoreFunction::minus_one();
        let s0 = Atom::Logistic(vec![1.0]);
        let s1 = Atom::Logistic(vec![2.0]);
        assert_eq!(psi.combine(s0.clone(), 0.0).unwrap(), psi);
        let one = psi.combine(s0.clone(), 1.0).unwrap();
        assert_eq!(one, ScoreFunction::single(s0.clone()));
        let two = one.combine(s1.clone(), 2.0 / 3.0).unwrap();
        assert_eq!(two.atoms(), &[s0.clone(), s1]);
        assert!((two.weights()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((two.weights()[1] - 2.0 / 3.0).abs() < 1e-15);
        // identical atoms merge
        let merged = two.combine(s0, 0.5).unwrap();
        assert_eq!(merged.len(), 2);
        assert!((merged.weights()[0] - (1.0 / 6.0 + 0.5)).abs() < 1e-15);
        assert!(one.combine(Atom::MinusOne, 1.2).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let psi = ScoreFunction::new(
            vec![
                Atom::MinusOne,
                Atom::Logistic(vec![0.1, -1.0 / 3.0, 1e-300, 7.123456789012345e10]),
            ],
            vec![1.0 / 3.0, 2.0 / 3.0],
        )
        .unwrap();
        let s = serde_json::to_string(&psi).unwrap();
        assert!(s.contains("\"minus_one\""));
        let back: ScoreFunction = serde_json::from_str(&s).unwrap();
        assert_eq!(back, psi);
        for (a, b) in back.weights().iter().zip(psi.weights()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(serde_json::from_str::<ScoreFunction>(r#"[{"weight":1.0,"theta":"plus_one"}]"#).is_err());
        assert!(serde_json::from_str::<ScoreFunction>(r#"[{"weight":0.5,"theta":"minus_one"}]"#).is_err());
    }
}
