//! The full learning procedure: nuisance fits on folds 1 and 3, policy learning
//! over a `(λ, β)` grid on fold 2, targeted assessment on fold 3, selection of
//! the best confidently feasible cell and extraction of a threshold rule.
//!
//! Within each `β` row the `λ` loop stops at the first cell whose constraint
//! upper bound is nonpositive. Larger `λ` only shrinks treatment, but the skipped
//! cells could still carry a higher value bound; `exhaustive_grid` disables the
//! break.

use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::criteria::{CriterionContext, LagrangianProblem};
use crate::data::{split_folds, Covariates, Dataset, EmpiricalMeasure, FoldSplit};
use crate::evaluation::{assess_policy, PolicyAssessment};
use crate::frankwolfe::{frank_wolfe, FWConfig};
use crate::math::derive_seed;
use crate::nuisance::{estimate_nuisances_with, ClampBounds, Nuisance, NuisanceSpec};
use crate::policy::{Policy, ScoreFunction, SmoothPolicy, ThresholdPolicy};
use crate::synthdata::{MinMaxTransform, Scenario};
use crate::targeting::{alternating_procedure, TargetingConfig, TargetingStep};
use crate::{Error, Result, SCHEMA_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One Frank–Wolfe run on the initial Lagrangian.
    Naive,
    /// The alternating targeting procedure.
    Pluc,
    /// Frank–Wolfe on the true effects over fresh covariate draws.
    Oracle,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Mode::Naive),
            "pluc" => Ok(Mode::Pluc),
            "oracle" => Ok(Mode::Oracle),
            other => Err(Error::Invalid(format!("unknown mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Naive => "naive",
            Mode::Pluc => "pluc",
            Mode::Oracle => "oracle",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub lambdas: Vec<f64>,
    pub betas: Vec<f64>,
    pub alpha: f64,
    pub mode: Mode,
    pub fw: FWConfig,
    pub targeting: TargetingConfig,
    pub exhaustive_grid: bool,
    /// Covariate draws backing the oracle-mode criterion.
    pub oracle_points: usize,
    pub threshold_points: usize,
    pub clamp: ClampBounds,
    /// Required in oracle mode.
    pub scenario: Option<Scenario>,
    /// Maps raw scenario covariates and outcomes to the data's scale.
    pub transform: Option<MinMaxTransform>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            lambdas: (1..=10).map(f64::from).collect(),
            betas: vec![0.0, 0.05, 0.1, 0.25, 0.5],
            alpha: 0.1,
            mode: Mode::Pluc,
            fw: FWConfig::default(),
            targeting: TargetingConfig::default(),
            exhaustive_grid: false,
            oracle_points: 20_000,
            threshold_points: 101,
            clamp: ClampBounds::default(),
            scenario: None,
            transform: None,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() || self.betas.is_empty() {
            return Err(Error::Invalid("empty (lambda, beta) grid".into()));
        }
        if self.lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) || self.lambdas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid(
                "lambdas must be finite, >= 0 and strictly ascending".into(),
            ));
        }
        if self.betas.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::Invalid("betas must be finite and >= 0".into()));
        }
        if !(0.0..=0.5).contains(&self.alpha) {
            return Err(Error::Invalid(format!(
                "alpha must lie in [0, 0.5], got {}",
                self.alpha
            )));
        }
        if self.mode == Mode::Oracle && self.scenario.is_none() {
            return Err(Error::Invalid("oracle mode needs a scenario".into()));
        }
        if self.oracle_points == 0 || self.threshold_points < 2 {
            return Err(Error::Invalid(
                "oracle_points must be >= 1 and threshold_points >= 2".into(),
            ));
        }
        self.fw.validate()?;
        self.clamp.validate()
    }

    pub fn threshold_grid(&self) -> Vec<f64> {
        let m = (self.threshold_points - 1) as f64;
        (0..self.threshold_points).map(|i| i as f64 / m).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub lambda: f64,
    pub beta: f64,
    pub status: CellStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub policy: Option<SmoothPolicy>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub assessment: Option<PolicyAssessment>,
    /// Correction steps taken (pluc mode only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub targeting: Option<Vec<TargetingStep>>,
}

impl CellRecord {
    pub fn is_feasible(&self) -> bool {
        self.assessment.as_ref().is_some_and(|a| a.s_upper <= 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionKind {
    NeverTreat,
    Selected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedCell {
    pub index: usize,
    pub lambda: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThresholdOutcome {
    NeverTreat,
    Selected { t: f64, assessment: PolicyAssessment },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub schema: String,
    pub seed: u64,
    pub n: usize,
    pub config: GridConfig,
    pub nuisance: NuisanceSpec,
    pub cells: Vec<CellRecord>,
    pub selection: SelectionKind,
    pub selected: Option<SelectedCell>,
    /// The selected smooth policy, or the constant 0.
    pub policy: Policy,
    pub threshold: ThresholdOutcome,
}

impl GridResult {
    /// The threshold rule when one was found, else the constant 0.
    pub fn threshold_policy(&self) -> Policy {
        match (&self.threshold, &self.policy) {
            (ThresholdOutcome::Selected { t, .. }, Policy::Smooth(p)) => {
                Policy::Threshold(ThresholdPolicy { base: p.clone(), t: *t })
            }
            _ => Policy::Constant { p: 0.0 },
        }
    }

    pub fn write_summary<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record([
            "lambda",
            "beta",
            "status",
            "s_star",
            "s_upper",
            "v_star",
            "v_lower",
            "var_s",
            "var_v",
            "iterations",
            "selected",
        ])?;
        let chosen = self.selected.as_ref().map(|s| s.index);
        for (i, c) in self.cells.iter().enumerate() {
            let mut rec = vec![
                c.lambda.to_string(),
                c.beta.to_string(),
                match c.status {
                    CellStatus::Ok => "ok".into(),
                    CellStatus::Failed => "failed".into(),
                },
            ];
            match &c.assessment {
                Some(a) => {
                    rec.extend([a.s_star, a.s_upper, a.v_star, a.v_lower, a.var_s, a.var_v].map(|v| v.to_string()))
                }
                None => rec.extend(std::iter::repeat_n(String::new(), 6)),
            }
            rec.push(c.iterations.map(|k| k.to_string()).unwrap_or_default());
            rec.push((chosen == Some(i)).to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// What learning a cell produced besides the score function.
#[derive(Clone, Debug)]
pub struct LearnedCell {
    pub psi: ScoreFunction,
    pub iterations: Option<usize>,
    pub targeting: Option<Vec<TargetingStep>>,
}

/// Inputs shared by every cell of one run.
pub struct CellInputs<'a> {
    pub data: &'a Dataset,
    pub folds: &'a FoldSplit,
    pub nuis1: Arc<dyn Nuisance>,
    /// Oracle-mode criterion support (Δν already floored at 0).
    pub oracle: Option<&'a CriterionContext>,
    pub alpha: f64,
}

pub fn learn_cell(
    lambda: f64,
    beta: f64,
    mode: Mode,
    inputs: &CellInputs<'_>,
    fw: &FWConfig,
    targeting: &TargetingConfig,
) -> Result<LearnedCell> {
    match mode {
        Mode::Naive => {
            let points = inputs.data.covariates(&inputs.folds.n2);
            let nuis = inputs.nuis1.as_ref();
            let ctx = CriterionContext::from_fns(points, |x| nuis.delta_mu(x), |x| nuis.delta_nu(x), inputs.alpha)?;
            let out = frank_wolfe(&LagrangianProblem::new(ctx, lambda, beta)?, fw)?;
            Ok(LearnedCell {
                psi: out.psi,
                iterations: None,
                targeting: None,
            })
        }
        Mode::Pluc => {
            let out = alternating_procedure(
                inputs.nuis1.clone(),
                lambda,
                beta,
                inputs.alpha,
                inputs.data,
                &inputs.folds.n2,
                fw,
                targeting,
            )?;
            Ok(LearnedCell {
                psi: out.psi,
                iterations: Some(out.iterations),
                targeting: Some(out.steps),
            })
        }
        Mode::Oracle => {
            let ctx = inputs
                .oracle
                .ok_or_else(|| Error::Invalid("oracle mode needs a scenario".into()))?
                .clone();
            let out = frank_wolfe(&LagrangianProblem::new(ctx, lambda, beta)?, fw)?;
            Ok(LearnedCell {
                psi: out.psi,
                iterations: None,
                targeting: None,
            })
        }
    }
}

/// Fresh covariate draws with the true effects, expressed on the data's scale.
pub fn oracle_context(
    scenario: &Scenario,
    transform: Option<&MinMaxTransform>,
    points: usize,
    alpha: f64,
    seed: u64,
) -> Result<CriterionContext> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<Vec<f64>> = (0..points).map(|_| scenario.sample_covariates(&mut rng)).collect();
    let mut dmu = Vec::with_capacity(points);
    let mut dnu = Vec::with_capacity(points);
    for x in &raw {
        let d = scenario.delta_mu(x);
        dmu.push(match transform {
            Some(t) => (d / t.inverse_y_difference(1.0)).clamp(-1.0, 1.0),
            None => d,
        });
        dnu.push(scenario.delta_nu(x).max(0.0));
    }
    let rows: Vec<Vec<f64>> = match transform {
        Some(t) => raw.iter().map(|x| t.scale_x(x)).collect(),
        None => raw,
    };
    CriterionContext::new(Covariates::from_rows(&rows)?, dmu, dnu, alpha)
}

/// Best feasible threshold rule derived from `policy`; ties go to the smaller `t`.
/// Thresholds whose assessment fails are skipped.
pub fn select_threshold(
    policy: &SmoothPolicy,
    nuis3: &dyn Nuisance,
    data: &Dataset,
    fold3: &EmpiricalMeasure,
    alpha: f64,
    t_grid: &[f64],
) -> Result<ThresholdOutcome> {
    if t_grid.is_empty() {
        return Err(Error::Invalid("empty threshold grid".into()));
    }
    let mut best: Option<(f64, PolicyAssessment)> = None;
    for &t in t_grid {
        let rule = ThresholdPolicy::new(policy.clone(), t)?;
        // rules treating a handful of units can leave the scalar fluctuation
        // without a finite minimizer; they are not candidates
        let Ok(a) = assess_policy(&rule, nuis3, data, fold3, alpha) else {
            continue;
        };
        if a.s_upper <= 0.0 && best.as_ref().is_none_or(|(_, b)| a.v_lower > b.v_lower) {
            best = Some((t, a));
        }
    }
    Ok(match best {
        Some((t, assessment)) => ThresholdOutcome::Selected { t, assessment },
        None => ThresholdOutcome::NeverTreat,
    })
}

/// Argmax of `v_lower` over feasible cells; ties prefer smaller `λ`, then smaller `β`.
pub fn select_cell(cells: &[CellRecord]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in cells.iter().enumerate() {
        if !c.is_feasible() {
            continue;
        }
        let v = c.assessment.as_ref().map(|a| a.v_lower).unwrap_or(f64::NEG_INFINITY);
        best = match best {
            None => Some(i),
            Some(j) => {
                let b = &cells[j];
                let bv = b.assessment.as_ref().map(|a| a.v_lower).unwrap_or(f64::NEG_INFINITY);
                let better = v > bv || (v == bv && (c.lambda, c.beta) < (b.lambda, b.beta));
                Some(if better { i } else { j })
            }
        };
    }
    best
}

fn run_row(
    bi: usize,
    beta: f64,
    cfg: &GridConfig,
    inputs: &CellInputs<'_>,
    nuis3: &dyn Nuisance,
    fold3: &EmpiricalMeasure,
    cell_seed: u64,
) -> Vec<CellRecord> {
    let mut row = Vec::new();
    for (li, &lambda) in cfg.lambdas.iter().enumerate() {
        let mut fw = cfg.fw.clone();
        fw.sgd.seed = derive_seed(cell_seed, (bi * cfg.lambdas.len() + li) as u64);
        let outcome = learn_cell(lambda, beta, cfg.mode, inputs, &fw, &cfg.targeting).and_then(|learned| {
            let policy = SmoothPolicy::new(beta, learned.psi.clone())?;
            let a = assess_policy(&policy, nuis3, inputs.data, fold3, cfg.alpha)?;
            Ok((learned, policy, a))
        });
        let rec = match outcome {
            Ok((learned, policy, a)) => CellRecord {
                lambda,
                beta,
                status: CellStatus::Ok,
                error: None,
                policy: Some(policy),
                assessment: Some(a),
                iterations: learned.iterations,
                targeting: learned.targeting,
            },
            Err(e) => CellRecord {
                lambda,
                beta,
                status: CellStatus::Failed,
                error: Some(e.to_string()),
                policy: None,
                assessment: None,
                iterations: None,
                targeting: None,
            },
        };
        let stop = rec.is_feasible() && !cfg.exhaustive_grid;
        row.push(rec);
        if stop {
            break;
        }
    }
    row
}

pub fn run(data: &Dataset, cfg: &GridConfig, spec: &NuisanceSpec, seed: u64) -> Result<GridResult> {
    cfg.validate()?;
    let folds = split_folds(data, derive_seed(seed, 0))?;
    let nuis1: Arc<dyn Nuisance> = Arc::new(estimate_nuisances_with(data, &folds.n1, spec, cfg.clamp)?);
    let nuis3 = estimate_nuisances_with(data, &folds.n3, spec, cfg.clamp)?;
    let fold3 = EmpiricalMeasure::new(folds.n3.clone())?;
    let oracle = match (cfg.mode, &cfg.scenario) {
        (Mode::Oracle, Some(sc)) => Some(oracle_context(
            sc,
            cfg.transform.as_ref(),
            cfg.oracle_points,
            cfg.alpha,
            derive_seed(seed, 1),
        )?),
        _ => None,
    };
    let inputs = CellInputs {
        data,
        folds: &folds,
        nuis1,
        oracle: oracle.as_ref(),
        alpha: cfg.alpha,
    };
    let cell_seed = derive_seed(seed, 2);
    let rows = map_rows(&cfg.betas, |bi, beta| {
        run_row(bi, beta, cfg, &inputs, &nuis3, &fold3, cell_seed)
    });
    let cells: Vec<CellRecord> = rows.into_iter().flatten().collect();
    if cells.iter().all(|c| c.status == CellStatus::Failed) {
        let first = cells.first().and_then(|c| c.error.clone()).unwrap_or_default();
        return Err(Error::AllCellsFailed(first));
    }
    let chosen = select_cell(&cells);
    let (selection, selected, policy, threshold) = match chosen {
        None => (
            SelectionKind::NeverTreat,
            None,
            Policy::Constant { p: 0.0 },
            ThresholdOutcome::NeverTreat,
        ),
        Some(i) => {
            let c = &cells[i];
            let p = c.policy.clone().expect("feasible cells carry a policy");
            let th = select_threshold(&p, &nuis3, data, &fold3, cfg.alpha, &cfg.threshold_grid())?;
            (
                SelectionKind::Selected,
                Some(SelectedCell {
                    index: i,
                    lambda: c.lambda,
                    beta: c.beta,
                }),
                Policy::Smooth(p),
                th,
            )
        }
    };
    Ok(GridResult {
        schema: SCHEMA_VERSION.to_string(),
        seed,
        n: data.len(),
        config: cfg.clone(),
        nuisance: spec.clone(),
        cells,
        selection,
        selected,
        policy,
        threshold,
    })
}

#[cfg(feature = "parallel")]
fn map_rows<F>(betas: &[f64], f: F) -> Vec<Vec<CellRecord>>
where
    F: Fn(usize, f64) -> Vec<CellRecord> + Sync,
{
    use rayon::prelude::*;
    betas.par_iter().enumerate().map(|(i, &b)| f(i, b)).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_rows<F>(betas: &[f64], f: F) -> Vec<Vec<CellRecord>>
where
    F: Fn(usize, f64) -> Vec<CellRecord>,
{
    betas.iter().enumerate().map(|(i, &b)| f(i, b)).collect()
}
