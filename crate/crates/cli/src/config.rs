//! The TOML run configuration. Every section is optional; flags given on the
//! command line override file values.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use pluc::frankwolfe::iterations_for_precision;
use pluc::nuisance::ClampBounds;
use pluc::pipeline::{GridConfig, Mode};
use pluc::synthdata::{PropensityVariant, Scenario};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub fw: FwSection,
    #[serde(default)]
    pub sgd: SgdSection,
    #[serde(default)]
    pub targeting: TargetingSection,
    #[serde(default)]
    pub nuisance: NuisanceSection,
    pub scenario: Option<ScenarioSection>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub lambdas: Option<Vec<f64>>,
    pub betas: Option<Vec<f64>>,
    pub alpha: Option<f64>,
    pub mode: Option<Mode>,
    pub exhaustive_grid: Option<bool>,
    pub oracle_points: Option<usize>,
    pub threshold_points: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FwSection {
    pub iterations: Option<usize>,
    /// Alternative to `iterations`: `J = ceil(1/precision)`.
    pub precision: Option<f64>,
    pub record_certificate: Option<bool>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdSection {
    pub tolerance: Option<f64>,
    pub learning_rate: Option<f64>,
    pub batch_fraction: Option<f64>,
    pub max_iterations: Option<usize>,
    pub warm_start: Option<bool>,
    pub intercept: Option<bool>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetingSection {
    pub gamma_tol: Option<f64>,
    pub max_iterations: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuisanceSection {
    /// `glm` or `oracle`.
    pub kind: Option<String>,
    pub clamp_lo: Option<f64>,
    pub clamp_hi: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub name: String,
    #[serde(default)]
    pub with_baseline: bool,
    #[serde(default)]
    pub propensity: PropensityVariant,
}

impl ScenarioSection {
    pub fn scenario(&self) -> Result<Scenario> {
        let mut sc = Scenario::from_name(&self.name)?;
        sc.with_baseline = self.with_baseline;
        sc.propensity = self.propensity;
        Ok(sc)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn grid_config(&self) -> Result<GridConfig> {
        let mut g = GridConfig::default();
        let s = &self.grid;
        if let Some(v) = &s.lambdas {
            g.lambdas = v.clone();
        }
        if let Some(v) = &s.betas {
            g.betas = v.clone();
        }
        g.alpha = s.alpha.unwrap_or(g.alpha);
        g.mode = s.mode.unwrap_or(g.mode);
        g.exhaustive_grid = s.exhaustive_grid.unwrap_or(g.exhaustive_grid);
        g.oracle_points = s.oracle_points.unwrap_or(g.oracle_points);
        g.threshold_points = s.threshold_points.unwrap_or(g.threshold_points);

        match (self.fw.iterations, self.fw.precision) {
            (Some(_), Some(_)) => bail!("[fw] takes either iterations or precision, not both"),
            (Some(j), None) => g.fw.iterations = j,
            (None, Some(p)) => g.fw.iterations = iterations_for_precision(p)?,
            (None, None) => {}
        }
        g.fw.record_certificate = self.fw.record_certificate.unwrap_or(false);
        let sg = &mut g.fw.sgd;
        let c = &self.sgd;
        sg.tolerance = c.tolerance.unwrap_or(sg.tolerance);
        sg.learning_rate = c.learning_rate.unwrap_or(sg.learning_rate);
        sg.batch_fraction = c.batch_fraction.unwrap_or(sg.batch_fraction);
        sg.max_iterations = c.max_iterations.unwrap_or(sg.max_iterations);
        sg.warm_start = c.warm_start.unwrap_or(sg.warm_start);
        sg.intercept = c.intercept.unwrap_or(sg.intercept);
        g.targeting.gamma_tol = self.targeting.gamma_tol.unwrap_or(g.targeting.gamma_tol);
        g.targeting.max_iterations = self.targeting.max_iterations.unwrap_or(g.targeting.max_iterations);
        let d = ClampBounds::default();
        g.clamp = ClampBounds {
            lo: self.nuisance.clamp_lo.unwrap_or(d.lo),
            hi: self.nuisance.clamp_hi.unwrap_or(d.hi),
        };
        if let Some(sc) = &self.scenario {
            g.scenario = Some(sc.scenario()?);
        }
        Ok(g)
    }
}
