//! WebAssembly bindings behind `www/index.html`.
//!
//! The computations live in [`ops`] so they can be exercised natively; the
//! exported functions only convert errors into JavaScript exceptions.

use wasm_bindgen::prelude::*;

pub mod ops {
    use pluc::criteria::{lagrangian_at, LagrangianProblem};
    use pluc::frankwolfe::{frank_wolfe, FWConfig};
    use pluc::math::derive_seed;
    use pluc::pipeline::oracle_context;
    use pluc::policy::SmoothPolicy;
    use pluc::scaling::sigma;
    use pluc::synthdata::{oracle_metrics, Scenario, ScenarioKind};
    use pluc::{Error, Result};

    /// Monte Carlo draws used to score a learned policy.
    pub const MC_DRAWS: usize = 20_000;

    /// `σ_β` at `points` evenly spaced scores on `[−1, 1]`.
    pub fn sigma_curve(beta: f64, points: usize) -> Result<Vec<f64>> {
        if points < 2 {
            return Err(Error::Invalid("need at least two points".into()));
        }
        let step = 2.0 / (points - 1) as f64;
        (0..points).map(|i| sigma(beta, -1.0 + i as f64 * step)).collect()
    }

    fn controlled(name: &str) -> Result<Scenario> {
        let sc = Scenario::from_name(name)?;
        if sc.kind == ScenarioKind::Realistic {
            return Err(Error::Invalid("the demo maps the [0,1] scenarios only".into()));
        }
        Ok(sc)
    }

    /// Cell centres of a `resolution × resolution` grid over `(x₁, x₂)`, row
    /// by row from `x₂ = 0`, with the remaining covariates held at ½.
    fn grid(resolution: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
        if resolution == 0 {
            return Err(Error::Invalid("resolution must be positive".into()));
        }
        let r = resolution as f64;
        let mut out = Vec::with_capacity(resolution * resolution);
        for row in 0..resolution {
            for col in 0..resolution {
                let mut x = vec![0.5; dim];
                x[0] = (col as f64 + 0.5) / r;
                x[1] = (row as f64 + 0.5) / r;
                out.push(x);
            }
        }
        Ok(out)
    }

    /// True `Δμ₀` followed by true `Δν₀` over the grid, `2·resolution²` values.
    pub fn effect_map(scenario: &str, resolution: usize) -> Result<Vec<f64>> {
        let sc = controlled(scenario)?;
        let cells = grid(resolution, sc.dim())?;
        let mut out: Vec<f64> = cells.iter().map(|x| sc.delta_mu(x)).collect();
        out.extend(cells.iter().map(|x| sc.delta_nu(x)));
        Ok(out)
    }

    #[derive(Clone, Debug)]
    pub struct Learned {
        /// Treatment probabilities over the grid.
        pub probabilities: Vec<f64>,
        pub value: f64,
        pub constraint: f64,
        pub lagrangian: f64,
        pub atoms: usize,
    }

    /// Frank–Wolfe on the scenario's true effects at `points` fresh draws.
    #[allow(clippy::too_many_arguments)]
    pub fn learn(
        scenario: &str,
        lambda: f64,
        beta: f64,
        alpha: f64,
        points: usize,
        iterations: usize,
        seed: u64,
        resolution: usize,
    ) -> Result<Learned> {
        let sc = controlled(scenario)?;
        let ctx = oracle_context(&sc, None, points, alpha, derive_seed(seed, 0))?;
        let prob = LagrangianProblem::new(ctx, lambda, beta)?;
        let mut fw = FWConfig {
            iterations,
            ..FWConfig::default()
        };
        fw.sgd.seed = derive_seed(seed, 1);
        let out = frank_wolfe(&prob, &fw)?;
        let lagrangian = lagrangian_at(&prob, &out.values);
        let policy = SmoothPolicy::new(beta, out.psi)?;
        let probabilities = grid(resolution, sc.dim())?
            .iter()
            .map(|x| policy.eval_policy(x))
            .collect::<Result<Vec<f64>>>()?;
        let m = oracle_metrics(&sc, &policy, alpha, MC_DRAWS, derive_seed(seed, 2))?;
        Ok(Learned {
            probabilities,
            value: m.value,
            constraint: m.constraint,
            lagrangian,
            atoms: policy.score.len(),
        })
    }
}

fn js(e: pluc::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = sigmaCurve)]
pub fn sigma_curve(beta: f64, points: usize) -> Result<Vec<f64>, JsError> {
    ops::sigma_curve(beta, points).map_err(js)
}

#[wasm_bindgen(js_name = effectMap)]
pub fn effect_map(scenario: &str, resolution: usize) -> Result<Vec<f64>, JsError> {
    ops::effect_map(scenario, resolution).map_err(js)
}

#[wasm_bindgen]
pub struct PolicyMap {
    inner: ops::Learned,
}

#[wasm_bindgen]
impl PolicyMap {
    #[wasm_bindgen(getter)]
    pub fn probabilities(&self) -> Vec<f64> {
        self.inner.probabilities.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn value(&self) -> f64 {
        self.inner.value
    }

    #[wasm_bindgen(getter)]
    pub fn constraint(&self) -> f64 {
        self.inner.constraint
    }

    #[wasm_bindgen(getter)]
    pub fn lagrangian(&self) -> f64 {
        self.inner.lagrangian
    }

    #[wasm_bindgen(getter)]
    pub fn atoms(&self) -> usize {
        self.inner.atoms
    }
}

#[allow(clippy::too_many_arguments)]
#[wasm_bindgen(js_name = learnPolicy)]
pub fn learn_policy(
    scenario: &str,
    lambda: f64,
    beta: f64,
    alpha: f64,
    points: usize,
    iterations: usize,
    seed: u32,
    resolution: usize,
) -> Result<PolicyMap, JsError> {
    ops::learn(
        scenario,
        lambda,
        beta,
        alpha,
        points,
        iterations,
        seed as u64,
        resolution,
    )
    .map(|inner| PolicyMap { inner })
    .map_err(js)
}
