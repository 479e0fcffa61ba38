use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use pluc::certify::{certify as run_certify, ToyOracle, ToySpec};
use pluc::data::{Dataset, EmpiricalMeasure};
use pluc::evaluation::{assess_policy, PolicyAssessment};
use pluc::math::derive_seed;
use pluc::nuisance::{estimate_nuisances_with, ClampBounds, NuisanceSpec};
use pluc::pipeline::{run, GridConfig, Mode, SelectionKind};
use pluc::policy::Policy;
use pluc::synthdata::{
    generate, oracle_metrics_with, preprocess_realistic, write_counterfactuals, MinMaxTransform, PropensityVariant,
    Scenario,
};
use pluc::SCHEMA_VERSION;

use crate::config::RunConfig;
use crate::{CertifyArgs, EvaluateArgs, FitArgs, ScenarioFlags, SimulateArgs, SweepArgs};

/// Exit code for a run whose recommendation is to treat nobody.
const NEVER_TREAT: u8 = 2;

fn seed_or_draw(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush().with_context(|| format!("writing {}", path.display()))
}

fn scenario_from(flags: &ScenarioFlags) -> Result<Option<Scenario>> {
    let Some(name) = &flags.scenario else {
        if flags.with_baseline || flags.propensity.is_some() {
            bail!("--with-baseline and --propensity need --scenario");
        }
        return Ok(None);
    };
    let mut sc = Scenario::from_name(name)?;
    sc.with_baseline = flags.with_baseline;
    if let Some(p) = &flags.propensity {
        sc.propensity = match p.to_ascii_lowercase().as_str() {
            "x2" => PropensityVariant::X2,
            "x5" => PropensityVariant::X5,
            other => bail!("unknown propensity variant {other:?}; expected x2 or x5"),
        };
    }
    Ok(Some(sc))
}

fn load_data(path: &Path, raw: bool) -> Result<(Dataset, Option<MinMaxTransform>)> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let reader = std::io::BufReader::new(file);
    if raw {
        let data = Dataset::read_csv_raw(reader).with_context(|| format!("reading {}", path.display()))?;
        let (scaled, t) = preprocess_realistic(&data)?;
        Ok((scaled, Some(t)))
    } else {
        let data = Dataset::read_csv(reader)
            .with_context(|| format!("reading {} (pass --raw for unscaled data)", path.display()))?;
        Ok((data, None))
    }
}

pub fn simulate(a: &SimulateArgs) -> Result<u8> {
    let sc = scenario_from(&a.scenario)?.ok_or_else(|| anyhow!("simulate needs --scenario"))?;
    let seed = seed_or_draw(a.seed);
    let (data, cf) = generate(&sc, a.n, seed)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let data_path = a.out.join("data.csv");
    let mut w = create(&data_path)?;
    data.write_csv(&mut w)?;
    w.flush()?;
    let cf_path = a.out.join("counterfactuals.csv");
    let mut w = create(&cf_path)?;
    write_counterfactuals(&cf, &mut w)?;
    w.flush()?;
    let mut files = vec!["data.csv", "counterfactuals.csv"];
    if sc.kind == pluc::synthdata::ScenarioKind::Realistic {
        let (_, t) = preprocess_realistic(&data)?;
        write_json(
            &a.out.join("preprocessing.json"),
            &json!({ "schema": SCHEMA_VERSION, "transform": t }),
        )?;
        files.push("preprocessing.json");
    }
    write_json(
        &a.out.join("manifest.json"),
        &json!({
            "schema": SCHEMA_VERSION,
            "command": "simulate",
            "scenario": sc,
            "n": a.n,
            "seed": seed,
            "raw_scale": !data.is_unit_range(),
            "files": files,
        }),
    )?;
    Ok(0)
}

fn nuisance_spec(kind: &str, scenario: Option<&Scenario>, transform: Option<&MinMaxTransform>) -> Result<NuisanceSpec> {
    match kind {
        "glm" => Ok(NuisanceSpec::Glm),
        "oracle" => Ok(NuisanceSpec::Oracle {
            scenario: scenario
                .cloned()
                .ok_or_else(|| anyhow!("usage: oracle nuisances require --scenario"))?,
            transform: transform.cloned(),
        }),
        other => bail!("unknown nuisance kind {other:?}; expected glm or oracle"),
    }
}

pub fn fit(a: &FitArgs) -> Result<u8> {
    let file_cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut cfg = file_cfg.grid_config()?;
    if let Some(m) = &a.mode {
        cfg.mode = m.parse::<Mode>()?;
    }
    if let Some(sc) = scenario_from(&a.scenario)? {
        cfg.scenario = Some(sc);
    }
    if let Some(alpha) = a.alpha {
        cfg.alpha = alpha;
    }
    if a.no_intercept {
        cfg.fw.sgd.intercept = false;
    }
    if a.exhaustive_grid {
        cfg.exhaustive_grid = true;
    }
    if cfg.mode == Mode::Oracle && cfg.scenario.is_none() {
        bail!("usage: --mode oracle requires --scenario");
    }
    let (data, transform) = load_data(&a.data, a.raw)?;
    cfg.transform = transform;
    let kind = a
        .nuisance
        .clone()
        .or(file_cfg.nuisance.kind.clone())
        .unwrap_or_else(|| "glm".into());
    let spec = nuisance_spec(&kind, cfg.scenario.as_ref(), cfg.transform.as_ref())?;
    let seed = a.seed.or(file_cfg.seed).unwrap_or_else(rand::random);

    let result = run(&data, &cfg, &spec, seed)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_json(&a.out.join("result.json"), &result)?;
    let mut w = create(&a.out.join("summary.csv"))?;
    result.write_summary(&mut w)?;
    w.flush()?;
    write_json(&a.out.join("policy.json"), &result.policy)?;
    write_json(&a.out.join("threshold_policy.json"), &result.threshold_policy())?;
    match result.selection {
        SelectionKind::NeverTreat => {
            eprintln!("no cell is confidently feasible; the recommendation is to never treat");
            Ok(NEVER_TREAT)
        }
        SelectionKind::Selected => Ok(0),
    }
}

fn read_policy(path: &Path) -> Result<Policy> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing policy {}", path.display()))
}

fn read_transform(path: &Path) -> Result<MinMaxTransform> {
    #[derive(serde::Deserialize)]
    struct File {
        transform: MinMaxTransform,
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str::<File>(&text)
        .with_context(|| format!("parsing {}", path.display()))?
        .transform)
}

fn policy_beta(p: &Policy) -> Option<f64> {
    match p {
        Policy::Smooth(s) => Some(s.beta),
        Policy::Threshold(t) => Some(t.base.beta),
        Policy::Constant { .. } => None,
    }
}

pub fn write_assessment_row<W: Write>(
    w: W,
    lambda: Option<f64>,
    beta: Option<f64>,
    a: &PolicyAssessment,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record([
        "lambda", "beta", "s_star", "s_upper", "v_star", "v_lower", "var_s", "var_v",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut rec = vec![opt(lambda), opt(beta)];
    rec.extend([a.s_star, a.s_upper, a.v_star, a.v_lower, a.var_s, a.var_v].map(|v| v.to_string()));
    w.write_record(&rec)?;
    w.flush()?;
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<u8> {
    let policy = read_policy(&a.policy)?;
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    if let Some(sc) = scenario_from(&a.scenario)? {
        let seed = seed_or_draw(a.seed);
        let transform = a.preprocessing.as_deref().map(read_transform).transpose()?;
        let m = oracle_metrics_with(&sc, &policy, a.alpha, a.mc_n, seed, transform.as_ref())
            .context("policy does not match the scenario's covariates")?;
        let doc = json!({
            "schema": SCHEMA_VERSION,
            "scenario": sc,
            "alpha": a.alpha,
            "mc_n": a.mc_n,
            "seed": seed,
            "value": m.value,
            "constraint": m.constraint,
        });
        serde_json::to_writer_pretty(&mut out, &doc)?;
        out.write_all(b"\n")?;
    } else if let Some(path) = &a.data {
        let (data, _) = load_data(path, a.raw)?;
        let all: Vec<usize> = (0..data.len()).collect();
        let nuis = estimate_nuisances_with(&data, &all, &NuisanceSpec::Glm, ClampBounds::default())?;
        let fold = EmpiricalMeasure::new(all)?;
        let assessment = assess_policy(&policy, &nuis, &data, &fold, a.alpha)
            .context("policy does not match the data's covariates")?;
        write_assessment_row(&mut out, None, policy_beta(&policy), &assessment)?;
    } else {
        bail!("usage: evaluate needs --scenario or --data");
    }
    out.flush()?;
    Ok(0)
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(|p| p.trim().to_string())
        .filter(|p| !p.is_empty())
        .collect()
}

pub fn sweep(a: &SweepArgs) -> Result<u8> {
    let file_cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut base = file_cfg.grid_config()?;
    if let Some(alpha) = a.alpha {
        base.alpha = alpha;
    }
    if a.no_intercept {
        base.fw.sgd.intercept = false;
    }
    let scenarios = split_list(&a.scenarios)
        .iter()
        .map(|s| Scenario::from_name(s))
        .collect::<pluc::Result<Vec<_>>>()?;
    let modes = split_list(&a.modes)
        .iter()
        .map(|m| m.parse::<Mode>())
        .collect::<pluc::Result<Vec<_>>>()?;
    if scenarios.is_empty() || modes.is_empty() {
        bail!("usage: sweep needs at least one scenario and one mode");
    }
    let seed = a.seed.or(file_cfg.seed).unwrap_or_else(rand::random);
    let mut w = csv::Writer::from_writer(create(&a.out)?);
    w.write_record([
        "replicate",
        "mode",
        "scenario",
        "n",
        "lambda",
        "beta",
        "value_oracle",
        "constraint_oracle",
        "s_upper",
        "v_lower",
        "selected",
    ])?;
    for sc in &scenarios {
        for r in 0..a.replicates {
            let rep_seed = derive_seed(seed, r as u64);
            let (raw, _) = generate(sc, a.n, rep_seed)?;
            let (data, transform) = if raw.is_unit_range() {
                (raw, None)
            } else {
                let (d, t) = preprocess_realistic(&raw)?;
                (d, Some(t))
            };
            for &mode in &modes {
                let cfg = GridConfig {
                    mode,
                    scenario: Some(sc.clone()),
                    transform: transform.clone(),
                    ..base.clone()
                };
                let result = run(&data, &cfg, &NuisanceSpec::Glm, rep_seed)
                    .with_context(|| format!("{} replicate {r} mode {mode}", sc.name()))?;
                let chosen = result.selected.as_ref().map(|s| s.index);
                let mc_seed = derive_seed(rep_seed, 7);
                let common = [r.to_string(), mode.to_string(), sc.name().to_string(), a.n.to_string()];
                for (i, c) in result.cells.iter().enumerate() {
                    let (Some(p), Some(asmt)) = (&c.policy, &c.assessment) else {
                        continue;
                    };
                    let m = oracle_metrics_with(sc, p, cfg.alpha, a.mc_n, mc_seed, transform.as_ref())?;
                    let mut rec = common.to_vec();
                    rec.extend([
                        c.lambda.to_string(),
                        c.beta.to_string(),
                        m.value.to_string(),
                        m.constraint.to_string(),
                        asmt.s_upper.to_string(),
                        asmt.v_lower.to_string(),
                        (chosen == Some(i)).to_string(),
                    ]);
                    w.write_record(&rec)?;
                }
                if chosen.is_none() {
                    let m = oracle_metrics_with(sc, &result.policy, cfg.alpha, a.mc_n, mc_seed, transform.as_ref())?;
                    let mut rec = common.to_vec();
                    rec.extend([
                        String::new(),
                        String::new(),
                        m.value.to_string(),
                        m.constraint.to_string(),
                        String::new(),
                        String::new(),
                        "true".into(),
                    ]);
                    w.write_record(&rec)?;
                }
            }
        }
    }
    w.flush()?;
    let manifest: PathBuf = a.out.with_extension("json");
    write_json(
        &manifest,
        &json!({
            "schema": SCHEMA_VERSION,
            "command": "sweep",
            "seed": seed,
            "replicates": a.replicates,
            "n": a.n,
            "mc_n": a.mc_n,
            "scenarios": scenarios,
            "modes": modes,
            "config": base,
        }),
    )?;
    Ok(0)
}

pub fn certify(a: &CertifyArgs) -> Result<u8> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<ToySpec>(&text).with_context(|| format!("invalid toy spec {}", p.display()))?
        }
        None => ToySpec::default(),
    };
    if let Some(l) = a.lambda {
        spec.lambda = l;
    }
    if let Some(b) = a.beta {
        spec.beta = b;
    }
    if let Some(j) = a.iterations {
        spec.iterations = j;
    }
    match a.oracle.as_deref() {
        None => {}
        Some("exact") => spec.oracle = ToyOracle::Exact,
        Some("sgd") => spec.oracle = ToyOracle::Sgd(Default::default()),
        Some(other) => bail!("unknown oracle {other:?}; expected exact or sgd"),
    }
    let report = run_certify(&spec)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut w = create(&a.out.join("trace.csv"))?;
    report.write_csv(&mut w)?;
    w.flush()?;
    write_json(
        &a.out.join("report.json"),
        &json!({
            "schema": SCHEMA_VERSION,
            "spec": report.spec,
            "curvature": report.curvature,
            "delta": report.delta,
            "reference_value": report.reference_value,
            "reference_lower": report.reference_lower,
            "all_ok": report.all_ok(),
        }),
    )?;
    if matches!(spec.oracle, ToyOracle::Exact) && !report.all_ok() {
        let bad: Vec<usize> = report
            .records
            .iter()
            .filter(|r| !r.bound_ok || r.step_ok == Some(false))
            .map(|r| r.j)
            .collect();
        eprintln!("convergence bound violated at iterations {bad:?}");
        return Ok(1);
    }
    Ok(0)
}
