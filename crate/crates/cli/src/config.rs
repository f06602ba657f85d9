//! Experiment configuration: a flat TOML schema with strict key checking.
//! Every run is fully determined by the config file content; the file's
//! SHA-256 is stamped into every output artifact.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rwrp_core::env::{
    Environment, IidModel, Potential, SiteDistribution, StepKind, StepSet,
};
use rwrp_core::error::Error as CoreError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    FreeEnergy,
    Variational,
    RateFunction,
    Disorder,
    Kpz,
    OracleSuite,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::FreeEnergy => "free-energy",
            ExperimentKind::Variational => "variational",
            ExperimentKind::RateFunction => "rate-function",
            ExperimentKind::Disorder => "disorder",
            ExperimentKind::Kpz => "kpz",
            ExperimentKind::OracleSuite => "oracle-suite",
        }
    }

    pub fn all() -> [(ExperimentKind, &'static str); 6] {
        [
            (
                ExperimentKind::FreeEnergy,
                "annealed free energy (closed form) vs Monte Carlo quenched estimate and the annealing bound",
            ),
            (
                ExperimentKind::Variational,
                "minimize K'(V, g) on a periodic environment and certify against the Perron root",
            ),
            (
                ExperimentKind::RateFunction,
                "level-1 rate function I_q(v) by Legendre transform of the tilted free energy",
            ),
            (
                ExperimentKind::Disorder,
                "martingale trajectories, replica overlaps, and the weak/strong classification",
            ),
            (
                ExperimentKind::Kpz,
                "bridge fluctuation-exponent probe for the log-gamma polymer",
            ),
            (
                ExperimentKind::OracleSuite,
                "recursion vs exhaustive path enumeration on random small instances",
            ),
        ]
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub dist: Option<String>,
    pub p: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub trunc: Option<f64>,
    pub gamma: Option<f64>,
    pub potential: Option<String>,
    pub beta: Option<f64>,
    pub step_values: Option<Vec<f64>>,
    pub periodic_values: Option<Vec<f64>>,
    pub periods: Option<Vec<i64>>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct StepsBlock {
    pub d: usize,
    pub kind: Option<String>,
    pub custom: Option<Vec<Vec<i64>>>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub n: Option<usize>,
    pub n_max: Option<usize>,
    pub n_grid: Option<Vec<usize>>,
    pub samples: Option<usize>,
    pub master_seed: Option<u64>,
    pub threads: Option<usize>,
    pub ladder: Option<bool>,
    pub lambda: Option<f64>,
    pub velocities: Option<Vec<Vec<f64>>>,
    pub v_grid: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdsBlock {
    pub n_lo: Option<usize>,
    pub n_hi: Option<usize>,
    pub strong_decay: Option<f64>,
    pub weak_stability: Option<f64>,
    pub h_zero: Option<f64>,
    pub h_inf: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: String,
    pub formats: Option<Vec<String>>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub model: Option<ModelBlock>,
    pub steps: Option<StepsBlock>,
    #[serde(default)]
    pub run: RunBlock,
    #[serde(default)]
    pub thresholds: ThresholdsBlock,
    pub output: OutputBlock,
}

/// A schema or semantic configuration error (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub hash: String,
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
    let config: ExperimentConfig =
        toml::from_str(&raw).map_err(|e| ConfigError(format!("invalid config: {e}")))?;
    validate(&config)?;
    let hash = hex_digest(raw.as_bytes());
    Ok(LoadedConfig { config, hash })
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn validate(cfg: &ExperimentConfig) -> Result<(), ConfigError> {
    let ok_formats = ["csv", "json"];
    if let Some(fs) = &cfg.output.formats {
        for f in fs {
            if !ok_formats.contains(&f.as_str()) {
                return Err(ConfigError(format!(
                    "unknown output format `{f}` (expected csv or json)"
                )));
            }
        }
    }
    let need = |cond: bool, msg: &str| -> Result<(), ConfigError> {
        if cond {
            Ok(())
        } else {
            Err(ConfigError(msg.to_string()))
        }
    };
    match cfg.experiment {
        ExperimentKind::FreeEnergy => {
            need(cfg.model.is_some(), "free-energy requires a [model] block")?;
            need(cfg.steps.is_some(), "free-energy requires a [steps] block")?;
            need(cfg.run.n.is_some(), "free-energy requires run.n")?;
            need(cfg.run.samples.is_some(), "free-energy requires run.samples")?;
            need(
                cfg.run.master_seed.is_some(),
                "free-energy requires run.master_seed",
            )?;
        }
        ExperimentKind::Variational => {
            let m = cfg
                .model
                .as_ref()
                .ok_or_else(|| ConfigError("variational requires a [model] block".into()))?;
            need(
                m.periodic_values.is_some() && m.periods.is_some(),
                "variational requires model.periodic_values and model.periods",
            )?;
            need(cfg.steps.is_some(), "variational requires a [steps] block")?;
        }
        ExperimentKind::RateFunction => {
            let m = cfg
                .model
                .as_ref()
                .ok_or_else(|| ConfigError("rate-function requires a [model] block".into()))?;
            need(
                m.periodic_values.is_some() && m.periods.is_some(),
                "rate-function requires model.periodic_values and model.periods",
            )?;
            need(cfg.steps.is_some(), "rate-function requires a [steps] block")?;
            need(
                cfg.run.velocities.is_some() || cfg.run.v_grid.is_some(),
                "rate-function requires run.velocities or run.v_grid",
            )?;
        }
        ExperimentKind::Disorder => {
            need(cfg.model.is_some(), "disorder requires a [model] block")?;
            need(cfg.steps.is_some(), "disorder requires a [steps] block")?;
            need(cfg.run.n_max.is_some(), "disorder requires run.n_max")?;
            need(cfg.run.samples.is_some(), "disorder requires run.samples")?;
            need(
                cfg.run.master_seed.is_some(),
                "disorder requires run.master_seed",
            )?;
        }
        ExperimentKind::Kpz => {
            need(cfg.model.is_some(), "kpz requires a [model] block")?;
            need(cfg.run.n_grid.is_some(), "kpz requires run.n_grid")?;
            need(cfg.run.samples.is_some(), "kpz requires run.samples")?;
            need(cfg.run.master_seed.is_some(), "kpz requires run.master_seed")?;
        }
        ExperimentKind::OracleSuite => {
            need(cfg.run.samples.is_some(), "oracle-suite requires run.samples")?;
            need(
                cfg.run.master_seed.is_some(),
                "oracle-suite requires run.master_seed",
            )?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// materializing core objects from blocks
// ---------------------------------------------------------------------------

pub fn build_steps(block: &StepsBlock) -> Result<StepSet, CoreError> {
    let kind = match block.kind.as_deref().unwrap_or("directed") {
        "directed" => StepKind::Directed,
        "symmetric-nn" => StepKind::SymmetricNn,
        "custom" => StepKind::Custom(block.custom.clone().unwrap_or_default()),
        other => {
            return Err(CoreError::InvalidStepSet(format!(
                "unknown steps.kind `{other}`"
            )))
        }
    };
    StepSet::make(block.d, kind)
}

pub fn build_distribution(m: &ModelBlock) -> Result<SiteDistribution, CoreError> {
    let dist = match m.dist.as_deref() {
        Some("bernoulli") | None => SiteDistribution::Bernoulli {
            p: m.p.unwrap_or(0.5),
            lo: m.lo.unwrap_or(0.0),
            hi: m.hi.unwrap_or(1.0),
        },
        Some("gaussian") => SiteDistribution::Gaussian {
            mean: m.mean.unwrap_or(0.0),
            sd: m.sd.unwrap_or(1.0),
            trunc: m.trunc.unwrap_or(3.0),
        },
        Some("log-gamma") => SiteDistribution::LogGamma {
            gamma: m.gamma.ok_or_else(|| {
                CoreError::InvalidDistribution("log-gamma requires model.gamma".into())
            })?,
        },
        Some(other) => {
            return Err(CoreError::InvalidDistribution(format!(
                "unknown model.dist `{other}`"
            )))
        }
    };
    dist.validate()?;
    Ok(dist)
}

pub fn build_potential(
    m: &ModelBlock,
    dist: Option<&SiteDistribution>,
) -> Result<Potential, CoreError> {
    match m.potential.as_deref().unwrap_or("site-linear") {
        "zero" => Ok(Potential::zero()),
        "site-linear" => {
            let beta = m.beta.unwrap_or(1.0);
            let bound = dist.and_then(|d| d.value_bound());
            Ok(Potential::site_linear(beta, bound))
        }
        "step-constant" => {
            let values = m.step_values.clone().ok_or_else(|| {
                CoreError::Unsupported("step-constant potential requires model.step_values".into())
            })?;
            Ok(Potential::step_constant(values))
        }
        other => Err(CoreError::Unsupported(format!(
            "unknown model.potential `{other}`"
        ))),
    }
}

pub fn build_iid_model(cfg: &ExperimentConfig) -> Result<IidModel, CoreError> {
    let m = cfg.model.as_ref().expect("validated");
    let steps = build_steps(cfg.steps.as_ref().expect("validated"))?;
    let dist = build_distribution(m)?;
    let pot = build_potential(m, Some(&dist))?;
    IidModel::new(dist, pot, steps)
}

pub fn build_periodic(cfg: &ExperimentConfig) -> Result<(Environment, Potential, StepSet), CoreError> {
    let m = cfg.model.as_ref().expect("validated");
    let steps = build_steps(cfg.steps.as_ref().expect("validated"))?;
    let values = m.periodic_values.clone().expect("validated");
    let bound = values.iter().fold(0.0f64, |b, v| b.max(v.abs()));
    let env = Environment::periodic(values, m.periods.clone().expect("validated"))?;
    // the potential of a periodic test bed reads site values directly,
    // so the torus contents bound it
    let pot = match m.potential.as_deref().unwrap_or("site-linear") {
        "site-linear" => Potential::site_linear(m.beta.unwrap_or(1.0), Some(bound)),
        _ => build_potential(m, None)?,
    };
    Ok((env, pot, steps))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_free_energy_config_parses() {
        let text = r#"
experiment = "free-energy"

[model]
dist = "bernoulli"
p = 0.5
beta = 1.0

[steps]
d = 2

[run]
n = 64
samples = 16
master_seed = 1

[output]
dir = "out"
"#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        validate(&cfg).unwrap();
        assert_eq!(cfg.experiment, ExperimentKind::FreeEnergy);
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let text = r#"
modle = "free-energy"

[output]
dir = "out"
"#;
        let err = toml::from_str::<ExperimentConfig>(text).unwrap_err();
        assert!(err.to_string().contains("modle"), "{err}");
    }

    #[test]
    fn unknown_nested_key_is_rejected() {
        let text = r#"
experiment = "disorder"

[model]
dist = "bernoulli"
bta = 1.0

[steps]
d = 2

[run]
n_max = 10
samples = 4
master_seed = 1

[output]
dir = "out"
"#;
        let err = toml::from_str::<ExperimentConfig>(text).unwrap_err();
        assert!(err.to_string().contains("bta"), "{err}");
    }

    #[test]
    fn semantic_validation_catches_missing_fields() {
        let text = r#"
experiment = "kpz"

[model]
dist = "log-gamma"
gamma = 0.5

[run]
samples = 200
master_seed = 1

[output]
dir = "out"
"#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        let err = validate(&cfg).unwrap_err();
        assert!(err.0.contains("n_grid"));
    }

    #[test]
    fn hash_is_stable_hex() {
        let h = hex_digest(b"abc");
        assert_eq!(
            h,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
