//! Experiment dispatch: each experiment reads its blocks from the parsed
//! config, drives the core modules, and writes byte-stable reports.

use rayon::prelude::*;
use serde::Serialize;

use rwrp_core::disorder::{self, DisorderThresholds, KpzModel};
use rwrp_core::env::{Environment, IntBox, Potential, SiteDistribution, StepSet};
use rwrp_core::error::Error as CoreError;
use rwrp_core::rng::{derive_seed, SplitMix64};
use rwrp_core::spectral;
use rwrp_core::transfer::{self, OracleOptions};
use rwrp_core::variational::{self, MinimizeOptions};
use rwrp_core::{freeenergy, variational::KprimeMinimizer};

use crate::config::{self, ExperimentConfig, ExperimentKind};
use crate::output::{Cell, Emitter};

#[derive(Debug)]
pub enum CliError {
    Core(CoreError),
    Io(std::io::Error),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

/// Exit code assigned to a failed run: 3 for exceeded budgets, 4 for
/// internal certification failures, 1 otherwise.
pub fn exit_code(err: &CliError) -> i32 {
    match err {
        CliError::Core(CoreError::PathBudgetExceeded { .. })
        | CliError::Core(CoreError::BoxTooLarge { .. })
        | CliError::Core(CoreError::InsufficientSamples { .. }) => 3,
        CliError::Core(CoreError::CertificationFailed { .. }) => 4,
        _ => 1,
    }
}

pub fn error_kind(err: &CliError) -> &'static str {
    match err {
        CliError::Core(CoreError::PathBudgetExceeded { .. })
        | CliError::Core(CoreError::BoxTooLarge { .. })
        | CliError::Core(CoreError::InsufficientSamples { .. }) => "budget-exceeded",
        CliError::Core(CoreError::CertificationFailed { .. }) => "certification-failed",
        CliError::Core(_) => "runtime",
        CliError::Io(_) => "io",
    }
}

/// Run the configured experiment; returns manifest notes.
pub fn run(cfg: &ExperimentConfig, emitter: &mut Emitter) -> Result<Vec<String>, CliError> {
    match cfg.experiment {
        ExperimentKind::FreeEnergy => free_energy(cfg, emitter),
        ExperimentKind::Variational => variational_experiment(cfg, emitter),
        ExperimentKind::RateFunction => rate_function(cfg, emitter),
        ExperimentKind::Disorder => disorder_experiment(cfg, emitter),
        ExperimentKind::Kpz => kpz(cfg, emitter),
        ExperimentKind::OracleSuite => oracle_suite(cfg, emitter),
    }
}

// ---------------------------------------------------------------------------
// free-energy
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct FeSide {
    value: f64,
    ci: f64,
    n: Option<usize>,
    samples: Option<usize>,
}

#[derive(Serialize)]
struct FeAnnealed {
    value: f64,
    exact: bool,
    divergent: bool,
}

#[derive(Serialize)]
struct FreeEnergyJson {
    config_hash: String,
    lambda_q: FeSide,
    lambda_a: FeAnnealed,
    gap: f64,
    verdict: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    ladder: Option<freeenergy::LadderEstimate>,
}

fn free_energy(cfg: &ExperimentConfig, emitter: &mut Emitter) -> Result<Vec<String>, CliError> {
    let model = config::build_iid_model(cfg)?;
    let n = cfg.run.n.expect("validated");
    let samples = cfg.run.samples.expect("validated");
    let master_seed = cfg.run.master_seed.expect("validated");

    let lambda_a = freeenergy::annealed_free_energy(&model.dist, &model.pot, &model.steps)?;
    let qs = freeenergy::quenched_samples(&model, n, samples, master_seed)?;
    let lambda_q = freeenergy::estimate_from_samples(&qs);
    let report = freeenergy::bound_report(lambda_q, lambda_a);

    let ladder = if cfg.run.ladder.unwrap_or(false) {
        Some(freeenergy::quenched_free_energy_ladder(
            &model,
            (n / 4).max(1),
            3,
            samples,
            master_seed,
        )?)
    } else {
        None
    };

    emitter.write_csv(
        "free_energy.csv",
        &["sample", "seed", "n", "log_z", "fe"],
        qs.values.iter().enumerate().map(|(i, (seed, lz))| {
            vec![
                Cell::Usize(i),
                Cell::U64(*seed),
                Cell::Usize(n),
                Cell::F64(*lz),
                Cell::F64(lz / n as f64),
            ]
        }),
    )?;
    let payload = FreeEnergyJson {
        config_hash: emitter.config_hash.clone(),
        lambda_q: FeSide {
            value: report.lambda_q.value,
            ci: report.lambda_q.ci_halfwidth,
            n: report.lambda_q.n_used,
            samples: report.lambda_q.samples,
        },
        lambda_a: FeAnnealed {
            value: report.lambda_a.value,
            exact: report.lambda_a.ci_halfwidth == 0.0,
            divergent: report.lambda_a.divergent,
        },
        gap: report.gap,
        verdict: report.verdict.clone(),
        ladder,
    };
    emitter.write_json("free_energy.json", &payload)?;
    Ok(vec![format!(
        "quenched estimator: mean of (1/n) log Z_n at n = {n} over {samples} environments, jackknife SE"
    )])
}

// ---------------------------------------------------------------------------
// variational
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct VariationalJson {
    config_hash: String,
    value: f64,
    log_rho: f64,
    certification_delta: f64,
    iterations: usize,
    per_site_u: Vec<f64>,
    per_site_slack: Vec<f64>,
}

fn variational_experiment(
    cfg: &ExperimentConfig,
    emitter: &mut Emitter,
) -> Result<Vec<String>, CliError> {
    let (env, pot, steps) = config::build_periodic(cfg)?;
    let result: KprimeMinimizer =
        variational::minimize_kprime(&env, &pot, &steps, &MinimizeOptions::default())?;
    let (log_rho, delta) = result.certification.expect("certification on by default");

    let periods = env.periods().expect("periodic").to_vec();
    let torus = rwrp_core::torus::Torus::new(&periods);
    emitter.write_csv(
        "variational.csv",
        &["site", "u", "slack"],
        (0..torus.size).map(|i| {
            let coords = torus.coords(i);
            let label = coords
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(" ");
            vec![
                Cell::Str(label),
                Cell::F64(result.field.log_g[i]),
                Cell::F64(result.per_site_slack[i]),
            ]
        }),
    )?;
    emitter.write_json(
        "variational.json",
        &VariationalJson {
            config_hash: emitter.config_hash.clone(),
            value: result.value,
            log_rho,
            certification_delta: delta,
            iterations: result.iterations,
            per_site_u: result.field.log_g.clone(),
            per_site_slack: result.per_site_slack.clone(),
        },
    )?;
    Ok(vec![format!(
        "certified against the Perron root: |delta| = {:.3e}",
        delta.abs()
    )])
}

// ---------------------------------------------------------------------------
// rate-function
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct RatePoint {
    v: Vec<f64>,
    i_q: f64,
    argmax: Vec<f64>,
    converged: bool,
}

#[derive(Serialize)]
struct RateJson {
    config_hash: String,
    points: Vec<RatePoint>,
}

fn rate_function(cfg: &ExperimentConfig, emitter: &mut Emitter) -> Result<Vec<String>, CliError> {
    let (env, pot, steps) = config::build_periodic(cfg)?;
    let d = steps.d();
    let velocities: Vec<Vec<f64>> = if let Some(vs) = &cfg.run.velocities {
        vs.clone()
    } else {
        let grid = cfg.run.v_grid.expect("validated");
        if d != 2 || !steps.is_directed() {
            return Err(CliError::Core(CoreError::Unsupported(
                "run.v_grid needs the directed d = 2 walk; use run.velocities otherwise".into(),
            )));
        }
        (0..grid)
            .map(|i| {
                let t = i as f64 / (grid - 1) as f64;
                vec![t, 1.0 - t]
            })
            .collect()
    };

    let points: Vec<RatePoint> = velocities
        .par_iter()
        .map(|v| {
            let res = spectral::rate_function(&env, &pot, &steps, v)?;
            Ok(RatePoint {
                v: v.clone(),
                i_q: res.value,
                argmax: res.argmax,
                converged: res.converged,
            })
        })
        .collect::<Result<Vec<RatePoint>, CoreError>>()?;

    let mut header: Vec<String> = (0..d).map(|i| format!("v{}", i + 1)).collect();
    header.push("i_q".into());
    header.extend((0..d).map(|i| format!("argmax{}", i + 1)));
    header.push("converged".into());
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    emitter.write_csv(
        "rate_function.csv",
        &header_refs,
        points.iter().map(|p| {
            let mut row: Vec<Cell> = p.v.iter().map(|&x| Cell::F64(x)).collect();
            row.push(Cell::F64(p.i_q));
            for i in 0..d {
                row.push(p.argmax.get(i).map_or(Cell::Empty, |&x| Cell::F64(x)));
            }
            row.push(Cell::Str(p.converged.to_string()));
            row
        }),
    )?;
    emitter.write_json(
        "rate_function.json",
        &RateJson {
            config_hash: emitter.config_hash.clone(),
            points,
        },
    )?;
    Ok(vec![
        "Legendre maximization: projected ascent, finite-difference gradients, 9 starts".into(),
    ])
}

// ---------------------------------------------------------------------------
// disorder
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct DisorderJson {
    config_hash: String,
    lambda_a: f64,
    classification: disorder::DisorderClass,
    trend_slope: f64,
    thresholds: DisorderThresholds,
    checkpoints: Vec<disorder::CheckpointStat>,
    overlap_classification: disorder::OverlapClass,
    overlap_decay_ratio: f64,
    overlap_tail_fraction: f64,
}

fn disorder_experiment(
    cfg: &ExperimentConfig,
    emitter: &mut Emitter,
) -> Result<Vec<String>, CliError> {
    let model = config::build_iid_model(cfg)?;
    let n_max = cfg.run.n_max.expect("validated");
    let samples = cfg.run.samples.expect("validated");
    let master_seed = cfg.run.master_seed.expect("validated");
    let defaults = DisorderThresholds::for_horizon(n_max);
    let t = &cfg.thresholds;
    let thresholds = DisorderThresholds {
        n_lo: t.n_lo.unwrap_or(defaults.n_lo),
        n_hi: t.n_hi.unwrap_or(defaults.n_hi),
        strong_decay: t.strong_decay.unwrap_or(defaults.strong_decay),
        weak_stability: t.weak_stability.unwrap_or(defaults.weak_stability),
        h_zero: t.h_zero.unwrap_or(defaults.h_zero),
        h_inf: t.h_inf.unwrap_or(defaults.h_inf),
    };

    let report =
        disorder::simulate_martingale(&model, n_max, samples, master_seed, Some(thresholds))?;
    let overlaps = disorder::overlap_series(&model, n_max, samples, master_seed)?;
    let batch = disorder::trajectory_batch(&model, n_max, samples, master_seed, report.lambda_a)?;

    emitter.write_csv(
        "disorder.csv",
        &["seed", "n", "log_W"],
        report.trajectories.iter().flat_map(|t| {
            t.log_w
                .iter()
                .enumerate()
                .map(move |(i, lw)| vec![Cell::U64(t.seed), Cell::Usize(i + 1), Cell::F64(*lw)])
        }),
    )?;
    emitter.write_csv(
        "trajectories.csv",
        &["seed", "n", "lambda", "log_h", "log_H", "W", "overlap"],
        batch.iter().flat_map(|sb| {
            let lambda = report.lambda_a;
            sb.rows.iter().map(move |row| {
                vec![
                    Cell::U64(sb.seed),
                    Cell::Usize(row.n),
                    Cell::F64(lambda),
                    Cell::F64(row.log_h),
                    row.log_bridge.map_or(Cell::Empty, Cell::F64),
                    Cell::F64(row.w),
                    Cell::F64(row.overlap),
                ]
            })
        }),
    )?;
    emitter.write_csv(
        "overlap.csv",
        &["n", "mean_overlap", "partial_sum"],
        (1..=n_max).map(|n| {
            vec![
                Cell::Usize(n),
                Cell::F64(overlaps.mean_overlap[n - 1]),
                Cell::F64(overlaps.partial_sums[n - 1]),
            ]
        }),
    )?;
    emitter.write_json(
        "disorder.json",
        &DisorderJson {
            config_hash: emitter.config_hash.clone(),
            lambda_a: report.lambda_a,
            classification: report.classification,
            trend_slope: report.trend_slope,
            thresholds: report.thresholds.clone(),
            checkpoints: report.checkpoints.clone(),
            overlap_classification: overlaps.classification,
            overlap_decay_ratio: overlaps.decay_ratio,
            overlap_tail_fraction: overlaps.tail_fraction,
        },
    )?;
    Ok(vec![format!(
        "martingale tilt lambda = Lambda_a = {} (exact); trajectories.csv carries the same tilt",
        report.lambda_a
    )])
}

// ---------------------------------------------------------------------------
// kpz
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct KpzJson {
    config_hash: String,
    chi_hat: f64,
    chi_se: f64,
    degenerate: bool,
    lambda_q_hat: f64,
    lambda_source: String,
    n_grid: Vec<usize>,
    std_log_bridge: Vec<f64>,
    samples: usize,
}

fn kpz(cfg: &ExperimentConfig, emitter: &mut Emitter) -> Result<Vec<String>, CliError> {
    let m = cfg.model.as_ref().expect("validated");
    let model = if m.potential.as_deref() == Some("zero") {
        KpzModel::ZeroPotential
    } else {
        KpzModel::LogGamma {
            gamma: m.gamma.ok_or_else(|| {
                CoreError::InvalidDistribution("kpz requires model.gamma (or potential = \"zero\")".into())
            })?,
        }
    };
    let n_grid = cfg.run.n_grid.clone().expect("validated");
    let samples = cfg.run.samples.expect("validated");
    let master_seed = cfg.run.master_seed.expect("validated");
    let probe = disorder::kpz_probe(model, &n_grid, samples, master_seed)?;

    emitter.write_csv(
        "kpz.csv",
        &["n", "sample", "log_H", "log_h"],
        probe.n_grid.iter().enumerate().flat_map(|(gi, &n)| {
            let lb = &probe.log_bridge[gi];
            let lh = &probe.log_h[gi];
            (0..lb.len()).map(move |s| {
                vec![
                    Cell::Usize(n),
                    Cell::Usize(s),
                    Cell::F64(lb[s]),
                    Cell::F64(lh[s]),
                ]
            })
        }),
    )?;
    emitter.write_json(
        "kpz.json",
        &KpzJson {
            config_hash: emitter.config_hash.clone(),
            chi_hat: probe.chi_hat,
            chi_se: probe.chi_se,
            degenerate: probe.degenerate,
            lambda_q_hat: probe.lambda_q_hat,
            lambda_source: probe.lambda_source.clone(),
            n_grid: probe.n_grid.clone(),
            std_log_bridge: probe.std_log_bridge.clone(),
            samples,
        },
    )?;
    Ok(vec![probe.lambda_source])
}

// ---------------------------------------------------------------------------
// oracle-suite
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct OracleJson {
    config_hash: String,
    instances: usize,
    max_rel_err: f64,
    max_bridge_rel_err: f64,
    tolerance: f64,
    pass: bool,
}

struct OracleRow {
    instance: usize,
    seed: u64,
    d: usize,
    n: usize,
    lambda: f64,
    log_z_dp: f64,
    log_z_oracle: f64,
    rel_err: f64,
    bridge_rel_err: Option<f64>,
}

fn oracle_instance(instance: usize, master_seed: u64, d: usize) -> Result<OracleRow, CoreError> {
    let seed = derive_seed(master_seed, instance as u64);
    let mut rng = SplitMix64::new(seed);
    let steps = StepSet::directed(d)?;
    let n = 2 + (rng.next_raw() % 7) as usize; // 2..=8
    let lambda = rng.uniform() * 2.0 - 1.0;
    let beta = 0.3 + rng.uniform();
    let (dist, bound) = if rng.uniform() < 0.5 {
        (
            SiteDistribution::Bernoulli {
                p: 0.3 + 0.4 * rng.uniform(),
                lo: -1.0,
                hi: 1.0,
            },
            1.0,
        )
    } else {
        (
            SiteDistribution::Gaussian {
                mean: 0.0,
                sd: 1.0,
                trunc: 2.0,
            },
            2.0,
        )
    };
    let pot = Potential::site_linear(beta, Some(bound));
    let env = Environment::iid(dist, IntBox::cube(d, n as i64 + 1)?, rng.next_raw())?;
    let start = vec![0i64; d];
    let kernel = transfer::level_recursion(&env, &pot, &steps, n, lambda, &start)?;
    let oracle = transfer::enumerate_oracle(&env, &pot, &steps, n, &start, &OracleOptions::default())?;
    let oracle_tilted = oracle.log_z - n as f64 * lambda;
    let rel_err = ((kernel.log_total - oracle_tilted).exp() - 1.0).abs();
    let bridge_rel_err = if n % d == 0 {
        let lh = transfer::bridge_log_h(&env, &pot, &steps, n, lambda)?;
        let pin = vec![(n / d) as i64; d];
        let pinned = transfer::enumerate_oracle(
            &env,
            &pot,
            &steps,
            n,
            &start,
            &OracleOptions {
                pin: Some(pin),
                ..OracleOptions::default()
            },
        )?;
        Some(((lh - (pinned.log_z - n as f64 * lambda)).exp() - 1.0).abs())
    } else {
        None
    };
    Ok(OracleRow {
        instance,
        seed,
        d,
        n,
        lambda,
        log_z_dp: kernel.log_total,
        log_z_oracle: oracle_tilted,
        rel_err,
        bridge_rel_err,
    })
}

fn oracle_suite(cfg: &ExperimentConfig, emitter: &mut Emitter) -> Result<Vec<String>, CliError> {
    let instances = cfg.run.samples.expect("validated");
    let master_seed = cfg.run.master_seed.expect("validated");
    let d = cfg.steps.as_ref().map(|s| s.d).unwrap_or(2);
    if !(2..=4).contains(&d) {
        return Err(CliError::Core(CoreError::Unsupported(
            "oracle-suite runs directed walks with d in 2..=4".into(),
        )));
    }
    let rows: Vec<OracleRow> = (0..instances)
        .into_par_iter()
        .map(|i| oracle_instance(i, master_seed, d))
        .collect::<Result<Vec<OracleRow>, CoreError>>()?;

    let max_rel_err = rows.iter().fold(0.0f64, |m, r| m.max(r.rel_err));
    let max_bridge = rows
        .iter()
        .filter_map(|r| r.bridge_rel_err)
        .fold(0.0f64, f64::max);
    let tolerance = 1e-12;
    emitter.write_csv(
        "oracle_suite.csv",
        &[
            "instance",
            "seed",
            "d",
            "n",
            "lambda",
            "log_z_dp",
            "log_z_oracle",
            "rel_err",
            "bridge_rel_err",
        ],
        rows.iter().map(|r| {
            vec![
                Cell::Usize(r.instance),
                Cell::U64(r.seed),
                Cell::Usize(r.d),
                Cell::Usize(r.n),
                Cell::F64(r.lambda),
                Cell::F64(r.log_z_dp),
                Cell::F64(r.log_z_oracle),
                Cell::F64(r.rel_err),
                r.bridge_rel_err.map_or(Cell::Empty, Cell::F64),
            ]
        }),
    )?;
    let pass = max_rel_err <= tolerance && max_bridge <= tolerance;
    emitter.write_json(
        "oracle_suite.json",
        &OracleJson {
            config_hash: emitter.config_hash.clone(),
            instances,
            max_rel_err,
            max_bridge_rel_err: max_bridge,
            tolerance,
            pass,
        },
    )?;
    if !pass {
        return Err(CliError::Core(CoreError::CertificationFailed {
            value: max_rel_err.max(max_bridge),
            reference: 0.0,
            delta: max_rel_err.max(max_bridge),
            tol: tolerance,
        }));
    }
    Ok(vec![format!(
        "{instances} instances, max relative error {max_rel_err:.3e}"
    )])
}
