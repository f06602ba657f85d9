//! Cross-module invariants: spectral vs recursion convergence rates,
//! annealing bounds along whole trajectories, disorder-diagnostic
//! consistency, and probe stability under sample doubling.

use rwrp_core::disorder::{self, KpzModel};
use rwrp_core::env::{Environment, IidModel, Potential, SiteDistribution, StepSet};
use rwrp_core::numeric::ols_fit;
use rwrp_core::rng::SplitMix64;
use rwrp_core::spectral;
use rwrp_core::transfer;
use rwrp_core::variational::{self, KArg};

fn bernoulli(p: f64) -> SiteDistribution {
    SiteDistribution::Bernoulli {
        p,
        lo: 0.0,
        hi: 1.0,
    }
}

#[test]
fn spectral_recursion_gap_decays_like_one_over_n() {
    // |log ρ − (1/n) log Z_n| ~ C/n: the log-log slope sits near −1
    let mut rng = SplitMix64::new(616);
    let steps = StepSet::directed(2).unwrap();
    for trial in 0..3 {
        let values: Vec<f64> = (0..16).map(|_| rng.uniform() * 2.0 - 1.0).collect();
        let env = Environment::periodic(values, vec![4, 4]).unwrap();
        let pot = Potential::site_linear(1.0, Some(1.0));
        let op = spectral::build_operator(&env, &pot, &steps, &[0.0, 0.0]).unwrap();
        let log_rho = spectral::log_spectral_radius(&op).unwrap().log_rho;
        let ns = [64usize, 128, 256, 512, 1024, 2048];
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for &n in &ns {
            let log_z = transfer::partition_function(&env, &pot, &steps, n, &[0, 0]).unwrap();
            let gap = (log_z / n as f64 - log_rho).abs();
            assert!(gap > 0.0, "exact agreement would break the slope fit");
            xs.push((n as f64).ln());
            ys.push(gap.ln());
        }
        let (slope, _, _) = ols_fit(&xs, &ys);
        assert!(
            (-1.2..=-0.8).contains(&slope),
            "trial {trial}: decay slope {slope}"
        );
    }
}

#[test]
fn minimizer_certifies_beyond_the_default_scale() {
    // a taste of the ignored soak battery: 5x5 tori and stronger coupling
    let steps = StepSet::directed(2).unwrap();
    let mut rng = SplitMix64::new(0x50AC);
    for trial in 0..6 {
        let (px, py) = [(4, 4), (5, 4), (5, 5)][trial % 3];
        let s = (px * py) as usize;
        let beta = 1.0 + 0.9 * rng.uniform();
        let vals: Vec<f64> = (0..s).map(|_| rng.uniform() * 2.0 - 1.0).collect();
        let env = Environment::periodic(vals, vec![px, py]).unwrap();
        let pot = Potential::site_linear(beta, Some(1.0));
        let m = variational::minimize_kprime(&env, &pot, &steps, &Default::default())
            .unwrap_or_else(|e| panic!("trial {trial} ({px}x{py}, beta {beta:.2}): {e}"));
        let (_, delta) = m.certification.unwrap();
        assert!(delta.abs() < 1e-6);
    }
}

#[test]
fn bounded_fields_lose_nothing_on_the_torus() {
    // the restricted infimum (fields with explicit floor/ceiling) still
    // reaches the Perron root: on a finite torus every positive field is
    // bounded, and the minimizer's own bounds certify it
    let mut rng = SplitMix64::new(77);
    let values: Vec<f64> = (0..9).map(|_| rng.uniform() * 2.0 - 1.0).collect();
    let env = Environment::periodic(values, vec![3, 3]).unwrap();
    let pot = Potential::site_linear(1.0, Some(1.0));
    let steps = StepSet::directed(2).unwrap();
    let result = variational::minimize_kprime(
        &env,
        &pot,
        &steps,
        &variational::MinimizeOptions::default(),
    )
    .unwrap();
    let (floor, ceiling) = result.field.bounds();
    assert!(floor > 0.0 && ceiling.is_finite());
    let (log_rho, delta) = result.certification.unwrap();
    assert!(delta.abs() <= 1e-6, "value {} vs {log_rho}", result.value);
}

#[test]
fn trajectory_annealing_bound_holds_at_every_checkpoint() {
    // Jensen: E[(1/n) log Z_n] ≤ Λ_a, i.e. mean log W_n ≤ 0 + noise
    let model = IidModel::new(
        bernoulli(0.5),
        Potential::site_linear(0.7, Some(1.0)),
        StepSet::directed(2).unwrap(),
    )
    .unwrap();
    let report = disorder::simulate_martingale(&model, 80, 400, 21, None).unwrap();
    for n in 1..=80usize {
        let logs: Vec<f64> = report
            .trajectories
            .iter()
            .map(|t| t.log_w[n - 1])
            .collect();
        let mean = logs.iter().sum::<f64>() / logs.len() as f64;
        let var = logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (logs.len() - 1) as f64;
        let se = (var / logs.len() as f64).sqrt();
        assert!(
            mean <= 3.0 * se,
            "n = {n}: mean log W = {mean} exceeds 3·SE = {}",
            3.0 * se
        );
    }
}

#[test]
fn weak_disorder_h_tails_stay_finite() {
    // d = 4, small β: the tilted kernel at λ = Λ_a has tails bounded away
    // from 0 and ∞ for nearly every seed
    let model = IidModel::new(
        bernoulli(0.5),
        Potential::site_linear(0.2, Some(1.0)),
        StepSet::directed(4).unwrap(),
    )
    .unwrap();
    let lambda_a =
        rwrp_core::freeenergy::annealed_free_energy(&model.dist, &model.pot, &model.steps)
            .unwrap()
            .value;
    let report = disorder::h_event_diagnostics(&model, lambda_a, 60, 60, 17, None).unwrap();
    let finite = report.min_finite.min(report.max_finite);
    assert!(
        finite * 100 >= 95 * report.samples,
        "only {}/{} seeds kept finite tails (mins {} / maxes {})",
        finite,
        report.samples,
        report.min_finite,
        report.max_finite
    );
}

#[test]
fn overlap_partial_sums_flatten_at_weak_disorder() {
    let model = IidModel::new(
        bernoulli(0.5),
        Potential::site_linear(0.2, Some(1.0)),
        StepSet::directed(4).unwrap(),
    )
    .unwrap();
    let series = disorder::overlap_series(&model, 100, 24, 5).unwrap();
    assert_eq!(
        series.classification,
        disorder::OverlapClass::WeakLike,
        "tail fraction {}, decay ratio {}",
        series.tail_fraction,
        series.decay_ratio
    );
    // the flattening is visible well before n = 100
    let s50 = series.partial_sums[49];
    let s100 = series.partial_sums[99];
    assert!((s100 - s50) / s100 < 0.1);
}

#[test]
fn kpz_probe_stable_under_sample_doubling() {
    // The sampling error of the fitted exponent follows from the known
    // error of a sample standard deviation, Var(ln s) ≈ 1/(2(m−1)),
    // propagated through the least-squares slope. The residual-based OLS
    // error is unreliable on a three-point fit and is not used here.
    let grid = [32usize, 64, 128];
    let slope_se = |m: usize| -> f64 {
        let sigma_y = (1.0 / (2.0 * (m as f64 - 1.0))).sqrt();
        let xs: Vec<f64> = grid.iter().map(|&n| (n as f64).ln()).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let sxx: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
        sigma_y / sxx.sqrt()
    };
    let a = disorder::kpz_probe(KpzModel::LogGamma { gamma: 0.5 }, &grid, 200, 31).unwrap();
    let b = disorder::kpz_probe(KpzModel::LogGamma { gamma: 0.5 }, &grid, 400, 31).unwrap();
    let se = (slope_se(200).powi(2) + slope_se(400).powi(2)).sqrt();
    assert!(
        (a.chi_hat - b.chi_hat).abs() <= 2.0 * se,
        "χ̂ moved from {} to {} (2·SE = {})",
        a.chi_hat,
        b.chi_hat,
        2.0 * se
    );
}

#[test]
fn bridge_stays_below_kernel_along_trajectories() {
    // log H_n ≤ log h_n per sample at the same tilt
    let model = IidModel::new(
        bernoulli(0.5),
        Potential::site_linear(1.0, Some(1.0)),
        StepSet::directed(2).unwrap(),
    )
    .unwrap();
    let lambda =
        rwrp_core::freeenergy::annealed_free_energy(&model.dist, &model.pot, &model.steps)
            .unwrap()
            .value;
    let batch = disorder::trajectory_batch(&model, 40, 12, 9, lambda).unwrap();
    for sb in &batch {
        for row in &sb.rows {
            if let Some(lb) = row.log_bridge {
                assert!(lb <= row.log_h + 1e-13, "seed {} n {}", sb.seed, row.n);
            }
        }
    }
}

#[test]
fn embedded_rwre_normalizes_and_reproduces_path_probabilities() {
    // biased directed RWRE: embedding gives Λ_q = 0 on the one-site torus
    // and reproduces path probabilities exactly
    let steps = StepSet::directed(2).unwrap();
    let kernel = rwrp_core::env::RwreKernel {
        site_values: vec![],
        rows: vec![vec![0.75, 0.25]],
    };
    let pot = rwrp_core::env::rwre_to_potential(&kernel, &steps).unwrap();
    let env = Environment::periodic(vec![0.0], vec![1, 1]).unwrap();
    let op = spectral::build_operator(&env, &pot, &steps, &[0.0, 0.0]).unwrap();
    let log_rho = spectral::log_spectral_radius(&op).unwrap().log_rho;
    assert!(log_rho.abs() < 1e-14, "Λ_q of embedded RWRE = {log_rho}");

    // all 2^3 paths at n = 3: uniform-base weight equals ∏ kernel steps
    let n = 3;
    let opts = transfer::OracleOptions {
        keep_paths: true,
        ..transfer::OracleOptions::default()
    };
    let oracle = transfer::enumerate_oracle(&env, &pot, &steps, n, &[0, 0], &opts).unwrap();
    for (path, logw) in oracle.per_path.unwrap() {
        let expected: f64 = path
            .iter()
            .map(|&z| kernel.rows[0][z].ln())
            .sum();
        assert!(
            (logw - expected).abs() < 1e-12,
            "path {path:?}: {logw} vs {expected}"
        );
    }
}

#[test]
fn site_dependent_rwre_roundtrip_up_to_length_six() {
    // kernel rows keyed by the two Bernoulli site values; every path of
    // length <= 6 carries exactly the product of its transition
    // probabilities after embedding
    let steps = StepSet::directed(2).unwrap();
    let kernel = rwrp_core::env::RwreKernel {
        site_values: vec![0.0, 1.0],
        rows: vec![vec![0.6, 0.4], vec![0.15, 0.85]],
    };
    let pot = rwrp_core::env::rwre_to_potential(&kernel, &steps).unwrap();
    let env = Environment::iid(
        bernoulli(0.5),
        rwrp_core::env::IntBox::cube(2, 8).unwrap(),
        77,
    )
    .unwrap();
    for n in 1..=6usize {
        let opts = transfer::OracleOptions {
            keep_paths: true,
            ..transfer::OracleOptions::default()
        };
        let oracle =
            transfer::enumerate_oracle(&env, &pot, &steps, n, &[0, 0], &opts).unwrap();
        for (path, logw) in oracle.per_path.unwrap() {
            // walk the path, multiplying the kernel entries it uses
            let mut site = vec![0i64, 0];
            let mut expected = 0.0f64;
            for &z in &path {
                let value = rwrp_core::env::SiteLookup::site_value(&env, &site).unwrap();
                let row = if value == 0.0 { 0 } else { 1 };
                expected += kernel.rows[row][z].ln();
                site[z] += 1;
            }
            let rel = ((logw - expected).exp() - 1.0).abs();
            assert!(rel <= 1e-12, "n = {n}, path {path:?}: rel err {rel:.2e}");
        }
    }
}

#[test]
fn near_minimizer_value_decreases_toward_the_free_energy() {
    // λ ↦ K'(V, g_λ) stays ≤ λ and approaches Λ_q as λ comes down
    let mut rng = SplitMix64::new(212);
    let values: Vec<f64> = (0..4).map(|_| rng.uniform() * 2.0 - 1.0).collect();
    let env = Environment::periodic(values, vec![2, 2]).unwrap();
    let pot = Potential::site_linear(1.0, Some(1.0));
    let steps = StepSet::directed(2).unwrap();
    let op = spectral::build_operator(&env, &pot, &steps, &[0.0, 0.0]).unwrap();
    let lambda_q = spectral::log_spectral_radius(&op).unwrap().log_rho;
    let mut last = f64::INFINITY;
    for offset in [0.4, 0.2, 0.1, 0.05] {
        let lam = lambda_q + offset;
        let g = variational::g_lambda_truncated(&env, &pot, &steps, lam, 4000).unwrap();
        let k = variational::k_functional(&env, &pot, &steps, KArg::LogGradientOf(&g)).unwrap();
        assert!(k <= lam, "K' = {k} exceeds λ = {lam}");
        assert!(k >= lambda_q - 1e-10, "K' = {k} below Λ_q = {lambda_q}");
        assert!(k < last, "K' not decreasing as λ ↓ Λ_q");
        last = k;
    }
    assert!(last - lambda_q < 0.06, "K' did not approach Λ_q: {last} vs {lambda_q}");
}

#[test]
fn quenched_gap_grows_with_disorder_strength() {
    // β ∈ {0.5, 1, 2}: the estimated annealed-quenched gap increases
    let mut gaps = Vec::new();
    for beta in [0.5, 1.0, 2.0] {
        let model = IidModel::new(
            bernoulli(0.5),
            Potential::site_linear(beta, Some(1.0)),
            StepSet::directed(2).unwrap(),
        )
        .unwrap();
        let report = rwrp_core::freeenergy::annealing_bound_check(&model, 96, 48, 13).unwrap();
        assert!(report.bound_satisfied);
        gaps.push(report.gap);
    }
    assert!(
        gaps[0] < gaps[1] && gaps[1] < gaps[2],
        "gaps not increasing in β: {gaps:?}"
    );
}

#[test]
fn quenched_estimator_constant_shift_covariance() {
    // adding c to the potential shifts the estimator by exactly c when
    // the environment seeds are shared
    let c = 0.65;
    let steps = StepSet::directed(2).unwrap();
    let base = IidModel::new(
        bernoulli(0.5),
        Potential::table(vec![(0.0, vec![0.2, -0.1]), (1.0, vec![0.7, 0.4])]),
        steps.clone(),
    )
    .unwrap();
    let shifted = IidModel::new(
        bernoulli(0.5),
        Potential::table(vec![
            (0.0, vec![0.2 + c, -0.1 + c]),
            (1.0, vec![0.7 + c, 0.4 + c]),
        ]),
        steps,
    )
    .unwrap();
    let a = rwrp_core::freeenergy::quenched_free_energy_mc(&base, 32, 16, 9).unwrap();
    let b = rwrp_core::freeenergy::quenched_free_energy_mc(&shifted, 32, 16, 9).unwrap();
    assert!(
        (b.value - a.value - c).abs() <= 1e-12,
        "estimator shift {} vs c = {c}",
        b.value - a.value
    );
}

#[test]
fn k_functional_agrees_between_cocycle_and_field_forms() {
    // K(V, ∇*g) = K'(V, g) exactly
    let mut rng = SplitMix64::new(123);
    let values: Vec<f64> = (0..6).map(|_| rng.uniform() - 0.5).collect();
    let env = Environment::periodic(values, vec![3, 2]).unwrap();
    let pot = Potential::site_linear(1.0, Some(0.5));
    let steps = StepSet::directed(2).unwrap();
    for _ in 0..20 {
        let u: Vec<f64> = (0..6).map(|_| rng.uniform() * 2.0 - 1.0).collect();
        let g = variational::PositiveField::from_log_values(vec![3, 2], u).unwrap();
        let f = variational::log_gradient(&g, &steps);
        let k_g = variational::k_functional(&env, &pot, &steps, KArg::LogGradientOf(&g)).unwrap();
        let k_f = variational::k_functional(&env, &pot, &steps, KArg::Cocycle(&f)).unwrap();
        assert!((k_g - k_f).abs() < 1e-13);
    }
}
