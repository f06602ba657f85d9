//! Long randomized battery beyond the sizes the default suite runs at.
//! Ignored by default; run with `cargo test -p rwrp-core --test soak -- --ignored`.

use rwrp_core::env::{Environment, IntBox, Potential, SiteDistribution, StepSet};
use rwrp_core::rng::SplitMix64;
use rwrp_core::spectral;
use rwrp_core::transfer::{self, OracleOptions};
use rwrp_core::variational;

#[test]
#[ignore = "long randomized battery"]
fn minimizer_certifies_on_sixty_tori_up_to_5x5() {
    let steps = StepSet::directed(2).unwrap();
    let mut rng = SplitMix64::new(0x50AC);
    let mut worst = 0.0f64;
    for trial in 0..60 {
        let (px, py) = [(2, 2), (3, 3), (4, 4), (5, 4), (5, 5), (3, 2)][trial % 6];
        let s = (px * py) as usize;
        let beta = 0.5 + 1.5 * rng.uniform();
        let vals: Vec<f64> = (0..s).map(|_| rng.uniform() * 2.0 - 1.0).collect();
        let env = Environment::periodic(vals, vec![px, py]).unwrap();
        let pot = Potential::site_linear(beta, Some(1.0));
        let m = variational::minimize_kprime(&env, &pot, &steps, &Default::default())
            .unwrap_or_else(|e| panic!("trial {trial} ({px}x{py}, beta {beta:.2}): {e}"));
        let (_, delta) = m.certification.unwrap();
        worst = worst.max(delta.abs());
    }
    println!("worst |delta| over 60 tori: {worst:.3e}");
    assert!(worst < 1e-6);
}

#[test]
#[ignore = "long randomized battery"]
fn recursion_matches_oracle_on_two_hundred_instances() {
    let mut rng = SplitMix64::new(0x50AD);
    let mut worst = 0.0f64;
    for trial in 0..200 {
        let d = 2 + trial % 3;
        let steps = StepSet::directed(d).unwrap();
        let n = 2 + (rng.next_raw() % 6) as usize;
        let lambda = rng.uniform() * 4.0 - 2.0;
        let beta = 0.2 + 1.8 * rng.uniform();
        let dist = SiteDistribution::Gaussian {
            mean: 0.0,
            sd: 1.0,
            trunc: 2.5,
        };
        let env = Environment::iid(
            dist,
            IntBox::cube(d, n as i64 + 1).unwrap(),
            rng.next_raw(),
        )
        .unwrap();
        let pot = Potential::site_linear(beta, Some(2.5));
        let start = vec![0i64; d];
        let k = transfer::level_recursion(&env, &pot, &steps, n, lambda, &start).unwrap();
        let o = transfer::enumerate_oracle(&env, &pot, &steps, n, &start, &OracleOptions::default())
            .unwrap();
        let err = ((k.log_total - (o.log_z - n as f64 * lambda)).exp() - 1.0).abs();
        worst = worst.max(err);
        assert!(err <= 1e-12, "trial {trial}: {err:.2e}");
        if n % d == 0 {
            let b = transfer::bridge_log_h(&env, &pot, &steps, n, lambda).unwrap();
            let pin = vec![(n / d) as i64; d];
            let po = transfer::enumerate_oracle(
                &env,
                &pot,
                &steps,
                n,
                &start,
                &OracleOptions {
                    pin: Some(pin),
                    ..Default::default()
                },
            )
            .unwrap();
            let err = ((b - (po.log_z - n as f64 * lambda)).exp() - 1.0).abs();
            worst = worst.max(err);
            assert!(err <= 1e-12, "bridge trial {trial}: {err:.2e}");
        }
    }
    println!("worst relative error over 200 instances: {worst:.3e}");
}

#[test]
#[ignore = "long randomized battery"]
fn rate_function_sweep_survives_extreme_tilts() {
    // the ascent hits near-defective tilted operators along the way; the
    // sweep must complete and stay convex
    let env = Environment::periodic(
        (0..9).map(|i| ((i * 5 % 9) as f64) * 0.25 - 1.0).collect(),
        vec![3, 3],
    )
    .unwrap();
    let pot = Potential::site_linear(1.0, Some(1.0));
    let steps = StepSet::directed(2).unwrap();
    let mut vals = Vec::new();
    for i in 0..=10 {
        let t = 0.05 + 0.9 * (i as f64 / 10.0);
        let r = spectral::rate_function(&env, &pot, &steps, &[t, 1.0 - t]).unwrap();
        assert!(r.value.is_finite() && r.value >= 0.0);
        vals.push(r.value);
    }
    for w in vals.windows(3) {
        assert!(w[1] <= 0.5 * (w[0] + w[2]) + 1e-8, "convexity violated: {w:?}");
    }
}
