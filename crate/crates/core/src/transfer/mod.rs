//! Partition functions and point-to-point kernels by exact forward
//! recursion, the normalized martingale, bridge weights, endpoint
//! statistics, and a brute-force path-enumeration oracle.

mod dp;
pub(crate) mod simplex;

pub use dp::LevelDp;

use std::collections::BTreeMap;

use crate::env::{Environment, Potential, SiteLookup, StepSet};
use crate::error::{Error, Result};
use crate::freeenergy;
use crate::numeric::LogSumExp;

/// Point-to-point kernel at a fixed level: log h_n^λ(ω, x) over the
/// reachable set D_n, plus the total log h_n^λ(ω). Log values are computed
/// from the untilted recursion and shifted by exactly −nλ, so changing λ
/// shifts every entry rigidly.
#[derive(Clone, Debug)]
pub struct LevelKernel {
    pub n: usize,
    pub lambda: f64,
    pub start: Vec<i64>,
    /// (site, log value), sorted by site.
    pub sites: Vec<(Vec<i64>, f64)>,
    pub log_total: f64,
}

impl LevelKernel {
    pub fn log_value_at(&self, x: &[i64]) -> Option<f64> {
        self.sites
            .binary_search_by(|(s, _)| s.as_slice().cmp(x))
            .ok()
            .map(|i| self.sites[i].1)
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }
}

/// Endpoint distribution μ_n and its replica overlap Σ_x μ_n(x)².
#[derive(Clone, Debug)]
pub struct EndpointStats {
    pub n: usize,
    /// (site, probability), sorted by site; sums to one.
    pub distribution: Vec<(Vec<i64>, f64)>,
    pub overlap: f64,
}

/// h_n^λ(ω, ·) by forward recursion over levels D_1..D_n.
pub fn level_recursion(
    env: &dyn SiteLookup,
    pot: &Potential,
    steps: &StepSet,
    n: usize,
    lambda: f64,
    start: &[i64],
) -> Result<LevelKernel> {
    if n == 0 {
        return Err(Error::Unsupported("level_recursion needs n >= 1".into()));
    }
    let mut dp = LevelDp::new(env, pot, steps, start, n)?;
    for _ in 0..n {
        dp.advance()?;
    }
    Ok(dp.materialize(lambda))
}

/// log Z_n from `start`; n = 0 gives 0 by the empty-product convention.
pub fn partition_function(
    env: &dyn SiteLookup,
    pot: &Potential,
    steps: &StepSet,
    n: usize,
    start: &[i64],
) -> Result<f64> {
    if n == 0 {
        return Ok(0.0);
    }
    let mut dp = LevelDp::new(env, pot, steps, start, n)?;
    for _ in 0..n {
        dp.advance()?;
    }
    Ok(dp.log_total())
}

/// The normalized partition function W_n = Z_n / E[Z_n] = h_n^λ at
/// λ = Λ_a(V). Requires a directed step set and an i.i.d. environment.
pub fn martingale_w(
    env: &Environment,
    pot: &Potential,
    steps: &StepSet,
    n: usize,
) -> Result<f64> {
    if !steps.is_directed() {
        return Err(Error::NotDirected("martingale_w"));
    }
    let dist = env.dist().ok_or(Error::NotIid("martingale_w"))?;
    let ann = freeenergy::annealed_free_energy(dist, pot, steps)?;
    if !ann.value.is_finite() {
        return Err(Error::DivergentAnnealed("martingale_w"));
    }
    let start = vec![0i64; steps.d()];
    let log_z = partition_function(env, pot, steps, n, &start)?;
    Ok((log_z - n as f64 * ann.value).exp())
}

/// log H_n: the bridge weight pinned at X_n = (n/d, ..., n/d), offset by
/// −n·λ_q. The caller supplies λ_q (spectral value on periodic
/// environments, an estimate on i.i.d. ones).
pub fn bridge_log_h(
    env: &dyn SiteLookup,
    pot: &Potential,
    steps: &StepSet,
    n: usize,
    lambda_q: f64,
) -> Result<f64> {
    if !steps.is_directed() {
        return Err(Error::NotDirected("bridge_log_h"));
    }
    let d = steps.d();
    if n % d != 0 {
        return Err(Error::NotDivisible { n, d });
    }
    let start = vec![0i64; d];
    let mut dp = LevelDp::new(env, pot, steps, &start, n)?;
    for _ in 0..n {
        dp.advance()?;
    }
    let log_u = dp
        .log_diagonal()
        .ok_or_else(|| Error::Unsupported("diagonal endpoint unreachable".into()))?;
    Ok(log_u - n as f64 * lambda_q)
}

/// Endpoint distribution μ_n(x) = h_n^λ(ω, x)/h_n^λ(ω) and the replica
/// overlap. The tilt cancels in the ratio.
pub fn endpoint_stats(
    env: &dyn SiteLookup,
    pot: &Potential,
    steps: &StepSet,
    n: usize,
    start: &[i64],
) -> Result<EndpointStats> {
    if n == 0 {
        return Err(Error::Unsupported("endpoint_stats needs n >= 1".into()));
    }
    let mut dp = LevelDp::new(env, pot, steps, start, n)?;
    for _ in 0..n {
        dp.advance()?;
    }
    Ok(EndpointStats {
        n,
        distribution: dp.endpoint_distribution(),
        overlap: dp.overlap(),
    })
}

/// Options for the enumeration oracle.
#[derive(Clone, Debug)]
pub struct OracleOptions {
    /// Keep only paths ending at this site.
    pub pin: Option<Vec<i64>>,
    /// Retain per-path (step indices, log weight) records.
    pub keep_paths: bool,
    /// Accumulate per-endpoint log sums.
    pub per_endpoint: bool,
    /// Refuse enumerations beyond this many paths.
    pub path_cap: u128,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            pin: None,
            keep_paths: false,
            per_endpoint: false,
            path_cap: 10_000_000,
        }
    }
}

/// Result of explicit path summation.
#[derive(Clone, Debug)]
pub struct PathWeightOracleResult {
    /// log Σ over (possibly pinned) paths of e^{ΣV} p^n; −∞ if none.
    pub log_z: f64,
    /// Number of paths enumerated (before pinning).
    pub paths: u128,
    pub per_path: Option<Vec<(Vec<usize>, f64)>>,
    pub per_endpoint: Option<BTreeMap<Vec<i64>, f64>>,
}

/// Ground-truth summation of e^{ΣV} over every path explicitly, in a fixed
/// lexicographic step order. Everything else in this module is checked
/// against it.
pub fn enumerate_oracle(
    env: &dyn SiteLookup,
    pot: &Potential,
    steps: &StepSet,
    n: usize,
    start: &[i64],
    opts: &OracleOptions,
) -> Result<PathWeightOracleResult> {
    let r = steps.len() as u128;
    let total_paths = r
        .checked_pow(n as u32)
        .ok_or(Error::PathBudgetExceeded {
            paths: u128::MAX,
            cap: opts.path_cap,
        })?;
    if total_paths > opts.path_cap {
        return Err(Error::PathBudgetExceeded {
            paths: total_paths,
            cap: opts.path_cap,
        });
    }
    let mut walker = OracleWalker {
        env,
        pot,
        steps,
        n,
        log_p: steps.log_kernel_weight(),
        opts,
        acc: LogSumExp::new(),
        per_path: if opts.keep_paths { Some(Vec::new()) } else { None },
        per_endpoint: if opts.per_endpoint { Some(BTreeMap::new()) } else { None },
        path: vec![0usize; n],
        site: start.to_vec(),
    };
    walker.descend(0, 0.0)?;

    Ok(PathWeightOracleResult {
        log_z: walker.acc.value(),
        paths: total_paths,
        per_path: walker.per_path,
        per_endpoint: walker
            .per_endpoint
            .map(|m| m.into_iter().map(|(k, v)| (k, v.value())).collect()),
    })
}

/// Depth-first enumeration state; steps explored in lexicographic index
/// order so the traversal (and every accumulation) is fixed.
struct OracleWalker<'a> {
    env: &'a dyn SiteLookup,
    pot: &'a Potential,
    steps: &'a StepSet,
    n: usize,
    log_p: f64,
    opts: &'a OracleOptions,
    acc: LogSumExp,
    per_path: Option<Vec<(Vec<usize>, f64)>>,
    per_endpoint: Option<BTreeMap<Vec<i64>, LogSumExp>>,
    path: Vec<usize>,
    site: Vec<i64>,
}

impl OracleWalker<'_> {
    fn descend(&mut self, depth: usize, sum_v: f64) -> Result<()> {
        if depth == self.n {
            let logw = sum_v + self.n as f64 * self.log_p;
            let keep = self
                .opts
                .pin
                .as_ref()
                .map_or(true, |p| p.as_slice() == self.site.as_slice());
            if keep {
                self.acc.add(logw);
                if let Some(list) = &mut self.per_path {
                    list.push((self.path.clone(), logw));
                }
            }
            if let Some(map) = &mut self.per_endpoint {
                map.entry(self.site.clone())
                    .or_insert_with(LogSumExp::new)
                    .add(logw);
            }
            return Ok(());
        }
        let gamma = self.env.site_value(&self.site)?;
        for k in 0..self.steps.len() {
            self.path[depth] = k;
            let v = self.pot.value(gamma, k);
            for (s, dz) in self.site.iter_mut().zip(&self.steps.steps()[k]) {
                *s += dz;
            }
            self.descend(depth + 1, sum_v + v)?;
            for (s, dz) in self.site.iter_mut().zip(&self.steps.steps()[k]) {
                *s -= dz;
            }
        }
        Ok(())
    }
}
