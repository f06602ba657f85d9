//! The functionals K(V, F) and K'(V, g) on periodic environments, cocycle
//! verification, direct convex minimization of K' over positive fields,
//! and the explicit near-minimizer built from the tilted kernels h_n^λ.
//!
//! On a torus the essential supremum is an exact maximum over sites, and
//! every centered cocycle is the log-gradient of a positive field, so the
//! infimum over log-gradients loses nothing there.

use crate::env::{Environment, Potential, SiteLookup, StepSet};
use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, LogSumExp};
use crate::spectral;
use crate::torus::{strongly_connected, Torus};
use crate::transfer::LevelDp;

/// F(T_xω, z) tabulated over torus sites and steps.
#[derive(Clone, Debug)]
pub struct CocycleField {
    pub periods: Vec<i64>,
    /// values[site_index][step_index]
    pub values: Vec<Vec<f64>>,
}

impl CocycleField {
    /// Per-step site averages; all zero for a centered field.
    pub fn step_means(&self) -> Vec<f64> {
        let s = self.values.len() as f64;
        let r = self.values[0].len();
        (0..r)
            .map(|z| self.values.iter().map(|row| row[z]).sum::<f64>() / s)
            .collect()
    }
}

/// A positive function g on the torus stored as u = log g.
#[derive(Clone, Debug)]
pub struct PositiveField {
    pub periods: Vec<i64>,
    pub log_g: Vec<f64>,
}

impl PositiveField {
    pub fn from_log_values(periods: Vec<i64>, log_g: Vec<f64>) -> Result<PositiveField> {
        let expected: i64 = periods.iter().product();
        if log_g.len() as i64 != expected {
            return Err(Error::InvalidEnvironment(format!(
                "field has {} entries for a torus of {expected} sites",
                log_g.len()
            )));
        }
        if log_g.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidEnvironment(
                "field entries must be finite".into(),
            ));
        }
        Ok(PositiveField { periods, log_g })
    }

    pub fn from_values(periods: Vec<i64>, g: Vec<f64>) -> Result<PositiveField> {
        if g.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidEnvironment(
                "positive field values must be finite and > 0".into(),
            ));
        }
        PositiveField::from_log_values(periods, g.iter().map(|v| v.ln()).collect())
    }

    pub fn constant(periods: Vec<i64>, value: f64) -> Result<PositiveField> {
        let n: i64 = periods.iter().product();
        PositiveField::from_values(periods, vec![value; n as usize])
    }

    /// Floor and ceiling of g, witnessing membership in L^{++}.
    pub fn bounds(&self) -> (f64, f64) {
        let lo = self.log_g.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.log_g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo.exp(), hi.exp())
    }
}

/// Argument of [`k_functional`]: a cocycle directly, or the log-gradient
/// of a positive field.
pub enum KArg<'a> {
    Cocycle(&'a CocycleField),
    LogGradientOf(&'a PositiveField),
}

/// Shared tabulation of the torus problem: neighbor indices and
/// log weights log p + V(T_xω, z).
pub(crate) struct KprimeProblem {
    pub s: usize,
    pub r: usize,
    pub nb: Vec<Vec<usize>>,
    pub logw: Vec<Vec<f64>>,
}

impl KprimeProblem {
    pub fn new(env: &Environment, pot: &Potential, steps: &StepSet) -> Result<KprimeProblem> {
        let periods = env
            .periods()
            .ok_or(Error::NotPeriodic("k_functional"))?
            .to_vec();
        let torus = Torus::new(&periods);
        let log_p = steps.log_kernel_weight();
        let nb = torus.neighbor_table(steps);
        let logw = (0..torus.size)
            .map(|i| {
                let gamma = env.site_value(&torus.coords(i))?;
                Ok((0..steps.len())
                    .map(|z| log_p + pot.value(gamma, z))
                    .collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Ok(KprimeProblem {
            s: torus.size,
            r: steps.len(),
            nb,
            logw,
        })
    }

    /// k_x(u) = log Σ_z p e^{V(x,z) + u(x⊕z) − u(x)} for every site.
    pub fn k_per_site(&self, u: &[f64], out: &mut [f64]) {
        for x in 0..self.s {
            let mut acc = LogSumExp::new();
            for z in 0..self.r {
                acc.add(self.logw[x][z] + u[self.nb[x][z]] - u[x]);
            }
            out[x] = acc.value();
        }
    }

    pub fn value_exact(&self, u: &[f64]) -> f64 {
        let mut k = vec![0.0; self.s];
        self.k_per_site(u, &mut k);
        k.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Smoothed objective Φ_τ(u) = τ log Σ_x e^{k_x/τ} and its gradient.
    pub fn smoothed(&self, u: &[f64], tau: f64, grad: &mut [f64]) -> f64 {
        let mut k = vec![0.0; self.s];
        let mut q = vec![0.0; self.r];
        self.k_per_site(u, &mut k);
        let kmax = k.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut zsum = 0.0;
        let mut site_w = vec![0.0; self.s];
        for x in 0..self.s {
            let w = ((k[x] - kmax) / tau).exp();
            site_w[x] = w;
            zsum += w;
        }
        grad.fill(0.0);
        for x in 0..self.s {
            let sx = site_w[x] / zsum;
            if sx == 0.0 {
                continue;
            }
            // within-site softmax over steps
            let mut m = f64::NEG_INFINITY;
            for z in 0..self.r {
                q[z] = self.logw[x][z] + u[self.nb[x][z]] - u[x];
                m = m.max(q[z]);
            }
            let mut t = 0.0;
            for qz in q.iter_mut() {
                *qz = (*qz - m).exp();
                t += *qz;
            }
            for z in 0..self.r {
                grad[self.nb[x][z]] += sx * q[z] / t;
            }
            grad[x] -= sx;
        }
        kmax + tau * zsum.ln()
    }
}

/// K over a cocycle, or K' over a positive field (the two agree when
/// F = ∇*g). Exact max over torus sites.
pub fn k_functional(
    env: &Environment,
    pot: &Potential,
    steps: &StepSet,
    arg: KArg<'_>,
) -> Result<f64> {
    Ok(k_per_site(env, pot, steps, arg)?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Per-site values of the functional; the max is [`k_functional`].
pub fn k_per_site(
    env: &Environment,
    pot: &Potential,
    steps: &StepSet,
    arg: KArg<'_>,
) -> Result<Vec<f64>> {
    let problem = KprimeProblem::new(env, pot, steps)?;
    match arg {
        KArg::LogGradientOf(g) => {
            if g.log_g.len() != problem.s {
                return Err(Error::InvalidEnvironment(
                    "field size does not match the torus".into(),
                ));
            }
            let mut out = vec![0.0; problem.s];
            problem.k_per_site(&g.log_g, &mut out);
            Ok(out)
        }
        KArg::Cocycle(f) => {
            if f.values.len() != problem.s || f.values[0].len() != problem.r {
                return Err(Error::InvalidEnvironment(
                    "cocycle shape does not match torus × steps".into(),
                ));
            }
            Ok((0..problem.s)
                .map(|x| {
                    let terms: Vec<f64> = (0..problem.r)
                        .map(|z| problem.logw[x][z] + f.values[x][z])
                        .collect();
                    log_sum_exp(&terms)
                })
                .collect())
        }
    }
}

/// The log-gradient cocycle F(x, z) = u(x⊕z) − u(x).
pub fn log_gradient(g: &PositiveField, steps: &StepSet) -> CocycleField {
    let torus = Torus::new(&g.periods);
    let values = (0..torus.size)
        .map(|x| {
            steps
                .steps()
                .iter()
                .map(|z| g.log_g[torus.step_index(x, z)] - g.log_g[x])
                .collect()
        })
        .collect();
    CocycleField {
        periods: g.periods.clone(),
        values,
    }
}

/// One reported violation of path-independence.
#[derive(Clone, Debug)]
pub struct CycleViolation {
    pub site: Vec<i64>,
    pub step: usize,
    pub deviation: f64,
}

#[derive(Clone, Debug)]
pub struct CocycleReport {
    pub centered_ok: bool,
    pub max_step_mean: f64,
    pub cocycle_ok: bool,
    pub violations: Vec<CycleViolation>,
}

impl CocycleReport {
    pub fn is_ok(&self) -> bool {
        self.centered_ok && self.cocycle_ok
    }
}

/// Check the two cocycle conditions: per-step centering (site averages
/// vanish) and path-independence, tested on the fundamental cycles of a
/// BFS spanning tree of the step digraph. Each non-tree edge closes one
/// generating cycle; its sum must vanish.
pub fn verify_cocycle(
    field: &CocycleField,
    env: &Environment,
    steps: &StepSet,
    tol: f64,
) -> Result<CocycleReport> {
    let periods = env
        .periods()
        .ok_or(Error::NotPeriodic("verify_cocycle"))?
        .to_vec();
    if periods != field.periods {
        return Err(Error::InvalidEnvironment(
            "cocycle periods do not match the environment".into(),
        ));
    }
    let torus = Torus::new(&periods);
    let nb = torus.neighbor_table(steps);
    if !strongly_connected(&nb) {
        return Err(Error::NotStronglyConnected);
    }

    let means = field.step_means();
    let max_step_mean = means.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let centered_ok = max_step_mean <= tol;

    // potential from BFS discovery paths
    let mut phi = vec![f64::NAN; torus.size];
    phi[0] = 0.0;
    let mut queue = std::collections::VecDeque::from([0usize]);
    while let Some(x) = queue.pop_front() {
        for (z, &y) in nb[x].iter().enumerate() {
            if phi[y].is_nan() {
                phi[y] = phi[x] + field.values[x][z];
                queue.push_back(y);
            }
        }
    }
    let mut violations = Vec::new();
    for x in 0..torus.size {
        for (z, &y) in nb[x].iter().enumerate() {
            let dev = (phi[x] + field.values[x][z] - phi[y]).abs();
            if dev > tol {
                violations.push(CycleViolation {
                    site: torus.coords(x),
                    step: z,
                    deviation: dev,
                });
            }
        }
    }
    Ok(CocycleReport {
        centered_ok,
        max_step_mean,
        cocycle_ok: violations.is_empty(),
        violations,
    })
}

/// Options for [`minimize_kprime`].
#[derive(Clone, Debug)]
pub struct MinimizeOptions {
    /// Certify the value against the Perron root and fail loudly beyond
    /// this tolerance.
    pub certify: bool,
    pub cert_tol: f64,
    /// Iteration budget per smoothing stage.
    pub stage_iters: usize,
    /// Annealing cycles: each runs the full temperature schedule plus the
    /// sharp polish, restarting from the incumbent.
    pub cycles: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            certify: true,
            cert_tol: 1e-6,
            stage_iters: 500,
            cycles: 4,
        }
    }
}

/// Limited-memory BFGS with Armijo backtracking on one smoothed stage.
/// Returns the iteration count; `u` is updated in place.
fn lbfgs_stage(
    problem: &KprimeProblem,
    u: &mut [f64],
    tau: f64,
    max_iters: usize,
    gtol: f64,
) -> usize {
    let n = u.len();
    let memory = 10usize;
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    let mut grad = vec![0.0; n];
    let mut f = problem.smoothed(u, tau, &mut grad);
    let mut history: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> =
        std::collections::VecDeque::new();
    let mut iterations = 0usize;
    for _ in 0..max_iters {
        iterations += 1;
        let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gnorm <= gtol {
            break;
        }
        // two-loop recursion for the quasi-Newton direction
        let mut q = grad.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y).max(1e-300);
            for qi in q.iter_mut() {
                *qi *= gamma;
            }
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        // backtracking along -q
        let descent = dot(&grad, &q);
        if !(descent > 0.0) {
            // degenerate curvature estimate: drop the memory
            history.clear();
            q = grad.clone();
        }
        let descent = dot(&grad, &q);
        let mut t = 1.0f64;
        let mut accepted = false;
        while t > 1e-18 {
            let cand: Vec<f64> = u.iter().zip(&q).map(|(ui, qi)| ui - t * qi).collect();
            let mut gnew = vec![0.0; n];
            let fc = problem.smoothed(&cand, tau, &mut gnew);
            if fc <= f - 1e-4 * t * descent {
                let s: Vec<f64> = cand.iter().zip(u.iter()).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = gnew.iter().zip(&grad).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-14 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
                    if history.len() == memory {
                        history.pop_front();
                    }
                    history.push_back((s, y, 1.0 / sy));
                }
                u.copy_from_slice(&cand);
                f = fc;
                grad = gnew;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    iterations
}

#[derive(Clone, Debug)]
pub struct KprimeMinimizer {
    pub field: PositiveField,
    pub value: f64,
    /// k_x(u) − value per site; all ≈ 0 at the exact minimizer.
    pub per_site_slack: Vec<f64>,
    /// (log ρ, value − log ρ) when certification ran.
    pub certification: Option<(f64, f64)>,
    pub iterations: usize,
}

/// Minimize Φ(u) = max_x log Σ_z p e^{V + u(x⊕z) − u(x)} over fields u
/// with the gauge u(site 0) = 0.
///
/// Φ is a max of log-sum-exp compositions of affine maps, hence convex,
/// with a sharp (polyhedral-like) minimum at the Perron log-eigenvector.
/// The optimizer anneals a softmax smoothing τ: 1 → 1e−4 with gradient
/// descent and Armijo backtracking, then polishes with a smoothed
/// subgradient whose temperature shrinks with the step size; the best
/// exact max ever seen is returned. Nothing here touches the spectral
/// route, so certification against the Perron root is a genuine
/// cross-check of two algorithms.
pub fn minimize_kprime(
    env: &Environment,
    pot: &Potential,
    steps: &StepSet,
    opts: &MinimizeOptions,
) -> Result<KprimeMinimizer> {
    let problem = KprimeProblem::new(env, pot, steps)?;
    let periods = env.periods().expect("checked periodic").to_vec();
    {
        let torus = Torus::new(&periods);
        if !strongly_connected(&torus.neighbor_table(steps)) {
            return Err(Error::NotStronglyConnected);
        }
    }
    let s = problem.s;
    let mut u = vec![0.0f64; s];
    let mut grad = vec![0.0f64; s];
    let mut iterations = 0usize;
    let mut best_u = u.clone();
    let mut best_val = problem.value_exact(&u);

    for _cycle in 0..opts.cycles.max(1) {
        let cycle_start_val = best_val;

        // Phase A: annealed smoothing, each stage solved by L-BFGS
        let mut tau = 1.0f64;
        while tau >= 1e-4 {
            iterations += lbfgs_stage(
                &problem,
                &mut u,
                tau,
                opts.stage_iters,
                (tau * 1e-6).max(1e-13),
            );
            let g0 = u[0];
            for ui in u.iter_mut() {
                *ui -= g0;
            }
            tau *= 0.25;
        }
        let val = problem.value_exact(&u);
        if val < best_val {
            best_val = val;
            best_u = u.clone();
        }

        // Balancing relaxation: at the minimizer every k_x is equal, so
        // push each u(x) by its deviation from the site mean. Contracts
        // linearly near the optimum; acceptance is still gated by the
        // exact objective, so a bad trajectory cannot survive.
        let mut k = vec![0.0f64; s];
        for _ in 0..4000 {
            problem.k_per_site(&u, &mut k);
            iterations += 1;
            let kbar = k.iter().sum::<f64>() / s as f64;
            let dev = k.iter().fold(0.0f64, |m, v| m.max((v - kbar).abs()));
            let val = k.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if val < best_val {
                best_val = val;
                best_u = u.clone();
            }
            if dev < 1e-15 {
                break;
            }
            for (ui, ki) in u.iter_mut().zip(&k) {
                *ui += 0.5 * (ki - kbar);
            }
            let g0 = u[0];
            for ui in u.iter_mut() {
                *ui -= g0;
            }
        }
        u = best_u.clone();

        // Phase B: sharp polish. The minimum is a kink point, so a
        // smoothed subgradient with geometrically shrinking step and
        // temperature converges linearly; track the best exact value.
        // Early rounds necessarily overshoot and must not abort the
        // schedule.
        let mut alpha = 0.25f64;
        while alpha > 1e-15 {
            let tau_r = alpha.max(1e-14);
            let mut improved = false;
            for _ in 0..60 {
                problem.smoothed(&u, tau_r, &mut grad);
                iterations += 1;
                let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
                if gmax == 0.0 {
                    break;
                }
                for (ui, gi) in u.iter_mut().zip(&grad) {
                    *ui -= alpha * gi / gmax;
                }
                let g0 = u[0];
                for ui in u.iter_mut() {
                    *ui -= g0;
                }
                let val = problem.value_exact(&u);
                if val < best_val - 1e-16 {
                    best_val = val;
                    best_u = u.clone();
                    improved = true;
                }
            }
            if !improved {
                // walk drifted: restart the next round from the incumbent
                u = best_u.clone();
            }
            alpha *= 0.5;
        }
        u = best_u.clone();
        if cycle_start_val - best_val <= 1e-13 {
            break;
        }
    }

    let mut per_site = vec![0.0; s];
    problem.k_per_site(&best_u, &mut per_site);
    let value = best_val;
    let per_site_slack: Vec<f64> = per_site.iter().map(|k| k - value).collect();

    let certification = if opts.certify {
        let op = spectral::build_operator(env, pot, steps, &vec![0.0; steps.d()])?;
        let log_rho = spectral::log_spectral_radius(&op)?.log_rho;
        let delta = value - log_rho;
        if delta.abs() > opts.cert_tol {
            return Err(Error::CertificationFailed {
                value,
                reference: log_rho,
                delta,
                tol: opts.cert_tol,
            });
        }
        Some((log_rho, delta))
    } else {
        None
    };

    Ok(KprimeMinimizer {
        field: PositiveField::from_log_values(periods, best_u)?,
        value,
        per_site_slack,
        certification,
        iterations,
    })
}

/// Truncated series g^{(N)}(x) = Σ_{n=0}^{N} h_n^λ(T_xω) with h_0 = 1,
/// requiring λ above the quenched free energy for convergence. Divergence
/// shows up as a non-decaying term ratio and is reported as an error.
pub fn g_lambda_truncated(
    env: &Environment,
    pot: &Potential,
    steps: &StepSet,
    lambda: f64,
    n_terms: usize,
) -> Result<PositiveField> {
    let problem = KprimeProblem::new(env, pot, steps)?;
    let s = problem.s;
    let periods = env.periods().expect("checked periodic").to_vec();
    // h_{n+1}(x) = Σ_z p e^{V(x,z) − λ} h_n(x⊕z), kept max-normalized
    // with a log offset so the term index never outruns f64 range. The
    // divergence check compares the offset across a 40-term window, wide
    // enough to ride out the parity oscillation of periodic digraphs.
    let weights: Vec<Vec<f64>> = problem
        .logw
        .iter()
        .map(|row| row.iter().map(|lw| (lw - lambda).exp()).collect())
        .collect();
    let mut h = vec![1.0f64; s];
    let mut g = vec![1.0f64; s];
    let mut offset = 0.0f64;
    let mut offsets = vec![0.0f64];
    const WINDOW: usize = 40;
    for n in 1..=n_terms {
        let mut next = vec![0.0f64; s];
        for x in 0..s {
            let mut acc = 0.0;
            for z in 0..problem.r {
                acc += weights[x][z] * h[problem.nb[x][z]];
            }
            next[x] = acc;
        }
        let hmax = next.iter().cloned().fold(0.0f64, f64::max);
        if !hmax.is_finite() || hmax <= 0.0 {
            return Err(Error::DivergentSeries { lambda });
        }
        offset += hmax.ln();
        for v in &mut next {
            *v /= hmax;
        }
        h = next;
        offsets.push(offset);
        if offset > 500.0
            || (n > WINDOW + 10 && offset - offsets[n - WINDOW] >= 0.5)
        {
            return Err(Error::DivergentSeries { lambda });
        }
        if offset < -760.0 {
            // remaining terms are below any representable contribution
            break;
        }
        let scale = offset.exp();
        for (gx, hx) in g.iter_mut().zip(&h) {
            *gx += hx * scale;
        }
    }
    PositiveField::from_values(periods, g)
}

/// Max relative residual of g = Σ_z p e^{V(·,z) − λ} g ∘ T_z over torus
/// sites. Zero exactly at a Perron pair (g, λ = log ρ).
pub fn fixed_point_residual(
    g: &PositiveField,
    env: &Environment,
    pot: &Potential,
    steps: &StepSet,
    lambda: f64,
) -> Result<f64> {
    let problem = KprimeProblem::new(env, pot, steps)?;
    if g.log_g.len() != problem.s {
        return Err(Error::InvalidEnvironment(
            "field size does not match the torus".into(),
        ));
    }
    let mut worst = 0.0f64;
    for x in 0..problem.s {
        let mut acc = LogSumExp::new();
        for z in 0..problem.r {
            acc.add(problem.logw[x][z] - lambda + g.log_g[problem.nb[x][z]]);
        }
        let resid = ((acc.value() - g.log_g[x]).exp() - 1.0).abs();
        worst = worst.max(resid);
    }
    Ok(worst)
}

/// Relative residuals of the first-step decomposition
/// h_n = Σ_z p e^{V(·,z) − λ} h_{n−1} ∘ T_z for n = 1..=n_max on a (not
/// necessarily periodic) environment. The identity is algebraic at every
/// n and every λ (the tilt cancels), so residuals measure pure floating-
/// point drift of the recursion.
pub fn martingale_recursion_residuals(
    env: &dyn SiteLookup,
    pot: &Potential,
    steps: &StepSet,
    n_max: usize,
) -> Result<Vec<f64>> {
    if !steps.is_directed() {
        return Err(Error::NotDirected("martingale_recursion_residuals"));
    }
    let d = steps.d();
    let origin = vec![0i64; d];
    let gamma0 = env.site_value(&origin)?;
    let log_p = steps.log_kernel_weight();

    let mut dp_origin = LevelDp::new(env, pot, steps, &origin, n_max)?;
    let mut dp_shifted: Vec<LevelDp> = steps
        .steps()
        .iter()
        .map(|z| LevelDp::new(env, pot, steps, z, n_max.saturating_sub(1)))
        .collect::<Result<Vec<_>>>()?;

    let mut residuals = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        dp_origin.advance()?;
        // log h_{n-1} from each first-step start
        let mut acc = LogSumExp::new();
        for (k, dp) in dp_shifted.iter().enumerate() {
            acc.add(log_p + pot.value(gamma0, k) + dp.log_total());
        }
        let lhs = dp_origin.log_total();
        residuals.push(((acc.value() - lhs).exp() - 1.0).abs());
        if n < n_max {
            for dp in dp_shifted.iter_mut() {
                dp.advance()?;
            }
        }
    }
    Ok(residuals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{IntBox, SiteDistribution};
    use crate::rng::SplitMix64;

    fn steps2() -> StepSet {
        StepSet::directed(2).unwrap()
    }

    fn random_torus_env(rng: &mut SplitMix64, px: i64, py: i64) -> Environment {
        let s = (px * py) as usize;
        let vals: Vec<f64> = (0..s).map(|_| rng.uniform() * 2.0 - 1.0).collect();
        Environment::periodic(vals, vec![px, py]).unwrap()
    }

    #[test]
    fn k_functional_zero_everything_is_zero() {
        let env = Environment::periodic(vec![0.0], vec![1, 1]).unwrap();
        let field = CocycleField {
            periods: vec![1, 1],
            values: vec![vec![0.0, 0.0]],
        };
        let k = k_functional(&env, &Potential::zero(), &steps2(), KArg::Cocycle(&field)).unwrap();
        assert!(k.abs() < 1e-15);
    }

    #[test]
    fn constant_shift_leaves_kprime_unchanged() {
        let mut rng = SplitMix64::new(10);
        let env = random_torus_env(&mut rng, 3, 3);
        let pot = Potential::site_linear(1.0, Some(1.0));
        let u: Vec<f64> = (0..9).map(|_| rng.uniform() * 2.0 - 1.0).collect();
        let g1 = PositiveField::from_log_values(vec![3, 3], u.clone()).unwrap();
        let shifted: Vec<f64> = u.iter().map(|x| x + 5.0).collect();
        let g2 = PositiveField::from_log_values(vec![3, 3], shifted).unwrap();
        let k1 = k_functional(&env, &pot, &steps2(), KArg::LogGradientOf(&g1)).unwrap();
        let k2 = k_functional(&env, &pot, &steps2(), KArg::LogGradientOf(&g2)).unwrap();
        assert!((k1 - k2).abs() < 1e-12);
    }

    #[test]
    fn perron_eigenvector_equalizes_all_sites() {
        let mut rng = SplitMix64::new(22);
        let env = random_torus_env(&mut rng, 2, 3);
        let pot = Potential::site_linear(1.0, Some(1.0));
        let op = spectral::build_operator(&env, &pot, &steps2(), &[0.0, 0.0]).unwrap();
        let perron = spectral::log_spectral_radius(&op).unwrap();
        let g = PositiveField::from_values(vec![2, 3], perron.eigvec.clone()).unwrap();
        let per_site = k_per_site(&env, &pot, &steps2(), KArg::LogGradientOf(&g)).unwrap();
        for k in &per_site {
            assert!(
                (k - perron.log_rho).abs() < 1e-10,
                "site value {k} vs log ρ {}",
                perron.log_rho
            );
        }
    }

    #[test]
    fn log_gradient_of_constant_is_zero_and_centered() {
        let g = PositiveField::constant(vec![2, 2], 3.7).unwrap();
        let f = log_gradient(&g, &steps2());
        assert!(f.values.iter().flatten().all(|v| v.abs() < 1e-15));
        assert!(f.step_means().iter().all(|m| m.abs() < 1e-15));
    }

    #[test]
    fn log_gradient_telescopes_on_two_site_torus() {
        // periods (2,1), u = (0, 1), step e1 flips the site: F = ±1, mean 0
        let g = PositiveField::from_log_values(vec![2, 1], vec![0.0, 1.0]).unwrap();
        let f = log_gradient(&g, &steps2());
        assert_eq!(f.values[0][0], 1.0);
        assert_eq!(f.values[1][0], -1.0);
        // e2 fixes the site
        assert_eq!(f.values[0][1], 0.0);
        let means = f.step_means();
        assert!(means[0].abs() < 1e-15 && means[1].abs() < 1e-15);
    }

    #[test]
    fn log_gradients_verify_as_cocycles() {
        let mut rng = SplitMix64::new(77);
        for _ in 0..100 {
            let env = random_torus_env(&mut rng, 2, 2);
            let u: Vec<f64> = (0..4).map(|_| rng.uniform() * 4.0 - 2.0).collect();
            let g = PositiveField::from_log_values(vec![2, 2], u).unwrap();
            let f = log_gradient(&g, &steps2());
            let report = verify_cocycle(&f, &env, &steps2(), 1e-10).unwrap();
            assert!(report.is_ok(), "violations: {:?}", report.violations);
        }
    }

    #[test]
    fn zero_field_is_a_cocycle() {
        let env = Environment::periodic(vec![0.0; 4], vec![2, 2]).unwrap();
        let f = CocycleField {
            periods: vec![2, 2],
            values: vec![vec![0.0, 0.0]; 4],
        };
        let report = verify_cocycle(&f, &env, &steps2(), 1e-10).unwrap();
        assert!(report.is_ok());
    }

    #[test]
    fn constant_one_field_is_not_centered() {
        let env = Environment::periodic(vec![0.0; 4], vec![2, 2]).unwrap();
        let f = CocycleField {
            periods: vec![2, 2],
            values: vec![vec![1.0, 1.0]; 4],
        };
        let report = verify_cocycle(&f, &env, &steps2(), 1e-10).unwrap();
        assert!(!report.centered_ok);
        assert!((report.max_step_mean - 1.0).abs() < 1e-15);
        // path independence also fails: any cycle accumulates its length
        assert!(!report.cocycle_ok);
    }

    #[test]
    fn perturbed_log_gradient_reports_the_bad_edge() {
        let mut rng = SplitMix64::new(31);
        let env = random_torus_env(&mut rng, 2, 2);
        let u: Vec<f64> = (0..4).map(|_| rng.uniform()).collect();
        let g = PositiveField::from_log_values(vec![2, 2], u).unwrap();
        let mut f = log_gradient(&g, &steps2());
        f.values[2][1] += 1e-3;
        let report = verify_cocycle(&f, &env, &steps2(), 1e-6).unwrap();
        assert!(!report.cocycle_ok);
        assert!(report
            .violations
            .iter()
            .any(|v| v.deviation > 0.9e-3 && v.deviation < 1.1e-3));
    }

    #[test]
    fn smoothed_gradient_matches_finite_differences() {
        let mut rng = SplitMix64::new(55);
        let env = random_torus_env(&mut rng, 2, 2);
        let pot = Potential::site_linear(1.0, Some(1.0));
        let problem = KprimeProblem::new(&env, &pot, &steps2()).unwrap();
        let s = problem.s;
        for trial in 0..100 {
            let tau = [1.0, 0.3, 0.05][trial % 3];
            let u: Vec<f64> = (0..s).map(|_| rng.uniform() * 2.0 - 1.0).collect();
            let mut grad = vec![0.0; s];
            problem.smoothed(&u, tau, &mut grad);
            let h = 1e-6;
            for i in 0..s {
                let mut up = u.clone();
                let mut um = u.clone();
                up[i] += h;
                um[i] -= h;
                let fp = problem.smoothed(&up, tau, &mut vec![0.0; s]);
                let fm = problem.smoothed(&um, tau, &mut vec![0.0; s]);
                let fd = (fp - fm) / (2.0 * h);
                let scale = grad[i].abs().max(1.0);
                assert!(
                    (grad[i] - fd).abs() / scale < 1e-5,
                    "trial {trial} coord {i}: analytic {} vs fd {fd}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn minimizer_on_zero_potential_is_flat() {
        let env = Environment::periodic(vec![0.0; 4], vec![2, 2]).unwrap();
        let result =
            minimize_kprime(&env, &Potential::zero(), &steps2(), &MinimizeOptions::default())
                .unwrap();
        assert!(result.value.abs() < 1e-9, "value = {}", result.value);
        let (lo, hi) = result.field.bounds();
        assert!(hi / lo < 1.0 + 1e-6);
    }

    #[test]
    fn minimizer_matches_two_site_perron_root() {
        let env = Environment::periodic(vec![0.0, 1.0], vec![2, 1]).unwrap();
        let pot = Potential::site_linear(1.0, Some(1.0));
        let result =
            minimize_kprime(&env, &pot, &steps2(), &MinimizeOptions::default()).unwrap();
        let expected = ((1.0 + 1.0f64.exp()) / 2.0).ln();
        assert!(
            (result.value - expected).abs() < 1e-7,
            "value = {}, expected {expected}",
            result.value
        );
        let (_, delta) = result.certification.unwrap();
        assert!(delta.abs() < 1e-6);
    }

    #[test]
    fn minimizer_certifies_on_random_tori() {
        let mut rng = SplitMix64::new(2025);
        for trial in 0..8 {
            let env = random_torus_env(&mut rng, 4, 4);
            let pot = Potential::site_linear(1.0, Some(1.0));
            let result = minimize_kprime(&env, &pot, &steps2(), &MinimizeOptions::default())
                .unwrap_or_else(|e| panic!("trial {trial}: {e}"));
            let (log_rho, delta) = result.certification.unwrap();
            assert!(
                delta.abs() < 1e-6,
                "trial {trial}: value {} vs log ρ {log_rho}",
                result.value
            );
        }
    }

    #[test]
    fn any_feasible_field_upper_bounds_the_perron_root() {
        let mut rng = SplitMix64::new(303);
        let env = random_torus_env(&mut rng, 3, 2);
        let pot = Potential::site_linear(1.0, Some(1.0));
        let op = spectral::build_operator(&env, &pot, &steps2(), &[0.0, 0.0]).unwrap();
        let log_rho = spectral::log_spectral_radius(&op).unwrap().log_rho;
        for _ in 0..1000 {
            let u: Vec<f64> = (0..6).map(|_| rng.uniform() * 6.0 - 3.0).collect();
            let g = PositiveField::from_log_values(vec![3, 2], u).unwrap();
            let k = k_functional(&env, &pot, &steps2(), KArg::LogGradientOf(&g)).unwrap();
            assert!(k >= log_rho - 1e-10, "K' = {k} below log ρ = {log_rho}");
        }
    }

    #[test]
    fn g_lambda_geometric_series_on_one_site() {
        // V ≡ 0, λ = 0.1: g = Σ e^{-0.1 n} = 1/(1 − e^{-0.1})
        let env = Environment::periodic(vec![0.0], vec![1, 1]).unwrap();
        let g = g_lambda_truncated(&env, &Potential::zero(), &steps2(), 0.1, 2000).unwrap();
        let expected = 1.0 / (1.0 - (-0.1f64).exp());
        assert!(
            (g.log_g[0].exp() - expected).abs() < 1e-9,
            "g = {}, expected {expected}",
            g.log_g[0].exp()
        );
        assert!((expected - 10.5083).abs() < 1e-4);
    }

    #[test]
    fn g_lambda_rearrangement_identity_one_site() {
        // λ = log(e^λ/g_λ + Σ_z p e^V g∘T_z/g) with the closed-form g_λ
        let lambda = 0.1f64;
        let g = 1.0 / (1.0 - (-lambda).exp());
        let lhs = (lambda.exp() / g + 1.0).ln();
        assert!((lhs - lambda).abs() < 1e-12);
    }

    #[test]
    fn g_lambda_diverges_at_or_below_lambda_q() {
        let env = Environment::periodic(vec![0.0], vec![1, 1]).unwrap();
        // Λ_q = 0 here; λ = -0.05 < 0 diverges
        assert!(matches!(
            g_lambda_truncated(&env, &Potential::zero(), &steps2(), -0.05, 5000),
            Err(Error::DivergentSeries { .. })
        ));
    }

    #[test]
    fn g_lambda_bounds_kprime_by_lambda() {
        let mut rng = SplitMix64::new(91);
        for trial in 0..5 {
            let env = random_torus_env(&mut rng, 2, 2);
            let pot = Potential::site_linear(1.0, Some(1.0));
            let op = spectral::build_operator(&env, &pot, &steps2(), &[0.0, 0.0]).unwrap();
            let lambda_q = spectral::log_spectral_radius(&op).unwrap().log_rho;
            let lambda = lambda_q + 0.1;
            let mut held_from: Option<usize> = None;
            for n in (10..=200).step_by(10) {
                let g = g_lambda_truncated(&env, &pot, &steps2(), lambda, n).unwrap();
                let k = k_functional(&env, &pot, &steps2(), KArg::LogGradientOf(&g)).unwrap();
                if k <= lambda {
                    held_from.get_or_insert(n);
                } else {
                    held_from = None;
                }
            }
            let n0 = held_from.unwrap_or_else(|| panic!("trial {trial}: K' never fell below λ"));
            assert!(n0 <= 200, "trial {trial}: N₀ = {n0}");
        }
    }

    #[test]
    fn perron_pair_has_tiny_fixed_point_residual() {
        let mut rng = SplitMix64::new(44);
        let env = random_torus_env(&mut rng, 3, 3);
        let pot = Potential::site_linear(1.0, Some(1.0));
        let op = spectral::build_operator(&env, &pot, &steps2(), &[0.0, 0.0]).unwrap();
        let perron = spectral::log_spectral_radius(&op).unwrap();
        let g = PositiveField::from_values(vec![3, 3], perron.eigvec).unwrap();
        let resid = fixed_point_residual(&g, &env, &pot, &steps2(), perron.log_rho).unwrap();
        assert!(resid <= 1e-10, "residual {resid}");
        // a random pair is far from solving it
        let bad = PositiveField::from_log_values(
            vec![3, 3],
            (0..9).map(|_| rng.uniform() * 2.0).collect(),
        )
        .unwrap();
        let resid = fixed_point_residual(&bad, &env, &pot, &steps2(), 0.3).unwrap();
        assert!(resid > 1e-6);
    }

    #[test]
    fn martingale_recursion_is_exact_identity() {
        let dist = SiteDistribution::Bernoulli {
            p: 0.5,
            lo: 0.0,
            hi: 1.0,
        };
        let env = Environment::iid(dist, IntBox::cube(2, 61).unwrap(), 5).unwrap();
        let pot = Potential::site_linear(1.0, Some(1.0));
        let residuals =
            martingale_recursion_residuals(&env, &pot, &steps2(), 60).unwrap();
        for (n, r) in residuals.iter().enumerate() {
            assert!(*r <= 1e-12, "n = {}: residual {r}", n + 1);
        }
    }
}
