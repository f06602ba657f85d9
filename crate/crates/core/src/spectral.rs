//! Exact quenched free energy on periodic environments via the Perron
//! root of the tilted transfer operator, and the level-1 rate function by
//! Legendre transform of the tilted free energy.

use crate::env::{Environment, Potential, SiteLookup, StepSet};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::torus::{digraph_period, strongly_connected, Torus};

/// Nonnegative matrix M[x][x⊕z] = p(z) e^{V(T_xω, z) + λ·z} on the torus
/// sites of a periodic environment.
#[derive(Clone, Debug)]
pub struct TransferOperator {
    pub torus: Torus,
    /// row-major S×S
    pub matrix: Vec<f64>,
    pub tilt: Vec<f64>,
    pub strongly_connected: bool,
    pub period: usize,
}

impl TransferOperator {
    pub fn size(&self) -> usize {
        self.torus.size
    }

    #[inline]
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let s = self.torus.size;
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.matrix[i * s..(i + 1) * s];
            let mut acc = 0.0;
            for (m, x) in row.iter().zip(v) {
                acc += m * x;
            }
            *o = acc;
        }
    }
}

/// Perron data: log spectral radius, the positive right eigenvector
/// normalized to max = 1, the relative residual ‖Mg − ρg‖∞/ρ, and the
/// iteration count.
#[derive(Clone, Debug)]
pub struct PerronResult {
    pub log_rho: f64,
    pub eigvec: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Build the (tilted) transfer operator of a periodic environment.
/// Connectivity of the step digraph is computed here and consulted by the
/// spectral routines; a disconnected digraph is reported, not hidden.
pub fn build_operator(
    env: &Environment,
    pot: &Potential,
    steps: &StepSet,
    tilt: &[f64],
) -> Result<TransferOperator> {
    let periods = env
        .periods()
        .ok_or(Error::NotPeriodic("build_operator"))?
        .to_vec();
    if tilt.len() != steps.d() {
        return Err(Error::Unsupported(format!(
            "tilt dimension {} != lattice dimension {}",
            tilt.len(),
            steps.d()
        )));
    }
    let torus = Torus::new(&periods);
    let s = torus.size;
    let p = steps.kernel_weight();
    let mut matrix = vec![0.0f64; s * s];
    for i in 0..s {
        let coords = torus.coords(i);
        let gamma = env.site_value(&coords)?;
        for (k, z) in steps.steps().iter().enumerate() {
            let j = torus.step_index(i, z);
            let tilt_dot: f64 = tilt.iter().zip(z).map(|(l, zi)| l * *zi as f64).sum();
            matrix[i * s + j] += p * (pot.value(gamma, k) + tilt_dot).exp();
        }
    }
    let neighbors = torus.neighbor_table(steps);
    let connected = strongly_connected(&neighbors);
    let period = if connected {
        digraph_period(&neighbors)
    } else {
        0
    };
    Ok(TransferOperator {
        torus,
        matrix,
        tilt: tilt.to_vec(),
        strongly_connected: connected,
        period,
    })
}

const POWER_TOL: f64 = 1e-13;
const POWER_CAP: usize = 200_000;
/// Fallback residual accepted when the iteration stagnates before
/// reaching POWER_TOL. Extreme tilts (entries spanning e^{±40}) floor the
/// attainable residual at roughly eps × condition; the Perron value is
/// still accurate to about the residual itself.
const POWER_ACCEPT: f64 = 1e-8;

/// log ρ by power iteration. Growth rates are averaged over one digraph
/// period (the directed digraph of a torus is often periodic and the raw
/// growth factors then oscillate), Aitken-extrapolated, and the resulting
/// estimate seeds a shifted iteration M + ρ̂I whose fixed point is the
/// Perron vector. The returned log ρ is read off the eigenvector residual
/// equation, which is period-proof.
pub fn log_spectral_radius(op: &TransferOperator) -> Result<PerronResult> {
    if !op.strongly_connected {
        return Err(Error::NotStronglyConnected);
    }
    let s = op.size();
    if s == 1 {
        return Ok(PerronResult {
            log_rho: op.matrix[0].ln(),
            eigvec: vec![1.0],
            residual: 0.0,
            iterations: 0,
        });
    }
    let p = op.period.max(1);

    // phase 1: growth tracking for a ρ estimate
    let mut v = vec![1.0f64; s];
    let mut w = vec![0.0f64; s];
    let mut log_growth: Vec<f64> = Vec::new();
    let mut estimates: Vec<f64> = Vec::new();
    let mut iterations = 0usize;
    let mut est = f64::NAN;
    for it in 0..POWER_CAP {
        op.apply(&v, &mut w);
        let m = w.iter().cloned().fold(0.0f64, f64::max);
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / m;
        }
        log_growth.push(m.ln());
        iterations = it + 1;
        if log_growth.len() >= p && log_growth.len() % p == 0 {
            let tail = &log_growth[log_growth.len() - p..];
            let mean = tail.iter().sum::<f64>() / p as f64;
            estimates.push(mean);
            let k = estimates.len();
            if k >= 3 {
                // Aitken Δ² on the last three period-averaged estimates
                let (a0, a1, a2) = (estimates[k - 3], estimates[k - 2], estimates[k - 1]);
                let denom = a2 - 2.0 * a1 + a0;
                let acc = if denom.abs() > 1e-300 {
                    a2 - (a2 - a1) * (a2 - a1) / denom
                } else {
                    a2
                };
                if (acc - est).abs() < POWER_TOL {
                    est = acc;
                    break;
                }
                est = acc;
            } else if k >= 2 {
                est = estimates[k - 1];
            }
        }
    }
    if !est.is_finite() {
        return Err(Error::PowerIterationStalled {
            residual: f64::NAN,
            iterations,
        });
    }

    // phase 2: shifted iteration (M + ρ̂I) for the eigenvector. The shift
    // kills the peripheral modes that make the unshifted iteration cycle.
    let shift = est.exp();
    let mut g = v.clone();
    let mut best_residual = f64::INFINITY;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut watermark = (0usize, f64::INFINITY);
    for it in 0..POWER_CAP {
        op.apply(&g, &mut w);
        // Rayleigh-like positive-weight ratio: exact at the eigenvector
        let num: f64 = w.iter().sum();
        let den: f64 = g.iter().sum();
        let rho = num / den;
        let mut resid = 0.0f64;
        for (wi, gi) in w.iter().zip(&g) {
            resid = resid.max((wi - rho * gi).abs());
        }
        resid /= rho;
        if resid < best_residual {
            best_residual = resid;
            best = Some((rho, g.clone()));
        }
        iterations += 1;
        if resid <= POWER_TOL {
            break;
        }
        // stagnation: no meaningful progress over a long window means the
        // conditioning floor has been hit
        if it - watermark.0 >= 3000 {
            if best_residual > 0.5 * watermark.1 {
                break;
            }
            watermark = (it, best_residual);
        }
        let mut mx = 0.0f64;
        for (gi, wi) in g.iter_mut().zip(&w) {
            *gi = wi + shift * *gi;
            mx = mx.max(*gi);
        }
        for gi in g.iter_mut() {
            *gi /= mx;
        }
    }
    match best {
        Some((rho, g)) if best_residual <= POWER_ACCEPT => {
            let m = g.iter().cloned().fold(0.0f64, f64::max);
            let eigvec: Vec<f64> = g.iter().map(|x| x / m).collect();
            Ok(PerronResult {
                log_rho: rho.ln(),
                eigvec,
                residual: best_residual,
                iterations,
            })
        }
        _ => Err(Error::PowerIterationStalled {
            residual: best_residual,
            iterations,
        }),
    }
}

/// Largest operator the dense eigenvalue fallback will take on.
const DENSE_FALLBACK_CAP: usize = 512;

/// Spectral radius by a dense (QR) eigenvalue decomposition. Backward
/// stable, so it handles the near-defective operators that defeat power
/// iteration; value only, no eigenvector.
fn dense_log_spectral_radius(op: &TransferOperator) -> f64 {
    let s = op.size();
    let m = nalgebra::DMatrix::from_row_slice(s, s, &op.matrix);
    m.complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0f64, f64::max)
        .ln()
}

/// Λ(λ) = log ρ of the operator tilted by f_λ(ω, z) = λ·z. Convex in λ.
///
/// Strong one-sided tilts can make the operator nearly defective (its top
/// eigenvalues cluster as the torus decouples into lines), where power
/// iteration converges only algebraically; those stalls fall back to the
/// dense eigenvalue route for the value.
pub fn tilted_free_energy(
    env: &Environment,
    pot: &Potential,
    steps: &StepSet,
    lambda: &[f64],
) -> Result<f64> {
    let op = build_operator(env, pot, steps, lambda)?;
    match log_spectral_radius(&op) {
        Ok(perron) => Ok(perron.log_rho),
        Err(Error::PowerIterationStalled { .. }) if op.size() <= DENSE_FALLBACK_CAP => {
            Ok(dense_log_spectral_radius(&op))
        }
        Err(e) => Err(e),
    }
}

/// Outcome of the Legendre maximization for one velocity.
#[derive(Clone, Debug)]
pub struct RateFunctionResult {
    /// I_q(v); +inf outside the convex hull of the steps.
    pub value: f64,
    pub argmax: Vec<f64>,
    pub converged: bool,
}

const ASCENT_BOX: f64 = 40.0;
const ASCENT_GRAD_TOL: f64 = 1e-9;
const ASCENT_FD_STEP: f64 = 1e-5;
const ASCENT_MAX_ITERS: usize = 3000;

/// Level-1 rate function
/// I_q(v) = sup_λ {λ·v − Λ(f_λ + V)} + Λ_q(V)
/// by projected gradient ascent with central finite differences, started
/// from the origin and eight seeded random points.
pub fn rate_function(
    env: &Environment,
    pot: &Potential,
    steps: &StepSet,
    v: &[f64],
) -> Result<RateFunctionResult> {
    let d = steps.d();
    if v.len() != d {
        return Err(Error::Unsupported(format!(
            "velocity dimension {} != lattice dimension {d}",
            v.len()
        )));
    }
    let step_vecs: Vec<Vec<f64>> = steps
        .steps()
        .iter()
        .map(|z| z.iter().map(|&c| c as f64).collect())
        .collect();
    if !in_convex_hull(&step_vecs, v)? {
        return Ok(RateFunctionResult {
            value: f64::INFINITY,
            argmax: Vec::new(),
            converged: true,
        });
    }

    let lambda_q = tilted_free_energy(env, pot, steps, &vec![0.0; d])?;
    let objective = |lambda: &[f64]| -> Result<f64> {
        let lam = tilted_free_energy(env, pot, steps, lambda)?;
        let dot: f64 = lambda.iter().zip(v).map(|(l, vi)| l * vi).sum();
        Ok(dot - lam)
    };

    // deterministic multi-start seeded by the velocity bits
    let mut seed_mix = 0xa5a5_5a5a_0f0f_f0f0u64;
    for vi in v {
        seed_mix = crate::rng::mix64(seed_mix ^ vi.to_bits());
    }
    let mut rng = SplitMix64::new(seed_mix);
    let mut starts = vec![vec![0.0; d]];
    for _ in 0..8 {
        starts.push((0..d).map(|_| (rng.uniform() * 2.0 - 1.0) * 20.0).collect());
    }

    let mut best_val = f64::NEG_INFINITY;
    let mut best_arg = vec![0.0; d];
    let mut any_converged = false;
    for start in starts {
        let (val, arg, conv) = ascend(&objective, &start, d)?;
        any_converged |= conv;
        if val > best_val {
            best_val = val;
            best_arg = arg;
        }
    }
    if !best_val.is_finite() {
        return Err(Error::OptimizerStalled(
            "rate-function ascent produced no finite value".into(),
        ));
    }
    Ok(RateFunctionResult {
        value: best_val + lambda_q,
        argmax: best_arg,
        converged: any_converged,
    })
}

fn ascend<F: Fn(&[f64]) -> Result<f64>>(
    f: &F,
    start: &[f64],
    d: usize,
) -> Result<(f64, Vec<f64>, bool)> {
    let clamp = |x: f64| x.clamp(-ASCENT_BOX, ASCENT_BOX);
    let mut x: Vec<f64> = start.iter().map(|&c| clamp(c)).collect();
    let mut fx = f(&x)?;
    let mut grad = vec![0.0; d];
    let mut step = 1.0f64;
    let mut converged = false;
    for _ in 0..ASCENT_MAX_ITERS {
        let mut gnorm = 0.0f64;
        for i in 0..d {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += ASCENT_FD_STEP;
            xm[i] -= ASCENT_FD_STEP;
            grad[i] = (f(&xp)? - f(&xm)?) / (2.0 * ASCENT_FD_STEP);
            gnorm = gnorm.max(grad[i].abs());
        }
        if gnorm <= ASCENT_GRAD_TOL {
            converged = true;
            break;
        }
        // backtracking on the projected step. The cap must be huge: when
        // the maximizing tilt escapes to a box face the gradient decays
        // exponentially, and only step·gradient ~ box-width still moves.
        // A candidate whose evaluation fails (conditioning at extreme
        // tilts) is simply rejected.
        let mut improved = false;
        while step > 1e-14 {
            let cand: Vec<f64> = x
                .iter()
                .zip(&grad)
                .map(|(xi, gi)| clamp(xi + step * gi))
                .collect();
            match f(&cand) {
                Ok(fc) if fc > fx => {
                    x = cand;
                    fx = fc;
                    improved = true;
                    step = (step * 4.0).min(1e13);
                    break;
                }
                _ => step *= 0.5,
            }
        }
        if !improved {
            // no ascent direction at floating-point resolution
            converged = gnorm <= 1e-6;
            break;
        }
    }
    Ok((fx, x, converged))
}

/// Membership of v in the convex hull of `points`, decided exactly by
/// enumerating faces: the minimum of ‖Σ μ_k z_k − v‖ over the simplex is
/// attained on some face, and each face gives an equality-constrained
/// least-squares system.
pub fn in_convex_hull(points: &[Vec<f64>], v: &[f64]) -> Result<bool> {
    let r = points.len();
    if r > 12 {
        return Err(Error::Unsupported(
            "convex-hull test supports at most 12 steps".into(),
        ));
    }
    let d = v.len();
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << r) {
        let members: Vec<usize> = (0..r).filter(|k| mask & (1 << k) != 0).collect();
        let k = members.len();
        // minimize ‖Z μ − v‖² s.t. Σ μ = 1 via the KKT system
        let dim = k + 1;
        let mut a = vec![0.0f64; dim * dim];
        let mut b = vec![0.0f64; dim];
        for (i, &mi) in members.iter().enumerate() {
            for (j, &mj) in members.iter().enumerate() {
                let dot: f64 = (0..d).map(|t| points[mi][t] * points[mj][t]).sum();
                a[i * dim + j] = 2.0 * dot;
            }
            a[i * dim + k] = 1.0;
            a[k * dim + i] = 1.0;
            b[i] = 2.0 * (0..d).map(|t| points[mi][t] * v[t]).sum::<f64>();
        }
        b[k] = 1.0;
        let Some(sol) = solve_dense(&mut a, &mut b, dim) else {
            continue;
        };
        if sol[..k].iter().any(|&mu| mu < -1e-10) {
            continue;
        }
        let mut dist2 = 0.0;
        for t in 0..d {
            let proj: f64 = members
                .iter()
                .enumerate()
                .map(|(i, &mi)| sol[i] * points[mi][t])
                .sum();
            dist2 += (proj - v[t]).powi(2);
        }
        best = best.min(dist2);
        if best <= 1e-18 {
            return Ok(true);
        }
    }
    let scale = 1.0 + v.iter().map(|c| c * c).sum::<f64>();
    Ok(best.sqrt() <= 1e-8 * scale)
}

/// Gaussian elimination with partial pivoting; None if singular.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let mut piv = col;
        for row in (col + 1)..n {
            if a[row * n + col].abs() > a[piv * n + col].abs() {
                piv = row;
            }
        }
        if a[piv * n + col].abs() < 1e-12 {
            return None;
        }
        if piv != col {
            for t in 0..n {
                a.swap(col * n + t, piv * n + t);
            }
            b.swap(col, piv);
        }
        let p = a[col * n + col];
        for row in (col + 1)..n {
            let f = a[row * n + col] / p;
            if f == 0.0 {
                continue;
            }
            for t in col..n {
                a[row * n + t] -= f * a[col * n + t];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for t in (col + 1)..n {
            acc -= a[col * n + t] * x[t];
        }
        x[col] = acc / a[col * n + col];
    }
    Some(x)
}
