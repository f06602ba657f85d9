//! Forward dynamic programming over level sets.
//!
//! Level j holds the point-to-point weights u_j(x) = Σ over j-step paths
//! from the start to x of e^{ΣV}, stored as scaled values s_j = u_j / e^{c_j}
//! with the running log offset c_j (which also absorbs the kernel weight
//! p^j). Per-level max subtraction keeps every s_j in [0, 1], so the scheme
//! never overflows regardless of horizon or potential strength. Tilts enter
//! only at read-out: log h_j^λ = c_j + log Σ s_j − jλ exactly.

use std::collections::BTreeMap;

use super::simplex::{self, Binom, MAX_D};
use crate::env::{Potential, PotentialForm, SiteLookup, StepSet};
use crate::error::{Error, Result};
use crate::numeric::KahanSum;

/// Cap on dense level-set size (sites per level).
const DENSE_LEVEL_CAP: u64 = 200_000_000;
/// Cap on sparse level-set size.
const SPARSE_LEVEL_CAP: usize = 50_000_000;

/// Supplier of per-site weight rows w_z = e^{V(γ, z)}.
enum RowSource {
    /// Same row at every site.
    Const(Vec<f64>),
    /// e^{βγ} broadcast to every step.
    SiteLinear(f64),
    /// Rows keyed by site-value bit pattern, sorted.
    Table(Vec<u64>, Vec<Vec<f64>>),
    /// Evaluate the potential step by step.
    Direct,
}

impl RowSource {
    fn build(env: &dyn SiteLookup, pot: &Potential, steps: &StepSet) -> RowSource {
        let r = steps.len();
        match pot.form() {
            PotentialForm::Zero => RowSource::Const(vec![1.0; r]),
            PotentialForm::StepConstant { values } => {
                RowSource::Const(values.iter().map(|v| v.exp()).collect())
            }
            _ => {
                if let Some(support) = env.discrete_support() {
                    let mut keyed: Vec<(u64, Vec<f64>)> = support
                        .iter()
                        .map(|&g| {
                            (
                                g.to_bits(),
                                (0..r).map(|z| pot.value(g, z).exp()).collect(),
                            )
                        })
                        .collect();
                    keyed.sort_by_key(|(b, _)| *b);
                    let (keys, rows) = keyed.into_iter().unzip();
                    RowSource::Table(keys, rows)
                } else if let PotentialForm::SiteLinear { beta } = pot.form() {
                    RowSource::SiteLinear(*beta)
                } else {
                    RowSource::Direct
                }
            }
        }
    }

    #[inline]
    fn fill(&self, gamma: f64, pot: &Potential, out: &mut [f64]) {
        match self {
            RowSource::Const(row) => out.copy_from_slice(row),
            RowSource::SiteLinear(beta) => {
                let w = (beta * gamma).exp();
                out.fill(w);
            }
            RowSource::Table(keys, rows) => match keys.binary_search(&gamma.to_bits()) {
                Ok(i) => out.copy_from_slice(&rows[i]),
                Err(_) => {
                    for (z, o) in out.iter_mut().enumerate() {
                        *o = pot.value(gamma, z).exp();
                    }
                }
            },
            RowSource::Direct => {
                for (z, o) in out.iter_mut().enumerate() {
                    *o = pot.value(gamma, z).exp();
                }
            }
        }
    }
}

/// Weight rows addressed by site, with a direct torus-rank path for
/// periodic lookups (skips the value fetch and key search entirely).
enum SiteRows {
    Torus {
        periods: Vec<i64>,
        rows: Vec<Vec<f64>>,
    },
    ByValue(RowSource),
}

impl SiteRows {
    fn build(env: &dyn SiteLookup, pot: &Potential, steps: &StepSet) -> SiteRows {
        if let Some((periods, values)) = env.torus_layout() {
            let r = steps.len();
            let rows = values
                .iter()
                .map(|&g| (0..r).map(|z| pot.value(g, z).exp()).collect())
                .collect();
            SiteRows::Torus { periods, rows }
        } else {
            SiteRows::ByValue(RowSource::build(env, pot, steps))
        }
    }

    #[inline]
    fn fill(
        &self,
        env: &dyn SiteLookup,
        pot: &Potential,
        site: &[i64],
        out: &mut [f64],
    ) -> Result<()> {
        match self {
            SiteRows::Torus { periods, rows } => {
                let mut idx: i64 = 0;
                for (xi, pi) in site.iter().zip(periods) {
                    idx = idx * pi + xi.rem_euclid(*pi);
                }
                out.copy_from_slice(&rows[idx as usize]);
                Ok(())
            }
            SiteRows::ByValue(src) => {
                let gamma = env.site_value(site)?;
                src.fill(gamma, pot, out);
                Ok(())
            }
        }
    }
}

enum LevelState {
    /// Directed walks: scaled values in composition-rank order.
    Dense(Vec<f64>),
    /// General step sets: scaled values keyed by absolute site.
    Sparse(BTreeMap<Vec<i64>, f64>),
}

/// One forward recursion, advanced level by level.
pub struct LevelDp<'a> {
    env: &'a dyn SiteLookup,
    pot: &'a Potential,
    steps: &'a StepSet,
    start: Vec<i64>,
    level: usize,
    offset: f64,
    state: LevelState,
    rows: SiteRows,
    binom: Option<Binom>,
    /// coordinate moved by each step, dense mode only
    coord_of_step: Vec<usize>,
    max_level: usize,
}

impl<'a> LevelDp<'a> {
    pub fn new(
        env: &'a dyn SiteLookup,
        pot: &'a Potential,
        steps: &'a StepSet,
        start: &[i64],
        max_level: usize,
    ) -> Result<LevelDp<'a>> {
        let d = steps.d();
        if start.len() != d {
            return Err(Error::InvalidEnvironment(format!(
                "start {start:?} has dimension {} != {d}",
                start.len()
            )));
        }
        if env.dim() != d {
            return Err(Error::InvalidEnvironment(format!(
                "environment dimension {} != step dimension {d}",
                env.dim()
            )));
        }
        let rows = SiteRows::build(env, pot, steps);
        if steps.is_directed() {
            if d > MAX_D {
                return Err(Error::Unsupported(format!(
                    "dense recursion supports d <= {MAX_D}, got {d}"
                )));
            }
            let binom = Binom::new(max_level + d + 1, d.max(2));
            let final_size = simplex::level_size(&binom, max_level, d);
            if final_size > DENSE_LEVEL_CAP {
                return Err(Error::Unsupported(format!(
                    "level set of {final_size} sites exceeds the dense cap"
                )));
            }
            let coord_of_step = steps
                .steps()
                .iter()
                .map(|z| z.iter().position(|&c| c == 1).expect("directed step"))
                .collect();
            Ok(LevelDp {
                env,
                pot,
                steps,
                start: start.to_vec(),
                level: 0,
                offset: 0.0,
                state: LevelState::Dense(vec![1.0]),
                rows,
                binom: Some(binom),
                coord_of_step,
                max_level,
            })
        } else {
            let mut map = BTreeMap::new();
            map.insert(start.to_vec(), 1.0);
            Ok(LevelDp {
                env,
                pot,
                steps,
                start: start.to_vec(),
                level: 0,
                offset: 0.0,
                state: LevelState::Sparse(map),
                rows,
                binom: None,
                coord_of_step: Vec::new(),
                max_level,
            })
        }
    }

    pub fn level(&self) -> usize {
        self.level
    }

    /// Advance one level.
    pub fn advance(&mut self) -> Result<()> {
        if self.level >= self.max_level {
            return Err(Error::Unsupported(format!(
                "recursion constructed for {} levels, cannot advance past it",
                self.max_level
            )));
        }
        let d = self.steps.d();
        let r = self.steps.len();
        let max = match &mut self.state {
            LevelState::Dense(cur) => {
                let j = self.level;
                let mut next;
                let mut wrow = [0.0f64; MAX_D];
                if d == 2 {
                    // rank r at level j is the composition (r, j - r); its
                    // e_1 target has rank r + 1, its e_2 target rank r
                    next = vec![0.0f64; j + 2];
                    let (k1, k2) = if self.coord_of_step[0] == 0 { (0, 1) } else { (1, 0) };
                    if let SiteRows::Torus { periods, rows } = &self.rows {
                        // rolling torus indices: x_0 increases, x_1
                        // decreases along the level, so both wrap without
                        // any division in the loop
                        let (p0, p1) = (periods[0], periods[1]);
                        let mut i0 = self.start[0].rem_euclid(p0);
                        let mut i1 = (self.start[1] + j as i64).rem_euclid(p1);
                        for (rk, &s) in cur.iter().enumerate() {
                            if s != 0.0 {
                                let row = &rows[(i0 * p1 + i1) as usize];
                                next[rk + 1] += s * row[k1];
                                next[rk] += s * row[k2];
                            }
                            i0 += 1;
                            if i0 == p0 {
                                i0 = 0;
                            }
                            i1 -= 1;
                            if i1 < 0 {
                                i1 = p1 - 1;
                            }
                        }
                    } else {
                        let mut site = [0i64; 2];
                        for (rk, &s) in cur.iter().enumerate() {
                            if s == 0.0 {
                                continue;
                            }
                            site[0] = self.start[0] + rk as i64;
                            site[1] = self.start[1] + (j - rk) as i64;
                            self.rows
                                .fill(self.env, self.pot, &site, &mut wrow[..2])?;
                            next[rk + 1] += s * wrow[k1];
                            next[rk] += s * wrow[k2];
                        }
                    }
                } else {
                    let binom = self.binom.as_ref().expect("dense state has binomials");
                    let next_size = simplex::level_size(binom, j + 1, d) as usize;
                    next = vec![0.0f64; next_size];
                    let mut targets = [0u64; MAX_D];
                    let mut site = vec![0i64; d];
                    let mut failure: Option<Error> = None;
                    simplex::for_each_composition(j, d, &mut |rank, coords| {
                        if failure.is_some() {
                            return;
                        }
                        let s = cur[rank as usize];
                        if s == 0.0 {
                            return;
                        }
                        for (si, (st, c)) in site.iter_mut().zip(self.start.iter().zip(coords)) {
                            *si = st + c;
                        }
                        if let Err(e) =
                            self.rows.fill(self.env, self.pot, &site, &mut wrow[..r])
                        {
                            failure = Some(e);
                            return;
                        }
                        simplex::target_ranks(binom, coords, &mut targets[..d]);
                        for k in 0..r {
                            let t = targets[self.coord_of_step[k]] as usize;
                            next[t] += s * wrow[k];
                        }
                    });
                    if let Some(e) = failure {
                        return Err(e);
                    }
                }
                let max = next.iter().cloned().fold(0.0f64, f64::max);
                if !max.is_finite() || max <= 0.0 {
                    return Err(Error::Unsupported(format!(
                        "level weights degenerate at level {} (max = {max})",
                        j + 1
                    )));
                }
                for v in &mut next {
                    *v /= max;
                }
                *cur = next;
                max
            }
            LevelState::Sparse(cur) => {
                let mut next: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
                let mut wrow = vec![0.0f64; r];
                for (site, &s) in cur.iter() {
                    if s == 0.0 {
                        continue;
                    }
                    self.rows.fill(self.env, self.pot, site, &mut wrow)?;
                    for (k, z) in self.steps.steps().iter().enumerate() {
                        let y: Vec<i64> = site.iter().zip(z).map(|(a, b)| a + b).collect();
                        *next.entry(y).or_insert(0.0) += s * wrow[k];
                    }
                }
                if next.len() > SPARSE_LEVEL_CAP {
                    return Err(Error::Unsupported(format!(
                        "sparse level of {} sites exceeds cap",
                        next.len()
                    )));
                }
                let max = next.values().cloned().fold(0.0f64, f64::max);
                if !max.is_finite() || max <= 0.0 {
                    return Err(Error::Unsupported(format!(
                        "level weights degenerate at level {} (max = {max})",
                        self.level + 1
                    )));
                }
                for v in next.values_mut() {
                    *v /= max;
                }
                *cur = next;
                max
            }
        };
        self.offset += max.ln() + self.steps.log_kernel_weight();
        self.level += 1;
        Ok(())
    }

    fn sum_scaled(&self) -> f64 {
        let mut acc = KahanSum::new();
        match &self.state {
            LevelState::Dense(v) => {
                for &s in v {
                    acc.add(s);
                }
            }
            LevelState::Sparse(m) => {
                for &s in m.values() {
                    acc.add(s);
                }
            }
        }
        acc.value()
    }

    /// log h_level at λ = 0, i.e. the log partition function of the level.
    pub fn log_total(&self) -> f64 {
        if self.level == 0 {
            return 0.0;
        }
        self.offset + self.sum_scaled().ln()
    }

    /// log u_level(start + rel) at λ = 0, or None if unreachable.
    pub fn log_value_rel(&self, rel: &[i64]) -> Option<f64> {
        match &self.state {
            LevelState::Dense(v) => {
                if rel.iter().any(|&c| c < 0)
                    || rel.iter().sum::<i64>() != self.level as i64
                    || rel.len() != self.steps.d()
                {
                    return None;
                }
                let binom = self.binom.as_ref().expect("dense state");
                let r = simplex::rank(binom, rel) as usize;
                Some(self.offset + v[r].ln())
            }
            LevelState::Sparse(m) => {
                let site: Vec<i64> = self.start.iter().zip(rel).map(|(a, b)| a + b).collect();
                m.get(&site).map(|&s| self.offset + s.ln())
            }
        }
    }

    /// log of the diagonal-endpoint weight at the current level, defined
    /// when d divides the level.
    pub fn log_diagonal(&self) -> Option<f64> {
        let d = self.steps.d();
        if self.level % d != 0 {
            return None;
        }
        let rel = vec![(self.level / d) as i64; d];
        self.log_value_rel(&rel)
    }

    /// Replica overlap Σ_x μ(x)² of the endpoint distribution. λ cancels in
    /// the ratio, so the overlap needs no tilt argument.
    pub fn overlap(&self) -> f64 {
        let total = self.sum_scaled();
        let mut sq = KahanSum::new();
        match &self.state {
            LevelState::Dense(v) => {
                for &s in v {
                    sq.add(s * s);
                }
            }
            LevelState::Sparse(m) => {
                for &s in m.values() {
                    sq.add(s * s);
                }
            }
        }
        sq.value() / (total * total)
    }

    /// Endpoint distribution μ(x) over absolute sites, sorted by site.
    pub fn endpoint_distribution(&self) -> Vec<(Vec<i64>, f64)> {
        let total = self.sum_scaled();
        let mut out: Vec<(Vec<i64>, f64)> = Vec::new();
        match &self.state {
            LevelState::Dense(v) => {
                let d = self.steps.d();
                simplex::for_each_composition(self.level, d, &mut |rank, coords| {
                    let site: Vec<i64> =
                        self.start.iter().zip(coords).map(|(a, b)| a + b).collect();
                    out.push((site, v[rank as usize] / total));
                });
                out.sort_by(|a, b| a.0.cmp(&b.0));
            }
            LevelState::Sparse(m) => {
                for (site, &s) in m {
                    out.push((site.clone(), s / total));
                }
            }
        }
        out
    }

    /// Materialize the current level as a kernel at tilt λ. Log values are
    /// the untilted ones shifted by exactly −level·λ.
    pub fn materialize(&self, lambda: f64) -> super::LevelKernel {
        let shift = self.level as f64 * lambda;
        let mut sites: Vec<(Vec<i64>, f64)> = Vec::new();
        match &self.state {
            LevelState::Dense(v) => {
                let d = self.steps.d();
                simplex::for_each_composition(self.level, d, &mut |rank, coords| {
                    let site: Vec<i64> =
                        self.start.iter().zip(coords).map(|(a, b)| a + b).collect();
                    sites.push((site, self.offset + v[rank as usize].ln() - shift));
                });
                sites.sort_by(|a, b| a.0.cmp(&b.0));
            }
            LevelState::Sparse(m) => {
                for (site, &s) in m {
                    sites.push((site.clone(), self.offset + s.ln() - shift));
                }
            }
        }
        super::LevelKernel {
            n: self.level,
            lambda,
            start: self.start.clone(),
            sites,
            log_total: self.log_total() - shift,
        }
    }
}
