//! Model ingredients: step sets with a uniform kernel, site environments
//! (periodic or i.i.d.), local potentials, and the embedding of random
//! walks in random environments as potentials over the uniform base walk.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{site_key, SplitMix64};

/// Default cap on i.i.d. box volume (number of sites addressable).
pub const DEFAULT_BOX_CAP: u128 = 1 << 33;

// ---------------------------------------------------------------------------
// Step sets
// ---------------------------------------------------------------------------

/// Finite set of admissible steps in Z^d with the uniform kernel
/// p(z) = 1/|R|. The `directed` flag is set exactly when the steps are the
/// standard basis e_1..e_d.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSet {
    d: usize,
    steps: Vec<Vec<i64>>,
    directed: bool,
}

/// Constructor selector for [`StepSet::make`].
#[derive(Clone, Debug)]
pub enum StepKind {
    Directed,
    SymmetricNn,
    Custom(Vec<Vec<i64>>),
}

impl StepSet {
    pub fn make(d: usize, kind: StepKind) -> Result<StepSet> {
        match kind {
            StepKind::Directed => StepSet::directed(d),
            StepKind::SymmetricNn => StepSet::symmetric_nn(d),
            StepKind::Custom(steps) => StepSet::custom(d, steps),
        }
    }

    /// Standard basis {e_1, ..., e_d}; requires d >= 2 so that |R| >= 2.
    pub fn directed(d: usize) -> Result<StepSet> {
        if d < 2 {
            return Err(Error::InvalidStepSet(format!(
                "directed step set needs d >= 2, got {d}"
            )));
        }
        let steps = (0..d)
            .map(|i| {
                let mut e = vec![0i64; d];
                e[i] = 1;
                e
            })
            .collect();
        Ok(StepSet {
            d,
            steps,
            directed: true,
        })
    }

    /// Nearest-neighbor steps {±e_1, ..., ±e_d}.
    pub fn symmetric_nn(d: usize) -> Result<StepSet> {
        if d < 1 {
            return Err(Error::InvalidStepSet("dimension must be positive".into()));
        }
        let mut steps = Vec::with_capacity(2 * d);
        for i in 0..d {
            let mut e = vec![0i64; d];
            e[i] = 1;
            steps.push(e.clone());
            e[i] = -1;
            steps.push(e);
        }
        Ok(StepSet {
            d,
            steps,
            directed: false,
        })
    }

    pub fn custom(d: usize, steps: Vec<Vec<i64>>) -> Result<StepSet> {
        if d < 1 {
            return Err(Error::InvalidStepSet("dimension must be positive".into()));
        }
        if steps.len() < 2 {
            return Err(Error::InvalidStepSet(format!(
                "need at least 2 steps, got {}",
                steps.len()
            )));
        }
        for s in &steps {
            if s.len() != d {
                return Err(Error::InvalidStepSet(format!(
                    "step {s:?} has dimension {} != {d}",
                    s.len()
                )));
            }
        }
        for i in 0..steps.len() {
            for j in (i + 1)..steps.len() {
                if steps[i] == steps[j] {
                    return Err(Error::InvalidStepSet(format!(
                        "duplicate step {:?}",
                        steps[i]
                    )));
                }
            }
        }
        let directed = is_standard_basis(d, &steps);
        Ok(StepSet { d, steps, directed })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn steps(&self) -> &[Vec<i64>] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    /// Kernel weight p(z) = 1/|R| of every step.
    pub fn kernel_weight(&self) -> f64 {
        1.0 / self.steps.len() as f64
    }

    pub fn log_kernel_weight(&self) -> f64 {
        -(self.steps.len() as f64).ln()
    }
}

fn is_standard_basis(d: usize, steps: &[Vec<i64>]) -> bool {
    if steps.len() != d {
        return false;
    }
    let mut seen = vec![false; d];
    for s in steps {
        let ones: Vec<usize> = (0..d).filter(|&i| s[i] != 0).collect();
        match ones.as_slice() {
            [i] if s[*i] == 1 && !seen[*i] => seen[*i] = true,
            _ => return false,
        }
    }
    seen.iter().all(|&b| b)
}

/// `make_step_set` in free-function form.
pub fn make_step_set(d: usize, kind: StepKind) -> Result<StepSet> {
    StepSet::make(d, kind)
}

// ---------------------------------------------------------------------------
// Site distributions
// ---------------------------------------------------------------------------

/// Per-site value distribution for i.i.d. environments. LogGamma stores the
/// value -log G with G ~ Gamma(gamma, 1), so potentials stay pure lookups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SiteDistribution {
    Bernoulli { p: f64, lo: f64, hi: f64 },
    Gaussian { mean: f64, sd: f64, trunc: f64 },
    LogGamma { gamma: f64 },
}

impl SiteDistribution {
    pub fn validate(&self) -> Result<()> {
        match self {
            SiteDistribution::Bernoulli { p, lo, hi } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::InvalidDistribution(format!(
                        "bernoulli p = {p} outside [0, 1]"
                    )));
                }
                if !(lo < hi) {
                    return Err(Error::InvalidDistribution(format!(
                        "bernoulli needs lo < hi, got lo = {lo}, hi = {hi}"
                    )));
                }
            }
            SiteDistribution::Gaussian { sd, trunc, .. } => {
                if !(*sd > 0.0) {
                    return Err(Error::InvalidDistribution(format!("sd = {sd} must be > 0")));
                }
                if !(*trunc > 0.0 && trunc.is_finite()) {
                    return Err(Error::InvalidDistribution(format!(
                        "truncation halfwidth {trunc} must be finite and positive"
                    )));
                }
            }
            SiteDistribution::LogGamma { gamma } => {
                if !(*gamma > 0.0) {
                    return Err(Error::InvalidDistribution(format!(
                        "log-gamma shape {gamma} must be > 0"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Draw one site value from the stream `rng`.
    pub fn sample(&self, rng: &mut SplitMix64) -> f64 {
        match self {
            SiteDistribution::Bernoulli { p, lo, hi } => {
                if rng.uniform() < *p {
                    *hi
                } else {
                    *lo
                }
            }
            SiteDistribution::Gaussian { mean, sd, trunc } => {
                let normal = rand_distr::Normal::new(*mean, *sd).expect("validated");
                // rejection onto [mean - trunc, mean + trunc]
                loop {
                    let x = normal.sample(rng);
                    if (x - mean).abs() <= *trunc {
                        return x;
                    }
                }
            }
            SiteDistribution::LogGamma { gamma } => {
                let g = rand_distr::Gamma::new(*gamma, 1.0).expect("validated");
                -g.sample(rng).ln()
            }
        }
    }

    /// Finite support for distributions with one, used for weight tables.
    pub fn support(&self) -> Option<Vec<f64>> {
        match self {
            SiteDistribution::Bernoulli { lo, hi, .. } => Some(vec![*lo, *hi]),
            _ => None,
        }
    }

    /// Bound on |value| when one exists.
    pub fn value_bound(&self) -> Option<f64> {
        match self {
            SiteDistribution::Bernoulli { lo, hi, .. } => Some(lo.abs().max(hi.abs())),
            SiteDistribution::Gaussian { mean, trunc, .. } => {
                Some((mean - trunc).abs().max((mean + trunc).abs()))
            }
            SiteDistribution::LogGamma { .. } => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Environments
// ---------------------------------------------------------------------------

/// Half-open integer box ∏ [lo_i, hi_i).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntBox {
    pub lo: Vec<i64>,
    pub hi: Vec<i64>,
}

impl IntBox {
    pub fn new(lo: Vec<i64>, hi: Vec<i64>) -> Result<IntBox> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidEnvironment(
                "box bounds must be nonempty and of equal dimension".into(),
            ));
        }
        if lo.iter().zip(&hi).any(|(a, b)| a >= b) {
            return Err(Error::InvalidEnvironment(format!(
                "empty box: lo = {lo:?}, hi = {hi:?}"
            )));
        }
        Ok(IntBox { lo, hi })
    }

    /// Cube [0, n)^d.
    pub fn cube(d: usize, n: i64) -> Result<IntBox> {
        IntBox::new(vec![0; d], vec![n; d])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> u128 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| (b - a) as u128)
            .product()
    }

    pub fn contains(&self, x: &[i64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(xi, (a, b))| a <= xi && xi < b)
    }
}

/// Uniform lookup interface used by the recursion and oracle code. Lookups
/// are pure, so implementors are safe to share across threads.
pub trait SiteLookup: Sync {
    fn site_value(&self, x: &[i64]) -> Result<f64>;
    fn dim(&self) -> usize;
    /// Distinct values the lookup can return, when finitely many.
    fn discrete_support(&self) -> Option<Vec<f64>> {
        None
    }
    /// Periodic structure (periods, row-major values), when the lookup
    /// has one; lets the recursion index weight rows by torus rank.
    fn torus_layout(&self) -> Option<(Vec<i64>, Vec<f64>)> {
        None
    }
}

#[derive(Clone, Debug)]
pub struct PeriodicEnv {
    periods: Vec<i64>,
    values: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct IidEnv {
    dist: SiteDistribution,
    bounds: IntBox,
    seed: u64,
}

/// Site-indexed environment: a finite torus of explicit values, or an
/// i.i.d. field over a box keyed by (seed, site). The i.i.d. field values
/// are computed on demand from the counter-based stream, so environments
/// cost O(1) memory no matter the box.
#[derive(Clone, Debug)]
pub enum Environment {
    Periodic(PeriodicEnv),
    Iid(IidEnv),
}

impl Environment {
    /// Periodic environment: `values` in row-major order over the torus
    /// with the last coordinate varying fastest.
    pub fn periodic(values: Vec<f64>, periods: Vec<i64>) -> Result<Environment> {
        if periods.is_empty() || periods.iter().any(|&p| p <= 0) {
            return Err(Error::InvalidEnvironment(format!(
                "periods must be positive, got {periods:?}"
            )));
        }
        let expected: i64 = periods.iter().product();
        if values.len() as i64 != expected {
            return Err(Error::InvalidEnvironment(format!(
                "got {} values for a torus of {} sites",
                values.len(),
                expected
            )));
        }
        Ok(Environment::Periodic(PeriodicEnv { periods, values }))
    }

    /// i.i.d. environment over `bounds` keyed by `seed`.
    pub fn iid(dist: SiteDistribution, bounds: IntBox, seed: u64) -> Result<Environment> {
        Environment::iid_capped(dist, bounds, seed, DEFAULT_BOX_CAP)
    }

    pub fn iid_capped(
        dist: SiteDistribution,
        bounds: IntBox,
        seed: u64,
        cap: u128,
    ) -> Result<Environment> {
        dist.validate()?;
        let volume = bounds.volume();
        if volume > cap {
            return Err(Error::BoxTooLarge { volume, cap });
        }
        Ok(Environment::Iid(IidEnv { dist, bounds, seed }))
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self, Environment::Periodic(_))
    }

    pub fn periods(&self) -> Option<&[i64]> {
        match self {
            Environment::Periodic(p) => Some(&p.periods),
            Environment::Iid(_) => None,
        }
    }

    pub fn dist(&self) -> Option<&SiteDistribution> {
        match self {
            Environment::Iid(e) => Some(&e.dist),
            Environment::Periodic(_) => None,
        }
    }

    pub fn bounds(&self) -> Option<&IntBox> {
        match self {
            Environment::Iid(e) => Some(&e.bounds),
            Environment::Periodic(_) => None,
        }
    }

    /// Save as a JSON header plus a little-endian f64 sidecar at
    /// `<prefix>.json` / `<prefix>.bin`. i.i.d. values stream out in
    /// lexicographic site order (last coordinate fastest).
    pub fn save(&self, prefix: &Path) -> Result<(PathBuf, PathBuf)> {
        let json_path = prefix.with_extension("json");
        let bin_path = prefix.with_extension("bin");
        let header = match self {
            Environment::Periodic(p) => EnvHeader {
                kind: "periodic".into(),
                dims: p.periods.clone(),
                dist: None,
                seed: None,
                bounds: None,
                sidecar: bin_path
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned()),
            },
            Environment::Iid(e) => EnvHeader {
                kind: "iid-box".into(),
                dims: e
                    .bounds
                    .lo
                    .iter()
                    .zip(&e.bounds.hi)
                    .map(|(a, b)| b - a)
                    .collect(),
                dist: Some(e.dist.clone()),
                seed: Some(e.seed),
                bounds: Some(e.bounds.clone()),
                sidecar: bin_path
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned()),
            },
        };
        let mut jf = std::fs::File::create(&json_path)?;
        serde_json::to_writer_pretty(&mut jf, &header)?;
        jf.write_all(b"\n")?;

        let mut bf = std::io::BufWriter::new(std::fs::File::create(&bin_path)?);
        match self {
            Environment::Periodic(p) => {
                for v in &p.values {
                    bf.write_all(&v.to_le_bytes())?;
                }
            }
            Environment::Iid(e) => {
                for x in iterate_box(&e.bounds) {
                    let v = self.site_value(&x)?;
                    bf.write_all(&v.to_le_bytes())?;
                }
            }
        }
        bf.flush()?;
        Ok((json_path, bin_path))
    }

    /// Load an environment saved by [`Environment::save`]. i.i.d. fields
    /// are rebuilt from (dist, box, seed) and the sidecar is verified
    /// bit-for-bit against the regenerated values.
    pub fn load(prefix: &Path) -> Result<Environment> {
        let json_path = prefix.with_extension("json");
        let bin_path = prefix.with_extension("bin");
        let header: EnvHeader = serde_json::from_reader(std::fs::File::open(&json_path)?)?;
        let mut raw = Vec::new();
        std::fs::File::open(&bin_path)?.read_to_end(&mut raw)?;
        if raw.len() % 8 != 0 {
            return Err(Error::StoredMismatch(format!(
                "sidecar length {} not a multiple of 8",
                raw.len()
            )));
        }
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunked by 8")))
            .collect();
        match header.kind.as_str() {
            "periodic" => Environment::periodic(values, header.dims),
            "iid-box" => {
                let dist = header.dist.ok_or_else(|| {
                    Error::StoredMismatch("iid header missing distribution".into())
                })?;
                let bounds = header
                    .bounds
                    .ok_or_else(|| Error::StoredMismatch("iid header missing bounds".into()))?;
                let seed = header
                    .seed
                    .ok_or_else(|| Error::StoredMismatch("iid header missing seed".into()))?;
                let env = Environment::iid(dist, bounds.clone(), seed)?;
                for (i, x) in iterate_box(&bounds).enumerate() {
                    let regen = env.site_value(&x)?;
                    if i >= values.len() || regen.to_bits() != values[i].to_bits() {
                        return Err(Error::StoredMismatch(format!(
                            "value at site {x:?} differs from regenerated stream"
                        )));
                    }
                }
                if values.len() as u128 != bounds.volume() {
                    return Err(Error::StoredMismatch(format!(
                        "sidecar holds {} values, box has {}",
                        values.len(),
                        bounds.volume()
                    )));
                }
                Ok(env)
            }
            other => Err(Error::StoredMismatch(format!(
                "unknown environment kind `{other}`"
            ))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct EnvHeader {
    kind: String,
    dims: Vec<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dist: Option<SiteDistribution>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bounds: Option<IntBox>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sidecar: Option<String>,
}

/// Lexicographic iteration over a box, last coordinate fastest.
fn iterate_box(b: &IntBox) -> impl Iterator<Item = Vec<i64>> + '_ {
    let d = b.dim();
    let mut cur = b.lo.clone();
    let mut done = false;
    std::iter::from_fn(move || {
        if done {
            return None;
        }
        let out = cur.clone();
        // advance
        let mut i = d;
        loop {
            if i == 0 {
                done = true;
                break;
            }
            i -= 1;
            cur[i] += 1;
            if cur[i] < b.hi[i] {
                break;
            }
            cur[i] = b.lo[i];
        }
        Some(out)
    })
}

impl SiteLookup for Environment {
    fn site_value(&self, x: &[i64]) -> Result<f64> {
        match self {
            Environment::Periodic(p) => {
                if x.len() != p.periods.len() {
                    return Err(Error::SiteOutsideDomain { site: x.to_vec() });
                }
                let mut idx: i64 = 0;
                for (xi, pi) in x.iter().zip(&p.periods) {
                    let r = xi.rem_euclid(*pi);
                    idx = idx * pi + r;
                }
                Ok(p.values[idx as usize])
            }
            Environment::Iid(e) => {
                if !e.bounds.contains(x) {
                    return Err(Error::SiteOutsideDomain { site: x.to_vec() });
                }
                let mut rng = SplitMix64::new(site_key(e.seed, x));
                Ok(e.dist.sample(&mut rng))
            }
        }
    }

    fn dim(&self) -> usize {
        match self {
            Environment::Periodic(p) => p.periods.len(),
            Environment::Iid(e) => e.bounds.dim(),
        }
    }

    fn discrete_support(&self) -> Option<Vec<f64>> {
        match self {
            Environment::Periodic(p) => {
                let mut vals = p.values.clone();
                vals.sort_by(|a, b| a.partial_cmp(b).expect("site values are not NaN"));
                vals.dedup();
                Some(vals)
            }
            Environment::Iid(e) => e.dist.support(),
        }
    }

    fn torus_layout(&self) -> Option<(Vec<i64>, Vec<f64>)> {
        match self {
            Environment::Periodic(p) => Some((p.periods.clone(), p.values.clone())),
            Environment::Iid(_) => None,
        }
    }
}

/// Convenience constructors matching the two environment kinds.
pub fn make_periodic_environment(values: Vec<f64>, periods: Vec<i64>) -> Result<Environment> {
    Environment::periodic(values, periods)
}

pub fn sample_iid_environment(
    dist: SiteDistribution,
    bounds: IntBox,
    seed: u64,
) -> Result<Environment> {
    Environment::iid(dist, bounds, seed)
}

// ---------------------------------------------------------------------------
// Potentials
// ---------------------------------------------------------------------------

type PotentialFn = Arc<dyn Fn(f64, usize) -> f64 + Send + Sync>;

/// Functional form of the local potential V_o(site value, step index).
/// The form is carried explicitly so that exponential moments can be
/// evaluated in closed form where one exists.
#[derive(Clone)]
pub enum PotentialForm {
    /// V ≡ 0.
    Zero,
    /// V_o(γ, z) = β γ, independent of the step.
    SiteLinear { beta: f64 },
    /// V_o(γ, z) = v_z, deterministic per step.
    StepConstant { values: Vec<f64> },
    /// Finite table over site values; keys are sorted f64 bit patterns.
    Table { keys: Vec<u64>, rows: Vec<Vec<f64>> },
    /// Arbitrary closure.
    Custom { f: PotentialFn },
}

impl std::fmt::Debug for PotentialForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PotentialForm::Zero => write!(f, "Zero"),
            PotentialForm::SiteLinear { beta } => write!(f, "SiteLinear {{ beta: {beta} }}"),
            PotentialForm::StepConstant { values } => {
                write!(f, "StepConstant {{ values: {values:?} }}")
            }
            PotentialForm::Table { keys, .. } => write!(f, "Table {{ {} keys }}", keys.len()),
            PotentialForm::Custom { .. } => write!(f, "Custom"),
        }
    }
}

/// Local potential with a (possibly infinite) sup-norm bound. Bounded
/// potentials keep every free energy finite; the log-gamma polymer uses an
/// unbounded site-linear potential and carries `bound = inf`.
#[derive(Clone, Debug)]
pub struct Potential {
    form: PotentialForm,
    bound: f64,
}

impl Potential {
    pub fn zero() -> Potential {
        Potential {
            form: PotentialForm::Zero,
            bound: 0.0,
        }
    }

    /// V_o(γ, z) = β γ. `site_bound` is the bound on |γ| when known.
    pub fn site_linear(beta: f64, site_bound: Option<f64>) -> Potential {
        let bound = site_bound.map_or(f64::INFINITY, |b| beta.abs() * b);
        Potential {
            form: PotentialForm::SiteLinear { beta },
            bound,
        }
    }

    pub fn step_constant(values: Vec<f64>) -> Potential {
        let bound = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Potential {
            form: PotentialForm::StepConstant { values },
            bound,
        }
    }

    /// Finite table: `entries[i] = (site value, per-step potentials)`.
    pub fn table(entries: Vec<(f64, Vec<f64>)>) -> Potential {
        let mut entries = entries;
        entries.sort_by_key(|(v, _)| v.to_bits());
        let bound = entries
            .iter()
            .flat_map(|(_, row)| row.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let (keys, rows) = entries.into_iter().map(|(v, r)| (v.to_bits(), r)).unzip();
        Potential {
            form: PotentialForm::Table { keys, rows },
            bound,
        }
    }

    pub fn custom<F>(f: F, bound: f64) -> Potential
    where
        F: Fn(f64, usize) -> f64 + Send + Sync + 'static,
    {
        Potential {
            form: PotentialForm::Custom { f: Arc::new(f) },
            bound,
        }
    }

    /// V_o(site value, step index). Table potentials panic on site values
    /// outside their key set: the environment's support must match the
    /// table, which the constructors in this module guarantee.
    #[inline]
    pub fn value(&self, site_value: f64, step_idx: usize) -> f64 {
        match &self.form {
            PotentialForm::Zero => 0.0,
            PotentialForm::SiteLinear { beta } => beta * site_value,
            PotentialForm::StepConstant { values } => values[step_idx],
            PotentialForm::Table { keys, rows } => {
                let bits = site_value.to_bits();
                match keys.binary_search(&bits) {
                    Ok(i) => rows[i][step_idx],
                    Err(_) => panic!(
                        "table potential has no entry for site value {site_value}; \
                         the environment's support must match the table keys"
                    ),
                }
            }
            PotentialForm::Custom { f } => f(site_value, step_idx),
        }
    }

    pub fn form(&self) -> &PotentialForm {
        &self.form
    }

    /// Sup-norm bound B with |V_o| <= B; infinite for unbounded potentials.
    pub fn bound(&self) -> f64 {
        self.bound
    }
}

/// Potential at the ordered pair (x, x + z): V_o(ω_x, z).
pub fn potential_value(
    pot: &Potential,
    env: &dyn SiteLookup,
    x: &[i64],
    step_idx: usize,
) -> Result<f64> {
    Ok(pot.value(env.site_value(x)?, step_idx))
}

// ---------------------------------------------------------------------------
// RWRE embedding
// ---------------------------------------------------------------------------

/// Transition kernel of a random walk in random environment, tabulated by
/// site value. An empty `site_values` list means the kernel is the same at
/// every site (`rows` then holds a single row).
#[derive(Clone, Debug)]
pub struct RwreKernel {
    pub site_values: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

/// Embed an RWRE as a potential over the uniform base walk:
/// V(γ, z) = log p̂(γ, z) + log |R|, so that e^{ΣV} (1/|R|)^n along any
/// path equals the product of RWRE transition probabilities.
pub fn rwre_to_potential(kernel: &RwreKernel, steps: &StepSet) -> Result<Potential> {
    let r = steps.len();
    let check_row = |row: &[f64]| -> Result<()> {
        if row.len() != r {
            return Err(Error::InvalidDistribution(format!(
                "kernel row has {} entries for {} steps",
                row.len(),
                r
            )));
        }
        if row.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::InvalidDistribution(
                "kernel entries must be strictly positive".into(),
            ));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(format!(
                "kernel row sums to {sum}, expected 1"
            )));
        }
        Ok(())
    };

    let log_r = (r as f64).ln();
    if kernel.site_values.is_empty() {
        if kernel.rows.len() != 1 {
            return Err(Error::InvalidDistribution(
                "value-independent kernel must supply exactly one row".into(),
            ));
        }
        check_row(&kernel.rows[0])?;
        let values: Vec<f64> = kernel.rows[0].iter().map(|p| p.ln() + log_r).collect();
        Ok(Potential::step_constant(values))
    } else {
        if kernel.rows.len() != kernel.site_values.len() {
            return Err(Error::InvalidDistribution(
                "one kernel row required per site value".into(),
            ));
        }
        let mut entries = Vec::with_capacity(kernel.rows.len());
        for (v, row) in kernel.site_values.iter().zip(&kernel.rows) {
            check_row(row)?;
            entries.push((*v, row.iter().map(|p| p.ln() + log_r).collect()));
        }
        Ok(Potential::table(entries))
    }
}

// ---------------------------------------------------------------------------
// Model bundles
// ---------------------------------------------------------------------------

/// An i.i.d. model: distribution, potential, and step set together.
#[derive(Clone, Debug)]
pub struct IidModel {
    pub dist: SiteDistribution,
    pub pot: Potential,
    pub steps: StepSet,
}

impl IidModel {
    pub fn new(dist: SiteDistribution, pot: Potential, steps: StepSet) -> Result<IidModel> {
        dist.validate()?;
        Ok(IidModel { dist, pot, steps })
    }

    /// Environment covering every site reachable in `horizon` steps.
    pub fn environment(&self, seed: u64, horizon: usize) -> Result<Environment> {
        let d = self.steps.d();
        let n = horizon as i64;
        let bounds = if self.steps.is_directed() {
            IntBox::new(vec![0; d], vec![n + 1; d])?
        } else {
            let mut reach = 0i64;
            for s in self.steps.steps() {
                reach = reach.max(s.iter().map(|c| c.abs()).max().unwrap_or(0));
            }
            IntBox::new(vec![-n * reach; d], vec![n * reach + 1; d])?
        };
        Environment::iid(self.dist.clone(), bounds, seed)
    }

    pub fn descriptor(&self) -> String {
        format!(
            "dist={:?} pot={:?} steps(d={}, |R|={}, directed={})",
            self.dist,
            self.pot.form(),
            self.steps.d(),
            self.steps.len(),
            self.steps.is_directed()
        )
    }
}
