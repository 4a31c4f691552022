use rand::Rng;
use rayon::prelude::*;

use crate::dist::{build_zm, TabularDistribution, ZmSpec};
use crate::error::{Error, Result};
use crate::oracle::posterior_table;
use crate::policy::{PolicyKind, PolicySpec};
use crate::rng;
use crate::sequence::{MaskedSequence, Sequence};

/// `Σ_z P(z)^(1−s) Q(z)^s`.
pub fn chernoff_coefficient(p: &[f64], q: &[f64], s: f64) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| if a == 0.0 || b == 0.0 { 0.0 } else { a.powf(1.0 - s) * b.powf(s) })
        .sum()
}

/// `−ln min_s Σ P^(1−s) Q^s` with `s ∈ [1e-4, 1 − 1e-4]`, golden-section
/// search to `1e-8`.
pub fn chernoff_information(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch { expected: p.len(), got: q.len() });
    }
    for dist in [p, q] {
        let total: f64 = dist.iter().sum();
        if dist.iter().any(|&x| x.is_nan() || x < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidDistribution(format!("{dist:?} is not a probability vector")));
        }
    }
    if p == q {
        return Ok(0.0);
    }
    let f = |s: f64| chernoff_coefficient(p, q, s);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (1e-4, 1.0 - 1e-4);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-8 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let min = fc.min(fd).min(f(0.5 * (a + b)));
    Ok(-min.ln())
}

/// Laws of `Y` given the latents (sum fixed to 0) under `θ = 0` and `θ = m/2`.
pub fn zm_informative_laws(spec: &ZmSpec) -> (Vec<f64>, Vec<f64>) {
    let m = spec.m;
    let p: Vec<f64> = (0..m).map(|y| spec.noise_probability(y)).collect();
    let q: Vec<f64> = (0..m).map(|y| spec.noise_probability((y + m - spec.delta()) % m)).collect();
    (p, q)
}

/// Closed-form `s = 1/2` coefficient `2√((1−η)η/(m−1)) + (m−2)η/(m−1)`.
pub fn zm_bhattacharyya(m: u32, eta: f64) -> f64 {
    let other = eta / (m - 1) as f64;
    2.0 * ((1.0 - eta) * other).sqrt() + (m - 2) as f64 * other
}

/// `argmax_θ Σ log P_θ(x)`, ties to the smallest `θ`.
pub fn map_estimate(samples: &[Sequence], family: &[(u32, &TabularDistribution)]) -> Result<u32> {
    if family.is_empty() {
        return Err(Error::InvalidArgument("empty parameter family".into()));
    }
    let mut order: Vec<usize> = (0..family.len()).collect();
    order.sort_by_key(|&j| family[j].0);
    let mut scores = vec![0.0f64; family.len()];
    for x in samples {
        let mut possible = false;
        for (j, (_, dist)) in family.iter().enumerate() {
            let p = dist.probability(x);
            possible |= p > 0.0;
            scores[j] += p.ln();
        }
        if !possible {
            return Err(Error::InvalidArgument(format!("sample {x} has zero probability under every parameter")));
        }
    }
    let mut best = order[0];
    for &j in &order[1..] {
        if scores[j] > scores[best] {
            best = j;
        }
    }
    Ok(family[best].0)
}

/// How the oracle chain orders reveals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OracleOrder {
    /// Latents in permutation order, then `Y`.
    #[default]
    Permutation,
    /// Exact-oracle max-prob policy, one reveal per step.
    ConfidencePolicy,
}

/// `T` teacher-forced chains on fresh `Z_m` draws; every intermediate
/// `(z, x0)` pair with a mask, `d + 1` per chain.
pub fn oracle_trajectory_samples<R: Rng + ?Sized>(
    spec: &ZmSpec,
    dist: &TabularDistribution,
    trajectories: usize,
    order: OracleOrder,
    rng: &mut R,
) -> Result<Vec<(MaskedSequence, Sequence)>> {
    let mut out = Vec::with_capacity(trajectories * spec.len());
    let policy = PolicySpec::new(PolicyKind::MaxProb);
    let mut reveal_order: Vec<usize> = spec.latent_indices();
    reveal_order.push(spec.y_index());
    for _ in 0..trajectories {
        let x0 = dist.sample(rng);
        let mut z = MaskedSequence::fully_masked(spec.len(), dist.vocab());
        for &next in &reveal_order {
            out.push((z.clone(), x0.clone()));
            let i = match order {
                OracleOrder::Permutation => next,
                OracleOrder::ConfidencePolicy => {
                    let table = posterior_table(dist, &z)?;
                    policy.select(&table, &z, 0, 1, rng)?[0]
                }
            };
            z = z.apply_reveal(i, x0.get(i))?;
        }
    }
    Ok(out)
}

/// True when every latent is visible and `Y` is masked.
pub fn is_informative(spec: &ZmSpec, z: &MaskedSequence) -> bool {
    z.is_masked(spec.y_index()) && spec.latent_indices().iter().all(|&i| !z.is_masked(i))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ComplexityMethod {
    RandomMasking,
    PumaOracle,
}

impl ComplexityMethod {
    pub fn name(&self) -> &'static str {
        match self {
            Self::RandomMasking => "random_masking",
            Self::PumaOracle => "puma_oracle",
        }
    }
}

/// Per-position masking law of the random-masking arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskingLaw {
    Fixed(f64),
    /// `t ~ Unif[0,1]` per sample.
    UniformT,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityConfig {
    pub d_values: Vec<usize>,
    pub m: u32,
    pub eta: f64,
    pub masking: MaskingLaw,
    pub delta: f64,
    pub seeds: usize,
    pub trials: usize,
    pub sample_budget: u64,
    pub trajectory_budget: u64,
    pub order: OracleOrder,
    pub master_seed: u64,
}

impl Default for ComplexityConfig {
    fn default() -> Self {
        Self {
            d_values: vec![2, 4, 6, 8],
            m: 4,
            eta: 0.1,
            masking: MaskingLaw::Fixed(0.5),
            delta: 0.1,
            seeds: 10,
            trials: 200,
            sample_budget: 1 << 20,
            trajectory_budget: 1 << 12,
            order: OracleOrder::Permutation,
            master_seed: 0,
        }
    }
}

impl ComplexityConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.d_values.is_empty() || self.d_values.iter().any(|&d| d == 0 || d > 16) {
            errs.push("d values must lie in 1..=16".to_string());
        }
        if let MaskingLaw::Fixed(q) = self.masking {
            if !(q > 0.0 && q < 1.0) {
                errs.push(format!("masking probability {q} is outside (0, 1)"));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            errs.push(format!("delta {} is outside (0, 1)", self.delta));
        }
        if self.seeds == 0 || self.trials == 0 {
            errs.push("seeds and trials must be positive".into());
        }
        if self.sample_budget == 0 || self.trajectory_budget == 0 {
            errs.push("budgets must be positive".into());
        }
        if let Err(e) = ZmSpec::new(self.m, 1, self.eta, 0).validate() {
            errs.push(e.to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(errs.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityRow {
    pub d: usize,
    pub method: ComplexityMethod,
    /// Minimal samples reaching the target error, or the budget if censored.
    pub samples: u64,
    pub error_rate: f64,
    pub seed: u64,
    pub censored: bool,
}

pub const COMPLEXITY_HEADER: &str = "d,method,samples,error_rate,seed";

pub fn complexity_csv(rows: &[ComplexityRow]) -> String {
    let mut out = String::from(COMPLEXITY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.d, r.method.name(), r.samples, r.error_rate, r.seed));
    }
    out
}

/// Informative observations of one estimation trial, generated lazily so
/// that larger sample sizes extend smaller ones (common random numbers).
struct TrialStream {
    truth: usize,
    rng: rng::Rng,
    generated: u64,
    /// `(sample index, cumulative log-likelihood per θ)`.
    obs: Vec<(u64, [f64; 2])>,
}

struct Arm<'a> {
    spec: &'a ZmSpec,
    family: [TabularDistribution; 2],
    method: ComplexityMethod,
    masking: MaskingLaw,
    order: OracleOrder,
}

impl Arm<'_> {
    /// Units drawn per sample count: masked samples, or trajectories.
    fn extend(&self, s: &mut TrialStream, upto: u64) -> Result<()> {
        while s.generated < upto {
            let idx = s.generated;
            s.generated += 1;
            let x = match self.method {
                ComplexityMethod::RandomMasking => {
                    let t = match self.masking {
                        MaskingLaw::Fixed(q) => q,
                        MaskingLaw::UniformT => s.rng.random(),
                    };
                    // The mask is independent of x0, so x0 is only drawn for
                    // informative patterns.
                    let mut informative = true;
                    for i in 0..self.spec.len() {
                        let masked = s.rng.random::<f64>() < t;
                        informative &= masked == (i == self.spec.y_index());
                    }
                    if !informative {
                        continue;
                    }
                    self.family[s.truth].sample(&mut s.rng)
                }
                ComplexityMethod::PumaOracle => {
                    let pairs = oracle_trajectory_samples(self.spec, &self.family[s.truth], 1, self.order, &mut s.rng)?;
                    match pairs.into_iter().find(|(z, _)| is_informative(self.spec, z)) {
                        Some((_, x)) => x,
                        None => continue,
                    }
                }
            };
            let prev = s.obs.last().map(|o| o.1).unwrap_or([0.0; 2]);
            let ll = [self.family[0].probability(&x).ln(), self.family[1].probability(&x).ln()];
            s.obs.push((idx, [prev[0] + ll[0], prev[1] + ll[1]]));
        }
        Ok(())
    }

    fn error_rate(&self, streams: &mut [TrialStream], n: u64) -> Result<f64> {
        let mut errors = 0usize;
        for s in streams.iter_mut() {
            self.extend(s, n)?;
            let used = s.obs.partition_point(|o| o.0 < n);
            let ll = if used == 0 { [0.0; 2] } else { s.obs[used - 1].1 };
            // Ties go to the smaller parameter (θ = 0).
            let estimate = usize::from(ll[1] > ll[0]);
            errors += usize::from(estimate != s.truth);
        }
        Ok(errors as f64 / streams.len() as f64)
    }
}

fn run_arm(cfg: &ComplexityConfig, d: usize, method: ComplexityMethod, seed: u64) -> Result<ComplexityRow> {
    let spec = ZmSpec::new(cfg.m, d, cfg.eta, 0);
    let family = [build_zm(&spec)?, build_zm(&spec.with_theta(spec.delta()))?];
    let arm = Arm { spec: &spec, family, method, masking: cfg.masking, order: cfg.order };
    let tag = format!("complexity/{}/d{d}/seed{seed}", method.name());
    let mut streams: Vec<TrialStream> = (0..cfg.trials as u64)
        .map(|trial| {
            let mut r = rng::derive(cfg.master_seed, &tag, trial);
            let truth = r.random_range(0..2usize);
            TrialStream { truth, rng: r, generated: 0, obs: Vec::new() }
        })
        .collect();
    let budget = match method {
        ComplexityMethod::RandomMasking => cfg.sample_budget,
        ComplexityMethod::PumaOracle => cfg.trajectory_budget,
    };
    let per_unit = match method {
        ComplexityMethod::RandomMasking => 1,
        ComplexityMethod::PumaOracle => spec.len() as u64,
    };
    let row = |units: u64, error_rate: f64, censored: bool| ComplexityRow {
        d,
        method,
        samples: units * per_unit,
        error_rate,
        seed,
        censored,
    };
    let mut hi = 1u64;
    let mut err_hi = arm.error_rate(&mut streams, hi)?;
    while err_hi > cfg.delta {
        if hi >= budget {
            return Ok(row(budget, err_hi, true));
        }
        hi = (hi * 2).min(budget);
        err_hi = arm.error_rate(&mut streams, hi)?;
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let e = arm.error_rate(&mut streams, mid)?;
        if e <= cfg.delta {
            hi = mid;
            err_hi = e;
        } else {
            lo = mid;
        }
    }
    Ok(row(hi, err_hi, false))
}

/// Minimal sample counts for both arms, every `d`, every seed. Rows come
/// back ordered by `(d, method, seed)` whatever the scheduling.
pub fn sample_complexity_experiment(cfg: &ComplexityConfig, jobs: Option<usize>) -> Result<Vec<ComplexityRow>> {
    cfg.validate()?;
    let mut tasks = Vec::new();
    for &d in &cfg.d_values {
        for method in [ComplexityMethod::RandomMasking, ComplexityMethod::PumaOracle] {
            for seed in 0..cfg.seeds as u64 {
                tasks.push((d, method, seed));
            }
        }
    }
    let work = || tasks.par_iter().map(|&(d, m, s)| run_arm(cfg, d, m, s)).collect::<Result<Vec<_>>>();
    match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .install(work),
        None => work(),
    }
}

/// MAP error frequency with exactly `trajectories` oracle chains per trial.
pub fn puma_error_at(spec: &ZmSpec, trajectories: u64, trials: usize, master_seed: u64) -> Result<f64> {
    let family = [build_zm(&spec.with_theta(0))?, build_zm(&spec.with_theta(spec.delta()))?];
    let arm = Arm {
        spec,
        family,
        method: ComplexityMethod::PumaOracle,
        masking: MaskingLaw::Fixed(0.5),
        order: OracleOrder::Permutation,
    };
    let mut streams: Vec<TrialStream> = (0..trials as u64)
        .map(|trial| {
            let mut r = rng::derive(master_seed, "map_error", trial);
            let truth = r.random_range(0..2usize);
            TrialStream { truth, rng: r, generated: 0, obs: Vec::new() }
        })
        .collect();
    arm.error_rate(&mut streams, trajectories)
}

/// Lower bound on random-masking samples:
/// `ln((1 − 1/|Θ|)/δ) / (q (1−q)^d)`.
pub fn random_masking_lower_bound(d: usize, q: f64, delta: f64, thetas: usize) -> f64 {
    ((1.0 - 1.0 / thetas as f64) / delta).ln() / (q * (1.0 - q).powi(d as i32))
}

/// Trajectories sufficient for the MAP: `(ln(|Θ|−1) + ln(1/δ)) / κ`.
pub fn puma_trajectory_bound(kappa: f64, delta: f64, thetas: usize) -> f64 {
    (((thetas - 1) as f64).ln() + (1.0 / delta).ln()) / kappa
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares `y ≈ a + b x`. `r2` is 1 for an exact fit.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch { expected: xs.len(), got: ys.len() });
    }
    if xs.len() < 2 {
        return Err(Error::InvalidArgument("a fit needs at least two points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("x values are all equal".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = if ss_res <= 1e-12 * ss_tot.max(1e-300) || ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(LinearFit { slope, intercept, r2 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexitySummary {
    /// `(d, mean samples over seeds)` per arm.
    pub puma_means: Vec<(usize, f64)>,
    pub random_means: Vec<(usize, f64)>,
    /// Fit of mean `n_traj` against `d`.
    pub puma_fit: LinearFit,
    /// Fit of `ln(mean n)` against `d`; the slope is in nats per latent.
    pub random_log_fit: LinearFit,
    pub censored_rows: usize,
}

fn means_by_d(rows: &[ComplexityRow], method: ComplexityMethod) -> Vec<(usize, f64)> {
    let mut ds: Vec<usize> = rows.iter().filter(|r| r.method == method).map(|r| r.d).collect();
    ds.dedup();
    ds.into_iter()
        .map(|d| {
            let v: Vec<f64> = rows.iter().filter(|r| r.method == method && r.d == d).map(|r| r.samples as f64).collect();
            (d, v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect()
}

pub fn summarize_complexity(rows: &[ComplexityRow]) -> Result<ComplexitySummary> {
    let puma_means = means_by_d(rows, ComplexityMethod::PumaOracle);
    let random_means = means_by_d(rows, ComplexityMethod::RandomMasking);
    let (px, py): (Vec<f64>, Vec<f64>) = puma_means.iter().map(|&(d, n)| (d as f64, n)).unzip();
    let (rx, ry): (Vec<f64>, Vec<f64>) = random_means.iter().map(|&(d, n)| (d as f64, n.ln())).unzip();
    Ok(ComplexitySummary {
        puma_fit: linear_fit(&px, &py)?,
        random_log_fit: linear_fit(&rx, &ry)?,
        puma_means,
        random_means,
        censored_rows: rows.iter().filter(|r| r.censored).count(),
    })
}
