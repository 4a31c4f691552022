//! PUMA versus vanilla training runs on tabular targets, with evaluation
//! metrics, speedup comparison and block-restricted runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::chains::{run_teacher_forced_chain, trajectory_distance, unmask_step_map, Decoding, UnmaskStepMap};
use crate::dist::{build_zm, TabularDistribution, ZmSpec};
use crate::error::{Error, Result};
use crate::learner::{
    advance_stage, reveal_count_distribution, vanilla_train_step, KSchedule, PumaTrainer, TabularMDM,
};
use crate::oracle::{posterior_table, ScoreSource};
use crate::policy::{PolicySpec, SelectCount};
use crate::rng;
use crate::sequence::{MaskedSequence, Sequence, Token, Vocab};

/// Where the data law comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DistSpec {
    Zm(ZmSpec),
    Table { len: usize, vocab: u32, support: Vec<(Vec<Token>, f64)> },
}

impl DistSpec {
    pub fn build(&self) -> Result<TabularDistribution> {
        match self {
            Self::Zm(spec) => build_zm(spec),
            Self::Table { len, vocab, support } => {
                TabularDistribution::build(*len, Vocab::new(*vocab)?, support.clone())
            }
        }
    }

    pub fn zm(&self) -> Option<&ZmSpec> {
        match self {
            Self::Zm(spec) => Some(spec),
            Self::Table { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Vanilla,
    Puma,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Vanilla => "vanilla",
            Self::Puma => "puma",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Self::Vanilla),
            "puma" => Ok(Self::Puma),
            _ => Err(Error::InvalidArgument(format!("unknown method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dist: DistSpec,
    pub method: Method,
    /// Chain policy for PUMA training; threshold and block size live here.
    pub policy: PolicySpec,
    pub schedule: KSchedule,
    pub batch: usize,
    pub learning_rate: f64,
    pub total_steps: u64,
    pub eval_every: u64,
    pub eval_policy: PolicySpec,
    pub eval_k: usize,
    pub decoding: Decoding,
    pub prompt_len: usize,
    pub probes: usize,
    pub seed: u64,
}

impl RunConfig {
    /// Defaults for a `Z_m` target.
    pub fn zm(spec: ZmSpec, method: Method) -> Self {
        let len = spec.len();
        Self {
            dist: DistSpec::Zm(spec),
            method,
            policy: PolicySpec::default().with_count(SelectCount::Staged),
            schedule: KSchedule::fixed(len),
            batch: 32,
            learning_rate: 0.1,
            total_steps: 200,
            eval_every: 5,
            eval_policy: PolicySpec::default(),
            eval_k: len,
            decoding: Decoding::Greedy,
            prompt_len: 0,
            probes: 100,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Every range violation, not just the first.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let len = match self.dist.build() {
            Ok(d) => d.len(),
            Err(e) => {
                errs.push(e.to_string());
                0
            }
        };
        if self.batch == 0 {
            errs.push("batch must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            errs.push(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.eval_every == 0 || !self.total_steps.is_multiple_of(self.eval_every) {
            errs.push(format!("eval_every {} must divide total_steps {}", self.eval_every, self.total_steps));
        }
        if self.eval_k == 0 {
            errs.push("eval_k must be at least 1".into());
        }
        if len > 0 && self.prompt_len >= len {
            errs.push(format!("prompt length {} leaves nothing to generate", self.prompt_len));
        }
        if let Err(e) = self.schedule.validate() {
            errs.push(e.to_string());
        }
        let l_eff = len.saturating_sub(self.prompt_len);
        if l_eff > 0 {
            for p in [&self.policy, &self.eval_policy] {
                if let Err(e) = p.validate(l_eff) {
                    errs.push(e.to_string());
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(errs.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub step: u64,
    /// Mean training loss since the previous evaluation; NaN at step 0.
    pub train_loss: f64,
    pub gen_accuracy: f64,
    pub posterior_l1: f64,
    pub traj_distance: f64,
}

pub const METRIC_HEADER: &str = "step,train_loss,gen_accuracy,posterior_l1,traj_distance";

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(METRIC_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.step, r.train_loss, r.gen_accuracy, r.posterior_l1, r.traj_distance
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub rows: Vec<MetricRow>,
    pub model: TabularMDM,
}

impl RunResult {
    /// First evaluated step whose accuracy reaches `threshold`.
    pub fn first_step_reaching(&self, threshold: f64) -> Option<u64> {
        self.rows.iter().find(|r| r.gen_accuracy >= threshold).map(|r| r.step)
    }
}

/// Contexts at which the model is compared with the oracle.
pub fn probe_contexts(dist: &TabularDistribution, zm: Option<&ZmSpec>, prompt_len: usize) -> Vec<MaskedSequence> {
    let mut set = BTreeSet::new();
    let len = dist.len();
    for (x, _) in dist.enumerate() {
        match zm {
            // Every latent visible, Y hidden.
            Some(spec) => {
                let mut z = MaskedSequence::from_clean(x, dist.vocab());
                z.set(spec.y_index(), dist.vocab().mask());
                set.insert(z);
            }
            None => {
                let free = len - prompt_len;
                for pattern in 1u64..(1u64 << free) {
                    let mut z = MaskedSequence::from_clean(x, dist.vocab());
                    for b in 0..free {
                        if pattern >> b & 1 == 1 {
                            z.set(prompt_len + b, dist.vocab().mask());
                        }
                    }
                    set.insert(z);
                }
            }
        }
    }
    set.into_iter().collect()
}

/// Mean L1 distance between model rows and exact posteriors over `probes`.
pub fn posterior_l1(model: &TabularMDM, dist: &TabularDistribution, probes: &[MaskedSequence]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for z in probes {
        let exact = posterior_table(dist, z)?;
        let learned = model.forward(z);
        for ((_, a), (_, b)) in exact.rows().iter().zip(learned.rows()) {
            total += a.l1_distance(b);
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

/// Probability that the decoded answer at `Y`, with every latent given,
/// matches a fresh draw of `Y`: `Σ_u p(u) Σ_y dec(y | u) p(y | u)`.
pub fn zm_accuracy(model: &TabularMDM, dist: &TabularDistribution, spec: &ZmSpec, decoding: Decoding) -> Result<f64> {
    let mut acc = 0.0;
    for z in probe_contexts(dist, Some(spec), 0) {
        let exact = posterior_table(dist, &z)?;
        let truth = exact.get(spec.y_index()).expect("Y is masked");
        let weight: f64 = dist.enumerate().iter().filter(|(x, _)| z.agrees_with(x)).map(|r| r.1).sum();
        let table = model.forward(&z);
        let row = table.get(spec.y_index()).expect("Y is masked");
        let hit = match decoding {
            Decoding::Greedy => truth.prob(row.argmax()),
            Decoding::Sample => row.probs().iter().zip(truth.probs()).map(|(a, b)| a * b).sum(),
        };
        acc += weight * hit;
    }
    Ok(acc)
}

/// Exact output law of the sampler driven by `source`, started from the
/// data's prompt marginal. Mirrors [`crate::chains::run_inference`].
pub fn sampler_output_distribution<S: ScoreSource + ?Sized>(
    source: &S,
    dist: &TabularDistribution,
    policy: &PolicySpec,
    k: usize,
    prompt_len: usize,
    decoding: Decoding,
) -> Result<BTreeMap<Sequence, f64>> {
    let l_eff = dist.len() - prompt_len;
    policy.validate(l_eff)?;
    let mut cur: BTreeMap<(MaskedSequence, usize), f64> = BTreeMap::new();
    for (x, p) in dist.enumerate() {
        *cur.entry((MaskedSequence::with_prompt(x, prompt_len, dist.vocab()), 0)).or_insert(0.0) += p;
    }
    let mut out = BTreeMap::new();
    let unmasked = |z: &MaskedSequence| (prompt_len..z.len()).filter(|&i| !z.is_masked(i)).count();
    for _ in 0..=(k + dist.len()) {
        if cur.is_empty() {
            break;
        }
        let mut next: BTreeMap<(MaskedSequence, usize), f64> = BTreeMap::new();
        for ((z, stage), p) in cur {
            if let Some(x) = z.to_clean() {
                *out.entry(x).or_insert(0.0) += p;
                continue;
            }
            let table = source.table(&z)?;
            let done = policy.candidates(&z, prompt_len).is_empty()
                || (policy.count == SelectCount::Staged && stage >= k);
            let selections: Vec<(Vec<usize>, f64)> = if done {
                vec![(z.masked_indices(), 1.0)]
            } else {
                let counts = match policy.count {
                    SelectCount::Fixed(c) => vec![(c, 1.0)],
                    SelectCount::Staged => reveal_count_distribution(unmasked(&z), stage, k, l_eff)?,
                };
                let mut sels = Vec::new();
                for (c, pc) in counts {
                    for (s, ps) in policy.selection_distribution(&table, &z, prompt_len, c)? {
                        sels.push((policy.augment(s, &table, &z, prompt_len), pc * ps));
                    }
                }
                sels
            };
            for (sel, ps) in selections {
                let mut fills: Vec<(MaskedSequence, f64)> = vec![(z.clone(), ps * p)];
                for &i in &sel {
                    let row = table
                        .get(i)
                        .ok_or_else(|| Error::Contract(format!("score table has no row for position {i}")))?;
                    let choices: Vec<(Token, f64)> = match decoding {
                        Decoding::Greedy => vec![(row.argmax(), 1.0)],
                        Decoding::Sample => row
                            .probs()
                            .iter()
                            .enumerate()
                            .filter(|(_, &q)| q > 0.0)
                            .map(|(v, &q)| (v as Token, q))
                            .collect(),
                    };
                    fills = fills
                        .into_iter()
                        .flat_map(|(zz, w)| {
                            choices.iter().map(move |&(v, q)| {
                                let mut zn = zz.clone();
                                zn.set(i, v);
                                (zn, w * q)
                            })
                        })
                        .collect();
                }
                for (zn, w) in fills {
                    let st = advance_stage(stage, unmasked(&zn), l_eff, k);
                    *next.entry((zn, st)).or_insert(0.0) += w;
                }
            }
        }
        if next.len() > crate::analysis::STATE_LIMIT {
            return Err(Error::StateSpaceTooLarge { states: next.len(), limit: crate::analysis::STATE_LIMIT });
        }
        cur = next;
    }
    if !cur.is_empty() {
        return Err(Error::Contract("sampler did not terminate".into()));
    }
    Ok(out)
}

/// `1 − TV(sampler output law, p_data)`.
pub fn generic_accuracy(model: &TabularMDM, dist: &TabularDistribution, cfg: &RunConfig) -> Result<f64> {
    let law = sampler_output_distribution(model, dist, &cfg.eval_policy, cfg.eval_k, cfg.prompt_len, cfg.decoding)?;
    let mut tv = 0.0;
    for (x, px) in dist.enumerate() {
        tv += (law.get(x).copied().unwrap_or(0.0) - px).abs();
    }
    for (x, q) in &law {
        if dist.probability(x) == 0.0 {
            tv += q;
        }
    }
    Ok(1.0 - 0.5 * tv)
}

fn gen_accuracy(model: &TabularMDM, dist: &TabularDistribution, cfg: &RunConfig) -> Result<f64> {
    match cfg.dist.zm() {
        Some(spec) => zm_accuracy(model, dist, spec, cfg.decoding),
        None => generic_accuracy(model, dist, cfg),
    }
}

/// Policy used for the trajectory-distance probes: the evaluation policy
/// with staged counts so every probe chain ends clean.
fn probe_policy(cfg: &RunConfig) -> PolicySpec {
    cfg.eval_policy.clone().with_count(SelectCount::Staged)
}

fn probe_maps(model: &TabularMDM, dist: &TabularDistribution, cfg: &RunConfig, x0s: &[Sequence]) -> Result<Vec<UnmaskStepMap>> {
    let policy = probe_policy(cfg);
    x0s.iter()
        .enumerate()
        .map(|(n, x0)| {
            let mut r = rng::derive(cfg.seed, "probe_chain", n as u64);
            let t = run_teacher_forced_chain(x0, dist.vocab(), model, &policy, cfg.eval_k, cfg.prompt_len, &mut r)?;
            unmask_step_map(&t)
        })
        .collect()
}

/// Train for `total_steps`, evaluating at step 0 and every `eval_every`
/// steps. Evaluation only reads the model and uses its own RNG streams.
pub fn run_training(cfg: &RunConfig) -> Result<RunResult> {
    cfg.validate()?;
    let dist = cfg.dist.build()?;
    let mut model = TabularMDM::new(dist.len(), dist.vocab(), cfg.learning_rate)?;
    let mut train_rng = rng::derive(cfg.seed, "train", 0);
    let mut trainer = match cfg.method {
        Method::Puma => Some(PumaTrainer::new(
            &dist,
            cfg.policy.clone(),
            cfg.schedule,
            cfg.batch,
            cfg.prompt_len,
            &mut train_rng,
        )?),
        Method::Vanilla => None,
    };
    let probes = probe_contexts(&dist, cfg.dist.zm(), cfg.prompt_len);
    let mut probe_rng = rng::derive(cfg.seed, "probe_x0", 0);
    let x0s: Vec<Sequence> = (0..cfg.probes).map(|_| dist.sample(&mut probe_rng)).collect();

    let mut rows = Vec::new();
    let mut maps = Vec::new();
    let mut evaluate = |model: &TabularMDM, step: u64, train_loss: f64| -> Result<()> {
        rows.push(MetricRow {
            step,
            train_loss,
            gen_accuracy: gen_accuracy(model, &dist, cfg)?,
            posterior_l1: posterior_l1(model, &dist, &probes)?,
            traj_distance: f64::NAN,
        });
        maps.push(probe_maps(model, &dist, cfg, &x0s)?);
        Ok(())
    };
    evaluate(&model, 0, f64::NAN)?;
    let mut loss_sum = 0.0;
    for step in 1..=cfg.total_steps {
        loss_sum += match trainer.as_mut() {
            Some(t) => t.step(&mut model, &dist, &mut train_rng)?.loss,
            None => vanilla_train_step(&mut model, &dist, cfg.batch, cfg.prompt_len, &mut train_rng)?,
        };
        if step % cfg.eval_every == 0 {
            evaluate(&model, step, loss_sum / cfg.eval_every as f64)?;
            loss_sum = 0.0;
        }
    }
    let reference = maps.last().expect("at least one evaluation").clone();
    for (row, m) in rows.iter_mut().zip(&maps) {
        let total: f64 = m
            .iter()
            .zip(&reference)
            .map(|(a, b)| trajectory_distance(a, b))
            .collect::<Result<Vec<f64>>>()?
            .iter()
            .sum();
        row.traj_distance = if m.is_empty() { 0.0 } else { total / m.len() as f64 };
    }
    model.reset_forward_count();
    Ok(RunResult { rows, model })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub seeds: Vec<u64>,
    /// First step reaching the threshold per seed (None: never).
    pub steps_a: Vec<Option<u64>>,
    pub steps_b: Vec<Option<u64>>,
    pub median_a: f64,
    pub median_b: f64,
    /// `median_a / median_b`.
    pub ratio: f64,
}

impl CompareReport {
    /// Seeds where B reached the threshold strictly earlier than A.
    pub fn b_wins(&self) -> usize {
        self.steps_a
            .iter()
            .zip(&self.steps_b)
            .filter(|(a, b)| match (a, b) {
                (Some(a), Some(b)) => b < a,
                (None, Some(_)) => true,
                _ => false,
            })
            .count()
    }
}

fn median(v: &[Option<u64>]) -> f64 {
    let mut x: Vec<f64> = v.iter().map(|s| s.map_or(f64::INFINITY, |s| s as f64)).collect();
    x.sort_by(f64::total_cmp);
    let n = x.len();
    if n % 2 == 1 {
        x[n / 2]
    } else {
        0.5 * (x[n / 2 - 1] + x[n / 2])
    }
}

/// Ratio of median iterations-to-threshold, A over B, across seeds.
pub fn compare_runs(a: &RunConfig, b: &RunConfig, threshold: f64, seeds: &[u64]) -> Result<CompareReport> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("compare needs at least one seed".into()));
    }
    let runs: Vec<(Option<u64>, Option<u64>)> = seeds
        .par_iter()
        .map(|&s| {
            let ra = run_training(&a.clone().with_seed(s))?;
            let rb = run_training(&b.clone().with_seed(s))?;
            Ok((ra.first_step_reaching(threshold), rb.first_step_reaching(threshold)))
        })
        .collect::<Result<_>>()?;
    let (steps_a, steps_b): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    let (median_a, median_b) = (median(&steps_a), median(&steps_b));
    if median_a.is_infinite() && median_b.is_infinite() {
        return Err(Error::InvalidArgument(format!("threshold {threshold} unreachable by either run")));
    }
    let ratio = if median_a == median_b { 1.0 } else { median_a / median_b };
    Ok(CompareReport { seeds: seeds.to_vec(), steps_a, steps_b, median_a, median_b, ratio })
}

/// `cfg` with both the chain and evaluation policies restricted to blocks.
pub fn block_restricted(cfg: &RunConfig, block_size: usize) -> Result<RunConfig> {
    let len = cfg.dist.build()?.len();
    let l_eff = len - cfg.prompt_len.min(len);
    if block_size == 0 || l_eff % block_size != 0 {
        return Err(Error::InvalidArgument(format!(
            "block size {block_size} does not divide the effective length {l_eff}"
        )));
    }
    let mut out = cfg.clone();
    out.policy = out.policy.with_block_size(Some(block_size));
    out.eval_policy = out.eval_policy.with_block_size(Some(block_size));
    Ok(out)
}

pub fn block_restricted_run(cfg: &RunConfig, block_size: usize) -> Result<RunResult> {
    run_training(&block_restricted(cfg, block_size)?)
}

/// Accuracy of one trained model under several evaluation policies.
pub fn policy_robustness(
    model: &TabularMDM,
    cfg: &RunConfig,
    policies: &[PolicySpec],
) -> Result<Vec<(PolicySpec, f64)>> {
    let dist = cfg.dist.build()?;
    policies
        .iter()
        .map(|p| {
            let c = RunConfig { eval_policy: p.clone(), ..cfg.clone() };
            Ok((p.clone(), gen_accuracy(model, &dist, &c)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chains::run_learned_inference;
    use crate::dist::{three_point_asymmetric, two_point};
    use crate::oracle::Oracle;
    use crate::policy::PolicyKind;

    fn table_spec(d: &TabularDistribution) -> DistSpec {
        DistSpec::Table {
            len: d.len(),
            vocab: d.vocab().size(),
            support: d.enumerate().iter().map(|(x, p)| (x.tokens().to_vec(), *p)).collect(),
        }
    }

    fn generic(method: Method, d: &TabularDistribution) -> RunConfig {
        RunConfig {
            dist: table_spec(d),
            schedule: KSchedule::fixed(d.len()),
            eval_k: d.len(),
            decoding: Decoding::Sample,
            total_steps: 40,
            eval_every: 10,
            batch: 8,
            probes: 10,
            ..RunConfig::zm(ZmSpec::new(4, 1, 0.1, 0), method)
        }
    }

    #[test]
    fn oracle_sampler_law_is_the_data_law() {
        let d = three_point_asymmetric();
        let oracle = Oracle::new(&d);
        for p in [
            PolicySpec::new(PolicyKind::MaxProb),
            PolicySpec::new(PolicyKind::Random),
        ] {
            // One reveal per step: factorized sampling is then exact.
            let law = sampler_output_distribution(&oracle, &d, &p, 3, 0, Decoding::Sample).unwrap();
            for (x, px) in d.enumerate() {
                assert!((law[x] - px).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sampler_law_matches_simulation() {
        let d = three_point_asymmetric();
        let mut model = TabularMDM::new(3, d.vocab(), 0.1).unwrap();
        let mut r = rng::derive(1, "law", 0);
        for _ in 0..30 {
            vanilla_train_step(&mut model, &d, 4, 0, &mut r).unwrap();
        }
        let p = PolicySpec::new(PolicyKind::NegEntropy).with_count(SelectCount::Staged);
        let law = sampler_output_distribution(&model, &d, &p, 2, 0, Decoding::Sample).unwrap();
        assert!((law.values().sum::<f64>() - 1.0).abs() < 1e-12);
        let n = 20_000;
        let mut counts: BTreeMap<Sequence, usize> = BTreeMap::new();
        for _ in 0..n {
            let x = run_learned_inference(&model, 3, d.vocab(), &p, 2, &[], Decoding::Sample, &mut r).unwrap();
            *counts.entry(x).or_default() += 1;
        }
        for (x, q) in &law {
            let f = counts.get(x).copied().unwrap_or(0) as f64 / n as f64;
            assert!((f - q).abs() < 4.0 * (q * (1.0 - q) / n as f64).sqrt() + 1e-4, "{x}");
        }
    }

    #[test]
    fn point_mass_reaches_full_accuracy() {
        let v = Vocab::new(2).unwrap();
        let d = crate::dist::point_mass(vec![1, 0, 1], v).unwrap();
        for method in [Method::Vanilla, Method::Puma] {
            let cfg = RunConfig { decoding: Decoding::Greedy, total_steps: 100, ..generic(method, &d) };
            let res = run_training(&cfg).unwrap();
            assert!((res.rows.last().unwrap().gen_accuracy - 1.0).abs() < 1e-12, "{method}");
        }
    }

    #[test]
    fn runs_are_deterministic_and_csv_shaped() {
        let d = two_point();
        let cfg = generic(Method::Puma, &d);
        let a = metrics_csv(&run_training(&cfg).unwrap().rows);
        let b = metrics_csv(&run_training(&cfg).unwrap().rows);
        assert_eq!(a, b);
        let lines: Vec<&str> = a.lines().collect();
        assert_eq!(lines[0], METRIC_HEADER);
        assert_eq!(lines.len(), 1 + 5);
        assert!(lines[1].starts_with("0,NaN,"));
        assert!(lines[5].ends_with(",0"));
    }

    #[test]
    fn zm_accuracy_of_untrained_and_oracle_like_models() {
        let spec = ZmSpec::new(4, 2, 0.1, 0);
        let d = build_zm(&spec).unwrap();
        let model = TabularMDM::new(3, d.vocab(), 0.1).unwrap();
        // Uniform rows: greedy picks token 0, matching the answer half the time.
        let greedy = zm_accuracy(&model, &d, &spec, Decoding::Greedy).unwrap();
        assert!((greedy - (0.5 * 0.9 + 0.5 * 0.1 / 3.0)).abs() < 1e-12);
        assert!((zm_accuracy(&model, &d, &spec, Decoding::Sample).unwrap() - 0.25).abs() < 1e-12);
        let mut trained = model.clone();
        for z in probe_contexts(&d, Some(&spec), 0) {
            let row = posterior_table(&d, &z).unwrap();
            let logits: Vec<f64> = row.get(2).unwrap().probs().iter().map(|p| p.ln()).collect();
            trained.set_logits(&z, 2, &logits).unwrap();
        }
        assert!((zm_accuracy(&trained, &d, &spec, Decoding::Greedy).unwrap() - 0.9).abs() < 1e-12);
        assert!(posterior_l1(&trained, &d, &probe_contexts(&d, Some(&spec), 0)).unwrap() < 1e-12);
    }

    #[test]
    fn compare_identical_configs_is_one() {
        let d = two_point();
        let cfg = generic(Method::Puma, &d);
        let rep = compare_runs(&cfg, &cfg, 0.5, &[0, 1, 2]).unwrap();
        assert_eq!(rep.ratio, 1.0);
        let rep = compare_runs(&cfg, &generic(Method::Vanilla, &d), 0.0, &[0, 1]).unwrap();
        assert_eq!(rep.ratio, 1.0);
        assert!(compare_runs(&cfg, &cfg, 1.5, &[0]).is_err());
    }

    #[test]
    fn full_block_is_the_unrestricted_run() {
        let spec = ZmSpec::new(4, 3, 0.1, 0);
        let cfg = RunConfig { total_steps: 30, eval_every: 10, ..RunConfig::zm(spec, Method::Puma) };
        let a = metrics_csv(&run_training(&cfg).unwrap().rows);
        let b = metrics_csv(&block_restricted_run(&cfg, 4).unwrap().rows);
        assert_eq!(a, b);
        assert!(block_restricted(&cfg, 3).is_err());
    }

    #[test]
    fn config_validation_lists_every_problem() {
        let spec = ZmSpec::new(4, 2, 0.1, 0);
        let cfg = RunConfig { batch: 0, eval_every: 7, learning_rate: -1.0, ..RunConfig::zm(spec, Method::Puma) };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("batch") && msg.contains("eval_every") && msg.contains("learning rate"), "{msg}");
    }
}
