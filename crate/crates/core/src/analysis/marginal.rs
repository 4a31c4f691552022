use std::collections::BTreeMap;

use crate::chains::{run_idealized_inference, run_teacher_forced_chain};
use crate::dist::TabularDistribution;
use crate::error::{Error, Result};
use crate::oracle::{Oracle, ScoreSource};
use crate::policy::{PolicySpec, SelectCount};
use crate::rng;
use crate::sequence::MaskedSequence;

/// Largest number of reachable states the exact DP will carry.
pub const STATE_LIMIT: usize = 1_000_000;

/// A law over masked states.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StateDistribution(pub BTreeMap<MaskedSequence, f64>);

impl StateDistribution {
    pub fn point(z: MaskedSequence) -> Self {
        Self(BTreeMap::from([(z, 1.0)]))
    }

    pub fn add(&mut self, z: MaskedSequence, p: f64) {
        *self.0.entry(z).or_insert(0.0) += p;
    }

    pub fn prob(&self, z: &MaskedSequence) -> f64 {
        self.0.get(z).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.values().sum()
    }

    /// Empirical law of `states`.
    pub fn empirical<'a>(states: impl IntoIterator<Item = &'a MaskedSequence>) -> Self {
        let mut counts: BTreeMap<MaskedSequence, usize> = BTreeMap::new();
        let mut n = 0usize;
        for z in states {
            *counts.entry(z.clone()).or_insert(0) += 1;
            n += 1;
        }
        Self(counts.into_iter().map(|(z, c)| (z, c as f64 / n as f64)).collect())
    }
}

/// `½ Σ |p(z) − q(z)|` over the union of supports.
pub fn tv_distance(p: &StateDistribution, q: &StateDistribution) -> f64 {
    let mut total = 0.0;
    for (z, &a) in &p.0 {
        total += (a - q.prob(z)).abs();
    }
    for (z, &b) in &q.0 {
        if !p.0.contains_key(z) {
            total += b;
        }
    }
    0.5 * total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainKind {
    Idealized,
    TeacherForced,
}

fn fixed_count(policy: &PolicySpec) -> Result<usize> {
    match policy.count {
        SelectCount::Fixed(c) if c > 0 => Ok(c),
        SelectCount::Fixed(_) => Err(Error::InvalidArgument("selection count must be at least 1".into())),
        SelectCount::Staged => Err(Error::InvalidArgument(
            "exact state DP needs a fixed selection count; use Monte Carlo for staged chains".into(),
        )),
    }
}

fn check_size(states: usize) -> Result<()> {
    if states > STATE_LIMIT {
        return Err(Error::StateSpaceTooLarge { states, limit: STATE_LIMIT });
    }
    Ok(())
}

/// Exact laws of `z_{t_0}, .., z_{t_K}` for the chosen chain, both driven
/// by exact-oracle scores.
pub fn exact_marginals(
    kind: ChainKind,
    dist: &TabularDistribution,
    policy: &PolicySpec,
    k: usize,
) -> Result<Vec<StateDistribution>> {
    match kind {
        ChainKind::Idealized => idealized_marginals(dist, policy, k),
        ChainKind::TeacherForced => {
            let joint = teacher_forced_joint(dist, policy, k, |_, _, _| false)?;
            Ok(joint
                .into_iter()
                .map(|layer| {
                    let mut out = StateDistribution::default();
                    for ((_, z), p) in layer {
                        out.add(z, p);
                    }
                    out
                })
                .collect())
        }
    }
}

/// Law of `z_{t_j}` alone.
pub fn exact_marginal(
    kind: ChainKind,
    dist: &TabularDistribution,
    policy: &PolicySpec,
    k: usize,
    j: usize,
) -> Result<StateDistribution> {
    if j > k {
        return Err(Error::IndexOutOfRange { index: j, len: k + 1 });
    }
    let mut all = exact_marginals(kind, dist, policy, k)?;
    Ok(all.swap_remove(j))
}

fn idealized_marginals(dist: &TabularDistribution, policy: &PolicySpec, k: usize) -> Result<Vec<StateDistribution>> {
    let count = fixed_count(policy)?;
    policy.validate(dist.len())?;
    let oracle = Oracle::new(dist);
    let mut layers = vec![StateDistribution::point(MaskedSequence::fully_masked(dist.len(), dist.vocab()))];
    for _ in 0..k {
        let cur = layers.last().expect("nonempty");
        let mut next = StateDistribution::default();
        for (z, &p) in &cur.0 {
            if policy.candidates(z, 0).is_empty() {
                next.add(z.clone(), p);
                continue;
            }
            let table = oracle.table(z)?;
            for (sel, ps) in policy.selection_distribution(&table, z, 0, count)? {
                let sel = policy.augment(sel, &table, z, 0);
                // Joint posterior over the selected positions.
                let mut groups: BTreeMap<MaskedSequence, f64> = BTreeMap::new();
                let mut total = 0.0;
                for (x, px) in dist.enumerate() {
                    if z.agrees_with(x) {
                        let mut zn = z.clone();
                        for &i in &sel {
                            zn.set(i, x.get(i));
                        }
                        *groups.entry(zn).or_insert(0.0) += px;
                        total += px;
                    }
                }
                if total.is_nan() || total <= 0.0 {
                    return Err(Error::ImpossibleContext(z.to_string()));
                }
                for (zn, w) in groups {
                    next.add(zn, p * ps * w / total);
                }
            }
        }
        check_size(next.len())?;
        layers.push(next);
    }
    Ok(layers)
}

/// Joint laws of `(support index of x0, z_{t_j})` for the teacher-forced
/// chain. `linger(step, x0_index, z)` returning true replaces the step's
/// selection with the empty set; it exists so tests can build processes
/// whose selection peeks at hidden tokens.
pub(crate) fn teacher_forced_joint(
    dist: &TabularDistribution,
    policy: &PolicySpec,
    k: usize,
    linger: impl Fn(usize, usize, &MaskedSequence) -> bool,
) -> Result<Vec<BTreeMap<(usize, MaskedSequence), f64>>> {
    let count = fixed_count(policy)?;
    policy.validate(dist.len())?;
    let oracle = Oracle::new(dist);
    let start = MaskedSequence::fully_masked(dist.len(), dist.vocab());
    let support = dist.enumerate();
    let mut layers = vec![support
        .iter()
        .enumerate()
        .map(|(xi, (_, p))| ((xi, start.clone()), *p))
        .collect::<BTreeMap<_, _>>()];
    for step in 0..k {
        let cur = layers.last().expect("nonempty");
        let mut next: BTreeMap<(usize, MaskedSequence), f64> = BTreeMap::new();
        for ((xi, z), &p) in cur {
            if policy.candidates(z, 0).is_empty() || linger(step, *xi, z) {
                *next.entry((*xi, z.clone())).or_insert(0.0) += p;
                continue;
            }
            let x0 = &support[*xi].0;
            let table = oracle.table(z)?;
            for (sel, ps) in policy.selection_distribution(&table, z, 0, count)? {
                let sel = policy.augment(sel, &table, z, 0);
                let mut zn = z.clone();
                for &i in &sel {
                    zn.set(i, x0.get(i));
                }
                *next.entry((*xi, zn)).or_insert(0.0) += p * ps;
            }
        }
        check_size(next.len())?;
        layers.push(next);
    }
    Ok(layers)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VerifyMode {
    Exact,
    MonteCarlo { runs: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalReport {
    /// TV between the two chains at each grid step `j = 0..=K`.
    pub tv: Vec<f64>,
    /// Allowed TV per step: the exact tolerance, or the Monte Carlo bound
    /// `4 √(|states| / N)`.
    pub tolerance: Vec<f64>,
    pub max_tv: f64,
}

/// Tolerance of the exact comparison.
pub const EXACT_TV_TOL: f64 = 1e-10;

impl MarginalReport {
    pub fn passed(&self) -> bool {
        self.tv.iter().zip(&self.tolerance).all(|(t, tol)| t < tol)
    }
}

/// Compare teacher-forced and idealized marginals at every grid step.
pub fn verify_marginal_agreement(
    dist: &TabularDistribution,
    policy: &PolicySpec,
    k: usize,
    mode: VerifyMode,
) -> Result<MarginalReport> {
    let (tv, tolerance): (Vec<f64>, Vec<f64>) = match mode {
        VerifyMode::Exact => {
            let a = exact_marginals(ChainKind::TeacherForced, dist, policy, k)?;
            let b = exact_marginals(ChainKind::Idealized, dist, policy, k)?;
            a.iter().zip(&b).map(|(p, q)| (tv_distance(p, q), EXACT_TV_TOL)).unzip()
        }
        VerifyMode::MonteCarlo { runs, seed } => {
            if runs == 0 {
                return Err(Error::InvalidArgument("Monte Carlo mode needs at least one run".into()));
            }
            let oracle = Oracle::new(dist);
            let mut tf = Vec::with_capacity(runs);
            let mut ideal = Vec::with_capacity(runs);
            for n in 0..runs as u64 {
                let mut r = rng::derive(seed, "marginal/teacher_forced", n);
                let x0 = dist.sample(&mut r);
                tf.push(run_teacher_forced_chain(&x0, dist.vocab(), &oracle, policy, k, 0, &mut r)?.states);
                let mut r = rng::derive(seed, "marginal/idealized", n);
                ideal.push(run_idealized_inference(dist, policy, k, &mut r)?.states);
            }
            (0..=k)
                .map(|j| {
                    let p = StateDistribution::empirical(tf.iter().map(|s| &s[j]));
                    let q = StateDistribution::empirical(ideal.iter().map(|s| &s[j]));
                    let states = p.0.keys().chain(q.0.keys()).collect::<std::collections::BTreeSet<_>>().len();
                    (tv_distance(&p, &q), 4.0 * (states as f64 / runs as f64).sqrt())
                })
                .unzip()
        }
    };
    let max_tv = tv.iter().copied().fold(0.0, f64::max);
    Ok(MarginalReport { tv, tolerance, max_tv })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{three_point_asymmetric, two_point};
    use crate::policy::PolicyKind;
    use crate::sequence::Vocab;

    fn ms(ids: &[u32], v: Vocab) -> MaskedSequence {
        MaskedSequence::from_ids(ids.to_vec(), v).unwrap()
    }

    #[test]
    fn tv_examples() {
        let v = Vocab::new(2).unwrap();
        let (a, b) = (ms(&[0, 2], v), ms(&[1, 2], v));
        let p = StateDistribution(BTreeMap::from([(a.clone(), 0.6), (b.clone(), 0.4)]));
        let q = StateDistribution(BTreeMap::from([(a.clone(), 0.5), (b.clone(), 0.5)]));
        assert!((tv_distance(&p, &q) - 0.1).abs() < 1e-15);
        assert_eq!(tv_distance(&p, &p), 0.0);
        let r = StateDistribution::point(ms(&[2, 2], v));
        assert_eq!(tv_distance(&p, &r), 1.0);
    }

    #[test]
    fn two_point_marginals_by_hand() {
        let dist = two_point();
        let v = dist.vocab();
        let p = PolicySpec::new(PolicyKind::MaxProb);
        for kind in [ChainKind::Idealized, ChainKind::TeacherForced] {
            let m = exact_marginals(kind, &dist, &p, 2).unwrap();
            assert_eq!(m[0], StateDistribution::point(ms(&[2, 2], v)));
            assert_eq!(m[1].len(), 2);
            assert!((m[1].prob(&ms(&[0, 2], v)) - 0.5).abs() < 1e-15);
            assert!((m[1].prob(&ms(&[1, 2], v)) - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn final_layer_is_the_data_law() {
        let dist = three_point_asymmetric();
        let p = PolicySpec::new(PolicyKind::Margin);
        for kind in [ChainKind::Idealized, ChainKind::TeacherForced] {
            let last = exact_marginal(kind, &dist, &p, 3, 3).unwrap();
            for (x, px) in dist.enumerate() {
                let z = MaskedSequence::from_clean(x, dist.vocab());
                assert!((last.prob(&z) - px).abs() < 1e-12);
            }
            assert!((last.total() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn staged_count_is_rejected_by_exact_dp() {
        let p = PolicySpec::new(PolicyKind::MaxProb).with_count(SelectCount::Staged);
        assert!(exact_marginals(ChainKind::Idealized, &two_point(), &p, 2).is_err());
    }

    #[test]
    fn random_policy_and_threshold_agree_exactly() {
        let dist = three_point_asymmetric();
        for p in [
            PolicySpec::new(PolicyKind::Random),
            PolicySpec::new(PolicyKind::MaxProb).with_threshold(Some(0.6)),
            PolicySpec::new(PolicyKind::NegEntropy).with_count(SelectCount::Fixed(2)),
        ] {
            let rep = verify_marginal_agreement(&dist, &p, 3, VerifyMode::Exact).unwrap();
            assert!(rep.passed(), "{p:?}: {:?}", rep.tv);
        }
    }

    #[test]
    fn monte_carlo_mode_within_bound() {
        let dist = three_point_asymmetric();
        let p = PolicySpec::new(PolicyKind::MaxProb).with_count(SelectCount::Staged);
        let rep = verify_marginal_agreement(&dist, &p, 2, VerifyMode::MonteCarlo { runs: 4000, seed: 9 }).unwrap();
        assert!(rep.passed(), "{rep:?}");
    }
}
