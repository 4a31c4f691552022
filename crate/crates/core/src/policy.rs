//! Unmasking policies: score rules, top-K selection with lowest-index tie
//! breaking, confidence thresholding, and block restriction.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::oracle::{confidence, Categorical, PosteriorTable};
use crate::sequence::MaskedSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    MaxProb,
    Margin,
    NegEntropy,
    Random,
    /// Lowest masked index first (semi-autoregressive).
    Positional,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::MaxProb,
        PolicyKind::Margin,
        PolicyKind::NegEntropy,
        PolicyKind::Random,
        PolicyKind::Positional,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::MaxProb => "max_prob",
            PolicyKind::Margin => "margin",
            PolicyKind::NegEntropy => "neg_entropy",
            PolicyKind::Random => "random",
            PolicyKind::Positional => "positional",
        }
    }

    pub fn is_deterministic(&self) -> bool {
        !matches!(self, PolicyKind::Random)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown policy kind `{s}`")))
    }
}

/// How many positions a step reveals before thresholding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectCount {
    Fixed(usize),
    /// Supplied per step by the stage rule.
    Staged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub count: SelectCount,
    pub threshold: Option<f64>,
    pub block_size: Option<usize>,
}

impl Default for PolicySpec {
    fn default() -> Self {
        Self { kind: PolicyKind::MaxProb, count: SelectCount::Fixed(1), threshold: None, block_size: None }
    }
}

/// Score of a categorical under a confidence rule. `Random` and `Positional`
/// do not read the categorical and score 0; `select` orders them itself.
pub fn score(kind: PolicyKind, c: &Categorical) -> f64 {
    match kind {
        PolicyKind::MaxProb => confidence(c),
        PolicyKind::Margin => {
            let p = c.probs();
            if p.len() < 2 {
                return 1.0;
            }
            let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &x in p {
                if x > first {
                    second = first;
                    first = x;
                } else if x > second {
                    second = x;
                }
            }
            first - second
        }
        PolicyKind::NegEntropy => c
            .probs()
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum(),
        PolicyKind::Random | PolicyKind::Positional => 0.0,
    }
}

/// Candidates restricted to the lowest block (aligned at `prompt_len`) that
/// still holds a mask.
pub fn block_restrict(block_size: usize, z: &MaskedSequence, prompt_len: usize) -> Vec<usize> {
    let masked = z.masked_indices();
    let Some(&first) = masked.iter().find(|&&i| i >= prompt_len) else {
        return Vec::new();
    };
    let block = (first - prompt_len) / block_size;
    let lo = prompt_len + block * block_size;
    let hi = lo + block_size;
    masked.into_iter().filter(|&i| i >= lo && i < hi).collect()
}

/// Indices of `pool` with the `k` highest scores, ties to the lowest index.
fn top_k(pool: &[usize], scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(pool[a].cmp(&pool[b])));
    let mut out: Vec<usize> = order.into_iter().take(k).map(|o| pool[o]).collect();
    out.sort_unstable();
    out
}

fn combinations(pool: &[usize], k: usize) -> Vec<Vec<usize>> {
    fn go(pool: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..pool.len() {
            if pool.len() - i < k - cur.len() {
                break;
            }
            cur.push(pool[i]);
            go(pool, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(pool, k, 0, &mut Vec::with_capacity(k), &mut out);
    out
}

impl PolicySpec {
    pub fn new(kind: PolicyKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn with_count(mut self, count: SelectCount) -> Self {
        self.count = count;
        self
    }

    pub fn with_threshold(mut self, tau: Option<f64>) -> Self {
        self.threshold = tau;
        self
    }

    pub fn with_block_size(mut self, block: Option<usize>) -> Self {
        self.block_size = block;
        self
    }

    /// Check parameter ranges against the effective (non-prompt) length.
    pub fn validate(&self, effective_len: usize) -> Result<()> {
        if let SelectCount::Fixed(0) = self.count {
            return Err(Error::InvalidArgument("selection count must be at least 1".into()));
        }
        if let Some(tau) = self.threshold {
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(Error::InvalidArgument(format!("threshold {tau} is outside (0, 1]")));
            }
        }
        if let Some(b) = self.block_size {
            if b == 0 || !effective_len.is_multiple_of(b) {
                return Err(Error::InvalidArgument(format!(
                    "block size {b} does not divide the effective length {effective_len}"
                )));
            }
        }
        Ok(())
    }

    /// Positions eligible for selection in state `z`.
    pub fn candidates(&self, z: &MaskedSequence, prompt_len: usize) -> Vec<usize> {
        match self.block_size {
            Some(b) => block_restrict(b, z, prompt_len),
            None => z.masked_indices().into_iter().filter(|&i| i >= prompt_len).collect(),
        }
    }

    fn scores(&self, table: &PosteriorTable, pool: &[usize]) -> Result<Vec<f64>> {
        pool.iter()
            .map(|&i| match self.kind {
                PolicyKind::Positional => Ok(-(i as f64)),
                kind => table
                    .get(i)
                    .map(|c| score(kind, c))
                    .ok_or_else(|| Error::Contract(format!("score table has no row for position {i}"))),
            })
            .collect()
    }

    /// Choose `min(count, |candidates|)` positions to reveal.
    pub fn select<R: Rng + ?Sized>(
        &self,
        table: &PosteriorTable,
        z: &MaskedSequence,
        prompt_len: usize,
        count: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        if count == 0 {
            return Err(Error::InvalidArgument("selection count must be at least 1".into()));
        }
        let pool = self.candidates(z, prompt_len);
        if pool.is_empty() {
            return Err(Error::Contract(format!("no masked positions to select in {z}")));
        }
        let k = count.min(pool.len());
        if self.kind == PolicyKind::Random {
            let mut out: Vec<usize> = rand::seq::index::sample(rng, pool.len(), k)
                .into_iter()
                .map(|o| pool[o])
                .collect();
            out.sort_unstable();
            return Ok(out);
        }
        Ok(top_k(&pool, &self.scores(table, &pool)?, k))
    }

    /// Every possible selection with its probability; one entry for
    /// deterministic kinds, all `k`-subsets uniformly for `Random`.
    pub fn selection_distribution(
        &self,
        table: &PosteriorTable,
        z: &MaskedSequence,
        prompt_len: usize,
        count: usize,
    ) -> Result<Vec<(Vec<usize>, f64)>> {
        if count == 0 {
            return Err(Error::InvalidArgument("selection count must be at least 1".into()));
        }
        let pool = self.candidates(z, prompt_len);
        if pool.is_empty() {
            return Err(Error::Contract(format!("no masked positions to select in {z}")));
        }
        let k = count.min(pool.len());
        if self.kind == PolicyKind::Random {
            let all = combinations(&pool, k);
            let p = 1.0 / all.len() as f64;
            return Ok(all.into_iter().map(|s| (s, p)).collect());
        }
        Ok(vec![(top_k(&pool, &self.scores(table, &pool)?, k), 1.0)])
    }

    /// Add every candidate whose max-prob confidence exceeds the threshold.
    pub fn augment(&self, selected: Vec<usize>, table: &PosteriorTable, z: &MaskedSequence, prompt_len: usize) -> Vec<usize> {
        match self.threshold {
            Some(tau) => threshold_augment(selected, table, &self.candidates(z, prompt_len), tau),
            None => selected,
        }
    }
}

/// `selected ∪ {i ∈ candidates : max_v table[i](v) > tau}`, ascending.
pub fn threshold_augment(mut selected: Vec<usize>, table: &PosteriorTable, candidates: &[usize], tau: f64) -> Vec<usize> {
    for &i in candidates {
        if let Some(c) = table.get(i) {
            if confidence(c) > tau && !selected.contains(&i) {
                selected.push(i);
            }
        }
    }
    selected.sort_unstable();
    selected
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{build_zm, ZmSpec};
    use crate::oracle::posterior_table;
    use crate::rng;
    use crate::sequence::Vocab;
    use proptest::prelude::*;

    fn cat(p: &[f64]) -> Categorical {
        Categorical::new(p.to_vec()).unwrap()
    }

    fn v(n: u32) -> Vocab {
        Vocab::new(n).unwrap()
    }

    /// Table whose row `i` has max-prob `score`, over vocabulary 10.
    fn table_with_conf(scores: &[(usize, f64)]) -> PosteriorTable {
        PosteriorTable::new(
            scores
                .iter()
                .map(|&(i, s)| {
                    let mut p = vec![(1.0 - s) / 9.0; 10];
                    p[0] = s;
                    (i, Categorical::new(p).unwrap())
                })
                .collect(),
        )
    }

    #[test]
    fn score_rules() {
        let c = cat(&[0.7, 0.2, 0.1]);
        assert!((score(PolicyKind::MaxProb, &c) - 0.7).abs() < 1e-15);
        assert!((score(PolicyKind::Margin, &c) - 0.5).abs() < 1e-15);
        let u = Categorical::uniform(4);
        assert!((score(PolicyKind::NegEntropy, &u) + 4f64.ln()).abs() < 1e-12);
        let pm = cat(&[0.0, 1.0, 0.0]);
        assert_eq!(score(PolicyKind::MaxProb, &pm), 1.0);
        assert_eq!(score(PolicyKind::Margin, &pm), 1.0);
        assert_eq!(score(PolicyKind::NegEntropy, &pm), 0.0);
        assert_eq!(score(PolicyKind::Margin, &Categorical::from_raw(vec![1.0])), 1.0);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.name().parse::<PolicyKind>().unwrap(), k);
        }
        assert!("top_k".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn select_tie_breaks_lowest_index() {
        let z = MaskedSequence::fully_masked(6, v(10));
        let mut t = table_with_conf(&[(1, 0.9), (3, 0.9), (5, 0.2)]);
        // Positions 0, 2, 4 get low scores.
        let mut rows = t.rows().to_vec();
        for i in [0, 2, 4] {
            rows.push((i, Categorical::uniform(10)));
        }
        t = PosteriorTable::new(rows);
        let mut r = rng::derive(0, "t", 0);
        let p = PolicySpec::new(PolicyKind::MaxProb);
        assert_eq!(p.select(&t, &z, 0, 1, &mut r).unwrap(), vec![1]);
        assert_eq!(p.select(&t, &z, 0, 2, &mut r).unwrap(), vec![1, 3]);
        assert_eq!(p.select(&t, &z, 0, 100, &mut r).unwrap(), vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn positional_and_empty() {
        let vv = v(2);
        let z = MaskedSequence::from_options(&[Some(0), None, None], vv).unwrap();
        let t = PosteriorTable::new(vec![(1, Categorical::uniform(2)), (2, cat(&[0.0, 1.0]))]);
        let mut r = rng::derive(0, "t", 0);
        let p = PolicySpec::new(PolicyKind::Positional);
        assert_eq!(p.select(&t, &z, 0, 1, &mut r).unwrap(), vec![1]);
        let clean = MaskedSequence::from_options(&[Some(0), Some(1), Some(1)], vv).unwrap();
        assert!(p.select(&PosteriorTable::default(), &clean, 0, 1, &mut r).is_err());
        assert!(p.select(&t, &z, 0, 0, &mut r).is_err());
    }

    #[test]
    fn random_selection_is_uniform() {
        let z = MaskedSequence::fully_masked(4, v(2));
        let t = PosteriorTable::new((0..4).map(|i| (i, Categorical::uniform(2))).collect());
        let p = PolicySpec::new(PolicyKind::Random);
        let mut r = rng::derive(1, "t", 0);
        let mut counts = [0usize; 4];
        let n = 40_000;
        for _ in 0..n {
            let s = p.select(&t, &z, 0, 1, &mut r).unwrap();
            counts[s[0]] += 1;
        }
        let sigma = (0.25f64 * 0.75 / n as f64).sqrt();
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 4.0 * sigma);
        }
        let dist = p.selection_distribution(&t, &z, 0, 2).unwrap();
        assert_eq!(dist.len(), 6);
        assert!((dist.iter().map(|d| d.1).sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn threshold_examples() {
        let z = MaskedSequence::fully_masked(3, v(10));
        let t = table_with_conf(&[(0, 0.3), (1, 0.95), (2, 0.5)]);
        assert_eq!(threshold_augment(vec![0], &t, &[0, 1, 2], 0.9), vec![0, 1]);
        let t2 = table_with_conf(&[(0, 0.3), (1, 0.85), (2, 0.5)]);
        assert_eq!(threshold_augment(vec![0], &t2, &[0, 1, 2], 0.9), vec![0]);
        let p = PolicySpec::new(PolicyKind::MaxProb).with_threshold(Some(0.9));
        assert_eq!(p.augment(vec![2], &t, &z, 0), vec![1, 2]);
    }

    #[test]
    fn zm_observation_is_fast_forwarded_once_latents_known() {
        let spec = ZmSpec::new(4, 2, 0.05, 0);
        let dist = build_zm(&spec).unwrap();
        let z = MaskedSequence::from_options(&[Some(0), Some(2), None], dist.vocab()).unwrap();
        let t = posterior_table(&dist, &z).unwrap();
        assert_eq!(threshold_augment(vec![], &t, &[2], 0.9), vec![2]);
    }

    #[test]
    fn block_examples() {
        let vv = v(2);
        let z = MaskedSequence::fully_masked(4, vv);
        assert_eq!(block_restrict(2, &z, 0), vec![0, 1]);
        let z2 = MaskedSequence::from_options(&[Some(0), Some(1), None, None], vv).unwrap();
        assert_eq!(block_restrict(2, &z2, 0), vec![2, 3]);
        assert_eq!(block_restrict(4, &z2, 0), z2.masked_indices());
        let z3 = MaskedSequence::from_options(&[Some(0), None, Some(1), None], vv).unwrap();
        assert_eq!(block_restrict(2, &z3, 0), vec![1]);
        // Prompt of length 1 shifts block alignment.
        let z4 = MaskedSequence::from_options(&[Some(0), None, None, None, None], vv).unwrap();
        assert_eq!(block_restrict(2, &z4, 1), vec![1, 2]);
    }

    #[test]
    fn validate_ranges() {
        let p = PolicySpec::default();
        assert!(p.clone().with_threshold(Some(1.5)).validate(4).is_err());
        assert!(p.clone().with_threshold(Some(0.0)).validate(4).is_err());
        assert!(p.clone().with_threshold(Some(1.0)).validate(4).is_ok());
        assert!(p.clone().with_block_size(Some(3)).validate(4).is_err());
        assert!(p.clone().with_block_size(Some(2)).validate(4).is_ok());
        assert!(p.with_count(SelectCount::Fixed(0)).validate(4).is_err());
    }

    fn arb_table(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(0.01f64..1.0, 3), n)
    }

    proptest! {
        #[test]
        fn monotone_transform_invariance(raw in arb_table(6), count in 1usize..6, kind_ix in 0usize..3) {
            let kind = [PolicyKind::MaxProb, PolicyKind::Margin, PolicyKind::NegEntropy][kind_ix];
            let z = MaskedSequence::fully_masked(6, v(3));
            let table = PosteriorTable::new(
                raw.iter().enumerate().map(|(i, w)| (i, Categorical::from_weights(w.clone()).unwrap())).collect(),
            );
            let pool: Vec<usize> = (0..6).collect();
            let scores: Vec<f64> = raw.iter().map(|w| score(kind, &Categorical::from_weights(w.clone()).unwrap())).collect();
            let transformed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 7.0).collect();
            let mut r = rng::derive(0, "p", 0);
            let direct = PolicySpec::new(kind).select(&table, &z, 0, count, &mut r).unwrap();
            prop_assert_eq!(&direct, &top_k(&pool, &scores, count));
            prop_assert_eq!(direct, top_k(&pool, &transformed, count));
        }

        #[test]
        fn augment_is_superset(raw in arb_table(5), tau in 0.05f64..1.0, pick in 0usize..5) {
            let table = PosteriorTable::new(
                raw.iter().enumerate().map(|(i, w)| (i, Categorical::from_weights(w.clone()).unwrap())).collect(),
            );
            let out = threshold_augment(vec![pick], &table, &[0, 1, 2, 3, 4], tau);
            prop_assert!(out.contains(&pick));
            prop_assert!(out.windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn equal_scores_resolve_to_lowest_indices(n in 1usize..8, count in 1usize..8) {
            let z = MaskedSequence::fully_masked(n, v(2));
            let table = PosteriorTable::new((0..n).map(|i| (i, Categorical::uniform(2))).collect());
            let mut r = rng::derive(0, "p", 0);
            let s = PolicySpec::new(PolicyKind::MaxProb).select(&table, &z, 0, count, &mut r).unwrap();
            let expected: Vec<usize> = (0..count.min(n)).collect();
            prop_assert_eq!(s, expected);
        }
    }
}
