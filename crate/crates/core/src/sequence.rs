//! Tokens, clean and partially masked sequences, and the i.i.d. forward
//! masking process.
//!
//! Token ids are dense integers `0..|V|`. The mask is the sentinel `|V|`, so a
//! masked sequence over a vocabulary of size `m` reads as a base-`(m + 1)`
//! numeral; [`MaskedSequence::context_key`] is that numeral.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

pub type Token = u32;

/// A finite vocabulary `{0, .., size - 1}` plus the mask sentinel `size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Vocab {
    size: u32,
}

impl Vocab {
    pub fn new(size: u32) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidArgument(format!(
                "vocabulary size must be at least 2, got {size}"
            )));
        }
        Ok(Self { size })
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn mask(&self) -> Token {
        self.size
    }

    pub fn contains(&self, token: Token) -> bool {
        token < self.size
    }

    /// Longest sequence whose context key still fits in a `u64`.
    pub fn max_key_len(&self) -> usize {
        let base = self.size as f64 + 1.0;
        (64.0 / base.log2()).floor() as usize
    }

    pub(crate) fn check(&self, token: Token) -> Result<()> {
        if self.contains(token) {
            Ok(())
        } else {
            Err(Error::TokenOutOfVocab { token, vocab: self.size })
        }
    }
}

/// A clean sequence: every entry is a vocabulary token.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sequence(Vec<Token>);

impl Sequence {
    pub fn new(tokens: Vec<Token>, vocab: Vocab) -> Result<Self> {
        for &t in &tokens {
            vocab.check(t)?;
        }
        Ok(Self(tokens))
    }

    /// Build without vocabulary validation; callers guarantee the invariant.
    pub(crate) fn from_raw(tokens: Vec<Token>) -> Self {
        Self(tokens)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> Token {
        self.0[i]
    }
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{t}")?;
        }
        write!(f, ")")
    }
}

/// A length-`L` vector over `V ∪ {MASK}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MaskedSequence {
    entries: Vec<Token>,
    vocab: Vocab,
}

impl MaskedSequence {
    pub fn fully_masked(len: usize, vocab: Vocab) -> Self {
        Self { entries: vec![vocab.mask(); len], vocab }
    }

    pub fn from_clean(x0: &Sequence, vocab: Vocab) -> Self {
        Self { entries: x0.tokens().to_vec(), vocab }
    }

    /// `x0` with every position at or after `prompt_len` masked.
    pub fn with_prompt(x0: &Sequence, prompt_len: usize, vocab: Vocab) -> Self {
        let mut entries = x0.tokens().to_vec();
        for e in entries.iter_mut().skip(prompt_len) {
            *e = vocab.mask();
        }
        Self { entries, vocab }
    }

    /// Build from raw entries where `None` is the mask.
    pub fn from_options(entries: &[Option<Token>], vocab: Vocab) -> Result<Self> {
        let mut out = Vec::with_capacity(entries.len());
        for e in entries {
            match *e {
                Some(t) => {
                    vocab.check(t)?;
                    out.push(t);
                }
                None => out.push(vocab.mask()),
            }
        }
        Ok(Self { entries: out, vocab })
    }

    /// Build from raw ids where the value `vocab.size()` is the mask.
    pub fn from_ids(ids: Vec<Token>, vocab: Vocab) -> Result<Self> {
        for &t in &ids {
            if t > vocab.mask() {
                return Err(Error::TokenOutOfVocab { token: t, vocab: vocab.size() });
            }
        }
        Ok(Self { entries: ids, vocab })
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> &[Token] {
        &self.entries
    }

    pub fn get(&self, i: usize) -> Option<Token> {
        let e = self.entries[i];
        (e != self.vocab.mask()).then_some(e)
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.entries[i] == self.vocab.mask()
    }

    pub fn masked_count(&self) -> usize {
        self.entries.iter().filter(|&&e| e == self.vocab.mask()).count()
    }

    pub fn unmasked_count(&self) -> usize {
        self.len() - self.masked_count()
    }

    pub fn is_complete(&self) -> bool {
        self.masked_count() == 0
    }

    /// Masked positions in ascending order.
    pub fn masked_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_masked(i)).collect()
    }

    /// Unmasked positions in ascending order.
    pub fn unmasked_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.is_masked(i)).collect()
    }

    /// Split positions into `(unmasked, masked)`, both ascending.
    pub fn partition_indices(&self) -> (Vec<usize>, Vec<usize>) {
        (0..self.len()).partition(|&i| !self.is_masked(i))
    }

    /// True when `x` agrees with `self` on every unmasked position.
    pub fn agrees_with(&self, x: &Sequence) -> bool {
        x.len() == self.len()
            && self
                .entries
                .iter()
                .zip(x.tokens())
                .all(|(&e, &t)| e == self.vocab.mask() || e == t)
    }

    /// Copy of `self` with masked position `i` set to `v`.
    pub fn apply_reveal(&self, i: usize, v: Token) -> Result<Self> {
        if i >= self.len() {
            return Err(Error::IndexOutOfRange { index: i, len: self.len() });
        }
        if !self.is_masked(i) {
            return Err(Error::Contract(format!(
                "position {i} of {self} is already unmasked"
            )));
        }
        self.vocab.check(v)?;
        let mut next = self.clone();
        next.entries[i] = v;
        Ok(next)
    }

    /// In-place reveal without checks; callers guarantee `i` is masked.
    pub(crate) fn set(&mut self, i: usize, v: Token) {
        self.entries[i] = v;
    }

    /// The clean sequence, if nothing is masked.
    pub fn to_clean(&self) -> Option<Sequence> {
        self.is_complete().then(|| Sequence::from_raw(self.entries.clone()))
    }

    /// Base-`(|V| + 1)` numeral of the entries, most significant first.
    pub fn context_key(&self) -> u64 {
        let base = self.vocab.size() as u64 + 1;
        self.entries.iter().fold(0u64, |acc, &e| acc * base + e as u64)
    }

    /// Inverse of [`context_key`](Self::context_key).
    pub fn from_context_key(key: u64, len: usize, vocab: Vocab) -> Result<Self> {
        let base = vocab.size() as u64 + 1;
        let mut entries = vec![0; len];
        let mut rest = key;
        for e in entries.iter_mut().rev() {
            *e = (rest % base) as Token;
            rest /= base;
        }
        if rest != 0 {
            return Err(Error::InvalidArgument(format!(
                "context key {key} does not fit length {len}"
            )));
        }
        Ok(Self { entries, vocab })
    }
}

impl fmt::Display for MaskedSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, &e) in self.entries.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            if e == self.vocab.mask() {
                write!(f, "m")?;
            } else {
                write!(f, "{e}")?;
            }
        }
        write!(f, ")")
    }
}

/// Uniform time grid `t_j = 1 - j/K`, `j = 0..=K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeGrid {
    k: usize,
}

impl TimeGrid {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("K must be at least 1".into()));
        }
        Ok(Self { k })
    }

    pub fn steps(&self) -> usize {
        self.k
    }

    pub fn time(&self, j: usize) -> f64 {
        1.0 - j as f64 / self.k as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.k).map(|j| self.time(j)).collect()
    }
}

/// Mask each position of `x0` independently with probability `t`.
pub fn iid_mask<R: Rng + ?Sized>(
    x0: &Sequence,
    t: f64,
    vocab: Vocab,
    rng: &mut R,
) -> Result<MaskedSequence> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("masking time {t} is outside [0, 1]")));
    }
    let entries = x0
        .tokens()
        .iter()
        .map(|&tok| if rng.random::<f64>() < t { vocab.mask() } else { tok })
        .collect();
    Ok(MaskedSequence { entries, vocab })
}

/// `P(x_t = z | x0, t)` under i.i.d. masking:
/// `(1 - t)^|um(z)| * t^(L - |um(z)|)` when `z` agrees with `x0`, else 0.
pub fn pattern_probability(z: &MaskedSequence, x0: &Sequence, t: f64) -> f64 {
    if !z.agrees_with(x0) {
        return 0.0;
    }
    let unmasked = z.unmasked_count() as i32;
    let masked = z.len() as i32 - unmasked;
    (1.0 - t).powi(unmasked) * t.powi(masked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::rng;
    use proptest::prelude::*;

    fn v2() -> Vocab {
        Vocab::new(2).unwrap()
    }

    fn ms(entries: &[Option<Token>]) -> MaskedSequence {
        MaskedSequence::from_options(entries, v2()).unwrap()
    }

    #[test]
    fn vocab_rejects_singleton() {
        assert!(Vocab::new(1).is_err());
        assert_eq!(Vocab::new(4).unwrap().mask(), 4);
    }

    #[test]
    fn partition_examples() {
        let z = ms(&[None, None]);
        assert_eq!(z.partition_indices(), (vec![], vec![0, 1]));
        let z = ms(&[Some(0), None, Some(1)]);
        assert_eq!(z.partition_indices(), (vec![0, 2], vec![1]));
        let z = ms(&[Some(0), Some(1)]);
        assert!(z.partition_indices().1.is_empty());
    }

    #[test]
    fn reveal_examples() {
        let z = ms(&[None, None]);
        let z = z.apply_reveal(0, 0).unwrap();
        assert_eq!(z, ms(&[Some(0), None]));
        let z2 = z.apply_reveal(1, 1).unwrap();
        assert_eq!(z2, ms(&[Some(0), Some(1)]));
        assert!(matches!(z.apply_reveal(0, 1), Err(Error::Contract(_))));
        assert!(matches!(z.apply_reveal(1, 2), Err(Error::TokenOutOfVocab { .. })));
        assert!(matches!(z.apply_reveal(5, 0), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn iid_mask_extremes() {
        let x0 = Sequence::new(vec![1, 0, 1], v2()).unwrap();
        let mut r = rng::derive(1, "test", 0);
        assert_eq!(iid_mask(&x0, 0.0, v2(), &mut r).unwrap(), MaskedSequence::from_clean(&x0, v2()));
        assert_eq!(iid_mask(&x0, 1.0, v2(), &mut r).unwrap().masked_count(), 3);
        assert!(iid_mask(&x0, 1.5, v2(), &mut r).is_err());
        assert!(iid_mask(&x0, -0.1, v2(), &mut r).is_err());
    }

    #[test]
    fn iid_mask_pattern_frequencies_l2() {
        // Each of the four patterns has probability 1/4; check within 3 sigma.
        let x0 = Sequence::new(vec![0, 1], v2()).unwrap();
        let mut r = rng::derive(2, "test", 0);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let z = iid_mask(&x0, 0.5, v2(), &mut r).unwrap();
            let idx = (z.is_masked(0) as usize) * 2 + z.is_masked(1) as usize;
            counts[idx] += 1;
        }
        let sigma = (0.25f64 * 0.75 / n as f64).sqrt();
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn pattern_probability_examples() {
        let v = v2();
        let x0 = Sequence::new(vec![0, 1, 1], v).unwrap();
        let z = MaskedSequence::from_options(&[Some(0), None, Some(1)], v).unwrap();
        let p = pattern_probability(&z, &x0, 1.0 / 3.0);
        assert!((p - 4.0 / 27.0).abs() < 1e-15);
        let bad = MaskedSequence::from_options(&[Some(1), None, None], v).unwrap();
        assert_eq!(pattern_probability(&bad, &x0, 0.3), 0.0);
        let full = MaskedSequence::fully_masked(3, v);
        assert!((pattern_probability(&full, &x0, 0.3) - 0.027).abs() < 1e-15);
    }

    #[test]
    fn context_key_round_trip() {
        let v = Vocab::new(4).unwrap();
        let z = MaskedSequence::from_options(&[Some(3), None, Some(0), Some(2)], v).unwrap();
        let key = z.context_key();
        assert_eq!(key, ((3 * 5 + 4) * 5) * 5 + 2);
        assert_eq!(MaskedSequence::from_context_key(key, 4, v).unwrap(), z);
    }

    #[test]
    fn time_grid_endpoints() {
        let g = TimeGrid::new(4).unwrap();
        let ts = g.times();
        assert_eq!(ts[0], 1.0);
        assert_eq!(ts[4], 0.0);
        assert!(ts.windows(2).all(|w| w[0] > w[1]));
        assert!(TimeGrid::new(0).is_err());
    }

    /// Chi-square statistic of the mask-count histogram against Binomial(L, t).
    #[test]
    fn iid_mask_count_matches_binomial() {
        let l = 6;
        let t = 0.3;
        let v = Vocab::new(3).unwrap();
        let x0 = Sequence::new(vec![0; l], v).unwrap();
        let mut r = rng::derive(3, "test", 0);
        let n = 100_000;
        let mut hist = vec![0usize; l + 1];
        for _ in 0..n {
            hist[iid_mask(&x0, t, v, &mut r).unwrap().masked_count()] += 1;
        }
        let choose = |n: usize, k: usize| -> f64 {
            (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
        };
        let chi2: f64 = (0..=l)
            .map(|k| {
                let e = n as f64 * choose(l, k) * t.powi(k as i32) * (1.0 - t).powi((l - k) as i32);
                (hist[k] as f64 - e).powi(2) / e
            })
            .sum();
        // 99th percentile of chi-square with 6 degrees of freedom.
        assert!(chi2 < 16.812, "chi2 = {chi2}");
    }

    proptest! {
        #[test]
        fn pattern_probabilities_sum_to_one(l in 1usize..=10, t in 0.01f64..0.99, seed: u64) {
            let v = Vocab::new(3).unwrap();
            let mut r = rng::derive(seed, "prop", 0);
            let toks: Vec<Token> = (0..l).map(|_| r.random_range(0..3)).collect();
            let x0 = Sequence::new(toks.clone(), v).unwrap();
            let mut total = 0.0;
            for mask in 0u32..(1 << l) {
                let entries: Vec<Option<Token>> = (0..l)
                    .map(|i| if mask >> i & 1 == 1 { None } else { Some(toks[i]) })
                    .collect();
                let z = MaskedSequence::from_options(&entries, v).unwrap();
                total += pattern_probability(&z, &x0, t);
            }
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn reveal_shrinks_mask_by_one(l in 1usize..=8, pick in 0usize..8, v in 0u32..3) {
            let vocab = Vocab::new(3).unwrap();
            let z = MaskedSequence::fully_masked(l, vocab);
            let i = pick % l;
            let next = z.apply_reveal(i, v).unwrap();
            prop_assert_eq!(next.masked_indices().len() + 1, z.masked_indices().len());
            let (um, msk) = next.partition_indices();
            prop_assert_eq!(um.len() + msk.len(), l);
            prop_assert!(um.iter().all(|i| !msk.contains(i)));
        }
    }
}
