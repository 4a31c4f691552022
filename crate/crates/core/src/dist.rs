//! Finite data distributions with exact enumeration, including the
//! latent/observation family over `Z_m`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::sequence::{Sequence, Token, Vocab};

/// An explicit finite distribution over `V^L`.
///
/// The support is stored sparsely, sorted lexicographically, with strictly
/// positive probabilities summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDistribution {
    len: usize,
    vocab: Vocab,
    support: Vec<(Sequence, f64)>,
    cumulative: Vec<f64>,
}

impl TabularDistribution {
    /// Normalize `support` (unnormalized positive weights) into a distribution.
    pub fn build(len: usize, vocab: Vocab, support: Vec<(Vec<Token>, f64)>) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidDistribution("sequence length must be positive".into()));
        }
        if len > vocab.max_key_len() {
            return Err(Error::InvalidDistribution(format!(
                "length {len} exceeds the largest enumerable length {} for vocabulary {}",
                vocab.max_key_len(),
                vocab.size()
            )));
        }
        if support.is_empty() {
            return Err(Error::InvalidDistribution("support is empty".into()));
        }
        let mut rows = Vec::with_capacity(support.len());
        for (tokens, w) in support {
            if tokens.len() != len {
                return Err(Error::LengthMismatch { expected: len, got: tokens.len() });
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidDistribution(format!(
                    "weight {w} for {tokens:?} is not strictly positive"
                )));
            }
            rows.push((Sequence::new(tokens, vocab)?, w));
        }
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidDistribution(format!("duplicate sequence {}", w[0].0)));
        }
        let total: f64 = rows.iter().map(|r| r.1).sum();
        for r in rows.iter_mut() {
            r.1 /= total;
        }
        let mut acc = 0.0;
        let cumulative = rows
            .iter()
            .map(|r| {
                acc += r.1;
                acc
            })
            .collect();
        Ok(Self { len, vocab, support: rows, cumulative })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    /// Full support in lexicographic order.
    pub fn enumerate(&self) -> &[(Sequence, f64)] {
        &self.support
    }

    pub fn support_size(&self) -> usize {
        self.support.len()
    }

    /// Probability of `x` (zero outside the support).
    pub fn probability(&self, x: &Sequence) -> f64 {
        self.support
            .binary_search_by(|(s, _)| s.cmp(x))
            .map(|i| self.support[i].1)
            .unwrap_or(0.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Sequence {
        let u: f64 = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
        let idx = self.cumulative.partition_point(|&c| c <= u);
        self.support[idx.min(self.support.len() - 1)].0.clone()
    }

    /// Marginal law of position `i`.
    pub fn marginal(&self, i: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.vocab.size() as usize];
        for (x, w) in &self.support {
            p[x.get(i) as usize] += w;
        }
        p
    }
}

/// Parameters of the latent/observation family over `Z_m`:
/// `U_1..U_d ~ Unif{0, m/2}`, `Y = theta + sum U + E (mod m)` with
/// `P(E = 0) = 1 - eta` and `P(E = a) = eta / (m - 1)` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct ZmSpec {
    pub m: u32,
    pub d: usize,
    pub eta: f64,
    pub theta: u32,
    /// `permutation[k]` is the sequence index of slot `k`, where slots
    /// `0..d` are the latents and slot `d` is the observation.
    pub permutation: Vec<usize>,
}

impl ZmSpec {
    /// Identity layout: latents first, observation last.
    pub fn new(m: u32, d: usize, eta: f64, theta: u32) -> Self {
        Self { m, d, eta, theta, permutation: (0..=d).collect() }
    }

    pub fn with_theta(&self, theta: u32) -> Self {
        Self { theta, ..self.clone() }
    }

    /// The shift `m / 2`.
    pub fn delta(&self) -> u32 {
        self.m / 2
    }

    /// The parameter space `{0, m/2}`.
    pub fn thetas(&self) -> [u32; 2] {
        [0, self.delta()]
    }

    pub fn len(&self) -> usize {
        self.d + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn y_index(&self) -> usize {
        self.permutation[self.d]
    }

    pub fn latent_indices(&self) -> Vec<usize> {
        self.permutation[..self.d].to_vec()
    }

    pub fn noise_probability(&self, e: u32) -> f64 {
        if e.is_multiple_of(self.m) {
            1.0 - self.eta
        } else {
            self.eta / (self.m - 1) as f64
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 4 || !self.m.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("m must be even and >= 4, got {}", self.m)));
        }
        if self.d < 1 {
            return Err(Error::InvalidArgument("d must be at least 1".into()));
        }
        if !(self.eta > 0.0 && self.eta < 0.5) {
            return Err(Error::InvalidArgument(format!("eta must lie in (0, 1/2), got {}", self.eta)));
        }
        if self.theta != 0 && self.theta != self.delta() {
            return Err(Error::InvalidArgument(format!(
                "theta must be 0 or {}, got {}",
                self.delta(),
                self.theta
            )));
        }
        let mut seen = vec![false; self.d + 1];
        if self.permutation.len() != self.d + 1 {
            return Err(Error::InvalidArgument("permutation must have d + 1 entries".into()));
        }
        for &p in &self.permutation {
            if p > self.d || seen[p] {
                return Err(Error::InvalidArgument(format!(
                    "permutation {:?} is not a bijection on 0..={}",
                    self.permutation, self.d
                )));
            }
            seen[p] = true;
        }
        Ok(())
    }

    /// Arrange `(u_1..u_d, y)` into sequence order.
    pub fn arrange(&self, latents: &[Token], y: Token) -> Vec<Token> {
        let mut x = vec![0; self.d + 1];
        for (k, &u) in latents.iter().enumerate() {
            x[self.permutation[k]] = u;
        }
        x[self.permutation[self.d]] = y;
        x
    }

    /// Noise-free observation for the given latents.
    pub fn answer(&self, latents: &[Token]) -> Token {
        (self.theta + latents.iter().sum::<u32>()) % self.m
    }
}

/// Enumerate the `Z_m` family exactly.
pub fn build_zm(spec: &ZmSpec) -> Result<TabularDistribution> {
    spec.validate()?;
    let vocab = Vocab::new(spec.m)?;
    let delta = spec.delta();
    let p_latents = 0.5f64.powi(spec.d as i32);
    let mut support = Vec::with_capacity((1 << spec.d) * spec.m as usize);
    for bits in 0u64..(1u64 << spec.d) {
        let latents: Vec<Token> =
            (0..spec.d).map(|k| if bits >> k & 1 == 1 { delta } else { 0 }).collect();
        let base = spec.answer(&latents);
        for e in 0..spec.m {
            let y = (base + e) % spec.m;
            support.push((spec.arrange(&latents, y), p_latents * spec.noise_probability(e)));
        }
    }
    TabularDistribution::build(spec.len(), vocab, support)
}

/// Uniform over `{(0,0), (1,1)}` with vocabulary 2.
pub fn two_point() -> TabularDistribution {
    TabularDistribution::build(2, Vocab::new(2).unwrap(), vec![(vec![0, 0], 1.0), (vec![1, 1], 1.0)])
        .expect("valid fixture")
}

/// An asymmetric three-point distribution over `{0,1,2}^3`.
pub fn three_point_asymmetric() -> TabularDistribution {
    TabularDistribution::build(
        3,
        Vocab::new(3).unwrap(),
        vec![(vec![0, 1, 2], 0.5), (vec![1, 1, 0], 0.3), (vec![2, 0, 0], 0.2)],
    )
    .expect("valid fixture")
}

/// Point mass on `x`.
pub fn point_mass(x: Vec<Token>, vocab: Vocab) -> Result<TabularDistribution> {
    TabularDistribution::build(x.len(), vocab, vec![(x, 1.0)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn build_normalizes() {
        let d = two_point();
        assert_eq!(d.enumerate().len(), 2);
        assert_eq!(d.enumerate()[0].1, 0.5);
        assert_eq!(d.enumerate()[1].1, 0.5);
        let pm = point_mass(vec![1, 0, 1], Vocab::new(2).unwrap()).unwrap();
        assert_eq!(pm.enumerate()[0].1, 1.0);
    }

    #[test]
    fn build_rejects_bad_input() {
        let v = Vocab::new(2).unwrap();
        assert!(TabularDistribution::build(2, v, vec![(vec![0, 0], 1.0), (vec![0, 0], 2.0)]).is_err());
        assert!(TabularDistribution::build(2, v, vec![(vec![0, 0], 0.0)]).is_err());
        assert!(TabularDistribution::build(2, v, vec![(vec![0, 0], -1.0)]).is_err());
        assert!(matches!(
            TabularDistribution::build(2, v, vec![(vec![0, 0, 1], 1.0)]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(TabularDistribution::build(2, v, vec![(vec![0, 2], 1.0)]).is_err());
        assert!(TabularDistribution::build(2, v, vec![]).is_err());
    }

    #[test]
    fn zm_generative_law() {
        let spec = ZmSpec::new(4, 1, 0.1, 0);
        let dist = build_zm(&spec).unwrap();
        let v = dist.vocab();
        let p = dist.probability(&Sequence::new(vec![0, 0], v).unwrap());
        assert!((p - 0.45).abs() < 1e-15);
        let total: f64 = dist.enumerate().iter().map(|r| r.1).sum();
        assert!((total - 1.0).abs() < 1e-12);

        let shifted = build_zm(&spec.with_theta(2)).unwrap();
        let p = shifted.probability(&Sequence::new(vec![0, 2], v).unwrap());
        assert!((p - 0.45).abs() < 1e-15);
    }

    #[test]
    fn zm_support_size_and_latent_marginals() {
        let spec = ZmSpec::new(4, 2, 0.1, 0);
        let dist = build_zm(&spec).unwrap();
        assert!(dist.support_size() <= 16);
        for k in spec.latent_indices() {
            let m = dist.marginal(k);
            assert!((m[0] - 0.5).abs() < 1e-15 && (m[2] - 0.5).abs() < 1e-15);
            assert_eq!(m[1] + m[3], 0.0);
        }
    }

    #[test]
    fn zm_validation() {
        assert!(build_zm(&ZmSpec::new(5, 1, 0.1, 0)).is_err());
        assert!(build_zm(&ZmSpec::new(2, 1, 0.1, 0)).is_err());
        assert!(build_zm(&ZmSpec::new(4, 0, 0.1, 0)).is_err());
        assert!(build_zm(&ZmSpec::new(4, 1, 0.5, 0)).is_err());
        assert!(build_zm(&ZmSpec::new(4, 1, 0.1, 1)).is_err());
        let mut bad = ZmSpec::new(4, 2, 0.1, 0);
        bad.permutation = vec![0, 0, 2];
        assert!(build_zm(&bad).is_err());
    }

    #[test]
    fn zm_permutation_moves_observation() {
        let mut spec = ZmSpec::new(4, 2, 0.1, 0);
        spec.permutation = vec![1, 2, 0];
        assert_eq!(spec.y_index(), 0);
        let dist = build_zm(&spec).unwrap();
        // Y sits at index 0; latents at 1 and 2 keep the uniform {0, 2} law.
        let m = dist.marginal(1);
        assert!((m[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sampling_frequencies() {
        let pm = point_mass(vec![1, 1], Vocab::new(2).unwrap()).unwrap();
        let mut r = rng::derive(5, "test", 0);
        for _ in 0..100 {
            assert_eq!(pm.sample(&mut r).tokens(), &[1, 1]);
        }

        let d = two_point();
        let n = 100_000;
        let hits = (0..n).filter(|_| d.sample(&mut r).get(0) == 0).count();
        let sigma = (0.25 / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - 0.5).abs() < 3.0 * sigma);

        let zm = build_zm(&ZmSpec::new(4, 1, 0.1, 0)).unwrap();
        let noisy = (0..n)
            .filter(|_| {
                let x = zm.sample(&mut r);
                x.get(1) != x.get(0)
            })
            .count();
        let sigma = (0.1f64 * 0.9 / n as f64).sqrt();
        assert!((noisy as f64 / n as f64 - 0.1).abs() < 3.0 * sigma);
    }

    #[test]
    fn sample_matches_enumeration() {
        let d = three_point_asymmetric();
        let mut r = rng::derive(6, "test", 0);
        let n = 100_000;
        let mut counts = vec![0usize; d.support_size()];
        for _ in 0..n {
            let x = d.sample(&mut r);
            let i = d.enumerate().iter().position(|(s, _)| *s == x).unwrap();
            counts[i] += 1;
        }
        for (c, (_, p)) in counts.iter().zip(d.enumerate()) {
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!((*c as f64 / n as f64 - p).abs() < 4.0 * sigma);
        }
    }
}
