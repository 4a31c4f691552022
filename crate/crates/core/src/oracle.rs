//! Exact unmasking posteriors computed by enumerating the support.

use std::collections::HashMap;
use std::sync::Mutex;

use crate::dist::TabularDistribution;
use crate::error::{Error, Result};
use crate::sequence::{MaskedSequence, Token};

/// Normalization tolerance for categorical rows.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// A distribution over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|&p| !p.is_finite() || p < 0.0) {
            return Err(Error::InvalidArgument(format!("negative or non-finite probability in {probs:?}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidArgument(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    /// Build from nonnegative weights, renormalizing.
    pub fn from_weights(mut weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return Err(Error::InvalidArgument("weights sum to zero".into()));
        }
        for w in weights.iter_mut() {
            *w /= total;
        }
        Ok(Self { probs: weights })
    }

    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        Self { probs }
    }

    pub fn uniform(size: usize) -> Self {
        Self { probs: vec![1.0 / size as f64; size] }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, v: Token) -> f64 {
        self.probs[v as usize]
    }

    /// Highest-probability token; ties go to the lowest id.
    pub fn argmax(&self) -> Token {
        let mut best = 0;
        for (v, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = v;
            }
        }
        best as Token
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Token {
        let u: f64 = rng.random::<f64>() * self.probs.iter().sum::<f64>();
        let mut acc = 0.0;
        let mut last = 0;
        for (v, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last = v;
                if u < acc {
                    return v as Token;
                }
            }
        }
        last as Token
    }

    pub fn l1_distance(&self, other: &Categorical) -> f64 {
        self.probs.iter().zip(&other.probs).map(|(a, b)| (a - b).abs()).sum()
    }
}

/// Max-probability confidence of a categorical.
pub fn confidence(c: &Categorical) -> f64 {
    c.probs.iter().copied().fold(0.0, f64::max)
}

/// Per-masked-index categoricals for one context, ordered by index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PosteriorTable {
    rows: Vec<(usize, Categorical)>,
}

impl PosteriorTable {
    pub fn new(mut rows: Vec<(usize, Categorical)>) -> Self {
        rows.sort_by_key(|r| r.0);
        Self { rows }
    }

    pub fn rows(&self) -> &[(usize, Categorical)] {
        &self.rows
    }

    pub fn get(&self, i: usize) -> Option<&Categorical> {
        self.rows
            .binary_search_by_key(&i, |r| r.0)
            .ok()
            .map(|k| &self.rows[k].1)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Anything that maps a masked context to per-position categoricals: the
/// exact oracle or a learned model.
pub trait ScoreSource {
    fn table(&self, z: &MaskedSequence) -> Result<PosteriorTable>;
}

impl<S: ScoreSource + ?Sized> ScoreSource for &S {
    fn table(&self, z: &MaskedSequence) -> Result<PosteriorTable> {
        (**self).table(z)
    }
}

/// `P(x0^i = . | x0 agrees with z on um(z))`.
pub fn exact_posterior(dist: &TabularDistribution, z: &MaskedSequence, i: usize) -> Result<Categorical> {
    if i >= z.len() {
        return Err(Error::IndexOutOfRange { index: i, len: z.len() });
    }
    if !z.is_masked(i) {
        return Err(Error::Contract(format!("position {i} of {z} is not masked")));
    }
    let mut w = vec![0.0; dist.vocab().size() as usize];
    for (x, p) in dist.enumerate() {
        if z.agrees_with(x) {
            w[x.get(i) as usize] += p;
        }
    }
    Categorical::from_weights(w).map_err(|_| Error::ImpossibleContext(z.to_string()))
}

/// Exact posteriors for every masked index of `z`, in one pass over the support.
pub fn posterior_table(dist: &TabularDistribution, z: &MaskedSequence) -> Result<PosteriorTable> {
    if z.len() != dist.len() {
        return Err(Error::LengthMismatch { expected: dist.len(), got: z.len() });
    }
    let masked = z.masked_indices();
    if masked.is_empty() {
        return Ok(PosteriorTable::default());
    }
    let v = dist.vocab().size() as usize;
    let mut w = vec![vec![0.0; v]; masked.len()];
    let mut total = 0.0;
    for (x, p) in dist.enumerate() {
        if z.agrees_with(x) {
            total += p;
            for (row, &i) in w.iter_mut().zip(&masked) {
                row[x.get(i) as usize] += p;
            }
        }
    }
    if total.is_nan() || total <= 0.0 {
        return Err(Error::ImpossibleContext(z.to_string()));
    }
    let rows = masked
        .into_iter()
        .zip(w)
        .map(|(i, mut row)| {
            for r in row.iter_mut() {
                *r /= total;
            }
            (i, Categorical::from_raw(row))
        })
        .collect();
    Ok(PosteriorTable { rows })
}

/// Exact oracle over a distribution, memoizing tables per context.
pub struct Oracle<'a> {
    dist: &'a TabularDistribution,
    cache: Mutex<HashMap<MaskedSequence, PosteriorTable>>,
}

impl<'a> Oracle<'a> {
    pub fn new(dist: &'a TabularDistribution) -> Self {
        Self { dist, cache: Mutex::new(HashMap::new()) }
    }

    pub fn dist(&self) -> &'a TabularDistribution {
        self.dist
    }
}

impl ScoreSource for Oracle<'_> {
    fn table(&self, z: &MaskedSequence) -> Result<PosteriorTable> {
        if let Some(t) = self.cache.lock().expect("oracle cache poisoned").get(z) {
            return Ok(t.clone());
        }
        let t = posterior_table(self.dist, z)?;
        self.cache
            .lock()
            .expect("oracle cache poisoned")
            .insert(z.clone(), t.clone());
        Ok(t)
    }
}
