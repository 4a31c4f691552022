use std::collections::BTreeMap;

use super::marginal::teacher_forced_joint;
use crate::dist::TabularDistribution;
use crate::error::{Error, Result};
use crate::oracle::exact_posterior;
use crate::policy::PolicySpec;
use crate::sequence::MaskedSequence;

/// Forward process whose visitation is weighed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardKind {
    /// i.i.d. masking with `t ~ Unif[0,1]`.
    Iid,
    /// Teacher-forced chains driven by exact-oracle scores.
    TeacherForced,
    /// Teacher-forced chains that stall on the first step whenever the
    /// hidden token at the lowest masked position is nonzero. Its law of
    /// `z` depends on hidden tokens, so it does not factor as
    /// `α(z)·1{x0 agrees with z}`.
    Leaking,
}

impl ForwardKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Iid => "iid",
            Self::TeacherForced => "teacher_forced",
            Self::Leaking => "leaking",
        }
    }
}

impl std::str::FromStr for ForwardKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(Self::Iid),
            "teacher_forced" => Ok(Self::TeacherForced),
            "leaking" => Ok(Self::Leaking),
            _ => Err(Error::InvalidArgument(format!("unknown forward kind `{s}`"))),
        }
    }
}

/// Visitation weight of each `(z, x0)` pair; `x0` as an index into the
/// distribution's enumerated support. Only states with a mask are kept.
pub type Visitation = BTreeMap<MaskedSequence, BTreeMap<usize, f64>>;

/// `∫_0^1 (1−t)^u t^(L−u) dt = u! (L−u)! / (L+1)!`.
pub fn iid_pattern_weight(unmasked: usize, len: usize) -> f64 {
    // Beta(u + 1, L − u + 1) as a running product to stay in range.
    let mut w = 1.0 / (len + 1) as f64;
    for j in 1..=unmasked {
        w *= j as f64 / (len - unmasked + j) as f64;
    }
    w
}

pub fn visitation(
    dist: &TabularDistribution,
    forward: ForwardKind,
    policy: &PolicySpec,
    k: usize,
) -> Result<Visitation> {
    let mut out: Visitation = BTreeMap::new();
    let len = dist.len();
    match forward {
        ForwardKind::Iid => {
            if len > 20 {
                return Err(Error::StateSpaceTooLarge { states: 1 << len.min(63), limit: 1 << 20 });
            }
            for (xi, (x, px)) in dist.enumerate().iter().enumerate() {
                for pattern in 1u32..(1 << len) {
                    let mut z = MaskedSequence::from_clean(x, dist.vocab());
                    for i in 0..len {
                        if pattern >> i & 1 == 1 {
                            z.set(i, dist.vocab().mask());
                        }
                    }
                    let w = px * iid_pattern_weight(z.unmasked_count(), len);
                    *out.entry(z).or_default().entry(xi).or_insert(0.0) += w;
                }
            }
        }
        ForwardKind::TeacherForced | ForwardKind::Leaking => {
            let support = dist.enumerate();
            let leaking = forward == ForwardKind::Leaking;
            let linger = |step: usize, xi: usize, z: &MaskedSequence| {
                leaking
                    && step == 0
                    && z.masked_indices().first().is_some_and(|&i| support[xi].0.get(i) != 0)
            };
            for layer in teacher_forced_joint(dist, policy, k, linger)? {
                for ((xi, z), p) in layer {
                    if !z.is_complete() {
                        *out.entry(z).or_default().entry(xi).or_insert(0.0) += p;
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizerReport {
    /// Largest `|freq(v | z, i) − posterior(v | z, i)|` over visited rows.
    pub max_deviation: f64,
    pub rows: usize,
}

/// Tolerance below which the minimizer counts as preserved.
pub const MINIMIZER_TOL: f64 = 1e-10;

impl MinimizerReport {
    pub fn preserved(&self) -> bool {
        self.max_deviation < MINIMIZER_TOL
    }
}

/// Weighted cross-entropy minimizer at every visited `(z, i)`: the
/// visitation-weighted conditional frequency of `x0^i`, compared with the
/// exact posterior.
pub fn verify_minimizer_preservation(
    dist: &TabularDistribution,
    forward: ForwardKind,
    policy: &PolicySpec,
    k: usize,
) -> Result<MinimizerReport> {
    let visits = visitation(dist, forward, policy, k)?;
    let support = dist.enumerate();
    let width = dist.vocab().size() as usize;
    let mut max_deviation: f64 = 0.0;
    let mut rows = 0;
    for (z, weights) in &visits {
        let total: f64 = weights.values().sum();
        if total.is_nan() || total <= 0.0 {
            continue;
        }
        for i in z.masked_indices() {
            let mut freq = vec![0.0; width];
            for (&xi, &w) in weights {
                freq[support[xi].0.get(i) as usize] += w / total;
            }
            let post = exact_posterior(dist, z, i)?;
            for (a, b) in freq.iter().zip(post.probs()) {
                max_deviation = max_deviation.max((a - b).abs());
            }
            rows += 1;
        }
    }
    Ok(MinimizerReport { max_deviation, rows })
}
