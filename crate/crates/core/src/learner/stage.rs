//! Stage bookkeeping for teacher-forced chains: stage partitioning of the
//! unmasked fraction, stochastic reveal counts, and the K schedule.

use rand::Rng;

use crate::error::{Error, Result};

/// Stage `n` such that `unmasked ∈ [L·n/K, L·(n+1)/K]`, with boundary counts
/// assigned to the lower stage. A fully unmasked sequence is at stage `K`.
pub fn stage_of(unmasked: usize, effective_len: usize, k: usize) -> usize {
    if unmasked >= effective_len {
        return k;
    }
    // ceil(u·K / L) - 1, floored at 0
    (unmasked * k).div_ceil(effective_len).saturating_sub(1)
}

/// `ΔU = max(1, round(L·r) - U)`, clamped to the remaining masks.
pub fn reveal_count_for_ratio(r: f64, unmasked: usize, effective_len: usize) -> usize {
    let remaining = effective_len.saturating_sub(unmasked);
    let target = (effective_len as f64 * r.min(1.0)).round() as i64;
    let delta = (target - unmasked as i64).max(1) as usize;
    delta.min(remaining)
}

/// Draw `r ~ Unif[(n+1)/K, (n+2)/K]` (clamped to 1) and return `ΔU`.
pub fn next_reveal_count<R: Rng + ?Sized>(
    unmasked: usize,
    stage: usize,
    k: usize,
    effective_len: usize,
    rng: &mut R,
) -> Result<usize> {
    if stage >= k {
        return Err(Error::Contract(format!("stage {stage} has no successor when K = {k}")));
    }
    let lo = (stage + 1) as f64 / k as f64;
    let hi = (stage + 2) as f64 / k as f64;
    let r = (lo + (hi - lo) * rng.random::<f64>()).min(1.0);
    Ok(reveal_count_for_ratio(r, unmasked, effective_len))
}

/// Exact law of [`next_reveal_count`]: `(ΔU, probability)` pairs, ascending.
pub fn reveal_count_distribution(
    unmasked: usize,
    stage: usize,
    k: usize,
    effective_len: usize,
) -> Result<Vec<(usize, f64)>> {
    if stage >= k {
        return Err(Error::Contract(format!("stage {stage} has no successor when K = {k}")));
    }
    let lo = (stage + 1) as f64 / k as f64;
    let hi = (stage + 2) as f64 / k as f64;
    let l = effective_len as f64;
    let mut law: Vec<(usize, f64)> = Vec::new();
    let mut push = |delta: usize, p: f64| {
        if p <= 0.0 {
            return;
        }
        match law.iter_mut().find(|e| e.0 == delta) {
            Some(e) => e.1 += p,
            None => law.push((delta, p)),
        }
    };
    // r above 1 is clamped to 1, i.e. round(L r) = L.
    if hi > 1.0 {
        push(reveal_count_for_ratio(1.0, unmasked, effective_len), (hi - lo.max(1.0)) / (hi - lo));
    }
    for j in 0..=effective_len {
        // round(L r) = j on [(j - 1/2)/L, (j + 1/2)/L).
        let a = ((j as f64 - 0.5) / l).max(lo);
        let b = ((j as f64 + 0.5) / l).min(hi).min(1.0);
        if b > a {
            push(reveal_count_for_ratio(j as f64 / l, unmasked, effective_len), (b - a) / (hi - lo));
        }
    }
    law.sort_by_key(|e| e.0);
    Ok(law)
}

/// Stage after a step: nominally one further, pushed ahead when the
/// recomputed stage is larger, `K` exactly when the chain is complete.
pub fn advance_stage(stage: usize, unmasked: usize, effective_len: usize, k: usize) -> usize {
    if unmasked >= effective_len {
        return k;
    }
    (stage + 1).max(stage_of(unmasked, effective_len, k)).min(k.saturating_sub(1))
}

/// `K = min(K_max, K0 + increment · floor(step / period))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KSchedule {
    pub k0: usize,
    pub increment: usize,
    pub period: u64,
    pub k_max: usize,
}

impl KSchedule {
    pub fn fixed(k: usize) -> Self {
        Self { k0: k, increment: 0, period: 1, k_max: k }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k0 == 0 {
            return Err(Error::InvalidArgument("K0 must be at least 1".into()));
        }
        if self.k_max < self.k0 {
            return Err(Error::InvalidArgument(format!("K_max {} is below K0 {}", self.k_max, self.k0)));
        }
        if self.period == 0 {
            return Err(Error::InvalidArgument("K schedule period must be positive".into()));
        }
        Ok(())
    }

    pub fn k_at(&self, step: u64) -> usize {
        let grown = self.k0 as u64 + self.increment as u64 * (step / self.period);
        grown.min(self.k_max as u64) as usize
    }
}
