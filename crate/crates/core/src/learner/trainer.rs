//! Vanilla random-masking training and the streaming PUMA trainer.

use rand::Rng;

use super::model::{Gradients, TabularMDM};
use super::stage::{advance_stage, next_reveal_count, KSchedule};
use crate::dist::TabularDistribution;
use crate::error::{Error, Result};
use crate::policy::{PolicySpec, SelectCount};
use crate::sequence::{MaskedSequence, Sequence, Vocab};

/// Mask the non-prompt positions of `x0` i.i.d. with probability `t`.
pub fn mask_after_prompt<R: Rng + ?Sized>(
    x0: &Sequence,
    t: f64,
    prompt_len: usize,
    vocab: Vocab,
    rng: &mut R,
) -> MaskedSequence {
    let mut z = MaskedSequence::from_clean(x0, vocab);
    for i in prompt_len..x0.len() {
        if rng.random::<f64>() < t {
            z.set(i, vocab.mask());
        }
    }
    z
}

/// One vanilla step: `batch` fresh draws `x0 ~ p`, `t ~ U[0,1]`,
/// `z = mask(x0, t)` (redrawing `t` until something is masked), summed
/// gradients, one SGD update. Returns the mean per-example loss.
pub fn vanilla_train_step<R: Rng + ?Sized>(
    model: &mut TabularMDM,
    dist: &TabularDistribution,
    batch: usize,
    prompt_len: usize,
    rng: &mut R,
) -> Result<f64> {
    if batch == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    if prompt_len >= dist.len() {
        return Err(Error::InvalidArgument(format!(
            "prompt length {prompt_len} leaves nothing to mask in length {}",
            dist.len()
        )));
    }
    let mut grads = Gradients::default();
    let mut total = 0.0;
    for _ in 0..batch {
        let x0 = dist.sample(rng);
        let z = loop {
            let t: f64 = rng.random();
            let z = mask_after_prompt(&x0, t, prompt_len, dist.vocab(), rng);
            if !z.is_complete() {
                break z;
            }
        };
        let table = model.forward(&z);
        total += model.accumulate_from_table(&table, &z, &x0, &mut grads)?;
    }
    model.sgd_update(&grads);
    Ok(total / batch as f64)
}

/// One teacher-forced chain in the streaming buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub x0: Sequence,
    pub z: MaskedSequence,
    pub stage: usize,
    /// Number of stages this chain was started with.
    pub k: usize,
}

impl ChainState {
    pub fn fresh(x0: Sequence, prompt_len: usize, k: usize, vocab: Vocab) -> Self {
        let z = MaskedSequence::with_prompt(&x0, prompt_len, vocab);
        Self { x0, z, stage: 0, k }
    }

    pub fn is_done(&self) -> bool {
        self.stage >= self.k
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PumaBuffer {
    pub chains: Vec<ChainState>,
    pub step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// Mean per-example loss; examples with nothing masked contribute 0.
    pub loss: f64,
    pub forwards: u64,
    pub refills: usize,
}

/// Streaming trainer: `B` chains advanced one state per step, scores for
/// the next reveal taken from the same forward pass as the loss.
#[derive(Debug, Clone)]
pub struct PumaTrainer {
    policy: PolicySpec,
    schedule: KSchedule,
    prompt_len: usize,
    buffer: PumaBuffer,
}

impl PumaTrainer {
    pub fn new<R: Rng + ?Sized>(
        dist: &TabularDistribution,
        policy: PolicySpec,
        schedule: KSchedule,
        batch: usize,
        prompt_len: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if batch == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if prompt_len >= dist.len() {
            return Err(Error::InvalidArgument(format!(
                "prompt length {prompt_len} leaves nothing to unmask in length {}",
                dist.len()
            )));
        }
        schedule.validate()?;
        policy.validate(dist.len() - prompt_len)?;
        let k = schedule.k_at(0);
        let chains = (0..batch)
            .map(|_| ChainState::fresh(dist.sample(rng), prompt_len, k, dist.vocab()))
            .collect();
        Ok(Self { policy, schedule, prompt_len, buffer: PumaBuffer { chains, step: 0 } })
    }

    pub fn buffer(&self) -> &PumaBuffer {
        &self.buffer
    }

    pub fn policy(&self) -> &PolicySpec {
        &self.policy
    }

    pub fn step<R: Rng + ?Sized>(
        &mut self,
        model: &mut TabularMDM,
        dist: &TabularDistribution,
        rng: &mut R,
    ) -> Result<StepStats> {
        let before = model.forward_count();
        let mut grads = Gradients::default();
        let mut total = 0.0;
        let mut tables = Vec::with_capacity(self.buffer.chains.len());
        for chain in &self.buffer.chains {
            let table = model.forward(&chain.z);
            total += model.accumulate_from_table(&table, &chain.z, &chain.x0, &mut grads)?;
            tables.push(table);
        }
        model.sgd_update(&grads);
        let forwards = model.forward_count() - before;

        let l_eff = dist.len() - self.prompt_len;
        let current_k = self.schedule.k_at(self.buffer.step);
        let mut refills = 0;
        for (chain, table) in self.buffer.chains.iter_mut().zip(&tables) {
            if chain.is_done() {
                *chain = ChainState::fresh(dist.sample(rng), self.prompt_len, current_k, dist.vocab());
                refills += 1;
                continue;
            }
            let unmasked = chain.z.unmasked_count() - self.prompt_len;
            let count = match self.policy.count {
                SelectCount::Fixed(c) => c,
                SelectCount::Staged => next_reveal_count(unmasked, chain.stage, chain.k, l_eff, rng)?,
            };
            let selected = self.policy.select(table, &chain.z, self.prompt_len, count, rng)?;
            let selected = self.policy.augment(selected, table, &chain.z, self.prompt_len);
            for i in selected {
                chain.z.set(i, chain.x0.get(i));
            }
            let unmasked = chain.z.unmasked_count() - self.prompt_len;
            chain.stage = advance_stage(chain.stage, unmasked, l_eff, chain.k);
        }
        self.buffer.step += 1;
        Ok(StepStats { loss: total / self.buffer.chains.len() as f64, forwards, refills })
    }
}
