//! Teacher-forced chains, idealized posterior-sampling inference, learned
//! model inference, trajectory records and the trajectory distance.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;

use crate::dist::TabularDistribution;
use crate::error::{Error, Result};
use crate::learner::{advance_stage, next_reveal_count};
use crate::oracle::{exact_posterior, Oracle, PosteriorTable, ScoreSource};
use crate::policy::{PolicySpec, SelectCount};
use crate::sequence::{MaskedSequence, Sequence, Token, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RevealEvent {
    /// Grid step that revealed the position, 1-based; prompt positions use 0.
    pub step: usize,
    pub index: usize,
    pub token: Token,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub k: usize,
    pub prompt_len: usize,
    /// `K + 1` states, `states[0]` the (prompted) fully masked start.
    pub states: Vec<MaskedSequence>,
    pub events: Vec<RevealEvent>,
}

impl Trajectory {
    fn start(z: MaskedSequence, k: usize, prompt_len: usize) -> Self {
        let events = z
            .unmasked_indices()
            .into_iter()
            .map(|i| RevealEvent { step: 0, index: i, token: z.get(i).unwrap_or_default() })
            .collect();
        Self { k, prompt_len, states: vec![z], events }
    }

    fn push(&mut self, next: MaskedSequence) {
        let step = self.states.len();
        let prev = self.states.last().expect("trajectory has a start state");
        for i in 0..next.len() {
            if prev.is_masked(i) && !next.is_masked(i) {
                self.events.push(RevealEvent { step, index: i, token: next.get(i).unwrap_or_default() });
            }
        }
        self.states.push(next);
    }

    pub fn len(&self) -> usize {
        self.states[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn final_state(&self) -> &MaskedSequence {
        self.states.last().expect("trajectory has a start state")
    }

    /// Header `L,K,prompt_len`, then one `step,index,token` line per event.
    pub fn to_text(&self) -> String {
        let mut out = format!("{},{},{}\n", self.len(), self.k, self.prompt_len);
        for e in &self.events {
            let _ = writeln!(out, "{},{},{}", e.step, e.index, e.token);
        }
        out
    }

    pub fn from_text(text: &str, vocab: Vocab) -> Result<Self> {
        let bad = |line: usize, m: &str| Error::Parse { line, message: m.to_string() };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad(1, "empty trajectory record"))?;
        let h: Vec<usize> = header
            .split(',')
            .map(|s| s.trim().parse::<usize>().map_err(|_| bad(1, "header must be `L,K,prompt_len`")))
            .collect::<Result<_>>()?;
        let [len, k, prompt_len] = h[..] else {
            return Err(bad(1, "header must be `L,K,prompt_len`"));
        };
        let mut events = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let lineno = n + 2;
            let f: Vec<usize> = line
                .split(',')
                .map(|s| s.trim().parse::<usize>().map_err(|_| bad(lineno, "expected `step,index,token`")))
                .collect::<Result<_>>()?;
            let [step, index, token] = f[..] else {
                return Err(bad(lineno, "expected `step,index,token`"));
            };
            if step > k || index >= len || !vocab.contains(token as Token) {
                return Err(bad(lineno, "event out of range"));
            }
            events.push(RevealEvent { step, index, token: token as Token });
        }
        let mut states = vec![MaskedSequence::fully_masked(len, vocab); k + 1];
        for e in &events {
            for s in states.iter_mut().skip(e.step) {
                if !s.is_masked(e.index) {
                    return Err(Error::Parse { line: 0, message: format!("position {} revealed twice", e.index) });
                }
                s.set(e.index, e.token);
            }
        }
        Ok(Self { k, prompt_len, states, events })
    }
}

/// Reveal step per position; prompt positions carry 0.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UnmaskStepMap(pub Vec<usize>);

pub fn unmask_step_map(traj: &Trajectory) -> Result<UnmaskStepMap> {
    if !traj.final_state().is_complete() {
        return Err(Error::Contract("trajectory does not end fully unmasked".into()));
    }
    let mut steps = vec![0; traj.len()];
    for e in &traj.events {
        steps[e.index] = e.step;
    }
    Ok(UnmaskStepMap(steps))
}

/// `(1/L) Σ_i |u1_i - u2_i|`.
pub fn trajectory_distance(u1: &UnmaskStepMap, u2: &UnmaskStepMap) -> Result<f64> {
    if u1.0.len() != u2.0.len() {
        return Err(Error::LengthMismatch { expected: u1.0.len(), got: u2.0.len() });
    }
    if u1.0.is_empty() {
        return Ok(0.0);
    }
    let total: usize = u1.0.iter().zip(&u2.0).map(|(a, b)| a.abs_diff(*b)).sum();
    Ok(total as f64 / u1.0.len() as f64)
}

/// Reveal the ground-truth tokens of `x0` at `selected`.
pub fn teacher_forced_step(x0: &Sequence, z: &MaskedSequence, selected: &[usize]) -> Result<MaskedSequence> {
    if !z.agrees_with(x0) {
        return Err(Error::Contract(format!("state {z} disagrees with {x0}")));
    }
    let mut next = z.clone();
    for &i in selected {
        next = next.apply_reveal(i, x0.get(i))?;
    }
    Ok(next)
}

/// How the learned sampler turns a categorical row into a token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Decoding {
    #[default]
    Sample,
    Greedy,
}

impl FromStr for Decoding {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sample" => Ok(Self::Sample),
            "greedy" => Ok(Self::Greedy),
            _ => Err(Error::InvalidArgument(format!("unknown decoding `{s}`"))),
        }
    }
}

impl Decoding {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Sample => "sample",
            Self::Greedy => "greedy",
        }
    }
}

/// Per-chain stage bookkeeping shared by every runner.
struct Stepper<'p> {
    policy: &'p PolicySpec,
    k: usize,
    prompt_len: usize,
    effective_len: usize,
    stage: usize,
}

impl<'p> Stepper<'p> {
    fn new(policy: &'p PolicySpec, k: usize, z: &MaskedSequence, prompt_len: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("K must be at least 1".into()));
        }
        if prompt_len > z.len() {
            return Err(Error::InvalidArgument(format!("prompt length {prompt_len} exceeds length {}", z.len())));
        }
        let effective_len = z.len() - prompt_len;
        policy.validate(effective_len)?;
        Ok(Self { policy, k, prompt_len, effective_len, stage: 0 })
    }

    fn unmasked(&self, z: &MaskedSequence) -> usize {
        (self.prompt_len..z.len()).filter(|&i| !z.is_masked(i)).count()
    }

    /// Positions to reveal this step, or `None` when nothing is left to do.
    fn choose<R: Rng + ?Sized>(
        &mut self,
        table: &PosteriorTable,
        z: &MaskedSequence,
        rng: &mut R,
    ) -> Result<Option<Vec<usize>>> {
        if self.policy.candidates(z, self.prompt_len).is_empty() {
            return Ok(None);
        }
        let count = match self.policy.count {
            SelectCount::Fixed(c) => c,
            SelectCount::Staged => {
                if self.stage >= self.k {
                    return Ok(None);
                }
                next_reveal_count(self.unmasked(z), self.stage, self.k, self.effective_len, rng)?
            }
        };
        let selected = self.policy.select(table, z, self.prompt_len, count, rng)?;
        Ok(Some(self.policy.augment(selected, table, z, self.prompt_len)))
    }

    fn advance(&mut self, z: &MaskedSequence) {
        self.stage = advance_stage(self.stage, self.unmasked(z), self.effective_len, self.k);
    }
}

/// Teacher-forced chain conditional on `x0`: policy scores from `source`,
/// ground-truth tokens revealed.
pub fn run_teacher_forced_chain<S: ScoreSource + ?Sized, R: Rng + ?Sized>(
    x0: &Sequence,
    vocab: Vocab,
    source: &S,
    policy: &PolicySpec,
    k: usize,
    prompt_len: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut z = MaskedSequence::with_prompt(x0, prompt_len, vocab);
    let mut stepper = Stepper::new(policy, k, &z, prompt_len)?;
    let mut traj = Trajectory::start(z.clone(), k, prompt_len);
    for _ in 0..k {
        let table = source.table(&z)?;
        if let Some(selected) = stepper.choose(&table, &z, rng)? {
            z = teacher_forced_step(x0, &z, &selected)?;
            stepper.advance(&z);
        }
        traj.push(z.clone());
    }
    Ok(traj)
}

/// Idealized inference: oracle scores, tokens drawn jointly from the exact
/// posterior (one position at a time, each conditioned on the earlier ones).
pub fn run_idealized_inference<R: Rng + ?Sized>(
    dist: &TabularDistribution,
    policy: &PolicySpec,
    k: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    run_idealized_from(dist, policy, k, MaskedSequence::fully_masked(dist.len(), dist.vocab()), 0, rng)
}

pub fn run_idealized_from<R: Rng + ?Sized>(
    dist: &TabularDistribution,
    policy: &PolicySpec,
    k: usize,
    start: MaskedSequence,
    prompt_len: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    let oracle = Oracle::new(dist);
    let mut z = start;
    let mut stepper = Stepper::new(policy, k, &z, prompt_len)?;
    let mut traj = Trajectory::start(z.clone(), k, prompt_len);
    for _ in 0..k {
        let table = oracle.table(&z)?;
        if let Some(selected) = stepper.choose(&table, &z, rng)? {
            for i in selected {
                let v = exact_posterior(dist, &z, i)?.sample(rng);
                z = z.apply_reveal(i, v)?;
            }
            stepper.advance(&z);
        }
        traj.push(z.clone());
    }
    Ok(traj)
}

/// Inference driven by an arbitrary score source: every selected position
/// is filled independently from its row of the same table. Steps continue
/// past `K` when a fixed count leaves masks behind, so the result is clean.
pub fn run_inference<S: ScoreSource + ?Sized, R: Rng + ?Sized>(
    source: &S,
    policy: &PolicySpec,
    k: usize,
    start: MaskedSequence,
    prompt_len: usize,
    decoding: Decoding,
    rng: &mut R,
) -> Result<Sequence> {
    let mut z = start;
    let mut stepper = Stepper::new(policy, k, &z, prompt_len)?;
    let mut steps = 0;
    while !z.is_complete() {
        let table = source.table(&z)?;
        let selected = match stepper.choose(&table, &z, rng)? {
            Some(s) => s,
            // Staged chains always finish within K; this only covers the
            // fixed-count case and masked prompt positions.
            None => z.masked_indices(),
        };
        for i in selected {
            let row = table
                .get(i)
                .ok_or_else(|| Error::Contract(format!("score table has no row for position {i}")))?;
            let v = match decoding {
                Decoding::Sample => row.sample(rng),
                Decoding::Greedy => row.argmax(),
            };
            z.set(i, v);
        }
        stepper.advance(&z);
        steps += 1;
        if steps > k + z.len() {
            return Err(Error::Contract("inference failed to terminate".into()));
        }
    }
    Ok(z.to_clean().expect("loop exits on a complete state"))
}

/// Generate with a learned model starting from `prompt` (the first
/// `prompt.len()` tokens); returns the clean sequence.
#[allow(clippy::too_many_arguments)]
pub fn run_learned_inference<S: ScoreSource + ?Sized, R: Rng + ?Sized>(
    model: &S,
    len: usize,
    vocab: Vocab,
    policy: &PolicySpec,
    k: usize,
    prompt: &[Token],
    decoding: Decoding,
    rng: &mut R,
) -> Result<Sequence> {
    if prompt.len() > len {
        return Err(Error::LengthMismatch { expected: len, got: prompt.len() });
    }
    let mut entries: Vec<Option<Token>> = prompt.iter().map(|&t| Some(t)).collect();
    entries.resize(len, None);
    let start = MaskedSequence::from_options(&entries, vocab)?;
    run_inference(model, policy, k, start, prompt.len(), decoding, rng)
}
