//! Tabular softmax model: one logit row per (context, masked position),
//! trained with exact softmax cross-entropy gradients and plain SGD.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::oracle::{Categorical, PosteriorTable, ScoreSource};
use crate::sequence::{MaskedSequence, Sequence, Vocab};

/// Accumulated gradient rows keyed by context, flat `L × |V|` per context.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    rows: BTreeMap<u64, Vec<f64>>,
}

impl Gradients {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn contexts(&self) -> usize {
        self.rows.len()
    }

    /// Gradient row for `(context, position)`, if any was accumulated.
    pub fn row(&self, key: u64, position: usize, vocab: usize) -> Option<&[f64]> {
        self.rows
            .get(&key)
            .map(|r| &r[position * vocab..(position + 1) * vocab])
    }

    pub fn add_row(&mut self, key: u64, len: usize, vocab: usize, position: usize, row: &[f64]) {
        let entry = self.rows.entry(key).or_insert_with(|| vec![0.0; len * vocab]);
        for (e, g) in entry[position * vocab..(position + 1) * vocab].iter_mut().zip(row) {
            *e += g;
        }
    }

    pub fn merge(&mut self, other: &Gradients) {
        for (key, row) in &other.rows {
            let entry = self.rows.entry(*key).or_insert_with(|| vec![0.0; row.len()]);
            for (e, g) in entry.iter_mut().zip(row) {
                *e += g;
            }
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Per-context logit table. Unvisited contexts read as zero logits.
#[derive(Debug)]
pub struct TabularMDM {
    len: usize,
    vocab: Vocab,
    learning_rate: f64,
    logits: BTreeMap<u64, Vec<f64>>,
    forwards: AtomicU64,
}

impl Clone for TabularMDM {
    fn clone(&self) -> Self {
        Self {
            len: self.len,
            vocab: self.vocab,
            learning_rate: self.learning_rate,
            logits: self.logits.clone(),
            forwards: AtomicU64::new(0),
        }
    }
}

impl PartialEq for TabularMDM {
    fn eq(&self, other: &Self) -> bool {
        self.len == other.len
            && self.vocab == other.vocab
            && self.learning_rate.to_bits() == other.learning_rate.to_bits()
            && self.logits.len() == other.logits.len()
            && self.logits.iter().zip(&other.logits).all(|((ka, a), (kb, b))| {
                ka == kb && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

impl TabularMDM {
    pub fn new(len: usize, vocab: Vocab, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {learning_rate} must be positive")));
        }
        if len == 0 || len > vocab.max_key_len() {
            return Err(Error::InvalidArgument(format!("unsupported sequence length {len}")));
        }
        Ok(Self { len, vocab, learning_rate, logits: BTreeMap::new(), forwards: AtomicU64::new(0) })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// Number of stored contexts.
    pub fn contexts(&self) -> usize {
        self.logits.len()
    }

    /// Number of forward passes since construction (or the last reset).
    pub fn forward_count(&self) -> u64 {
        self.forwards.load(Ordering::Relaxed)
    }

    pub fn reset_forward_count(&self) {
        self.forwards.store(0, Ordering::Relaxed);
    }

    fn width(&self) -> usize {
        self.vocab.size() as usize
    }

    /// Logits for `(z, i)`; zeros when `z` has never been updated.
    pub fn logits(&self, z: &MaskedSequence, i: usize) -> Vec<f64> {
        let w = self.width();
        match self.logits.get(&z.context_key()) {
            Some(row) => row[i * w..(i + 1) * w].to_vec(),
            None => vec![0.0; w],
        }
    }

    /// Overwrite the logits for `(z, i)`.
    pub fn set_logits(&mut self, z: &MaskedSequence, i: usize, row: &[f64]) -> Result<()> {
        let w = self.width();
        if row.len() != w {
            return Err(Error::LengthMismatch { expected: w, got: row.len() });
        }
        if !z.is_masked(i) {
            return Err(Error::Contract(format!("position {i} of {z} is not masked")));
        }
        let len = self.len;
        let entry = self.logits.entry(z.context_key()).or_insert_with(|| vec![0.0; len * w]);
        entry[i * w..(i + 1) * w].copy_from_slice(row);
        Ok(())
    }

    /// Softmax rows for every masked position of `z`.
    pub fn forward(&self, z: &MaskedSequence) -> PosteriorTable {
        self.forwards.fetch_add(1, Ordering::Relaxed);
        let w = self.width();
        let stored = self.logits.get(&z.context_key());
        let rows = z
            .masked_indices()
            .into_iter()
            .map(|i| {
                let probs = match stored {
                    Some(row) => softmax(&row[i * w..(i + 1) * w]),
                    None => vec![1.0 / w as f64; w],
                };
                (i, Categorical::from_raw(probs))
            })
            .collect();
        PosteriorTable::new(rows)
    }

    /// Loss and gradient for one `(z, x0)` pair.
    pub fn loss_and_grad(&self, z: &MaskedSequence, x0: &Sequence) -> Result<(f64, Gradients)> {
        let table = self.forward(z);
        let mut grads = Gradients::default();
        let loss = self.accumulate_from_table(&table, z, x0, &mut grads)?;
        Ok((loss, grads))
    }

    /// Mean cross-entropy over masked positions computed from an existing
    /// forward table; gradient rows `(softmax - onehot) / |msk|` are added
    /// to `grads`. Returns 0 when nothing is masked.
    pub fn accumulate_from_table(
        &self,
        table: &PosteriorTable,
        z: &MaskedSequence,
        x0: &Sequence,
        grads: &mut Gradients,
    ) -> Result<f64> {
        if !z.agrees_with(x0) {
            return Err(Error::Contract(format!("context {z} disagrees with target {x0}")));
        }
        if table.is_empty() {
            return Ok(0.0);
        }
        let w = self.width();
        let scale = 1.0 / table.len() as f64;
        let key = z.context_key();
        let mut loss = 0.0;
        let mut row = vec![0.0; w];
        for (i, c) in table.rows() {
            let target = x0.get(*i) as usize;
            loss -= c.probs()[target].ln();
            for (g, &p) in row.iter_mut().zip(c.probs()) {
                *g = p * scale;
            }
            row[target] -= scale;
            grads.add_row(key, self.len, w, *i, &row);
        }
        Ok(loss * scale)
    }

    /// `logits -= lr · grad` on touched rows.
    pub fn sgd_update(&mut self, grads: &Gradients) {
        let lr = self.learning_rate;
        for (key, g) in &grads.rows {
            let entry = self.logits.entry(*key).or_insert_with(|| vec![0.0; g.len()]);
            for (l, d) in entry.iter_mut().zip(g) {
                *l -= lr * d;
            }
        }
    }

    /// Text checkpoint: header `len,vocab,lr`, then one line
    /// `key,position,logit_0,..,logit_{V-1}` per masked position of every
    /// stored context.
    pub fn to_text(&self) -> String {
        let mut out = format!("{},{},{}\n", self.len, self.vocab.size(), self.learning_rate);
        let w = self.width();
        for (key, row) in &self.logits {
            let z = MaskedSequence::from_context_key(*key, self.len, self.vocab)
                .expect("stored keys decode");
            for i in z.masked_indices() {
                let _ = write!(out, "{key},{i}");
                for l in &row[i * w..(i + 1) * w] {
                    let _ = write!(out, ",{l}");
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse { line: 1, message: "empty checkpoint".into() })?;
        let fields: Vec<&str> = header.split(',').collect();
        let bad = |line: usize, m: &str| Error::Parse { line, message: m.to_string() };
        if fields.len() != 3 {
            return Err(bad(1, "header must be `len,vocab,lr`"));
        }
        let len: usize = fields[0].parse().map_err(|_| bad(1, "bad length"))?;
        let vocab = Vocab::new(fields[1].parse().map_err(|_| bad(1, "bad vocab"))?)?;
        let lr: f64 = fields[2].parse().map_err(|_| bad(1, "bad learning rate"))?;
        let mut model = Self::new(len, vocab, lr)?;
        let w = vocab.size() as usize;
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let lineno = n + 1;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 2 + w {
                return Err(bad(lineno, "wrong number of fields"));
            }
            let key: u64 = f[0].parse().map_err(|_| bad(lineno, "bad context key"))?;
            let pos: usize = f[1].parse().map_err(|_| bad(lineno, "bad position"))?;
            let z = MaskedSequence::from_context_key(key, len, vocab)
                .map_err(|e| bad(lineno, &e.to_string()))?;
            if pos >= len || !z.is_masked(pos) {
                return Err(bad(lineno, "position is not masked in its context"));
            }
            let row: Vec<f64> = f[2..]
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| bad(lineno, "bad logit")))
                .collect::<Result<_>>()?;
            model.set_logits(&z, pos, &row)?;
        }
        Ok(model)
    }
}

impl ScoreSource for TabularMDM {
    fn table(&self, z: &MaskedSequence) -> Result<PosteriorTable> {
        Ok(self.forward(z))
    }
}
