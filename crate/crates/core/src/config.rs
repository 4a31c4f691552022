//! Flat `key = value` experiment configs with `[section]` headers.
//!
//! Top-level keys: `command`, `seed`, `output_dir`. The sections a command
//! accepts are listed in [`Command::sections`]; any other section or key is
//! an error. [`ExperimentConfig::to_text`] writes a config that parses back
//! to an equal value.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::analysis::{ComplexityConfig, ForwardKind, MaskingLaw, OracleOrder};
use crate::chains::Decoding;
use crate::dist::ZmSpec;
use crate::error::{Error, Result};
use crate::experiments::{DistSpec, Method, RunConfig};
use crate::learner::KSchedule;
use crate::policy::{PolicyKind, PolicySpec, SelectCount};
use crate::sequence::Token;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    VerifyMarginal,
    VerifyMinimizer,
    SampleComplexity,
    Train,
    Compare,
    Plot,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::VerifyMarginal,
        Command::VerifyMinimizer,
        Command::SampleComplexity,
        Command::Train,
        Command::Compare,
        Command::Plot,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::VerifyMarginal => "verify-marginal",
            Self::VerifyMinimizer => "verify-minimizer",
            Self::SampleComplexity => "sample-complexity",
            Self::Train => "train",
            Self::Compare => "compare",
            Self::Plot => "plot",
        }
    }

    pub fn sections(&self) -> &'static [&'static str] {
        match self {
            Self::VerifyMarginal => &["dist", "policy", "verify"],
            Self::VerifyMinimizer => &["dist", "policy", "verify"],
            Self::SampleComplexity => &["complexity"],
            Self::Train => &["dist", "policy", "eval_policy", "train"],
            Self::Compare => &["dist", "policy", "eval_policy", "train", "compare"],
            Self::Plot => &["plot"],
        }
    }
}

impl FromStr for Command {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown command `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarginalMode {
    Exact,
    MonteCarlo { runs: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YScale {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub inputs: Vec<PathBuf>,
    /// Series names for inputs without a `method` column; file stems if empty.
    pub labels: Vec<String>,
    pub x: String,
    pub y: String,
    pub yscale: YScale,
    pub title: String,
    /// File name inside the output directory.
    pub output: String,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Params {
    VerifyMarginal { dist: DistSpec, policy: PolicySpec, k: usize, mode: MarginalMode },
    VerifyMinimizer { dist: DistSpec, policy: PolicySpec, k: usize, forward: ForwardKind },
    SampleComplexity(ComplexityConfig),
    Train(RunConfig),
    Compare { a: RunConfig, b: RunConfig, threshold: f64, seeds: usize },
    Plot(PlotSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub output_dir: Option<PathBuf>,
    pub params: Params,
}

pub const DEFAULT_K: usize = 4;

impl ExperimentConfig {
    pub fn command(&self) -> Command {
        match self.params {
            Params::VerifyMarginal { .. } => Command::VerifyMarginal,
            Params::VerifyMinimizer { .. } => Command::VerifyMinimizer,
            Params::SampleComplexity(_) => Command::SampleComplexity,
            Params::Train(_) => Command::Train,
            Params::Compare { .. } => Command::Compare,
            Params::Plot(_) => Command::Plot,
        }
    }

    /// Replace the master seed everywhere it was copied.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        match &mut self.params {
            Params::SampleComplexity(c) => c.master_seed = seed,
            Params::Train(r) => r.seed = seed,
            Params::Compare { a, b, .. } => {
                a.seed = seed;
                b.seed = seed;
            }
            _ => {}
        }
        self
    }

    /// Seeds of a compare run: `master_seed + i`.
    pub fn compare_seeds(&self) -> Vec<u64> {
        match &self.params {
            Params::Compare { seeds, .. } => (0..*seeds as u64).map(|i| self.master_seed.wrapping_add(i)).collect(),
            _ => Vec::new(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "command = {}", self.command().name());
        let _ = writeln!(out, "seed = {}", self.master_seed);
        if let Some(dir) = &self.output_dir {
            let _ = writeln!(out, "output_dir = {}", dir.display());
        }
        match &self.params {
            Params::VerifyMarginal { dist, policy, k, mode } => {
                write_dist(&mut out, dist);
                write_policy(&mut out, "policy", policy);
                let _ = writeln!(out, "\n[verify]\nk = {k}");
                match mode {
                    MarginalMode::Exact => out.push_str("mode = exact\n"),
                    MarginalMode::MonteCarlo { runs } => {
                        let _ = writeln!(out, "mode = monte_carlo\nruns = {runs}");
                    }
                }
            }
            Params::VerifyMinimizer { dist, policy, k, forward } => {
                write_dist(&mut out, dist);
                write_policy(&mut out, "policy", policy);
                let _ = writeln!(out, "\n[verify]\nk = {k}\nforward = {}", forward.name());
            }
            Params::SampleComplexity(c) => {
                let _ = writeln!(out, "\n[complexity]");
                let _ = writeln!(out, "d_values = {}", join(&c.d_values));
                let _ = writeln!(out, "m = {}\neta = {}", c.m, c.eta);
                let _ = match c.masking {
                    MaskingLaw::Fixed(q) => writeln!(out, "masking = {q}"),
                    MaskingLaw::UniformT => writeln!(out, "masking = uniform"),
                };
                let _ = writeln!(out, "delta = {}\nseeds = {}\ntrials = {}", c.delta, c.seeds, c.trials);
                let _ = writeln!(out, "sample_budget = {}\ntrajectory_budget = {}", c.sample_budget, c.trajectory_budget);
                let _ = writeln!(out, "order = {}", order_name(c.order));
            }
            Params::Train(r) => {
                write_run(&mut out, r, true);
            }
            Params::Compare { a, b, threshold, seeds } => {
                write_run(&mut out, a, false);
                let _ = writeln!(out, "\n[compare]\nmethod_a = {}\nmethod_b = {}", a.method, b.method);
                let _ = writeln!(out, "threshold = {threshold}\nseeds = {seeds}");
            }
            Params::Plot(p) => {
                let _ = writeln!(out, "\n[plot]");
                let inputs: Vec<String> = p.inputs.iter().map(|i| i.display().to_string()).collect();
                let _ = writeln!(out, "inputs = {}", inputs.join(", "));
                if !p.labels.is_empty() {
                    let _ = writeln!(out, "labels = {}", p.labels.join(", "));
                }
                let _ = writeln!(out, "x = {}\ny = {}", p.x, p.y);
                let _ = writeln!(out, "yscale = {}", if p.yscale == YScale::Log { "log" } else { "linear" });
                if !p.title.is_empty() {
                    let _ = writeln!(out, "title = {}", p.title);
                }
                let _ = writeln!(out, "output = {}", p.output);
            }
        }
        out
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

fn order_name(o: OracleOrder) -> &'static str {
    match o {
        OracleOrder::Permutation => "permutation",
        OracleOrder::ConfidencePolicy => "confidence_policy",
    }
}

fn write_dist(out: &mut String, dist: &DistSpec) {
    out.push_str("\n[dist]\n");
    match dist {
        DistSpec::Zm(s) => {
            let _ = writeln!(out, "kind = zm\nm = {}\nd = {}\neta = {}\ntheta = {}", s.m, s.d, s.eta, s.theta);
            let _ = writeln!(out, "permutation = {}", join(&s.permutation));
        }
        DistSpec::Table { len, vocab, support } => {
            let _ = writeln!(out, "kind = table\nlen = {len}\nvocab = {vocab}");
            let items: Vec<String> = support
                .iter()
                .map(|(x, p)| format!("{} : {p}", x.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")))
                .collect();
            let _ = writeln!(out, "support = {}", items.join("; "));
        }
    }
}

fn write_policy(out: &mut String, section: &str, p: &PolicySpec) {
    let _ = writeln!(out, "\n[{section}]\nkind = {}", p.kind);
    let _ = match p.count {
        SelectCount::Fixed(c) => writeln!(out, "count = {c}"),
        SelectCount::Staged => writeln!(out, "count = staged"),
    };
    if let Some(t) = p.threshold {
        let _ = writeln!(out, "threshold = {t}");
    }
    if let Some(b) = p.block_size {
        let _ = writeln!(out, "block_size = {b}");
    }
}

fn write_run(out: &mut String, r: &RunConfig, with_method: bool) {
    write_dist(out, &r.dist);
    write_policy(out, "policy", &r.policy);
    write_policy(out, "eval_policy", &r.eval_policy);
    out.push_str("\n[train]\n");
    if with_method {
        let _ = writeln!(out, "method = {}", r.method);
    }
    let _ = writeln!(out, "batch = {}\nlr = {}", r.batch, r.learning_rate);
    let _ = writeln!(out, "total_steps = {}\neval_every = {}", r.total_steps, r.eval_every);
    let _ = writeln!(out, "eval_k = {}\ndecoding = {}", r.eval_k, r.decoding.name());
    let _ = writeln!(out, "prompt_len = {}\nprobes = {}", r.prompt_len, r.probes);
    let s = r.schedule;
    let _ = writeln!(out, "k0 = {}\nk_increment = {}\nk_period = {}\nk_max = {}", s.k0, s.increment, s.period, s.k_max);
}

/// Raw `(section, key) → (value, line)` entries with consumption tracking.
struct Document {
    entries: BTreeMap<(String, String), (String, usize)>,
    errors: Vec<String>,
}

impl Document {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Parse { line: line_no, message: format!("unterminated section header `{line}`") })?
                    .trim();
                if name.is_empty() {
                    return Err(Error::Parse { line: line_no, message: "empty section name".into() });
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: line_no, message: format!("expected `key = value`, got `{line}`") })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Parse { line: line_no, message: "missing key".into() });
            }
            let full = (section.clone(), key.to_string());
            if let Some((_, first)) = entries.get(&full) {
                return Err(Error::Parse { line: line_no, message: format!("duplicate key `{key}` (first set on line {first})") });
            }
            entries.insert(full, (value.trim().to_string(), line_no));
        }
        Ok(Self { entries, errors: Vec::new() })
    }

    fn raw(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        self.entries.remove(&(section.to_string(), key.to_string()))
    }

    /// Parse `section.key` with `f`, recording failures and falling back
    /// to `default` so later checks still run.
    fn get<T>(&mut self, section: &str, key: &str, default: T, f: impl Fn(&str) -> std::result::Result<T, String>) -> T {
        match self.raw(section, key) {
            None => default,
            Some((v, line)) => match f(&v) {
                Ok(x) => x,
                Err(e) => {
                    self.errors.push(format!("line {line}: `{key}`: {e}"));
                    default
                }
            },
        }
    }

    fn num<T: FromStr>(&mut self, section: &str, key: &str, default: T) -> T
    where
        T::Err: std::fmt::Display,
    {
        self.get(section, key, default, |v| v.parse::<T>().map_err(|e| format!("`{v}`: {e}")))
    }

    fn check(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        if !ok {
            self.errors.push(msg());
        }
    }

    fn finish(mut self) -> Result<()> {
        for ((section, key), (_, line)) in std::mem::take(&mut self.entries) {
            let name = if section.is_empty() { key } else { format!("{section}.{key}") };
            self.errors.push(format!("line {line}: unknown key `{name}`"));
        }
        if self.errors.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(self.errors.join("\n")))
        }
    }
}

fn list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| format!("`{s}`: {e}")))
        .collect()
}

fn parse_support(v: &str) -> std::result::Result<Vec<(Vec<Token>, f64)>, String> {
    v.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (xs, p) = item.split_once(':').ok_or_else(|| format!("support entry `{item}` needs `tokens : prob`"))?;
            let x = xs
                .split_whitespace()
                .map(|t| t.parse::<Token>().map_err(|e| format!("`{t}`: {e}")))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let p = p.trim().parse::<f64>().map_err(|e| format!("`{}`: {e}", p.trim()))?;
            Ok((x, p))
        })
        .collect()
}

fn parse_dist(doc: &mut Document) -> DistSpec {
    let s = "dist";
    let kind = doc.get(s, "kind", "zm".to_string(), |v| Ok(v.to_string()));
    match kind.as_str() {
        "zm" => {
            let m = doc.num(s, "m", 4u32);
            let d = doc.num(s, "d", 2usize);
            let eta = doc.num(s, "eta", 0.1f64);
            let theta = doc.num(s, "theta", 0u32);
            let mut spec = ZmSpec::new(m, d, eta, theta);
            spec.permutation = doc.get(s, "permutation", spec.permutation.clone(), list::<usize>);
            if let Err(e) = spec.validate() {
                doc.errors.push(format!("dist: {e}"));
            }
            DistSpec::Zm(spec)
        }
        "two_point" | "three_point" => {
            let d = if kind == "two_point" { crate::dist::two_point() } else { crate::dist::three_point_asymmetric() };
            table_of(&d)
        }
        "point_mass" => {
            let vocab = doc.num(s, "vocab", 2u32);
            let point = doc.get(s, "point", vec![0, 0], list::<Token>);
            DistSpec::Table { len: point.len(), vocab, support: vec![(point, 1.0)] }
        }
        "table" => {
            let len = doc.num(s, "len", 0usize);
            let vocab = doc.num(s, "vocab", 2u32);
            let support = doc.get(s, "support", Vec::new(), parse_support);
            DistSpec::Table { len, vocab, support }
        }
        other => {
            doc.errors.push(format!("dist: unknown kind `{other}` (zm, two_point, three_point, point_mass, table)"));
            DistSpec::Zm(ZmSpec::new(4, 2, 0.1, 0))
        }
    }
}

fn table_of(d: &crate::dist::TabularDistribution) -> DistSpec {
    DistSpec::Table {
        len: d.len(),
        vocab: d.vocab().size(),
        support: d.enumerate().iter().map(|(x, p)| (x.tokens().to_vec(), *p)).collect(),
    }
}

fn parse_policy(doc: &mut Document, section: &str, default: PolicySpec) -> PolicySpec {
    let kind = doc.get(section, "kind", default.kind, |v| PolicyKind::from_str(v).map_err(|e| e.to_string()));
    let count = doc.get(section, "count", default.count, |v| match v {
        "staged" => Ok(SelectCount::Staged),
        n => n.parse::<usize>().map(SelectCount::Fixed).map_err(|_| format!("`{n}` is neither a count nor `staged`")),
    });
    let threshold = doc.get(section, "threshold", default.threshold, |v| match v {
        "none" => Ok(None),
        t => t.parse::<f64>().map(Some).map_err(|e| format!("`{t}`: {e}")),
    });
    let block_size = doc.get(section, "block_size", default.block_size, |v| match v {
        "none" => Ok(None),
        b => b.parse::<usize>().map(Some).map_err(|e| format!("`{b}`: {e}")),
    });
    if let Some(t) = threshold {
        doc.check(t > 0.0 && t <= 1.0, || format!("{section}.threshold {t} is outside (0, 1]"));
    }
    doc.check(count != SelectCount::Fixed(0), || format!("{section}.count must be at least 1"));
    PolicySpec { kind, count, threshold, block_size }
}

fn dist_len(dist: &DistSpec) -> Option<usize> {
    dist.build().ok().map(|d| d.len())
}

fn check_dist(doc: &mut Document, dist: &DistSpec) {
    if let (Err(e), DistSpec::Table { .. }) = (dist.build(), dist) {
        doc.errors.push(format!("dist: {e}"));
    }
}

fn parse_run(doc: &mut Document, seed: u64, method_key: bool) -> RunConfig {
    let dist = parse_dist(doc);
    check_dist(doc, &dist);
    let len = dist_len(&dist).unwrap_or(1);
    let s = "train";
    let policy = parse_policy(doc, "policy", PolicySpec::default().with_count(SelectCount::Staged));
    let eval_policy = parse_policy(doc, "eval_policy", PolicySpec::default());
    let method = if method_key {
        doc.get(s, "method", Method::Puma, |v| Method::from_str(v).map_err(|e| e.to_string()))
    } else {
        Method::Puma
    };
    let decoding = doc.get(s, "decoding", Decoding::Greedy, |v| Decoding::from_str(v).map_err(|e| e.to_string()));
    let k0 = doc.num(s, "k0", len);
    let schedule = KSchedule {
        k0,
        increment: doc.num(s, "k_increment", 0usize),
        period: doc.num(s, "k_period", 1u64),
        k_max: doc.num(s, "k_max", k0),
    };
    let cfg = RunConfig {
        dist,
        method,
        policy,
        schedule,
        batch: doc.num(s, "batch", 32usize),
        learning_rate: doc.num(s, "lr", 0.1f64),
        total_steps: doc.num(s, "total_steps", 200u64),
        eval_every: doc.num(s, "eval_every", 5u64),
        eval_policy,
        eval_k: doc.num(s, "eval_k", len),
        decoding,
        prompt_len: doc.num(s, "prompt_len", 0usize),
        probes: doc.num(s, "probes", 100usize),
        seed,
    };
    if let Err(Error::InvalidArgument(e)) = cfg.validate() {
        doc.errors.extend(e.split("; ").map(|m| format!("train: {m}")));
    }
    cfg
}

fn resolve(base: Option<&Path>, p: &str) -> PathBuf {
    let p = PathBuf::from(p);
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p,
    }
}

/// Parse config text; relative paths resolve against `base_dir`.
pub fn parse_config_str(text: &str, base_dir: Option<&Path>) -> Result<ExperimentConfig> {
    let mut doc = Document::parse(text)?;
    let Some((cmd, line)) = doc.raw("", "command") else {
        return Err(Error::InvalidArgument("missing `command`".into()));
    };
    let command = Command::from_str(&cmd).map_err(|e| Error::Parse { line, message: e.to_string() })?;
    let master_seed = doc.num("", "seed", 0u64);
    let output_dir = doc.get("", "output_dir", None, |v| Ok(Some(resolve(base_dir, v))));
    let sections: Vec<String> = doc.entries.keys().map(|(s, _)| s.clone()).filter(|s| !s.is_empty()).collect();
    for s in sections {
        if !command.sections().contains(&s.as_str()) {
            let keys: Vec<(String, String)> = doc.entries.keys().filter(|(x, _)| *x == s).cloned().collect();
            let line = keys.iter().filter_map(|k| doc.entries.get(k).map(|e| e.1)).min().unwrap_or(0);
            for k in keys {
                doc.entries.remove(&k);
            }
            doc.errors.push(format!("line {line}: section `[{s}]` is not used by `{}`", command.name()));
        }
    }

    let params = match command {
        Command::VerifyMarginal | Command::VerifyMinimizer => {
            let dist = parse_dist(&mut doc);
            check_dist(&mut doc, &dist);
            let policy = parse_policy(&mut doc, "policy", PolicySpec::default());
            let k = doc.num("verify", "k", DEFAULT_K);
            doc.check(k >= 1, || "verify.k must be at least 1".into());
            if let Some(len) = dist_len(&dist) {
                if let Err(e) = policy.validate(len) {
                    doc.errors.push(format!("policy: {e}"));
                }
            }
            if command == Command::VerifyMarginal {
                let mode = doc.get("verify", "mode", "exact".to_string(), |v| Ok(v.to_string()));
                let mode = match mode.as_str() {
                    "exact" => MarginalMode::Exact,
                    "monte_carlo" => {
                        let runs = doc.num("verify", "runs", 10_000usize);
                        doc.check(runs > 0, || "verify.runs must be positive".into());
                        MarginalMode::MonteCarlo { runs }
                    }
                    other => {
                        doc.errors.push(format!("verify.mode `{other}` is neither `exact` nor `monte_carlo`"));
                        MarginalMode::Exact
                    }
                };
                Params::VerifyMarginal { dist, policy, k, mode }
            } else {
                let forward = doc.get("verify", "forward", ForwardKind::TeacherForced, |v| {
                    ForwardKind::from_str(v).map_err(|e| e.to_string())
                });
                Params::VerifyMinimizer { dist, policy, k, forward }
            }
        }
        Command::SampleComplexity => {
            let s = "complexity";
            let d = ComplexityConfig::default();
            let cfg = ComplexityConfig {
                d_values: doc.get(s, "d_values", d.d_values, list::<usize>),
                m: doc.num(s, "m", d.m),
                eta: doc.num(s, "eta", d.eta),
                masking: doc.get(s, "masking", d.masking, |v| match v {
                    "uniform" => Ok(MaskingLaw::UniformT),
                    q => q.parse::<f64>().map(MaskingLaw::Fixed).map_err(|_| format!("`{q}` is neither a probability nor `uniform`")),
                }),
                delta: doc.num(s, "delta", d.delta),
                seeds: doc.num(s, "seeds", d.seeds),
                trials: doc.num(s, "trials", d.trials),
                sample_budget: doc.num(s, "sample_budget", d.sample_budget),
                trajectory_budget: doc.num(s, "trajectory_budget", d.trajectory_budget),
                order: doc.get(s, "order", d.order, |v| match v {
                    "permutation" => Ok(OracleOrder::Permutation),
                    "confidence_policy" => Ok(OracleOrder::ConfidencePolicy),
                    o => Err(format!("unknown order `{o}`")),
                }),
                master_seed,
            };
            if let Err(Error::InvalidArgument(e)) = cfg.validate() {
                doc.errors.extend(e.split("; ").map(|m| format!("complexity: {m}")));
            }
            Params::SampleComplexity(cfg)
        }
        Command::Train => Params::Train(parse_run(&mut doc, master_seed, true)),
        Command::Compare => {
            let base = parse_run(&mut doc, master_seed, false);
            let method = |v: &str| Method::from_str(v).map_err(|e| e.to_string());
            let a = RunConfig { method: doc.get("compare", "method_a", Method::Vanilla, method), ..base.clone() };
            let b = RunConfig { method: doc.get("compare", "method_b", Method::Puma, method), ..base };
            let threshold = doc.num("compare", "threshold", 0.8f64);
            doc.check((0.0..=1.0).contains(&threshold), || format!("compare.threshold {threshold} is outside [0, 1]"));
            let seeds = doc.num("compare", "seeds", 5usize);
            doc.check(seeds > 0, || "compare.seeds must be positive".into());
            Params::Compare { a, b, threshold, seeds }
        }
        Command::Plot => {
            let s = "plot";
            let inputs = doc.get(s, "inputs", Vec::new(), |v| {
                Ok(v.split(',').map(str::trim).filter(|p| !p.is_empty()).map(|p| resolve(base_dir, p)).collect())
            });
            doc.check(!inputs.is_empty(), || "plot.inputs must name at least one CSV".into());
            for p in &inputs {
                doc.check(p.is_file(), || format!("plot input {} does not exist", p.display()));
            }
            let labels: Vec<String> = doc.get(s, "labels", Vec::new(), |v| {
                Ok(v.split(',').map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect())
            });
            doc.check(labels.is_empty() || labels.len() == inputs.len(), || {
                format!("plot.labels has {} entries for {} inputs", labels.len(), inputs.len())
            });
            let spec = PlotSpec {
                inputs,
                labels,
                x: doc.get(s, "x", "step".to_string(), |v| Ok(v.to_string())),
                y: doc.get(s, "y", "gen_accuracy".to_string(), |v| Ok(v.to_string())),
                yscale: doc.get(s, "yscale", YScale::Linear, |v| match v {
                    "linear" => Ok(YScale::Linear),
                    "log" => Ok(YScale::Log),
                    o => Err(format!("`{o}` is neither `linear` nor `log`")),
                }),
                title: doc.get(s, "title", String::new(), |v| Ok(v.to_string())),
                output: doc.get(s, "output", "plot.svg".to_string(), |v| Ok(v.to_string())),
            };
            doc.check(
                !spec.output.is_empty() && !spec.output.contains(['/', '\\']),
                || format!("plot.output `{}` must be a plain file name", spec.output),
            );
            Params::Plot(spec)
        }
    };
    doc.finish()?;
    Ok(ExperimentConfig { master_seed, output_dir, params })
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config_str(&text, path.parent())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        parse_config_str(text, None)
    }

    #[test]
    fn minimal_verify_marginal_defaults() {
        let cfg = parse("command = verify-marginal\n").unwrap();
        match cfg.params {
            Params::VerifyMarginal { k, policy, mode, dist } => {
                assert_eq!(k, 4);
                assert_eq!(policy, PolicySpec::new(PolicyKind::MaxProb));
                assert_eq!(mode, MarginalMode::Exact);
                assert_eq!(dist, DistSpec::Zm(ZmSpec::new(4, 2, 0.1, 0)));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(cfg.master_seed, 0);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse("command = train\nfoo=1\n").unwrap_err().to_string();
        assert!(err.contains("`foo`") && err.contains("line 2"), "{err}");
        let err = parse("command = train\n[train]\nbatch = 4\nfoo = 1\n").unwrap_err().to_string();
        assert!(err.contains("train.foo"), "{err}");
    }

    #[test]
    fn threshold_out_of_range() {
        let err = parse("command = train\n[policy]\nthreshold = 1.5\n").unwrap_err().to_string();
        assert!(err.contains("threshold 1.5"), "{err}");
    }

    #[test]
    fn range_errors_are_exhaustive() {
        let text = "command = train\n[policy]\nthreshold = 0\n[train]\nbatch = 0\nlr = -1\neval_every = 7\n";
        let err = parse(text).unwrap_err().to_string();
        for needle in ["threshold", "batch", "learning rate", "eval_every"] {
            assert!(err.contains(needle), "{needle} missing from {err}");
        }
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        for (text, line) in [
            ("command = train\n\nnot a pair\n", 3),
            ("command = train\n[train\n", 2),
            ("command = train\nseed = 1\nseed = 2\n", 3),
        ] {
            match parse(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{other:?}"),
            }
        }
        let err = parse("command = train\n[train]\nbatch = x\n").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn foreign_sections_are_rejected() {
        let err = parse("command = verify-marginal\n[complexity]\nm = 4\n").unwrap_err().to_string();
        assert!(err.contains("[complexity]"), "{err}");
    }

    #[test]
    fn echo_round_trips_every_command() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("a.csv");
        std::fs::write(&csv, "step,gen_accuracy\n0,0.5\n").unwrap();
        let texts = [
            "command = verify-marginal\nseed = 3\n[dist]\nkind = two_point\n[verify]\nmode = monte_carlo\nruns = 50\n".to_string(),
            "command = verify-minimizer\n[dist]\nkind = table\nlen = 2\nvocab = 3\nsupport = 0 1 : 0.25; 2 2 : 0.75\n[verify]\nforward = leaking\nk = 2\n".into(),
            "command = sample-complexity\n[complexity]\nd_values = 2, 3\nmasking = uniform\norder = confidence_policy\n".into(),
            "command = train\noutput_dir = /tmp/x\n[dist]\nd = 3\neta = 0.05\npermutation = 3, 0, 1, 2\n[policy]\nthreshold = 0.9\nblock_size = 2\n[eval_policy]\nkind = margin\n[train]\nmethod = vanilla\nk_increment = 1\nk_period = 10\nk_max = 8\n".into(),
            "command = compare\n[dist]\nkind = point_mass\npoint = 1, 0, 1\n[compare]\nthreshold = 0.5\nseeds = 2\n".into(),
            format!("command = plot\n[plot]\ninputs = {}\nlabels = run\nyscale = log\ntitle = Accuracy\n", csv.display()),
        ];
        for text in texts {
            let cfg = parse(&text).unwrap_or_else(|e| panic!("{text}\n{e}"));
            let echoed = cfg.to_text();
            assert_eq!(parse(&echoed).unwrap(), cfg, "{echoed}");
        }
    }

    #[test]
    fn seed_override_reaches_nested_configs() {
        let cfg = parse("command = train\n").unwrap().with_seed(42);
        match &cfg.params {
            Params::Train(r) => assert_eq!(r.seed, 42),
            other => panic!("{other:?}"),
        }
        let cfg = parse("command = compare\nseed = 10\n[compare]\nseeds = 3\n").unwrap();
        assert_eq!(cfg.compare_seeds(), vec![10, 11, 12]);
    }

    #[test]
    fn missing_plot_input_is_reported() {
        let err = parse("command = plot\n[plot]\ninputs = /nonexistent/file.csv\n").unwrap_err().to_string();
        assert!(err.contains("does not exist"), "{err}");
    }
}
