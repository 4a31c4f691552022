use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::Parser;

use puma_lab::analysis::{
    complexity_csv, sample_complexity_experiment, summarize_complexity, verify_marginal_agreement,
    verify_minimizer_preservation, VerifyMode, EXACT_TV_TOL, MINIMIZER_TOL,
};
use puma_lab::config::{parse_config, Command, ExperimentConfig, MarginalMode, Params};
use puma_lab::experiments::{compare_runs, metrics_csv, run_training};
use puma_lab::plot::emit_plot;

const DEFAULT_OUT: &str = "puma-lab-out";

#[derive(Parser, Debug)]
#[command(name = "puma-lab", version, about = "Progressive unmasking experiments on exactly enumerable distributions")]
struct Cli {
    /// verify-marginal, verify-minimizer, sample-complexity, train, compare or plot
    command: String,
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config and PUMA_LAB_OUT)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for independent sub-runs
    #[arg(long)]
    jobs: Option<usize>,
    /// Master seed (overrides the config)
    #[arg(long)]
    seed: Option<u64>,
}

enum Outcome {
    Pass,
    Fail,
}

/// Write through a temp file in the same directory, then rename.
fn write_atomic(path: &Path, contents: &str) -> anyhow::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path.file_name().context("output path has no file name")?.to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))?;
    Ok(())
}

fn output_dir(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os("PUMA_LAB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn run(cfg: &ExperimentConfig, out: &Path, jobs: Option<usize>) -> anyhow::Result<Outcome> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_atomic(&out.join("config.txt"), &cfg.to_text())?;
    match &cfg.params {
        Params::VerifyMarginal { dist, policy, k, mode } => {
            let d = dist.build()?;
            let mode = match mode {
                MarginalMode::Exact => VerifyMode::Exact,
                MarginalMode::MonteCarlo { runs } => VerifyMode::MonteCarlo { runs: *runs, seed: cfg.master_seed },
            };
            let rep = verify_marginal_agreement(&d, policy, *k, mode)?;
            let mut csv = String::from("step,tv,tolerance\n");
            for (j, (tv, tol)) in rep.tv.iter().zip(&rep.tolerance).enumerate() {
                csv.push_str(&format!("{j},{tv},{tol}\n"));
            }
            write_atomic(&out.join("marginal.csv"), &csv)?;
            let ok = rep.passed();
            match (mode, ok) {
                (VerifyMode::Exact, true) => println!("verify-marginal: max_tv < {EXACT_TV_TOL:e} (max_tv = {:e})", rep.max_tv),
                (VerifyMode::Exact, false) => println!("verify-marginal: FAILED max_tv = {:e} >= {EXACT_TV_TOL:e}", rep.max_tv),
                (_, true) => println!("verify-marginal: max_tv = {:.4} within the Monte Carlo bound", rep.max_tv),
                (_, false) => println!("verify-marginal: FAILED max_tv = {:.4} exceeds the Monte Carlo bound", rep.max_tv),
            }
            Ok(if ok { Outcome::Pass } else { Outcome::Fail })
        }
        Params::VerifyMinimizer { dist, policy, k, forward } => {
            let d = dist.build()?;
            let rep = verify_minimizer_preservation(&d, *forward, policy, *k)?;
            let csv = format!("forward,rows,max_deviation\n{},{},{}\n", forward.name(), rep.rows, rep.max_deviation);
            write_atomic(&out.join("minimizer.csv"), &csv)?;
            if rep.preserved() {
                println!("verify-minimizer: max_deviation < {MINIMIZER_TOL:e} over {} rows ({})", rep.rows, forward.name());
                Ok(Outcome::Pass)
            } else {
                println!("verify-minimizer: FAILED max_deviation = {:e} ({})", rep.max_deviation, forward.name());
                Ok(Outcome::Fail)
            }
        }
        Params::SampleComplexity(c) => {
            let rows = sample_complexity_experiment(c, jobs)?;
            write_atomic(&out.join("complexity.csv"), &complexity_csv(&rows))?;
            let s = summarize_complexity(&rows)?;
            println!(
                "sample-complexity: puma_oracle slope {:.3} (R^2 {:.3}), random_masking log-slope {:.3}, {} censored rows",
                s.puma_fit.slope, s.puma_fit.r2, s.random_log_fit.slope, s.censored_rows
            );
            Ok(Outcome::Pass)
        }
        Params::Train(r) => {
            let res = run_training(r)?;
            write_atomic(&out.join("metrics.csv"), &metrics_csv(&res.rows))?;
            write_atomic(&out.join("model.txt"), &res.model.to_text())?;
            let last = res.rows.last().expect("at least one evaluation");
            println!(
                "train: {} step {} gen_accuracy {:.4} posterior_l1 {:.4}",
                r.method, last.step, last.gen_accuracy, last.posterior_l1
            );
            Ok(Outcome::Pass)
        }
        Params::Compare { a, b, threshold, .. } => {
            let seeds = cfg.compare_seeds();
            let rep = match compare_runs(a, b, *threshold, &seeds) {
                Ok(rep) => rep,
                Err(e) => {
                    println!("compare: {e}");
                    return Ok(Outcome::Fail);
                }
            };
            let fmt = |s: &Option<u64>| s.map_or("inf".to_string(), |s| s.to_string());
            let mut csv = format!("seed,{},{}\n", a.method, b.method);
            for ((seed, sa), sb) in rep.seeds.iter().zip(&rep.steps_a).zip(&rep.steps_b) {
                csv.push_str(&format!("{seed},{},{}\n", fmt(sa), fmt(sb)));
            }
            write_atomic(&out.join("compare.csv"), &csv)?;
            println!(
                "compare: median steps to {threshold}: {} {} vs {} {}, ratio {:.3}, {} faster in {}/{} seeds",
                a.method,
                rep.median_a,
                b.method,
                rep.median_b,
                rep.ratio,
                b.method,
                rep.b_wins(),
                seeds.len()
            );
            Ok(Outcome::Pass)
        }
        Params::Plot(p) => {
            let svg = emit_plot(p)?;
            write_atomic(&out.join(&p.output), &svg)?;
            println!("plot: wrote {}", out.join(&p.output).display());
            Ok(Outcome::Pass)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let out = output_dir(&cli, &cfg);
    match run(&cfg, &out, cli.jobs) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let command: Command = cli.command.parse()?;
    if cli.jobs == Some(0) {
        bail!("--jobs must be at least 1");
    }
    let mut cfg = parse_config(&cli.config)?;
    if cfg.command() != command {
        bail!("config is for `{}`, not `{}`", cfg.command().name(), command.name());
    }
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    Ok(cfg)
}
