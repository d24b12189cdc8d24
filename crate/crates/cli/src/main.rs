use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dglm_cli::bench_model::run_benchmark;
use dglm_cli::error::{CliError, Result};
use dglm_cli::output::write_run;
use dglm_cli::synth::{synth_generate, Scenario, SynthParams};
use dglm_cli::{run_pipeline_with_threads, ObservationTable, RunConfig, Stage};
use dglm_core::vb_table::{GridSpec, VbTable};
use dglm_core::FamilySpec;

#[derive(Parser)]
#[command(name = "dglm", version, about = "Filter, forecast and evaluate coupled dynamic GLMs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output directory (overrides `output.dir` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFamily {
    Poisson,
    Bernoulli,
    Binomial,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    RetailDcmm,
    NetworkFlows,
    PlainPoisson,
}

#[derive(Subcommand)]
enum Command {
    /// Filter every series; writes filtered states.
    Filter(RunArgs),
    /// Filter and produce joint path forecasts at each window origin.
    Forecast(RunArgs),
    /// Forecast and score: PIT, log densities, ZAPE, cumulative LPDR.
    Evaluate(RunArgs),
    /// Time copula against recursive path forecasting on a fitted model.
    Benchmark {
        #[arg(long, default_value_t = 14)]
        horizons: usize,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also time the recursive forecaster with table lookups.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Build a variational-Bayes lookup table.
    TableGen {
        #[arg(long, value_enum)]
        family: TableFamily,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 257)]
        f_points: usize,
        #[arg(long, default_value_t = 257)]
        q_points: usize,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Simulate a scenario; writes data.csv and a matching config.toml.
    Synth {
        #[arg(long, value_enum)]
        scenario: ScenarioArg,
        #[arg(long, default_value_t = 365)]
        steps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Retail: daily probability an item sells.
        #[arg(long)]
        gate_prob: Option<f64>,
        /// Retail: shared factor scale.
        #[arg(long)]
        factor_sd: Option<f64>,
        /// Network: number of origins.
        #[arg(long)]
        origins: Option<usize>,
    },
}

fn pool(threads: Option<usize>) -> Result<Option<rayon::ThreadPool>> {
    threads
        .map(|n| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| CliError::Config(format!("cannot start {n} workers: {e}")))
        })
        .transpose()
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    Ok(match pool(threads)? {
        Some(p) => p.install(f),
        None => f(),
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

fn run(args: RunArgs, stage: Stage) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let dir = args
        .out
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .ok_or_else(|| CliError::Config("no output directory: pass --out or set output.dir".into()))?;
    let data = ObservationTable::load(&args.data)?;
    let result = run_pipeline_with_threads(&cfg, &data, stage, args.threads)?;
    let threads = args.threads.unwrap_or_else(rayon::current_num_threads);
    let m = write_run(&dir, stage.name(), &cfg, &data, &result, threads)?;
    eprintln!(
        "{}: wrote {} files to {} (config {})",
        stage.name(),
        m.outputs.len() + 1,
        dir.display(),
        &m.config_hash[..12]
    );
    for k in &m.summary.pit {
        eprintln!("  {} h={} n={} KS={:.4} p={:.4}", k.metric, k.horizon, k.n, k.ks_stat, k.p_value);
    }
    for (s, v) in &m.summary.lpdr_terminal {
        eprintln!("  lpdr {s}: {v:.3}");
    }
    Ok(())
}

fn main_inner() -> Result<()> {
    match Cli::parse().command {
        Command::Filter(a) => run(a, Stage::Filter),
        Command::Forecast(a) => run(a, Stage::Forecast),
        Command::Evaluate(a) => run(a, Stage::Evaluate),
        Command::Benchmark {
            horizons,
            samples,
            seed,
            table,
            out,
            threads,
        } => {
            if horizons == 0 || samples == 0 {
                return Err(CliError::Config("horizons and samples must be positive".into()));
            }
            let table = table
                .map(|p| {
                    let bytes = std::fs::read(&p)
                        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                    VbTable::from_bytes(&bytes).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
                })
                .transpose()?;
            let report = in_pool(threads, || run_benchmark(horizons, samples, seed, table.as_ref()))?
                .map_err(|source| CliError::Numerical {
                    context: "benchmark".into(),
                    source,
                })?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            println!("{json}");
            eprintln!("copula speedup {:.2}x", report.copula_speedup());
            if let Some(s) = report.table_speedup() {
                eprintln!("table speedup {s:.2}x");
            }
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|source| CliError::Output {
                    path: dir.clone(),
                    source,
                })?;
                write_file(&dir.join("benchmark.json"), json.as_bytes())?;
            }
            Ok(())
        }
        Command::TableGen {
            family,
            out,
            f_points,
            q_points,
            threads,
        } => {
            let fam = match family {
                TableFamily::Poisson => FamilySpec::poisson(),
                TableFamily::Bernoulli => FamilySpec::bernoulli(),
                TableFamily::Binomial => FamilySpec::binomial(),
            };
            let grid = GridSpec {
                f_points,
                q_points,
                ..GridSpec::default()
            };
            let table = in_pool(threads, || VbTable::build(&fam, grid))?.map_err(|source| CliError::Numerical {
                context: "table-gen".into(),
                source,
            })?;
            write_file(&out, &table.to_bytes())
        }
        Command::Synth {
            scenario,
            steps,
            seed,
            out,
            gate_prob,
            factor_sd,
            origins,
        } => {
            let defaults = SynthParams::default();
            let params = SynthParams {
                steps,
                gate_prob: gate_prob.unwrap_or(defaults.gate_prob),
                factor_sd: factor_sd.unwrap_or(defaults.factor_sd),
                origins: origins.unwrap_or(defaults.origins),
                ..defaults
            };
            let scenario = match scenario {
                ScenarioArg::RetailDcmm => Scenario::RetailDcmm,
                ScenarioArg::NetworkFlows => Scenario::NetworkFlows,
                ScenarioArg::PlainPoisson => Scenario::PlainPoisson,
            };
            let s = synth_generate(scenario, &params, seed);
            std::fs::create_dir_all(&out).map_err(|source| CliError::Output {
                path: out.clone(),
                source,
            })?;
            let mut buf = Vec::new();
            s.table.write_csv(&mut buf).map_err(|source| CliError::Output {
                path: out.join("data.csv"),
                source,
            })?;
            write_file(&out.join("data.csv"), &buf)?;
            write_file(&out.join("config.toml"), s.config.to_toml().as_bytes())
        }
    }
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dglm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
