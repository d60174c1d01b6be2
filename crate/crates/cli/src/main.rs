use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fairgraph_cli::pipeline::{cmd_evaluate, cmd_explain, cmd_ingest, cmd_sweep, cmd_synth, cmd_topology, cmd_train};
use fairgraph_cli::{CliError, CliResult, Method, RunConfig};

#[derive(Parser)]
#[command(name = "fairgraph", version, about = "Counterfactual explanations of recommendation unfairness")]
struct Cli {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set explainer.learning_rate=500`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Shortcut for `--set output_dir=...`.
    #[arg(short, long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read, filter and split the dataset; write split files and statistics.
    Ingest,
    /// Train the backbone and write the checkpoint.
    Train,
    /// Run the explainer and/or the random baseline.
    Explain {
        /// gnnuers, gnnuers-cn or rnd-p; repeatable.
        #[arg(long = "method")]
        methods: Vec<String>,
        /// `cn` restricts deletions to edges of unprotected users.
        #[arg(long)]
        policy: Option<String>,
        /// `rnd-p` also runs the random baseline.
        #[arg(long)]
        baseline: Option<String>,
    },
    /// Compare ΔNDCG of the unperturbed model with each explanation.
    Evaluate {
        #[arg(long = "method")]
        methods: Vec<String>,
    },
    /// Node properties and deleted-edge distributions over quartiles.
    Topology {
        #[arg(long = "method")]
        methods: Vec<String>,
    },
    /// Write the synthetic dataset as interaction and attribute files.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline over a grid of config values.
    Sweep {
        /// `key=v1,v2,...`; repeatable, combined as a grid.
        #[arg(long = "vary", required = true)]
        axes: Vec<String>,
        #[arg(long = "method")]
        methods: Vec<String>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn parse_methods(names: &[String]) -> CliResult<Vec<Method>> {
    names
        .iter()
        .map(|n| Method::parse(n).ok_or_else(|| CliError::Input(format!("unknown method '{n}'"))))
        .collect()
}

fn optional(names: Vec<String>) -> Option<Vec<String>> {
    (!names.is_empty()).then_some(names)
}

fn run(cli: Cli) -> CliResult<()> {
    let mut overrides = cli.overrides;
    if let Some(dir) = &cli.output_dir {
        overrides.push(format!("output_dir={}", toml::Value::String(dir.display().to_string())));
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Ingest => {
            let report = cmd_ingest(&cfg)?;
            println!("{} users, {} items, {} interactions", report.users, report.items, report.interactions);
            for g in &report.groups {
                println!(
                    "{} {}: {:.1}% of users, mean DEG {:.1}, Gini DEG {:.2}",
                    g.attribute, g.group, g.representation, g.mean_deg, g.gini_deg
                );
            }
        }
        Command::Train => {
            let log = cmd_train(&cfg)?;
            println!("best epoch {} (validation NDCG {:?})", log.best_epoch, log.best_val_ndcg);
        }
        Command::Explain { methods, policy, baseline } => {
            let mut list = parse_methods(&methods)?;
            let cn = match policy.as_deref() {
                None => false,
                Some("cn") => true,
                Some(p) => return Err(CliError::Input(format!("unknown policy '{p}'"))),
            };
            if cn {
                list.push(Method::GnnuersCn);
            } else if methods.is_empty() {
                list.push(if cfg.explainer.cn { Method::GnnuersCn } else { Method::Gnnuers });
            }
            match baseline.as_deref() {
                None => {}
                Some("rnd-p") => list.push(Method::RndP),
                Some(b) => return Err(CliError::Input(format!("unknown baseline '{b}'"))),
            }
            list.dedup();
            for r in cmd_explain(&cfg, &list)? {
                println!(
                    "{}: {} edges deleted, selected epoch {}, ΔNDCG {:.4}",
                    r.method,
                    r.deleted.len(),
                    r.selected_epoch,
                    r.selected.delta_ndcg
                );
            }
        }
        Command::Evaluate { methods } => {
            let report = cmd_evaluate(&cfg, optional(methods).as_deref())?;
            for s in &report.summaries {
                println!("{}: mean |ΔNDCG| {:.4}, reduction {:.1}%", s.method, s.mean_abs_delta, 100.0 * s.reduction);
            }
        }
        Command::Topology { methods } => cmd_topology(&cfg, optional(methods).as_deref())?,
        Command::Synth { out } => {
            let (i, a) = cmd_synth(&cfg, &out)?;
            println!("{}\n{}", i.display(), a.display());
        }
        Command::Sweep { axes, methods, jobs } => {
            let axes = axes
                .iter()
                .map(|a| {
                    let (k, v) = a
                        .split_once('=')
                        .ok_or_else(|| CliError::Input(format!("--vary '{a}' is not key=v1,v2")))?;
                    Ok((k.to_string(), v.split(',').map(str::to_string).collect()))
                })
                .collect::<CliResult<Vec<_>>>()?;
            let mut list = parse_methods(&methods)?;
            if list.is_empty() {
                list.push(Method::Gnnuers);
            }
            let runs = cmd_sweep(&cfg, &axes, &list, jobs)?;
            let failed = runs.iter().filter(|r| r.outcome.is_err()).count();
            println!("{} runs, {failed} failed", runs.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
