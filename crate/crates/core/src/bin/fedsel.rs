use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use fedsel::experiment::{self, ExperimentConfig, Preset};
use fedsel::Error;

/// Federated learning simulation with class-imbalance-aware client selection.
#[derive(Debug, Parser)]
#[command(name = "fedsel", version)]
struct Args {
    /// key=value configuration file; command-line options override it.
    #[arg(long)]
    config: Option<PathBuf>,

    /// scheme-comparison, budget-sweep or alpha-sweep.
    #[arg(long)]
    preset: Option<String>,

    /// cucb, greedy or random.
    #[arg(long)]
    scheme: Option<String>,

    /// Rounds after the warm-up phase.
    #[arg(long)]
    rounds: Option<usize>,

    /// Seed, or a comma-separated list of seeds.
    #[arg(long)]
    seed: Option<String>,

    /// Exploration factor of the UCB bonus.
    #[arg(long)]
    alpha: Option<f64>,

    /// Forgetting factor of the running composition estimate.
    #[arg(long)]
    rho: Option<f64>,

    /// Temperature of the composition estimate.
    #[arg(long)]
    beta: Option<f64>,

    /// Clients selected per round.
    #[arg(long)]
    select: Option<usize>,

    /// Total number of clients.
    #[arg(long)]
    clients: Option<usize>,

    /// Metrics CSV path.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Any other option as key=value; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Per-client estimator log (CSV).
    #[arg(long)]
    estimator_log: Option<PathBuf>,

    /// Per-round selection log (CSV).
    #[arg(long)]
    selection_log: Option<PathBuf>,

    /// Print the resolved configuration and exit.
    #[arg(long)]
    dump_config: bool,
}

fn resolve(args: &Args) -> Result<(ExperimentConfig, Option<Preset>), Error> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &args.config {
        cfg.apply_file(path).map_err(|e| match e {
            Error::Io { .. } => Error::Config(e.to_string()),
            other => other,
        })?;
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k, v)?;
    }
    let overrides = [
        ("scheme", args.scheme.clone()),
        ("rounds", args.rounds.map(|v| v.to_string())),
        ("seeds", args.seed.clone()),
        ("alpha", args.alpha.map(|v| v.to_string())),
        ("rho", args.rho.map(|v| v.to_string())),
        ("beta", args.beta.map(|v| v.to_string())),
        ("select", args.select.map(|v| v.to_string())),
        ("clients", args.clients.map(|v| v.to_string())),
        ("out", args.out.as_ref().map(|p| p.display().to_string())),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
    }
    let preset = args.preset.as_deref().map(str::parse).transpose()?;
    cfg.validate()?;
    Ok((cfg, preset))
}

fn run(cfg: &ExperimentConfig, preset: Option<Preset>, args: &Args) -> Result<(), Error> {
    let variants = match preset {
        Some(p) => p.variants(cfg),
        None => vec![(String::new(), cfg.clone())],
    };
    let labelled = variants.len() > 1;
    for (label, variant) in &variants {
        variant.validate()?;
        let path_for = |p: &PathBuf| {
            if labelled {
                experiment::labelled_path(p, label)
            } else {
                p.clone()
            }
        };
        let runs = experiment::run_experiment(variant)?;
        let out = path_for(&variant.output_path);
        experiment::emit_metrics(runs.iter().flat_map(|r| &r.metrics), &out)?;
        if let Some(p) = &args.estimator_log {
            experiment::emit_estimator_log(&runs, &path_for(p))?;
        }
        if let Some(p) = &args.selection_log {
            experiment::emit_selection_log(&runs, &path_for(p))?;
        }
        for r in &runs {
            let last = r
                .metrics
                .last()
                .map(|m| m.test_accuracy)
                .unwrap_or(f64::NAN);
            let reached = experiment::rounds_to_target(&r.metrics, variant.target_accuracy)
                .map_or("never".to_string(), |t| t.to_string());
            eprintln!(
                "{}{} seed {}: final accuracy {last:.4}, reached {} at round {reached}",
                if labelled { "[" } else { "" },
                if labelled {
                    format!("{label}]")
                } else {
                    variant.selection.scheme.to_string()
                },
                r.seed,
                variant.target_accuracy,
            );
        }
        eprintln!("wrote {}", out.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    let (cfg, preset) = match resolve(&args) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if args.dump_config {
        print!("{}", cfg.to_config_string());
        return ExitCode::SUCCESS;
    }
    match run(&cfg, preset, &args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
