use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dynrank::harness::{run, Command, Overrides, RunConfig};
use dynrank::policy::ReportMetric;

#[derive(Parser)]
#[command(name = "dynrank", version, about = "Train and evaluate a reinforcement-learned dynamic search ranker")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train every fold, save checkpoints and evaluate on the held-out topics.
    Train(Common),
    /// Evaluate saved checkpoints.
    Evaluate(Common),
    /// Train and evaluate once per feedback variant.
    Ablate(Common),
    /// Train and evaluate with 1 to 4 LSTM layers.
    SweepLayers(Common),
    /// Score a run file against the configured judgments.
    Metrics(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    AlphaNdcg,
    Ndcg,
    Nsdcg,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    epsilon0: Option<f64>,
    /// Subtopic redundancy penalty of α-NDCG.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    docs_per_iter: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run file for `metrics`.
    #[arg(long)]
    run: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            folds: self.folds,
            layers: self.layers,
            epsilon0: self.epsilon0,
            alpha: self.alpha,
            gamma: self.gamma,
            b: self.b,
            c: self.c,
            window: self.window,
            docs_per_iter: self.docs_per_iter,
            iterations: self.iterations,
            metric: self.metric.map(|m| match m {
                MetricArg::AlphaNdcg => ReportMetric::AlphaNdcg,
                MetricArg::Ndcg => ReportMetric::Ndcg,
                MetricArg::Nsdcg => ReportMetric::Nsdcg,
            }),
            out: self.out.clone(),
            run_file: self.run.clone(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match &cli.command {
        Cmd::Train(a) => (Command::Train, a),
        Cmd::Evaluate(a) => (Command::Evaluate, a),
        Cmd::Ablate(a) => (Command::Ablate, a),
        Cmd::SweepLayers(a) => (Command::SweepLayers, a),
        Cmd::Metrics(a) => (Command::Metrics, a),
    };
    let result = RunConfig::load(&args.config).and_then(|mut config| {
        args.overrides().apply(&mut config);
        run(&config, command).map(|r| (config, r))
    });
    match result {
        Ok((config, report)) => {
            let metric = config.metrics.primary.name();
            for v in &report.variants {
                println!("{}\tfinal {metric} {:.4}", v.name, v.final_metric);
            }
            if let Some(t) = report.wall_time_secs {
                eprintln!("{} finished in {t:.1}s; reports in {}", command.name(), config.out_dir.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
