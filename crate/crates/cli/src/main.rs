use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use spinereport_cli::pipeline::{self, Layout};
use spinereport_cli::{worker_threads, PipelineConfig};

#[derive(Parser)]
#[command(name = "spinereport", version, about = "Synthetic spine segmentation, labeling and report pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// key=value configuration file; unset keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory holding every artifact.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Phantom corpus, truth maps, relation facts and the split manifest.
    Generate,
    /// Symbolic graph from the training split.
    Buildgraph,
    /// Adversarial training of the generator and discriminator.
    Train,
    /// Segment the test split.
    Segment,
    /// Structure ledgers from the segmentations.
    Label,
    /// Induce the causal hypothesis from training relation facts.
    Induce,
    /// Reports from ledgers and the hypothesis.
    Report,
    /// Metrics over the test split.
    Eval,
    /// Cross-validation over the training folds.
    Crossval,
    /// Every stage from generate to eval.
    Run,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Buildgraph => "buildgraph",
            Command::Train => "train",
            Command::Segment => "segment",
            Command::Label => "label",
            Command::Induce => "induce",
            Command::Report => "report",
            Command::Eval => "eval",
            Command::Crossval => "crossval",
            Command::Run => "run",
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("read config {}", p.display()))?;
            PipelineConfig::parse(&text)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    for line in cfg.to_text().lines() {
        log::info!("config {line}");
    }
    let layout = Layout::new(&cli.out);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(worker_threads()?).build()?;
    pool.install(|| match cli.command {
        Command::Generate => pipeline::cmd_generate(&cfg, &layout),
        Command::Buildgraph => pipeline::cmd_buildgraph(&cfg, &layout),
        Command::Train => pipeline::cmd_train(&cfg, &layout),
        Command::Segment => pipeline::cmd_segment(&cfg, &layout),
        Command::Label => pipeline::cmd_label(&cfg, &layout),
        Command::Induce => pipeline::cmd_induce(&cfg, &layout),
        Command::Report => pipeline::cmd_report(&cfg, &layout),
        Command::Eval => pipeline::cmd_eval(&cfg, &layout).map(|m| println!("{}", m.to_csv().trim_end())),
        Command::Crossval => pipeline::cmd_crossval(&cfg, &layout).map(|cv| println!("{}", cv.to_csv().trim_end())),
        Command::Run => pipeline::cmd_run(&cfg, &layout).map(|m| println!("{}", m.to_csv().trim_end())),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "stage": cli.command.name(), "error": format!("{e:#}") });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
