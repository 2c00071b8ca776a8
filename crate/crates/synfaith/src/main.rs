//! `synfaith` command-line entry point.

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use synfaith::commands::{self, StatsOptions, SynthOptions};
use synfaith::config::{Config, ScheduleSpec};
use synfaith::manifest::CorpusManifest;
use synfaith::protocol::{serve_echo, serve_echo_tcp, EchoOptions, Endpoint};
use synfaith::{AppError, Result};
use synfaith_core::game::SyntheticKind;
use synfaith_core::stats::{Metric, RandomFactorKind};

#[derive(Parser)]
#[command(name = "synfaith", version, about = "Cross-modal synergy faithfulness for multimodal explainers")]
struct Cli {
    /// JSON configuration file (falls back to $SYNFAITH_CONFIG, then defaults).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Number of evenly spaced thresholds in [0, 1].
    #[arg(long, global = true)]
    points: Option<usize>,
    /// Background macro-players for the SII ground truth.
    #[arg(long, global = true)]
    background_players: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Default model endpoint: host:port, tcp://host:port, or a command line.
    #[arg(long, global = true)]
    endpoint: Option<Endpoint>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (manifest and attributions).
    Synth {
        #[arg(long, default_value_t = 10)]
        instances: usize,
        /// Synthetic model kind.
        #[arg(long, default_value = "weighted-mixed", value_parser = parse_kind)]
        kind: SyntheticKind,
        #[arg(long, default_value = "synthetic")]
        dataset: String,
        /// Model label (defaults to the kind name).
        #[arg(long)]
        model: Option<String>,
        /// Bind entries to the configured endpoint instead of inline models.
        #[arg(long)]
        remote: bool,
        /// Also write records drawn from a mixed model with planted effects.
        #[arg(long)]
        planted: bool,
    },
    /// Compute F_syn and the unimodal baselines for every attribution.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        attributions: PathBuf,
    },
    /// Correlate F_syn with the exact macro-game interaction index.
    ValidateSii {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        attributions: PathBuf,
    },
    /// Rank agreement, Wilcoxon tests and the mixed-effects model.
    Stats {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value = "f_syn", value_parser = parse_metric)]
        metric: Metric,
        /// Fit the linear mixed-effects model.
        #[arg(long)]
        lmm: bool,
        /// Reference explainer for the fixed effects.
        #[arg(long, default_value = "random")]
        reference: String,
        /// Random intercepts, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "instance,model,dataset", value_parser = parse_factor)]
        random: Vec<RandomFactorKind>,
    },
    /// Serve a constant-score model over the value-function protocol.
    ServeEcho {
        /// Score sent for every request, verbatim (out-of-range values test client checks).
        #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
        score: f64,
        /// Reject requests for unknown instances or wrong mask lengths.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Listen on this address instead of stdin/stdout.
        #[arg(long)]
        tcp: Option<String>,
        /// Announce out-of-order responses in the handshake.
        #[arg(long)]
        concurrent: bool,
    },
}

fn parse_kind(s: &str) -> std::result::Result<SyntheticKind, String> {
    SyntheticKind::parse(s).ok_or_else(|| format!("unknown kind {s:?}"))
}

fn parse_metric(s: &str) -> std::result::Result<Metric, String> {
    Metric::parse(s).ok_or_else(|| format!("unknown metric {s:?}"))
}

fn parse_factor(s: &str) -> std::result::Result<RandomFactorKind, String> {
    RandomFactorKind::parse(s).ok_or_else(|| format!("unknown random factor {s:?}"))
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut config = Config::load(cli.config.as_deref())?;
    let o = &cli.overrides;
    if let Some(p) = o.points {
        config.schedule = ScheduleSpec::Points(p);
    }
    if let Some(c) = o.background_players {
        config.background_players = c;
    }
    if let Some(s) = o.seed {
        config.seed = s;
    }
    if let Some(e) = &o.endpoint {
        config.endpoint = Some(e.clone());
    }
    if let Some(d) = &o.output_dir {
        config.output_dir = d.clone();
    }
    if let Some(w) = o.workers {
        config.workers = w;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Synth { instances, kind, dataset, model, remote, planted } => {
            let opts = SynthOptions { instances, seed: cli.overrides.seed, kind, dataset, model, remote, planted };
            commands::synth(&opts, &config, &mut out)
        }
        Command::Evaluate { manifest, attributions } => {
            commands::evaluate(&manifest, &attributions, &config, &mut out).map(|_| ())
        }
        Command::ValidateSii { manifest, attributions } => {
            commands::validate_sii(&manifest, &attributions, &config, &mut out).map(|_| ())
        }
        Command::Stats { records, metric, lmm, reference, random } => {
            let opts = StatsOptions { metric, lmm, reference, random };
            commands::stats(&records, &opts, &config, &mut out).map(|_| ())
        }
        Command::ServeEcho { score, manifest, tcp, concurrent } => {
            let shapes = manifest.map(|p| CorpusManifest::load(&p).map(|m| m.shapes())).transpose()?;
            let opts = EchoOptions { score, concurrent, shapes };
            match tcp {
                Some(addr) => serve_echo_tcp(&addr, opts, |bound| {
                    let mut o = io::stdout();
                    let _ = writeln!(o, "listening on {bound}");
                    let _ = o.flush();
                })
                .map_err(AppError::io(addr)),
                None => {
                    drop(out);
                    serve_echo(io::stdin().lock(), io::stdout().lock(), &opts).map_err(AppError::io("<stdio>"))
                }
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
