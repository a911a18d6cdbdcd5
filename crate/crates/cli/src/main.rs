use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};
use grainseg_cli::config::split_assignment;
use grainseg_cli::{PathOverrides, PredictArgs, Segmenter, SynthArgs};
use grainseg_core::data::DEFAULT_TILE;
use grainseg_core::train::AblationKind;
use grainseg_core::DatasetScheme;

#[derive(Parser)]
#[command(name = "grainseg", version, about = "Grain segmentation of sandstone thin-section photomicrographs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// key = value run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_set)]
    sets: Vec<(String, String)>,
}

#[derive(Subcommand)]
enum Command {
    /// Cut a directory of <id>_ppl/_xpl/_mask PNG triples into a training set
    Prepare {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        scheme: DatasetScheme,
        #[arg(long, default_value_t = DEFAULT_TILE)]
        tile: usize,
    },
    /// Write synthetic PPL/XPL/mask triples
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long, default_value_t = 256)]
        height: usize,
        #[arg(long, default_value_t = 256)]
        width: usize,
        /// Target grain area fraction, strictly between 0 and 1
        #[arg(long, default_value_t = 0.5, value_parser = parse_fraction)]
        grain_fraction: f64,
    },
    /// Train on a prepared manifest
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// manifest.json written by `prepare` (or its directory)
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Segment full-size PPL/XPL pairs
    Predict {
        #[arg(long, required_unless_present = "playback", conflicts_with = "playback")]
        checkpoint: Option<PathBuf>,
        /// Answer from the <id>_mask.png files in this directory instead of a model
        #[arg(long)]
        playback: Option<PathBuf>,
        /// Directories or <id>_ppl.png / <id>_xpl.png files
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long, default_value = "test2")]
        scheme: DatasetScheme,
        #[arg(long)]
        out: PathBuf,
        /// Tile size (default: the config's, else 256)
        #[arg(long)]
        tile: Option<usize>,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        /// Also write <id>_prob.png
        #[arg(long)]
        prob: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score <id>_pred.png files against <id>_mask.png ground truth
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Print the parameter table of a model configuration
    Info {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train and evaluate one arm per training set or loss weighting
    Ablate {
        #[arg(long)]
        kind: AblationKind,
        /// Directory holding <scheme>/manifest.json
        #[arg(long)]
        data_root: PathBuf,
        #[arg(long)]
        test_dir: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn parse_set(s: &str) -> Result<(String, String), String> {
    split_assignment(s).map_err(|e| e.to_string())
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("must lie strictly between 0 and 1, got {v}"))
    }
}

fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var("GRAINSEG_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .with_context(|| format!("GRAINSEG_THREADS must be a non-negative integer, got `{value}`"))?;
    // 0 leaves the choice to rayon.
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let stdout = std::io::stdout();
    let out = &mut stdout.lock();
    match cli.command {
        Command::Prepare { input, output, scheme, tile } => {
            grainseg_cli::prepare(&input, &output, scheme, tile, out)?;
        }
        Command::Synth { output, seed, count, height, width, grain_fraction } => {
            let args = SynthArgs { seed, count, height, width, grain_fraction };
            grainseg_cli::synth(&output, &args, out)?;
        }
        Command::Train { config, data, out: out_dir } => {
            let paths = PathOverrides { data, out: out_dir, test_dir: None };
            let cfg = grainseg_cli::load_config(config.config.as_deref(), &config.sets, &paths)?;
            grainseg_cli::train_cmd(&cfg, out)?;
        }
        Command::Predict { checkpoint, playback, input, scheme, out: out_dir, tile, batch, prob, config } => {
            let cfg = match (&config.config, config.sets.is_empty()) {
                (None, true) => None,
                _ => Some(grainseg_cli::load_config(config.config.as_deref(), &config.sets, &PathOverrides::default())?),
            };
            let segmenter = match (checkpoint, playback) {
                (Some(path), _) => Segmenter::Checkpoint(path),
                (None, Some(dir)) => Segmenter::Playback(dir),
                (None, None) => unreachable!("clap requires one of --checkpoint/--playback"),
            };
            let args = PredictArgs {
                segmenter,
                inputs: input,
                scheme,
                out: out_dir,
                tile: tile.or(cfg.as_ref().map(|c| c.tile)).unwrap_or(DEFAULT_TILE),
                batch,
                prob,
            };
            grainseg_cli::predict(&args, cfg.as_ref(), out)?;
        }
        Command::Eval { pred, gt, report } => grainseg_cli::eval(&pred, &gt, &report, out)?,
        Command::Info { config } => {
            let cfg = grainseg_cli::load_config(config.config.as_deref(), &config.sets, &PathOverrides::default())?;
            grainseg_cli::info(&cfg, out)?;
        }
        Command::Ablate { kind, data_root, test_dir, out: out_dir, config } => {
            let paths = PathOverrides { data: None, out: out_dir, test_dir };
            let cfg = grainseg_cli::load_config(config.config.as_deref(), &config.sets, &paths)?;
            grainseg_cli::ablate(kind, &data_root, &cfg, out)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Parses argv; value errors also get the subcommand's usage line, which
/// clap only prints by itself for missing or unknown arguments.
fn parse_args() -> Cli {
    let err = match Cli::try_parse() {
        Ok(cli) => return cli,
        Err(err) => err,
    };
    if matches!(err.kind(), ErrorKind::ValueValidation | ErrorKind::InvalidValue) {
        let mut cmd = Cli::command();
        cmd.build();
        let usage = std::env::args()
            .nth(1)
            .and_then(|name| cmd.find_subcommand_mut(&name).map(|sub| sub.render_usage()))
            .unwrap_or_else(|| cmd.render_usage());
        eprint!("{}", err.render());
        eprintln!("\n{usage}");
        std::process::exit(err.exit_code());
    }
    err.exit()
}

fn main() -> ExitCode {
    let cli = parse_args();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
