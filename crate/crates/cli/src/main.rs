use std::fs;
use std::io::{self, BufReader};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use edgectx_cli::client::{cmd_client, ClientOptions};
use edgectx_cli::registry::Registry;
use edgectx_cli::serve::{cmd_serve, ServeOptions, DEFAULT_ADDR};
use edgectx_cli::train::{cmd_train, parse_sweep, TrainOptions};
use edgectx_cli::{cmd_bench, cmd_simulate, CliError, EXIT_OK, EXIT_USAGE};
use edgectx_core::sim::{BenchConfig, ScenarioConfig};
use edgectx_core::sync::{ClientAlgorithm, ModelKind, SyncPolicy};

#[derive(Parser)]
#[command(name = "edgectx", version, about = "Split edge/cloud context learning")]
struct Cli {
    /// Dataset registry file (TOML).
    #[arg(long, global = true, env = "EDGECTX_CONFIG")]
    config: Option<PathBuf>,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cross-validate, train a final model and write its bundle and reports.
    Train(TrainArgs),
    /// Serve parameters and accept uploads, retraining periodically.
    Serve(ServeArgs),
    /// Predict feature vectors from input lines using downloaded parameters.
    Client(ClientArgs),
    /// Time predictions and training runs of all four algorithms.
    Bench(BenchArgs),
    /// Run a scenario file through the discrete-event simulator.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Dcl,
    Cl,
}

impl From<KindArg> for ModelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Dcl => ModelKind::Dcl,
            KindArg::Cl => ModelKind::Cl,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Adcl,
    Lcl,
}

#[derive(Args)]
struct TrainArgs {
    /// Registry name (iris, seeds, heart, synth-still-motion) or CSV path.
    dataset: String,
    #[arg(long, value_enum, default_value = "dcl")]
    kind: KindArg,
    /// Learning rate [default: 0.3 for DCL, 0.05 for CL].
    #[arg(long)]
    lr: Option<f64>,
    /// Hidden layer widths, comma separated (e.g. 4,4).
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// Number of hidden layers of default width, used when --hidden is absent.
    #[arg(long, default_value_t = 1)]
    hidden_layers: usize,
    /// Training epochs [default: 1000 for DCL, 100 for CL].
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 5)]
    kfold: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory [default: out/<dataset>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Grid terms such as `lr=0.1..0.9 hidden=1..9`.
    #[arg(long, num_args = 1..)]
    sweep: Option<Vec<String>>,
    /// Train on raw features.
    #[arg(long)]
    no_normalize: bool,
    /// Exit with status 3 when accuracy falls below this fraction.
    #[arg(long)]
    min_accuracy: Option<f64>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "EDGECTX_SERVER_ADDR", default_value = DEFAULT_ADDR)]
    addr: String,
    #[arg(long, default_value_t = 60_000)]
    retrain_every_ms: u64,
    /// Directory persisting uploads, bundles and the version high-water mark.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "dcl,cl")]
    kinds: Vec<KindArg>,
    /// Feature names of uploaded readings.
    #[arg(long, value_delimiter = ',', default_value = "accel_x,accel_y")]
    features: Vec<String>,
    /// Class names, in label order.
    #[arg(long, value_delimiter = ',', default_value = "still,motion")]
    classes: Vec<String>,
    #[arg(long, default_value_t = edgectx_core::nn::TrainingConfig::DCL_EPOCHS)]
    dcl_epochs: usize,
    #[arg(long, default_value_t = edgectx_core::nn::TrainingConfig::CL_EPOCHS)]
    cl_epochs: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Stop after this many milliseconds instead of running indefinitely.
    #[arg(long)]
    run_for_ms: Option<u64>,
}

#[derive(Args)]
struct ClientArgs {
    #[arg(long, env = "EDGECTX_SERVER_ADDR", default_value = DEFAULT_ADDR)]
    server: String,
    #[arg(long, env = "EDGECTX_SYNC_PERIOD_MS", default_value_t = 30_000)]
    sync_period_ms: u64,
    #[arg(long, default_value_t = 2_000)]
    timeout_ms: u64,
    #[arg(long, value_enum, default_value = "adcl")]
    algorithm: AlgorithmArg,
    /// Input file, one feature vector per line; `-` reads standard input.
    #[arg(long, default_value = "-")]
    input: String,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Bundle cache file used while the server is unreachable.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 200)]
    repetitions: usize,
    #[arg(long, default_value_t = 500)]
    batch_size: usize,
    #[arg(long, default_value_t = 2_000)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Hidden widths for DCL/ADCL, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 3 unless LCL < ADCL < CL train < DCL train.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario file (TOML).
    scenario: PathBuf,
    #[arg(long, default_value = "out/simulate")]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn run(cli: Cli, argv: Vec<String>) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => {
            if a.lr.is_some_and(|lr| !(lr > 0.0 && lr.is_finite())) {
                return Err(CliError::Usage("--lr must be positive".into()));
            }
            let sweep = a.sweep.as_deref().map(parse_sweep).transpose()?;
            let registry = Registry::load(cli.config.as_deref())?;
            let ds = registry.load_dataset(&a.dataset)?;
            let stem = a.dataset.rsplit('/').next().unwrap_or(&a.dataset).to_string();
            let mut opts = TrainOptions::new(a.kind.into(), a.out.unwrap_or_else(|| PathBuf::from("out").join(stem)));
            if let Some(lr) = a.lr {
                opts.learning_rate = lr;
            }
            if let Some(e) = a.epochs {
                opts.epochs = e;
            }
            opts.hidden = a.hidden;
            opts.hidden_layers = a.hidden_layers;
            opts.kfold = a.kfold;
            opts.seed = a.seed;
            opts.normalize = !a.no_normalize;
            opts.sweep = sweep;
            let out = cmd_train(&ds, &opts, argv)?;
            let acc = out.accuracy();
            match &out.report.best_sweep_cell {
                Some(c) => println!(
                    "best cell: lr {:.2}, {} hidden layer(s), mean accuracy {:.4} (grid in {})",
                    c.learning_rate,
                    c.hidden_layers,
                    c.mean_accuracy,
                    opts.out.join("sweep.csv").display()
                ),
                None => {
                    let cv = out.report.cross_validation.as_ref().expect("cv ran");
                    println!("{}-fold mean accuracy {:.4} (std {:.4})", opts.kfold, cv.mean, cv.std_dev);
                    if let Some(p) = &out.bundle_path {
                        println!("bundle written to {}", p.display());
                    }
                }
            }
            if let Some(min) = a.min_accuracy {
                if acc < min {
                    return Err(CliError::Threshold(format!("accuracy {acc:.4} < {min}")));
                }
            }
            Ok(())
        }
        Command::Serve(a) => {
            let opts = ServeOptions {
                addr: a.addr,
                retrain_every: Duration::from_millis(a.retrain_every_ms.max(1)),
                data_dir: a.data_dir,
                kinds: a.kinds.into_iter().map(ModelKind::from).collect(),
                feature_names: a.features,
                class_names: a.classes,
                dcl_epochs: a.dcl_epochs,
                cl_epochs: a.cl_epochs,
                seed: a.seed,
            };
            cmd_serve(&opts, a.run_for_ms.map(Duration::from_millis))
        }
        Command::Client(a) => {
            if a.sync_period_ms == 0 {
                return Err(CliError::Usage("--sync-period-ms must be positive".into()));
            }
            let opts = ClientOptions {
                server: a.server,
                policy: SyncPolicy {
                    period: Duration::from_millis(a.sync_period_ms),
                    timeout: Duration::from_millis(a.timeout_ms),
                },
                algorithm: match a.algorithm {
                    AlgorithmArg::Adcl => ClientAlgorithm::Adcl,
                    AlgorithmArg::Lcl => ClientAlgorithm::Lcl,
                },
                cache: a.cache,
            };
            let output: Box<dyn io::Write> = match &a.output {
                Some(p) => Box::new(fs::File::create(p)?),
                None => Box::new(io::stdout().lock()),
            };
            let stats = if a.input == "-" {
                cmd_client(&opts, io::stdin().lock(), output)?
            } else {
                let f = fs::File::open(&a.input).map_err(|e| CliError::Usage(format!("{}: {e}", a.input)))?;
                cmd_client(&opts, BufReader::new(f), output)?
            };
            log::info!("{} lines: {} predicted, {} not ready, {} errors", stats.lines, stats.predicted, stats.not_ready, stats.errors);
            Ok(())
        }
        Command::Bench(a) => {
            let cfg = BenchConfig {
                repetitions: a.repetitions,
                batch_size: a.batch_size,
                samples: a.samples,
                seed: a.seed,
                hidden: a.hidden,
                ..BenchConfig::default()
            };
            if cfg.repetitions < 100 {
                return Err(CliError::Usage("--repetitions must be at least 100".into()));
            }
            cmd_bench(&cfg, a.out.as_deref(), a.check).map(|_| ())
        }
        Command::Simulate(a) => {
            let mut cfg = ScenarioConfig::from_file(&a.scenario).map_err(|e| match e {
                edgectx_core::Error::Scenario(m) => CliError::Usage(format!("{}: {m}", a.scenario.display())),
                other => CliError::Runtime(other),
            })?;
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            cmd_simulate(&cfg, &a.out)?;
            println!("wrote {} and {}", a.out.join("ticks.csv").display(), a.out.join("summary.csv").display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("edgectx: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
