//! Command-line front end: experiment runs, federation materialization,
//! model evaluation, and the TCP server/client roles.

use std::net::TcpListener;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use fedsurf_core::seeds::{derive, stream};
use fedsurf_core::transport::{run_server_on, serialize_forest};
use fedsurf_core::{
    censoring_km, concordance_index, concordance_index_ipcw, cumulative_auc, deserialize_forest,
    emit_report, integrated_brier_score, label_skew_split, load_csv, run_client, run_experiment,
    train_test_split, validation_split, write_csv, ClientState, EvaluationGrid, ExperimentConfig,
    MaxFeatures, RsfParams, SamplingStrategy, ServerOptions, SplitConfig, SurvivalDataset,
};

#[derive(Parser)]
#[command(
    name = "fedsurf",
    version,
    about = "Federated random survival forests in a single communication round"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a configured experiment and write report files.
    Run(RunArgs),
    /// Materialize a federation: per-client training CSVs plus a shared test CSV.
    Split(SplitArgs),
    /// Compute survival metrics for a serialized model on a CSV dataset.
    Eval(EvalArgs),
    /// Host one federation round over TCP and write the merged model.
    Serve(ServeArgs),
    /// Join a TCP federation round as one client.
    Join(JoinArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Directory for report.csv and summary.toml.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Override the configured base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run repetitions sequentially instead of in parallel.
    #[arg(long)]
    serial: bool,
}

#[derive(Args)]
struct CsvArgs {
    /// Input CSV file.
    #[arg(long)]
    data: PathBuf,
    /// Name of the time column.
    #[arg(long)]
    time_column: String,
    /// Name of the event column (values 0/1).
    #[arg(long)]
    event_column: String,
    /// Feature columns (comma-separated); all other columns by default.
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
}

impl CsvArgs {
    fn load(&self) -> Result<SurvivalDataset> {
        load_csv(
            &self.data,
            &self.time_column,
            &self.event_column,
            self.features.as_deref(),
        )
        .with_context(|| format!("loading {}", self.data.display()))
    }
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    csv: CsvArgs,
    /// Number of clients.
    #[arg(long)]
    k: usize,
    /// Dirichlet concentration; "inf" for uniform assignment.
    #[arg(long)]
    alpha: f64,
    /// Fraction of records held out as the shared test set.
    #[arg(long, default_value_t = 0.30)]
    test_fraction: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Directory for test.csv and client_<k>.csv files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Serialized model (JSON, as written by `serve --out`).
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    csv: CsvArgs,
}

#[derive(Args)]
struct ServeArgs {
    /// Listen address; port 0 picks a free port.
    #[arg(long, default_value = "127.0.0.1:7878")]
    bind: String,
    /// Number of clients to wait for.
    #[arg(long)]
    clients: usize,
    /// Global ensemble size T.
    #[arg(long)]
    ensemble_size: usize,
    /// Tree-sampling strategy the clients are expected to apply.
    #[arg(long, default_value = "uniform")]
    strategy: SamplingStrategy,
    /// Seconds to wait for client hellos.
    #[arg(long, default_value_t = 120)]
    hello_timeout: u64,
    /// Seconds to wait for tree uploads after quota assignment.
    #[arg(long, default_value_t = 120)]
    upload_timeout: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Write the merged model (JSON) here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct JoinArgs {
    /// Server address, e.g. 127.0.0.1:7878.
    #[arg(long)]
    server: String,
    #[command(flatten)]
    csv: CsvArgs,
    /// This client's id; must be unique within the federation.
    #[arg(long)]
    client_id: usize,
    /// Fraction of the local data held out for tree evaluation.
    #[arg(long, default_value_t = 0.30)]
    validation_fraction: f64,
    /// Trees in the local forest.
    #[arg(long)]
    n_trees: usize,
    /// Maximum tree depth; unbounded by default.
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long, default_value_t = 6)]
    min_samples_split: usize,
    #[arg(long, default_value_t = 3)]
    min_samples_leaf: usize,
    /// Candidate features per split; ⌊√F⌋ by default.
    #[arg(long)]
    max_features: Option<usize>,
    #[arg(long, default_value = "uniform")]
    strategy: SamplingStrategy,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Split(args) => cmd_split(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Serve(args) => cmd_serve(args),
        Cmd::Join(args) => cmd_join(args),
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let mut config = ExperimentConfig::from_toml_str(&text)?;
    if let Some(seed) = args.seed {
        config.run.seed = seed;
    }
    let report = run_experiment(&config, !args.serial)?;
    let (csv_path, toml_path) = emit_report(&report, &config, &args.out)?;
    print!("{}", fedsurf_core::experiment::report_csv_string(&report));
    if !report.failed_repetitions.is_empty() {
        eprintln!(
            "warning: dropped repetitions {:?}",
            report.failed_repetitions
        );
    }
    println!("report: {}", csv_path.display());
    println!("summary: {}", toml_path.display());
    Ok(())
}

fn cmd_split(args: SplitArgs) -> Result<()> {
    let data = args.csv.load()?;
    let mut config = SplitConfig::new(args.k, args.alpha, args.seed);
    config.test_fraction = args.test_fraction;
    config.validate()?;

    let (train, test) = train_test_split(
        &data,
        config.test_fraction,
        &mut ChaCha12Rng::seed_from_u64(derive(args.seed, stream::SPLIT)),
    )?;
    let parts = label_skew_split(
        &train,
        &config,
        &mut ChaCha12Rng::seed_from_u64(derive(args.seed, stream::SKEW)),
    )?;

    std::fs::create_dir_all(&args.out)?;
    let test_path = args.out.join("test.csv");
    write_csv(&test, &test_path, &args.csv.time_column, &args.csv.event_column)?;
    println!(
        "{}: {} records, {} events",
        test_path.display(),
        test.len(),
        test.n_events()
    );
    for (k, part) in parts.iter().enumerate() {
        let path = args.out.join(format!("client_{k}.csv"));
        write_csv(part, &path, &args.csv.time_column, &args.csv.event_column)?;
        println!(
            "{}: {} records, {} events",
            path.display(),
            part.len(),
            part.n_events()
        );
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.model)
        .with_context(|| format!("reading {}", args.model.display()))?;
    let forest = deserialize_forest(&text)?;
    let data = args.csv.load()?;
    let model_dim = forest.trees[0].n_features;
    if model_dim != data.n_features() {
        bail!(
            "model expects {model_dim} features but {} has {}",
            args.csv.data.display(),
            data.n_features()
        );
    }

    let grid = EvaluationGrid::from_observed(&data)?;
    // A standalone evaluation has no separate training pool, so the
    // censoring distribution comes from the supplied data itself.
    let g = censoring_km(&data);
    let risks = forest.risk_scores(&data)?;

    report_metric("c_harrell", concordance_index(&risks, &data));
    report_metric(
        "c_ipcw",
        concordance_index_ipcw(&risks, &data, &g, grid.tau),
    );
    let curves = forest.survival_curves(&data)?;
    report_metric("ibs", integrated_brier_score(&curves, &data, &grid, &g));
    report_metric("cumulative_auc", cumulative_auc(&risks, &data, &grid, &g));
    Ok(())
}

fn report_metric(name: &str, value: fedsurf_core::Result<f64>) {
    match value {
        Ok(v) => println!("{name} {v:.6}"),
        Err(e) if e.is_metric_undefined() => println!("{name} undefined ({e})"),
        Err(e) => println!("{name} error ({e})"),
    }
}

fn cmd_serve(args: ServeArgs) -> Result<()> {
    let listener = TcpListener::bind(&args.bind)
        .with_context(|| format!("binding {}", args.bind))?;
    println!("listening on {}", listener.local_addr()?);

    let mut opts = ServerOptions::new(args.clients, args.ensemble_size, args.strategy);
    opts.hello_timeout = std::time::Duration::from_secs(args.hello_timeout);
    opts.upload_timeout = std::time::Duration::from_secs(args.upload_timeout);
    let mut rng = ChaCha12Rng::seed_from_u64(derive(args.seed, stream::PLAN));

    let (forest, log) = run_server_on(listener, &opts, &mut rng)?;
    println!(
        "merged {} trees from {} clients (hello {}, upload {}, complete {})",
        forest.trees.len(),
        log.tree_upload,
        log.hello,
        log.tree_upload,
        log.complete
    );
    for excluded in &log.excluded {
        eprintln!("excluded: {excluded}");
    }
    println!("digest {}", log.digest);
    if let Some(path) = &args.out {
        std::fs::write(path, serialize_forest(&forest))?;
        println!("model: {}", path.display());
    }
    Ok(())
}

fn cmd_join(args: JoinArgs) -> Result<()> {
    let data = args.csv.load()?;
    let (train, validation) = validation_split(
        &data,
        args.validation_fraction,
        &mut ChaCha12Rng::seed_from_u64(derive(args.seed, stream::VALIDATION)),
    )?;
    let mut client = ClientState::new(args.client_id, train, validation);

    let mut params = RsfParams::new(args.n_trees, derive(args.seed, stream::CLIENT_TRAIN));
    params.max_depth = args.max_depth;
    params.min_samples_split = args.min_samples_split;
    params.min_samples_leaf = args.min_samples_leaf;
    if let Some(m) = args.max_features {
        params.max_features = MaxFeatures::Fixed(m);
    }
    params.validate()?;

    let mut rng = ChaCha12Rng::seed_from_u64(derive(args.seed, stream::SAMPLE));
    let digest = run_client(&args.server, &mut client, &params, args.strategy, &mut rng)?;
    println!("digest {digest}");
    Ok(())
}
