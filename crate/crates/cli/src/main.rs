use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use blockfactor::error::{DataError, ModelError};
use blockfactor::estimation::{fit, FitConfig, Warning};
use blockfactor::experiments::{run_scenario, ExperimentReport, ScenarioFile};
use blockfactor::io::{parse_partition, ModelDocument, SelectionDocument, DEFAULT_SEED};
use blockfactor::model::{log_likelihood, model_cramers_matrix, sample, Model};
use blockfactor::selection::{empirical_cramers_matrix, select_hac_with, select_mh, Linkage, MhConfig};
use blockfactor::BinaryDataset;
use clap::{Args, Parser, Subcommand, ValueEnum};

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("BLOCKFACTOR_BUILD_HASH"), ")");

const EXIT_FAILURE: u8 = 1;
const EXIT_MALFORMED: u8 = 2;
const EXIT_MISMATCH: u8 = 3;
const EXIT_USAGE: u8 = 4;

/// Blockwise one-factor models for binary data.
#[derive(Parser)]
#[command(name = "blockfactor", version = VERSION)]
struct Cli {
    /// Worker threads; 0 picks one per core.
    #[arg(long, global = true, env = "BLOCKFACTOR_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model with a given partition of the columns.
    Fit(FitCmd),
    /// Choose the partition by BIC.
    Select(SelectCmd),
    /// Draw rows from a model.
    Sample(SampleCmd),
    /// Log-likelihood of data under a model.
    Loglik(LoglikCmd),
    /// Cramér's V matrix from data, from a model, or both side by side.
    Cramer(CramerCmd),
    /// Run simulation scenarios.
    Experiment(ExperimentCmd),
}

#[derive(Args)]
struct FitArgs {
    /// Random EM initializations per block.
    #[arg(long, default_value_t = 40)]
    restarts: usize,
    /// EM stops when an iteration gains less than this.
    #[arg(long, default_value_t = 0.01)]
    tol: f64,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

impl FitArgs {
    fn config(&self) -> Result<FitConfig, Failure> {
        let cfg = FitConfig {
            restarts: self.restarts,
            tol: self.tol,
            max_iter: self.max_iter,
            seed: self.seed,
        };
        cfg.validate().map_err(|e| Failure::new(EXIT_USAGE, anyhow!(e)))?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct FitCmd {
    #[arg(long)]
    data: PathBuf,
    /// Column groups such as `[[A,B],[C]]`, or one label per column such as
    /// `[1,1,2]`.
    #[arg(long)]
    partition: String,
    #[command(flatten)]
    fit: FitArgs,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Hac,
    Mh,
}

#[derive(Clone, Copy, ValueEnum)]
enum LinkageArg {
    Ward,
    Single,
    Complete,
    Average,
}

impl From<LinkageArg> for Linkage {
    fn from(l: LinkageArg) -> Self {
        match l {
            LinkageArg::Ward => Linkage::Ward,
            LinkageArg::Single => Linkage::Single,
            LinkageArg::Complete => Linkage::Complete,
            LinkageArg::Average => Linkage::Average,
        }
    }
}

#[derive(Args)]
struct SelectCmd {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "hac")]
    method: MethodArg,
    #[arg(long, value_enum, default_value = "ward")]
    linkage: LinkageArg,
    #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u64).range(1..))]
    mh_iters: u64,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    mh_chains: u64,
    /// Refit every block instead of reusing earlier fits.
    #[arg(long)]
    no_cache: bool,
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the candidate BIC table here.
    #[arg(long)]
    candidates_csv: Option<PathBuf>,
}

#[derive(Args)]
struct SampleCmd {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LoglikCmd {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct CramerCmd {
    #[arg(long, required_unless_present = "model")]
    data: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentCmd {
    /// JSON file with one scenario or a list of scenarios.
    #[arg(long)]
    scenario: PathBuf,
    /// Summary CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-replicate CSV.
    #[arg(long)]
    replicates_out: Option<PathBuf>,
    /// JSON metadata sidecar.
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Include wall-clock seconds in the outputs.
    #[arg(long)]
    timing: bool,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: anyhow::Error) -> Self {
        Self { code, error }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self::new(EXIT_FAILURE, error)
    }
}

impl From<io::Error> for Failure {
    fn from(error: io::Error) -> Self {
        Self::new(EXIT_FAILURE, error.into())
    }
}

fn model_error_code(e: &ModelError) -> u8 {
    match e {
        ModelError::PartitionSize { .. }
        | ModelError::UnknownVariable(_)
        | ModelError::RepeatedVariable(_)
        | ModelError::UnassignedVariable(_)
        | ModelError::EmptyBlock => EXIT_MISMATCH,
        _ => EXIT_MALFORMED,
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(Failure::from)
}

fn read_data(path: &Path) -> Result<BinaryDataset, Failure> {
    let file = fs::File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    BinaryDataset::read_csv(io::BufReader::new(file)).map_err(|e| {
        let code = match e {
            DataError::Csv(ref inner) if inner.is_io_error() => EXIT_FAILURE,
            _ => EXIT_MALFORMED,
        };
        Failure::new(
            code,
            anyhow!(e).context(format!("invalid data file {}", path.display())),
        )
    })
}

fn read_model(path: &Path) -> Result<Model, Failure> {
    let text = read_text(path)?;
    ModelDocument::from_json(&text)
        .and_then(|doc| doc.to_model())
        .map_err(|e| {
            Failure::new(
                EXIT_MALFORMED,
                anyhow!(e).context(format!("invalid model file {}", path.display())),
            )
        })
}

/// Columns of `data` reordered to match the model's variables.
fn align(data: &BinaryDataset, model: &Model) -> Result<BinaryDataset, Failure> {
    let order = model
        .names()
        .iter()
        .map(|name| {
            data.column_index(name).ok_or_else(|| {
                Failure::new(
                    EXIT_MISMATCH,
                    anyhow!("model variable {name:?} is not a column of the data"),
                )
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    if order.len() != data.d() {
        let extra: Vec<&String> = data.names().iter().filter(|n| !model.names().contains(n)).collect();
        return Err(Failure::new(
            EXIT_MISMATCH,
            anyhow!("data columns {extra:?} are not variables of the model"),
        ));
    }
    Ok(data.select_columns(&order))
}

fn emit(out: Option<&Path>, content: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, content).with_context(|| format!("cannot write {}", path.display()))?,
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(content.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn warn_all(warnings: &[Warning]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn cmd_fit(cmd: &FitCmd) -> Result<(), Failure> {
    let cfg = cmd.fit.config()?;
    let data = read_data(&cmd.data)?;
    let partition = parse_partition(&cmd.partition, data.names())
        .map_err(|e| Failure::new(model_error_code(&e), anyhow!(e).context("invalid partition")))?;
    let fitted = fit(&data, &partition, &cfg);
    warn_all(&fitted.warnings);
    emit(cmd.out.as_deref(), &ModelDocument::from_fitted(&fitted).to_json())
}

fn cmd_select(cmd: &SelectCmd) -> Result<(), Failure> {
    let cfg = cmd.fit.config()?;
    let data = read_data(&cmd.data)?;
    let result = match cmd.method {
        MethodArg::Hac => select_hac_with(&data, &cfg, cmd.linkage.into(), !cmd.no_cache),
        MethodArg::Mh => {
            let mh = MhConfig {
                iterations: cmd.mh_iters as usize,
                chains: cmd.mh_chains as usize,
                memoize: !cmd.no_cache,
            };
            select_mh(&data, &cfg, &mh)
        }
    };
    warn_all(&result.warnings);
    let doc = SelectionDocument::from_result(&result);
    if let Some(path) = &cmd.candidates_csv {
        emit(Some(path), &doc.candidates_csv())?;
    }
    emit(cmd.out.as_deref(), &doc.to_json())
}

fn cmd_sample(cmd: &SampleCmd) -> Result<(), Failure> {
    let model = read_model(&cmd.model)?;
    let data = sample(&model, cmd.n as usize, cmd.seed);
    let mut buf = Vec::new();
    data.write_csv(&mut buf)?;
    emit(
        cmd.out.as_deref(),
        &String::from_utf8(buf).expect("csv output is utf-8"),
    )
}

fn cmd_loglik(cmd: &LoglikCmd) -> Result<(), Failure> {
    let model = read_model(&cmd.model)?;
    let data = align(&read_data(&cmd.data)?, &model)?;
    let ll = log_likelihood(&model, &data).map_err(|e| Failure::new(EXIT_MISMATCH, e.into()))?;
    emit(None, &format!("{ll}\n"))
}

fn matrix_csv(source: &str, names: &[String], m: &[Vec<f64>]) -> String {
    let mut out = format!("# source: {source}\n");
    out.push_str("variable");
    for name in names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (name, row) in names.iter().zip(m) {
        out.push_str(name);
        for v in row {
            out.push_str(&format!(",{v:.6}"));
        }
        out.push('\n');
    }
    out
}

fn cmd_cramer(cmd: &CramerCmd) -> Result<(), Failure> {
    let model = cmd.model.as_deref().map(read_model).transpose()?;
    let data = cmd.data.as_deref().map(read_data).transpose()?;
    let content = match (data, model) {
        (Some(data), None) => {
            let (v, warnings) = empirical_cramers_matrix(&data);
            warn_all(&warnings);
            matrix_csv("empirical", data.names(), &v)
        }
        (None, Some(model)) => matrix_csv("model", model.names(), &model_cramers_matrix(&model)),
        (Some(data), Some(model)) => {
            let data = align(&data, &model)?;
            let (emp, warnings) = empirical_cramers_matrix(&data);
            warn_all(&warnings);
            let implied = model_cramers_matrix(&model);
            let names = model.names();
            let mut out =
                String::from("# source: empirical and model\nvariable_1,variable_2,same_block,empirical,model\n");
            for j in 0..names.len() {
                for k in j + 1..names.len() {
                    out.push_str(&format!(
                        "{},{},{},{:.6},{:.6}\n",
                        names[j],
                        names[k],
                        model.partition().same_block(j, k),
                        emp[j][k],
                        implied[j][k]
                    ));
                }
            }
            out
        }
        (None, None) => unreachable!("clap requires --data or --model"),
    };
    emit(cmd.out.as_deref(), &content)
}

fn cmd_experiment(cmd: &ExperimentCmd) -> Result<(), Failure> {
    let text = read_text(&cmd.scenario)?;
    let scenarios = serde_json::from_str::<ScenarioFile>(&text)
        .map_err(|e| {
            Failure::new(
                EXIT_MALFORMED,
                anyhow!(e).context(format!("invalid scenario file {}", cmd.scenario.display())),
            )
        })?
        .into_vec();
    for (i, s) in scenarios.iter().enumerate() {
        s.validate()
            .map_err(|e| Failure::new(EXIT_USAGE, anyhow!("scenario {}: {e}", i + 1)))?;
    }
    let start = Instant::now();
    let mut summary = ExperimentReport::summary_header(cmd.timing);
    let mut replicates = ExperimentReport::replicate_header(cmd.timing);
    for s in &scenarios {
        let report = run_scenario(s).map_err(|e| Failure::new(EXIT_USAGE, anyhow!(e)))?;
        for r in &report.records {
            warn_all(&r.warnings);
        }
        summary.push_str(&report.summary_rows(cmd.timing));
        replicates.push_str(&report.replicate_rows(cmd.timing));
    }
    if let Some(path) = &cmd.replicates_out {
        emit(Some(path), &replicates)?;
    }
    if let Some(path) = &cmd.meta {
        let mut meta = serde_json::json!({
            "version": VERSION,
            "scenarios": scenarios,
        });
        if cmd.timing {
            meta["wall_seconds"] = start.elapsed().as_secs_f64().into();
        }
        let mut text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
        text.push('\n');
        emit(Some(path), &text)?;
    }
    emit(cmd.out.as_deref(), &summary)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("cannot start the thread pool")?;
    }
    match &cli.command {
        Command::Fit(c) => cmd_fit(c),
        Command::Select(c) => cmd_select(c),
        Command::Sample(c) => cmd_sample(c),
        Command::Loglik(c) => cmd_loglik(c),
        Command::Cramer(c) => cmd_cramer(c),
        Command::Experiment(c) => cmd_experiment(c),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
