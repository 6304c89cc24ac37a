use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fpn_core::bench::{run_experiment, ExperimentConfig, ExperimentRecord, IsingSpec, DEFAULT_COUPLING};
use fpn_core::data::{empirical_joint_limited, load_csv, Schema};
use fpn_core::dist::{JointTable, JointTableJson, DEFAULT_DENSE_LIMIT};
use fpn_core::dot::to_dot;
use fpn_core::engine::{run_chain, Evidence, FiringConfig, Process};
use fpn_core::exact::{
    fcd_bound_report, kl_triple, model_stationary, posterior_decomposition_check, stationary_under_evidence,
    FcdReport, KlTriple, PosteriorCheck, StationaryOptions,
};
use fpn_core::learn::{learn_model_traced, Criterion, FallbackPolicy, FpnModel};
use fpn_core::{FpnError, FORMAT_VERSION};

const EXIT_INPUT: u8 = 2;
const EXIT_LIMIT: u8 = 3;
const EXIT_NOT_CONVERGED: u8 = 4;

#[derive(Parser)]
#[command(name = "fpn", version, about = "Learn, sample and analyse firing process networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw samples from a grid Ising model into a CSV file.
    GenIsing(GenIsingArgs),
    /// Learn information sources and tables from a CSV file.
    Learn(LearnArgs),
    /// Run a firing process and write the kept states.
    Sample(SampleArgs),
    /// Compute the exact model distribution.
    Stationary(StationaryArgs),
    /// Print divergence reports for a model against data.
    Eval(EvalArgs),
    /// Render the information-source graph in DOT format.
    ExportDot(ExportDotArgs),
    /// Run an Ising structure-recovery experiment.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct GenIsingArgs {
    #[arg(long)]
    rows: usize,
    #[arg(long)]
    cols: usize,
    #[arg(long, default_value_t = DEFAULT_COUPLING)]
    coupling: f64,
    /// One value for every site or one per site, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    field: Option<Vec<f64>>,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct LearnArgs {
    #[arg(long)]
    data: PathBuf,
    /// JSON schema `{"names": [...], "cards": [...]}`; inferred from the data when absent.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, default_value_t = Criterion::Mdl)]
    criterion: Criterion,
    #[arg(long, default_value = "marginal")]
    fallback: FallbackPolicy,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = Process::Random)]
    process: Process,
    /// Number of kept states.
    #[arg(long)]
    steps: usize,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Clamped variables, e.g. `a=1,b=0`.
    #[arg(long)]
    evidence: Option<String>,
    #[arg(short, long)]
    output: PathBuf,
    /// Metadata path; defaults to the output path with extension `meta.json`.
    #[arg(long)]
    meta: Option<PathBuf>,
}

#[derive(Args)]
struct StationaryArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = Process::Random)]
    process: Process,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    #[arg(long, default_value_t = 1_000_000)]
    max_iter: usize,
    /// Largest number of joint states analysed densely.
    #[arg(long, default_value_t = DEFAULT_DENSE_LIMIT)]
    limit: usize,
    /// Clamped variables; the output covers the remaining variables.
    #[arg(long)]
    evidence: Option<String>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Ground-truth distribution as a joint table JSON file.
    #[arg(long)]
    real: Option<PathBuf>,
    /// Also check the posterior decomposition for every single evidence variable.
    #[arg(long)]
    evidence_check: bool,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    #[arg(long, default_value_t = 1_000_000)]
    max_iter: usize,
    #[arg(long, default_value_t = DEFAULT_DENSE_LIMIT)]
    limit: usize,
    /// Also write the report to this file.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ExportDotArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long, default_value_t = 3)]
    rows: usize,
    #[arg(long, default_value_t = 3)]
    cols: usize,
    #[arg(long, default_value_t = DEFAULT_COUPLING)]
    coupling: f64,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    field: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "8192")]
    n_list: Vec<usize>,
    #[arg(long, default_value_t = Criterion::Mdl)]
    criterion: Criterion,
    #[arg(long, default_value = "marginal")]
    fallback: FallbackPolicy,
    /// Skip the exact model distribution and divergence reports.
    #[arg(long)]
    recovery_only: bool,
    /// JSON lines report, one record per (seed, N).
    #[arg(short, long)]
    output: PathBuf,
    /// Directory receiving one DOT file per learned graph.
    #[arg(long)]
    dot_dir: Option<PathBuf>,
}

/// Power iteration stopped at the iteration cap.
#[derive(Debug)]
struct NotConverged {
    iterations: usize,
    residual: f64,
}

impl std::fmt::Display for NotConverged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "stationary distribution did not converge after {} iterations (residual {:e})",
            self.iterations, self.residual
        )
    }
}

impl std::error::Error for NotConverged {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<NotConverged>().is_some() {
        return EXIT_NOT_CONVERGED;
    }
    match err.downcast_ref::<FpnError>() {
        Some(FpnError::TooLarge { .. } | FpnError::Unsupported(_)) => EXIT_LIMIT,
        _ => EXIT_INPUT,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenIsing(a) => gen_ising(a),
        Command::Learn(a) => learn(a),
        Command::Sample(a) => sample(a),
        Command::Stationary(a) => stationary(a),
        Command::Eval(a) => eval(a),
        Command::ExportDot(a) => export_dot(a),
        Command::Experiment(a) => experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    text
}

fn load_model(path: &Path) -> anyhow::Result<FpnModel> {
    FpnModel::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn parse_evidence(text: Option<&str>, schema: &Schema) -> anyhow::Result<Evidence> {
    Ok(match text {
        Some(t) => Evidence::parse(t, schema)?,
        None => Evidence::new(),
    })
}

fn ising_spec(rows: usize, cols: usize, coupling: f64, field: Option<Vec<f64>>) -> anyhow::Result<IsingSpec> {
    let spec = IsingSpec::new(rows, cols, coupling)?;
    Ok(match field {
        Some(h) => spec.with_field(h)?,
        None => spec,
    })
}

fn gen_ising(a: GenIsingArgs) -> anyhow::Result<()> {
    let spec = ising_spec(a.rows, a.cols, a.coupling, a.field)?;
    let data = fpn_core::bench::ising_sample(&spec, a.n, a.seed)?;
    write_atomic(&a.output, data.to_csv_string().as_bytes())
}

fn learn(a: LearnArgs) -> anyhow::Result<()> {
    let schema = a.schema.as_deref().map(Schema::from_json_file).transpose()?;
    let data = load_csv(&a.data, schema.as_ref()).with_context(|| format!("reading {}", a.data.display()))?;
    let (model, selections) = learn_model_traced(&data, a.criterion, a.fallback)?;
    let names = data.schema().names();
    let mut out = std::io::stdout().lock();
    for (i, sel) in selections.iter().enumerate() {
        let sources: Vec<&str> = sel.spec.sources().iter().map(|&j| names[j].as_str()).collect();
        writeln!(out, "{}\tsources=[{}]\tscore={}", names[i], sources.join(","), sel.score)?;
    }
    write_atomic(&a.output, model.to_json_string().as_bytes())
}

fn sample(a: SampleArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let evidence = parse_evidence(a.evidence.as_deref(), model.schema())?;
    let cfg = FiringConfig {
        process: a.process,
        c: None,
        burn_in: a.burn_in,
        thin: a.thin,
        steps: a.steps,
        seed: a.seed,
        evidence,
    };
    let run = run_chain(&model, &cfg)?;
    let meta = a.meta.unwrap_or_else(|| a.output.with_extension("meta.json"));
    write_atomic(&a.output, run.samples.to_csv_string().as_bytes())?;
    write_atomic(&meta, to_json(&run.metadata).as_bytes())
}

#[derive(Serialize)]
struct StationaryFile {
    format_version: u32,
    #[serde(flatten)]
    table: JointTableJson,
    process: Process,
    evidence: std::collections::BTreeMap<String, usize>,
    converged: bool,
    iterations: usize,
    residual: f64,
    tol: f64,
    max_iter: usize,
}

fn stationary(a: StationaryArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let evidence = parse_evidence(a.evidence.as_deref(), model.schema())?;
    let opts = StationaryOptions {
        tol: a.tol,
        max_iter: a.max_iter,
        limit: a.limit,
    };
    let result = if evidence.is_empty() {
        model_stationary(&model, a.process, &opts)
    } else {
        stationary_under_evidence(&model, &evidence, a.process, &opts)
    };
    let result = result.map_err(|e| match e {
        FpnError::TooLarge { .. } => anyhow!(e).context("exact model distribution is intractable"),
        e => anyhow!(e),
    })?;
    if !result.converged {
        bail!(NotConverged {
            iterations: result.iterations,
            residual: result.residual,
        });
    }
    let names = model.schema().names();
    let file = StationaryFile {
        format_version: FORMAT_VERSION,
        table: result.dist.to_json(),
        process: a.process,
        evidence: evidence.iter().map(|(v, x)| (names[v].clone(), x)).collect(),
        converged: result.converged,
        iterations: result.iterations,
        residual: result.residual,
        tol: a.tol,
        max_iter: a.max_iter,
    };
    write_atomic(&a.output, to_json(&file).as_bytes())
}

#[derive(Serialize)]
struct EvalReport {
    format_version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    kl: Option<KlTriple>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model_closer_to_data: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model_closer_to_truth: Option<bool>,
    fcd: FcdReport,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    posterior_checks: Vec<PosteriorCheck>,
}

fn load_table(path: &Path) -> anyhow::Result<JointTable> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let json: JointTableJson = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(JointTable::from_json(json)?)
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let data = load_csv(&a.data, Some(model.schema())).with_context(|| format!("reading {}", a.data.display()))?;
    let opts = StationaryOptions {
        tol: a.tol,
        max_iter: a.max_iter,
        limit: a.limit,
    };
    let pi = empirical_joint_limited(&data, a.limit)?;
    let stat = model_stationary(&model, Process::Random, &opts)?;
    if !stat.converged {
        bail!(NotConverged {
            iterations: stat.iterations,
            residual: stat.residual,
        });
    }
    let fcd = fcd_bound_report(&model, &pi, Process::Random, &opts)?;
    let mut report = EvalReport {
        format_version: FORMAT_VERSION,
        kl: None,
        model_closer_to_data: None,
        model_closer_to_truth: None,
        fcd,
        posterior_checks: Vec::new(),
    };
    if let Some(path) = &a.real {
        let real = load_table(path)?;
        if real.space().cards() != model.schema().cards() {
            bail!(FpnError::SpaceMismatch);
        }
        let triple = kl_triple(&pi, &stat.dist, &real)?;
        report.model_closer_to_data = Some(triple.model_closer_to_data());
        report.model_closer_to_truth = Some(triple.model_closer_to_truth());
        report.kl = Some(triple);
    }
    if a.evidence_check && model.num_nodes() > 1 {
        for f in 0..model.num_nodes() {
            report.posterior_checks.push(posterior_decomposition_check(&model, &pi, &[f])?);
        }
    }
    let text = to_json(&report);
    print!("{text}");
    if let Some(path) = &a.output {
        write_atomic(path, text.as_bytes())?;
    }
    Ok(())
}

fn export_dot(a: ExportDotArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    write_atomic(&a.output, to_dot(&model).as_bytes())
}

#[derive(Serialize)]
struct ExperimentLine<'a> {
    format_version: u32,
    #[serde(flatten)]
    record: &'a ExperimentRecord,
}

fn experiment(a: ExperimentArgs) -> anyhow::Result<()> {
    if a.seeds.is_empty() || a.n_list.is_empty() {
        bail!(FpnError::InvalidConfig("need at least one seed and one sample size".into()));
    }
    let spec = ising_spec(a.rows, a.cols, a.coupling, a.field)?;
    let mut cfg = ExperimentConfig::new(spec, a.seeds, a.n_list, !a.recovery_only);
    cfg.criterion = a.criterion;
    cfg.fallback = a.fallback;
    let cells = run_experiment(&cfg)?;
    let mut lines = String::new();
    for cell in &cells {
        let line = ExperimentLine {
            format_version: FORMAT_VERSION,
            record: &cell.record,
        };
        lines.push_str(&serde_json::to_string(&line)?);
        lines.push('\n');
    }
    write_atomic(&a.output, lines.as_bytes())?;
    if let Some(dir) = &a.dot_dir {
        std::fs::create_dir_all(dir)?;
        for cell in &cells {
            let name = format!("seed{}_n{}.dot", cell.record.seed, cell.record.n);
            write_atomic(&dir.join(name), to_dot(&cell.model).as_bytes())?;
        }
    }
    Ok(())
}
