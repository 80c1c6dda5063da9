//! Command-line front end: fitting, residual analysis, data generation and
//! simulation studies.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use cellgmm::estimator::{evaluate, residual_threshold, standardized_residuals};
use cellgmm::io::{default_headers, read_params, read_table_path, write_bool_matrix, write_dataset, write_matrix, write_params, write_rows};
use cellgmm::simlab::{build_scenario, generate, Contamination, ScenarioSpec};
use cellgmm::study::{run_study, write_results, write_summary, Method, OutlierKind, StudyConfig};
use cellgmm::{fit, CellMask, DataSet, Error, FitConfig, InitConfig, PenaltyMode};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Environment variable that overrides `--seed` when set.
pub const SEED_ENV: &str = "CELLGMM_SEED";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "cellgmm", version, about = "Cellwise-robust Gaussian mixture clustering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a mixture to a CSV file.
    Fit(FitArgs),
    /// Standardized cellwise residuals under fitted parameters.
    Residuals(ResidualsArgs),
    /// Draw one synthetic data set.
    Generate(GenerateArgs),
    /// Run a seeded simulation study.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args, Clone)]
pub struct ModelArgs {
    /// Fraction of rows kept reliable in every column.
    #[arg(long, default_value_t = 0.75)]
    pub h_frac: f64,
    /// Bound on the covariance eigenvalue ratio.
    #[arg(long, default_value_t = 50.0)]
    pub c: f64,
    /// Tail probability of the penalty cut-off.
    #[arg(long, default_value_t = 0.01)]
    pub alpha: f64,
    /// Assumed contamination level driving the initialization.
    #[arg(long, default_value_t = 0.03)]
    pub alpha_init: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Aitken tolerance.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    /// Root seed; overridden by the CELLGMM_SEED environment variable.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Input CSV with a header row.
    pub input: PathBuf,
    #[arg(long)]
    pub g: usize,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Run the penalized phase (default).
    #[arg(long, overrides_with = "no_penalized")]
    pub penalized: bool,
    /// Stop after the unpenalized phase.
    #[arg(long)]
    pub no_penalized: bool,
    /// Exit successfully even if the fit did not converge.
    #[arg(long)]
    pub allow_nonconverged: bool,
    #[arg(long, short, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ResidualsArgs {
    pub input: PathBuf,
    /// params.json written by `fit`.
    #[arg(long)]
    pub params: PathBuf,
    /// Optional mask.csv from `fit`; all observed cells are reliable otherwise.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, short, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct ScenarioArgs {
    /// Canonical scenario 1 to 6.
    #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
    pub scenario: Option<String>,
    /// Custom scenario specification in JSON.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Outlier mechanism: standard, extreme or structural:<gamma>.
    #[arg(long, default_value = "standard")]
    pub outliers: String,
    /// Fraction of uncontaminated cells removed at random.
    #[arg(long, default_value_t = 0.0)]
    pub missing_rate: f64,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Contamination level in percent.
    #[arg(long, default_value_t = 0)]
    pub contamination: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Contamination levels in percent.
    #[arg(long, value_delimiter = ',', default_value = "5")]
    pub contamination: Vec<u32>,
    /// Methods to compare: pen0, penb.
    #[arg(long, value_delimiter = ',', default_value = "penb")]
    pub methods: Vec<String>,
    #[arg(long, default_value_t = 20)]
    pub replicates: usize,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Record wall time per fit in the seconds column.
    #[arg(long)]
    pub timing: bool,
    /// Use --alpha-init at every level. By default the initialization
    /// assumes each nonzero contamination level is known.
    #[arg(long)]
    pub fixed_alpha_init: bool,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, short, default_value = ".")]
    pub out: PathBuf,
}

/// Failure carrying the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub kind: String,
    pub message: String,
}

impl Failure {
    fn invalid(kind: &str, message: impl Into<String>) -> Self {
        Self { code: EXIT_INVALID, kind: kind.into(), message: message.into() }
    }

    /// Machine-readable report for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.kind, "message": self.message, "exit_code": self.code }).to_string()
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::invalid(e.kind(), e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::invalid("Io", e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::invalid("Json", e.to_string())
    }
}

type CmdResult = std::result::Result<i32, Failure>;

#[derive(Debug, Serialize)]
struct Artifact {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct RunManifest {
    command: String,
    config: serde_json::Value,
    seed: u64,
    inputs: Vec<Artifact>,
    outputs: Vec<Artifact>,
    wall_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    outcome: Option<serde_json::Value>,
}

fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn artifact(path: &Path) -> std::io::Result<Artifact> {
    Ok(Artifact { path: path.display().to_string(), sha256: sha256_file(path)? })
}

/// Collects the files a command writes and emits manifest.json last.
struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    fn write(&mut self, name: &str, f: impl FnOnce(BufWriter<File>) -> cellgmm::Result<()>) -> std::result::Result<(), Failure> {
        let path = self.dir.join(name);
        f(BufWriter::new(File::create(&path)?))?;
        self.written.push(path);
        Ok(())
    }

    fn finish(
        self,
        command: &str,
        config: serde_json::Value,
        seed: u64,
        inputs: &[&Path],
        start: Instant,
        outcome: Option<serde_json::Value>,
    ) -> std::result::Result<(), Failure> {
        let manifest = RunManifest {
            command: command.into(),
            config,
            seed,
            inputs: inputs.iter().map(|p| artifact(p)).collect::<std::io::Result<_>>()?,
            outputs: self.written.iter().map(|p| artifact(p)).collect::<std::io::Result<_>>()?,
            wall_seconds: start.elapsed().as_secs_f64(),
            outcome,
        };
        let mut f = BufWriter::new(File::create(self.dir.join("manifest.json"))?);
        serde_json::to_writer_pretty(&mut f, &manifest)?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    }
}

/// `--seed`, unless the environment override is set.
pub fn effective_seed(flag: u64) -> std::result::Result<u64, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| Failure::invalid("InvalidConfig", format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(flag),
    }
}

fn fit_config(g: usize, model: &ModelArgs, penalty_mode: PenaltyMode, seed: u64) -> std::result::Result<(FitConfig, InitConfig), Failure> {
    let cfg = FitConfig {
        g,
        h_frac: model.h_frac,
        c: model.c,
        penalty_mode,
        alpha_quantile: model.alpha,
        max_iter: model.max_iter,
        epsilon: model.tol,
        seed,
        n_restarts: model.restarts,
    };
    cfg.check()?;
    if !(model.alpha_init > 0.0 && model.alpha_init < 0.25) {
        return Err(Failure::invalid("InvalidConfig", format!("alpha-init must lie in (0, 0.25), got {}", model.alpha_init)));
    }
    let init = InitConfig::from_alpha(model.alpha_init);
    init.check()?;
    Ok((cfg, init))
}

pub fn cmd_fit(args: &FitArgs) -> CmdResult {
    let start = Instant::now();
    let seed = effective_seed(args.model.seed)?;
    let mode = if args.no_penalized && !args.penalized { PenaltyMode::None } else { PenaltyMode::Auto };
    let (cfg, init) = fit_config(args.g, &args.model, mode, seed)?;
    let table = read_table_path(&args.input)?;
    let result = fit(&table.data, &cfg, &init)?;
    let (n, g) = (table.data.n(), cfg.g);

    let mut out = Outputs::new(&args.out)?;
    out.write("params.json", |w| write_params(w, &result.params))?;
    out.write("mask.csv", |w| write_bool_matrix(w, &table.headers, result.mask.matrix()))?;
    out.write("imputed.csv", |w| write_matrix(w, &table.headers, &result.imputed))?;
    out.write("residuals.csv", |w| write_matrix(w, &table.headers, &result.residuals))?;
    let labels = result.labels();
    let mut headers = vec!["row".to_string(), "cluster".to_string()];
    headers.extend((1..=g).map(|k| format!("z_{k}")));
    let rows = (0..n).map(|i| {
        let mut rec = vec![(i + 1).to_string(), (labels[i] + 1).to_string()];
        rec.extend((0..g).map(|k| cellgmm::io::format_value(result.posterior.z[(i, k)])));
        rec
    });
    out.write("assignments.csv", |w| write_rows(w, &headers, rows))?;
    let outcome = serde_json::json!({
        "converged": result.converged,
        "iterations": result.iterations,
        "objective": result.objective(),
        "objective_trace": result.objective_trace,
    });
    let config = serde_json::json!({ "fit": cfg, "init": init });
    out.finish("fit", config, seed, &[&args.input], start, Some(outcome))?;
    if !result.converged && !args.allow_nonconverged {
        return Err(Failure {
            code: EXIT_NOT_CONVERGED,
            kind: "NoConvergence".into(),
            message: format!("no convergence after {} iterations; outputs were written", result.iterations),
        });
    }
    Ok(EXIT_OK)
}

fn read_mask(path: &Path, data: &DataSet) -> std::result::Result<CellMask, Failure> {
    let table = read_table_path(path)?;
    let m = table.data.values();
    if m.shape() != (data.n(), data.p()) {
        return Err(Failure::invalid("ShapeMismatch", format!("mask is {:?}, data is {:?}", m.shape(), (data.n(), data.p()))));
    }
    if m.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Failure::invalid("Parse", "mask entries must be 0 or 1"));
    }
    let mut mask = CellMask::new(m.map(|v| v == 1.0));
    mask.restrict_to_observed(data);
    Ok(mask)
}

pub fn cmd_residuals(args: &ResidualsArgs) -> CmdResult {
    let start = Instant::now();
    let table = read_table_path(&args.input)?;
    let params = read_params(File::open(&args.params)?)?;
    let data = &table.data;
    if params.p() != data.p() {
        return Err(Failure::invalid("SchemaMismatch", format!("params have p = {}, data has p = {}", params.p(), data.p())));
    }
    let mask = match &args.mask {
        Some(path) => read_mask(path, data)?,
        None => CellMask::from_observed(data),
    };
    let (_, posterior) = evaluate(data, &mask, &params)?;
    let residuals = standardized_residuals(data, &mask, &params, &posterior)?;
    let threshold = residual_threshold();
    let mut flagged: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..data.n() {
        for j in 0..data.p() {
            let r = residuals[(i, j)];
            if r.is_finite() && r.abs() > threshold {
                flagged.push((i, j, r));
            }
        }
    }
    flagged.sort_by(|a, b| b.2.abs().total_cmp(&a.2.abs()).then((a.0, a.1).cmp(&(b.0, b.1))));

    let mut out = Outputs::new(&args.out)?;
    out.write("residuals.csv", |w| write_matrix(w, &table.headers, &residuals))?;
    let headers: Vec<String> = ["row", "column", "variable", "residual"].map(String::from).to_vec();
    let rows = flagged.iter().map(|&(i, j, r)| vec![(i + 1).to_string(), (j + 1).to_string(), table.headers[j].clone(), cellgmm::io::format_value(r)]);
    out.write("flags.csv", |w| write_rows(w, &headers, rows))?;
    let mut inputs: Vec<&Path> = vec![&args.input, &args.params];
    if let Some(m) = &args.mask {
        inputs.push(m);
    }
    let outcome = serde_json::json!({ "threshold": threshold, "flagged": flagged.len() });
    out.finish("residuals", serde_json::json!({}), 0, &inputs, start, Some(outcome))?;
    Ok(EXIT_OK)
}

fn load_scenario(args: &ScenarioArgs) -> std::result::Result<(String, ScenarioSpec), Failure> {
    if !(0.0..1.0).contains(&args.missing_rate) {
        return Err(Failure::invalid("InvalidConfig", format!("missing rate must lie in [0, 1), got {}", args.missing_rate)));
    }
    match (&args.scenario, &args.spec) {
        (Some(id), _) => Ok((id.clone(), build_scenario(id)?)),
        (None, Some(path)) => {
            let spec: ScenarioSpec = serde_json::from_reader(File::open(path)?)?;
            spec.check()?;
            Ok((spec.name.clone(), spec))
        }
        (None, None) => Err(Failure::invalid("InvalidConfig", "either --scenario or --spec is required")),
    }
}

fn check_pct(pct: u32) -> std::result::Result<(), Failure> {
    if pct >= 50 {
        return Err(Failure::invalid("InvalidConfig", format!("contamination must be below 50 percent, got {pct}")));
    }
    Ok(())
}

pub fn cmd_generate(args: &GenerateArgs) -> CmdResult {
    let start = Instant::now();
    let seed = effective_seed(args.seed)?;
    check_pct(args.contamination)?;
    let (_, base) = load_scenario(&args.scenario)?;
    let kind: OutlierKind = args.scenario.outliers.parse()?;
    let mut spec = if args.contamination == 0 {
        ScenarioSpec { contamination: Contamination::None, contamination_rate: 0.0, ..base }
    } else {
        base.with_contamination(kind.contamination(), f64::from(args.contamination) / 100.0)
    };
    spec.missing_rate = args.scenario.missing_rate;
    let truth = generate(&spec, cellgmm::rng::SeedStream::new(seed))?;
    let headers = default_headers(spec.p);

    let mut out = Outputs::new(&args.out)?;
    let data = truth.dataset()?;
    out.write("data.csv", |w| write_dataset(w, &headers, &data))?;
    out.write("clean.csv", |w| write_matrix(w, &headers, &truth.clean_values))?;
    out.write("outliers.csv", |w| write_bool_matrix(w, &headers, &truth.outlier_mask))?;
    out.write("missing.csv", |w| write_bool_matrix(w, &headers, &truth.missing_mask))?;
    let rows = truth.labels.iter().map(|l| vec![(l + 1).to_string()]);
    out.write("labels.csv", |w| write_rows(w, &["label".to_string()], rows))?;
    out.write("truth.json", |w| serde_json::to_writer_pretty(w, &truth).map_err(Error::from))?;
    out.finish("generate", serde_json::to_value(&spec)?, seed, &[], start, None)?;
    Ok(EXIT_OK)
}

pub fn cmd_simulate(args: &SimulateArgs) -> CmdResult {
    let start = Instant::now();
    let seed = effective_seed(args.model.seed)?;
    for &pct in &args.contamination {
        check_pct(pct)?;
    }
    let (label, scenario) = load_scenario(&args.scenario)?;
    let outliers: OutlierKind = args.scenario.outliers.parse()?;
    let methods = args.methods.iter().map(|m| m.parse::<Method>()).collect::<cellgmm::Result<Vec<_>>>()?;
    let (fit_cfg, init) = fit_config(scenario.g, &args.model, PenaltyMode::Auto, seed)?;
    let mut pct_out = args.contamination.clone();
    pct_out.sort_unstable();
    pct_out.dedup();
    let mut methods = methods;
    methods.sort_unstable();
    methods.dedup();
    let cfg = StudyConfig {
        label,
        scenario,
        pct_out,
        outliers,
        missing_rate: args.scenario.missing_rate,
        methods,
        replicates: args.replicates,
        seed,
        jobs: args.jobs,
        fit: fit_cfg,
        init,
        init_from_level: !args.fixed_alpha_init,
        timing: args.timing,
    };
    let rows = run_study(&cfg)?;
    let g = cfg.scenario.g;
    let failures = rows.iter().filter(|r| r.error.is_some()).count();

    let mut out = Outputs::new(&args.out)?;
    out.write("results.csv", |w| write_results(w, g, &rows))?;
    out.write("summary.csv", |w| write_summary(w, g, &rows))?;
    let config = serde_json::json!({
        "scenario": cfg.scenario,
        "label": cfg.label,
        "pct_out": cfg.pct_out,
        "outliers": cfg.outliers.to_string(),
        "missing_rate": cfg.missing_rate,
        "methods": cfg.methods,
        "replicates": cfg.replicates,
        "jobs": cfg.jobs,
        "fit": cfg.fit,
        "init": cfg.init,
    });
    let errors: Vec<serde_json::Value> = rows
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| serde_json::json!({ "pct_out": r.pct_out, "replicate": r.replicate, "method": r.method, "error": e })))
        .collect();
    let outcome = serde_json::json!({ "rows": rows.len(), "failed": failures, "errors": errors });
    out.finish("simulate", config, seed, &[], start, Some(outcome))?;
    Ok(EXIT_OK)
}

pub fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Residuals(a) => cmd_residuals(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}

/// Parses `args`, runs the command and returns the exit code. Errors are
/// reported as JSON on stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return EXIT_OK;
            }
            let failure = Failure::invalid("InvalidArguments", e.to_string().trim_end());
            eprintln!("{}", failure.to_json());
            return failure.code;
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("{}", failure.to_json());
            failure.code
        }
    }
}
