//! Argument parsing and subcommand drivers for the `gmml` binary.
//!
//! Each `cmd_*` function writes its human-readable output to the supplied
//! writer so it can be driven from tests as well as from `main`.

use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gmml::eval::{
    cross_validate_t, default_constraint_count, evaluate_with_metric, half_split, run_benchmark,
    sample_constraints, BenchmarkOptions, CvPolicy, EvalReport, MetricMode, RunRecord, SplitPlan, TSelection,
    DEFAULT_COARSE_GRID, DEFAULT_CV_FOLDS, DEFAULT_FINE_COUNT, DEFAULT_FINE_SPACING, DEFAULT_K,
};
use gmml::io::{self, Delimiter, LoadOptions, ReportFormat};
use gmml::{learn, GmmlConfig, LabeledDataset, LearnedMetric, Prior, SpdMatrix, Standardizer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] gmml::Error),
    #[error("failed to write output: {0}")]
    Output(#[from] std::io::Error),
    #[error("all {0} runs failed")]
    AllRunsFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(gmml::Error::InvalidParameter { .. }) => EXIT_USAGE,
            CliError::Core(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Core(e) if e.is_data() => EXIT_DATA,
            CliError::Core(_) | CliError::Output(_) => EXIT_FAILURE,
            CliError::AllRunsFailed(_) => EXIT_NUMERICAL,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "gmml", version, about = "Geometric mean metric learning and k-NN evaluation")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a metric from a labelled dataset and write it to a file.
    Learn(LearnArgs),
    /// Classify a test set with k-NN under a given or freshly learned metric.
    Eval(EvalArgs),
    /// Repeated random-split evaluation with cross-validated t.
    Benchmark(BenchmarkArgs),
}

/// Geodesic step: a number in [0, 1] or `cv` for cross-validation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TArg {
    Fixed(f64),
    Cv,
}

impl FromStr for TArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("cv") {
            return Ok(TArg::Cv);
        }
        let t: f64 = s.parse().map_err(|_| format!("expected a number in [0, 1] or 'cv', got '{s}'"))?;
        if !(0.0..=1.0).contains(&t) {
            return Err(format!("t must lie in [0, 1], got {t}"));
        }
        Ok(TArg::Fixed(t))
    }
}

impl std::fmt::Display for TArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TArg::Fixed(t) => write!(f, "{t}"),
            TArg::Cv => f.write_str("cv"),
        }
    }
}

fn parse_lambda(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("expected a number, got '{s}'"))?;
    if !(v >= 0.0) || !v.is_finite() {
        return Err(format!("lambda must be finite and >= 0, got {v}"));
    }
    Ok(v)
}

fn parse_positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(_) => Err(format!("expected a positive integer, got '{s}'")),
    }
}

/// Comma-separated list of t values in (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid(pub Vec<f64>);

fn parse_grid(s: &str) -> Result<Grid, String> {
    s.split(',')
        .map(|v| {
            let t: f64 = v.trim().parse().map_err(|_| format!("bad grid value '{v}'"))?;
            if t > 0.0 && t < 1.0 {
                Ok(t)
            } else {
                Err(format!("grid values must lie in (0, 1), got {t}"))
            }
        })
        .collect::<Result<_, _>>()
        .map(Grid)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum DelimiterArg {
    #[default]
    Auto,
    Comma,
    Whitespace,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    #[default]
    Table,
    Json,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Table => ReportFormat::Table,
            FormatArg::Json => ReportFormat::Json,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    #[default]
    Gmml,
    Euclidean,
}

#[derive(Debug, Clone, Args)]
pub struct DataFormatArgs {
    /// Zero-based label column (default: last column).
    #[arg(long)]
    pub label_column: Option<usize>,
    #[arg(long, value_enum, default_value_t = DelimiterArg::Auto)]
    pub delimiter: DelimiterArg,
}

impl DataFormatArgs {
    fn options(&self) -> LoadOptions {
        LoadOptions {
            label_column: self.label_column,
            delimiter: match self.delimiter {
                DelimiterArg::Auto => Delimiter::Auto,
                DelimiterArg::Comma => Delimiter::Comma,
                DelimiterArg::Whitespace => Delimiter::Whitespace,
            },
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Geodesic step in [0, 1], or `cv` to choose it by cross-validation.
    #[arg(long, value_parser = TArg::from_str)]
    pub t: Option<TArg>,
    /// Regularization weight toward the prior.
    #[arg(long, default_value_t = 0.0, value_parser = parse_lambda)]
    pub lambda: f64,
    /// Prior metric: `identity` or the path of a saved metric file.
    #[arg(long, default_value = "identity")]
    pub prior: String,
    /// Number of sampled pair constraints (default 40 c (c - 1)).
    #[arg(long, value_parser = parse_positive)]
    pub constraints: Option<usize>,
    /// Neighbours used by k-NN.
    #[arg(long, default_value_t = DEFAULT_K, value_parser = parse_positive)]
    pub k: usize,
    /// Base seed for constraint sampling and splits.
    #[arg(long, env = "GMML_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct CvArgs {
    /// Folds used when cross-validating t.
    #[arg(long, default_value_t = DEFAULT_CV_FOLDS)]
    pub cv_folds: usize,
    /// Comma-separated first-stage t values.
    #[arg(long, value_parser = parse_grid)]
    pub coarse_grid: Option<Grid>,
    /// Second-stage candidates around the first-stage winner.
    #[arg(long, default_value_t = DEFAULT_FINE_COUNT)]
    pub fine_count: usize,
    /// Spacing between second-stage candidates.
    #[arg(long, default_value_t = DEFAULT_FINE_SPACING)]
    pub fine_spacing: f64,
}

impl CvArgs {
    fn policy(&self) -> CliResult<CvPolicy> {
        let grid = self.coarse_grid.clone().map_or_else(|| DEFAULT_COARSE_GRID.to_vec(), |g| g.0);
        Ok(CvPolicy::new(grid, self.fine_count, self.fine_spacing, self.cv_folds)?)
    }
}

#[derive(Debug, Clone, Args)]
pub struct LearnArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub format: DataFormatArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub cv: CvArgs,
    /// Where to write the learned metric.
    #[arg(long, default_value = "metric.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Training set. Used to learn the metric (unless --metric is given) and
    /// as the k-NN reference set.
    #[arg(long, required_unless_present = "data")]
    pub train: Option<PathBuf>,
    #[arg(long, requires = "train")]
    pub test: Option<PathBuf>,
    /// Single dataset split in half (stratified, seeded) instead of
    /// --train/--test.
    #[arg(long, conflicts_with_all = ["train", "test"])]
    pub data: Option<PathBuf>,
    /// `identity` for the Euclidean baseline or the path of a metric file;
    /// when absent a metric is learned on the training set.
    #[arg(long)]
    pub metric: Option<String>,
    #[command(flatten)]
    pub format: DataFormatArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub cv: CvArgs,
    /// Z-score features using training-set statistics.
    #[arg(long)]
    pub standardize: bool,
    /// Also write the report to this file.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    pub report_format: FormatArg,
}

#[derive(Debug, Clone, Args)]
pub struct BenchmarkArgs {
    /// One or more datasets; each produces one report row.
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    #[command(flatten)]
    pub format: DataFormatArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub cv: CvArgs,
    /// Independent random splittings of each dataset.
    #[arg(long, default_value_t = 40, value_parser = parse_positive)]
    pub runs: usize,
    /// Folds per run; every fold is held out once.
    #[arg(long, default_value_t = 2)]
    pub folds: usize,
    /// `euclidean` skips learning and uses the identity metric.
    #[arg(long, value_enum, default_value_t = ModeArg::Gmml)]
    pub mode: ModeArg,
    /// Z-score features using training-fold statistics.
    #[arg(long)]
    pub standardize: bool,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Also write the report to this file.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    pub report_format: FormatArg,
    /// Format printed on stdout.
    #[arg(long, value_enum, default_value_t = FormatArg::Table)]
    pub format_stdout: FormatArg,
}

fn resolve_prior(spec: &str) -> CliResult<Prior> {
    if spec.eq_ignore_ascii_case("identity") {
        Ok(Prior::Identity)
    } else {
        Ok(Prior::Matrix(io::load_metric(spec)?.a_mat))
    }
}

fn base_config(solver: &SolverArgs, t: f64) -> CliResult<GmmlConfig> {
    Ok(GmmlConfig::new(t, solver.lambda, resolve_prior(&solver.prior)?)?)
}

fn constraint_count(solver: &SolverArgs, data: &LabeledDataset) -> CliResult<usize> {
    let count = solver
        .constraints
        .unwrap_or_else(|| default_constraint_count(data.num_classes()));
    if count == 0 {
        return Err(CliError::Usage(format!(
            "dataset '{}' has a single class; metric learning needs at least 2",
            data.name().unwrap_or("unnamed")
        )));
    }
    Ok(count)
}

fn describe(data: &LabeledDataset) -> String {
    format!(
        "{} (n={}, d={}, c={})",
        data.name().unwrap_or("unnamed"),
        data.len(),
        data.dim(),
        data.num_classes()
    )
}

fn print_t(t: TArg, policy: &CvPolicy) -> String {
    match t {
        TArg::Fixed(t) => format!("t={t}"),
        TArg::Cv => format!(
            "t=cv (coarse grid {:?}, {} fine values spaced {}, {} folds)",
            policy.coarse_grid, policy.fine_count, policy.fine_spacing, policy.cv_folds
        ),
    }
}

/// Learns a metric and writes it to `args.out`.
pub fn cmd_learn(args: &LearnArgs, out: &mut dyn Write) -> CliResult<LearnedMetric> {
    let t_arg = args.solver.t.unwrap_or(TArg::Fixed(0.5));
    let policy = args.cv.policy()?;
    let data = io::load_dataset(&args.data, &args.format.options())?;
    let count = constraint_count(&args.solver, &data)?;
    let cfg = base_config(&args.solver, 0.5)?;
    writeln!(out, "dataset: {}", describe(&data))?;
    writeln!(
        out,
        "config: {} lambda={} prior={} constraints={} seed={} out={}",
        print_t(t_arg, &policy),
        args.solver.lambda,
        args.solver.prior,
        count,
        args.solver.seed,
        args.out.display()
    )?;

    let started = Instant::now();
    let t = match t_arg {
        TArg::Fixed(t) => t,
        TArg::Cv => {
            let cv = cross_validate_t(&data, &policy, &cfg, args.solver.k, Some(count), args.solver.seed)?;
            writeln!(out, "cross-validated t={}", cv.chosen_t)?;
            cv.chosen_t
        }
    };
    let select_secs = started.elapsed().as_secs_f64();
    let cfg = cfg.with_t(t)?;
    let started = Instant::now();
    let pairs = sample_constraints(&data, count, args.solver.seed)?;
    let metric = learn(&data, &pairs, &cfg)?;
    let learn_secs = started.elapsed().as_secs_f64();
    io::save_metric(&metric, &args.out)?;

    let residual = metric
        .provenance
        .riccati_residual
        .map_or_else(|| "n/a (t != 0.5)".to_string(), |r| format!("{r:.3e}"));
    writeln!(
        out,
        "learned {d}x{d} metric: similar={} dissimilar={} riccati_residual={} learn_secs={:.4} total_secs={:.4} -> {}",
        metric.provenance.sim_count,
        metric.provenance.dis_count,
        residual,
        learn_secs,
        learn_secs + select_secs,
        args.out.display(),
        d = metric.dim(),
    )?;
    Ok(metric)
}

fn load_split(args: &EvalArgs) -> CliResult<(LabeledDataset, LabeledDataset)> {
    let opts = args.format.options();
    if let Some(path) = &args.data {
        let data = io::load_dataset(path, &opts)?;
        return Ok(half_split(&data, args.solver.seed)?);
    }
    let train_path = args.train.as_ref().expect("clap enforces --train or --data");
    let train = io::load_dataset(train_path, &opts)?;
    let test = match &args.test {
        Some(p) => io::load_dataset(p, &opts)?,
        None => train.clone(),
    };
    if train.dim() != test.dim() {
        return Err(CliError::Usage(format!(
            "training data has {} features but test data has {}",
            train.dim(),
            test.dim()
        )));
    }
    Ok((train, test))
}

/// Classifies the test set and returns a single-record report.
pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> CliResult<EvalReport> {
    let policy = args.cv.policy()?;
    let t_arg = args.solver.t.unwrap_or(TArg::Fixed(0.5));
    let (mut train, mut test) = load_split(args)?;
    if args.standardize {
        let z = Standardizer::fit(&train);
        train = z.apply(&train)?;
        test = z.apply(&test)?;
    }
    writeln!(out, "train: {}", describe(&train))?;
    writeln!(out, "test: {}", describe(&test))?;

    let started = Instant::now();
    let mut record = RunRecord {
        run: 0,
        fold: 0,
        test_size: test.len(),
        error: None,
        chosen_t: None,
        sim_pairs: 0,
        dis_pairs: 0,
        learn_secs: 0.0,
        total_secs: 0.0,
        failure: None,
    };
    let (mode, fixed_t, cv_policy, lambda, count);
    let metric: Option<SpdMatrix> = match args.metric.as_deref() {
        Some(m) if m.eq_ignore_ascii_case("identity") => {
            writeln!(out, "config: metric=identity k={}", args.solver.k)?;
            (mode, fixed_t, cv_policy, lambda, count) = (MetricMode::Euclidean, None, None, 0.0, 0);
            None
        }
        Some(path) => {
            let loaded = io::load_metric(path)?;
            if loaded.dim() != train.dim() {
                return Err(CliError::Core(gmml::Error::InvalidDataset(format!(
                    "metric '{path}' is {d}x{d} but the data has {} features",
                    train.dim(),
                    d = loaded.dim()
                ))));
            }
            writeln!(out, "config: metric={path} k={}", args.solver.k)?;
            (mode, fixed_t, cv_policy, lambda, count) = (
                MetricMode::Gmml,
                Some(loaded.config.t()),
                None,
                loaded.config.lambda(),
                loaded.provenance.sim_count + loaded.provenance.dis_count,
            );
            Some(loaded.a_mat)
        }
        None => {
            let c = constraint_count(&args.solver, &train)?;
            let cfg = base_config(&args.solver, 0.5)?;
            writeln!(
                out,
                "config: {} lambda={} prior={} constraints={} k={} seed={}",
                print_t(t_arg, &policy),
                args.solver.lambda,
                args.solver.prior,
                c,
                args.solver.k,
                args.solver.seed
            )?;
            let t = match t_arg {
                TArg::Fixed(t) => t,
                TArg::Cv => {
                    cross_validate_t(&train, &policy, &cfg, args.solver.k, Some(c), args.solver.seed)?.chosen_t
                }
            };
            let learn_started = Instant::now();
            let pairs = sample_constraints(&train, c, args.solver.seed)?;
            let learned = learn(&train, &pairs, &cfg.with_t(t)?)?;
            record.learn_secs = learn_started.elapsed().as_secs_f64();
            record.chosen_t = Some(t);
            record.sim_pairs = learned.provenance.sim_count;
            record.dis_pairs = learned.provenance.dis_count;
            (mode, lambda, count) = (MetricMode::Gmml, args.solver.lambda, c);
            (fixed_t, cv_policy) = match t_arg {
                TArg::Fixed(t) => (Some(t), None),
                TArg::Cv => (None, Some(policy.clone())),
            };
            Some(learned.a_mat)
        }
    };
    let error = evaluate_with_metric(&train, &test, metric.as_ref(), args.solver.k)?;
    record.error = Some(error);
    record.total_secs = started.elapsed().as_secs_f64();

    let report = EvalReport {
        dataset: test.name().unwrap_or("unnamed").to_owned(),
        fingerprint: test.fingerprint(),
        label_names: test.label_names().map(<[String]>::to_vec),
        mode,
        seed: args.solver.seed,
        n_runs: 1,
        n_folds: 1,
        k: args.solver.k,
        lambda,
        fixed_t,
        cv_policy,
        constraint_count: count,
        standardize: args.standardize,
        records: vec![record],
        mean_error: Some(error),
        std_error: Some(0.0),
        failures: 0,
    };
    write!(out, "{}", io::render_table(std::slice::from_ref(&report)))?;
    if let Some(path) = &args.report {
        io::write_report(&report, path, args.report_format.into())?;
        writeln!(out, "report written to {}", path.display())?;
    }
    Ok(report)
}

/// Runs the repeated-split protocol on every dataset in `args.data`.
pub fn cmd_benchmark(args: &BenchmarkArgs, out: &mut dyn Write) -> CliResult<Vec<EvalReport>> {
    let policy = args.cv.policy()?;
    let plan = SplitPlan::new(args.runs, args.folds, args.solver.seed)?;
    let t_arg = args.solver.t.unwrap_or(TArg::Cv);
    let (t0, t_selection) = match t_arg {
        TArg::Fixed(t) => (t, TSelection::Fixed),
        TArg::Cv => (0.5, TSelection::CrossValidate(policy.clone())),
    };
    let cfg = base_config(&args.solver, t0)?;
    let mode = match args.mode {
        ModeArg::Gmml => MetricMode::Gmml,
        ModeArg::Euclidean => MetricMode::Euclidean,
    };
    let datasets = args
        .data
        .iter()
        .map(|p| io::load_dataset(p, &args.format.options()))
        .collect::<Result<Vec<_>, _>>()?;

    writeln!(
        out,
        "config: mode={:?} runs={} folds={} seed={} k={} {} lambda={} prior={} standardize={} jobs={}",
        mode,
        plan.n_runs,
        plan.n_folds,
        plan.rng_seed,
        args.solver.k,
        print_t(t_arg, &policy),
        args.solver.lambda,
        args.solver.prior,
        args.standardize,
        args.jobs
    )?;

    let mut reports = Vec::with_capacity(datasets.len());
    let mut total = 0;
    let mut failed = 0;
    for data in &datasets {
        let count = match mode {
            MetricMode::Gmml => Some(constraint_count(&args.solver, data)?),
            MetricMode::Euclidean => args.solver.constraints,
        };
        writeln!(
            out,
            "dataset: {} constraints={}",
            describe(data),
            count.unwrap_or_else(|| default_constraint_count(data.num_classes()))
        )?;
        let opts = BenchmarkOptions {
            config: cfg.clone(),
            k: args.solver.k,
            constraint_count: count,
            t_selection: t_selection.clone(),
            mode,
            standardize: args.standardize,
            jobs: args.jobs,
        };
        let report = run_benchmark(data, &plan, &opts)?;
        for r in report.records.iter().filter(|r| r.failure.is_some()) {
            log::warn!(
                "{} run {} fold {} failed: {}",
                report.dataset,
                r.run,
                r.fold,
                r.failure.as_deref().unwrap_or_default()
            );
        }
        total += report.records.len();
        failed += report.failures;
        reports.push(report);
    }

    write!(out, "{}", io::render_reports(&reports, args.format_stdout.into())?)?;
    if failed > 0 {
        writeln!(out, "{failed} of {total} runs failed")?;
    }
    if let Some(path) = &args.report {
        io::write_reports(&reports, path, args.report_format.into())?;
        writeln!(out, "report written to {}", path.display())?;
    }
    if total > 0 && failed == total {
        return Err(CliError::AllRunsFailed(total));
    }
    Ok(reports)
}

/// Parses arguments, runs the subcommand and returns the process exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(log_level(cli.verbose))
        .parse_env("GMML_LOG")
        .try_init();
    let result = match &cli.command {
        Command::Learn(a) => cmd_learn(a, out).map(|_| ()),
        Command::Eval(a) => cmd_eval(a, out).map(|_| ()),
        Command::Benchmark(a) => cmd_benchmark(a, out).map(|_| ()),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Log level filter for a `-v` count.
pub fn log_level(verbose: u8) -> log::LevelFilter {
    match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    }
}
