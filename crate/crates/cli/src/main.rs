use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use blbvs::dataio::{self, ColumnSpec, Ingested};
use blbvs::diagnostics::{self, RdForm, RdReference, Trajectory};
use blbvs::simgen::{BetaStyle, SimSpec};
use blbvs::tuning::CvRule;
use blbvs::{
    BlbvsConfig, BlbvsReport, Error, Family, GroupedDataset, LambdaMode, PenaltyKind, Scalar,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

const SCHEMA: &str = include_str!("../schema/report.schema.json");

#[derive(Parser)]
#[command(
    name = "blbvs",
    version,
    about = "Variable selection with the bag of little bootstraps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run BLBVS and/or BootVS on a CSV file or a simulated dataset.
    Run(RunArgs),
    /// Write a simulated dataset and its group sidecar as CSV.
    Simulate(SimulateArgs),
    /// Print the JSON schema of report.json.
    Schema,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Blbvs,
    Bootvs,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Binomial,
    Gaussian,
}

#[derive(Clone, Copy, ValueEnum)]
enum PenaltyArg {
    GroupLasso,
    Lasso,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    Min,
    #[value(name = "1se")]
    OneSe,
}

#[derive(Clone, Copy, ValueEnum)]
enum BetaStyleArg {
    Scalar,
    Spread,
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    F64,
    F32,
}

#[derive(Args)]
struct SimArgs {
    /// `default` or a path to a simulation spec in JSON.
    #[arg(long)]
    simulate: Option<String>,
    /// Rows of the simulated dataset.
    #[arg(long)]
    n: Option<usize>,
    /// Seed of the simulated dataset (defaults to --seed).
    #[arg(long)]
    sim_seed: Option<u64>,
    #[arg(long, value_enum)]
    beta_style: Option<BetaStyleArg>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    sim: SimArgs,
    /// CSV file with a header row.
    #[arg(
        long,
        required_unless_present = "simulate",
        conflicts_with = "simulate"
    )]
    input: Option<PathBuf>,
    /// Response column of --input.
    #[arg(long, requires = "input")]
    response: Option<String>,
    /// Columns to dummy-code (comma separated); others are detected.
    #[arg(long, value_delimiter = ',')]
    categorical: Vec<String>,
    /// Columns forced to be numeric (comma separated).
    #[arg(long, value_delimiter = ',')]
    continuous: Vec<String>,
    /// Reference level as `column=level`; may be repeated.
    #[arg(long)]
    reference: Vec<String>,
    /// Sidecar CSV mapping columns to groups.
    #[arg(long)]
    groups: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "binomial")]
    family: FamilyArg,

    #[arg(long, value_enum, default_value = "blbvs")]
    method: MethodArg,
    #[arg(long, default_value_t = 0.7)]
    gamma: f64,
    /// Resamples per subset.
    #[arg(long, default_value_t = 100)]
    r: usize,
    /// Number of subsets (default floor(n / b)).
    #[arg(long)]
    subsets: Option<usize>,
    /// Allow subsets to overlap.
    #[arg(long)]
    overlapping: bool,
    /// BootVS resamples.
    #[arg(long, default_value_t = 100)]
    bootvs_r: usize,
    #[arg(long, default_value_t = 0.5)]
    cutoff: f64,
    /// Cross-validation folds.
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Tune once per subset instead of once per resample.
    #[arg(long)]
    tune_per_subset: bool,
    /// Fixed penalty level on the standardized scale (skips tuning).
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_enum, default_value = "min")]
    lambda_rule: RuleArg,
    #[arg(long, default_value_t = 50)]
    path_len: usize,
    #[arg(long, value_enum, default_value = "group-lasso")]
    penalty: PenaltyArg,
    #[arg(long)]
    no_standardize: bool,
    /// Track relative deviation against a ground truth from this many
    /// simulated realizations (simulated input only).
    #[arg(long)]
    truth: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, value_enum, default_value = "f64")]
    precision: Precision,
    #[arg(long, default_value = "blbvs-out")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "blbvs-data")]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::GammaOutOfRange(_) | Error::InvalidConfig(_) | Error::Unsupported { .. } => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Data(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn sim_spec(args: &SimArgs, seed: u64) -> Result<SimSpec, Failure> {
    let mut spec = match args.simulate.as_deref() {
        None | Some("default") => SimSpec::default(),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_failure(Path::new(path), e))?;
            serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{path}: {e}")))?
        }
    };
    spec.seed = args.sim_seed.unwrap_or(seed);
    if let Some(n) = args.n {
        spec.n = n;
    }
    if let Some(style) = args.beta_style {
        spec.beta_style = match style {
            BetaStyleArg::Scalar => BetaStyle::Scalar,
            BetaStyleArg::Spread => BetaStyle::Spread,
        };
    }
    spec.validate()?;
    Ok(spec)
}

fn config(args: &RunArgs) -> Result<BlbvsConfig, Failure> {
    let mut cfg = BlbvsConfig {
        gamma: args.gamma,
        subsets: args.subsets,
        resamples: args.r,
        cutoff: args.cutoff,
        penalty: match args.penalty {
            PenaltyArg::GroupLasso => PenaltyKind::GroupLasso,
            PenaltyArg::Lasso => PenaltyKind::Lasso,
        },
        lambda: match (args.lambda, args.tune_per_subset) {
            (Some(lambda), _) => LambdaMode::Fixed { lambda },
            (None, true) => LambdaMode::PerSubset,
            (None, false) => LambdaMode::PerResample,
        },
        seed: args.seed,
        workers: args.workers,
        disjoint: !args.overlapping,
        standardize: !args.no_standardize,
        ..BlbvsConfig::default()
    };
    cfg.tuning.folds = args.folds;
    cfg.tuning.path_len = args.path_len;
    cfg.tuning.rule = match args.lambda_rule {
        RuleArg::Min => CvRule::Min,
        RuleArg::OneSe => CvRule::OneStandardError,
    };
    cfg.validate()?;
    if args.method != MethodArg::Blbvs && args.bootvs_r < 1 {
        return Err(Failure::Usage("--bootvs-r must be at least 1".into()));
    }
    if args.truth.is_some() && args.sim.simulate.is_none() {
        return Err(Failure::Usage("--truth needs --simulate".into()));
    }
    if args.truth.is_some_and(|m| m < 2) {
        return Err(Failure::Usage(
            "--truth needs at least 2 realizations".into(),
        ));
    }
    Ok(cfg)
}

fn column_specs(args: &RunArgs) -> Result<Vec<ColumnSpec>, Failure> {
    let mut specs: Vec<ColumnSpec> = args
        .continuous
        .iter()
        .map(|c| ColumnSpec::continuous(c))
        .collect();
    specs.extend(args.categorical.iter().map(|c| ColumnSpec::categorical(c)));
    for r in &args.reference {
        let Some((col, level)) = r.split_once('=') else {
            return Err(Failure::Usage(format!(
                "--reference expects column=level, got `{r}`"
            )));
        };
        match specs.iter_mut().find(|s| s.name == col) {
            Some(s) => *s = ColumnSpec::categorical(col).with_reference(level),
            None => specs.push(ColumnSpec::categorical(col).with_reference(level)),
        }
    }
    Ok(specs)
}

fn family(args: &RunArgs) -> Family {
    match args.family {
        FamilyArg::Binomial => Family::Binomial,
        FamilyArg::Gaussian => Family::Gaussian,
    }
}

fn load<F: Scalar>(args: &RunArgs) -> Result<(GroupedDataset<F>, Option<SimSpec>), Failure> {
    if args.sim.simulate.is_some() {
        let spec = sim_spec(&args.sim, args.seed)?;
        let (d, _) = blbvs::generate::<F>(&spec)?;
        return Ok((d, Some(spec)));
    }
    let path = args
        .input
        .as_ref()
        .ok_or_else(|| Failure::Usage("--input or --simulate is required".into()))?;
    let response = args.response.as_deref().unwrap_or("y");
    let mut ingested: Ingested<F> =
        dataio::ingest_csv(path, response, &column_specs(args)?, family(args))?;
    if let Some(groups) = &args.groups {
        ingested.regroup(&dataio::read_group_spec(groups)?)?;
    }
    Ok((ingested.dataset, None))
}

fn write(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| io_failure(path, e))
}

fn write_report<F: Scalar>(dir: &Path, report: &BlbvsReport<F>) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    write(&dir.join("report.json"), report.to_json()?.as_bytes())?;

    let mut props = csv::Writer::from_writer(Vec::new());
    let mut trajectory = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Failure::Data(e.to_string());
    props
        .write_record(["group", "p_g", "selected"])
        .map_err(csv_err)?;
    for (g, p) in report.proportions.iter().enumerate() {
        let selected = report.selected.contains(&(g + 1));
        props
            .write_record([(g + 1).to_string(), p.to_string(), selected.to_string()])
            .map_err(csv_err)?;
    }
    trajectory
        .write_record(["seconds", "metric", "value"])
        .map_err(csv_err)?;
    for (t, c) in report.timed_trajectory() {
        let mut rows = vec![("mean_xi", c.mean_xi)];
        rows.extend(c.trace.map(|v| ("trace", v)));
        rows.extend(c.rd.map(|v| ("rd", v)));
        for (metric, value) in rows {
            trajectory
                .write_record([t.to_string(), metric.to_string(), value.to_string()])
                .map_err(csv_err)?;
        }
    }
    let finish = |w: csv::Writer<Vec<u8>>| w.into_inner().map_err(|e| Failure::Data(e.to_string()));
    write(&dir.join("proportions.csv"), &finish(props)?)?;
    write(&dir.join("trajectory.csv"), &finish(trajectory)?)?;
    Ok(())
}

fn run<F: Scalar>(args: &RunArgs) -> Result<(), Failure> {
    let cfg = config(args)?;
    let (data, spec) = load::<F>(args)?;
    let reference = match (args.truth, &spec) {
        (Some(m), Some(spec)) => {
            let tracked = diagnostics::default_tracked(spec);
            let truth = diagnostics::ground_truth_for::<F>(spec, m, &cfg, &tracked)?;
            Some(RdReference::new(&truth, RdForm::Trace)?)
        }
        _ => None,
    };
    let blb = match args.method {
        MethodArg::Bootvs => None,
        _ => Some(blbvs::engine::run_blbvs_with(
            &data,
            &cfg,
            reference.as_ref(),
        )?),
    };
    let boot = match args.method {
        MethodArg::Blbvs => None,
        _ => Some(blbvs::engine::run_bootvs_with(
            &data,
            args.bootvs_r,
            &cfg,
            reference.as_ref(),
        )?),
    };
    let out = &args.out;
    match (&blb, &boot) {
        (Some(a), Some(b)) => {
            write_report(&out.join("blbvs"), a)?;
            write_report(&out.join("bootvs"), b)?;
            let mut comparison = json!({
                "blbvs_selected": a.selected,
                "bootvs_selected": b.selected,
                "same_selection": a.selected == b.selected,
            });
            if reference.is_some() {
                let ta = Trajectory::from_report(a)?;
                let tb = Trajectory::from_report(b)?;
                comparison["trajectories"] =
                    serde_json::to_value(diagnostics::compare_trajectories(&ta, &tb)?)
                        .map_err(|e| Failure::Data(e.to_string()))?;
            }
            let text = serde_json::to_string_pretty(&comparison)
                .map_err(|e| Failure::Data(e.to_string()))?;
            write(&out.join("comparison.json"), text.as_bytes())?;
        }
        (Some(r), None) | (None, Some(r)) => write_report(out, r)?,
        (None, None) => unreachable!("method selects at least one driver"),
    }
    for r in blb.iter().chain(boot.iter()) {
        for w in &r.warnings {
            eprintln!("warning: {w}");
        }
        let label = match r.method {
            blbvs::Method::Blbvs => "blbvs",
            blbvs::Method::Bootvs => "bootvs",
        };
        println!("{label}: selected groups {:?}", r.selected);
    }
    Ok(())
}

fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let spec = sim_spec(&args.sim, args.seed)?;
    let (d, beta) = blbvs::generate::<f64>(&spec)?;
    let names = dataio::default_names(d.p());
    fs::create_dir_all(&args.out).map_err(|e| io_failure(&args.out, e))?;
    let mut data = Vec::new();
    dataio::write_dataset_csv(&mut data, &d, &names)?;
    write(&args.out.join("data.csv"), &data)?;
    let mut groups = Vec::new();
    dataio::write_group_spec(&mut groups, &names, &d.groups)?;
    write(&args.out.join("groups.csv"), &groups)?;
    let meta = json!({ "spec": spec, "beta": beta });
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Failure::Data(e.to_string()))?;
    write(&args.out.join("truth.json"), text.as_bytes())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run(args) => match args.precision {
            Precision::F64 => run::<f64>(args),
            Precision::F32 => run::<f32>(args),
        },
        Command::Simulate(args) => simulate(args),
        Command::Schema => {
            print!("{SCHEMA}");
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
