//! Batch front end: synth → train → optimize → validate → mc → report.
//!
//! Every command reads and writes inside one workspace directory (`--out`):
//!
//! ```text
//! <out>/synth/              population, wholesale day, group table
//! <out>/synth/dataset/      group_<n>_prices.csv, group_<n>_dd.csv, manifest.toml
//! <out>/train/              model_group_<n>.json, loss and residual CSVs
//! <out>/optimize/<kind>/    result.json, prices.csv, demand.csv, trace.csv
//! <out>/validate/<kind>/    validation.json, burden.csv, revenue.csv, peaks.csv
//! <out>/mc/<kind>/          reliability.csv, reductions.csv
//! <out>/report/<kind>/      metrics.csv and plot-ready tables
//! ```
//!
//! Each command directory holds one `manifest.json` and a `timings.csv`.
//! Wall-clock times live only in `timings.csv`, so everything else is
//! reproducible byte for byte.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{KindName, RunConfig, Seeds};
use crate::domain::{DemandProfile, GradientMode, PriceProfile, ScenarioConfig};
use crate::error::{Error, Result};
use crate::optimizer::{self, OptimizationResult};
use crate::rnn::{train_group_models, RnnModel};
use crate::scenarios::{
    effective_wholesale, mc_peak_demand, metrics_report, prepare_config, validate_result, ScenarioKind,
    ScenarioOutcome, TestedOutcome, Timings, ValidationReport,
};
use crate::synth::{self, Population};

/// Exit code when tested outcomes miss the mismatch budget.
pub const EXIT_OUTSIDE_BUDGET: i32 = 6;

#[derive(Debug, Parser)]
#[command(name = "equitariff", version, about = "Equitable time-varying tariff design")]
pub struct Cli {
    /// TOML configuration layered over the built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Workspace directory shared by all commands.
    #[arg(long, global = true, default_value = "run")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the population and the identification dataset.
    Synth(SynthArgs),
    /// Train one demand-response model per group.
    Train(TrainArgs),
    /// Design tariffs for a scenario.
    Optimize(OptimizeArgs),
    /// Broadcast designed tariffs to the agent model and compare.
    Validate(ValidateArgs),
    /// Bootstrap reliability of the peak targets.
    Mc(McArgs),
    /// Metric tables and plot data for a scenario.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub consumers: Option<usize>,
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub days: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct KindArg {
    /// tariff_design, dr_event or price_surge (default: from the config).
    #[arg(long)]
    pub kind: Option<KindName>,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub kind: KindArg,
    /// Scenario file with the keys of the `[scenario]` table.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub peak_count: Option<usize>,
    /// Comma-separated 1-based hours.
    #[arg(long, value_delimiter = ',')]
    pub surge_hours: Option<Vec<usize>>,
    #[arg(long)]
    pub surge_multiplier: Option<f64>,
    /// full_jacobian or paper_diagonal.
    #[arg(long)]
    pub gradient_mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub kind: KindArg,
    /// Allowed relative predicted/tested gap.
    #[arg(long)]
    pub budget: Option<f64>,
}

#[derive(Debug, Args)]
pub struct McArgs {
    #[command(flatten)]
    pub kind: KindArg,
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub kind: KindArg,
}

/// Process exit code of an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::Shape { .. } | Error::Domain(_) => 2,
        Error::Refused(_) | Error::State(_) | Error::Serde(_) => 2,
        Error::ScenarioInfeasible(_) | Error::Infeasible(_) => 3,
        Error::Training(_) | Error::NotInterior(_) => 4,
        Error::Io { .. } | Error::MissingArtifact { .. } => 5,
        Error::Consumer { source, .. } => exit_code(source),
        Error::Internal(_) => 1,
    }
}

/// SHA-256 of an input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

/// Provenance of one command's output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    pub seeds: Seeds,
    pub inputs: Vec<InputHash>,
    /// Files written by the command, relative to its directory.
    pub artifacts: Vec<String>,
    /// Wall-clock seconds per stage, relative to the command directory.
    pub timings: String,
}

pub const MANIFEST: &str = "manifest.json";
pub const TIMINGS: &str = "timings.csv";

/// Designed tariffs together with the scenario that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub kind: ScenarioKind,
    pub config: ScenarioConfig,
    pub result: OptimizationResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationFile {
    pub tested: TestedOutcome,
    pub report: ValidationReport,
}

/// Paths of the workspace layout.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn synth(&self) -> PathBuf {
        self.root.join("synth")
    }

    pub fn dataset(&self) -> PathBuf {
        self.synth().join("dataset")
    }

    pub fn train(&self) -> PathBuf {
        self.root.join("train")
    }

    pub fn stage(&self, stage: &str, kind: KindName) -> PathBuf {
        self.root.join(stage).join(kind_dir(kind))
    }

    /// `path` relative to the workspace root when it lies inside it.
    fn display(&self, path: &Path) -> String {
        path.strip_prefix(&self.root).unwrap_or(path).to_string_lossy().replace('\\', "/")
    }
}

fn kind_dir(kind: KindName) -> &'static str {
    match kind {
        KindName::TariffDesign => "tariff_design",
        KindName::DrEvent => "dr_event",
        KindName::PriceSurge => "price_surge",
    }
}

/// Collects outputs and inputs of one command and writes its manifest.
struct Output<'a> {
    ws: &'a Workspace,
    dir: PathBuf,
    command: &'static str,
    artifacts: Vec<String>,
    inputs: Vec<InputHash>,
    timings: Timings,
    clock: Instant,
}

impl<'a> Output<'a> {
    fn new(ws: &'a Workspace, dir: PathBuf, command: &'static str) -> Result<Self> {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            ws,
            dir,
            command,
            artifacts: Vec::new(),
            inputs: Vec::new(),
            timings: Timings::default(),
            clock: Instant::now(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn lap(&mut self, stage: &str) {
        self.timings.stages.push((stage.to_string(), self.clock.elapsed().as_secs_f64()));
        self.clock = Instant::now();
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.push(InputHash {
            path: self.ws.display(path),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let path = self.path(name);
        write_csv(&path, header, rows)?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    fn finish(mut self, config: &RunConfig) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .timings
            .stages
            .iter()
            .map(|(s, t)| vec![s.clone(), t.to_string()])
            .collect();
        write_csv(&self.path(TIMINGS), &["stage", "seconds"], rows)?;
        self.artifacts.sort();
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command.to_string(),
            config: config.clone(),
            seeds: config.seeds(),
            inputs: self.inputs,
            artifacts: self.artifacts,
            timings: TIMINGS.to_string(),
        };
        let path = self.dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let wrap = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Serde(format!("{}: {other:?}", path.display())),
    };
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn profile_header(horizon: usize) -> Vec<String> {
    (1..=horizon).map(|t| format!("h{t}")).collect()
}

fn require(path: &Path, hint: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            hint: hint.to_string(),
        })
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, hint: &str) -> Result<T> {
    require(path, hint)?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
}

fn s(v: f64) -> String {
    v.to_string()
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(inner) = source {
                eprintln!("  caused by: {inner}");
                source = inner.source();
            }
            exit_code(&e)
        }
    }
}

/// Runs one parsed command and returns the exit code of a completed run.
pub fn run(cli: Cli) -> Result<i32> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            warn!("thread pool already initialized: {e}");
        }
    }
    let mut config = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let ws = Workspace::new(cli.out);
    let config_file = cli.config;
    match cli.command {
        Command::Synth(a) => cmd_synth(&ws, config, config_file.as_deref(), a),
        Command::Train(a) => cmd_train(&ws, config, a),
        Command::Optimize(a) => cmd_optimize(&ws, config, a),
        Command::Validate(a) => cmd_validate(&ws, config, a),
        Command::Mc(a) => cmd_mc(&ws, config, a),
        Command::Report(a) => cmd_report(&ws, config, a),
    }
}

pub fn cmd_synth(ws: &Workspace, mut config: RunConfig, config_file: Option<&Path>, args: SynthArgs) -> Result<i32> {
    if let Some(n) = args.consumers {
        config.population.n_consumers = n;
    }
    if let Some(n) = args.groups {
        config.population.n_groups = n;
    }
    if let Some(n) = args.days {
        config.dataset.days = n;
    }
    config.validate()?;
    let seeds = config.seeds();
    let mut out = Output::new(ws, ws.synth(), "synth")?;
    for p in config_file
        .into_iter()
        .chain(config.prices.wholesale_file.as_deref())
        .chain(config.prices.seed_profiles_file.as_deref())
    {
        out.input(p)?;
    }

    let wholesale = config.wholesale()?;
    let profiles = config.seed_profiles()?;
    let population = synth::gen_population(&config.population_config(), &profiles, &wholesale)?;
    out.lap("population");
    let days = synth::gen_price_days(config.dataset.days, seeds.price_days, &wholesale, &config.dataset.noise)?;
    let dataset = synth::build_dataset(&population, &days, config.dataset.train_fraction)?;
    out.lap("dataset");
    info!(
        "{} consumers in {} groups, {} price days",
        population.consumers.len(),
        population.groups.len(),
        days.len()
    );

    out.json("population.json", &population)?;
    let horizon = wholesale.len();
    let header = profile_header(horizon);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.csv("wholesale.csv", &header, [wholesale.values().iter().map(|v| s(*v)).collect()])?;
    let group_rows: Vec<Vec<String>> = population
        .groups
        .iter()
        .map(|g| {
            let burden = crate::domain::dot(g.avg_baseline.values(), wholesale.values()) / g.avg_daily_income;
            vec![(g.id + 1).to_string(), g.size().to_string(), s(g.avg_daily_income), s(burden)]
        })
        .collect();
    out.csv("groups.csv", &["group", "size", "avg_daily_income", "baseline_burden"], group_rows)?;
    for name in synth::save_dataset(&ws.dataset(), &dataset, seeds.population, seeds.price_days)? {
        out.artifacts.push(format!("dataset/{name}"));
    }
    out.lap("write");
    out.finish(&config)?;
    Ok(0)
}

fn load_population(ws: &Workspace) -> Result<Population> {
    read_json(&ws.synth().join("population.json"), "run `equitariff synth` first")
}

fn load_wholesale(ws: &Workspace, horizon: usize) -> Result<PriceProfile> {
    let path = ws.synth().join("wholesale.csv");
    require(&path, "run `equitariff synth` first")?;
    let mut rows = synth::ingest_prices(&path, horizon)?;
    if rows.len() != 1 {
        return Err(Error::Config(format!("{} must hold one price day", path.display())));
    }
    Ok(rows.remove(0))
}

fn model_path(ws: &Workspace, group: usize) -> PathBuf {
    ws.train().join(format!("model_group_{}.json", group + 1))
}

fn residual_path(ws: &Workspace, group: usize) -> PathBuf {
    ws.train().join(format!("residuals_group_{}.csv", group + 1))
}

fn load_models(ws: &Workspace, n_groups: usize) -> Result<Vec<RnnModel>> {
    (0..n_groups)
        .map(|g| {
            let path = model_path(ws, g);
            require(&path, "run `equitariff train` first")?;
            RnnModel::load(&path)
        })
        .collect()
}

fn load_residuals(ws: &Workspace, n_groups: usize, horizon: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    (0..n_groups)
        .map(|g| {
            let path = residual_path(ws, g);
            require(&path, "run `equitariff train` first")?;
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            synth::parse_profiles_csv(&text, horizon)
        })
        .collect()
}

pub fn cmd_train(ws: &Workspace, mut config: RunConfig, args: TrainArgs) -> Result<i32> {
    if let Some(n) = args.epochs {
        config.train.epochs = n;
    }
    if let Some(n) = args.batch_size {
        config.train.batch_size = n;
    }
    if let Some(lr) = args.learning_rate {
        config.train.learning_rate = lr;
    }
    config.validate()?;
    let mut out = Output::new(ws, ws.train(), "train")?;
    let (dataset, manifest) = synth::load_dataset(&ws.dataset())?;
    for g in 0..manifest.groups {
        out.input(&ws.dataset().join(format!("group_{}_prices.csv", g + 1)))?;
        out.input(&ws.dataset().join(format!("group_{}_dd.csv", g + 1)))?;
    }
    out.lap("load");
    let trained = train_group_models(&dataset, &config.train_config())?;
    out.lap("train");

    let header = profile_header(dataset.horizon);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut summary = Vec::with_capacity(trained.len());
    for (g, (model, report)) in trained.iter().enumerate() {
        let name = format!("model_group_{}.json", g + 1);
        model.save(&out.path(&name))?;
        out.artifacts.push(name);
        let losses = report
            .train_loss
            .iter()
            .zip(&report.val_loss)
            .enumerate()
            .map(|(e, (t, v))| vec![(e + 1).to_string(), s(*t), s(*v)]);
        out.csv(&format!("loss_group_{}.csv", g + 1), &["epoch", "train_loss", "val_loss"], losses)?;
        let residuals = report.residuals.iter().map(|r| r.iter().map(|v| s(*v)).collect());
        out.csv(&format!("residuals_group_{}.csv", g + 1), &header, residuals)?;
        summary.push(vec![
            (g + 1).to_string(),
            report.epochs_run.to_string(),
            report.best_epoch.to_string(),
            s(report.val_mse),
            s(report.val_rmse),
            s(report.val_mape),
        ]);
        info!("group {}: validation MSE {:.3e}", g + 1, report.val_mse);
    }
    out.csv(
        "validation.csv",
        &["group", "epochs_run", "best_epoch", "val_mse", "val_rmse_kwh", "val_wape"],
        summary,
    )?;
    out.lap("write");
    out.finish(&config)?;
    Ok(0)
}

fn apply_scenario_args(config: &mut RunConfig, args: &OptimizeArgs) -> Result<()> {
    if let Some(path) = &args.scenario {
        config.load_scenario(path)?;
    }
    let sc = &mut config.scenario;
    if let Some(k) = args.kind.kind {
        sc.kind = k;
    }
    if let Some(b) = args.beta {
        sc.beta = b;
    }
    if let Some(k) = args.peak_count {
        sc.peak_count = k;
    }
    if let Some(h) = &args.surge_hours {
        sc.surge_hours = h.clone();
    }
    if let Some(m) = args.surge_multiplier {
        sc.surge_multiplier = m;
    }
    if let Some(mode) = &args.gradient_mode {
        sc.gradient_mode = match mode.as_str() {
            "full_jacobian" => GradientMode::FullJacobian,
            "paper_diagonal" | "diagonal" => GradientMode::Diagonal,
            other => {
                return Err(Error::Config(format!(
                    "unknown gradient mode `{other}` (expected full_jacobian or paper_diagonal)"
                )))
            }
        };
    }
    config.validate()
}

pub fn cmd_optimize(ws: &Workspace, mut config: RunConfig, args: OptimizeArgs) -> Result<i32> {
    apply_scenario_args(&mut config, &args)?;
    let kind_name = config.scenario.kind;
    let mut out = Output::new(ws, ws.stage("optimize", kind_name), "optimize")?;
    if let Some(p) = &args.scenario {
        out.input(p)?;
    }
    let population = load_population(ws)?;
    let horizon = population.horizon();
    let wholesale = load_wholesale(ws, horizon)?;
    let n = population.groups.len();
    let models = load_models(ws, n)?;
    out.input(&ws.synth().join("population.json"))?;
    out.input(&ws.synth().join("wholesale.csv"))?;
    for g in 0..n {
        out.input(&model_path(ws, g))?;
    }
    let kind = config.scenario.kind()?;
    let residuals = if config.scenario.kind == KindName::DrEvent && config.scenario.reliability_z > 0.0 {
        for g in 0..n {
            out.input(&residual_path(ws, g))?;
        }
        Some(load_residuals(ws, n, horizon)?)
    } else {
        None
    };
    out.lap("load");

    let scenario = prepare_config(&kind, &population, &config.scenario.base(), residuals.as_deref())?;
    let lambda = effective_wholesale(&wholesale, &scenario)?;
    let result = optimizer::solve(&population.groups, &models, &lambda, &scenario)?;
    out.lap("optimize");

    write_result(&mut out, &result)?;
    let converged = result.converged;
    out.json(
        "result.json",
        &ResultFile {
            kind,
            config: scenario,
            result,
        },
    )?;
    out.lap("write");
    out.finish(&config)?;
    if converged {
        Ok(0)
    } else {
        warn!("the barrier method did not converge; results are written for inspection");
        Ok(4)
    }
}

fn write_result(out: &mut Output, r: &OptimizationResult) -> Result<()> {
    let horizon = r.wholesale.len();
    let mut prices = Vec::new();
    let mut demand = Vec::new();
    for g in 0..r.prices.len() {
        for t in 0..horizon {
            let key = vec![(g + 1).to_string(), (t + 1).to_string()];
            prices.push([key.clone(), vec![s(r.prices[g].values()[t]), s(r.wholesale.values()[t])]].concat());
            demand.push(
                [
                    key,
                    vec![
                        s(r.predicted_dd[g].values()[t]),
                        s(r.predicted_demand[g].values()[t]),
                        s(r.reference_demand[g].values()[t]),
                    ],
                ]
                .concat(),
            );
        }
    }
    out.csv("prices.csv", &["group", "hour", "price", "wholesale"], prices)?;
    out.csv(
        "demand.csv",
        &["group", "hour", "predicted_dd", "predicted_demand", "reference_demand"],
        demand,
    )?;
    let trace = r.trace.iter().map(|e| {
        let min_peak = e.slacks.peak.iter().map(|(_, g)| *g).fold(f64::INFINITY, f64::min);
        let opt = |v: Option<f64>| v.map_or(String::new(), s);
        vec![
            e.outer.to_string(),
            e.inner.to_string(),
            s(e.mu),
            s(e.objective),
            s(e.barrier),
            s(e.grad_norm),
            s(e.decrement),
            s(e.step),
            opt(e.slacks.revenue),
            if e.slacks.peak.is_empty() { String::new() } else { s(min_peak) },
            opt(e.slacks.price_bound),
        ]
    });
    out.csv(
        "trace.csv",
        &[
            "outer",
            "inner",
            "mu",
            "objective",
            "barrier",
            "grad_norm",
            "decrement",
            "step",
            "revenue_slack",
            "min_peak_slack",
            "price_bound_slack",
        ],
        trace,
    )
}

fn load_result(ws: &Workspace, kind: KindName) -> Result<(PathBuf, ResultFile)> {
    let path = ws.stage("optimize", kind).join("result.json");
    let file = read_json(&path, &format!("run `equitariff optimize --kind {}` first", kind_dir(kind)))?;
    Ok((path, file))
}

pub fn cmd_validate(ws: &Workspace, mut config: RunConfig, args: ValidateArgs) -> Result<i32> {
    if let Some(k) = args.kind.kind {
        config.scenario.kind = k;
    }
    if let Some(b) = args.budget {
        config.validation.mismatch_budget = b;
    }
    config.validate()?;
    let kind = config.scenario.kind;
    let mut out = Output::new(ws, ws.stage("validate", kind), "validate")?;
    let (result_path, file) = load_result(ws, kind)?;
    let population = load_population(ws)?;
    out.input(&result_path)?;
    out.input(&ws.synth().join("population.json"))?;
    out.lap("load");
    let (tested, report) = validate_result(&population, &file.result, &file.config, config.validation.mismatch_budget)?;
    out.lap("validate");

    let burden = report.groups.iter().map(|g| {
        let q = &g.member_burden;
        vec![
            (g.group + 1).to_string(),
            g.size.to_string(),
            s(g.baseline_burden),
            s(g.predicted_burden),
            s(g.tested_burden),
            s(q.min),
            s(q.q1),
            s(q.median),
            s(q.q3),
            s(q.max),
        ]
    });
    out.csv(
        "burden.csv",
        &["group", "size", "baseline", "predicted", "tested", "member_min", "member_q1", "member_median", "member_q3", "member_max"],
        burden,
    )?;
    let rv = &report.revenue;
    out.csv(
        "revenue.csv",
        &["baseline", "predicted", "tested", "required"],
        [vec![s(rv.baseline), s(rv.predicted), s(rv.tested), s(rv.required)]],
    )?;
    let peaks = report
        .peaks
        .iter()
        .map(|p| vec![(p.hour + 1).to_string(), s(p.predicted_reduction), s(p.tested_reduction)]);
    out.csv("peaks.csv", &["hour", "predicted_reduction", "tested_reduction"], peaks)?;
    let within = report.within_budget();
    out.json("validation.json", &ValidationFile { tested, report })?;
    out.lap("write");
    out.finish(&config)?;
    if within {
        Ok(0)
    } else {
        warn!("tested outcomes differ from predictions by more than the mismatch budget");
        Ok(EXIT_OUTSIDE_BUDGET)
    }
}

pub fn cmd_mc(ws: &Workspace, mut config: RunConfig, args: McArgs) -> Result<i32> {
    if let Some(k) = args.kind.kind {
        config.scenario.kind = k;
    }
    if let Some(t) = args.trials {
        config.mc.trials = t;
    }
    config.validate()?;
    let kind = config.scenario.kind;
    let (result_path, file) = load_result(ws, kind)?;
    if file.config.peak_hours.is_empty() {
        return Err(Error::State(format!(
            "the {} result has no peak hours; run mc on a dr_event result",
            kind_dir(kind)
        )));
    }
    let mut out = Output::new(ws, ws.stage("mc", kind), "mc")?;
    let population = load_population(ws)?;
    let n = population.groups.len();
    let residuals = load_residuals(ws, n, population.horizon())?;
    out.input(&result_path)?;
    for g in 0..n {
        out.input(&residual_path(ws, g))?;
    }
    let sizes: Vec<usize> = population.groups.iter().map(|g| g.size()).collect();
    out.lap("load");

    let mut rates = Vec::new();
    let mut spread = Vec::new();
    for &factor in &config.mc.variance_factors {
        let samples = mc_peak_demand(
            &file.result,
            &residuals,
            &sizes,
            &file.config,
            config.mc.trials,
            config.seeds().mc,
            factor.sqrt(),
        )?;
        for ps in &samples {
            rates.push(vec![(ps.hour + 1).to_string(), s(factor), s(ps.success_rate())]);
            let mut red = ps.reductions();
            red.sort_by(f64::total_cmp);
            let q = |f: f64| red[((red.len() - 1) as f64 * f).round() as usize];
            spread.push(vec![
                (ps.hour + 1).to_string(),
                s(factor),
                s(q(0.01)),
                s(q(0.05)),
                s(q(0.25)),
                s(q(0.5)),
                s(q(0.75)),
                s(q(0.95)),
                s(q(0.99)),
            ]);
        }
    }
    out.lap("mc");
    out.csv("reliability.csv", &["hour", "variance_factor", "success_rate"], rates)?;
    out.csv(
        "reductions.csv",
        &["hour", "variance_factor", "p01", "p05", "p25", "p50", "p75", "p95", "p99"],
        spread,
    )?;
    out.finish(&config)?;
    Ok(0)
}

fn read_timings(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
    reader
        .records()
        .map(|r| {
            let r = r.map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
            let secs = r
                .get(1)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Serde(format!("{}: malformed row", path.display())))?;
            Ok((r.get(0).unwrap_or_default().to_string(), secs))
        })
        .collect()
}

pub fn cmd_report(ws: &Workspace, mut config: RunConfig, args: ReportArgs) -> Result<i32> {
    if let Some(k) = args.kind.kind {
        config.scenario.kind = k;
    }
    config.validate()?;
    let kind = config.scenario.kind;
    let (result_path, file) = load_result(ws, kind)?;
    let validation_path = ws.stage("validate", kind).join("validation.json");
    let validation: ValidationFile = read_json(
        &validation_path,
        &format!("run `equitariff validate --kind {}` first", kind_dir(kind)),
    )?;
    let mut out = Output::new(ws, ws.stage("report", kind), "report")?;
    out.input(&result_path)?;
    out.input(&validation_path)?;

    // wall-clock figures go to the report's own timings file
    let mut timings = Timings::default();
    for (stage, dir) in [
        ("synth", ws.synth()),
        ("train", ws.train()),
        ("optimize", ws.stage("optimize", kind)),
        ("validate", ws.stage("validate", kind)),
    ] {
        let path = dir.join(TIMINGS);
        if path.exists() {
            for (name, secs) in read_timings(&path)? {
                timings.stages.push((format!("{stage}.{name}"), secs));
            }
        }
    }
    let outcome = ScenarioOutcome {
        kind: file.kind,
        config: file.config,
        result: file.result,
        tested: validation.tested,
        report: validation.report,
    };
    let rows = metrics_report(&outcome, &Timings::default())
        .into_iter()
        .map(|r| vec![r.metric, r.key, s(r.value)]);
    out.csv("metrics.csv", &["metric", "key", "value"], rows)?;

    let r = &outcome.result;
    let burden = outcome.report.groups.iter().map(|g| {
        vec![
            (g.group + 1).to_string(),
            s(g.baseline_burden),
            s(g.predicted_burden),
            s(g.tested_burden),
            s(g.member_burden.min),
            s(g.member_burden.max),
        ]
    });
    out.csv(
        "burden_by_group.csv",
        &["group", "baseline", "predicted", "tested", "member_min", "member_max"],
        burden,
    )?;
    let horizon = r.wholesale.len();
    let mut header = vec!["hour".to_string(), "wholesale".to_string()];
    header.extend((1..=r.prices.len()).map(|g| format!("group_{g}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let tariffs = (0..horizon).map(|t| {
        let mut row = vec![(t + 1).to_string(), s(r.wholesale.values()[t])];
        row.extend(r.prices.iter().map(|p| s(p.values()[t])));
        row
    });
    out.csv("tariff_by_hour.csv", &header, tariffs)?;
    let sizes: Vec<f64> = outcome.tested.bills.iter().map(|b| b.len() as f64).collect();
    let agg = |profiles: &[DemandProfile], t: usize| -> f64 {
        profiles.iter().zip(&sizes).map(|(p, n)| n * p.values()[t]).sum()
    };
    let demand = (0..horizon).map(|t| {
        vec![
            (t + 1).to_string(),
            s(outcome.tested.baseline_demand[t]),
            s(agg(&r.predicted_demand, t)),
            s(outcome.tested.demand[t]),
        ]
    });
    out.csv("demand_by_hour.csv", &["hour", "baseline", "predicted", "tested"], demand)?;
    out.timings.stages.extend(timings.stages);
    out.lap("report");
    out.finish(&config)?;
    Ok(0)
}
