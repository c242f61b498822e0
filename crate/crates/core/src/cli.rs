//! Command-line front end: `match`, `estimate`, `falsify` and `simulate`.
//!
//! Settings come from an optional TOML file and are overridden by flags.
//! Each run writes its artifacts and a `manifest.json` into the output
//! directory. The manifest records the resolved settings, the seed and the
//! SHA-256 of every input, so two runs with equal manifests produce
//! byte-identical artifacts.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::design::{balance_table, build_design, write_balance_csv, MatchOptions, MatchedDesign, Variant};
use crate::distance::{DistanceSpec, Metric};
use crate::error::{Error, Result};
use crate::estimate::{att_bias_corrected, att_did, fit_mu0, EstimateResult, OutcomeModel};
use crate::falsify::{timepoint_test, FalsifySpec};
use crate::inference::{block_bootstrap, wls_att, BootstrapSpec, InferenceResult, WlsVariance};
use crate::panel::{PanelDataset, StudyConfig};
use crate::simlab::{
    render_table, run_coverage_experiment, run_falsification_experiment, CoverageConfig, FalsificationConfig,
    Method, Scenario, ScenarioSpec,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "rollmatch", version, about = "Matched designs under rolling enrollment")]
struct Cli {
    /// TOML file with default settings; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (for `simulate`, a `.json` report path is also accepted).
    #[arg(long, global = true, default_value = "rollmatch-out")]
    out: PathBuf,
    /// Worker threads; results do not depend on this value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a matched design and its balance table.
    Match(MatchArgs),
    /// Estimate the ATT for a design with bootstrap and optional WLS intervals.
    Estimate(EstimateArgs),
    /// Test timepoint agnosticism with control-control matches.
    Falsify(FalsifyArgs),
    /// Run a Monte Carlo experiment on a simulated scenario.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
struct StudyArgs {
    /// Long-format panel CSV.
    #[arg(long)]
    data: PathBuf,
    /// Covariate columns (comma separated); defaults to every extra column.
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    #[arg(long = "L")]
    lag: Option<usize>,
    /// Controls per treated unit.
    #[arg(long = "C")]
    controls: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pseudo_times: Option<Vec<i64>>,
    /// Difference-in-differences analysis.
    #[arg(long)]
    did: bool,
}

#[derive(Debug, Args)]
struct MatchArgs {
    #[command(flatten)]
    study: StudyArgs,
    /// without | trajectory | instance
    #[arg(long)]
    variant: Option<Variant>,
    /// mahalanobis | euclidean | scaled-euclidean
    #[arg(long)]
    metric: Option<Metric>,
    #[arg(long)]
    caliper: Option<f64>,
    /// Drop treated instances without admissible controls instead of failing.
    #[arg(long)]
    allow_drop: bool,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[command(flatten)]
    study: StudyArgs,
    /// design.json written by `match`.
    #[arg(long)]
    design: PathBuf,
    /// Bootstrap replicates.
    #[arg(long = "B")]
    replicates: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// WLS baselines to add: naive, corrected, cluster (comma separated).
    #[arg(long, value_delimiter = ',')]
    variance: Option<Vec<WlsVariance>>,
    /// Also write the bootstrap replicates to replicates.csv.
    #[arg(long)]
    dump_replicates: bool,
}

#[derive(Debug, Args)]
struct FalsifyArgs {
    #[command(flatten)]
    study: StudyArgs,
    #[arg(long)]
    t0: Option<i64>,
    #[arg(long)]
    t1: Option<i64>,
    /// Sign-flip permutations.
    #[arg(long = "B")]
    permutations: Option<usize>,
    #[arg(long)]
    caliper: Option<f64>,
    #[arg(long)]
    split_fraction: Option<f64>,
    #[arg(long)]
    metric: Option<Metric>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// linear | linear_correlated | nonlinear_correlated | appendix_c
    #[arg(long)]
    scenario: Option<Scenario>,
    #[arg(long)]
    reps: Option<usize>,
    /// Bootstrap replicates (coverage) or permutations (appendix_c).
    #[arg(long = "B")]
    replicates: Option<usize>,
    /// Time trends for appendix_c (comma separated).
    #[arg(long, value_delimiter = ',')]
    gamma: Option<Vec<f64>>,
    /// Inference methods: bootstrap, wls, wls_cluster, wls_corrected.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Residualize with the true control mean instead of a fitted one.
    #[arg(long)]
    oracle_mu0: bool,
}

/// Settings accepted in the `--config` TOML file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(alias = "L")]
    pub lag: Option<usize>,
    #[serde(alias = "C")]
    pub controls_per_treated: Option<usize>,
    pub covariates: Option<Vec<String>>,
    pub pseudo_times: Option<Vec<i64>>,
    pub did: Option<bool>,
    pub variant: Option<Variant>,
    pub distance: Option<DistanceSpec>,
    pub allow_drop: Option<bool>,
    pub seed: Option<u64>,
    #[serde(alias = "B")]
    pub replicates: Option<usize>,
    pub alpha: Option<f64>,
    pub variance: Option<Vec<WlsVariance>>,
    pub t0: Option<i64>,
    pub t1: Option<i64>,
    pub split_fraction: Option<f64>,
    pub scenario: Option<Scenario>,
    pub reps: Option<usize>,
    pub gamma: Option<Vec<f64>>,
    pub methods: Option<Vec<Method>>,
}

/// Parses arguments (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => Err(Error::Config(format!("cannot start {n} worker threads: {e}"))),
        },
        None => dispatch(&cli),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_infeasible() {
                EXIT_INFEASIBLE
            } else {
                EXIT_VALIDATION
            }
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            toml::from_str::<FileConfig>(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let mut inputs = BTreeMap::new();
    if let Some(path) = &cli.config {
        inputs.insert(path.display().to_string(), sha256_file(path)?);
    }
    let ctx = RunContext {
        file,
        seed,
        out: cli.out.clone(),
        inputs,
    };
    match &cli.command {
        Command::Match(a) => cmd_match(ctx, a),
        Command::Estimate(a) => cmd_estimate(ctx, a),
        Command::Falsify(a) => cmd_falsify(ctx, a),
        Command::Simulate(a) => cmd_simulate(ctx, a),
    }
}

struct RunContext {
    file: FileConfig,
    seed: u64,
    out: PathBuf,
    inputs: BTreeMap<String, String>,
}

/// Provenance record written next to every set of artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// SHA-256 of each input file, keyed by the path as given.
    pub inputs: BTreeMap<String, String>,
    pub artifacts: Vec<String>,
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_bytes(&fs::read(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

impl RunContext {
    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out)?;
        Ok(&self.out)
    }

    fn finish(self, dir: &Path, subcommand: &str, config: impl Serialize, artifacts: Vec<String>) -> Result<()> {
        let manifest = RunManifest {
            subcommand: subcommand.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: self.seed,
            config: serde_json::to_value(config)?,
            inputs: self.inputs,
            artifacts,
        };
        write_json(&dir.join("manifest.json"), &manifest)
    }

    fn load_study(&mut self, args: &StudyArgs, did: bool) -> Result<(PanelDataset, String)> {
        let bytes = fs::read(&args.data)?;
        let hash = sha256_bytes(&bytes);
        self.inputs.insert(args.data.display().to_string(), hash.clone());
        let covariates = match args.covariates.clone().or_else(|| self.file.covariates.clone()) {
            Some(c) => c,
            None => infer_covariates(&bytes)?,
        };
        let mut config = StudyConfig::new(
            args.lag.or(self.file.lag).unwrap_or(1),
            args.controls.or(self.file.controls_per_treated).unwrap_or(1),
            covariates,
        );
        config.pseudo_times = args.pseudo_times.clone().or_else(|| self.file.pseudo_times.clone());
        config.did = did || args.did || self.file.did.unwrap_or(false);
        let dataset = PanelDataset::from_csv_reader(bytes.as_slice(), config)?;
        Ok((dataset, hash))
    }
}

fn infer_covariates(bytes: &[u8]) -> Result<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let reserved = ["id", "time", "z", "outcome"];
    Ok(rdr
        .headers()?
        .iter()
        .filter(|h| !reserved.contains(h))
        .map(str::to_string)
        .collect())
}

#[derive(Serialize)]
struct MatchConfig<'a> {
    study: &'a StudyConfig,
    matching: &'a MatchOptions,
}

fn cmd_match(mut ctx: RunContext, args: &MatchArgs) -> Result<()> {
    let (dataset, hash) = ctx.load_study(&args.study, false)?;
    let mut distance = ctx.file.distance.clone().unwrap_or_default();
    if let Some(m) = args.metric {
        distance.metric = m;
    }
    if args.caliper.is_some() {
        distance.caliper = args.caliper;
    }
    let options = MatchOptions {
        variant: args
            .variant
            .or(ctx.file.variant)
            .unwrap_or(Variant::InstanceReplacement),
        distance,
        controls_per_treated: dataset.config().controls_per_treated,
        allow_drop: args.allow_drop || ctx.file.allow_drop.unwrap_or(false),
    };
    let mut design = build_design(&dataset, &options)?;
    design.dataset_sha256 = Some(hash);
    let balance = balance_table(&dataset, &design)?;

    let dir = ctx.out_dir()?.to_path_buf();
    write_json(&dir.join("design.json"), &design)?;
    write_balance_csv(&balance, fs::File::create(dir.join("balance.csv"))?)?;
    println!(
        "matched {} treated instances ({} dropped), total distance {:.6}",
        design.n_treated(),
        design.dropped.len(),
        design.total_distance
    );
    let config = MatchConfig {
        study: dataset.config(),
        matching: &options,
    };
    ctx.finish(&dir, "match", config, vec!["design.json".into(), "balance.csv".into()])
}

#[derive(Serialize)]
struct EstimateConfig<'a> {
    study: &'a StudyConfig,
    bootstrap: &'a BootstrapSpec,
    variance: &'a [WlsVariance],
}

#[derive(Debug, Serialize)]
struct EstimateReport {
    estimate: EstimateResult,
    outcome_model: OutcomeModel,
    bootstrap: InferenceResult,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    wls: Vec<InferenceResult>,
}

fn cmd_estimate(mut ctx: RunContext, args: &EstimateArgs) -> Result<()> {
    let (dataset, hash) = ctx.load_study(&args.study, false)?;
    let design_text = fs::read(&args.design)?;
    ctx.inputs
        .insert(args.design.display().to_string(), sha256_bytes(&design_text));
    let design: MatchedDesign = serde_json::from_slice(&design_text)?;
    match &design.dataset_sha256 {
        Some(h) if *h != hash => {
            return Err(Error::DesignMismatch(format!(
                "design was built from data with sha256 {h}, got {hash}"
            )))
        }
        _ => {}
    }
    design.validate(&dataset)?;

    let lag = dataset.config().lag;
    let model = fit_mu0(&dataset, lag)?;
    let estimate = if dataset.config().did {
        att_did(&dataset, &design, &model)?
    } else {
        att_bias_corrected(&dataset, &design, &model)?
    };
    let mut spec = BootstrapSpec::new(
        args.replicates.or(ctx.file.replicates).unwrap_or(1000),
        args.alpha.or(ctx.file.alpha).unwrap_or(0.05),
        ctx.seed,
    );
    spec.keep_replicates = args.dump_replicates;
    let mut bootstrap = block_bootstrap(&estimate, &spec)?;
    let variances = args
        .variance
        .clone()
        .or_else(|| ctx.file.variance.clone())
        .unwrap_or_default();
    let wls = variances
        .iter()
        .map(|&v| wls_att(&dataset, &design, v, spec.alpha))
        .collect::<Result<Vec<_>>>()?;

    let dir = ctx.out_dir()?.to_path_buf();
    let mut artifacts = vec!["result.json".to_string()];
    if let Some(reps) = bootstrap.replicates.take() {
        let mut w = csv::Writer::from_path(dir.join("replicates.csv"))?;
        w.write_record(["replicate", "estimate"])?;
        for (b, r) in reps.iter().enumerate() {
            w.write_record([b.to_string(), r.to_string()])?;
        }
        w.flush()?;
        artifacts.push("replicates.csv".into());
    }
    println!(
        "{:?} estimate {:.6}  {:.0}% bootstrap CI [{:.6}, {:.6}]",
        estimate.kind,
        estimate.estimate,
        100.0 * (1.0 - spec.alpha),
        bootstrap.ci_lo,
        bootstrap.ci_hi
    );
    for w in &wls {
        println!(
            "wls ({:?}) estimate {:.6}  CI [{:.6}, {:.6}]",
            w.variance.expect("wls result"),
            w.estimate,
            w.ci_lo,
            w.ci_hi
        );
    }
    let report = EstimateReport {
        estimate,
        outcome_model: model,
        bootstrap,
        wls,
    };
    write_json(&dir.join("result.json"), &report)?;
    let config = EstimateConfig {
        study: dataset.config(),
        bootstrap: &spec,
        variance: &variances,
    };
    ctx.finish(&dir, "estimate", config, artifacts)
}

#[derive(Serialize)]
struct FalsifyConfig<'a> {
    study: &'a StudyConfig,
    test: &'a FalsifySpec,
}

fn cmd_falsify(mut ctx: RunContext, args: &FalsifyArgs) -> Result<()> {
    let (dataset, _) = ctx.load_study(&args.study, false)?;
    let (Some(t0), Some(t1)) = (args.t0.or(ctx.file.t0), args.t1.or(ctx.file.t1)) else {
        return Err(Error::Config("falsify needs both --t0 and --t1".into()));
    };
    let mut spec = FalsifySpec::new(
        t0,
        t1,
        args.permutations.or(ctx.file.replicates).unwrap_or(1000),
        ctx.seed,
    );
    spec.caliper = args
        .caliper
        .or_else(|| ctx.file.distance.as_ref().and_then(|d| d.caliper));
    if let Some(f) = args.split_fraction.or(ctx.file.split_fraction) {
        spec.split_fraction = f;
    }
    if let Some(m) = args
        .metric
        .or_else(|| ctx.file.distance.as_ref().map(|d| d.metric))
    {
        spec.metric = m;
    }
    let result = timepoint_test(&dataset, &spec)?;
    let dir = ctx.out_dir()?.to_path_buf();
    write_json(&dir.join("test.json"), &result)?;
    println!(
        "t0 = {}, t1 = {}: statistic {:.6}, p = {:.4} over {} pairs",
        result.t0, result.t1, result.statistic, result.p_value, result.n_pairs
    );
    let config = FalsifyConfig {
        study: dataset.config(),
        test: &spec,
    };
    ctx.finish(&dir, "falsify", config, vec!["test.json".into()])
}

#[derive(Serialize)]
#[serde(untagged)]
enum SimulateConfig {
    Coverage { scenario: ScenarioSpec, experiment: CoverageConfig },
    Falsification(FalsificationConfig),
}

fn cmd_simulate(ctx: RunContext, args: &SimulateArgs) -> Result<()> {
    let scenario = args.scenario.or(ctx.file.scenario).unwrap_or(Scenario::Linear);
    let reps = args.reps.or(ctx.file.reps).unwrap_or(1000);
    let alpha = args.alpha.or(ctx.file.alpha).unwrap_or(0.05);
    let (report, config) = if scenario == Scenario::AppendixC {
        let mut cfg = FalsificationConfig::new(
            args.gamma
                .clone()
                .or_else(|| ctx.file.gamma.clone())
                .unwrap_or_else(|| vec![0.0, 0.1, 0.25]),
            reps,
            args.replicates.or(ctx.file.replicates).unwrap_or(1000),
            ctx.seed,
        );
        cfg.alpha = alpha;
        (run_falsification_experiment(&cfg)?, SimulateConfig::Falsification(cfg))
    } else {
        let spec = ScenarioSpec::new(scenario, ctx.seed);
        let mut cfg = CoverageConfig::new(reps, args.replicates.or(ctx.file.replicates).unwrap_or(500));
        cfg.alpha = alpha;
        cfg.oracle_mu0 = args.oracle_mu0;
        if let Some(m) = args.methods.clone().or_else(|| ctx.file.methods.clone()) {
            cfg.methods = m;
        }
        (
            run_coverage_experiment(&spec, &cfg)?,
            SimulateConfig::Coverage {
                scenario: spec,
                experiment: cfg,
            },
        )
    };
    let table = render_table(&report);
    print!("{table}");

    let is_file = ctx.out.extension().is_some_and(|e| e == "json");
    let (dir, report_path) = if is_file {
        let dir = ctx
            .out
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        fs::create_dir_all(&dir)?;
        (dir, ctx.out.clone())
    } else {
        let dir = ctx.out_dir()?.to_path_buf();
        let path = dir.join("report.json");
        (dir, path)
    };
    write_json(&report_path, &report)?;
    let mut artifacts = vec![report_path
        .file_name()
        .map_or_else(|| "report.json".into(), |n| n.to_string_lossy().into_owned())];
    if !is_file {
        fs::File::create(dir.join("report.txt"))?.write_all(table.as_bytes())?;
        artifacts.push("report.txt".into());
    }
    ctx.finish(&dir, "simulate", config, artifacts)
}
