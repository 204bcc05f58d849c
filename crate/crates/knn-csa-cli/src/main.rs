//! Command-line interface for k-NN covariate shift adaptation.
//!
//! Exit codes: 0 success, 1 input/schema problems (unreadable files,
//! malformed CSV/JSON, unknown selectors, invalid bound inputs), 2 domain
//! precondition violations (k larger than the source, empty targets,
//! dimension mismatches).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use knn_csa::experiment::{doubling_ratios, write_records_csv, write_summary_json};
use knn_csa::{
    bias_subsample, bounds, csa_estimate, dataset, fit_rate, gen_mean_setup, gen_risk_setup,
    oracle_labeled_targets, run_sweep, timing_scan, BiasRule, BoundInputs, Error, HFunction,
    KPolicy, Result, SeededRng, SetupTag, SweepConfig,
};

#[derive(Parser)]
#[command(
    name = "knn-csa",
    version,
    about = "Covariate shift adaptation by k-nearest-neighbor conditional sampling"
)]
struct Cli {
    /// Cap worker threads (results are identical for any value).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pseudo-label target covariates from a labeled source sample.
    Adapt(AdaptArgs),
    /// Estimate the target mean of a built-in function of (x, y).
    Estimate(EstimateArgs),
    /// Generate the synthetic mean-estimation setup as CSV files.
    SynthMean(SynthArgs),
    /// Generate the synthetic risk-estimation setup as CSV files.
    SynthRisk(SynthArgs),
    /// Rejection-subsample a labeled dataset to simulate covariate shift.
    BiasSample(BiasSampleArgs),
    /// Run a replicated convergence sweep from a JSON config.
    Sweep(SweepArgs),
    /// Evaluate finite-sample error certificates from a JSON input file.
    Bounds(BoundsArgs),
    /// Measure end-to-end adaptation wall time across sizes.
    Bench(BenchArgs),
}

#[derive(Args)]
struct AdaptArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Neighbor count: a positive integer or `logn`.
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// JSON file providing defaults for unset flags (`k`, `seed`).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Built-in function: `mean-y` or `abs-resid-identity`.
    #[arg(long)]
    h: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Failure probability for the sampling-error certificate.
    #[arg(long)]
    delta: Option<f64>,
    /// Declared sup-norm bound on h (required for the certificate).
    #[arg(long)]
    u_h: Option<f64>,
    /// JSON file providing defaults for unset flags
    /// (`h`, `k`, `seed`, `delta`, `u_h`).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    source_out: PathBuf,
    #[arg(long)]
    target_out: PathBuf,
    /// Also write targets with labels drawn from the true conditional law.
    #[arg(long)]
    oracle_out: Option<PathBuf>,
}

#[derive(Args)]
struct BiasSampleArgs {
    #[arg(long)]
    input: PathBuf,
    /// Rejection rule: `linear-clip` or `exp-age`.
    #[arg(long)]
    rule: String,
    /// Covariate column the rule reads.
    #[arg(long)]
    column: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON sweep configuration.
    config: PathBuf,
    /// Override the records CSV path from the config.
    #[arg(long)]
    out_csv: Option<PathBuf>,
    /// Override the summary JSON path from the config.
    #[arg(long)]
    out_json: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    /// JSON file of bound inputs (see README for the schema).
    inputs: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated sizes (n = m per point), strictly increasing.
    #[arg(long)]
    sizes: String,
    #[arg(long, default_value_t = 2)]
    d: usize,
    #[arg(long)]
    k: Option<String>,
    #[arg(long, default_value = "mean")]
    setup: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Optional CSV output (`n,seconds`).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // Ignore failure: the global pool may already exist in tests.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global();
    }
    let all_errors_are_input = matches!(cli.command, Command::Sweep(_) | Command::Bounds(_));
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if all_errors_are_input || err.is_input_error() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Adapt(args) => cmd_adapt(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::SynthMean(args) => cmd_synth(SetupTag::MeanEstimation, args),
        Command::SynthRisk(args) => cmd_synth(SetupTag::RiskEstimation, args),
        Command::BiasSample(args) => cmd_bias_sample(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Bounds(args) => cmd_bounds(args),
        Command::Bench(args) => cmd_bench(args),
    }
}

/// Seed resolution order: explicit flag, then the CSA_SEED environment
/// variable, then the fixed default 0. Never wall-clock.
fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match std::env::var("CSA_SEED") {
        Ok(text) => text
            .parse()
            .map_err(|_| Error::Schema(format!("CSA_SEED is not a 64-bit integer: `{text}`"))),
        Err(_) => Ok(0),
    }
}

fn parse_policy(flag: Option<String>, fallback: Option<String>) -> Result<KPolicy> {
    match flag.or(fallback) {
        Some(text) => text.parse(),
        None => Ok(KPolicy::Fixed(1)),
    }
}

fn parse_h(name: &str) -> Result<HFunction> {
    match name {
        "mean-y" => Ok(HFunction::mean_y()),
        "abs-resid-identity" => Ok(HFunction::abs_residual_identity()),
        other => Err(Error::Schema(format!(
            "unknown h selector `{other}` (expected `mean-y` or `abs-resid-identity`)"
        ))),
    }
}

/// Optional defaults merged under explicit flags.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlagDefaults {
    k: Option<String>,
    seed: Option<u64>,
    h: Option<String>,
    delta: Option<f64>,
    u_h: Option<f64>,
}

/// Parse JSON with field-path-carrying error messages.
fn parse_json<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            Error::Schema(format!("{what}: {}", e.inner()))
        } else {
            Error::Schema(format!("{what}: field `{path}`: {}", e.inner()))
        }
    })
}

fn load_defaults(path: &Option<PathBuf>) -> Result<FlagDefaults> {
    match path {
        None => Ok(FlagDefaults::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            parse_json(&text, "config file")
        }
    }
}

fn cmd_adapt(args: AdaptArgs) -> Result<()> {
    let defaults = load_defaults(&args.config)?;
    let source = dataset::load_labeled_csv(&args.source)?;
    let targets = dataset::load_unlabeled_csv(&args.target)?;
    let policy = parse_policy(args.k, defaults.k)?;
    let seed = resolve_seed(args.seed.or(defaults.seed))?;
    let sampler = knn_csa::build_sampler(&source, policy)?;
    let pseudo = sampler.pseudo_label(&targets, &SeededRng::new(seed))?;
    dataset::write_labeled_csv(&pseudo, &args.out, "y_pseudo")?;
    Ok(())
}

#[derive(Serialize)]
struct EstimateOutput {
    estimate: f64,
    empirical_variance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    sampling_bound: Option<f64>,
    n: usize,
    m: usize,
    k: usize,
    seconds: f64,
}

fn cmd_estimate(args: EstimateArgs) -> Result<()> {
    let defaults = load_defaults(&args.config)?;
    let source = dataset::load_labeled_csv(&args.source)?;
    let targets = dataset::load_unlabeled_csv(&args.target)?;
    let h_name = args
        .h
        .or(defaults.h)
        .ok_or_else(|| Error::Schema("missing --h selector".into()))?;
    let mut h = parse_h(&h_name)?;
    if let Some(u) = args.u_h.or(defaults.u_h) {
        h = h.with_bound(u);
    }
    let policy = parse_policy(args.k, defaults.k)?;
    let seed = resolve_seed(args.seed.or(defaults.seed))?;
    let delta = args.delta.or(defaults.delta);
    let report = csa_estimate(&source, &targets, &h, policy, &SeededRng::new(seed), delta)?;
    let out = EstimateOutput {
        estimate: report.estimate,
        empirical_variance: report.empirical_variance,
        sampling_bound: report.sampling_bound,
        n: report.n,
        m: report.m,
        k: report.k,
        seconds: report.wall_time,
    };
    println!("{}", to_json(&out)?);
    Ok(())
}

fn cmd_synth(tag: SetupTag, args: SynthArgs) -> Result<()> {
    let seed = resolve_seed(args.seed)?;
    let rng = SeededRng::new(seed);
    let (source, targets, setup) = match tag {
        SetupTag::MeanEstimation => gen_mean_setup(args.n, args.m, &rng)?,
        SetupTag::RiskEstimation => gen_risk_setup(args.n, args.m, &rng)?,
    };
    dataset::write_labeled_csv(&source, &args.source_out, "y")?;
    dataset::write_unlabeled_csv(&targets, &args.target_out)?;
    if let Some(oracle_out) = args.oracle_out {
        let labeled = oracle_labeled_targets(&setup, &targets, &rng)?;
        dataset::write_labeled_csv(&labeled, &oracle_out, "y")?;
    }
    Ok(())
}

fn cmd_bias_sample(args: BiasSampleArgs) -> Result<()> {
    let rule = match args.rule.as_str() {
        "linear-clip" => BiasRule::LinearClip { column: args.column },
        "exp-age" => BiasRule::ExpAge { column: args.column },
        other => {
            return Err(Error::Schema(format!(
                "unknown rule `{other}` (expected `linear-clip` or `exp-age`)"
            )))
        }
    };
    let data = dataset::load_labeled_csv(&args.input)?;
    let seed = resolve_seed(args.seed)?;
    let sub = bias_subsample(&data, &rule, &mut SeededRng::new(seed))?;
    dataset::write_labeled_csv(&sub, &args.out, "y")?;
    Ok(())
}

#[derive(Deserialize)]
struct SweepFileConfig {
    setup: SetupTag,
    cells: Vec<(usize, usize)>,
    methods: Vec<knn_csa::Method>,
    replications: usize,
    base_seed: u64,
    #[serde(default)]
    delta: Option<f64>,
    #[serde(default = "default_out_csv")]
    out_csv: PathBuf,
    #[serde(default = "default_out_json")]
    out_json: PathBuf,
}

impl SweepFileConfig {
    fn sweep(&self) -> SweepConfig {
        SweepConfig {
            setup: self.setup,
            cells: self.cells.clone(),
            methods: self.methods.clone(),
            replications: self.replications,
            base_seed: self.base_seed,
            delta: self.delta,
        }
    }
}

fn default_out_csv() -> PathBuf {
    PathBuf::from("sweep_records.csv")
}

fn default_out_json() -> PathBuf {
    PathBuf::from("sweep_summary.json")
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config)?;
    let file: SweepFileConfig = parse_json(&text, "config")?;
    let result = run_sweep(&file.sweep())?;
    let csv_path = args.out_csv.unwrap_or(file.out_csv);
    let json_path = args.out_json.unwrap_or(file.out_json);
    write_records_csv(&result, &csv_path)?;
    write_summary_json(&result, &json_path)?;
    eprintln!(
        "wrote {} records to {} and summary to {}",
        result.records.len(),
        csv_path.display(),
        json_path.display()
    );
    Ok(())
}

/// Bound-evaluation request: the base constants plus (k, n), optional
/// sampling-bound inputs, and optional overrides describing h².
#[derive(Deserialize)]
struct BoundsRequest {
    #[serde(flatten)]
    inputs: BoundInputs,
    k: usize,
    n: usize,
    #[serde(default)]
    m: Option<usize>,
    #[serde(default)]
    v_hat: Option<f64>,
    #[serde(default)]
    q_abs_h: Option<f64>,
    #[serde(default)]
    s2_h: Option<f64>,
    #[serde(default)]
    h2: Option<H2Overrides>,
}

#[derive(Deserialize)]
struct H2Overrides {
    #[serde(default)]
    u_h: Option<f64>,
    #[serde(default)]
    sigma_h2: Option<f64>,
    #[serde(default)]
    g_h_integral: Option<f64>,
}

#[derive(Serialize)]
struct BoundsOutput {
    #[serde(skip_serializing_if = "Option::is_none")]
    sampling_bound: Option<f64>,
    nn_bound: bounds::BoundReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    combined_bound: Option<f64>,
}

fn cmd_bounds(args: BoundsArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.inputs)?;
    let request: BoundsRequest = parse_json(&text, "inputs")?;
    request.inputs.validate()?;

    let sampling = match (request.m, request.v_hat) {
        (Some(m), Some(v_hat)) => Some(bounds::sampling_bound(
            request.inputs.u_h,
            v_hat,
            m,
            request.inputs.delta,
        )?),
        _ => None,
    };
    let nn = bounds::nn_bound(&request.inputs, request.k, request.n)?;
    let combined = match (&request.h2, request.m, request.q_abs_h, request.s2_h) {
        (Some(h2), Some(m), Some(q_abs_h), Some(s2_h)) => {
            let mut inputs_h2 = request.inputs.clone();
            if let Some(u) = h2.u_h {
                inputs_h2.u_h = u;
            }
            if let Some(s) = h2.sigma_h2 {
                inputs_h2.sigma_h2 = s;
            }
            if let Some(g) = h2.g_h_integral {
                inputs_h2.g_h_integral = g;
            }
            Some(bounds::combined_bound(
                &request.inputs,
                &inputs_h2,
                request.k,
                request.n,
                m,
                q_abs_h,
                s2_h,
            )?)
        }
        _ => None,
    };
    let out = BoundsOutput {
        sampling_bound: sampling,
        nn_bound: nn,
        combined_bound: combined,
    };
    println!("{}", to_json(&out)?);
    Ok(())
}

#[derive(Serialize)]
struct BenchPoint {
    n: usize,
    seconds: f64,
}

#[derive(Serialize)]
struct BenchOutput {
    times: Vec<BenchPoint>,
    doubling_ratios: Vec<f64>,
    avg_doubling_ratio: f64,
    loglog_slope: f64,
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let sizes: Vec<usize> = args
        .sizes
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Schema(format!("size `{s}` is not an integer")))
        })
        .collect::<Result<_>>()?;
    let tag = match args.setup.as_str() {
        "mean" => SetupTag::MeanEstimation,
        "risk" => SetupTag::RiskEstimation,
        other => return Err(Error::Schema(format!("unknown setup `{other}`"))),
    };
    let policy = parse_policy(args.k, None)?;
    let seed = resolve_seed(args.seed)?;
    let scan = timing_scan(tag, args.d, &sizes, policy, seed)?;
    let ratios = doubling_ratios(&scan);
    let ns: Vec<f64> = scan.iter().map(|(n, _)| *n as f64).collect();
    let ts: Vec<f64> = scan.iter().map(|(_, t)| *t).collect();
    let out = BenchOutput {
        times: scan.iter().map(|&(n, seconds)| BenchPoint { n, seconds }).collect(),
        avg_doubling_ratio: ratios.iter().sum::<f64>() / ratios.len() as f64,
        doubling_ratios: ratios,
        loglog_slope: fit_rate(&ns, &ts)?,
    };
    if let Some(path) = args.out {
        use std::io::Write;
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(file, "n,seconds")?;
        for p in &out.times {
            writeln!(file, "{},{}", p.n, p.seconds)?;
        }
    }
    println!("{}", to_json(&out)?);
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Data(format!("json: {e}")))
}
