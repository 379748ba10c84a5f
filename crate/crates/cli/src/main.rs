//! `froglab`: command-line access to the froglab simulators, polynomial
//! families, operator iterations and verification suites.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use froglab::frogsim::{self, Model, SimConfig, VisitRecord};
use froglab::operator::{check_vanishing, iterate_a, GridFunction, Operator};
use froglab::params::{ModelParams, Q_STAR};
use froglab::polynomials::{build_family, Family, DEFAULT_K_CAP};
use froglab::stats::DEFAULT_DELTA;
use froglab::verify::{self, CheckReport, Suite, SuiteConfig, DEFAULT_XS};
use froglab::walks::{compare_patterns, nbfm_pattern_pmf, sample_patterns};

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser, Debug, Serialize, Deserialize)]
#[command(name = "froglab", version, about = "Frog models on rooted d-ary trees")]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Derived constants for (d, p).
    Params(ParamsArgs),
    /// Print a P or Q polynomial.
    Poly(PolyArgs),
    /// Iterate the operator on a grid.
    Iterate(IterateArgs),
    /// Deterministic operator checks.
    Check(CheckArgs),
    /// Run a simulator and summarize root visits.
    Simulate(SimArgs),
    /// Generating-function estimates only.
    EstimatePgf(SimArgs),
    /// Loop-erased walk patterns.
    Coupling(CouplingArgs),
    /// Statistical verification suites.
    Verify(VerifyArgs),
}

#[derive(Args, Debug, Serialize, Deserialize)]
struct Common {
    /// Output file (standard output when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize, Deserialize)]
struct ParamsArgs {
    #[arg(long, value_parser = clap::value_parser!(u32).range(2..))]
    d: u32,
    #[arg(long)]
    p: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum FamilyArg {
    P,
    Q,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum TextFormat {
    Text,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum TableFormat {
    Csv,
    Json,
}

#[derive(Args, Debug, Serialize, Deserialize)]
struct PolyArgs {
    #[arg(long, value_enum, ignore_case = true)]
    family: FamilyArg,
    #[arg(long)]
    k: usize,
    #[arg(long, value_enum, default_value_t = TextFormat::Text)]
    format: TextFormat,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum H0 {
    One,
    Zero,
}

#[derive(Args, Debug, Serialize, Deserialize)]
struct IterateArgs {
    #[arg(long, value_parser = clap::value_parser!(u32).range(2..))]
    d: u32,
    #[arg(long)]
    p: f64,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1024)]
    grid_size: usize,
    #[arg(long, value_enum, default_value_t = H0::One)]
    h0: H0,
    #[arg(long, value_enum, default_value_t = TableFormat::Csv)]
    format: TableFormat,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum CheckName {
    Vanishing,
    AdLeA2,
}

#[derive(Args, Debug, Serialize, Deserialize)]
struct CheckArgs {
    #[arg(long, value_enum)]
    name: CheckName,
    /// Vanishing: largest iteration count.
    #[arg(long, default_value_t = 500)]
    n_max: usize,
    /// Vanishing: threshold for the sup of the iterate.
    #[arg(long, default_value_t = 0.05)]
    tol: f64,
    #[arg(long, default_value_t = 1024)]
    grid_size: usize,
    /// ad-le-a2: tree degree (p is the recurrence point for d).
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(3..))]
    d: u32,
    #[arg(long, default_value_t = 100_000)]
    reps: u64,
    #[arg(long, default_value_t = 8)]
    depth: u32,
    #[arg(long, env = "FROGLAB_SEED", default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum ModelArg {
    Fm,
    Nbfm,
    Sfm,
    Rsfm,
}

impl From<ModelArg> for Model {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Fm => Model::Fm,
            ModelArg::Nbfm => Model::Nbfm,
            ModelArg::Sfm => Model::Sfm,
            ModelArg::Rsfm => Model::Rsfm,
        }
    }
}

#[derive(Args, Debug, Serialize, Deserialize)]
struct SimArgs {
    #[arg(long, value_enum)]
    model: ModelArg,
    #[arg(long, value_parser = clap::value_parser!(u32).range(2..))]
    d: u32,
    #[arg(long)]
    p: f64,
    #[arg(long)]
    depth: u32,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    reps: u64,
    #[arg(long, env = "FROGLAB_SEED", default_value_t = 0)]
    seed: u64,
    /// Comma-separated evaluation points in [0,1).
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_XS.to_vec())]
    x_grid: Vec<f64>,
    /// Per-frog step cap (fm).
    #[arg(long, default_value_t = frogsim::DEFAULT_STEP_HORIZON)]
    step_horizon: u64,
    /// Levels below the truncation depth a frog must reach before it is dropped (fm).
    #[arg(long)]
    escape_margin: Option<u32>,
    /// Stop a replicate once the root has been visited this often (fm).
    #[arg(long)]
    visit_cap: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    #[arg(long, value_enum, default_value_t = TableFormat::Json)]
    format: TableFormat,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Serialize, Deserialize)]
struct CouplingArgs {
    #[arg(long, value_parser = clap::value_parser!(u32).range(2..))]
    d: u32,
    #[arg(long)]
    p: f64,
    /// Starting depth of the walks.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    depth: u32,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    reps: u64,
    #[arg(long, env = "FROGLAB_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = TableFormat::Csv)]
    format: TableFormat,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum SuiteArg {
    Coupling,
    Binomial,
    SelfConsistency,
    Rsfm,
    Domination,
    SelfSimilarity,
    Inequality,
    Recurrence,
    All,
}

impl SuiteArg {
    fn suites(self) -> Vec<Suite> {
        match self {
            SuiteArg::Coupling => vec![Suite::Coupling],
            SuiteArg::Binomial => vec![Suite::Binomial],
            SuiteArg::SelfConsistency => vec![Suite::SelfConsistency],
            SuiteArg::Rsfm => vec![Suite::Rsfm],
            SuiteArg::Domination => vec![Suite::Domination],
            SuiteArg::SelfSimilarity => vec![Suite::SelfSimilarity],
            SuiteArg::Inequality => vec![Suite::Inequality],
            SuiteArg::Recurrence => vec![Suite::Recurrence],
            SuiteArg::All => Suite::ALL.to_vec(),
        }
    }
}

#[derive(Args, Debug, Serialize, Deserialize)]
struct VerifyArgs {
    #[arg(long, value_enum)]
    suite: SuiteArg,
    #[arg(long, value_parser = clap::value_parser!(u32).range(2..))]
    d: u32,
    #[arg(long)]
    p: f64,
    #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
    reps: u64,
    #[arg(long, default_value_t = 10)]
    depth: u32,
    #[arg(long, env = "FROGLAB_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_XS.to_vec())]
    xs: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    #[command(flatten)]
    common: Common,
}

/// Result of a subcommand: the body, whether checks passed, and timings.
struct Outcome {
    body: Output,
    pass: bool,
    runtimes: serde_json::Map<String, Value>,
}

enum Output {
    /// Wrapped in the JSON envelope.
    Json(Value),
    /// Written verbatim.
    Raw(String),
}

type CliResult<T> = Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn params_body(a: &ParamsArgs) -> CliResult<Value> {
    let m = ModelParams::new_unrestricted(a.d, a.p).map_err(err)?;
    let maps: Vec<Value> = m
        .c_maps()
        .iter()
        .enumerate()
        .map(|(k, c)| json!({"k": k, "slope": c.slope, "intercept": c.intercept}))
        .collect();
    Ok(json!({
        "d": a.d,
        "p": a.p,
        "pstar": m.pstar().ok(),
        "rho": m.rho(),
        "alpha": m.alpha(),
        "c_maps": maps,
        "q_star": Q_STAR,
        "recurrence_point": (a.d - 1) as f64 / (2 * a.d - 1) as f64,
    }))
}

fn poly_out(a: &PolyArgs) -> CliResult<Output> {
    let family = match a.family {
        FamilyArg::P => Family::P,
        FamilyArg::Q => Family::Q,
    };
    let poly = build_family(family, a.k, DEFAULT_K_CAP).map_err(err)?;
    Ok(match a.format {
        TextFormat::Text => Output::Raw(format!("{family}{} = {poly}\n", a.k)),
        TextFormat::Json => Output::Json(serde_json::to_value(poly.to_json_view(family, a.k)).map_err(err)?),
    })
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    String::from_utf8(w.into_inner().map_err(err)?).map_err(err)
}

fn iterate_out(a: &IterateArgs) -> CliResult<Output> {
    let op = Operator::new(ModelParams::new(a.d, a.p).map_err(err)?).map_err(err)?;
    let c = match a.h0 {
        H0::One => 1.0,
        H0::Zero => 0.0,
    };
    let h0 = GridFunction::constant(a.grid_size, c).map_err(err)?;
    let trace = iterate_a(&op, &h0, a.n).map_err(err)?;
    Ok(match a.format {
        TableFormat::Csv => Output::Raw(csv_string(
            &["n", "x", "value"],
            trace.functions.iter().enumerate().flat_map(|(n, f)| {
                f.xs()
                    .iter()
                    .zip(f.values())
                    .map(move |(x, v)| vec![n.to_string(), x.to_string(), v.to_string()])
                    .collect::<Vec<_>>()
            }),
        )?),
        TableFormat::Json => Output::Json(json!({
            "n": trace.n,
            "sup_values": trace.sup_values,
            "repairs": trace.repairs,
            "max_repair": trace.max_repair(),
            "xs": h0.xs(),
            "values": trace.functions.iter().map(|f| f.values().to_vec()).collect::<Vec<_>>(),
        })),
    })
}

fn check_out(a: &CheckArgs) -> CliResult<(Value, bool)> {
    match a.name {
        CheckName::Vanishing => {
            let r = check_vanishing(a.n_max, a.tol, a.grid_size).map_err(err)?;
            let pass = r.pass();
            Ok((
                json!({
                    "name": "vanishing",
                    "pass": pass,
                    "max_violation": r.max_increase.max(0.0),
                    "details": r,
                }),
                pass,
            ))
        }
        CheckName::AdLeA2 => {
            let r = verify::verify_inequality(a.d, a.reps, a.depth, 128, a.seed, DEFAULT_DELTA).map_err(err)?;
            Ok((
                json!({
                    "name": "ad-le-a2",
                    "pass": r.pass,
                    "max_violation": r.statistics["max_certified_violation"],
                    "details": r,
                }),
                r.pass,
            ))
        }
    }
}

fn sim_config(a: &SimArgs) -> CliResult<SimConfig> {
    let mut cfg = SimConfig::new(
        ModelParams::new(a.d, a.p).map_err(err)?,
        a.model.into(),
        a.depth,
        a.reps,
        a.seed,
    );
    cfg.step_horizon = a.step_horizon;
    cfg.escape_margin = a.escape_margin;
    cfg.visit_cap = a.visit_cap;
    cfg.validate().map_err(err)?;
    if let Some(x) = a.x_grid.iter().find(|x| !(0.0..1.0).contains(*x)) {
        return Err(format!("--x-grid values must lie in [0,1), got {x}"));
    }
    if !(a.delta > 0.0 && a.delta < 1.0) {
        return Err(format!("--delta must lie in (0,1), got {}", a.delta));
    }
    Ok(cfg)
}

fn event_rates(recs: &[VisitRecord]) -> Value {
    let n = recs.len() as f64;
    let frac = |f: &dyn Fn(&VisitRecord) -> bool| recs.iter().filter(|r| f(r)).count() as f64 / n;
    let mean = |f: &dyn Fn(&VisitRecord) -> f64| recs.iter().map(f).sum::<f64>() / n;
    let mut rates = json!({
        "mean_root_visits": mean(&|r| r.root_visits as f64),
        "root_never_visited": frac(&|r| r.root_visits == 0),
        "mean_woken": mean(&|r| r.woken as f64),
    });
    if recs.first().is_some_and(|r| r.branches.is_some()) {
        let b = |r: &VisitRecord| r.branches.clone().expect("branch data");
        rates["d1"] = json!(frac(&|r| b(r).d1()));
        rates["neighbor_to_root"] = json!(frac(&|r| b(r).neighbor_to_root()));
        rates["mean_activated_branches"] = json!(mean(&|r| b(r).activated_count() as f64));
    }
    rates
}

fn simulate_out(a: &SimArgs, full: bool) -> CliResult<Output> {
    let cfg = sim_config(a)?;
    let recs = frogsim::simulate(&cfg).map_err(err)?;
    let hist = frogsim::visit_histogram(&recs);
    let per_x = a
        .x_grid
        .iter()
        .map(|&x| hist.pgf_estimate(x, a.delta).map(|e| (x, e)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    if a.format == TableFormat::Csv {
        return Ok(Output::Raw(csv_string(
            &["x", "estimate", "ci_halfwidth"],
            per_x
                .iter()
                .map(|(x, e)| vec![x.to_string(), e.mean.to_string(), e.halfwidth.to_string()]),
        )?));
    }
    let per_x: Vec<Value> = per_x
        .iter()
        .map(|(x, e)| json!({"x": x, "estimate": e.mean, "ci_halfwidth": e.halfwidth}))
        .collect();
    let mut body = json!({"config": cfg, "per_x": per_x});
    if full {
        body["event_rates"] = event_rates(&recs);
        body["flags"] = json!({
            "horizon_hits": recs.iter().map(|r| r.flags.horizon_hits).sum::<u64>(),
            "visit_cap_hits": recs.iter().filter(|r| r.flags.visit_cap_hit).count(),
            "max_root_visits": hist.max(),
        });
    }
    Ok(Output::Json(body))
}

fn coupling_out(a: &CouplingArgs) -> CliResult<Output> {
    let params = ModelParams::new(a.d, a.p).map_err(err)?;
    let samples = sample_patterns(&params, a.depth, a.reps, a.seed, None).map_err(err)?;
    if a.format == TableFormat::Csv {
        return Ok(Output::Raw(csv_string(
            &["replicate", "k1_or_root", "steps_used"],
            samples.iter().map(|s| {
                vec![
                    s.replicate.to_string(),
                    s.pattern.map_or_else(|| "truncated".to_string(), |p| p.to_string()),
                    s.steps_used.to_string(),
                ]
            }),
        )?));
    }
    let law = nbfm_pattern_pmf(a.d, params.pstar().map_err(err)?, a.depth).map_err(err)?;
    Ok(Output::Json(json!({
        "law": law,
        "comparison": compare_patterns(&samples, &law),
    })))
}

fn verify_out(a: &VerifyArgs) -> CliResult<(Value, bool, serde_json::Map<String, Value>)> {
    let mut cfg = SuiteConfig::new(a.d, a.p, a.reps, a.depth, a.seed);
    cfg.xs = a.xs.clone();
    cfg.delta = a.delta;
    let mut reports: Vec<CheckReport> = Vec::new();
    let mut runtimes = serde_json::Map::new();
    for s in a.suite.suites() {
        let r = verify::run_suite(s, &cfg).map_err(|e| format!("suite {s}: {e}"))?;
        eprintln!("{}", r.summary());
        runtimes.insert(s.name().into(), json!(r.runtime.as_secs_f64()));
        reports.push(r);
    }
    let pass = reports.iter().all(|r| r.pass);
    let flags: serde_json::Map<String, Value> =
        reports.iter().map(|r| (r.name.clone(), json!(r.pass))).collect();
    Ok((json!({"pass": pass, "suite_pass": flags, "reports": reports}), pass, runtimes))
}

fn dispatch(cli: &Cli) -> CliResult<Outcome> {
    let plain = |body: Output| Outcome {
        body,
        pass: true,
        runtimes: serde_json::Map::new(),
    };
    Ok(match &cli.command {
        Command::Params(a) => plain(Output::Json(params_body(a)?)),
        Command::Poly(a) => plain(poly_out(a)?),
        Command::Iterate(a) => plain(iterate_out(a)?),
        Command::Check(a) => {
            let (body, pass) = check_out(a)?;
            Outcome {
                body: Output::Json(body),
                pass,
                runtimes: serde_json::Map::new(),
            }
        }
        Command::Simulate(a) => plain(simulate_out(a, true)?),
        Command::EstimatePgf(a) => plain(simulate_out(a, false)?),
        Command::Coupling(a) => plain(coupling_out(a)?),
        Command::Verify(a) => {
            let (body, pass, runtimes) = verify_out(a)?;
            Outcome {
                body: Output::Json(body),
                pass,
                runtimes,
            }
        }
    })
}

fn out_path(cli: &Cli) -> Option<&PathBuf> {
    match &cli.command {
        Command::Params(a) => a.common.out.as_ref(),
        Command::Poly(a) => a.common.out.as_ref(),
        Command::Iterate(a) => a.common.out.as_ref(),
        Command::Check(a) => a.common.out.as_ref(),
        Command::Simulate(a) | Command::EstimatePgf(a) => a.common.out.as_ref(),
        Command::Coupling(a) => a.common.out.as_ref(),
        Command::Verify(a) => a.common.out.as_ref(),
    }
}

fn render(cli: &Cli, outcome: Outcome, started: Instant) -> CliResult<String> {
    match outcome.body {
        Output::Raw(s) => Ok(s),
        Output::Json(body) => {
            let mut runtimes = outcome.runtimes;
            runtimes.insert("total".into(), json!(started.elapsed().as_secs_f64()));
            let timestamp = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            let doc = json!({
                "header": {
                    "schema_version": SCHEMA_VERSION,
                    "tool_version": env!("CARGO_PKG_VERSION"),
                    "config": cli,
                    "timestamp": timestamp,
                    "runtimes": runtimes,
                },
                "body": body,
            });
            let mut s = serde_json::to_string_pretty(&doc).map_err(err)?;
            s.push('\n');
            Ok(s)
        }
    }
}

fn run(cli: &Cli) -> CliResult<bool> {
    let started = Instant::now();
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(err)?;
    let outcome = dispatch(cli)?;
    let pass = outcome.pass;
    let text = render(cli, outcome, started)?;
    match out_path(cli) {
        Some(path) => std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))?,
        None => std::io::stdout().write_all(text.as_bytes()).map_err(err)?,
    }
    Ok(pass)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
