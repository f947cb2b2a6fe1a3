//! The `adasub` command line: `run`, `verify` and `params`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration or usage
//! error, 3 a check or verification suite failed.

pub mod config;
pub mod output;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::{
    constant_query, discretized_gaussian, identity_query, indicator_query, linear_grid, run_median_experiment,
    run_sq_experiment, threshold_query, Cube, ExperimentReport, Finite, FixedAnalyst, MedianMechanism, MedianWalk,
    MedianWalkOn, RandomCorrelation, Scalar, Settings, SqMechanism,
};
use crate::mechanisms::{
    cost_hp, cost_uniform, median_params_with, search_rounds, sq_params_with, BudgetLedger, SqConstants,
};
use crate::model::{SignVector, TestQuery};

pub use config::{AnalystSpec, Checks, ExperimentConfig, MechanismSpec, PopulationSpec, QuerySpec, SampleSize};
pub use output::{format_number, write_csv, CSV_HEADER, OUT_DIR_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CHECKS: i32 = 3;

/// Parameters resolved from a config before the run starts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Plan {
    pub n: usize,
    pub rounds: usize,
    pub epsilon: Option<f64>,
    pub votes: Option<usize>,
    pub groups: Option<usize>,
    pub advisory_min_n: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunOutcome {
    pub plan: Plan,
    pub report: ExperimentReport,
    pub checks: Vec<CheckResult>,
}

impl RunOutcome {
    pub fn checks_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn sq_constants(m: &MechanismSpec) -> SqConstants {
    match m {
        MechanismSpec::Sq { c_eps, c_k, .. } => SqConstants { c_eps: *c_eps, c_k: *c_k },
        _ => SqConstants::default(),
    }
}

/// Works out `n`, the SQ schedule or the group count for a config.
pub fn plan(cfg: &ExperimentConfig) -> Result<Plan> {
    let rounds = cfg.analyst.rounds();
    let delta = cfg.analyst.delta();
    match (&cfg.analyst, &cfg.mechanism) {
        (AnalystSpec::MedianWalk { max_arity, grid_points, spacing, start, .. }, MechanismSpec::Median { c_m, groups, .. }) => {
            let walk = MedianWalk::new(rounds, *max_arity, *grid_points, *spacing, *start)?;
            let schedule = median_params_with(rounds, &walk.arities(), &[*grid_points], delta, *c_m)?;
            let n = match cfg.n {
                SampleSize::Fixed(n) => n,
                SampleSize::Advisory { advisory_factor } => (advisory_factor * schedule.advisory_min_n).ceil() as usize,
            };
            Ok(Plan {
                n,
                rounds,
                epsilon: None,
                votes: None,
                groups: Some(groups.unwrap_or(schedule.groups)),
                advisory_min_n: Some(schedule.advisory_min_n),
            })
        }
        (analyst, mechanism) => {
            let tau = analyst.tau().ok_or_else(|| Error::config("analyst.tau", "missing"))?;
            let c = sq_constants(mechanism);
            let advisory = sq_params_with(1, rounds, tau, delta, c)?.advisory_min_n;
            let n = match cfg.n {
                SampleSize::Fixed(n) => n,
                SampleSize::Advisory { advisory_factor } => (advisory_factor * advisory).ceil() as usize,
            };
            let (epsilon, votes) = match mechanism {
                MechanismSpec::Sq { epsilon, votes, .. } => {
                    let p = sq_params_with(n, rounds, tau, delta, c)?;
                    (Some(epsilon.unwrap_or(p.epsilon)), Some(votes.unwrap_or(p.votes)))
                }
                _ => (None, None),
            };
            Ok(Plan {
                n,
                rounds,
                epsilon,
                votes,
                groups: None,
                advisory_min_n: Some(advisory),
            })
        }
    }
}

fn scalar_queries<X: Scalar>(specs: &[QuerySpec]) -> Result<Vec<TestQuery<X>>> {
    specs
        .iter()
        .map(|q| match q {
            QuerySpec::Constant { value } => constant_query(*value),
            QuerySpec::Indicator { value } => Ok(indicator_query(*value)),
            QuerySpec::Threshold { at } => Ok(threshold_query(*at)),
            QuerySpec::Identity => Ok(identity_query()),
            QuerySpec::Coordinate { .. } => Err(Error::config("analyst.queries", "coordinate queries need a cube")),
        })
        .collect()
}

fn cube_queries(specs: &[QuerySpec]) -> Result<Vec<TestQuery<SignVector>>> {
    specs
        .iter()
        .map(|q| match q {
            QuerySpec::Constant { value } => TestQuery::constant(1, *value),
            QuerySpec::Coordinate { index } => Ok(TestQuery::coordinate(*index)),
            other => Err(Error::config("analyst.queries", format!("{other:?} does not apply to a cube"))),
        })
        .collect()
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    plan: &'a Plan,
    settings: Settings,
}

impl Context<'_> {
    fn sq_mechanism(&self) -> SqMechanism {
        match (self.plan.epsilon, self.plan.votes) {
            (Some(epsilon), Some(votes)) => SqMechanism::Subsampling {
                epsilon,
                votes,
                delta: self.cfg.analyst.delta(),
            },
            _ => SqMechanism::Naive,
        }
    }

    fn tau(&self) -> f64 {
        self.cfg.analyst.tau().unwrap_or(0.0)
    }

    fn run_scalar<X: Scalar>(&self, population: &Finite<X>) -> Result<ExperimentReport> {
        match (&self.cfg.analyst, &self.cfg.mechanism) {
            (AnalystSpec::MedianWalk { max_arity, grid_points, spacing, start, .. }, MechanismSpec::Median { noise, side_mass, .. }) => {
                let walk = MedianWalk::new(self.plan.rounds, *max_arity, *grid_points, *spacing, *start)?;
                let mechanism = MedianMechanism {
                    groups: self.plan.groups.unwrap_or(2),
                    noise: *noise,
                    side_mass: *side_mass,
                };
                run_median_experiment(&self.settings, population, mechanism, |_| Ok(MedianWalkOn::new(walk.clone())))
            }
            (AnalystSpec::Fixed { queries, .. }, _) => {
                let queries = scalar_queries::<X>(queries)?;
                run_sq_experiment(&self.settings, population, self.sq_mechanism(), self.tau(), |_| {
                    FixedAnalyst::cycling(queries.clone(), self.plan.rounds)
                })
            }
            _ => Err(Error::config("analyst.kind", "this analyst does not run on a scalar population")),
        }
    }

    fn run_cube(&self, cube: &Cube) -> Result<ExperimentReport> {
        match &self.cfg.analyst {
            AnalystSpec::RandomCorrelation { center, .. } => {
                let center = center.unwrap_or(cube.p_one());
                run_sq_experiment(&self.settings, cube, self.sq_mechanism(), self.tau(), |_| {
                    RandomCorrelation::with_center(cube.dim(), center)
                })
            }
            AnalystSpec::Fixed { queries, .. } => {
                let queries = cube_queries(queries)?;
                run_sq_experiment(&self.settings, cube, self.sq_mechanism(), self.tau(), |_| {
                    FixedAnalyst::cycling(queries.clone(), self.plan.rounds)
                })
            }
            AnalystSpec::MedianWalk { .. } => Err(Error::config("analyst.kind", "median analysts need a scalar population")),
        }
    }
}

fn evaluate_checks(checks: &Checks, report: &ExperimentReport) -> Vec<CheckResult> {
    let s = &report.summary;
    let mut out = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        out.push(CheckResult {
            name: name.to_string(),
            passed,
            detail,
        })
    };
    if let Some(min) = checks.min_trials_within {
        push(
            "min_trials_within",
            s.trials_all_within >= min,
            format!("{} of {} trials within bound (need ≥ {min})", s.trials_all_within, s.trials),
        );
    }
    if let Some(max) = checks.max_bias {
        push("max_bias", s.max_bias <= max, format!("max bias {} (need ≤ {max})", format_number(s.max_bias)));
    }
    let gap = s.mean_test_gap;
    let shown = gap.map_or_else(|| "none".to_string(), format_number);
    if let Some(min) = checks.min_mean_test_gap {
        push(
            "min_mean_test_gap",
            gap.is_some_and(|g| g >= min),
            format!("mean test gap {shown} (need ≥ {min})"),
        );
    }
    if let Some(max) = checks.max_mean_test_gap {
        push(
            "max_mean_test_gap",
            gap.is_some_and(|g| g <= max),
            format!("mean test gap {shown} (need ≤ {max})"),
        );
    }
    out
}

/// Resolves and runs a config, then evaluates its checks.
pub fn run_config(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let plan = plan(cfg)?;
    let mut settings = Settings::new(cfg.seed, cfg.trials, plan.n);
    settings.threads = cfg.threads;
    let budget = match &cfg.mechanism {
        MechanismSpec::Sq { budget, .. } | MechanismSpec::Median { budget, .. } => budget.as_ref(),
        MechanismSpec::Naive => None,
    };
    settings.ledger = budget.map_or_else(BudgetLedger::unlimited, |b| b.ledger());
    let ctx = Context {
        cfg,
        plan: &plan,
        settings,
    };
    let report = match &cfg.population {
        PopulationSpec::Bernoulli { p } => match &cfg.analyst {
            // The attack runs on independent bernoulli(p) coordinates.
            AnalystSpec::RandomCorrelation { rounds, .. } => ctx.run_cube(&Cube::new(*rounds, *p)?),
            _ => ctx.run_scalar(&crate::harness::bernoulli(*p)?),
        },
        PopulationSpec::Categorical { masses } => ctx.run_scalar(&crate::harness::categorical(masses.clone())?),
        PopulationSpec::Cube { dim, p } => ctx.run_cube(&Cube::new(*dim, *p)?),
        PopulationSpec::UniformPm1Cube { dim } => ctx.run_cube(&Cube::uniform(*dim)?),
        PopulationSpec::DiscretizedGaussian { grid, mu, sigma } => {
            let points = match grid {
                config::GridSpec::Linear { lo, hi, points } => linear_grid(*lo, *hi, *points)?,
                config::GridSpec::Points(p) => p.clone(),
            };
            ctx.run_scalar(&discretized_gaussian(points, *mu, *sigma)?)
        }
    };
    let report = report?;
    let checks = evaluate_checks(&cfg.checks, &report);
    Ok(RunOutcome { plan, report, checks })
}

#[derive(Parser, Debug)]
#[command(name = "adasub", version, about = "Subsampling mechanisms for adaptive data analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run(RunArgs),
    /// Run a named verification suite (or `all`).
    Verify(VerifyArgs),
    /// Print a mechanism's parameter schedule.
    Params {
        #[command(subcommand)]
        which: ParamsCommand,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// CSV destination (default: config `output`, then $ADASUB_OUT_DIR/<stem>.csv, then ./<stem>.csv).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Suite name, or `all`.
    suite: String,
    /// Instance count (default depends on the suite).
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand, Debug)]
enum ParamsCommand {
    /// Statistical-query mechanism schedule.
    Sq {
        #[arg(long)]
        n: usize,
        #[arg(long = "rounds", short = 'T')]
        rounds: usize,
        #[arg(long)]
        tau: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 1.0)]
        c_eps: f64,
        #[arg(long, default_value_t = 8.0)]
        c_k: f64,
    },
    /// Median mechanism schedule, for queries of arity up to `max_arity`.
    Median {
        #[arg(long = "rounds", short = 'T')]
        rounds: usize,
        /// Largest range size.
        #[arg(long)]
        range: usize,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 1)]
        max_arity: usize,
        /// Sample size for the cost columns (default: the advisory minimum).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = crate::mechanisms::median::DEFAULT_C_M)]
        c_m: f64,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::Domain(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// Entry point shared by the binary and the tests.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let target: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(target, "{}", e.render());
            return code;
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a, out),
        Command::Verify(a) => cmd_verify(&a, out),
        Command::Params { which } => cmd_params(&which, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Precondition(format!("{}: {e}", path.display()))
}

fn cmd_run(a: &RunArgs, out: &mut dyn Write) -> Result<i32> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if a.threads.is_some() {
        cfg.threads = a.threads;
    }
    let outcome = run_config(&cfg)?;
    let stem = a
        .config
        .file_stem()
        .map_or_else(|| "report".to_string(), |s| s.to_string_lossy().into_owned());
    let env_dir = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from);
    let csv_path = output::resolve_output(a.out.as_deref(), cfg.output.as_deref(), env_dir.as_deref(), &stem);
    if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    let file = std::fs::File::create(&csv_path).map_err(|e| io_error(&csv_path, e))?;
    write_csv(&outcome.report, std::io::BufWriter::new(file))?;
    let json_path = output::summary_path(&csv_path);
    let doc = serde_json::json!({
        "config": cfg,
        "plan": outcome.plan,
        "population": outcome.report.population,
        "summary": outcome.report.summary,
        "checks": outcome.checks,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Precondition(e.to_string()))?;
    std::fs::write(&json_path, text + "\n").map_err(|e| io_error(&json_path, e))?;
    print_summary(out, &outcome, &csv_path, &json_path).map_err(|e| io_error(&csv_path, e))?;
    Ok(if outcome.checks_passed() { EXIT_OK } else { EXIT_CHECKS })
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), format_number)
}

fn print_summary(out: &mut dyn Write, o: &RunOutcome, csv: &Path, json: &Path) -> std::io::Result<()> {
    let s = &o.report.summary;
    writeln!(out, "population       {}", o.report.population)?;
    writeln!(out, "mechanism        {}", s.mechanism)?;
    writeln!(out, "n                {}", o.plan.n)?;
    if let (Some(eps), Some(k)) = (o.plan.epsilon, o.plan.votes) {
        writeln!(out, "epsilon          {}", format_number(eps))?;
        writeln!(out, "votes            {k}")?;
    }
    if let Some(k) = o.plan.groups {
        writeln!(out, "groups           {k}")?;
    }
    writeln!(out, "trials           {}", s.trials)?;
    writeln!(out, "rounds           {}", s.rounds)?;
    writeln!(out, "within bound     {}/{} trials", s.trials_all_within, s.trials)?;
    writeln!(out, "max bias         {}", format_number(s.max_bias))?;
    writeln!(out, "mean bias        {}", format_number(s.mean_bias))?;
    writeln!(out, "mean test gap    {}", opt(s.mean_test_gap))?;
    writeln!(out, "mean test error  {}", opt(s.mean_test_error))?;
    writeln!(out, "mean total cost  {}", format_number(s.mean_total_cost))?;
    writeln!(out, "mean MI bound    {}", opt(s.mean_mi_bound))?;
    writeln!(out, "refusals         {}", s.refusals)?;
    for c in &o.checks {
        writeln!(out, "check {:<18} {} ({})", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail)?;
    }
    writeln!(out, "wrote {} and {}", csv.display(), json.display())
}

fn cmd_verify(a: &VerifyArgs, out: &mut dyn Write) -> Result<i32> {
    let outcomes = crate::verify::run_named(&a.suite, a.trials, a.seed)?;
    let mut all = true;
    let w = |e: std::io::Error| Error::Precondition(e.to_string());
    for o in &outcomes {
        all &= o.passed();
        writeln!(
            out,
            "{} {}: {} instances, {} failed, worst {} (seed {})",
            if o.passed() { "PASS" } else { "FAIL" },
            o.suite,
            o.instances,
            o.failed,
            format_number(o.worst),
            o.seed
        )
        .map_err(w)?;
        for note in &o.notes {
            writeln!(out, "  {note}").map_err(w)?;
        }
        for f in &o.failures {
            writeln!(out, "  counterexample: {f}").map_err(w)?;
        }
    }
    Ok(if all { EXIT_OK } else { EXIT_CHECKS })
}

fn cmd_params(which: &ParamsCommand, out: &mut dyn Write) -> Result<i32> {
    let w = |e: std::io::Error| Error::Precondition(e.to_string());
    match *which {
        ParamsCommand::Sq { n, rounds, tau, delta, c_eps, c_k } => {
            let p = sq_params_with(n, rounds, tau, delta, SqConstants { c_eps, c_k })?;
            let per_query = p.votes as f64 * cost_hp(n, 2, p.epsilon, delta)?;
            let total = rounds as f64 * per_query;
            writeln!(out, "epsilon          {}", format_number(p.epsilon)).map_err(w)?;
            writeln!(out, "votes (k)        {}", p.votes).map_err(w)?;
            writeln!(out, "advisory min n   {}", format_number(p.advisory_min_n)).map_err(w)?;
            writeln!(out, "per-query cost   {}", format_number(per_query)).map_err(w)?;
            writeln!(out, "total budget     {}", format_number(total)).map_err(w)?;
            writeln!(out, "MI upper bound   {}", format_number(n as f64 * total)).map_err(w)?;
        }
        ParamsCommand::Median { rounds, range, delta, max_arity, n, c_m } => {
            let arities = vec![max_arity; rounds];
            let p = median_params_with(rounds, &arities, &[range], delta, c_m)?;
            let n = n.unwrap_or(p.advisory_min_n.ceil() as usize);
            let k = p.groups;
            if n < k {
                return Err(Error::domain(format!("n = {n} is smaller than the group count {k}")));
            }
            // Group sizes are fixed by n and k: n mod k groups get one extra.
            let (base, extra) = (n / k, n % k);
            let group_cost = |size: usize| cost_uniform(size, max_arity, 2, max_arity as f64 / size as f64);
            let mut per_step = (k - extra) as f64 * group_cost(base)?;
            if extra > 0 {
                per_step += extra as f64 * group_cost(base + 1)?;
            }
            let per_query = search_rounds(range) as f64 * per_step;
            let total = rounds as f64 * per_query;
            let scale = n.div_ceil(k);
            writeln!(out, "groups (k)       {k}").map_err(w)?;
            writeln!(out, "advisory min n   {}", format_number(p.advisory_min_n)).map_err(w)?;
            writeln!(out, "n                {n}").map_err(w)?;
            writeln!(out, "search steps     {}", search_rounds(range)).map_err(w)?;
            writeln!(out, "per-query cost   {}", format_number(per_query)).map_err(w)?;
            writeln!(out, "total budget     {}", format_number(total)).map_err(w)?;
            writeln!(out, "MI upper bound   {}", format_number(scale as f64 * total)).map_err(w)?;
        }
    }
    Ok(EXIT_OK)
}
