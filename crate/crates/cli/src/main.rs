//! `coroute`: command-line front end to the mission planning library.
//!
//! Exit codes: 0 on success, 1 when a command fails or a mission is
//! infeasible, 2 on usage errors. Errors go to standard error as
//! `error[<kind>]: <message>`.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use coroute_core::bilevel::{solve_bilevel_with, Budget, SolverReport};
use coroute_core::env::trace::{replay_episode, RouteSolution, REPLAY_TOL};
use coroute_core::env::{AgentSelection, Status};
use coroute_core::eval::{
    dynamic_replan, evaluate_suite, solve, write_matrix_csv, write_table_csv, EvalReport, MethodKind, MethodSpec,
};
use coroute_core::io::{
    export_svg, load_checkpoint, load_events, load_scenario, load_trace, save_checkpoint, save_scenario, save_trace,
    write_scenario, PlotStyle, TraceFile,
};
use coroute_core::policy::{PolicyConfig, PolicyParams};
use coroute_core::scenario::{generate_scenario, Distribution2D, Scenario, TeamConfig};
use coroute_core::training::{train, write_log_csv, TrainConfig};

#[derive(Parser)]
#[command(name = "coroute", version, about = "Cooperative UAV-UGV mission planning")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true, env = "COROUTE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario file.
    Generate(GenerateArgs),
    /// Plan one scenario with one method and write the route trace.
    Solve(SolveArgs),
    /// Train a routing policy.
    Train(TrainArgs),
    /// Compare methods on a set of instances.
    Evaluate(EvaluateArgs),
    /// Run a mission with mid-mission events and replanning.
    Replan(ReplanArgs),
    /// Render a trace as SVG.
    Plot(PlotArgs),
    /// Replay a trace and report constraint violations.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Dist {
    Uniform,
    Gaussian,
    Rayleigh,
}

impl From<Dist> for Distribution2D {
    fn from(d: Dist) -> Self {
        match d {
            Dist::Uniform => Distribution2D::Uniform,
            Dist::Gaussian => Distribution2D::Gaussian,
            Dist::Rayleigh => Distribution2D::Rayleigh,
        }
    }
}

#[derive(Args, Clone, Copy)]
struct TeamArgs {
    /// Number of UAVs (default: the scenario's team).
    #[arg(long)]
    uavs: Option<usize>,
    /// Number of UGVs (default: the scenario's team).
    #[arg(long)]
    ugvs: Option<usize>,
}

impl TeamArgs {
    fn resolve(self, base: TeamConfig) -> TeamConfig {
        TeamConfig {
            num_uavs: self.uavs.unwrap_or(base.num_uavs),
            num_ugvs: self.ugvs.unwrap_or(base.num_ugvs),
            ..base
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    aerial: usize,
    #[arg(long)]
    ground: usize,
    #[arg(long, value_enum, default_value = "uniform")]
    dist: Dist,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    team: TeamArgs,
    /// Output file (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// gls, tabu, anneal, drl_greedy, drl_sample<N>, drl_mf_greedy,
    /// drl_mf_sample<N> or oracle.
    #[arg(long)]
    method: String,
    /// Policy weights for the drl_* methods.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Local search iterations per leg for the heuristics.
    #[arg(long, default_value_t = 2_000)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    team: TeamArgs,
    #[arg(long)]
    trace: PathBuf,
    /// JSON report with per-leg solver results and constraint checks.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Desk,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum NetSize {
    Tiny,
    Desk,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum Selection {
    SortieWise,
    PerStep,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "desk")]
    profile: Profile,
    /// Training configuration as JSON; replaces the profile.
    #[arg(long, env = "COROUTE_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    batches: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_enum)]
    selection: Option<Selection>,
    #[arg(long, value_enum, default_value = "desk")]
    net: NetSize,
    /// Seed of the initial weights.
    #[arg(long, default_value_t = 0)]
    init_seed: u64,
    /// Seed of the instance and sampling streams.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Final checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Also write `<out>.epoch<k>` after every epoch.
    #[arg(long)]
    every_epoch: bool,
    /// Per-batch CSV log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Write zero wall times so identical runs produce identical logs.
    #[arg(long)]
    omit_timing: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',', required = true)]
    methods: Vec<String>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Weights for drl_mf_* methods (default: --checkpoint).
    #[arg(long)]
    mf_checkpoint: Option<PathBuf>,
    /// Scenario files; when absent, instances are generated.
    #[arg(long)]
    scenario: Vec<PathBuf>,
    #[arg(long, default_value_t = 50)]
    instances: usize,
    #[arg(long, default_value_t = 8)]
    aerial: usize,
    #[arg(long, default_value_t = 3)]
    ground: usize,
    #[arg(long, value_enum, default_value = "uniform")]
    dist: Dist,
    /// Instance `i` is generated with seed `seed + i`.
    #[arg(long, default_value_t = 1_000_000)]
    seed: u64,
    /// Team configurations such as `1x1,2x1` (UAVs x UGVs).
    #[arg(long, value_delimiter = ',', default_value = "1x1")]
    teams: Vec<String>,
    #[arg(long, default_value_t = 2_000)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    method_seed: u64,
    /// JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Table CSV (default: standard output).
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Per-instance objective matrix CSV.
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[arg(long)]
    omit_timing: bool,
}

#[derive(Args)]
struct ReplanArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "drl_sample64")]
    method: String,
    #[arg(long)]
    events: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    team: TeamArgs,
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    visited_opacity: f64,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    trace: PathBuf,
}

/// A command that ran but whose outcome is a failure.
#[derive(Debug)]
struct Failure(String);

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Failure {}

fn writer(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut w = writer(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(w.flush()?)
}

fn print_json(value: &impl Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn policy(path: Option<&Path>, kind: MethodKind) -> anyhow::Result<Option<Arc<PolicyParams>>> {
    if !kind.is_drl() {
        return Ok(None);
    }
    let path = path.ok_or_else(|| anyhow!("method {kind} needs --checkpoint"))?;
    Ok(Some(Arc::new(load_checkpoint(path)?.params)))
}

fn require_success(status: Status) -> anyhow::Result<()> {
    if status == Status::Success {
        Ok(())
    } else {
        Err(Failure(format!("mission ended with status {status:?}")).into())
    }
}

fn cmd_generate(a: GenerateArgs) -> anyhow::Result<()> {
    let team = a.team.resolve(TeamConfig::default());
    let s = generate_scenario(a.aerial, a.ground, a.dist.into(), team, a.seed)?;
    match a.out {
        Some(path) => save_scenario(&path, &s)?,
        None => write_scenario(io::stdout().lock(), &s)?,
    }
    Ok(())
}

#[derive(Serialize)]
struct SolveReport {
    method: String,
    seed: u64,
    team: TeamConfig,
    status: Status,
    makespan_s: f64,
    return_s: f64,
    steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    legs: Option<Vec<SolverReport>>,
}

fn cmd_solve(a: SolveArgs) -> anyhow::Result<()> {
    let scenario = load_scenario(&a.scenario)?;
    let team = a.team.resolve(scenario.team);
    let kind: MethodKind = a.method.parse()?;
    let spec = MethodSpec {
        budget: Budget::iterations(a.iterations),
        seed: a.seed,
        policy: policy(a.checkpoint.as_deref(), kind)?,
        ..MethodSpec::new(kind)
    };
    let config = kind.env_config();
    let (route, legs): (RouteSolution, _) = match kind.heuristic() {
        Some(method) => {
            let sol = solve_bilevel_with(&scenario, team, method, spec.budget, a.seed, config)?;
            let legs = sol.reports(method, a.seed, spec.budget);
            (sol.route, Some(legs))
        }
        None => (solve(&spec, &scenario, team, a.seed)?, None),
    };
    save_trace(&a.trace, &TraceFile::new(team, config, &route))?;
    let report = SolveReport {
        method: kind.to_string(),
        seed: a.seed,
        team,
        status: route.status,
        makespan_s: route.makespan_s,
        return_s: route.return_s,
        steps: route.num_steps(),
        legs,
    };
    if let Some(path) = &a.report {
        write_json(path, &report)?;
    }
    print_json(&serde_json::json!({
        "method": report.method,
        "status": report.status,
        "makespan_min": route.makespan_s / 60.0,
        "return_min": route.return_min(),
        "steps": report.steps,
    }))?;
    require_success(route.status)
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let mut config = match &a.config {
        Some(path) => serde_json::from_reader(File::open(path).with_context(|| format!("opening {}", path.display()))?)
            .with_context(|| format!("parsing {}", path.display()))?,
        None => match a.profile {
            Profile::Desk => TrainConfig::desk(),
            Profile::Paper => TrainConfig::paper(),
        },
    };
    if let Some(v) = a.epochs {
        config.epochs = v;
    }
    if let Some(v) = a.batches {
        config.batches_per_epoch = v;
    }
    if let Some(v) = a.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = a.lr {
        config.lr0 = v;
    }
    if let Some(s) = a.selection {
        config.env.selection = match s {
            Selection::SortieWise => AgentSelection::SortieWise,
            Selection::PerStep => AgentSelection::PerStep,
        };
    }
    let net = match a.net {
        NetSize::Tiny => PolicyConfig::tiny(),
        NetSize::Desk => PolicyConfig::desk(),
        NetSize::Paper => PolicyConfig::paper(),
    };
    let params = PolicyParams::init(net, a.init_seed)?;
    let meta = |epoch: u32| {
        serde_json::json!({ "epoch": epoch, "seed": a.seed, "init_seed": a.init_seed, "train": config })
    };
    let state = train(&config, params, a.seed, |s| {
        let e = s.epochs.last().expect("an epoch finished");
        eprintln!(
            "epoch {}: mean return {:.2} min, p = {:.4}{}",
            e.epoch,
            e.mean_return_min,
            e.p_value,
            if e.baseline_swapped { ", baseline updated" } else { "" }
        );
        if a.every_epoch {
            let mut path = a.out.clone().into_os_string();
            path.push(format!(".epoch{}", s.epoch));
            save_checkpoint(Path::new(&path), &s.theta, &meta(s.epoch))?;
        }
        Ok(())
    })?;
    save_checkpoint(&a.out, &state.theta, &meta(state.epoch))?;
    if let Some(path) = &a.log {
        let mut rows = state.batches.clone();
        if a.omit_timing {
            rows.iter_mut().for_each(|r| r.wall_ms = 0);
        }
        let mut w = writer(path)?;
        write_log_csv(&mut w, &rows)?;
        w.flush()?;
    }
    print_json(&serde_json::json!({
        "epochs": state.epoch,
        "baseline_swaps": state.swaps(),
        "final_mean_return_min": state.epochs.last().map(|e| e.mean_return_min),
    }))
}

fn parse_team(s: &str) -> anyhow::Result<TeamConfig> {
    let (u, g) = s.split_once('x').ok_or_else(|| anyhow!("team '{s}' is not of the form <uavs>x<ugvs>"))?;
    let team = TeamConfig::new(u.trim().parse()?, g.trim().parse()?);
    team.validate()?;
    Ok(team)
}

fn cmd_evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    let instances: Vec<Scenario> = if a.scenario.is_empty() {
        (0..a.instances as u64)
            .map(|i| generate_scenario(a.aerial, a.ground, a.dist.into(), TeamConfig::default(), a.seed + i))
            .collect::<Result<_, _>>()?
    } else {
        a.scenario.iter().map(|p| load_scenario(p)).collect::<Result<_, _>>()?
    };
    let mut methods = Vec::new();
    for name in &a.methods {
        let kind: MethodKind = name.trim().parse()?;
        let ckpt = match kind {
            MethodKind::DrlMfGreedy | MethodKind::DrlMfSample(_) => a.mf_checkpoint.as_deref().or(a.checkpoint.as_deref()),
            _ => a.checkpoint.as_deref(),
        };
        methods.push(MethodSpec {
            budget: Budget::iterations(a.iterations),
            seed: a.method_seed,
            policy: policy(ckpt, kind)?,
            ..MethodSpec::new(kind)
        });
    }
    let mut reports: Vec<EvalReport> = Vec::new();
    for t in &a.teams {
        let team = parse_team(t)?;
        let mut r = evaluate_suite(&methods, &instances, team)?;
        if a.omit_timing {
            r.strip_timing();
        }
        reports.push(r);
    }
    if let Some(path) = &a.out {
        write_json(path, &reports)?;
    }
    if let Some(path) = &a.matrix {
        let mut w = writer(path)?;
        write_matrix_csv(&reports, &mut w)?;
        w.flush()?;
    }
    match &a.csv {
        Some(path) => {
            let mut w = writer(path)?;
            write_table_csv(&reports, &mut w)?;
            w.flush()?;
        }
        None => write_table_csv(&reports, io::stdout().lock())?,
    }
    Ok(())
}

fn cmd_replan(a: ReplanArgs) -> anyhow::Result<()> {
    let scenario = load_scenario(&a.scenario)?;
    let team = a.team.resolve(scenario.team);
    let kind: MethodKind = a.method.parse()?;
    let spec = MethodSpec { policy: policy(Some(&a.checkpoint), kind)?, ..MethodSpec::new(kind) };
    let events = load_events(&a.events)?;
    let out = dynamic_replan(&scenario, team, &spec, &events, a.seed)?;
    save_trace(&a.trace, &TraceFile::new(team, kind.env_config(), &out.route))?;
    let report = serde_json::json!({
        "method": kind.to_string(),
        "status": out.route.status,
        "makespan_s": out.route.makespan_s,
        "return_s": out.route.return_s,
        "coverage": out.coverage(),
        "tasks": out.scenario.tasks.len(),
        "final_team": out.final_team,
        "segments": out.segments.iter().map(|s| serde_json::json!({
            "start_entry": s.start_entry,
            "start_step": s.start_step,
        })).collect::<Vec<_>>(),
        "events": out.events,
    });
    if let Some(path) = &a.report {
        write_json(path, &report)?;
    }
    print_json(&serde_json::json!({
        "status": out.route.status,
        "coverage": out.coverage(),
        "makespan_min": out.route.makespan_s / 60.0,
    }))?;
    if let Some((i, e)) = out.events.iter().enumerate().find(|(_, e)| !e.applied) {
        return Err(Failure(format!("event {i} not applied: {}", e.error.as_deref().unwrap_or("unknown"))).into());
    }
    require_success(out.route.status)
}

fn cmd_plot(a: PlotArgs) -> anyhow::Result<()> {
    let scenario = load_scenario(&a.scenario)?;
    let trace = load_trace(&a.trace)?;
    let style = PlotStyle { visited_opacity: a.visited_opacity, ..PlotStyle::default() };
    let svg = export_svg(&scenario, trace.header.team, trace.header.config, &trace.entries, &style)?;
    std::fs::write(&a.out, svg).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

fn cmd_validate(a: ValidateArgs) -> anyhow::Result<()> {
    let scenario = load_scenario(&a.scenario)?;
    let trace = load_trace(&a.trace)?;
    let h = &trace.header;
    let mut violations = Vec::new();
    let mut status = None;
    let mut makespan = None;
    match replay_episode(&scenario, h.team, h.config, &trace.entries) {
        Ok(ep) => {
            let route = ep.finish();
            if route.status == Status::Running {
                violations.push("trace ends before the mission terminates".to_string());
            }
            if route.status != h.status {
                violations.push(format!("header status {:?} but replay ends {:?}", h.status, route.status));
            }
            if (route.makespan_s - h.makespan_s).abs() > REPLAY_TOL * h.makespan_s.abs().max(1.0) {
                violations.push(format!("header makespan {} s but replay gives {} s", h.makespan_s, route.makespan_s));
            }
            status = Some(route.status);
            makespan = Some(route.makespan_s);
        }
        Err(e) => violations.push(e.to_string()),
    }
    print_json(&serde_json::json!({
        "violations": violations,
        "status": status,
        "makespan_s": makespan,
        "steps": trace.entries.len(),
    }))?;
    if !violations.is_empty() {
        bail!(Failure(format!("{} violation(s)", violations.len())));
    }
    require_success(status.expect("replayed"))
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(c) = cause.downcast_ref::<coroute_core::Error>() {
            return c.kind();
        }
        if cause.downcast_ref::<Failure>().is_some() {
            return "failure";
        }
        if cause.downcast_ref::<io::Error>().is_some() {
            return "io";
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return "json";
        }
    }
    "invalid-argument"
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Replan(a) => cmd_replan(a),
        Command::Plot(a) => cmd_plot(a),
        Command::Validate(a) => cmd_validate(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            eprint!("error[usage]: {}", text.strip_prefix("error: ").unwrap_or(&text));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e:#}", error_kind(&e));
            ExitCode::from(1)
        }
    }
}
