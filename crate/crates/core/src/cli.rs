//! Command-line pipelines: `stats`, `plan`, `validate` and `experiment`.
//!
//! Every flag can also be set through an environment variable named
//! `LTM_<FLAG>` (upper case, dashes as underscores), e.g. `LTM_GRID_N`.
//! All documents are JSON and embed the resolved configuration and seeds.
//!
//! Exit codes: 0 success, 2 usage, 3 input, 4 planning, 5 validation,
//! 6 output.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::graph::MultiGraph;
use crate::io::{self, EdgeListOptions, PlanDocument, SelfLoopPolicy, StatisticsDocument};
use crate::planner::{self, DeltaPolicy, PlanResult, PlannerConfig};
use crate::sampler::{self, McReport, RealizationReport};
use crate::typestats::{extract_statistics, post_statistics, CostRule, Statistics, ThresholdRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Input,
    Plan,
    Validate,
    Output,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Input => 3,
            Stage::Plan => 4,
            Stage::Validate => 5,
            Stage::Output => 6,
        }
    }
}

#[derive(Debug, Error)]
#[error("{stage:?} stage failed: {message}")]
pub struct CliError {
    pub stage: Stage,
    pub message: String,
}

fn fail<E: std::fmt::Display>(stage: Stage) -> impl Fn(E) -> CliError {
    move |e| CliError {
        stage,
        message: e.to_string(),
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "ltm-lcip", version, about = "Least-cost threshold interventions via mean-field linear programming")]
pub struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true, env = "LTM_JOBS")]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract type statistics from an edge list.
    Stats(StatsCmd),
    /// Solve the discretized program and audit the plan.
    Plan(PlanCmd),
    /// Check a plan on the network and/or on sampled networks.
    Validate(ValidateCmd),
    /// stats, plan and validate in one run, over threshold instances.
    Experiment(ExperimentCmd),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct NetworkArgs {
    /// Edge list: one `tail head` pair per line.
    #[arg(long, env = "LTM_EDGES")]
    pub edges: Option<PathBuf>,
    /// Read every line as two opposite edges.
    #[arg(long, env = "LTM_UNDIRECTED")]
    pub undirected: bool,
    /// Drop self-loops instead of rejecting the file.
    #[arg(long, env = "LTM_DROP_SELF_LOOPS")]
    pub drop_self_loops: bool,
    /// half-out-degree, uniform-random or file:PATH (`label threshold` lines).
    #[arg(long, default_value = "half-out-degree", env = "LTM_THRESHOLD_RULE")]
    pub threshold_rule: String,
    /// Lower explicit thresholds above the out-degree to the out-degree.
    #[arg(long, env = "LTM_CLAMP_THRESHOLDS")]
    pub clamp_thresholds: bool,
    /// linear, seeding, unit-seeding or file:PATH (`d k r c0 .. cr` lines).
    #[arg(long, default_value = "linear", env = "LTM_COST_RULE")]
    pub cost_rule: String,
    #[arg(long, default_value_t = 0, env = "LTM_SEED")]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PlanArgs {
    #[arg(long, default_value_t = 0.1, env = "LTM_EPS")]
    pub eps: f64,
    #[arg(long, default_value_t = 100, env = "LTM_GRID_N")]
    pub grid_n: usize,
    /// `auto` for Delta_N, or a positive number.
    #[arg(long, default_value = "0.05", env = "LTM_DELTA")]
    pub delta: String,
    /// Fine audit grid size (default 10 N).
    #[arg(long, env = "LTM_AUDIT_M")]
    pub audit_m: Option<usize>,
    /// Stop the grid below z = 1 so zero in-degree types are allowed.
    #[arg(long, env = "LTM_EXCLUDE_TOP")]
    pub exclude_top: bool,
    /// Also solve with seeding columns only, for comparison.
    #[arg(long, env = "LTM_COMPARE_SEEDING")]
    pub compare_seeding: bool,
    /// Write the LP in CPLEX LP format to the output directory.
    #[arg(long, env = "LTM_LP_DUMP")]
    pub lp_dump: bool,
    /// Points of the plotted curves.
    #[arg(long, default_value_t = 200, env = "LTM_CURVE_POINTS")]
    pub curve_points: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct McArgs {
    /// Population of each sampled network.
    #[arg(long, default_value_t = 100_000, env = "LTM_MC_N")]
    pub mc_n: u64,
    /// Sampled networks (0 disables sampling).
    #[arg(long, default_value_t = 0, env = "LTM_REPLICATES")]
    pub replicates: usize,
}

#[derive(Debug, Args)]
pub struct StatsCmd {
    #[command(flatten)]
    pub network: NetworkArgs,
    #[arg(long, default_value = "out", env = "LTM_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlanCmd {
    /// Statistics document from `stats` (instead of an edge list).
    #[arg(long, env = "LTM_STATS")]
    pub stats: Option<PathBuf>,
    #[command(flatten)]
    pub network: NetworkArgs,
    #[command(flatten)]
    pub plan: PlanArgs,
    #[arg(long, default_value = "out", env = "LTM_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateCmd {
    /// Plan document from `plan`.
    #[arg(long, env = "LTM_PLAN")]
    pub plan: PathBuf,
    #[arg(long, env = "LTM_STATS")]
    pub stats: Option<PathBuf>,
    #[command(flatten)]
    pub network: NetworkArgs,
    #[command(flatten)]
    pub mc: McArgs,
    #[arg(long, default_value = "out", env = "LTM_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Flags as given.
    None,
    /// Undirected, half-out-degree thresholds, linear cost, eps 0.1, N 100,
    /// Delta 0.05, seeding comparison.
    Epinions,
    /// Undirected, uniform random thresholds, linear cost, eps 0.3, N 100,
    /// Delta 0.05, 10 threshold instances.
    Powergrid,
}

#[derive(Debug, Args)]
pub struct ExperimentCmd {
    #[arg(long, value_enum, default_value = "none", env = "LTM_PRESET")]
    pub preset: Preset,
    /// Threshold instances (default 10 for random thresholds, else 1).
    #[arg(long, env = "LTM_INSTANCES")]
    pub instances: Option<usize>,
    #[command(flatten)]
    pub network: NetworkArgs,
    #[command(flatten)]
    pub plan: PlanArgs,
    #[command(flatten)]
    pub mc: McArgs,
    #[arg(long, default_value = "out", env = "LTM_OUT")]
    pub out: PathBuf,
}

pub fn parse_threshold_rule(s: &str, seed: u64) -> Result<ThresholdRule> {
    match s {
        "half-out-degree" => Ok(ThresholdRule::HalfOutDegree),
        "uniform-random" => Ok(ThresholdRule::UniformRandom { seed }),
        _ if s.starts_with("file:") => Ok(ThresholdRule::Explicit(Vec::new())),
        _ => Err(CliError {
            stage: Stage::Input,
            message: format!("unknown threshold rule {s:?}"),
        }),
    }
}

pub fn parse_cost_rule(s: &str) -> Result<CostRule> {
    match s {
        "linear" => Ok(CostRule::Linear),
        "seeding" => Ok(CostRule::Seeding),
        "unit-seeding" => Ok(CostRule::UnitSeeding),
        _ => match s.strip_prefix("file:") {
            Some(p) => io::read_cost_table(Path::new(p)).map_err(fail(Stage::Input)),
            None => Err(CliError {
                stage: Stage::Input,
                message: format!("unknown cost rule {s:?}"),
            }),
        },
    }
}

pub fn parse_delta(s: &str) -> Result<DeltaPolicy> {
    if s == "auto" {
        return Ok(DeltaPolicy::Auto);
    }
    s.parse::<f64>()
        .map(DeltaPolicy::Value)
        .map_err(|e| CliError {
            stage: Stage::Input,
            message: format!("--delta expects `auto` or a number, got {s:?}: {e}"),
        })
}

/// A network with thresholds and its extracted statistics.
pub struct Loaded {
    pub graph: MultiGraph,
    pub labels: Vec<String>,
    pub rho: crate::graph::ThresholdVector,
    pub stats: Statistics,
    pub node_type: Vec<usize>,
    pub clamped: usize,
    pub dropped_self_loops: usize,
}

pub fn load_network(args: &NetworkArgs) -> Result<Loaded> {
    let path = args.edges.as_ref().ok_or_else(|| CliError {
        stage: Stage::Input,
        message: "no input: pass --edges (or --stats where accepted)".into(),
    })?;
    let opts = EdgeListOptions {
        undirected: args.undirected,
        self_loops: if args.drop_self_loops {
            SelfLoopPolicy::Drop
        } else {
            SelfLoopPolicy::Reject
        },
    };
    let el = io::read_edge_list(path, opts).map_err(fail(Stage::Input))?;
    let rule = match args.threshold_rule.strip_prefix("file:") {
        Some(p) => ThresholdRule::Explicit(
            io::read_thresholds(Path::new(p), &el.labels).map_err(fail(Stage::Input))?,
        ),
        None => parse_threshold_rule(&args.threshold_rule, args.seed)?,
    };
    let (rho, clamped) = rule
        .thresholds(&el.graph, args.clamp_thresholds)
        .map_err(fail(Stage::Input))?;
    let cost = parse_cost_rule(&args.cost_rule)?;
    let (stats, node_type) = extract_statistics(&el.graph, &rho, &cost).map_err(fail(Stage::Input))?;
    info!(
        "loaded {}: {} nodes, {} edges, {} types",
        path.display(),
        el.graph.node_count(),
        el.graph.edge_count(),
        stats.len()
    );
    Ok(Loaded {
        graph: el.graph,
        labels: el.labels,
        rho,
        stats,
        node_type,
        clamped,
        dropped_self_loops: el.dropped_self_loops,
    })
}

fn planner_config(args: &PlanArgs) -> Result<PlannerConfig> {
    let cfg = PlannerConfig {
        eps: args.eps,
        grid_n: args.grid_n,
        delta: parse_delta(&args.delta)?,
        audit_m: args.audit_m,
        exclude_top: args.exclude_top,
        ..Default::default()
    };
    cfg.validate().map_err(fail(Stage::Input))?;
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    io::write_json(path, v).map_err(fail(Stage::Output))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Stats(c) => cmd_stats(&c).map(|_| ()),
        Command::Plan(c) => cmd_plan(&c).map(|_| ()),
        Command::Validate(c) => cmd_validate(&c).map(|_| ()),
        Command::Experiment(c) => cmd_experiment(c).map(|_| ()),
    }
}

pub fn cmd_stats(c: &StatsCmd) -> Result<StatisticsDocument> {
    let net = load_network(&c.network)?;
    let doc = StatisticsDocument::new(
        &net.stats,
        Some(net.graph.edge_count()),
        json!({
            "command": "stats",
            "network": c.network,
            "clamped_thresholds": net.clamped,
            "dropped_self_loops": net.dropped_self_loops,
        }),
    );
    write_json(&c.out.join("statistics.json"), &doc)?;
    println!("{}", serde_json::to_string_pretty(&doc.summary).expect("serializable"));
    Ok(doc)
}

fn statistics_input(stats: &Option<PathBuf>, network: &NetworkArgs) -> Result<(Statistics, Option<Loaded>)> {
    match stats {
        Some(p) => {
            let doc: StatisticsDocument = io::read_json(p).map_err(fail(Stage::Input))?;
            Ok((doc.statistics().map_err(fail(Stage::Input))?, None))
        }
        None => {
            let net = load_network(network)?;
            Ok((net.stats.clone(), Some(net)))
        }
    }
}

fn plan_and_write(
    p0: &Statistics,
    args: &PlanArgs,
    out: &Path,
    config: serde_json::Value,
) -> Result<(PlanResult, Option<PlanResult>)> {
    let cfg = planner_config(args)?;
    if args.lp_dump {
        let built = planner::build_lp(p0, &cfg).map_err(fail(Stage::Plan))?;
        std::fs::create_dir_all(out).map_err(fail(Stage::Output))?;
        std::fs::write(out.join("model.lp"), built.model.to_lp_format()).map_err(fail(Stage::Output))?;
    }
    let res = planner::plan(p0, &cfg).map_err(fail(Stage::Plan))?;
    info!(
        "plan cost {:.6}, regime {:?}, original margin {:.3e}",
        res.cost, res.regime, res.audit.original_margin
    );
    write_json(&out.join("plan.json"), &PlanDocument::new(&res, config.clone()))?;
    io::write_curve_csv(&out.join("curve_initial.csv"), p0, args.curve_points).map_err(fail(Stage::Output))?;
    let post = post_statistics(p0, &res.xi, false).map_err(fail(Stage::Plan))?;
    io::write_curve_csv(&out.join("curve_planned.csv"), &post, args.curve_points)
        .map_err(fail(Stage::Output))?;

    let seeding = if args.compare_seeding {
        let scfg = PlannerConfig {
            seeding_only: true,
            ..cfg
        };
        let s = planner::plan(p0, &scfg).map_err(fail(Stage::Plan))?;
        write_json(&out.join("plan_seeding.json"), &PlanDocument::new(&s, config))?;
        let spost = post_statistics(p0, &s.xi, false).map_err(fail(Stage::Plan))?;
        io::write_curve_csv(&out.join("curve_seeding.csv"), &spost, args.curve_points)
            .map_err(fail(Stage::Output))?;
        Some(s)
    } else {
        None
    };
    Ok((res, seeding))
}

pub fn cmd_plan(c: &PlanCmd) -> Result<PlanResult> {
    let (p0, _) = statistics_input(&c.stats, &c.network)?;
    let config = json!({
        "command": "plan",
        "stats": c.stats,
        "network": c.network,
        "plan": c.plan,
    });
    let (res, seeding) = plan_and_write(&p0, &c.plan, &c.out, config)?;
    println!(
        "{}",
        json!({
            "cost": res.cost,
            "seeding_cost": seeding.map(|s| s.cost),
            "regime": res.regime,
            "audit": res.audit,
        })
    );
    Ok(res)
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationDocument {
    pub config: serde_json::Value,
    pub realization: Option<RealizationReport>,
    pub monte_carlo: Option<McReport>,
}

fn validate_and_write(
    p0: &Statistics,
    net: Option<&Loaded>,
    plan: &PlanDocument,
    mc: &McArgs,
    seed: u64,
    out: &Path,
    config: serde_json::Value,
) -> Result<ValidationDocument> {
    let xi = plan.intervention().map_err(fail(Stage::Input))?;
    let realization = match net {
        Some(net) => {
            let rep = sampler::realize_on_network(
                &net.graph,
                &net.rho,
                p0,
                &net.node_type,
                &xi,
                plan.eps,
                seed,
            )
            .map_err(fail(Stage::Validate))?;
            io::write_trajectory_csv(
                &out.join("trajectory_network.csv"),
                &rep.y,
                &rep.z,
                &rep.recursion_y,
                &rep.recursion_z,
            )
            .map_err(fail(Stage::Output))?;
            info!("network final fraction {:.4}", rep.final_fraction);
            Some(rep)
        }
        None => None,
    };
    let monte_carlo = if mc.replicates > 0 || net.is_none() {
        let rep = sampler::monte_carlo_validate(p0, &xi, mc.mc_n, mc.replicates, plan.eps, seed)
            .map_err(fail(Stage::Validate))?;
        for run in &rep.runs {
            io::write_trajectory_csv(
                &out.join(format!("trajectory_replicate_{}.csv", run.replicate)),
                &run.y,
                &run.z,
                &rep.recursion_y,
                &rep.recursion_z,
            )
            .map_err(fail(Stage::Output))?;
        }
        Some(rep)
    } else {
        None
    };
    let doc = ValidationDocument {
        config,
        realization,
        monte_carlo,
    };
    write_json(&out.join("validate.json"), &doc)?;
    Ok(doc)
}

pub fn cmd_validate(c: &ValidateCmd) -> Result<ValidationDocument> {
    let plan: PlanDocument = io::read_json(&c.plan).map_err(fail(Stage::Input))?;
    let (p0, net) = statistics_input(&c.stats, &c.network)?;
    let config = json!({
        "command": "validate",
        "plan": c.plan,
        "stats": c.stats,
        "network": c.network,
        "mc": c.mc,
        "seed": c.network.seed,
    });
    let doc = validate_and_write(&p0, net.as_ref(), &plan, &c.mc, c.network.seed, &c.out, config)?;
    println!(
        "{}",
        json!({
            "final_fraction": doc.realization.as_ref().map(|r| r.final_fraction),
            "success_rate": doc.monte_carlo.as_ref().and_then(|m| m.success_rate),
            "max_sup_dev_y": doc.monte_carlo.as_ref().map(|m| m.max_sup_dev_y),
        })
    );
    Ok(doc)
}

#[derive(Debug, Clone, Serialize)]
pub struct InstanceSummary {
    pub instance: usize,
    pub threshold_seed: u64,
    pub cost: f64,
    pub seeding_cost: Option<f64>,
    pub realized_cost: Option<f64>,
    pub final_fraction: Option<f64>,
    pub original_margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: &[f64]) -> Option<MeanStd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(MeanStd {
        mean,
        std: var.sqrt(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub config: serde_json::Value,
    pub instances: Vec<InstanceSummary>,
    pub cost: Option<MeanStd>,
    pub final_fraction: Option<MeanStd>,
}

/// Applies the preset on top of the parsed flags.
pub fn apply_preset(c: &mut ExperimentCmd) {
    match c.preset {
        Preset::None => {}
        Preset::Epinions => {
            c.network.undirected = true;
            c.network.threshold_rule = "half-out-degree".into();
            c.network.cost_rule = "linear".into();
            c.plan.eps = 0.1;
            c.plan.grid_n = 100;
            c.plan.delta = "0.05".into();
            c.plan.compare_seeding = true;
        }
        Preset::Powergrid => {
            c.network.undirected = true;
            c.network.threshold_rule = "uniform-random".into();
            c.network.cost_rule = "linear".into();
            c.plan.eps = 0.3;
            c.plan.grid_n = 100;
            c.plan.delta = "0.05".into();
            c.instances.get_or_insert(10);
        }
    }
}

pub fn cmd_experiment(mut c: ExperimentCmd) -> Result<ExperimentSummary> {
    apply_preset(&mut c);
    let random = c.network.threshold_rule == "uniform-random";
    let instances = c.instances.unwrap_or(if random { 10 } else { 1 });
    let mut rows = Vec::new();
    for i in 0..instances {
        let mut network = c.network.clone();
        network.seed = c.network.seed + i as u64;
        let dir = if instances > 1 {
            c.out.join(format!("instance_{i}"))
        } else {
            c.out.clone()
        };
        let net = load_network(&network)?;
        let config = json!({
            "command": "experiment",
            "preset": c.preset,
            "instance": i,
            "network": network,
            "plan": c.plan,
            "mc": c.mc,
        });
        write_json(
            &dir.join("statistics.json"),
            &StatisticsDocument::new(&net.stats, Some(net.graph.edge_count()), config.clone()),
        )?;
        let (res, seeding) = plan_and_write(&net.stats, &c.plan, &dir, config.clone())?;
        let doc = PlanDocument::new(&res, config.clone());
        let val = validate_and_write(&net.stats, Some(&net), &doc, &c.mc, network.seed, &dir, config)?;
        if let Some(s) = &seeding {
            let sdoc = PlanDocument::new(s, json!({"seeding_only": true}));
            let xi = sdoc.intervention().map_err(fail(Stage::Input))?;
            let rep = sampler::realize_on_network(
                &net.graph,
                &net.rho,
                &net.stats,
                &net.node_type,
                &xi,
                sdoc.eps,
                network.seed,
            )
            .map_err(fail(Stage::Validate))?;
            io::write_trajectory_csv(
                &dir.join("trajectory_network_seeding.csv"),
                &rep.y,
                &rep.z,
                &rep.recursion_y,
                &rep.recursion_z,
            )
            .map_err(fail(Stage::Output))?;
        }
        let real = val.realization.as_ref();
        rows.push(InstanceSummary {
            instance: i,
            threshold_seed: network.seed,
            cost: res.cost,
            seeding_cost: seeding.map(|s| s.cost),
            realized_cost: real.map(|r| r.realized_cost),
            final_fraction: real.map(|r| r.final_fraction),
            original_margin: res.audit.original_margin,
        });
    }
    let costs: Vec<f64> = rows.iter().map(|r| r.cost).collect();
    let fractions: Vec<f64> = rows.iter().filter_map(|r| r.final_fraction).collect();
    let summary = ExperimentSummary {
        config: json!({
            "preset": c.preset,
            "instances": instances,
            "network": c.network,
            "plan": c.plan,
            "mc": c.mc,
        }),
        cost: mean_std(&costs),
        final_fraction: mean_std(&fractions),
        instances: rows,
    };
    write_json(&c.out.join("summary.json"), &summary)?;
    println!(
        "{}",
        json!({"cost": summary.cost, "final_fraction": summary.final_fraction})
    );
    Ok(summary)
}
