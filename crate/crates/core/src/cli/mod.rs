//! Config-driven command line front end.
//!
//! Every run writes `summary.json` plus one CSV per table into the output
//! directory. Outputs never mention the worker count, so they are
//! byte-identical for any `--workers`.

mod config;
mod output;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

pub use config::{HorizonSpec, Mode, RunConfig, Thresholds, UProviderSpec};
pub use output::{num, Table};

use crate::checks::{
    check_c1, check_c2, check_c3, check_c4_endpoint, C4Source, ConditionReport, Endpoint, EvalMode,
};
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_c, estimate_rho, estimate_survival, estimate_u, estimate_v, fit_exponent, ConstantU, GridU,
    SurvivalCurve, UProvider,
};
use crate::mechanisms::SegmentMechanism;
use crate::oracle::{dp_survival, dp_u, enumerate_small};
use crate::parallel::{default_workers, MonteCarlo};
use crate::stats::{binomial_se, Z95};
use crate::walk::{simulate_path, IncrementLaw, Side};

#[derive(Parser, Debug)]
#[command(name = "killwalk", version, about = "Persistence of random walks under absorption mechanisms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads; outputs do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    paths: Option<u64>,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Per-path outcomes up to the largest horizon.
    Simulate,
    /// Survival curves `P_x(tau > n)` on the horizon grid.
    Survival,
    /// Log-log slope of the survival curve.
    Exponent,
    /// The classical constant `c_x`.
    CConst,
    /// `u(y)` on the y grid.
    UFn,
    /// The constant `V(x)` and its series terms.
    VConst,
    /// Mixture weight of the endpoint limit.
    Rho,
    /// Lattice-oracle survival probabilities, exact rationals for small n.
    Oracle,
    /// Diagnostic check of one of the conditions C1 to C4.
    Check {
        #[arg(value_enum)]
        condition: CheckId,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum CheckId {
    C1,
    C2,
    C3,
    C4,
}

impl Command {
    fn name(self) -> String {
        match self {
            Command::Simulate => "simulate".into(),
            Command::Survival => "survival".into(),
            Command::Exponent => "exponent".into(),
            Command::CConst => "c-const".into(),
            Command::UFn => "u-fn".into(),
            Command::VConst => "v-const".into(),
            Command::Rho => "rho".into(),
            Command::Oracle => "oracle".into(),
            Command::Check { condition } => format!("check-{}", condition.id()),
        }
    }
}

impl CheckId {
    fn id(self) -> &'static str {
        match self {
            CheckId::C1 => "c1",
            CheckId::C2 => "c2",
            CheckId::C3 => "c3",
            CheckId::C4 => "c4",
        }
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidSpec(_) | Error::IncompatibleMechanism(_) | Error::InvalidArgument(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// What a subcommand produced.
#[derive(Default)]
struct Outputs {
    tables: Vec<Table>,
    results: serde_json::Map<String, Value>,
}

struct Ctx {
    cfg: RunConfig,
    law: IncrementLaw,
    mech: SegmentMechanism,
    mc: MonteCarlo,
    grid: Vec<u64>,
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let command = cli.command;
    let mut summary = serde_json::Map::new();
    summary.insert("killwalk_version".into(), json!(env!("CARGO_PKG_VERSION")));
    summary.insert("subcommand".into(), json!(command.name()));

    let cfg = match load_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            return finish(&out, summary, Err(e), &[]);
        }
    };
    let out = PathBuf::from(&cfg.out);
    summary.insert("seed".into(), json!(cfg.seed));
    summary.insert("config".into(), serde_json::to_value(&cfg).expect("config serializes"));

    let workers = cli.workers.unwrap_or_else(default_workers);
    let result = build_ctx(cfg, workers).and_then(|ctx| execute(command, &ctx));
    match result {
        Ok(o) => {
            summary.insert("results".into(), Value::Object(o.results));
            finish(&out, summary, Ok(()), &o.tables)
        }
        Err(e) => finish(&out, summary, Err(e), &[]),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::InvalidSpec("missing --config PATH".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(paths) = cli.paths {
        cfg.total_paths = paths;
    }
    if let Some(mode) = cli.mode {
        cfg.mode = mode;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.to_string_lossy().into_owned();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn build_ctx(cfg: RunConfig, workers: usize) -> Result<Ctx> {
    let law = IncrementLaw::new(cfg.increment.clone())?;
    let mech = SegmentMechanism::build(&cfg.mechanism)?;
    if cfg.mode.runs_dp() && law.lattice_span().is_none() {
        return Err(Error::IncompatibleMechanism("dp mode requires a lattice increment law".into()));
    }
    let mc = MonteCarlo::new(cfg.total_paths, cfg.seed).with_workers(workers);
    let grid = cfg.horizons.grid()?;
    Ok(Ctx {
        cfg,
        law,
        mech,
        mc,
        grid,
    })
}

fn finish(out: &Path, mut summary: serde_json::Map<String, Value>, status: Result<()>, tables: &[Table]) -> i32 {
    let code = match &status {
        Ok(()) => EXIT_OK,
        Err(e) => exit_code(e),
    };
    match status {
        Ok(()) => {
            summary.insert("status".into(), json!("ok"));
            summary.insert("files".into(), json!(tables.iter().map(|t| t.name.clone()).collect::<Vec<_>>()));
        }
        Err(e) => {
            eprintln!("error: {e}");
            summary.insert("status".into(), json!("error"));
            summary.insert("error".into(), json!({ "kind": e.kind(), "message": e.to_string() }));
        }
    }
    let written = std::fs::create_dir_all(out).and_then(|()| {
        for t in tables {
            t.write(out)?;
        }
        let mut text = serde_json::to_string_pretty(&Value::Object(summary)).expect("summary serializes");
        text.push('\n');
        std::fs::write(out.join("summary.json"), text)
    });
    if let Err(e) = written {
        eprintln!("error: cannot write outputs to {}: {e}", out.display());
        return EXIT_RUNTIME;
    }
    code
}

fn execute(command: Command, ctx: &Ctx) -> Result<Outputs> {
    match command {
        Command::Simulate => simulate(ctx),
        Command::Survival => survival(ctx),
        Command::Exponent => exponent(ctx),
        Command::CConst => c_const(ctx),
        Command::UFn => u_fn(ctx),
        Command::VConst => v_const(ctx),
        Command::Rho => rho(ctx),
        Command::Oracle => oracle(ctx),
        Command::Check { condition } => check(ctx, condition),
    }
}

fn simulate(ctx: &Ctx) -> Result<Outputs> {
    let horizon = *ctx.grid.last().unwrap();
    let mut t = Table::new(
        "outcomes.csv",
        &["x", "replicate", "absorbed_at", "crossings", "steps", "final_position"],
    );
    let mut absorbed = Vec::new();
    for &x in &ctx.cfg.x {
        let rows = ctx.mc.fold(
            Vec::new,
            |acc: &mut Vec<(u64, Option<u64>, u64, u64, f64)>, r, stream| {
                let o = simulate_path(x, &ctx.law, &ctx.mech, horizon, stream, false);
                acc.push((r, o.absorbed_at, o.crossings_reached(), o.steps, o.final_position));
            },
            |a, b| a.extend(b),
        );
        absorbed.push(json!({ "x": x, "absorbed": rows.iter().filter(|r| r.1.is_some()).count() }));
        for (r, a, k, steps, pos) in rows {
            t.push(vec![
                num(x),
                r.to_string(),
                a.map(|a| a.to_string()).unwrap_or_default(),
                k.to_string(),
                steps.to_string(),
                num(pos),
            ]);
        }
    }
    let mut o = Outputs::default();
    o.results.insert("horizon".into(), json!(horizon));
    o.results.insert("absorbed".into(), json!(absorbed));
    o.tables.push(t);
    Ok(o)
}

/// Standard error implied by a 95% interval.
fn se_from_ci(lo: f64, hi: f64) -> f64 {
    (hi - lo) / (2.0 * Z95)
}

fn z_score(diff: f64, se: f64) -> f64 {
    if diff == 0.0 {
        0.0
    } else {
        diff / se
    }
}

fn mc_curves(ctx: &Ctx) -> Result<Vec<SurvivalCurve>> {
    ctx.cfg
        .x
        .iter()
        .map(|&x| estimate_survival(x, &ctx.law, &ctx.mech, &ctx.grid, &ctx.mc))
        .collect()
}

fn dp_curves(ctx: &Ctx) -> Result<Vec<SurvivalCurve>> {
    ctx.cfg
        .x
        .iter()
        .map(|&x| Ok(SurvivalCurve::exact(x, ctx.grid.clone(), dp_survival(x, &ctx.law, &ctx.mech, &ctx.grid)?)))
        .collect()
}

fn survival_tables(ctx: &Ctx, o: &mut Outputs) -> Result<(Vec<SurvivalCurve>, Vec<SurvivalCurve>)> {
    let mc = if ctx.cfg.mode.runs_mc() { mc_curves(ctx)? } else { Vec::new() };
    let dp = if ctx.cfg.mode.runs_dp() { dp_curves(ctx)? } else { Vec::new() };
    if !mc.is_empty() {
        let mut t = Table::new("survival.csv", &["x", "n", "survivors", "total", "estimate", "ci_low", "ci_high"]);
        for c in &mc {
            for (i, &n) in c.horizons.iter().enumerate() {
                t.push(vec![
                    num(c.x),
                    n.to_string(),
                    c.survivors[i].to_string(),
                    c.total_paths.to_string(),
                    num(c.estimates[i]),
                    num(c.ci_low[i]),
                    num(c.ci_high[i]),
                ]);
            }
        }
        o.tables.push(t);
    }
    if !dp.is_empty() {
        let mut t = Table::new("survival_dp.csv", &["x", "n", "probability"]);
        for c in &dp {
            for (i, &n) in c.horizons.iter().enumerate() {
                t.push(vec![num(c.x), n.to_string(), num(c.estimates[i])]);
            }
        }
        o.tables.push(t);
    }
    if !mc.is_empty() && !dp.is_empty() {
        // Standard errors are binomial with the oracle value as the true p.
        let mut t = Table::new("survival_diff.csv", &["x", "n", "mc", "dp", "diff", "se", "z"]);
        for (m, d) in mc.iter().zip(&dp) {
            for (i, &n) in m.horizons.iter().enumerate() {
                let diff = m.estimates[i] - d.estimates[i];
                let se = binomial_se(d.estimates[i], m.total_paths);
                t.push(vec![
                    num(m.x),
                    n.to_string(),
                    num(m.estimates[i]),
                    num(d.estimates[i]),
                    num(diff),
                    num(se),
                    num(z_score(diff, se)),
                ]);
            }
        }
        o.tables.push(t);
    }
    Ok((mc, dp))
}

fn survival(ctx: &Ctx) -> Result<Outputs> {
    let mut o = Outputs::default();
    let (mc, dp) = survival_tables(ctx, &mut o)?;
    let last = |cs: &[SurvivalCurve]| {
        cs.iter()
            .map(|c| json!({ "x": c.x, "n": c.horizons.last(), "estimate": c.estimates.last() }))
            .collect::<Vec<_>>()
    };
    if !mc.is_empty() {
        o.results.insert("mc_last".into(), json!(last(&mc)));
    }
    if !dp.is_empty() {
        o.results.insert("dp_last".into(), json!(last(&dp)));
    }
    Ok(o)
}

fn exponent(ctx: &Ctx) -> Result<Outputs> {
    let mut o = Outputs::default();
    let (mc, dp) = survival_tables(ctx, &mut o)?;
    let mut t = Table::new("exponent.csv", &["x", "source", "slope", "intercept", "slope_stderr", "r_squared"]);
    let mut fits = Vec::new();
    for (source, curves) in [("mc", &mc), ("dp", &dp)] {
        for c in curves {
            let f = fit_exponent(c)?;
            t.push(vec![
                num(c.x),
                source.into(),
                num(f.slope),
                num(f.intercept),
                num(f.slope_stderr),
                num(f.r_squared),
            ]);
            fits.push(json!({ "x": c.x, "source": source, "fit": f }));
        }
    }
    o.tables.push(t);
    o.results.insert("fits".into(), json!(fits));
    o.results.insert(
        "note".into(),
        json!("one simulated path serves every horizon; the fit treats grid points as independent"),
    );
    Ok(o)
}

fn c_const(ctx: &Ctx) -> Result<Outputs> {
    let mut t = Table::new("c_const.csv", &["x", "value", "stderr", "mean_overshoot", "paths_used", "censored"]);
    let mut all = Vec::new();
    for &x in &ctx.cfg.x {
        let c = estimate_c(x, &ctx.law, &ctx.mc, ctx.cfg.step_cap)?;
        t.push(vec![
            num(x),
            num(c.value),
            num(c.stderr),
            num(c.mean_overshoot),
            c.paths_used.to_string(),
            c.censored.to_string(),
        ]);
        all.push(c);
    }
    let mut o = Outputs::default();
    o.tables.push(t);
    o.results.insert("c".into(), json!(all));
    Ok(o)
}

fn u_fn(ctx: &Ctx) -> Result<Outputs> {
    let n = ctx.cfg.n_large;
    let mut mc = Vec::new();
    let mut dp = Vec::new();
    for &y in &ctx.cfg.y_grid {
        if ctx.cfg.mode.runs_mc() {
            mc.push(estimate_u(y, &ctx.law, &ctx.mech, n, &ctx.mc, None)?);
        }
        if ctx.cfg.mode.runs_dp() {
            dp.push((y, dp_u(y, &ctx.law, &ctx.mech, n)?));
        }
    }
    let mut t = Table::new("u_fn.csv", &["y", "source", "value", "ci_low", "ci_high"]);
    for u in &mc {
        let source = serde_json::to_value(u.source).expect("source serializes");
        t.push(vec![
            num(u.y),
            source.as_str().unwrap_or_default().to_string(),
            num(u.value),
            num(u.ci_low),
            num(u.ci_high),
        ]);
    }
    for &(y, v) in &dp {
        t.push(vec![num(y), "dp".into(), num(v), num(v), num(v)]);
    }
    let mut o = Outputs::default();
    o.tables.push(t);
    if !mc.is_empty() && !dp.is_empty() {
        let mut d = Table::new("u_fn_diff.csv", &["y", "mc", "dp", "diff", "se", "z"]);
        for (u, &(_, v)) in mc.iter().zip(&dp) {
            let diff = u.value - v;
            let se = se_from_ci(u.ci_low, u.ci_high);
            d.push(vec![num(u.y), num(u.value), num(v), num(diff), num(se), num(z_score(diff, se))]);
        }
        o.tables.push(d);
    }
    o.results.insert("n_large".into(), json!(n));
    o.results.insert("mc".into(), json!(mc));
    o.results.insert(
        "dp".into(),
        json!(dp.iter().map(|&(y, v)| json!({ "y": y, "value": v })).collect::<Vec<_>>()),
    );
    Ok(o)
}

fn u_provider(ctx: &Ctx) -> Result<Box<dyn UProvider>> {
    Ok(match &ctx.cfg.u_provider {
        UProviderSpec::Constant { value } => Box::new(ConstantU(*value)),
        UProviderSpec::DpGrid { lo, hi } => Box::new(GridU::from_dp(&ctx.law, &ctx.mech, *lo, *hi, ctx.cfg.n_large)?),
        UProviderSpec::McGrid { start, spacing, points } => Box::new(GridU::from_mc(
            &ctx.law,
            &ctx.mech,
            *start,
            *spacing,
            *points,
            ctx.cfg.n_large,
            &ctx.mc,
        )?),
    })
}

fn v_const(ctx: &Ctx) -> Result<Outputs> {
    let u = u_provider(ctx)?;
    let mut terms = Table::new("v_terms.csv", &["x", "k", "term", "ci_low", "ci_high"]);
    let mut values = Table::new("v_const.csv", &["x", "value", "k_max", "tail_bound_ratio", "censored"]);
    let mut all = Vec::new();
    for &x in &ctx.cfg.x {
        let v = estimate_v(x, &ctx.law, &ctx.mech, u.as_ref(), ctx.cfg.k_max, &ctx.mc, ctx.cfg.step_cap)?;
        for (k, (&term, &se)) in v.terms.iter().zip(&v.term_stderr).enumerate() {
            terms.push(vec![num(x), k.to_string(), num(term), num(term - Z95 * se), num(term + Z95 * se)]);
        }
        values.push(vec![
            num(x),
            num(v.value),
            v.k_max.to_string(),
            num(v.tail_bound_ratio),
            v.censored.to_string(),
        ]);
        all.push(v);
    }
    let mut o = Outputs::default();
    o.tables.push(values);
    o.tables.push(terms);
    o.results.insert("v".into(), json!(all));
    Ok(o)
}

fn rho(ctx: &Ctx) -> Result<Outputs> {
    let mut t = Table::new("rho.csv", &["x", "n", "value", "ci_low", "ci_high", "survivors", "nonneg"]);
    let mut all = Vec::new();
    for &x in &ctx.cfg.x {
        let r = estimate_rho(x, &ctx.law, &ctx.mech, ctx.cfg.n, &ctx.mc)?;
        t.push(vec![
            num(x),
            ctx.cfg.n.to_string(),
            num(r.value),
            num(r.ci_low),
            num(r.ci_high),
            r.survivors.to_string(),
            r.nonneg.to_string(),
        ]);
        all.push(json!({ "x": x, "rho": r }));
    }
    let mut o = Outputs::default();
    o.tables.push(t);
    o.results.insert("n".into(), json!(ctx.cfg.n));
    o.results.insert("rho".into(), json!(all));
    Ok(o)
}

fn oracle(ctx: &Ctx) -> Result<Outputs> {
    let mut t = Table::new("oracle.csv", &["x", "n", "probability", "exact"]);
    for &x in &ctx.cfg.x {
        let probs = dp_survival(x, &ctx.law, &ctx.mech, &ctx.grid)?;
        for (&n, &p) in ctx.grid.iter().zip(&probs) {
            let exact = if n <= u64::from(ctx.cfg.enumerate_max) {
                enumerate_small(x, &ctx.law, &ctx.mech, n as u32)?.to_string()
            } else {
                String::new()
            };
            t.push(vec![num(x), n.to_string(), num(p), exact]);
        }
    }
    let mut o = Outputs::default();
    o.tables.push(t);
    Ok(o)
}

fn report_table(name: String, reports: &[ConditionReport]) -> Table {
    let mut t = Table::new(name, &["label", "index", "value", "ci_low", "ci_high"]);
    for r in reports {
        for row in &r.table {
            t.push(vec![
                row.label.clone(),
                row.index.to_string(),
                num(row.value),
                num(row.ci_low),
                num(row.ci_high),
            ]);
        }
    }
    t
}

/// Pairs rows with equal `(label, index)`; the standard error comes from the
/// simulated interval.
fn report_diff(name: String, mc: &[ConditionReport], dp: &[ConditionReport]) -> Table {
    let mut t = Table::new(name, &["label", "index", "mc", "dp", "diff", "se", "z"]);
    for (m, d) in mc.iter().zip(dp) {
        for (a, b) in m.table.iter().zip(&d.table) {
            if a.label != b.label || a.index != b.index {
                continue;
            }
            let diff = a.value - b.value;
            let se = se_from_ci(a.ci_low, a.ci_high);
            t.push(vec![
                a.label.clone(),
                a.index.to_string(),
                num(a.value),
                num(b.value),
                num(diff),
                num(se),
                num(z_score(diff, se)),
            ]);
        }
    }
    t
}

fn endpoint_table(name: String, sets: &[(f64, Vec<Endpoint>)]) -> Table {
    let mut t = Table::new(name, &["x", "value", "sign", "weight"]);
    for (x, endpoints) in sets {
        for e in endpoints {
            let sign = match e.side {
                Side::Nonneg => "+",
                Side::Neg => "-",
            };
            t.push(vec![num(*x), num(e.value), sign.into(), num(e.weight)]);
        }
    }
    t
}

fn check(ctx: &Ctx, id: CheckId) -> Result<Outputs> {
    let cfg = &ctx.cfg;
    let th = &cfg.thresholds;
    let id_str = id.id();
    let mut modes = Vec::new();
    if cfg.mode.runs_mc() {
        modes.push(EvalMode::MonteCarlo(ctx.mc));
    }
    if cfg.mode.runs_dp() {
        if id == CheckId::C1 {
            return Err(Error::IncompatibleMechanism("check c1 is simulation-only; use mode mc".into()));
        }
        modes.push(EvalMode::Dp);
    }

    let mut o = Outputs::default();
    let mut by_mode: Vec<(EvalMode, Vec<ConditionReport>)> = Vec::new();
    for mode in modes {
        let mut reports = Vec::new();
        let mut endpoints = Vec::new();
        match id {
            CheckId::C1 => {
                for &x in &cfg.x {
                    reports.push(check_c1(x, &ctx.law, &ctx.mech, cfg.k_min..=cfg.k_max, &ctx.mc, cfg.step_cap, &th.c1)?);
                }
            }
            CheckId::C2 => reports.push(check_c2(&cfg.y_grid, &ctx.law, &ctx.mech, &ctx.grid, &mode, &th.c2)?),
            CheckId::C3 => {
                for &x in &cfg.x {
                    reports.push(check_c3(x, &ctx.law, &ctx.mech, &ctx.grid, &mode, &th.c3)?);
                }
            }
            CheckId::C4 => {
                let source = match mode {
                    EvalMode::MonteCarlo(mc) => C4Source::MonteCarlo {
                        mc,
                        survivor_target: cfg.survivor_target,
                    },
                    EvalMode::Dp => C4Source::Dp,
                };
                for &x in &cfg.x {
                    let out = check_c4_endpoint(x, &ctx.law, &ctx.mech, cfg.n, &source, &th.c4)?;
                    reports.push(out.report);
                    endpoints.push((x, out.endpoints));
                }
            }
        }
        let suffix = if matches!(mode, EvalMode::Dp) { "_dp" } else { "" };
        o.tables.push(report_table(format!("conditions_{id_str}{suffix}.csv"), &reports));
        if !endpoints.is_empty() {
            o.tables.push(endpoint_table(format!("endpoints{suffix}.csv"), &endpoints));
        }
        let key = if suffix.is_empty() { "mc" } else { "dp" };
        o.results.insert(key.into(), json!(reports));
        by_mode.push((mode, reports));
    }
    if let [(_, mc), (_, dp)] = by_mode.as_slice() {
        if id != CheckId::C4 {
            o.tables.push(report_diff(format!("conditions_{id_str}_diff.csv"), mc, dp));
        }
    }
    Ok(o)
}
