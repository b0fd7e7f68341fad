//! `tourpatch` command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use tourpatch::fixtures::{fixture, EXAMPLE4_TOUR};
use tourpatch::fwcycles::{harvest_cycles, CycleClass};
use tourpatch::instance::{
    load_matrix, random_symmetric, symmetrize_asymmetric, validate_symmetry, CostMatrix,
    NeighborRank,
};
use tourpatch::oracle::{brute_min_derangement, brute_min_pm, brute_tsp, OracleResult};
use tourpatch::patcher::solve;
use tourpatch::permutation::{
    canonical_rotation, derangement_value, pm_from_tour, tour_value, Tour,
};
use tourpatch::phase1::phase1_run;
use tourpatch::reduced::build_reduced;
use tourpatch::{HarvestConfig, SolveConfig, TraceLevel};

/// 2-circuit paths kept per cell with `--deep-2circuit`.
const DEEP_KEEP: usize = 6;

#[derive(Parser)]
#[command(
    name = "tourpatch",
    version,
    about = "Symmetric TSP heuristic built on perfect matchings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random symmetric instance.
    Gen {
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 99)]
        max_cost: i64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve an instance file and print the JSON report.
    Solve {
        file: PathBuf,
        #[command(flatten)]
        run: RunConfig,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an exact oracle on a small instance.
    Oracle {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = Which::Tsp)]
        which: Which,
    },
    /// Check the pinned values of a built-in fixture.
    Verify { fixture: String },
    /// Solve an instance and print its trace as JSON lines.
    Trace {
        file: PathBuf,
        #[command(flatten)]
        run: RunConfig,
    },
}

#[derive(Args, Clone)]
struct RunConfig {
    /// Recorded in the report; the solver itself is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum pivot sweeps per cycle search.
    #[arg(long, default_value_t = 8)]
    passes: usize,
    /// Branch nodes per tour search.
    #[arg(long, default_value_t = 1_000_000)]
    node_limit: u64,
    /// Keep more 2-circuit paths per cell.
    #[arg(long)]
    deep_2circuit: bool,
    #[arg(long, value_enum)]
    trace_level: Option<Level>,
    /// Worker threads for the trial phase (solve only).
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Level {
    None,
    Summary,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Tsp,
    Pm,
    Derangement,
}

impl RunConfig {
    fn solve_config(&self, default_level: TraceLevel) -> Result<SolveConfig> {
        if self.threads == 0 {
            bail!("--threads must be at least 1");
        }
        if self.passes == 0 {
            bail!("--passes must be at least 1");
        }
        let trace = match self.trace_level {
            None => default_level,
            Some(Level::None) => TraceLevel::None,
            Some(Level::Summary) => TraceLevel::Summary,
            Some(Level::Full) => TraceLevel::Full,
        };
        let harvest = HarvestConfig {
            passes: self.passes,
            keep_two_circuit: if self.deep_2circuit {
                DEEP_KEEP
            } else {
                HarvestConfig::default().keep_two_circuit
            },
            ..HarvestConfig::default()
        };
        Ok(SolveConfig {
            harvest,
            node_limit: self.node_limit,
            threads: self.threads,
            trace,
            ..SolveConfig::default()
        })
    }

    fn to_json(&self, cfg: &SolveConfig) -> Value {
        json!({
            "seed": self.seed,
            "passes": cfg.harvest.passes,
            "node_limit": cfg.node_limit,
            "deep_2circuit": self.deep_2circuit,
            "trace_level": cfg.trace,
            "threads": cfg.threads,
        })
    }
}

fn read_instance(path: &Path) -> Result<CostMatrix> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    load_matrix(&text).with_context(|| format!("parsing {}", path.display()))
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Solves `m`, going through the doubled symmetric instance when `m` is
/// asymmetric. Returns the report object.
fn run_solve(m: &CostMatrix, run: &RunConfig, cfg: &SolveConfig) -> Result<Value> {
    if validate_symmetry(m).is_empty() {
        let out = solve(m, cfg)?;
        return Ok(json!({
            "config": run.to_json(cfg),
            "asymmetric": false,
            "report": out.report,
        }));
    }
    let sym = symmetrize_asymmetric(m);
    let out = solve(&sym.matrix, cfg)?;
    let Some(order) = sym.directed_order(out.tour.order()) else {
        bail!("the tour of the doubled instance does not alternate copy pairs");
    };
    let value: i64 = (0..order.len())
        .map(|i| m.cost(order[i], order[(i + 1) % order.len()]))
        .sum();
    Ok(json!({
        "config": run.to_json(cfg),
        "asymmetric": true,
        "directed_tour": order.iter().map(|v| v + 1).collect::<Vec<_>>(),
        "directed_value": value,
        "report": out.report,
    }))
}

fn cmd_solve(file: &Path, run: &RunConfig, out: Option<&Path>) -> Result<()> {
    let m = read_instance(file)?;
    let cfg = run.solve_config(TraceLevel::Summary)?;
    let report = run_solve(&m, run, &cfg)?;
    emit(
        &format!("{}\n", serde_json::to_string_pretty(&report)?),
        out,
    )
}

fn cmd_trace(file: &Path, run: &RunConfig) -> Result<()> {
    if run.threads > 1 {
        bail!("--threads above 1 is only accepted by solve");
    }
    let m = read_instance(file)?;
    let cfg = run.solve_config(TraceLevel::Full)?;
    let value = run_solve(&m, run, &cfg)?;
    let report = &value["report"];
    let mut lines = Vec::new();
    let as_array = |key: &str| report[key].as_array().cloned().unwrap_or_default();
    lines.extend(as_array("trace"));
    for kind in ["phases", "rounds"] {
        for mut entry in as_array(kind) {
            if let Value::Object(obj) = &mut entry {
                obj.insert("event".into(), kind.trim_end_matches('s').into());
            }
            lines.push(entry);
        }
    }
    lines.push(json!({
        "event": "result",
        "tour": report["tour"],
        "tour_value": report["tour_value"],
    }));
    let mut text = String::new();
    for line in lines {
        text.push_str(&serde_json::to_string(&line)?);
        text.push('\n');
    }
    emit(&text, None)
}

fn cmd_oracle(file: &Path, which: Which) -> Result<()> {
    let m = read_instance(file)?;
    let (name, res): (&str, OracleResult) = match which {
        Which::Tsp => ("tsp", brute_tsp(&m)?),
        Which::Pm => ("pm", brute_min_pm(&m)?),
        Which::Derangement => ("derangement", brute_min_derangement(&m)?),
    };
    let report = json!({
        "oracle": name,
        "n": m.n(),
        "value": res.value,
        "witness": res.witness.to_string(),
        "method": format!("{:?}", res.method).to_lowercase(),
    });
    emit(
        &format!("{}\n", serde_json::to_string_pretty(&report)?),
        None,
    )
}

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(name: &'static str, pass: bool, detail: String) -> Check {
    Check { name, pass, detail }
}

fn verify_example4(m: &CostMatrix) -> Result<Vec<Check>> {
    let t1 = Tour::parse(EXAMPLE4_TOUR)?;
    let (sigma, sigma_value) = pm_from_tour(&t1, m)?;
    let t1_value = tour_value(&t1, m);
    let r = build_reduced(m, &sigma.as_permutation())?;
    let (cycles, _) = harvest_cycles(
        &r,
        &sigma,
        t1_value - sigma_value - 1,
        &HarvestConfig::default(),
    );
    let anchor = |c: &[usize], class: CycleClass| {
        let want = canonical_rotation(&c.iter().map(|v| v - 1).collect::<Vec<_>>());
        cycles
            .iter()
            .find(|r| r.vertices == want && r.class == class)
            .map(|r| r.value)
    };
    let acceptable = anchor(&[16, 7, 10, 17, 5, 9, 20], CycleClass::Acceptable);
    let linked = anchor(&[17, 6, 4, 8, 15, 2, 11, 12, 3, 18, 10], CycleClass::Linked);
    let out = solve(m, &SolveConfig::default())?;
    let der = out.derangement.as_ref().map(|d| d.1);
    Ok(vec![
        check(
            "matching value",
            sigma_value == 56,
            format!("|sigma1| = {sigma_value}, want 56"),
        ),
        check(
            "start tour value",
            t1_value == 68,
            format!("|T1| = {t1_value}, want 68"),
        ),
        check(
            "acceptable anchor",
            acceptable == Some(-12),
            format!("{acceptable:?}, want Some(-12)"),
        ),
        check(
            "linked anchor",
            linked == Some(-11),
            format!("{linked:?}, want Some(-11)"),
        ),
        check(
            "final tour",
            out.value <= 54 && tour_value(&out.tour, m) == out.value,
            format!("{} {}, want <= 54", out.value, out.tour),
        ),
        check(
            "derangement",
            der.is_some_and(|v| v <= 53),
            format!("{der:?}, want <= 53"),
        ),
    ])
}

fn verify_example3(m: &CostMatrix) -> Result<Vec<Check>> {
    let nr = NeighborRank::new(m);
    let (d, steps) = phase1_run(m, &nr, 1, None);
    let d_value = derangement_value(&d, m);
    let out = solve(m, &SolveConfig::default())?;
    Ok(vec![
        check(
            "symmetric",
            validate_symmetry(m).is_empty(),
            "fixture is symmetric".into(),
        ),
        check(
            "trial phase",
            d_value <= 157,
            format!("{d_value} after {} steps, want <= 157", steps.len()),
        ),
        check(
            "final tour",
            out.value == 165 && tour_value(&out.tour, m) == out.value,
            format!("{} {}, pinned 165", out.value, out.tour),
        ),
    ])
}

fn cmd_verify(name: &str) -> Result<bool> {
    let Some(m) = fixture(name) else {
        bail!("unknown fixture {name:?}; expected example3 or example4");
    };
    let checks = match name {
        "example4" => verify_example4(&m)?,
        _ => verify_example3(&m)?,
    };
    for c in &checks {
        println!(
            "{} {}: {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    Ok(checks.iter().all(|c| c.pass))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen {
            n,
            seed,
            max_cost,
            out,
        } => {
            if *n < 2 || *max_cost < 1 {
                Err(anyhow::anyhow!("gen needs n >= 2 and --max-cost >= 1"))
            } else {
                emit(
                    &random_symmetric(*n, *max_cost, *seed).to_text(),
                    out.as_deref(),
                )
            }
        }
        Command::Solve { file, run, out } => cmd_solve(file, run, out.as_deref()),
        Command::Oracle { file, which } => cmd_oracle(file, *which),
        Command::Verify { fixture } => match cmd_verify(fixture) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::FAILURE,
            Err(e) => Err(e),
        },
        Command::Trace { file, run } => cmd_trace(file, run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
