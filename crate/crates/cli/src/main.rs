//! `hjblab`: runs the solvers and checks of the core crate from a JSON
//! configuration and writes artifacts to an output directory.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use hjblab::assumptions::{check_monotonicity_sampled, check_standing_assumptions, probe_lipschitz, require};
use hjblab::bench::{format_table, run_all, write_artifacts, BenchOptions};
use hjblab::config::{Config, VerifyKind};
use hjblab::fbsde::solve_fully_coupled;
use hjblab::grid::TimeGrid;
use hjblab::hjb::{residual, solve_hjb};
use hjblab::paths::{derive_seed, write_trajectories_csv, ConstantPolicy, PathEnsemble, SpecTerminal};
use hjblab::problem::ProblemSpec;
use hjblab::value::{compute_value_dpp, estimate_regularity, read_field, write_field, ValueField};
use hjblab::verify::{
    ito_residual, mollify, pr_um_pipeline, uniqueness_check_frozen_sigma, uniqueness_check_full,
};
use hjblab::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "hjblab", version, about = "HJB / fully coupled FBSDE laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct Common {
    /// JSON configuration (schema 1).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Replaces the seed from the configuration.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Assumption, Lipschitz and monotonicity reports.
    Check(Common),
    /// Finite-difference HJB solve with residual.
    SolveHjb(Common),
    /// Value field by backward dynamic programming.
    ValueDpp(Common),
    /// Fully coupled FBSDE by Picard iteration.
    SolveFbsde(Common),
    /// The verification check selected in the configuration.
    Verify(Common),
    /// Acceptance suite.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated criterion ids; all when absent.
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<u32>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load(c: &Common) -> Result<Config> {
    let mut cfg = match &c.config {
        Some(p) => Config::load(p)?,
        None => return Err(Error::Config("--config is required for this command".into())),
    };
    if let Some(s) = c.seed_override {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn setup(c: &Common) -> Result<()> {
    if let Some(t) = c.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    fs::create_dir_all(&c.out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Bench { common, criteria } => {
            setup(&common)?;
            let seed = match (&common.config, common.seed_override) {
                (_, Some(s)) => s,
                (Some(_), None) => load(&common)?.seed,
                (None, None) => 0,
            };
            bench(&common.out, seed, criteria)
        }
        Command::Check(c) => {
            setup(&c)?;
            check(&load(&c)?, &c.out)
        }
        Command::SolveHjb(c) => {
            setup(&c)?;
            solve_hjb_cmd(&load(&c)?, &c.out)
        }
        Command::ValueDpp(c) => {
            setup(&c)?;
            value_dpp(&load(&c)?, &c.out)
        }
        Command::SolveFbsde(c) => {
            setup(&c)?;
            solve_fbsde(&load(&c)?, &c.out)
        }
        Command::Verify(c) => {
            setup(&c)?;
            verify(&load(&c)?, &c.out)
        }
    }
}

fn write_report(out: &Path, name: &str, v: &Value) -> Result<()> {
    fs::write(out.join(name), serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

fn header(cmd: &str, cfg: &Config, spec: &ProblemSpec) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("schema".into(), json!(1));
    m.insert("command".into(), json!(cmd));
    m.insert("problem".into(), json!(spec.name));
    m.insert("problem_hash".into(), json!(spec.hash()));
    m.insert("seed".into(), json!(cfg.seed));
    m
}

fn check(cfg: &Config, out: &Path) -> Result<u8> {
    let spec = cfg.problem()?;
    let mut rep = check_standing_assumptions(&spec, &spec.constants, spec.constants.l_w)?;
    if let Some(m) = &cfg.check.monotonicity {
        rep.monotonicity = Some(check_monotonicity_sampled(
            &spec,
            m,
            &cfg.check.probe_box,
            cfg.check.probes,
            cfg.seed,
        )?);
    }
    let lip = probe_lipschitz(&spec, &cfg.check.probe_box, cfg.check.probes, cfg.seed)?;
    let gate = require(&spec);
    let mut r = header("check", cfg, &spec);
    r.insert("assumptions".into(), serde_json::to_value(&rep)?);
    r.insert("lipschitz_probe".into(), serde_json::to_value(&lip)?);
    r.insert("override_gate".into(), json!(spec.override_gate));
    r.insert("gate_passed".into(), json!(gate.is_ok()));
    write_report(out, "report.json", &Value::Object(r))?;
    println!(
        "{}: Lambda = {:.4}, smallness {}, L3 condition {}, picard factor {:.4}",
        spec.name,
        rep.lambda,
        if rep.smallness_ok { "ok" } else { "fails" },
        if rep.l3_ok { "ok" } else { "fails" },
        rep.picard_factor
    );
    for w in &lip.warnings {
        println!("warning: {w}");
    }
    gate?;
    Ok(0)
}

fn solve_hjb_cmd(cfg: &Config, out: &Path) -> Result<u8> {
    let spec = cfg.problem()?;
    let grid = cfg.hjb_grid(&spec)?;
    let field = solve_hjb(&spec, &grid, &cfg.hjb)?;
    write_field(&field, out, "field")?;
    let res = residual(&spec, &field, &cfg.hjb)?;
    res.write_csv(BufWriter::new(fs::File::create(out.join("residual.csv"))?))?;
    let x0 = start_point(cfg, &spec);
    let reg = estimate_regularity(&field);
    let mut r = header("solve-hjb", cfg, &spec);
    r.insert("steps".into(), json!(grid.time.steps));
    r.insert("nodes".into(), json!(grid.space.len()));
    r.insert("x0".into(), json!(x0));
    r.insert("value_at_x0".into(), json!(field.interp(grid.time.t0, &x0)));
    r.insert("residual_max_abs".into(), json!(res.max_abs));
    r.insert("residual_l2".into(), json!(res.l2));
    r.insert("regularity".into(), serde_json::to_value(reg)?);
    write_report(out, "report.json", &Value::Object(r))?;
    println!(
        "W({}, {:?}) = {:.6}, residual max {:.3e}",
        grid.time.t0,
        x0,
        field.interp(grid.time.t0, &x0),
        res.max_abs
    );
    Ok(0)
}

fn start_point(cfg: &Config, spec: &ProblemSpec) -> Vec<f64> {
    cfg.fbsde.x0.clone().unwrap_or_else(|| vec![0.0; spec.dims.n])
}

fn value_dpp(cfg: &Config, out: &Path) -> Result<u8> {
    let spec = cfg.problem()?;
    let grid = cfg.dpp_grid(&spec)?;
    let field = compute_value_dpp(&spec, &grid, &cfg.dpp_options())?;
    write_field(&field, out, "field")?;
    let x0 = start_point(cfg, &spec);
    let mut r = header("value-dpp", cfg, &spec);
    r.insert("slabs".into(), json!(grid.time.steps));
    r.insert("paths".into(), json!(cfg.dpp.paths));
    r.insert("x0".into(), json!(x0));
    r.insert("value_at_x0".into(), json!(field.interp(grid.time.t0, &x0)));
    r.insert("regularity".into(), serde_json::to_value(estimate_regularity(&field))?);
    write_report(out, "report.json", &Value::Object(r))?;
    println!("W({}, {:?}) = {:.6}", grid.time.t0, x0, field.interp(grid.time.t0, &x0));
    Ok(0)
}

fn solve_fbsde(cfg: &Config, out: &Path) -> Result<u8> {
    let spec = cfg.problem()?;
    let f = &cfg.fbsde;
    if f.control >= spec.controls.len() {
        return Err(Error::Config(format!(
            "fbsde.control {} out of range ({} controls)",
            f.control,
            spec.controls.len()
        )));
    }
    let x0 = start_point(cfg, &spec);
    let ens = PathEnsemble::generate(
        TimeGrid::new(cfg.grid.t0, spec.horizon, f.steps)?,
        f.paths,
        spec.dims.d,
        cfg.seed,
    )?;
    let run = solve_fully_coupled(
        &spec,
        &ens,
        &x0,
        &ConstantPolicy(f.control),
        &SpecTerminal(&spec),
        &f.picard,
    )?;
    write_trajectories_csv(
        BufWriter::new(fs::File::create(out.join("trajectories.csv"))?),
        &ens,
        &run.forward,
        &run.backward,
        f.trajectories,
    )?;
    let mut r = header("solve-fbsde", cfg, &spec);
    r.insert("x0".into(), json!(x0));
    r.insert("y0".into(), json!(run.y0));
    r.insert("y0_stderr".into(), json!(run.y0_stderr));
    r.insert("picard_iters".into(), json!(run.picard_iters));
    r.insert("gap_history".into(), json!(run.gap_history));
    write_report(out, "report.json", &Value::Object(r))?;
    println!(
        "Y0 = {:.6} +- {:.6} after {} Picard iterations",
        run.y0, run.y0_stderr, run.picard_iters
    );
    Ok(0)
}

fn candidate(cfg: &Config, spec: &ProblemSpec) -> Result<ValueField> {
    let field = match &cfg.verify.candidate {
        Some(files) => read_field(&files.csv, &files.json)?,
        None => solve_hjb(spec, &cfg.hjb_grid(spec)?, &cfg.hjb)?,
    };
    Ok(if cfg.verify.shift != 0.0 {
        field.shifted(cfg.verify.shift)
    } else {
        field
    })
}

fn verify(cfg: &Config, out: &Path) -> Result<u8> {
    let spec = cfg.problem()?;
    let cand = candidate(cfg, &spec)?;
    let v = &cfg.verify;
    let x = v.x.clone().unwrap_or_else(|| vec![0.0; spec.dims.n]);
    let report = match v.check {
        VerifyKind::PrUm => {
            let pc = cfg.pipeline_options();
            let mut runs = Vec::new();
            for (i, &m) in v.slabs.iter().enumerate() {
                let c = hjblab::verify::PipelineConfig {
                    seed: derive_seed(pc.seed, i as u64),
                    ..pc
                };
                let r = pr_um_pipeline(&spec, &cand, v.t, &x, m, &c)?;
                println!("m = {m}: rho {:.4} (noise {:.4}), start gap {:.4}", r.rho, r.noise, r.start_gap());
                runs.push(r.report(c.seed));
            }
            json!({ "check": "pr-um", "runs": runs })
        }
        VerifyKind::FrozenSigma | VerifyKind::Full => {
            let u = cfg.uniqueness_options();
            let o = if v.check == VerifyKind::Full {
                uniqueness_check_full(&spec, &cand, &u)?
            } else {
                uniqueness_check_frozen_sigma(&spec, &cand, &u)?
            };
            write_field(&o.w, out, "w_dpp")?;
            println!(
                "{}: {:?} (W above candidate by {:.4}, below by {:.4})",
                o.check, o.verdict, o.w_above, o.w_below
            );
            serde_json::to_value(o.report())?
        }
        VerifyKind::Ito => {
            let sp = &cand.grid.space;
            let spacing = (0..sp.dim()).map(|a| sp.dx(a)).fold(cand.grid.time.dt(), f64::max);
            let moll = mollify(&cand, v.epsilon.unwrap_or(4.0 * spacing))?;
            let ic = cfg.ito_options();
            let r = ito_residual(&spec, &moll, v.t, &x, &ConstantPolicy(v.control), &ic)?;
            println!(
                "pi1 in [{:.4}, {:.4}], mean {:.4}, terminal gap {:.4}",
                r.pi1_min, r.pi1_max, r.pi1_mean, r.terminal_gap
            );
            serde_json::to_value(r.report(ic.seed))?
        }
    };
    let mut r = header("verify", cfg, &spec);
    r.insert("result".into(), report);
    write_report(out, "report.json", &Value::Object(r))?;
    Ok(0)
}

fn bench(out: &Path, seed: u64, criteria: Vec<u32>) -> Result<u8> {
    let rows = run_all(&BenchOptions {
        seed,
        only: criteria,
    });
    write_artifacts(&out.join("artifacts"), seed)?;
    let table = format_table(&rows);
    print!("{table}");
    fs::write(out.join("bench.txt"), &table)?;
    write_report(out, "report.json", &json!({ "schema": 1, "command": "bench", "seed": seed, "criteria": rows }))?;
    Ok(if rows.iter().all(|r| r.pass) { 0 } else { 1 })
}
