use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use tss_core::analysis::{case_suite, cct_bisection, conservativeness_audit, roa_grid, tabulate, CctOutcome, RoaGridSpec};
use tss_core::config::{bundled_configs, named_scenarios, parse_config, ConfigError, ScenarioConfig};
use tss_core::eac::{eac_report, EacCct};
use tss_core::lyapunov::{index_series, lf_params, LyapunovMode};
use tss_core::output::{json as to_json, roa_csv, trajectory_csv};
use tss_core::sim::{simulate, Scenario, Trajectory, Verdict};
use tss_core::Error;

/// Transient synchronization stability lab for a PLL-synchronized converter.
///
/// Exit codes: 0 success, 1 usage, 2 configuration or file I/O,
/// 3 model error, 4 certification violation in the ROA audit.
#[derive(Parser, Debug)]
#[command(name = "tss-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Integration step in s [config default: 5e-5].
    #[arg(long)]
    dt: Option<f64>,
    /// Total simulated time in s [config default: t_fault + fct + 1].
    #[arg(long)]
    horizon: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the fault sequence; writes <name>_trajectory.csv and <name>_summary.json.
    Simulate(Common),
    /// Simulate and attach the stability index; writes <name>_index.csv and <name>_index.json.
    Index(Common),
    /// Critical clearing time by bisection and by equal areas; writes <name>_cct.json.
    Cct {
        #[command(flatten)]
        common: Common,
        /// Bisection tolerance, s.
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        /// Largest clearing time probed, s.
        #[arg(long, default_value_t = 1.0)]
        upper: f64,
    },
    /// Region-of-attraction map of the post-fault system and audit of the index;
    /// writes <name>_roa.csv and <name>_roa.json.
    Roa {
        #[command(flatten)]
        common: Common,
        /// Grid points per axis.
        #[arg(long, default_value_t = 101)]
        resolution: usize,
        /// Simulated time per grid point, s.
        #[arg(long, default_value_t = 2.0)]
        roa_horizon: f64,
        /// Integration step for grid points, s.
        #[arg(long, default_value_t = 1e-4)]
        roa_dt: f64,
    },
    /// Run a set of cases and rank them by final index; writes cases.json.
    Cases {
        /// Directory of scenario configs [default: the six bundled cases].
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory, created if missing.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
    },
}

#[derive(Debug)]
enum Failure {
    Config(ConfigError),
    Io(String),
    Model(Error),
    Certification(usize),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) | Failure::Io(_) => 2,
            Failure::Model(_) => 3,
            Failure::Certification(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "{e}"),
            Failure::Io(e) => write!(f, "{e}"),
            Failure::Model(e) => write!(f, "{e}"),
            Failure::Certification(n) => write!(f, "{n} certified grid point(s) failed to converge"),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Model(e)
    }
}

type Outcome = Result<(), Failure>;

fn write_file(dir: &Path, name: &str, text: &str) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))
}

fn load(common: &Common) -> Result<(ScenarioConfig, Scenario), Failure> {
    let cfg = parse_config(&common.config)?.with_overrides(common.dt, common.horizon)?;
    let scenario = cfg.to_scenario()?;
    Ok((cfg, scenario))
}

fn stage_json(scenario: &Scenario) -> Result<serde_json::Value, Failure> {
    let st = scenario.stages()?;
    Ok(json!({
        "pre": st.pre,
        "fault": st.fault,
        "post": st.post,
        "z_eq": scenario.fault.z_eq,
    }))
}

fn timing_json(scenario: &Scenario, traj: &Trajectory) -> serde_json::Value {
    json!({
        "dt": scenario.dt,
        "horizon": scenario.horizon,
        "t_fault": traj.t_fault,
        "t_clear": traj.t_clear,
        "samples": traj.samples.len(),
    })
}

fn zeta_extremes(traj: &Trajectory) -> (f64, f64) {
    let min = traj.samples.iter().filter_map(|s| s.zeta).fold(f64::INFINITY, f64::min);
    (min, traj.samples.iter().rev().find_map(|s| s.zeta).unwrap_or(f64::NAN))
}

fn verdict_line(name: &str, v: &Verdict) -> String {
    match v {
        Verdict::Resynchronized { settle_time } => format!("{name}: resynchronized (settled at {settle_time:.4} s)"),
        Verdict::LossOfSynchronization { first_slip_time } => {
            format!("{name}: loss of synchronization (first slip at {first_slip_time:.4} s)")
        }
        Verdict::Marginal => format!("{name}: marginal"),
    }
}

fn cmd_simulate(common: &Common, with_index: bool) -> Outcome {
    let (cfg, scenario) = load(common)?;
    let (traj, verdict) = simulate(&scenario)?;
    let post_inj = scenario.post_injection()?;
    let mut summary = json!({
        "name": cfg.name,
        "verdict": verdict,
        "stages": stage_json(&scenario)?,
        "post_injection": post_inj,
        "timing": timing_json(&scenario, &traj),
    });
    let (csv_name, json_name, traj) = if with_index {
        let post = scenario.stages()?.post;
        let traj = index_series(traj, &post, &post_inj, &scenario.pll)?;
        let (min, last) = zeta_extremes(&traj);
        summary["min_zeta"] = json!(min);
        summary["final_zeta"] = json!(last);
        (format!("{}_index.csv", cfg.name), format!("{}_index.json", cfg.name), traj)
    } else {
        (format!("{}_trajectory.csv", cfg.name), format!("{}_summary.json", cfg.name), traj)
    };
    write_file(&common.out, &csv_name, &trajectory_csv(&traj, cfg.output.stride))?;
    write_file(&common.out, &json_name, &to_json(&summary))?;
    println!("{}", verdict_line(&cfg.name, &verdict));
    Ok(())
}

fn cmd_cct(common: &Common, tol: f64, upper: f64) -> Outcome {
    let (cfg, scenario) = load(common)?;
    let sim = cct_bisection(&scenario, tol, upper)?;
    let eac = eac_report(&scenario)?;
    let signed_error = match (sim, eac.cct_eac) {
        (CctOutcome::Critical { cct, .. }, EacCct::Finite(t)) => Some(t - cct),
        _ => None,
    };
    let report = json!({
        "name": cfg.name,
        "cct_sim": sim,
        "eac": eac,
        "eac_minus_sim": signed_error,
        "stages": stage_json(&scenario)?,
        "tol": tol,
        "upper": upper,
    });
    write_file(&common.out, &format!("{}_cct.json", cfg.name), &to_json(&report))?;
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_owned(), |t| format!("{:.1} ms", 1e3 * t));
    let eac_t = match eac.cct_eac {
        EacCct::Finite(t) => Some(t),
        _ => None,
    };
    println!("{}: cct_sim {}, cct_eac {}", cfg.name, fmt(sim.cct()), fmt(eac_t));
    Ok(())
}

fn cmd_roa(common: &Common, spec: RoaGridSpec) -> Outcome {
    let (cfg, scenario) = load(common)?;
    let post = scenario.stages()?.post;
    let inj = scenario.post_injection()?;
    let map = roa_grid(&post, &inj, &scenario.pll, &spec)?;
    let p = lf_params(&post, &inj, &scenario.pll, LyapunovMode::Reduced)?;
    let report = tabulate(&map, &p);
    write_file(&common.out, &format!("{}_roa.csv", cfg.name), &roa_csv(&map, &p))?;
    let doc = json!({
        "name": cfg.name,
        "grid": spec,
        "post_stage": post,
        "post_injection": inj,
        "lyapunov": p,
        "report": report,
        "passed": report.passed(),
    });
    write_file(&common.out, &format!("{}_roa.json", cfg.name), &to_json(&doc))?;
    println!(
        "{}: {} points, {} certified, {} certified-but-diverged, {} uncertified-but-converged",
        cfg.name, report.n_points, report.n_certified, report.n_certified_diverged, report.n_uncertified_converged
    );
    conservativeness_audit(&map, &p).map_err(|e| match e {
        Error::CertificationViolation { states } => Failure::Certification(states.len()),
        other => Failure::Model(other),
    })?;
    Ok(())
}

fn config_dir(dir: &Path) -> Result<Vec<ScenarioConfig>, Failure> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::Io(format!("cannot read {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Failure::Io(format!("no .json configs in {}", dir.display())));
    }
    paths.iter().map(|p| parse_config(p).map_err(Failure::from)).collect()
}

fn cmd_cases(dir: Option<&Path>, out: &Path, dt: Option<f64>, horizon: Option<f64>) -> Outcome {
    let configs = match dir {
        Some(d) => config_dir(d)?,
        None => bundled_configs(),
    };
    let configs = configs
        .into_iter()
        .map(|c| c.with_overrides(dt, horizon))
        .collect::<Result<Vec<_>, _>>()?;
    let suite = case_suite(&named_scenarios(&configs)?)?;
    write_file(out, "cases.json", &to_json(&suite))?;
    println!("{:<10} {:<26} {:>12} {:>12} {:>12}", "case", "verdict", "min_zeta", "clear_zeta", "final_zeta");
    for c in &suite.cases {
        println!(
            "{:<10} {:<26} {:>12.6} {:>12.6} {:>12.6}",
            c.name,
            c.verdict.name(),
            c.min_zeta,
            c.clearing_zeta,
            c.final_zeta
        );
    }
    println!("ranking by final zeta: {}", suite.ranking.join(" > "));
    Ok(())
}

fn configure_threads() {
    if let Some(n) = std::env::var("TSS_LAB_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            // Fails only if a pool already exists, which cannot happen this early.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    configure_threads();
    let result = match &cli.command {
        Command::Simulate(c) => cmd_simulate(c, false),
        Command::Index(c) => cmd_simulate(c, true),
        Command::Cct { common, tol, upper } => cmd_cct(common, *tol, *upper),
        Command::Roa {
            common,
            resolution,
            roa_horizon,
            roa_dt,
        } => cmd_roa(
            common,
            RoaGridSpec {
                resolution: *resolution,
                horizon: *roa_horizon,
                dt: *roa_dt,
                ..RoaGridSpec::default()
            },
        ),
        Command::Cases { config, out, dt, horizon } => cmd_cases(config.as_deref(), out, *dt, *horizon),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
