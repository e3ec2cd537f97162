//! Experiment runner for the cob protocol simulator.
//!
//! Exit codes: 0 success, 1 safety violation (or invalid certificate),
//! 2 parameter error, 3 I/O or decode error.

use clap::{Args, Parser, Subcommand};
use cob::adversary::{deadlock_scenario, ComponentRule, DelayerMode, Release, StrategyConfig};
use cob::analysis;
use cob::bundle::CertificateBundle;
use cob::sim::{
    collect_statistics, export_first_certificate, metrics_csv, run_batch, run_with_trace,
    SimConfig,
};
use cob::sortition::{check_assumptions, min_committee_size};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_SAFETY: u8 = 1;
const EXIT_PARAMS: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "cob", version, about = "Leaderless multidimensional agreement: simulator, calibrator and cost models")]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Run a batch of seeded simulations and write metrics and reports.
    Simulate(SimulateArgs),
    /// Check the committee-size conditions, or calibrate the minimal
    /// committee when none is given.
    CheckParams {
        #[arg(long)]
        users: u64,
        #[arg(long)]
        honest_ratio: f64,
        #[arg(long)]
        committee: Option<u64>,
        #[arg(long, default_value_t = 1e-9)]
        epsilon: f64,
    },
    /// Regenerate the data-volume comparison table and plots.
    Figures {
        #[arg(long, default_value_t = 0.8)]
        honest_ratio: f64,
        #[arg(long, default_value_t = 4000)]
        committee: u64,
        #[arg(long, default_value_t = 1000)]
        ell_max: u64,
        /// CSV output path.
        #[arg(long, default_value = "figures.csv")]
        out: PathBuf,
        /// Also write log-log and linear SVG plots next to the CSV.
        #[arg(long)]
        svg: bool,
    },
    /// Verify an exported certificate bundle.
    VerifyCertificate { file: PathBuf },
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON run configuration (the declarative form of every flag below).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    users: u64,
    /// Defaults to every user active in every step.
    #[arg(long)]
    committee: Option<u64>,
    #[arg(long, default_value_t = 0.8)]
    honest_ratio: f64,
    /// Observation scenario: "unanimous", "all-bottom", "split=F" (value/⊥
    /// split at fraction F) or "deadlock=L" (L coin-deadlock components).
    #[arg(long, default_value = "unanimous")]
    scenario: String,
    #[arg(long, default_value_t = 2)]
    components: usize,
    /// Byzantine strategy: honest, crash=S, equivocator, censor=c0[,c1..],
    /// delayer, delayer-finalize=BIT:immediate|never|at-S, grinder.
    #[arg(long, default_value = "honest")]
    adversary: String,
    #[arg(long, default_value_t = 1)]
    reps: u64,
    #[arg(long, default_value_t = 42)]
    master_seed: u64,
    /// Committee-condition target failure bound used for labeling.
    #[arg(long, default_value_t = 1e-9)]
    epsilon: f64,
    /// Output directory for metrics.csv, metrics.json and aggregate.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a replayable trace of the first run next to the metrics.
    #[arg(long)]
    trace: bool,
    /// Export the first run's certificate bundle to this path.
    #[arg(long)]
    export_cert: Option<PathBuf>,
}

fn parse_scenario(spec: &str, args: &SimulateArgs) -> Result<Vec<ComponentRule>, String> {
    let m = args.components;
    if let Some(rest) = spec.strip_prefix("split=") {
        let f: f64 = rest.parse().map_err(|_| format!("bad fraction {rest}"))?;
        return Ok((0..m)
            .map(|c| ComponentRule::Split {
                first: Some(format!("block-{c}")),
                second: None,
                fraction: f,
            })
            .collect());
    }
    if let Some(rest) = spec.strip_prefix("deadlock=") {
        let ell: usize = rest.parse().map_err(|_| format!("bad count {rest}"))?;
        if ell > m {
            return Err("deadlock components exceed list length".into());
        }
        return Ok(deadlock_scenario(args.users, args.honest_ratio, ell, m));
    }
    match spec {
        "unanimous" => Ok((0..m)
            .map(|c| ComponentRule::Unanimous {
                value: Some(format!("block-{c}")),
            })
            .collect()),
        "all-bottom" => Ok(vec![ComponentRule::Unanimous { value: None }; m]),
        other => Err(format!("unknown scenario {other}")),
    }
}

fn parse_adversary(spec: &str) -> Result<StrategyConfig, String> {
    if let Some(rest) = spec.strip_prefix("crash=") {
        let s: u32 = rest.parse().map_err(|_| format!("bad step {rest}"))?;
        return Ok(StrategyConfig::Crash { after_step: s });
    }
    if let Some(rest) = spec.strip_prefix("censor=") {
        let comps: Result<Vec<usize>, _> = rest.split(',').map(|p| p.parse()).collect();
        return Ok(StrategyConfig::Censor {
            components: comps.map_err(|_| format!("bad component list {rest}"))?,
        });
    }
    if let Some(rest) = spec.strip_prefix("delayer-finalize=") {
        let (bit, release) = rest
            .split_once(':')
            .ok_or_else(|| format!("expected BIT:POLICY in {rest}"))?;
        let bit = match bit {
            "0" => false,
            "1" => true,
            other => return Err(format!("bad bit {other}")),
        };
        let release = match release {
            "immediate" => Release::Immediate,
            "never" => Release::Never,
            other => match other.strip_prefix("at-") {
                Some(s) => Release::AtStep {
                    step: s.parse().map_err(|_| format!("bad step {s}"))?,
                },
                None => return Err(format!("bad release policy {other}")),
            },
        };
        return Ok(StrategyConfig::FinalizationDelayer {
            mode: DelayerMode::PrivateFinalize { bit, release },
        });
    }
    match spec {
        "honest" => Ok(StrategyConfig::Honest),
        "equivocator" => Ok(StrategyConfig::Equivocator),
        "delayer" => Ok(StrategyConfig::FinalizationDelayer {
            mode: DelayerMode::MaxDelay,
        }),
        "grinder" => Ok(StrategyConfig::CoinGrinder),
        other => Err(format!("unknown adversary {other}")),
    }
}

fn build_config(args: &SimulateArgs) -> Result<SimConfig, (u8, String)> {
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| (EXIT_IO, format!("reading {}: {e}", path.display())))?;
        let cfg: SimConfig = serde_json::from_str(&text)
            .map_err(|e| (EXIT_IO, format!("parsing {}: {e}", path.display())))?;
        return Ok(cfg);
    }
    let scenario = parse_scenario(&args.scenario, args).map_err(|e| (EXIT_PARAMS, e))?;
    let mut cfg = SimConfig::full_committee(args.users, args.honest_ratio, scenario);
    if let Some(n) = args.committee {
        cfg.committee = n;
    }
    cfg.epsilon = args.epsilon;
    cfg.adversary = parse_adversary(&args.adversary).map_err(|e| (EXIT_PARAMS, e))?;
    Ok(cfg)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), (u8, String)> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)
                .map_err(|e| (EXIT_IO, format!("creating {}: {e}", dir.display())))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| (EXIT_IO, format!("writing {}: {e}", path.display())))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<u8, (u8, String)> {
    let cfg = build_config(args)?;
    cfg.validate().map_err(|e| (EXIT_PARAMS, e.to_string()))?;
    let runs =
        run_batch(&cfg, args.reps, args.master_seed).map_err(|e| (EXIT_PARAMS, e.to_string()))?;
    let report = collect_statistics(&runs);
    println!(
        "{} runs: {} halted, {} timeouts, {} safety violations, mean loops {:.3}, mean bytes {:.1}",
        report.runs,
        report.all_halted_runs,
        report.timeouts,
        report.safety_violation_runs,
        report.mean_cgf_loops,
        report.mean_total_bytes
    );
    if let Some(dir) = &args.out {
        write_file(&dir.join("metrics.csv"), metrics_csv(&runs).as_bytes())?;
        let json = serde_json::to_vec_pretty(&runs)
            .map_err(|e| (EXIT_IO, format!("serializing metrics: {e}")))?;
        write_file(&dir.join("metrics.json"), &json)?;
        let agg = serde_json::to_vec_pretty(&report)
            .map_err(|e| (EXIT_IO, format!("serializing report: {e}")))?;
        write_file(&dir.join("aggregate.json"), &agg)?;
        if args.trace {
            let mut first = cfg.clone();
            first.seed = runs[0].seed;
            let out =
                run_with_trace(&first, true).map_err(|e| (EXIT_PARAMS, e.to_string()))?;
            write_file(
                &dir.join("trace_0.bin"),
                &out.trace.expect("trace requested").to_bytes(),
            )?;
        }
    }
    if let Some(path) = &args.export_cert {
        let mut first = cfg.clone();
        first.seed = runs[0].seed;
        let bundle =
            export_first_certificate(&first).map_err(|e| (EXIT_PARAMS, e.to_string()))?;
        write_file(path, &bundle.to_bytes())?;
    }
    Ok(if report.safety_violation_runs > 0 {
        EXIT_SAFETY
    } else {
        0
    })
}

fn cmd_check_params(
    users: u64,
    honest_ratio: f64,
    committee: Option<u64>,
    epsilon: f64,
) -> Result<u8, (u8, String)> {
    let n = match committee {
        Some(n) => n,
        None => {
            let n = min_committee_size(users, honest_ratio, epsilon)
                .map_err(|e| (EXIT_PARAMS, e.to_string()))?;
            println!("calibrated committee size: {n}");
            n
        }
    };
    let report = check_assumptions(users, honest_ratio, n, epsilon)
        .map_err(|e| (EXIT_PARAMS, e.to_string()))?;
    println!(
        "committee {} of {users}, threshold {}: P(cond1) = {:.12}, P(cond2) = {:.12}, \
         epsilon {:.1e}, satisfied: {}",
        report.committee,
        report.threshold,
        report.p_cond1,
        report.p_cond2,
        report.epsilon,
        report.satisfied
    );
    Ok(0)
}

fn cmd_figures(
    honest_ratio: f64,
    committee: u64,
    ell_max: u64,
    out: &Path,
    svg: bool,
) -> Result<u8, (u8, String)> {
    let rows = analysis::figure_data(honest_ratio, committee, 1..=ell_max)
        .map_err(|e| (EXIT_PARAMS, e.to_string()))?;
    write_file(out, analysis::figure_csv(&rows).as_bytes())?;
    println!("wrote {} rows to {}", rows.len(), out.display());
    if svg {
        let log = out.with_extension("loglog.svg");
        write_file(&log, analysis::figure_svg(&rows, true).as_bytes())?;
        let lin = out.with_extension("linear.svg");
        write_file(&lin, analysis::figure_svg(&rows, false).as_bytes())?;
        println!("wrote {} and {}", log.display(), lin.display());
    }
    Ok(0)
}

fn cmd_verify_certificate(file: &Path) -> Result<u8, (u8, String)> {
    let bytes =
        std::fs::read(file).map_err(|e| (EXIT_IO, format!("reading {}: {e}", file.display())))?;
    let bundle = CertificateBundle::from_bytes(&bytes)
        .map_err(|e| (EXIT_IO, format!("decoding {}: {e}", file.display())))?;
    if bundle.verify() {
        println!(
            "valid certificate: step {}, {} components, {}+{} signatures",
            bundle.certificate.step,
            bundle.components,
            bundle.certificate.prev_step_sigs.len(),
            bundle.certificate.this_step_sigs.len()
        );
        Ok(0)
    } else {
        Err((EXIT_SAFETY, "certificate verification failed".into()))
    }
}

fn main() -> ExitCode {
    if let Ok(workers) = std::env::var("COB_WORKERS") {
        if let Ok(n) = workers.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
    let cli = Cli::parse();
    let result = match &cli.command {
        Commands::Simulate(args) => cmd_simulate(args),
        Commands::CheckParams {
            users,
            honest_ratio,
            committee,
            epsilon,
        } => cmd_check_params(*users, *honest_ratio, *committee, *epsilon),
        Commands::Figures {
            honest_ratio,
            committee,
            ell_max,
            out,
            svg,
        } => cmd_figures(*honest_ratio, *committee, *ell_max, out, *svg),
        Commands::VerifyCertificate { file } => cmd_verify_certificate(file),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
