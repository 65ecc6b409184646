use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use ellikernel::report::{emit_report, Format, Report};
use ellikernel::scenario::{gallery, resolve_scenario, run_scenario, AnalysisKind, RunOpts};

/// Batch verification of heat-kernel Gaussian bounds for divergence-form
/// elliptic operators on periodic grids.
#[derive(Parser)]
#[command(name = "ellikernel", version, about)]
struct Cli {
    /// Output directory (default: $ELLIKERNEL_OUT or ./out)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the scenario seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Report formats to emit
    #[arg(long, global = true, value_delimiter = ',', default_values_t = [String::from("json"), String::from("csv"), String::from("svg")])]
    formats: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a gallery scenario or a TOML scenario file and emit the report
    Run { scenario: String },
    /// List the builtin scenario gallery
    Gallery,
    /// Run verdict-relevant analyses only and print the verdicts
    Check { scenario: String },
    /// Re-emit tables or plots from a saved JSON report
    Report {
        json: PathBuf,
        /// Target format
        #[arg(long)]
        to: String,
    },
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os("ELLIKERNEL_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn parse_formats(raw: &[String]) -> ellikernel::Result<Vec<Format>> {
    raw.iter().map(|s| s.parse()).collect()
}

fn print_verdicts(report: &Report) -> bool {
    let Some(v) = &report.verdicts else {
        println!("no equivalence verdicts requested");
        return true;
    };
    println!(
        "verdicts for {}: V1 (strong ellipticity) = {}, V2 (local lower bound) = {}, V3 (Aronson lower) = {}",
        report.scenario.name, v.v1_strong_ellipticity, v.v2_local_lower_bound, v.v3_aronson_lower
    );
    println!(
        "  mu_pointwise = {:.6e}, lower a = {:.6e}, a' = {:.6e}",
        v.mu_pointwise, v.lower_a, v.aronson_a_prime
    );
    if let (Some(mu_cks), Some(mu), Some(ok)) = (v.chain_mu_cks, v.chain_garding_mu, v.chain_ok) {
        println!("  CKS chain: mu_cks = {mu_cks:.6e} <= garding mu = {mu:.6e} + 1e-6: {ok}");
    }
    println!("  consistent: {}", v.consistent);
    v.consistent
}

fn run(cli: &Cli) -> ellikernel::Result<u8> {
    match &cli.cmd {
        Cmd::Gallery => {
            for sc in gallery() {
                println!(
                    "{:26} d={} n={:4} L={:4} field={}",
                    sc.name,
                    sc.grid.d,
                    sc.grid.n,
                    sc.grid.l,
                    serde_json::to_string(&sc.field).unwrap_or_default()
                );
            }
            Ok(0)
        }
        Cmd::Run { scenario } => {
            let mut sc = resolve_scenario(scenario)?;
            if let Some(seed) = cli.seed {
                sc.seed = seed;
            }
            let report = run_scenario(&sc, &RunOpts::default())?;
            let formats = parse_formats(&cli.formats)?;
            let manifest = emit_report(&report, &out_dir(cli), &formats)?;
            for path in &manifest {
                println!("wrote {}", path.display());
            }
            let consistent = print_verdicts(&report);
            Ok(if consistent { 0 } else { 2 })
        }
        Cmd::Check { scenario } => {
            let mut sc = resolve_scenario(scenario)?;
            if let Some(seed) = cli.seed {
                sc.seed = seed;
            }
            sc.analyses = vec![
                AnalysisKind::Garding,
                AnalysisKind::Kernel,
                AnalysisKind::LowerBound,
                AnalysisKind::Aronson,
                AnalysisKind::Cks,
                AnalysisKind::Equivalence,
            ];
            let report = run_scenario(&sc, &RunOpts::default())?;
            let consistent = print_verdicts(&report);
            Ok(if consistent { 0 } else { 2 })
        }
        Cmd::Report { json, to } => {
            let text = std::fs::read_to_string(json)
                .map_err(|e| ellikernel::Error::io(json.clone(), e))?;
            let report = Report::from_json(&text)?;
            let format: Format = to.parse()?;
            let manifest = emit_report(&report, &out_dir(cli), &[format])?;
            for path in &manifest {
                println!("wrote {}", path.display());
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version are not errors
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    if let Some(threads) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(1)
        }
    }
}
