//! Command-line front end: dataset generation, fitting, ill-posedness
//! diagnostics, and Monte Carlo table reproduction.
//!
//! Every command takes a single JSON config (full provenance in one
//! artifact) plus a few flag overrides, and is deterministic given that
//! config; `--workers` never changes outputs.
//!
//! Exit codes: 0 success, 2 validation, 3 I/O, 4 solver, 5 partial cell
//! failure.

use clap::{Args, Parser, Subcommand};
use mixgrid::diagnostics::{diagnose, KernelKind};
use mixgrid::estimator::{fit_fixed_grid, fit_pcr};
use mixgrid::grid::{halton_grid, GridSpec};
use mixgrid::kernels::{simulate_dataset, ChoiceDataset, Dgp, GaussianMixtureDgp};
use mixgrid::mc::{render_csv, render_text, replication_rng, run_table, McCell, McContext};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mixgrid", version, about = "Fixed-grid mixing-distribution estimation for Mixed Logit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a choice dataset and write it as CSV plus a JSON manifest.
    Dgp(DgpArgs),
    /// Fit the fixed-grid estimator (plain or regularized) to a dataset CSV.
    Fit(FitArgs),
    /// Estimate the kernel Gram matrix and report ill-posedness diagnostics.
    Diagnose(DiagnoseArgs),
    /// Run a Monte Carlo schedule and write CSV / text tables.
    Mc(McArgs),
}

#[derive(Args)]
struct DgpArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Use the regularized estimator.
    #[arg(long)]
    pcr: bool,
    /// Retained singular directions for the regularized estimator.
    #[arg(long)]
    p: Option<usize>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct McArgs {
    /// Schedule config path; mutually exclusive with --schedule.
    #[arg(long, conflicts_with = "schedule")]
    config: Option<PathBuf>,
    /// Bundled schedule name: table1, table2, or table3.
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads for replications (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Override every cell seed with `seed + cell_index`.
    #[arg(long)]
    seed: Option<u64>,
}

fn default_products() -> usize {
    3
}

fn default_chars() -> usize {
    2
}

fn default_bounds() -> Vec<(f64, f64)> {
    vec![(-5.0, 5.0); 2]
}

fn default_p() -> usize {
    5
}

fn default_draws() -> usize {
    10_000
}

fn default_eval_per_dim() -> usize {
    11
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DgpConfig {
    n: usize,
    #[serde(default = "default_products")]
    products: usize,
    #[serde(default = "default_chars")]
    chars: usize,
    seed: u64,
    #[serde(default)]
    dgp: Dgp,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridConfig {
    points: usize,
    #[serde(default = "default_bounds")]
    bounds: Vec<(f64, f64)>,
}

impl GridConfig {
    fn spec(&self) -> mixgrid::Result<GridSpec> {
        GridSpec::new(self.points, self.bounds.clone())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitConfig {
    data: PathBuf,
    grid: GridConfig,
    #[serde(default)]
    pcr: bool,
    #[serde(default = "default_p")]
    p: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiagnoseConfig {
    kernel: KernelKind,
    grid: GridConfig,
    #[serde(default = "default_draws")]
    x_draws: usize,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct McConfig {
    #[serde(default = "default_products")]
    products: usize,
    #[serde(default = "default_chars")]
    chars: usize,
    #[serde(default)]
    dgp: GaussianMixtureDgp,
    #[serde(default = "default_bounds")]
    bounds: Vec<(f64, f64)>,
    #[serde(default = "default_eval_per_dim")]
    eval_points_per_dim: usize,
    cells: Vec<McCell>,
}

const SCHEDULES: [(&str, &str); 3] = [
    ("table1", include_str!("../schedules/table1.json")),
    ("table2", include_str!("../schedules/table2.json")),
    ("table3", include_str!("../schedules/table3.json")),
];

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code_for(&err)
        }
    };
    ExitCode::from(code)
}

fn exit_code_for(err: &mixgrid::Error) -> u8 {
    use mixgrid::Error::*;
    match err {
        Io(_) => 3,
        Infeasible { .. } | NonConvergence { .. } | Asymmetric(_) => 4,
        CellFailed { .. } => 5,
        _ => 2,
    }
}

fn run(cli: Cli) -> mixgrid::Result<u8> {
    match cli.command {
        Command::Dgp(args) => cmd_dgp(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Diagnose(args) => cmd_diagnose(args),
        Command::Mc(args) => cmd_mc(args),
    }
}

fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> mixgrid::Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn write_file(path: &Path, contents: &str) -> mixgrid::Result<()> {
    fs::write(path, contents)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_dgp(args: DgpArgs) -> mixgrid::Result<u8> {
    let mut cfg: DgpConfig = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let mut rng = replication_rng(cfg.seed, 0);
    let data = simulate_dataset(&cfg.dgp, cfg.n, cfg.products, cfg.chars, &mut rng)?;

    fs::create_dir_all(&args.out)?;
    let mut csv = Vec::new();
    data.write_csv(&mut csv)?;
    let csv_path = args.out.join("dataset.csv");
    write_file(&csv_path, std::str::from_utf8(&csv).expect("csv is utf-8"))?;

    let manifest = serde_json::json!({
        "n": cfg.n,
        "products": cfg.products,
        "chars": cfg.chars,
        "seed": cfg.seed,
        "dgp": cfg.dgp,
        "dataset": "dataset.csv",
    });
    write_file(
        &args.out.join("dataset_manifest.json"),
        &serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(0)
}

fn cmd_fit(args: FitArgs) -> mixgrid::Result<u8> {
    let mut cfg: FitConfig = load_config(&args.config)?;
    if args.pcr {
        cfg.pcr = true;
    }
    if let Some(p) = args.p {
        cfg.p = p;
    }
    let file = fs::File::open(&cfg.data)?;
    let data = ChoiceDataset::read_csv(BufReader::new(file))?;
    let grid = halton_grid(&cfg.grid.spec()?)?;
    let fit = if cfg.pcr {
        fit_pcr(&data, &grid, cfg.p)?
    } else {
        fit_fixed_grid(&data, &grid)?
    };
    fs::create_dir_all(&args.out)?;
    write_file(
        &args.out.join("fit.json"),
        &serde_json::to_string_pretty(&fit.to_json())?,
    )?;
    Ok(0)
}

fn cmd_diagnose(args: DiagnoseArgs) -> mixgrid::Result<u8> {
    let mut cfg: DiagnoseConfig = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let grid = halton_grid(&cfg.grid.spec()?)?;
    let mut rng = replication_rng(cfg.seed, 0);
    let report = diagnose(&grid, &cfg.kernel, cfg.x_draws, &mut rng)?;
    fs::create_dir_all(&args.out)?;
    write_file(
        &args.out.join("diagnostics.json"),
        &serde_json::to_string_pretty(&report)?,
    )?;
    write_file(&args.out.join("spectrum.csv"), &report.spectrum_csv())?;
    Ok(0)
}

fn cmd_mc(args: McArgs) -> mixgrid::Result<u8> {
    let mut cfg: McConfig = match (&args.config, &args.schedule) {
        (Some(path), None) => load_config(path)?,
        (None, Some(name)) => {
            let text = SCHEDULES
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, text)| *text)
                .ok_or_else(|| {
                    mixgrid::Error::InvalidParameter(format!(
                        "unknown schedule `{name}`; bundled: table1, table2, table3"
                    ))
                })?;
            serde_json::from_str(text)?
        }
        _ => {
            return Err(mixgrid::Error::InvalidParameter(
                "exactly one of --config or --schedule is required".into(),
            ))
        }
    };
    if let Some(base) = args.seed {
        for (i, cell) in cfg.cells.iter_mut().enumerate() {
            cell.seed = base + i as u64;
        }
    }
    for cell in &cfg.cells {
        cell.validate()?;
    }
    let ctx = McContext::new(
        cfg.products,
        cfg.chars,
        cfg.dgp.clone(),
        cfg.bounds.clone(),
        cfg.eval_points_per_dim,
    )?;

    let workers = args.workers.unwrap_or_else(num_threads);
    if workers == 0 {
        return Err(mixgrid::Error::InvalidParameter("--workers must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| mixgrid::Error::InvalidParameter(format!("thread pool: {e}")))?;
    let outcome = pool.install(|| run_table(&cfg.cells, &ctx));

    fs::create_dir_all(&args.out)?;
    write_file(&args.out.join("results.csv"), &render_csv(&outcome.results))?;
    write_file(&args.out.join("results.txt"), &render_text(&outcome.results))?;
    let sidecar = serde_json::json!({
        "config": cfg,
        "workers_requested": args.workers,
        "schedule": args.schedule,
    });
    write_file(
        &args.out.join("run_config.json"),
        &serde_json::to_string_pretty(&sidecar)?,
    )?;

    if outcome.failures.is_empty() {
        Ok(0)
    } else {
        for (cell, msg) in &outcome.failures {
            eprintln!("cell (n={}, D={}) failed: {msg}", cell.n, cell.d);
        }
        Ok(5)
    }
}

fn num_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}
