//! `growreg`: quadratic oracle checks, pretraining, pruning runs, schedule
//! comparisons and plot-data export.
//!
//! Exit status: 0 success, 2 invalid flags/config/input, 3 runtime failure,
//! 4 a checked tolerance was not met.

mod config;
mod error;
mod oracle;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use growreg::harness::{
    compare_schedules, load_dataset, pretrain_baseline, run_method, Dataset, ExperimentConfig, RunOutput,
};
use growreg::netcore::{load_checkpoint, save_checkpoint, Checkpoint, Network};

use config::{Loaded, Preset};
use error::{exit, CliError, Result};

#[derive(Parser)]
#[command(name = "growreg", version, about = "Growing-penalty pruning experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct OutArg {
    /// Output root.
    #[arg(long, env = "GROWREG_OUT", default_value = "growreg-out")]
    out: PathBuf,
}

#[derive(Args)]
struct ExpArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Fills schedule tables the config leaves out.
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Subcommand)]
enum Command {
    /// Checks the closed-form perturbed minimum against gradient descent.
    Oracle {
        #[arg(long, default_value_t = 10)]
        dim: usize,
        #[arg(long, default_value_t = 50)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Square matrix, one row per line; random `w*` per case.
        #[arg(long)]
        hessian_file: Option<PathBuf>,
        /// Tabulate approximate vs exact 2-D shrink ratios instead.
        #[arg(long)]
        exact_vs_approx: bool,
        /// Largest accepted residual.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Trains the baseline network.
    Pretrain(ExpArgs),
    /// Pretrains (or loads `--baseline`), prunes with the configured method and fine-tunes.
    Run {
        #[command(flatten)]
        exp: ExpArgs,
        /// Start from this checkpoint instead of pretraining.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Runs the schedule pair of the configured method over several seeds.
    Compare {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Converts a run's record into long-format plot data.
    Report {
        /// `record.csv` or the run directory holding it.
        record: PathBuf,
        /// Output directory; defaults to the record's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|source| CliError::Output { path: path.to_path_buf(), source })
}

fn make_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| CliError::Output { path: path.to_path_buf(), source })
}

fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    save_checkpoint(path, ckpt).map_err(|e| CliError::Output {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    })
}

fn load_experiment(args: &ExpArgs) -> Result<Loaded> {
    let mut loaded = config::load(&args.config, args.preset)?;
    if let Some(seed) = args.seed {
        loaded.experiment.seed = seed;
    }
    Ok(loaded)
}

fn run_dir(args: &ExpArgs, cfg: &ExperimentConfig) -> PathBuf {
    args.out.out.join(&cfg.name).join(format!("seed{}", cfg.seed))
}

fn load_baseline(path: &Path, data: &Dataset) -> Result<Network> {
    let ckpt = load_checkpoint(path).map_err(|e| CliError::input(path, e))?;
    let net = ckpt.network;
    if net.input_shape() != data.shape || net.classes() != data.classes {
        return Err(CliError::input(path, "checkpoint does not match the dataset shape or class count"));
    }
    Ok(net)
}

fn cmd_oracle(
    dim: usize,
    cases: usize,
    seed: u64,
    hessian_file: Option<&Path>,
    exact_vs_approx: bool,
    tol: f64,
    out: &Path,
) -> Result<()> {
    if cases == 0 || dim == 0 {
        return Err(CliError::Usage("--dim and --cases must be >= 1".into()));
    }
    if !(tol > 0.0) {
        return Err(CliError::Usage("--tol must be positive".into()));
    }
    let models = match hessian_file {
        Some(p) => {
            let rows = oracle::read_hessian(p)?;
            oracle::file_models(&rows, cases, seed).map_err(|e| CliError::input(p, e))?
        }
        None => oracle::random_models(dim, cases, seed)?,
    };
    let dir = out.join("oracle");
    make_dir(&dir)?;
    if exact_vs_approx {
        if models[0].dim() != 2 {
            return Err(CliError::Usage(format!("--exact-vs-approx needs 2-D models, got dimension {}", models[0].dim())));
        }
        let path = dir.join("exact_vs_approx.csv");
        write(&path, oracle::exact_vs_approx_csv(&models)?)?;
        println!("wrote {} ({} cases)", path.display(), models.len());
        return Ok(());
    }
    let rep = oracle::run_suite(&models, tol)?;
    let path = dir.join("oracle.csv");
    write(&path, rep.to_csv())?;
    println!(
        "oracle: {} cases, max residual {:e}, tolerance {:e}, {} failing; wrote {}",
        rep.rows.len(),
        rep.max_residual(),
        tol,
        rep.failures(),
        path.display()
    );
    if rep.failures() > 0 {
        return Err(CliError::Acceptance(format!("{} of {} residuals at or above {tol:e}", rep.failures(), rep.rows.len())));
    }
    Ok(())
}

fn cmd_pretrain(args: &ExpArgs) -> Result<()> {
    let loaded = load_experiment(args)?;
    let cfg = &loaded.experiment;
    let data = load_dataset(&cfg.dataset)?;
    let dir = run_dir(args, cfg);
    make_dir(&dir)?;
    write(&dir.join("config.toml"), loaded.to_toml())?;
    let net = pretrain_baseline(cfg, &data)?;
    let acc = net.accuracy(&data.val.x, &data.val.y).map_err(growreg::harness::HarnessError::from)?;
    save(&dir.join("baseline.ckpt"), &Checkpoint::network_only(net))?;
    write(&dir.join("pretrain.csv"), format!("key,value\nname,{}\nseed,{}\nval_acc,{acc}\n", cfg.name, cfg.seed))?;
    println!("pretrain {} seed={} val_acc={acc:.4} -> {}", cfg.name, cfg.seed, dir.display());
    Ok(())
}

fn write_run(dir: &Path, out: &RunOutput, baseline: &Network) -> Result<()> {
    write(&dir.join("record.csv"), out.record.rows_csv())?;
    write(&dir.join("summary.csv"), out.record.summary_csv())?;
    write(&dir.join("mask.txt"), out.mask.to_text())?;
    save(&dir.join("baseline.ckpt"), &Checkpoint::network_only(baseline.clone()))?;
    if let Some(state) = &out.reg_state {
        let ckpt = Checkpoint { network: out.pre_prune.clone(), optim: None, reg_state: Some(state.to_bytes()) };
        save(&dir.join("regularized.ckpt"), &ckpt)?;
    }
    save(&dir.join("pruned.ckpt"), &Checkpoint::network_only(out.pruned.clone()))?;
    save(&dir.join("finetuned.ckpt"), &Checkpoint::network_only(out.finetuned.clone()))?;
    if !out.trace.points.is_empty() {
        write(&dir.join("separation.csv"), out.trace.dispersion_csv())?;
        write(&dir.join("snapshots.csv"), out.trace.snapshots_csv(None))?;
    }
    Ok(())
}

fn cmd_run(args: &ExpArgs, baseline: Option<&Path>) -> Result<()> {
    let loaded = load_experiment(args)?;
    let cfg = &loaded.experiment;
    let data = load_dataset(&cfg.dataset)?;
    let base = match baseline.or(loaded.baseline.as_deref()) {
        Some(p) => load_baseline(p, &data)?,
        None => pretrain_baseline(cfg, &data)?,
    };
    let out = run_method(cfg, &data, &base)?;
    let dir = run_dir(args, cfg);
    make_dir(&dir)?;
    write(&dir.join("config.toml"), loaded.to_toml())?;
    write_run(&dir, &out, &base)?;
    println!("{} -> {}", out.record.summary_line(), dir.display());
    Ok(())
}

fn cmd_compare(args: &ExpArgs, seeds: usize, workers: Option<usize>) -> Result<()> {
    let loaded = load_experiment(args)?;
    let cfg = &loaded.experiment;
    let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(CliError::Usage("--workers must be >= 1".into()));
    }
    let table = compare_schedules(cfg, seeds, workers)?;
    let dir = args.out.out.join(&cfg.name).join(format!("compare-seed{}-n{seeds}", cfg.seed));
    make_dir(&dir)?;
    write(&dir.join("config.toml"), loaded.to_toml())?;
    write(&dir.join("comparison.csv"), table.summary_csv())?;
    write(&dir.join("comparison_seeds.csv"), table.per_seed_csv())?;
    for w in 0..2 {
        let (m, sd) = table.mean_std(w);
        println!("{}: post_finetune {m:.4} ± {sd:.4} over {seeds} seeds", table.methods[w]);
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_report(record: &Path, out: Option<&Path>) -> Result<()> {
    let record = if record.is_dir() { record.join("record.csv") } else { record.to_path_buf() };
    let text = fs::read_to_string(&record).map_err(|e| CliError::input(&record, e))?;
    let rec = report::parse_record(&text, &record)?;
    let src_dir = record.parent().unwrap_or(Path::new("."));
    let dir = out.unwrap_or(src_dir);
    if rec.rows.is_empty() {
        log::warn!("{}: record has no rows; nothing to report", record.display());
        eprintln!("warning: {} has no rows; no output written", record.display());
        return Ok(());
    }
    make_dir(dir)?;
    let path = dir.join("report.csv");
    write(&path, rec.long_csv())?;
    println!("wrote {} ({} checkpoints)", path.display(), rec.rows.len());
    for (layer, rho) in rec.dispersion_trends() {
        println!("layer {layer}: dispersion trend spearman {rho:.4}");
    }
    let snaps = src_dir.join("snapshots.csv");
    if snaps.is_file() {
        let text = fs::read_to_string(&snaps).map_err(|e| CliError::input(&snaps, e))?;
        let (iters, csv) = report::select_snapshots(&text, &snaps)?;
        if !iters.is_empty() {
            let path = dir.join("report_snapshots.csv");
            write(&path, csv)?;
            println!("wrote {} (iterations {iters:?})", path.display());
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Oracle { dim, cases, seed, hessian_file, exact_vs_approx, tol, out } => {
            cmd_oracle(dim, cases, seed, hessian_file.as_deref(), exact_vs_approx, tol, &out.out)
        }
        Command::Pretrain(args) => cmd_pretrain(&args),
        Command::Run { exp, baseline } => cmd_run(&exp, baseline.as_deref()),
        Command::Compare { exp, seeds, workers } => cmd_compare(&exp, seeds, workers),
        Command::Report { record, out } => cmd_report(&record, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
