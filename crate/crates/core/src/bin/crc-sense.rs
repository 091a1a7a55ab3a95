use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crc_sense::harness::{
    self, replay, run_sweep, summarize, threads_from_env, with_threads, write_summary_csv, write_trials_csv,
    LvSource, SweepParam, SweepRow, SweepSpec, SweepTable,
};
use crc_sense::lv::{self, load_model, save_model, LvModel};
use crc_sense::{Error, Result, RunConfig};

#[derive(Parser)]
#[command(name = "crc-sense", version, about = "Sub-Nyquist spectrum sensing with calibrated thresholds")]
struct Cli {
    /// Worker threads (0 = one per core); overrides CRC_SENSE_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Paper,
    CosetSweep,
}

#[derive(Subcommand)]
enum Command {
    /// Write a complete configuration file with default values.
    GenConfig {
        path: PathBuf,
        #[arg(long, value_enum, default_value = "paper")]
        preset: Preset,
    },
    /// Train the LV network and save it.
    TrainLv {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the trials of a single operating point.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Per-trial CSV; defaults to output.trials_csv.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Summary CSV; defaults to output.summary_csv.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Regenerate the rows of one trial from its seed material and print them.
    Replay {
        #[arg(long)]
        config: PathBuf,
        /// Sweep parameter of the row; `none` for rows written by `run`.
        #[arg(long, default_value = "none")]
        param: String,
        /// Sweep value of the row.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        value: f64,
        #[arg(long)]
        trial: usize,
    },
    /// Sweep one parameter, writing trials.csv and summary.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Overrides experiment.sweep_param.
        #[arg(long)]
        param: Option<String>,
        /// Comma-separated values; overrides experiment.sweep_values.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        values: Option<Vec<f64>>,
        /// Output directory; defaults to the paths in [output].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the numerical kernels against brute-force references.
    Selfcheck,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::Config { .. } | Error::ConfigSyntax(_) => 1,
        _ => 2,
    }
}

/// Config loading failures, including an unreadable file, are usage errors.
fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path).map_err(|e| match e {
        Error::Io { .. } => Error::config("--config", e.to_string()),
        other => other,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_tables(table: &SweepTable, trials: &Path, summary: &Path) -> Result<()> {
    let mut w = create(trials)?;
    write_trials_csv(table, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(trials, e))?;
    let mut w = create(summary)?;
    write_summary_csv(table.param, &summarize(table), &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(summary, e))?;
    eprintln!("wrote {} and {}", trials.display(), summary.display());
    Ok(())
}

/// Reports failures on stderr; a table with failures is a runtime error.
fn check_failures(table: &SweepTable) -> Result<()> {
    for f in &table.failures {
        match (f.trial, f.seed) {
            (Some(t), Some(s)) => eprintln!("{} = {}: trial {t} (seed {s}) failed: {}", table.param, f.value, f.message),
            _ => eprintln!("{} = {}: sweep point skipped: {}", table.param, f.value, f.message),
        }
    }
    if table.failures.is_empty() {
        Ok(())
    } else {
        Err(Error::Runtime(format!("{} failure(s) during the run", table.failures.len())))
    }
}

fn lv_model_for(cfg: &RunConfig) -> Result<Option<LvModel>> {
    if !cfg.features.lv {
        return Ok(None);
    }
    if let Some(path) = &cfg.features.lv_model {
        return load_model(path).map(Some);
    }
    eprintln!("no features.lv_model given; training the LV network (seed {})", cfg.training.seed);
    let (model, history) = lv::train(&cfg.signal, &cfg.sampling, &cfg.training)?;
    eprintln!("final training loss {:.6}", history.last().copied().unwrap_or(f64::NAN));
    Ok(Some(model))
}

fn cmd_train(config: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    eprintln!("training seed {}", cfg.training.seed);
    let (model, history) = lv::train(&cfg.signal, &cfg.sampling, &cfg.training)?;
    for (epoch, loss) in history.iter().enumerate() {
        println!("epoch {epoch}: loss {loss:.6}");
    }
    save_model(&model, out)?;
    eprintln!("saved {}", out.display());
    Ok(())
}

fn cmd_run(config: &Path, out: Option<PathBuf>, summary: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(config)?;
    let model = lv_model_for(&cfg)?;
    let spec = SweepSpec {
        param: SweepParam::None,
        values: vec![0.0],
        trials: cfg.experiment.trials,
        base_seed: cfg.experiment.base_seed,
    };
    eprintln!("base seed {}, {} trials", spec.base_seed, spec.trials);
    let source = model.as_ref().map_or(LvSource::Train, LvSource::Shared);
    let table = run_sweep(&cfg, &spec, source);
    let trials = out.unwrap_or_else(|| cfg.output.trials_csv.clone());
    let summary = summary.unwrap_or_else(|| cfg.output.summary_csv.clone());
    write_tables(&table, &trials, &summary)?;
    check_failures(&table)
}

fn cmd_replay(config: &Path, param: &str, value: f64, trial: usize) -> Result<()> {
    let cfg = load_config(config)?;
    let param: SweepParam = param.parse()?;
    let shared = match &cfg.features.lv_model {
        Some(path) if cfg.features.lv => Some(load_model(path)?),
        _ => None,
    };
    let source = shared.as_ref().map_or(LvSource::Train, LvSource::Shared);
    eprintln!(
        "base seed {}, trial seed {}",
        cfg.experiment.base_seed,
        harness::trial_seed(cfg.experiment.base_seed, value, trial)
    );
    let rows = replay(&cfg, param, value, trial, source)?;
    let table = SweepTable {
        param,
        rows: rows
            .into_iter()
            .map(|result| SweepRow {
                value_index: 0,
                value,
                result,
            })
            .collect(),
        failures: vec![],
    };
    let stdout = std::io::stdout();
    write_trials_csv(&table, stdout.lock()).map_err(|e| Error::Runtime(e.to_string()))
}

fn cmd_sweep(config: &Path, param: Option<String>, values: Option<Vec<f64>>, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(p) = param {
        cfg.experiment.sweep_param = p.parse()?;
    }
    if let Some(v) = values {
        if v.is_empty() {
            return Err(Error::InvalidArgument("--values is empty".into()));
        }
        cfg.experiment.sweep_values = v;
    }
    let spec = SweepSpec::from_config(&cfg);
    eprintln!(
        "sweeping {} over {:?}: base seed {}, {} trials per value",
        spec.param, spec.values, spec.base_seed, spec.trials
    );
    let shared = match &cfg.features.lv_model {
        Some(path) if cfg.features.lv => Some(load_model(path)?),
        _ => None,
    };
    let source = shared.as_ref().map_or(LvSource::Train, LvSource::Shared);
    let table = run_sweep(&cfg, &spec, source);
    let (trials, summary) = match out {
        Some(dir) => (dir.join("trials.csv"), dir.join("summary.csv")),
        None => (cfg.output.trials_csv.clone(), cfg.output.summary_csv.clone()),
    };
    write_tables(&table, &trials, &summary)?;
    check_failures(&table)
}

fn cmd_selfcheck() -> Result<()> {
    let report = crc_sense::selfcheck::run();
    for c in &report.checks {
        println!("{:<12} {}  {}", c.name, if c.passed { "ok  " } else { "FAIL" }, c.detail);
    }
    if report.all_passed() {
        Ok(())
    } else {
        Err(Error::Runtime("self-check failed".into()))
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let threads = match cli.threads {
        Some(t) => t,
        None => threads_from_env()?,
    };
    let command = cli.command;
    with_threads(threads, move || match command {
        Command::GenConfig { path, preset } => {
            let cfg = match preset {
                Preset::Paper => RunConfig::paper_preset(),
                Preset::CosetSweep => RunConfig::coset_sweep_preset(),
            };
            cfg.save(&path)
        }
        Command::TrainLv { config, out } => cmd_train(&config, &out),
        Command::Run { config, out, summary } => cmd_run(&config, out, summary),
        Command::Replay {
            config,
            param,
            value,
            trial,
        } => cmd_replay(&config, &param, value, trial),
        Command::Sweep {
            config,
            param,
            values,
            out,
        } => cmd_sweep(&config, param, values, out),
        Command::Selfcheck => cmd_selfcheck(),
    })?
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
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
