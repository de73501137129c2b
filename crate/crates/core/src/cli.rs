//! Command-line front end: `run`, `plot`, `constants` and `verify`, plus the
//! run-directory layout those commands read and write.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{ExperimentConfig, Preset};
use crate::error::{PricingError, Result};
use crate::harness::{
    aggregate, run_trials, write_summary_csv, write_trial_csv, RegretCurve, SummaryRow, TrialBatch,
    TrialResult,
};
use crate::link::PricingConstants;
use crate::ons::OnsHyper;
use crate::plot::{plot_run_dir, trial_csv_name};
use crate::verify::{run_verify, Faults};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

pub const MANIFEST: &str = "MANIFEST";

#[derive(Debug, Parser)]
#[command(
    name = "pricing-lab",
    version,
    about = "Contextual pricing experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment and write a new run directory.
    Run {
        /// Config file, or the name of a shipped preset.
        #[arg(long)]
        config: String,
        /// Parent directory for the run; defaults to the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; defaults to all cores.
        #[arg(long)]
        jobs: Option<usize>,
        /// Also write a per-round trace for every trial.
        #[arg(long)]
        trace: bool,
    },
    /// Render `{env}.svg` regret plots from a run directory.
    Plot { run_dir: PathBuf },
    /// Print the derived constants as JSON.
    Constants {
        /// Config file or preset name; defaults to the stochastic preset.
        #[arg(long)]
        config: Option<String>,
    },
    /// Run the numerical self-checks.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupt the analytic gradient, to see the suite fail.
        #[arg(long)]
        inject_gradient_fault: bool,
    },
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(e: &PricingError) -> i32 {
    match e {
        PricingError::Config(_) | PricingError::Data { .. } => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Run {
            config,
            out,
            jobs,
            trace,
        } => {
            let config = resolve_config(&config)?.with_env_seed()?;
            let parent = out.unwrap_or_else(|| config.output_dir.clone());
            let outcome = match jobs {
                Some(n) => {
                    let pool = rayon::ThreadPoolBuilder::new()
                        .num_threads(n.max(1))
                        .build()
                        .map_err(|e| PricingError::Config(format!("--jobs: {e}")))?;
                    pool.install(|| execute_run(&config, &parent, trace))?
                }
                None => execute_run(&config, &parent, trace)?,
            };
            println!("{}", outcome.dir.display());
            match outcome.error {
                None => Ok(EXIT_OK),
                Some(message) => {
                    eprintln!("error: run incomplete: {message}");
                    Ok(EXIT_RUNTIME)
                }
            }
        }
        Command::Plot { run_dir } => {
            for path in plot_run_dir(&run_dir)? {
                println!("{}", path.display());
            }
            Ok(EXIT_OK)
        }
        Command::Constants { config } => {
            let config = match config {
                Some(c) => resolve_config(&c)?,
                None => Preset::Stochastic.config(),
            };
            let spec = config.env_spec()?;
            let report = ConstantsReport::new(&config.constants(&spec)?, config.ons)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(EXIT_OK)
        }
        Command::Verify {
            seed,
            inject_gradient_fault,
        } => {
            let report = run_verify(
                seed,
                Faults {
                    corrupt_gradient: inject_gradient_fault,
                },
            )?;
            for p in &report.properties {
                println!(
                    "{} {:<24} {}",
                    if p.passed { "PASS" } else { "FAIL" },
                    p.name,
                    p.detail
                );
            }
            Ok(if report.all_passed() {
                EXIT_OK
            } else {
                EXIT_VERIFY
            })
        }
    }
}

/// A path to a config file, or a preset name when no such file exists.
pub fn resolve_config(arg: &str) -> Result<ExperimentConfig> {
    let path = Path::new(arg);
    if path.exists() {
        return ExperimentConfig::load(path);
    }
    Preset::from_name(arg).map(Preset::config).ok_or_else(|| {
        PricingError::Config(format!(
            "{arg} is neither a readable config file nor a preset (stochastic, adversarial, adaptivity, misspecification)"
        ))
    })
}

/// The constants a run actually used, with the ONS parameters in effect.
#[derive(Debug, Clone, Serialize)]
pub struct ConstantsReport {
    #[serde(rename = "J01")]
    pub j01: f64,
    pub c1: f64,
    pub c2: f64,
    #[serde(rename = "Delta")]
    pub delta: f64,
    #[serde(rename = "C_l")]
    pub c_l: f64,
    #[serde(rename = "C_G")]
    pub c_g: f64,
    #[serde(rename = "C_e")]
    pub c_e: f64,
    #[serde(rename = "G")]
    pub g: f64,
    #[serde(rename = "D")]
    pub d: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// Whether gamma and epsilon are the analysis values or came from the config.
    pub ons_source: &'static str,
}

impl ConstantsReport {
    pub fn new(k: &PricingConstants, ons: Option<OnsHyper>) -> Result<Self> {
        let (hyper, ons_source) = match ons {
            Some(h) => (h, "config"),
            None => (OnsHyper::from_constants(k)?, "analysis"),
        };
        Ok(Self {
            j01: k.j01,
            c1: k.c1,
            c2: k.c2,
            delta: k.delta,
            c_l: k.c_l,
            c_g: k.c_g,
            c_e: k.c_e,
            g: k.g_bound,
            d: k.d_diam,
            gamma: hyper.gamma,
            epsilon: hyper.epsilon,
            ons_source,
        })
    }
}

/// Where a run went and, when it did not finish, why.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub curves: Vec<RegretCurve>,
    pub error: Option<String>,
}

/// Runs the experiment on the current rayon pool and writes a fresh run directory
/// under `parent`. Configuration problems are returned as errors before anything is
/// written; trial failures still produce a directory whose MANIFEST says incomplete.
pub fn execute_run(config: &ExperimentConfig, parent: &Path, trace: bool) -> Result<RunOutcome> {
    config.validate()?;
    let spec = config.env_spec()?;
    let constants = config.constants(&spec)?;
    let report = ConstantsReport::new(&constants, config.ons)?;
    let batch = run_trials(
        &spec,
        &config.policies,
        &constants,
        config.horizon,
        config.trials,
        config.base_seed,
        &config.settings(trace),
    );
    let (curves, error) = match aggregate_batch(&batch) {
        Ok(curves) => (curves, None),
        Err(e) => (Vec::new(), Some(e.to_string())),
    };

    let dir = create_run_dir(parent, &config.name)?;
    let mut files = Vec::new();
    write_json(&dir, "config.json", &config.snapshot(&spec), &mut files)?;
    write_json(&dir, "constants.json", &report, &mut files)?;
    if error.is_none() {
        let rows: Vec<SummaryRow> = curves
            .iter()
            .map(|c| SummaryRow::from_curve(c, &config.name, config.horizon))
            .collect();
        write_file(&dir, "summary.csv", &mut files, |w| {
            write_summary_csv(w, &rows)
        })?;
        for (i, kind) in batch.policies.iter().enumerate() {
            let trials = batch.successes(i);
            write_file(&dir, &trial_csv_name(kind.label()), &mut files, |w| {
                write_trial_csv(w, &trials, batch.base_seed)
            })?;
            if trace {
                for t in &trials {
                    let name = format!(
                        "trace_{}_{}.csv",
                        kind.label(),
                        t.seed.wrapping_sub(batch.base_seed)
                    );
                    write_file(&dir, &name, &mut files, |w| write_trace_csv(w, t))?;
                }
            }
        }
    }
    write_manifest(&dir, &files, error.as_deref())?;
    Ok(RunOutcome { dir, curves, error })
}

fn aggregate_batch(batch: &TrialBatch) -> Result<Vec<RegretCurve>> {
    if let Some(e) = batch.first_error() {
        return Err(PricingError::InvalidArgument(e.to_string()));
    }
    batch
        .policies
        .iter()
        .enumerate()
        .map(|(i, &kind)| aggregate(kind, &batch.successes(i)))
        .collect()
}

/// `{parent}/{name}_{timestamp}`, with `-2`, `-3`, ... appended when taken.
/// Existing directories are never reused.
pub fn create_run_dir(parent: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(parent)?;
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let base = format!("{name}_{stamp}");
    for attempt in 1.. {
        let candidate = if attempt == 1 {
            parent.join(&base)
        } else {
            parent.join(format!("{base}-{attempt}"))
        };
        match fs::create_dir(&candidate) {
            Ok(()) => return Ok(candidate),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!("the attempt counter is unbounded")
}

fn write_file<F>(dir: &Path, name: &str, files: &mut Vec<String>, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let mut w = BufWriter::new(File::create(dir.join(name))?);
    body(&mut w)?;
    w.flush()?;
    files.push(name.to_string());
    Ok(())
}

fn write_json<T: Serialize>(
    dir: &Path,
    name: &str,
    value: &T,
    files: &mut Vec<String>,
) -> Result<()> {
    write_file(dir, name, files, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

fn write_trace_csv<W: Write>(out: W, trial: &TrialResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "t",
        "price",
        "bought",
        "regret",
        "cum_regret",
        "surrogate_gap",
    ])?;
    for r in trial.trace.iter().flatten() {
        w.write_record([
            r.t.to_string(),
            format!("{:?}", r.price),
            u8::from(r.bought).to_string(),
            format!("{:?}", r.regret),
            format!("{:?}", r.cum_regret),
            r.surrogate_gap
                .map(|g| format!("{g:?}"))
                .unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `status complete|incomplete`, an `error` line when incomplete, then one `file` line per output.
fn write_manifest(dir: &Path, files: &[String], error: Option<&str>) -> Result<()> {
    let mut text = String::new();
    match error {
        None => text.push_str("status complete\n"),
        Some(e) => {
            text.push_str("status incomplete\n");
            text.push_str(&format!("error {}\n", e.replace('\n', " ")));
        }
    }
    text.push_str(&format!("created {}\n", chrono::Local::now().to_rfc3339()));
    for f in files {
        text.push_str(&format!("file {f}\n"));
    }
    fs::write(dir.join(MANIFEST), text)?;
    Ok(())
}

/// Reads a run directory's MANIFEST; `Ok(None)` when the run finished, `Ok(Some(msg))` otherwise.
pub fn read_manifest_error(dir: &Path) -> Result<Option<String>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| PricingError::Data {
        path: path.clone(),
        message: e.to_string(),
    })?;
    let mut lines = text.lines();
    match lines.next() {
        Some("status complete") => Ok(None),
        Some("status incomplete") => Ok(Some(
            lines
                .find_map(|l| l.strip_prefix("error "))
                .unwrap_or("unknown error")
                .to_string(),
        )),
        _ => Err(PricingError::Data {
            path,
            message: "MANIFEST does not start with a status line".into(),
        }),
    }
}
