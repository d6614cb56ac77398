use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use iccl_core::actr::{hrs_md, hrs_score, FitOptions, Gauge, HumanReference};
use iccl_core::runner::{
    self, fit_actr, load_config, read_fit_records, read_results, report, run_experiment_in, sweep,
    write_fit_records, ExperimentConfig, Method, SweepDimension,
};
use iccl_core::schedule::ScheduleKind;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "iccl-bench", version, about = "Retention benchmark for sequential learners")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the target and interference tasks of every repeat as JSON.
    GenTasks(ExperimentArgs),
    /// Run the full (phi_i, phi_d, repeat) grid.
    Run(ExperimentArgs),
    /// Run one experiment per value of a swept setting.
    Sweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// phi-i, ewc-lambda or rho-decay
        #[arg(long)]
        dimension: SweepDimension,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Fit ACT-R parameters to result files, one fit per method.
    FitActr {
        #[arg(long, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        method: Option<String>,
        #[arg(long, default_value = "fits.json")]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        starts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Search the full (d, s, kappa, gamma) box instead of fixing kappa = 1.
        #[arg(long)]
        free_kappa: bool,
        /// Human reference JSON; the bundled table by default.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Human-retention similarity of (d, s, gamma) or of every record in a fit file.
    Hrs {
        #[arg(long, allow_hyphen_values = true, requires_all = ["s", "gamma"], conflicts_with = "fit")]
        d: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        s: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        gamma: Option<f64>,
        #[arg(long)]
        fit: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Write plot-ready data files from result files and optional fits.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        fits: Option<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

/// Config file plus command-line overrides.
#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Experiment config or run manifest (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    schedule: Option<ScheduleKind>,
    #[arg(long)]
    n_states: Option<usize>,
    #[arg(long)]
    phi: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    phi_i: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    phi_d_grid: Option<Vec<usize>>,
    #[arg(long, overrides_with = "no_identifiers")]
    with_identifiers: bool,
    #[arg(long, overrides_with = "with_identifiers")]
    no_identifiers: bool,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    allow_partial: bool,
    #[arg(long)]
    jobs: Option<usize>,
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => load_config(&read(p)?)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident <- $arg:expr),* $(,)?) => {
                $(if let Some(v) = $arg.clone() { c.$field = v; })*
            };
        }
        set!(
            method <- self.method,
            schedule <- self.schedule,
            n_states <- self.n_states,
            phi <- self.phi,
            k <- self.k,
            phi_i_grid <- self.phi_i,
            phi_d_grid <- self.phi_d_grid,
            repeats <- self.repeats,
            seed <- self.seed,
            jobs <- self.jobs,
        );
        if let Some(out) = &self.out {
            c.out_dir = out.to_string_lossy().into_owned();
        }
        if self.with_identifiers {
            c.with_identifiers = true;
        }
        if self.no_identifiers {
            c.with_identifiers = false;
        }
        c.allow_partial |= self.allow_partial;
        c.validate()?;
        Ok(c)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn reference(path: &Option<PathBuf>) -> Result<HumanReference> {
    Ok(match path {
        Some(p) => HumanReference::from_json(&read(p)?)?,
        None => HumanReference::bundled(),
    })
}

fn gen_tasks(config: &ExperimentConfig) -> Result<()> {
    let dir = Path::new(&config.out_dir).join("tasks");
    fs::create_dir_all(&dir)?;
    for r in 0..config.repeats {
        let rec = runner::seed_record(config, r);
        let (target, interference) = runner::repeat_tasks(config, &rec)?;
        let doc = json!({ "seeds": rec, "target": target, "interference": interference });
        fs::write(dir.join(format!("repeat-{r:03}.json")), serde_json::to_string_pretty(&doc)?)?;
    }
    println!("wrote {} task files to {}", config.repeats, dir.display());
    Ok(())
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenTasks(args) => gen_tasks(&args.resolve()?)?,
        Command::Run(args) => {
            let config = args.resolve()?;
            let out = run_experiment_in(&config, Path::new(&config.out_dir))?;
            println!(
                "{} rows, {} failed cells, config {} -> {}",
                out.rows.len(),
                out.manifest.failures.len(),
                &out.manifest.config_hash[..12],
                out.dir.display()
            );
        }
        Command::Sweep { exp, dimension, values } => {
            let config = exp.resolve()?;
            let s = sweep(&config, dimension, &values, Path::new(&config.out_dir))?;
            for p in &s.points {
                let mark = if p.is_argmax { " *" } else { "" };
                println!("{dimension}={:<8} mean={:.4} ci95={:.4}{mark}", p.value, p.mean, p.ci95);
            }
            println!("{}", s.verdict);
        }
        Command::FitActr { input, method, out, starts, seed, free_kappa, reference: r } => {
            let rows = read_results(&input)?;
            let opts = FitOptions {
                starts,
                seed,
                gauge: if free_kappa { Gauge::Free } else { Gauge::UnitKappa },
                ..Default::default()
            };
            let fits = fit_actr(&rows, method.as_deref(), &opts, &reference(&r)?)?;
            let records: Vec<_> = fits.into_iter().map(|f| f.record).collect();
            for f in &records {
                println!(
                    "{}: d={:.4} s={:.4} kappa={:.4} gamma={:.4} mse={:.5} hrs_md={:.2}",
                    f.method, f.d, f.s, f.kappa, f.gamma, f.mse, f.hrs_md
                );
            }
            write_fit_records(&out, &records)?;
        }
        Command::Hrs { d, s, gamma, fit, reference: r } => {
            let reference = reference(&r)?;
            let thetas: Vec<(String, [f64; 3])> = match (d, s, gamma, fit) {
                (Some(d), Some(s), Some(g), None) => vec![("theta".into(), [d, s, g])],
                (None, None, None, Some(p)) => read_fit_records(&p)?
                    .into_iter()
                    .map(|f| (f.method, [f.d, f.s, f.gamma]))
                    .collect(),
                _ => bail!("give either --d, --s and --gamma or --fit"),
            };
            for (name, theta) in thetas {
                let d2 = hrs_md(theta, &reference);
                println!("{name}: hrs_md={d2:.4} hrs_score={:.6e}", hrs_score(d2)?);
            }
        }
        Command::Report { input, fits, out } => {
            let rows = read_results(&input)?;
            let fits = fits.as_deref().map(read_fit_records).transpose()?;
            let files = report(&rows, fits.as_deref(), &out)?;
            println!("report written to {}", out.display());
            if files.overlay.is_none() {
                println!("no fits given; skipped the ACT-R overlay");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
