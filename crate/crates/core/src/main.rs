use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use regime_pd::config::{load_config, preset, preset_text, ExperimentConfig, PRESETS};
use regime_pd::experiments::{run_convergence, run_oracle, run_solve};
use regime_pd::Error;

#[derive(Parser)]
#[command(name = "regime-pd", version, about = "Default probabilities under regime-switching tempered stable models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// RBF collocation solve: PD per horizon and regime, optionally the surface.
    Solve {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Reference PDs by Fourier inversion.
    Oracle {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Errors against the oracle over grid and time-step refinements.
    Converge {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "64,128,256,512")]
        ns: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "100,200,400")]
        nsteps: Vec<usize>,
    },
    /// Bundled configurations.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
    /// Print a preset as a config file.
    Dump { name: String },
}

#[derive(Args)]
struct RunArgs {
    /// Config files or preset names; several run concurrently.
    #[arg(required = true)]
    configs: Vec<String>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    z_cut: Option<f64>,
    #[arg(long)]
    panels_inner: Option<usize>,
    #[arg(long)]
    gl_order: Option<usize>,
    #[arg(long)]
    theta: Option<f64>,
    /// `k = ln(L / V0)`, replacing the configured barrier.
    #[arg(long, allow_hyphen_values = true)]
    barrier_log: Option<f64>,
}

impl RunArgs {
    fn load(&self) -> Result<Vec<ExperimentConfig>, Error> {
        self.configs
            .iter()
            .map(|c| {
                let mut cfg = if !Path::new(c).exists() && preset_text(c).is_some() {
                    preset(c)?
                } else {
                    load_config(Path::new(c))?
                };
                if let Some(v) = self.z_cut {
                    cfg.quadrature.z_cut = v;
                }
                if let Some(v) = self.panels_inner {
                    cfg.quadrature.panels_inner = v;
                }
                if let Some(v) = self.gl_order {
                    cfg.quadrature.gl_order = v;
                }
                if let Some(v) = self.theta {
                    cfg.time.theta = v;
                }
                if let Some(k) = self.barrier_log {
                    cfg.barrier.log_level = Some(k);
                    cfg.barrier.leverage = None;
                }
                cfg.validate()?;
                Ok(cfg)
            })
            .collect()
    }

    fn dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir))
    }
}

fn run_all<F>(run: &RunArgs, f: F) -> Result<(), Error>
where
    F: Fn(&ExperimentConfig, &Path) -> Result<Vec<PathBuf>, Error> + Sync,
{
    let cfgs = run.load()?;
    let written = cfgs
        .par_iter()
        .map(|c| f(c, &run.dir(c)))
        .collect::<Result<Vec<_>, _>>()?;
    for p in written.into_iter().flatten() {
        println!("{}", p.display());
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Solve { run } => run_all(&run, run_solve),
        Command::Oracle { run } => run_all(&run, run_oracle),
        Command::Converge { run, ns, nsteps } => {
            run_all(&run, |c, d| run_convergence(c, &ns, &nsteps, d).map(|r| r.1))
        }
        Command::Presets { action } => {
            match action {
                PresetAction::List => {
                    for (name, _) in PRESETS {
                        println!("{name}");
                    }
                }
                PresetAction::Dump { name } => {
                    let text = preset_text(&name)
                        .ok_or_else(|| Error::InvalidParameter(format!("unknown preset `{name}`")))?;
                    print!("{text}");
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = match &e {
                Error::ParseError { line, .. } => format!(" line={line}"),
                _ => String::new(),
            };
            eprintln!("error kind={}{line} message={:?}", e.kind(), e.to_string());
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
