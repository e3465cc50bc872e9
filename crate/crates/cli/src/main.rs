//! `meshstyle`: plan views, distill, stylize, bake, synthesize the sky and
//! evaluate, each stage writing under the configured output directory.

mod config;
mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use meshstyle::trainer::Mode;

#[derive(Debug)]
pub enum CliError {
    /// Invalid command line or configuration (exit code 2).
    Config(String),
    /// Failure while running a stage (exit code 3).
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (kind, msg) = match self {
            CliError::Config(m) => ("config", m),
            CliError::Runtime(m) => ("runtime", m),
        };
        write!(f, "error[{kind}]: {}", msg.replace(['\n', '\r'], " "))
    }
}

impl From<meshstyle::Error> for CliError {
    fn from(e: meshstyle::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "meshstyle", version, about = "Stylize UV-textured urban meshes")]
struct Cli {
    /// Run configuration (TOML); the shipped default when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Overrides `output_dir` from the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `seed` from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Place pivot cameras and write the view plan.
    PlanViews,
    /// Fit the neural texture field to the scene texture.
    Distill,
    /// Optimize the field towards the style.
    Stylize {
        #[arg(long)]
        mode: Option<Mode>,
    },
    /// Bake a field checkpoint into a texture image.
    Bake {
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        /// Checkpoint to bake; the latest stylization checkpoint by default.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Synthesize the style-aligned sky panorama.
    Sky,
    /// Propagate a 2D edit of one pivot view to the whole texture.
    EditPropagate {
        /// Edited image; overrides `edit.image`.
        #[arg(long)]
        image: Option<PathBuf>,
        /// Pivot index of the edited view; overrides `edit.pivot`.
        #[arg(long)]
        pivot: Option<usize>,
    },
    /// Compute eSSIM, masked LPIPS and CLIP score on the pivot views.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// plan-views, distill, stylize, sky, bake and eval in order.
    All {
        #[arg(long)]
        mode: Option<Mode>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.apply_seed();
    match cli.command {
        Command::PlanViews => stages::plan_views(&cfg),
        Command::Distill => stages::distill(&cfg),
        Command::Stylize { mode } => {
            if let Some(m) = mode {
                cfg.stylize.mode = m;
            }
            stages::stylize(&cfg)
        }
        Command::Bake {
            width,
            height,
            checkpoint,
        } => {
            cfg.bake.width = width.unwrap_or(cfg.bake.width);
            cfg.bake.height = height.unwrap_or(cfg.bake.height);
            cfg.validate()?;
            stages::bake(&cfg, checkpoint.as_deref())
        }
        Command::Sky => stages::sky(&cfg),
        Command::EditPropagate { image, pivot } => {
            if image.is_some() {
                cfg.edit.image = image;
            }
            cfg.edit.pivot = pivot.unwrap_or(cfg.edit.pivot);
            stages::edit_propagate(&cfg)
        }
        Command::Eval { checkpoint } => stages::eval(&cfg, checkpoint.as_deref()),
        Command::All { mode } => {
            if let Some(m) = mode {
                cfg.stylize.mode = m;
            }
            stages::all(&cfg)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string();
            let line = first
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("{}", CliError::Config(line.to_string()));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
