mod commands;
mod config;
mod logging;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use obfubench_core::corpus::CorpusError;
use obfubench_core::docs::DocError;
use obfubench_core::tasks::TaskError;

use crate::commands::Ctx;
use crate::config::PipelineConfig;

/// Exit status: 1 for failed checks, 2 for bad input, 3 for unreachable
/// model endpoints.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Transport(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Validation(_) => 1,
            Self::Config(_) => 2,
            Self::Transport(_) => 3,
        }
    }
}

impl From<TaskError> for CliError {
    fn from(e: TaskError) -> Self {
        match e {
            TaskError::Transport(t) => Self::Transport(t.to_string()),
            other => Self::Config(other.to_string()),
        }
    }
}

impl From<DocError> for CliError {
    fn from(e: DocError) -> Self {
        match e {
            DocError::Transport(t) => Self::Transport(t.to_string()),
            other => Self::Config(other.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Task(t) => t.into(),
            CorpusError::Coverage(_) | CorpusError::UnknownTarget { .. } => Self::Validation(e.to_string()),
            other => Self::Config(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "obfubench", version, about = "Build and grade an obfuscated-library coding benchmark")]
struct Cli {
    /// Pipeline configuration (TOML); OBFUBENCH_<SECTION>__<KEY> overrides it.
    #[arg(long, global = true, env = "OBFUBENCH_CONFIG")]
    config: Option<PathBuf>,
    /// More log output; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Errors only.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the obfuscation map for the configured surface.
    Obfuscate {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit the wrapper package for a map.
    EmitWrapper {
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Translate the original documentation into the obfuscated namespace.
    Docs {
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        originals: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Rewrite each entry with the doc_rewrite endpoint.
        #[arg(long)]
        rewrite: bool,
    },
    /// Generate candidate tasks with the generation endpoint.
    Gen {
        #[arg(long, default_value_t = 1)]
        per_function: usize,
        #[arg(long, default_value_t = 0)]
        multi: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Keep the tasks the solver panel agrees on.
    Filter {
        #[arg(long)]
        tasks: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Partition the corpus and write its manifest.
    Split {
        #[arg(long)]
        tasks: Option<PathBuf>,
        /// Also write a CSV sample for human review.
        #[arg(long)]
        review_sheet: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        review_fraction: f64,
    },
    /// Grade solutions laid out as <dir>/<task_id>/<rollout>.py.
    Grade {
        solutions: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate verdicts into metrics.
    Report {
        #[arg(long)]
        verdicts: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check every artifact in the corpus directory.
    Validate,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = PipelineConfig::load(cli.config.as_deref()).map_err(|e| CliError::Config(e.to_string()))?;
    let ctx = Ctx { cfg };
    match cli.command {
        Command::Obfuscate { seed, out } => commands::obfuscate(&ctx, seed, out),
        Command::EmitWrapper { map, out } => commands::emit_wrapper(&ctx, map, out),
        Command::Docs {
            map,
            originals,
            out,
            rewrite,
        } => commands::docs(&ctx, map, originals, out, rewrite),
        Command::Gen { per_function, multi, out } => commands::gen(&ctx, per_function, multi, out),
        Command::Filter { tasks, out } => commands::filter(&ctx, tasks, out),
        Command::Split {
            tasks,
            review_sheet,
            review_fraction,
        } => commands::split(&ctx, tasks, review_sheet, review_fraction),
        Command::Grade { solutions, out } => commands::grade_cmd(&ctx, solutions, out),
        Command::Report { verdicts, out } => commands::report(&ctx, verdicts, out),
        Command::Validate => {
            if commands::validate(&ctx, &mut std::io::stdout())? {
                Ok(())
            } else {
                Err(CliError::Validation("validation failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    logging::init(logging::level_for(cli.verbose, cli.quiet));
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            tracing::error!(code = e.exit_code(), "{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;
    use obfubench_core::llm::TransportError;

    #[test]
    fn argument_surface() {
        Cli::command().debug_assert();
        let c = Cli::try_parse_from(["obfubench", "-vv", "grade", "sols", "--config", "c.toml"]).unwrap();
        assert_eq!(c.verbose, 2);
        assert_eq!(c.config, Some(PathBuf::from("c.toml")));
        assert!(matches!(c.command, Command::Grade { .. }));
        assert!(Cli::try_parse_from(["obfubench", "grade"]).is_err());
    }

    #[test]
    fn exit_codes_by_cause() {
        let t = TransportError::Unreachable {
            endpoint: "http://x".into(),
            message: "refused".into(),
        };
        assert_eq!(CliError::from(TaskError::Transport(t)).exit_code(), 3);
        assert_eq!(CliError::from(CorpusError::Coverage(vec!["f".into()])).exit_code(), 1);
        assert_eq!(CliError::from(CorpusError::Config("x".into())).exit_code(), 2);
    }
}
