//! Argument parsing and dispatch for the `bst` binary.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use bst_core::eval::{TaskKind, TaskSpec};
use bst_core::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::PipelineConfig;
use crate::pipeline::Pipeline;
use crate::serve::{router, serve, ServeState};

#[derive(Parser, Debug)]
#[command(name = "bst", version, about = "Back-translation style transfer pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct GlobalArgs {
    /// TOML file overlaid on the profile.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base settings: `desk` (default) or `full`.
    #[arg(long, global = true)]
    pub profile: Option<String>,
    /// Directory every relative path is resolved against.
    #[arg(long, global = true, default_value = ".")]
    pub root: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic parallel and styled corpora.
    SynthData {
        /// Data directory, overriding the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split the styled and parallel corpora.
    Prepare {
        /// Styled corpus to split instead of the synthetic one.
        #[arg(long)]
        styled: Option<PathBuf>,
        /// Parallel corpus to split instead of the synthetic one.
        #[arg(long)]
        parallel: Option<PathBuf>,
    },
    /// Extract the style lexicons.
    Lexicon,
    /// Train both translation directions.
    TrainMt,
    /// Train the guide and judge style classifiers.
    TrainClassifier,
    /// Train the two style generators.
    TrainStyle,
    /// Transfer sentences; without `--in`, transfers the test split.
    Transfer {
        /// JSONL file of {"text"} records.
        #[arg(long = "in", requires = "target")]
        input: Option<PathBuf>,
        /// Target style name.
        #[arg(long, requires = "input")]
        target: Option<String>,
        /// Output JSONL; defaults to the reports directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score transfer outputs, or tabulate human judgments.
    Evaluate {
        /// Annotation tasks; requires `--judgments`.
        #[arg(long, requires = "judgments")]
        tasks: Option<PathBuf>,
        #[arg(long, requires = "tasks")]
        judgments: Option<PathBuf>,
        /// Add short and long rows to the meaning table.
        #[arg(long)]
        by_bucket: bool,
    },
    /// Build blinded annotation tasks from two systems' transfer outputs.
    MakeTasks(MakeTasksArgs),
    /// Serve annotation tasks over HTTP.
    Serve(ServeArgs),
    /// Run every stage from synthetic data to the transfer report.
    Pipeline,
    /// Print the resolved configuration.
    ShowConfig,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KindArg {
    Meaning,
    Fluency,
}

#[derive(Args, Debug)]
pub struct MakeTasksArgs {
    /// Transfer output of the first system.
    #[arg(long)]
    pub a: PathBuf,
    /// Transfer output of the second system, aligned with `--a`.
    #[arg(long)]
    pub b: PathBuf,
    /// Names of the two systems.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    pub systems: Vec<String>,
    #[arg(long, value_enum)]
    pub kind: KindArg,
    /// Experiment label; defaults to the config's.
    #[arg(long)]
    pub experiment: Option<String>,
    /// Seed for presentation order; defaults to the master seed.
    #[arg(long)]
    pub task_seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub tasks: PathBuf,
    /// Append-only judgment log.
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    /// Directory of static UI files served at `/`.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
}

fn resolve(root: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        root.join(path)
    }
}

fn pipeline(global: &GlobalArgs) -> Result<Pipeline> {
    let mut config = PipelineConfig::load(global.config.as_deref(), global.profile.as_deref())?;
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    Ok(Pipeline::new(&global.root, config))
}

fn execute(cli: Cli) -> Result<()> {
    let root = cli.global.root.clone();
    let mut p = pipeline(&cli.global)?;
    match cli.command {
        Command::SynthData { out } => {
            if let Some(out) = out {
                p.config.paths.data = out;
            }
            p.synth_data()?;
        }
        Command::Prepare { styled, parallel } => {
            let styled = styled.map(|s| resolve(&root, &s));
            let parallel = parallel.map(|s| resolve(&root, &s));
            p.prepare(styled.as_deref(), parallel.as_deref())?;
        }
        Command::Lexicon => {
            p.lexicon()?;
        }
        Command::TrainMt => {
            p.train_mt()?;
        }
        Command::TrainClassifier => {
            p.train_classifier()?;
        }
        Command::TrainStyle => {
            p.train_style()?;
        }
        Command::Transfer { input, target, out } => match (input, target) {
            (Some(input), Some(target)) => {
                let out = out
                    .map(|o| resolve(&root, &o))
                    .unwrap_or_else(|| p.report(&format!("transfer.{target}.jsonl")));
                p.transfer_file(&resolve(&root, &input), &target, &out)?;
                println!("{}", out.display());
            }
            _ => {
                p.transfer_test()?;
            }
        },
        Command::Evaluate {
            tasks,
            judgments,
            by_bucket,
        } => match (tasks, judgments) {
            (Some(t), Some(j)) => {
                let m = p.evaluate_judgments(&resolve(&root, &t), &resolve(&root, &j), by_bucket)?;
                for name in ["meaning.txt", "fluency.txt"] {
                    let path = p.report(name);
                    if m.outputs.keys().any(|k| path.ends_with(k)) {
                        let text = std::fs::read_to_string(&path).map_err(|source| Error::Io {
                            path: path.display().to_string(),
                            source,
                        })?;
                        print!("{text}");
                    }
                }
            }
            _ => {
                let report = p.evaluate()?;
                print!("{}", bst_core::eval::render_transfer(&report));
            }
        },
        Command::MakeTasks(args) => {
            let kind = match args.kind {
                KindArg::Meaning => TaskKind::MeaningAb,
                KindArg::Fluency => TaskKind::Fluency,
            };
            let experiment = args.experiment.unwrap_or_else(|| p.config.experiment.clone());
            let spec = TaskSpec::new(
                &experiment,
                kind,
                [&args.systems[0], &args.systems[1]],
                args.task_seed.unwrap_or(p.config.seed),
            );
            p.make_tasks(
                &resolve(&root, &args.a),
                &resolve(&root, &args.b),
                &spec,
                &resolve(&root, &args.out),
            )?;
        }
        Command::Serve(args) => {
            let run = || -> Result<()> {
                let state = ServeState::open(&resolve(&root, &args.tasks), &resolve(&root, &args.log))?;
                let app = router(Arc::new(state), args.static_dir.map(|d| resolve(&root, &d)));
                let io = |source| Error::Io {
                    path: args.addr.clone(),
                    source,
                };
                let rt = tokio::runtime::Builder::new_multi_thread()
                    .enable_all()
                    .build()
                    .map_err(io)?;
                rt.block_on(async {
                    let listener = tokio::net::TcpListener::bind(&args.addr).await?;
                    log::info!("listening on {}", listener.local_addr()?);
                    serve(listener, app).await
                })
                .map_err(io)
            };
            run().map_err(|e| e.in_stage("serve"))?;
        }
        Command::Pipeline => {
            let report = p.run_all()?;
            print!("{}", bst_core::eval::render_transfer(&report));
        }
        Command::ShowConfig => {
            print!("{}", p.config.to_toml()?);
        }
    }
    Ok(())
}

/// Parses `argv` (program name first) and runs it. Returns 0 on success,
/// 1 when a stage fails and 2 on a usage error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => 2,
                _ => 1,
            }
        }
    }
}
