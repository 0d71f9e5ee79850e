use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use latticelink::error::{Error, Result};
use latticelink::pipeline::{eval_report_file, lattice_of_file, BaselineMethod, Run, RunConfig, SplitSpec, Task};
use latticelink::tokenizer::Side;

/// Link prediction on bipartite networks from their concept lattices.
#[derive(Parser, Debug)]
#[command(name = "latticelink", version)]
struct Cli {
    /// Run configuration (JSON); flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; every stage seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory holding all artifacts and manifests.
    #[arg(long, global = true, default_value = "run")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct TaskArg {
    /// `oo` (object groups) or `oa` (object-attribute pairs); defaults to the config's task.
    #[arg(long)]
    task: Option<Task>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Read an edge list (object,attribute[,date]) or context JSON into the run directory.
    Ingest {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Build the input/target network pair.
    Split {
        /// Fraction of edges removed at random.
        #[arg(long, conflicts_with = "cutoff")]
        fraction: Option<f64>,
        /// Temporal split: input = edges dated before this day (YYYY-MM-DD).
        #[arg(long)]
        cutoff: Option<NaiveDate>,
    },
    /// Enumerate the formal concepts of the input network (or of `--input` directly).
    Concepts {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Compute the cover relation (or concepts and covers of `--input` directly).
    Covers {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Pre-train encoders on the lattice.
    Pretrain {
        /// `object`, `attribute` or `both`; defaults to what the task needs.
        #[arg(long)]
        side: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Fine-tune the object encoder for object-group prediction.
    FinetuneOo {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Fine-tune both encoders for object-attribute prediction.
    FinetuneOa {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score held-out candidates with the fine-tuned model.
    Predict(TaskArg),
    /// Metrics of a prediction report.
    Eval {
        /// Report of this run: `oo`, `oa`, `oo_cn`, `oa_mf`, `oo_no_pretrain`, ...
        #[arg(long, conflicts_with = "report")]
        name: Option<String>,
        /// Any prediction report CSV (candidate,score,label).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score held-out candidates with a reference predictor.
    Baseline {
        #[command(flatten)]
        task: TaskArg,
        /// `cn` (common neighbours) or `mf` (matrix factorisation).
        #[arg(long, default_value = "cn")]
        method: BaselineMethod,
    },
    /// Fine-tune from random initialisation and score held-out candidates.
    AblateNoPretrain(TaskArg),
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn sides(arg: Option<&str>, task: Task) -> Result<Vec<Side>> {
    match arg {
        None => Ok(task.sides().to_vec()),
        Some("object") => Ok(vec![Side::Object]),
        Some("attribute") => Ok(vec![Side::Attribute]),
        Some("both") => Ok(vec![Side::Object, Side::Attribute]),
        Some(other) => Err(Error::Config(format!(
            "unknown side {other:?} (expected object, attribute or both)"
        ))),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    let task_of = |t: &TaskArg, c: &RunConfig| t.task.unwrap_or(c.task);
    match &cli.command {
        Command::Ingest { input } => {
            if input.is_some() {
                config.input = input.clone();
            }
            print_json(&Run::new(&cli.out_dir, config)?.ingest()?)
        }
        Command::Split { fraction, cutoff } => {
            if let Some(f) = fraction {
                config.split = SplitSpec::Random {
                    fraction: *f,
                    restrict_target: false,
                };
            }
            if let Some(c) = cutoff {
                config.split = SplitSpec::Temporal { cutoff: *c };
            }
            print_json(&Run::new(&cli.out_dir, config)?.split()?)
        }
        Command::Concepts { input: Some(input) } => {
            let (n, _) = lattice_of_file(input, &cli.out_dir, config.budget, false)?;
            print_json(&serde_json::json!({ "concepts": n }))
        }
        Command::Concepts { input: None } => {
            let n = Run::new(&cli.out_dir, config)?.concepts()?;
            print_json(&serde_json::json!({ "concepts": n }))
        }
        Command::Covers { input: Some(input) } => {
            let (n, c) = lattice_of_file(input, &cli.out_dir, config.budget, true)?;
            print_json(&serde_json::json!({ "concepts": n, "covers": c }))
        }
        Command::Covers { input: None } => {
            let c = Run::new(&cli.out_dir, config)?.covers()?;
            print_json(&serde_json::json!({ "covers": c }))
        }
        Command::Pretrain { side, epochs } => {
            if let Some(e) = epochs {
                config.pretrain.epochs = *e;
            }
            let sides = sides(side.as_deref(), config.task)?;
            let run = Run::new(&cli.out_dir, config)?;
            let mut out = serde_json::Map::new();
            for s in sides {
                out.insert(s.as_str().into(), run.pretrain(s)?);
            }
            print_json(&out)
        }
        Command::FinetuneOo { epochs } | Command::FinetuneOa { epochs } => {
            if let Some(e) = epochs {
                config.finetune.epochs = *e;
            }
            let task = if matches!(cli.command, Command::FinetuneOo { .. }) {
                Task::Oo
            } else {
                Task::Oa
            };
            Run::new(&cli.out_dir, config)?.finetune(task)?;
            print_json(&serde_json::json!({ "task": task, "status": "done" }))
        }
        Command::Predict(t) => {
            let task = task_of(t, &config);
            let name = Run::new(&cli.out_dir, config)?.predict(task)?;
            print_json(&serde_json::json!({ "report": format!("predictions/{name}.csv") }))
        }
        Command::Eval { name, report } => match (name, report) {
            (_, Some(path)) => print_json(&eval_report_file(path)?),
            (name, None) => {
                let name = name.clone().unwrap_or_else(|| config.task.as_str().to_string());
                print_json(&Run::new(&cli.out_dir, config)?.eval(&name)?)
            }
        },
        Command::Baseline { task, method } => {
            let task = task_of(task, &config);
            print_json(&Run::new(&cli.out_dir, config)?.baseline(task, *method)?)
        }
        Command::AblateNoPretrain(t) => {
            let task = task_of(t, &config);
            print_json(&Run::new(&cli.out_dir, config)?.ablate_no_pretrain(task)?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
