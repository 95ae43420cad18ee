use std::path::{Path, PathBuf};
use std::process::ExitCode;

use actprior::fruits::{enumerate_combination_tasks, sample_sequence_tasks};
use actprior::grammar::enumerate_tasks;
use actprior::gridstack::DEFAULT_WIDTH;
use actprior::harness::{
    aggregate_and_emit, eval_prior_stage, gen_demos, run_leave_one_out, train_classifier_stage,
    train_expert_stage, train_prior_stage, EmitFormat, ExperimentConfig, Method, RunRecord,
};
use actprior::mdp::{seeded_rng, write_transitions};
use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "actprior",
    version,
    about = "Action-prior transfer experiments"
)]
struct Cli {
    /// Experiment config (JSON). Absent fields take the domain's defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed override: the only transfer seed, or the pipeline seed for the
    /// other stages.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: the config's `out`, else `runs`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Family {
    Gridstack,
    Comb,
    Seq,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print task names, one per line.
    GenTasks {
        #[arg(long, value_enum, default_value = "gridstack")]
        family: Family,
        /// Stacking tasks: maximum number of layers.
        #[arg(long, default_value_t = 3)]
        max_height: usize,
        /// Stacking tasks: keep only structures topped by a roof.
        #[arg(long)]
        require_roof: bool,
        /// Sequence tasks: how many to sample.
        #[arg(long, default_value_t = 20)]
        count: usize,
    },
    /// Write reversed deconstruction demonstrations to DIR/demos/TASK.bin.
    GenDemos {
        #[arg(long)]
        task: String,
        /// Number of episodes.
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = DEFAULT_WIDTH)]
        width: usize,
    },
    /// Train the expert for one task into DIR/experts.
    TrainExpert {
        #[arg(long)]
        task: String,
    },
    /// Train the task classifier over the config's tasks into DIR/classifier.
    TrainClassifier,
    /// Build the action prior into DIR/prior, reusing stored experts and classifier.
    TrainPrior,
    /// Leave-one-out transfer on the held-out task; priors are read from the
    /// config's `artifacts` directory, else from DIR.
    Transfer {
        /// Method override, e.g. DQN_AP or AM_Prog.
        #[arg(long)]
        method: Option<String>,
    },
    /// Success of the stored prior policy alone over a threshold grid.
    EvalPrior {
        #[arg(long)]
        task: String,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9"
        )]
        sigmas: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
    },
    /// Aggregate every record.json under RUNS into summary and curve files.
    Report {
        /// Directory searched for run records (default: DIR).
        #[arg(long)]
        runs: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn usage_error(msg: &str) -> ! {
    Cli::command()
        .error(ErrorKind::MissingRequiredArgument, msg)
        .exit()
}

fn load_config(cli: &Cli, required: bool) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?
        }
        None if required => usage_error("this command needs --config FILE"),
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.pipeline_seed = seed;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: Option<&ExperimentConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.out.clone()))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::GenTasks {
            family,
            max_height,
            require_roof,
            count,
        } => {
            let names: Vec<String> = match family {
                Family::Gridstack => enumerate_tasks(*max_height, *require_roof)?
                    .iter()
                    .map(|t| t.name().to_string())
                    .collect(),
                Family::Comb => enumerate_combination_tasks()
                    .iter()
                    .map(|t| t.name())
                    .collect(),
                Family::Seq => {
                    sample_sequence_tasks(*count, &mut seeded_rng(cli.seed.unwrap_or(0)))?
                        .iter()
                        .map(|t| t.name())
                        .collect()
                }
            };
            for n in names {
                println!("{n}");
            }
        }
        Command::GenDemos { task, count, width } => {
            let dir = out_dir(&cli, None).join("demos");
            std::fs::create_dir_all(&dir)?;
            let demos = gen_demos(task, *count, *width, cli.seed.unwrap_or(0))?;
            let path = dir.join(format!("{task}.bin"));
            let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
            write_transitions(&mut f, &demos)?;
            println!("{} transitions -> {}", demos.len(), path.display());
        }
        Command::TrainExpert { task } => {
            let cfg = load_config(&cli, false)?;
            let path = train_expert_stage(&cfg, task, &out_dir(&cli, Some(&cfg)))?;
            println!("{}", path.display());
        }
        Command::TrainClassifier => {
            let cfg = load_config(&cli, true)?;
            let path = train_classifier_stage(&cfg, &out_dir(&cli, Some(&cfg)))?;
            println!("{}", path.display());
        }
        Command::TrainPrior => {
            let cfg = load_config(&cli, true)?;
            let dir = out_dir(&cli, Some(&cfg));
            let art = train_prior_stage(&cfg, &dir)?;
            let last = art.prior_loss.last().copied().unwrap_or(f64::NAN);
            println!(
                "{} (final loss {last:.4})",
                dir.join("prior").join("prior.bin").display()
            );
        }
        Command::Transfer { method } => {
            let mut cfg = load_config(&cli, true)?;
            if let Some(m) = method {
                cfg.method = m
                    .parse::<Method>()
                    .unwrap_or_else(|_| usage_error(&format!("unknown method {m}")));
            }
            if let Some(seed) = cli.seed {
                cfg.seeds = vec![seed];
            }
            let dir = out_dir(&cli, Some(&cfg));
            if cfg.artifacts.is_none() {
                cfg.artifacts = Some(dir.clone());
            }
            cfg.out = Some(dir.join(format!("{}_{}", cfg.method, cfg.held_out)));
            let rec = run_leave_one_out(&cfg)?;
            println!(
                "{} on {}: final return {:.3}, final success {:.3} over {} seeds",
                rec.method,
                rec.task,
                rec.mean_final_return(),
                rec.mean_final_success(),
                rec.seeds.len()
            );
        }
        Command::EvalPrior {
            task,
            sigmas,
            episodes,
        } => {
            let cfg = load_config(&cli, true)?;
            let dir = cfg
                .artifacts
                .clone()
                .unwrap_or_else(|| out_dir(&cli, Some(&cfg)));
            let points = eval_prior_stage(&cfg, &dir, task, sigmas, *episodes)?;
            let mut text = String::from("sigma,classifier,success\n");
            for p in &points {
                text.push_str(&format!("{},{},{}\n", p.sigma, p.classifier, p.success));
            }
            let path = dir.join("logs").join(format!("sigma_{task}.csv"));
            std::fs::create_dir_all(dir.join("logs"))?;
            std::fs::write(&path, &text)?;
            print!("{text}");
        }
        Command::Report { runs, format } => {
            let dir = out_dir(&cli, None);
            let root = runs.clone().unwrap_or_else(|| dir.clone());
            let mut records = Vec::new();
            collect_records(&root, &mut records)?;
            if records.is_empty() {
                anyhow::bail!("no record.json under {}", root.display());
            }
            let format = match format {
                Format::Csv => EmitFormat::Csv,
                Format::Json => EmitFormat::Json,
            };
            for p in aggregate_and_emit(&records, format, &dir)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn collect_records(dir: &Path, out: &mut Vec<RunRecord>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_records(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "record.json") {
            out.push(RunRecord::load(&path)?);
        }
    }
    Ok(())
}
