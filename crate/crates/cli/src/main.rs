//! `px2graph` command-line driver.
//!
//! Errors are reported on stderr as a single `error[<kind>]: <message>` line
//! and the process exits with status 1.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use px2graph::evalkit::TaskSetting;
use px2graph::harness::{
    cmd_decode, cmd_eval, cmd_gen, cmd_report, cmd_train, render_summary, RunConfig, CHECKPOINT_FILE,
};
use px2graph::{Error, Result};

#[derive(Parser)]
#[command(name = "px2graph", version, about = "Scene graphs from pixels with associative embeddings")]
struct Cli {
    /// Run configuration (JSON); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the effective run configuration.
    Config,
    /// Generate the training and held-out scene sets.
    Gen {
        /// Number of training scenes (held-out count comes from the config).
        #[arg(long)]
        n_scenes: Option<usize>,
        /// Data seed (held-out scenes use seed + 1).
        #[arg(long)]
        seed: Option<u64>,
        /// Root directory; scenes go to `<out>/train` and `<out>/eval`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model and write its checkpoint and loss log.
    Train {
        /// Seed for initialization and training order.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the number of optimizer steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Evaluate a checkpoint on the held-out set.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "sggen")]
        setting: TaskSetting,
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode one PPM image into a graph and an annotated render.
    Decode {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate all three settings and write a summary.
    Report {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn checkpoint_or_default(cfg: &RunConfig, path: Option<PathBuf>) -> PathBuf {
    path.unwrap_or_else(|| cfg.paths.out_dir.join(CHECKPOINT_FILE))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Config => print!("{}", cfg.to_json()?),
        Command::Gen { n_scenes, seed, out } => {
            if let Some(n) = n_scenes {
                cfg.data.train_scenes = n;
            }
            if let Some(s) = seed {
                cfg.seeds.data = s;
                cfg.seeds.eval_data = s.wrapping_add(1);
            }
            if let Some(o) = out {
                cfg.paths.train_dir = o.join("train");
                cfg.paths.eval_dir = o.join("eval");
            }
            cmd_gen(&cfg)?;
            println!(
                "wrote {} training scenes to {} and {} held-out scenes to {}",
                cfg.data.train_scenes,
                cfg.paths.train_dir.display(),
                cfg.data.eval_scenes,
                cfg.paths.eval_dir.display()
            );
        }
        Command::Train { seed, out, steps } => {
            if let Some(s) = seed {
                cfg.seeds.init = s;
                cfg.seeds.train = s.wrapping_add(1);
            }
            if let Some(o) = out {
                cfg.paths.out_dir = o;
            }
            if let Some(n) = steps {
                cfg.train.steps = n;
            }
            let every = (cfg.train.steps / 50).max(cfg.train.log_every);
            let outcome = cmd_train(&cfg, |line| {
                if line.step % every == 0 || line.step == cfg.train.steps {
                    eprintln!("step {:>7}  lr {:.2e}  loss {:.4}", line.step, line.lr, line.loss.total);
                }
            })?;
            println!("{}", serde_json::to_string(&outcome)?);
        }
        Command::Eval {
            checkpoint,
            setting,
            k,
            out,
        } => {
            let ks = k.unwrap_or_else(|| cfg.ks.clone());
            let out = out.unwrap_or_else(|| cfg.paths.out_dir.clone());
            let (report, files) = cmd_eval(&cfg, &checkpoint_or_default(&cfg, checkpoint), setting, &ks, &out)?;
            print!("{}", report.render_text());
            eprintln!("wrote {}", files.json.display());
        }
        Command::Decode { checkpoint, image, out } => {
            let graph = cmd_decode(&cfg, &checkpoint_or_default(&cfg, checkpoint), &image, &out)?;
            for (t, score) in graph.ranked_triplets() {
                println!(
                    "{:.4}  {} -{}-> {}",
                    score,
                    px2graph::scenegen::category_name(t.subject_category),
                    px2graph::scenegen::predicate_name(t.predicate),
                    px2graph::scenegen::category_name(t.object_category)
                );
            }
        }
        Command::Report { checkpoint, out } => {
            let out = out.unwrap_or_else(|| cfg.paths.out_dir.clone());
            let reports = cmd_report(&cfg, &checkpoint_or_default(&cfg, checkpoint), &out)?;
            print!("{}", render_summary(&reports));
        }
    }
    Ok(())
}

fn report_error(e: &Error) {
    let msg = e.to_string().replace('\n', " ");
    eprintln!("error[{}]: {msg}", e.kind());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(&e);
            ExitCode::from(1)
        }
    }
}
