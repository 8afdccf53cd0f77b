use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ordino::data::save_image_folder;
use ordino::encoders::BackboneRegistry;
use ordino::harness::evaluate::ordinality;
use ordino::harness::plot::save_heatmap;
use ordino::harness::sweep::write_sweep_csv;
use ordino::harness::{evaluate, prepare_data, run_stages, sweep, Checkpoint, RunConfig, Stages, SweepConfig};
use ordino::metrics::{local_ordinality_score, ordinality_score, SimilarityMatrix};
use ordino::{Error, Result};

#[derive(Parser)]
#[command(name = "ordino", version, about = "Ordinal regression with language-guided rank prompts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the train/test splits of a synthetic config as image folders.
    GenerateData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one or both stages and evaluate on the test split.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "both")]
        stage: StageArg,
        /// Stage-1 checkpoint to resume from (required with `--stage 2`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on its test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluate on the data of this config instead of the checkpoint's.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ordinality scores of a similarity matrix or checkpoint.
    Ordinality {
        #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
        matrix: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Local window size; may be repeated.
        #[arg(long)]
        window: Vec<usize>,
    },
    /// Run a few-shot, shift or ablation grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
    },
    /// Render a similarity-matrix CSV as a PNG heatmap.
    Plot {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Morph,
    Default,
}

impl Preset {
    fn name(self) -> &'static str {
        match self {
            Preset::Morph => "morph",
            Preset::Default => "default",
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })
}

fn train(args: RunArgs, stage: StageArg, checkpoint: Option<PathBuf>) -> Result<()> {
    let resume = checkpoint.as_deref().map(Checkpoint::load).transpose()?;
    let mut cfg = match (&args.config, &resume) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(c)) => c.config.clone(),
        (None, None) => return Err(Error::Config("train needs --config or --checkpoint".into())),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(p) = args.preset {
        cfg.apply_preset(p.name())?;
    }
    let stages = match stage {
        StageArg::One => Stages::One,
        StageArg::Two => Stages::Two,
        StageArg::Both => Stages::Both,
    };
    let out = run_stages(&cfg, &BackboneRegistry::default(), stages, resume)?;
    create_dir(&args.out)?;
    for c in &out.checkpoints {
        c.save(&args.out.join(format!("stage{}.json", c.stage)))?;
    }
    out.log.write_jsonl(&args.out.join("train_log.jsonl"))?;
    out.report.save(&args.out.join("report.json"))?;
    out.similarity.save_csv(&args.out.join("similarity.csv"))?;
    println!("initial OS {:.4}", out.initial_os);
    println!("{}", serde_json::to_string(&out.report)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData { config, out, seed } => {
            let mut cfg = RunConfig::load(&config)?;
            if let (Some(seed), ordino::harness::config::DataSource::Synthetic { spec, .. }) =
                (seed, &mut cfg.data.source)
            {
                spec.seed = seed;
            }
            let (train, test) = prepare_data(&cfg)?;
            save_image_folder(&train, &out.join("train"))?;
            save_image_folder(&test, &out.join("test"))?;
            println!("wrote {} train / {} test images under {}", train.len(), test.len(), out.display());
        }
        Command::Train { run, stage, checkpoint } => train(run, stage, checkpoint)?,
        Command::Eval { checkpoint, config, out } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let data_cfg = config.as_deref().map(RunConfig::load).transpose()?.unwrap_or_else(|| ckpt.config.clone());
            let (_, test) = prepare_data(&data_cfg)?;
            let (report, sim) = evaluate(&ckpt, &test, &BackboneRegistry::default())?;
            if let Some(dir) = out {
                create_dir(&dir)?;
                report.save(&dir.join("report.json"))?;
                sim.save_csv(&dir.join("similarity.csv"))?;
            }
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::Ordinality { matrix, checkpoint, window } => {
            let sim = match (matrix, checkpoint) {
                (Some(m), _) => SimilarityMatrix::load_csv(&m)?,
                (None, Some(c)) => ordinality(&Checkpoint::load(&c)?.rank_features, &[])?.2,
                (None, None) => unreachable!("clap requires one source"),
            };
            println!("OS {:.4}", ordinality_score(&sim)?);
            for k in window {
                println!("LOS({k}) {:.4}", local_ordinality_score(&sim, k)?);
            }
        }
        Command::Sweep { config, out, seed, preset } => {
            let mut cfg = SweepConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.base.seed = seed;
            }
            if let Some(p) = preset {
                cfg.base.apply_preset(p.name())?;
            }
            let rows = sweep(&cfg, &BackboneRegistry::default())?;
            create_dir(&out)?;
            write_sweep_csv(&rows, &out.join("sweep.csv"))?;
            for r in &rows {
                println!("{} {:<32} seed {:>3}  mae {:.4}  acc {:6.2}  os {:6.2}", r.kind, r.cell, r.seed, r.mae, r.accuracy, r.os);
            }
        }
        Command::Plot { matrix, out } => {
            save_heatmap(&SimilarityMatrix::load_csv(&matrix)?, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
