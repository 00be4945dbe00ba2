//! `probe` command line: one subcommand per pipeline step. Flags override
//! the config file, which overrides the built-in defaults.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use probe_core::dataset::Dataset;
use probe_core::eval::ablation_suite;
use probe_core::model::{build_example, TrainState};
use probe_core::worldsim::Category;

use crate::config::RunConfig;
use crate::io::{
    read_checkpoint, read_dataset, write_checkpoint, write_dataset, write_json, write_text, Checkpoint, Predictor,
};
use crate::report::{AblationReport, EvalReport, Provenance, SplitInfo, TrainReport};
use crate::{pipeline, render, selftest, Error};

#[derive(Debug, Parser)]
#[command(name = "probe", version, about = "Obstacle reconstruction from legged-robot proprioception")]
pub struct Cli {
    #[command(flatten)]
    pub flags: Flags,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Run config file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dataset file [default: <out>/dataset.jsonl].
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Checkpoint file [default: <out>/checkpoint.json]. For `train` it is the
    /// run to resume.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Comma-separated categories: easy, medium, hard.
    #[arg(long, global = true, value_delimiter = ',')]
    pub category: Vec<String>,
    /// Episodes rolled per category before curation.
    #[arg(long, global = true)]
    pub episodes: Option<usize>,
    /// Channel subsets, `A` to `E`. `ablate` takes a list, `train` one letter.
    #[arg(long, global = true)]
    pub subset: Option<String>,
    /// Ticks between stored steps.
    #[arg(long, global = true)]
    pub stride: Option<u32>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roll, curate and write a dataset.
    Gen,
    /// Train a model on the dataset's training split. The checkpoint is
    /// rewritten after every epoch.
    Train {
        /// Stop after this many completed epochs; continue later with
        /// `--checkpoint`. The learning rate schedule keeps the full length.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Evaluate a checkpoint on the held-out split.
    Eval,
    /// Train and evaluate one model per channel subset.
    Ablate,
    /// Write SVG frames of one episode.
    Render {
        /// Episode id in the dataset.
        #[arg(long)]
        episode: u64,
        /// Render every k-th stored step; the last step is always drawn.
        #[arg(long, default_value_t = 25)]
        every: usize,
        /// Draw the ground truth only.
        #[arg(long)]
        truth_only: bool,
    },
    /// Run the fast invariant checks.
    Selftest {
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: &Cli) -> Result<ExitCode, Error> {
    let f = &cli.flags;
    if let Command::Selftest { inject_fault } = cli.command {
        return Ok(run_selftest(selftest::Options { inject_fault }));
    }
    let mut cfg = resolve_config(f)?;
    match &cli.command {
        Command::Gen => gen(&cfg, f),
        Command::Train { stop_after } => {
            if let Some(s) = &f.subset {
                let mut chars = s.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => cfg.model.channels = Some(c.to_ascii_uppercase()),
                    _ => return Err(Error::Config(format!("train takes a single subset letter, got {s:?}"))),
                }
                cfg.validate()?;
            }
            train(&cfg, f, *stop_after)
        }
        Command::Eval => eval(&cfg, f),
        Command::Ablate => {
            if let Some(s) = &f.subset {
                cfg.ablation.subsets = s.to_ascii_uppercase();
                cfg.validate()?;
            }
            ablate(&cfg, f)
        }
        Command::Render { episode, every, truth_only } => render_episode(&cfg, f, *episode, *every, *truth_only),
        Command::Selftest { .. } => unreachable!("handled above"),
    }?;
    Ok(ExitCode::SUCCESS)
}

/// Config file (or defaults) with the command-line overrides applied.
pub fn resolve_config(f: &Flags) -> Result<RunConfig, Error> {
    let mut cfg = match &f.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = f.seed {
        cfg.seed = s;
    }
    if let Some(o) = &f.out {
        cfg.out = o.clone();
    }
    if !f.category.is_empty() {
        cfg.categories = f.category.iter().map(|c| parse_category(c)).collect::<Result<_, _>>()?;
    }
    if let Some(n) = f.episodes {
        cfg.episodes = n;
    }
    if let Some(s) = f.stride {
        cfg.stride = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_category(name: &str) -> Result<Category, Error> {
    Category::ALL
        .into_iter()
        .find(|c| c.name().eq_ignore_ascii_case(name.trim()))
        .ok_or_else(|| Error::Config(format!("unknown category {name:?}")))
}

fn dataset_path(cfg: &RunConfig, f: &Flags) -> PathBuf {
    f.dataset.clone().unwrap_or_else(|| cfg.out.join("dataset.jsonl"))
}

fn checkpoint_path(cfg: &RunConfig, f: &Flags) -> PathBuf {
    f.checkpoint.clone().unwrap_or_else(|| cfg.out.join("checkpoint.json"))
}

fn load_dataset(path: &Path) -> Result<(String, Dataset), Error> {
    let (header, dataset) = read_dataset(path)?;
    Ok((header.config_digest, dataset))
}

fn gen(cfg: &RunConfig, f: &Flags) -> Result<(), Error> {
    let generated = pipeline::generate(cfg)?;
    let path = dataset_path(cfg, f);
    let digest = cfg.digest();
    write_dataset(&path, &digest, &generated.dataset)?;
    let text = format!("config digest {digest}\n\n{}", pipeline::curation_text(&generated.reports));
    write_text(&cfg.out.join("curation.txt"), &text)?;
    write_text(&cfg.out.join("config.toml"), &cfg.to_toml())?;
    print!("{text}");
    println!("wrote {} trajectories to {}", generated.dataset.trajectories.len(), path.display());
    Ok(())
}

fn train(cfg: &RunConfig, f: &Flags, stop_after: Option<usize>) -> Result<(), Error> {
    let (dataset_digest, dataset) = load_dataset(&dataset_path(cfg, f))?;
    let orm = cfg.orm_config()?;
    let resume = match &f.checkpoint {
        Some(p) => match read_checkpoint(p)?.predictor {
            Predictor::Orm(state) => Some(*state),
            Predictor::Oracle => return Err(Error::Config(format!("{} holds no trainable model", p.display()))),
        },
        None => None,
    };
    let (train, heldout) = pipeline::split(&dataset, cfg.seed);
    let digest = cfg.digest();
    let out = cfg.out.join("checkpoint.json");
    let write = |state: &TrainState| {
        write_checkpoint(&out, &Checkpoint::new(&digest, cfg.seed, Predictor::Orm(Box::new(state.clone()))))
    };
    let mut after_epoch = |state: &TrainState| {
        if let Some(e) = state.log.epochs.last() {
            let iou = e.heldout_iou.map_or_else(|| "–".into(), |v| format!("{v:.3}"));
            eprintln!("epoch {:>3}/{}: loss {:.4}, held-out movable IoU {iou}", e.epoch + 1, orm.epochs, e.mean_loss);
        }
        write(state)
    };
    let state = pipeline::train(&orm, &train, &heldout, resume, stop_after, &mut after_epoch)?;
    write(&state)?;
    let report = TrainReport {
        provenance: Provenance { config_digest: digest.clone(), dataset_digest, checkpoint_digest: None },
        split: SplitInfo::new(cfg.seed, train.len(), heldout.len()),
        log: state.log.clone(),
    };
    write_json(&cfg.out.join("train_log.json"), &report)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn eval(cfg: &RunConfig, f: &Flags) -> Result<(), Error> {
    let (dataset_digest, dataset) = load_dataset(&dataset_path(cfg, f))?;
    let checkpoint = read_checkpoint(&checkpoint_path(cfg, f))?;
    let (evaluation, n_train, n_heldout) =
        pipeline::evaluate_split(&checkpoint.predictor, &dataset, checkpoint.split_seed)?;
    let kind = match checkpoint.predictor {
        Predictor::Orm(_) => "orm",
        Predictor::Oracle => "oracle",
    };
    let report = EvalReport::new(
        Provenance {
            config_digest: cfg.digest(),
            dataset_digest,
            checkpoint_digest: Some(checkpoint.config_digest.clone()),
        },
        kind,
        SplitInfo::new(checkpoint.split_seed, n_train, n_heldout),
        &evaluation,
    );
    let text = report.to_text();
    write_text(&cfg.out.join("report.txt"), &text)?;
    write_json(&cfg.out.join("report.json"), &report)?;
    print!("{text}");
    Ok(())
}

fn ablate(cfg: &RunConfig, f: &Flags) -> Result<(), Error> {
    let (dataset_digest, dataset) = load_dataset(&dataset_path(cfg, f))?;
    let base = cfg.orm_config()?;
    let (train, heldout) = pipeline::split(&dataset, cfg.seed);
    if heldout.is_empty() {
        return Err(Error::Check("the held-out split is empty".into()));
    }
    let subsets: Vec<char> = cfg.ablation.subsets.chars().collect();
    let mut rows = Vec::new();
    for &s in &subsets {
        eprintln!("subset {s}: training {} epochs on {} trajectories", base.epochs, train.len());
        rows.extend(ablation_suite(&train, &heldout, &base, &[s])?);
    }
    let report = AblationReport {
        provenance: Provenance { config_digest: cfg.digest(), dataset_digest, checkpoint_digest: None },
        split: SplitInfo::new(cfg.seed, train.len(), heldout.len()),
        seed: base.seed,
        rows,
    };
    let text = report.to_text();
    write_text(&cfg.out.join("ablation.txt"), &text)?;
    write_json(&cfg.out.join("ablation.json"), &report)?;
    write_text(&cfg.out.join("ablation.svg"), &render::ablation_chart(&report.rows))?;
    print!("{text}");
    Ok(())
}

fn render_episode(cfg: &RunConfig, f: &Flags, episode: u64, every: usize, truth_only: bool) -> Result<(), Error> {
    let (_, dataset) = load_dataset(&dataset_path(cfg, f))?;
    let traj = dataset
        .trajectories
        .iter()
        .find(|t| t.episode == episode)
        .ok_or_else(|| Error::Check(format!("episode {episode} is not in the dataset")))?;
    let frames = if truth_only {
        render::frame_steps(traj.steps.len(), every)
            .into_iter()
            .map(|k| (k, render::render_frame(traj, k, &[])))
            .collect()
    } else {
        let predictor = read_checkpoint(&checkpoint_path(cfg, f))?.predictor;
        let example = build_example(traj, predictor.max_tokens())?;
        let out = predictor.outputs(&example);
        render::frame_steps(traj.steps.len(), every)
            .into_iter()
            .map(|k| (k, render::render_frame(traj, k, &render::predictions_at(&example, &out, k))))
            .collect::<Vec<_>>()
    };
    let dir = cfg.out.join("frames");
    for (k, svg) in &frames {
        write_text(&dir.join(format!("episode-{episode}-step-{k:04}.svg")), svg)?;
    }
    println!("wrote {} frames to {}", frames.len(), dir.display());
    Ok(())
}

fn run_selftest(options: selftest::Options) -> ExitCode {
    let results = selftest::run(options);
    for r in &results {
        let status = if r.passed { "pass" } else { "FAIL" };
        println!("{status} {:<15} {:>7.2}s  {}", r.name, r.seconds, r.detail);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed == 0 {
        println!("all {} checks passed", results.len());
        ExitCode::SUCCESS
    } else {
        println!("{failed} of {} checks failed", results.len());
        ExitCode::from(1)
    }
}
