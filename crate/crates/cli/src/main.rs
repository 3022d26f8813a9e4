use std::fs;
use std::path::{Path, PathBuf};

use adenet_core::features::mfcc;
use adenet_core::harness::checkpoint::{self, Which};
use adenet_core::harness::plot::{plot, PlotKind};
use adenet_core::harness::{config_diff, evaluate, AblationAxis, ClipPredictor, ModelPredictor, RunConfig, Trainer};
use adenet_core::signalio::{gen_corpus, load_manifest, write_wav, ClipRecord, Split, Waveform};
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "adenet", version, about = "Joint active speaker detection and speech enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Checkpoint {
    Best,
    Latest,
}

impl From<Checkpoint> for Which {
    fn from(c: Checkpoint) -> Self {
        match c {
            Checkpoint::Best => Which::Best,
            Checkpoint::Latest => Which::Latest,
        }
    }
}

#[derive(clap::Args)]
struct ModelArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, value_enum, default_value = "best")]
    which: Checkpoint,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus described by the config's [corpus] section.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the train split, validating on the val split each epoch.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the latest epoch in `--out`.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint and write a key-value report.
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Print per-frame speaking scores for one clip.
    Detect {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        clip: String,
    },
    /// Write the enhanced waveform of one clip.
    Enhance {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        clip: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Derive an ablation config from a base config.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Axis name, or `list` to print every axis.
        #[arg(long)]
        axis: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render diagnostics: embed_stats, scores or waveforms.
    Plot {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        kind: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Use at most this many clips.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Feature inspection.
    Features {
        #[command(subcommand)]
        command: FeaturesCommand,
    },
}

#[derive(Subcommand)]
enum FeaturesCommand {
    /// Write the MFCC rows of one clip's mixture as text.
    Dump {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        clip: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_split(data: &Path, split: &str) -> Result<Vec<ClipRecord>> {
    let split: Split = split.parse()?;
    Ok(load_manifest(data, split)?.load_all()?)
}

fn find_clip(data: &Path, clip_id: &str) -> Result<ClipRecord> {
    for split in Split::ALL {
        let m = load_manifest(data, split).with_context(|| format!("reading {} manifest", split.as_str()))?;
        if let Some(rec) = m.find(clip_id) {
            return Ok(m.load_clip(rec)?);
        }
    }
    bail!("clip {clip_id:?} not found in {}", data.display())
}

fn restore(args: &ModelArgs) -> Result<checkpoint::Restored> {
    checkpoint::load(&args.ckpt, args.which.into())
        .with_context(|| format!("loading checkpoint {}", args.ckpt.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let manifests = gen_corpus(&cfg.corpus, &out)?;
            for m in manifests {
                println!("{}: {} clips", m.split.as_str(), m.records.len());
            }
        }
        Command::Train {
            config,
            data,
            out,
            resume,
        } => {
            let mut trainer = if resume {
                Trainer::resume(checkpoint::load(&out, Which::Latest)?)
            } else {
                Trainer::new(&RunConfig::load(&config)?)?
            };
            let train = load_split(&data, "train")?;
            let val = load_split(&data, "val")?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            fs::write(out.join("config.toml"), trainer.cfg.to_toml())?;
            trainer.fit(&train, &val, Some(&out), &mut |_| {}, &mut |r| {
                let val = r.val.as_ref().map_or(String::new(), |v| {
                    format!(" val_auc={:.4} val_composite={:.4}", v.auc.unwrap_or(f64::NAN), v.composite)
                });
                println!(
                    "epoch {:3} lr={:.3e} loss={:.4} l_se={:.4} l_asd={:.4}{val}",
                    r.epoch, r.lr, r.loss, r.l_se, r.l_asd
                );
            })?;
            println!("best epoch {}", trainer.best_epoch());
        }
        Command::Eval {
            model,
            data,
            report,
            split,
        } => {
            let r = restore(&model)?;
            let clips = load_split(&data, &split)?;
            let rep = evaluate(&ModelPredictor { net: &r.net, store: &r.store }, &clips)?;
            fs::write(&report, rep.to_key_values()).with_context(|| format!("writing {}", report.display()))?;
            print!("{rep}");
        }
        Command::Detect { model, data, clip } => {
            let r = restore(&model)?;
            let c = find_clip(&data, &clip)?;
            let p = ModelPredictor { net: &r.net, store: &r.store }.predict(&c, &c.mixture)?;
            for (t, s) in p.scores.iter().enumerate() {
                println!("{t} {s:.6}");
            }
        }
        Command::Enhance {
            model,
            data,
            clip,
            out,
        } => {
            let r = restore(&model)?;
            let c = find_clip(&data, &clip)?;
            let p = ModelPredictor { net: &r.net, store: &r.store }.predict(&c, &c.mixture)?;
            write_wav(&out, &Waveform::at_16k(p.enhanced)?)?;
            println!("wrote {}", out.display());
        }
        Command::Ablate { config, axis, out } => {
            if axis == "list" {
                for a in AblationAxis::all() {
                    println!("{a}");
                }
                return Ok(());
            }
            let base = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            let derived = axis.parse::<AblationAxis>()?.apply(&base)?;
            for key in config_diff(&base, &derived) {
                eprintln!("changed {key}");
            }
            match out {
                Some(p) => fs::write(&p, derived.to_toml()).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{}", derived.to_toml()),
            }
        }
        Command::Plot {
            model,
            kind,
            data,
            out,
            split,
            limit,
        } => {
            let kind: PlotKind = kind.parse()?;
            let r = restore(&model)?;
            let mut clips = load_split(&data, &split)?;
            clips.truncate(limit.unwrap_or(usize::MAX));
            for p in plot(kind, &r.net, &r.store, &clips, &out, r.meta.config.optim.seed)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Features {
            command: FeaturesCommand::Dump { data, clip, out },
        } => {
            let c = find_clip(&data, &clip)?;
            let m = mfcc(&c.mixture)?;
            let mut text = String::new();
            for row in m.coeffs().data().chunks(m.coeffs().dim(1)) {
                let cols: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
                text.push_str(&cols.join(" "));
                text.push('\n');
            }
            match out {
                Some(p) => fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
